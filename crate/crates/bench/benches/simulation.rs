use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use branchdyn::random::{random_model, RandomModelConfig};
use branchdyn::rates::RateEvaluator;
use branchdyn::trajectory::TrajectoryEngine;
use branchdyn::verify::{integrate_master_equation, uniform_grid};
use branchdyn::{built_in_rabi, run_ensemble, Evolver};

fn bench_state_query(c: &mut Criterion) {
    let model = random_model(1, 0, &RandomModelConfig::default().with_max_total_dim(8)).unwrap();
    let evolver = Evolver::new(&model).unwrap();
    c.bench_function("state_at dim 8", |b| {
        let mut t = 0.0;
        b.iter(|| {
            t = (t + 0.37) % model.t_max();
            evolver.state_at(t).unwrap()
        })
    });
}

fn bench_rate_pair(c: &mut Criterion) {
    let model = random_model(1, 0, &RandomModelConfig::default().with_max_total_dim(8)).unwrap();
    let evaluator = RateEvaluator::new(&model).unwrap();
    c.bench_function("rate_pair_at dim 8", |b| {
        let mut t = 0.0;
        b.iter(|| {
            t = (t + 0.37) % model.t_max();
            evaluator.rate_pair_at(t).unwrap()
        })
    });
}

fn bench_single_trajectory(c: &mut Criterion) {
    let model = built_in_rabi(1.0).unwrap();
    let engine = TrajectoryEngine::new(&model, 1e-3).unwrap();
    c.bench_function("rabi trajectory dt 1e-3", |b| {
        let mut stream = 0u64;
        b.iter_batched(
            || {
                stream += 1;
                stream
            },
            |s| engine.run(0, s).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn bench_small_ensemble(c: &mut Criterion) {
    let model = built_in_rabi(1.0).unwrap();
    c.bench_function("rabi ensemble n=200 dt 1e-2", |b| {
        b.iter(|| run_ensemble(&model, 200, 3, 1e-2).unwrap())
    });
}

fn bench_master_equation(c: &mut Criterion) {
    let model = built_in_rabi(1.0).unwrap();
    let grid = uniform_grid(model.t_max(), 11);
    c.bench_function("rabi master equation", |b| {
        b.iter(|| integrate_master_equation(&model, &[1.0, 0.0], &grid).unwrap())
    });
}

criterion_group!(
    benches,
    bench_state_query,
    bench_rate_pair,
    bench_single_trajectory,
    bench_small_ensemble,
    bench_master_equation
);
criterion_main!(benches);
