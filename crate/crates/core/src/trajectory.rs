//! Stochastic branch-jump trajectories and ensemble statistics.
//!
//! Jumps are simulated by first-order thinning: in a grid cell of width
//! `dt` the probability of leaving the current branch is `R·dt` with
//! `R = Σ_m T_m,current`, and the target is drawn from the rates by
//! cumulative sums in index order from a single uniform draw. Cells where
//! `R·dt` exceeds [`SOFT_RATE_CAP`] are halved locally, re-evaluating the
//! rates at the sub-times, down to `dt_base/2^10`; past that depth the
//! jump probability is clamped at `1 - exp(-R·dt)` and the event is
//! flagged. Rates diverge where the source weight vanishes, but the
//! diverging rate multiplies a vanishing population, so the total
//! transfer stays exact in the limit.
//!
//! Every trajectory owns one counter-based RNG stream, so ensembles are
//! reproducible bit for bit at any thread count. Trajectories share only
//! the immutable model data and the precomputed per-grid-point rate
//! table; occupation counts are integers, so their reduction commutes.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BranchInit, Model};
use crate::rates::{RateEvaluator, RatePair};

/// Target bound on `R·dt` per step; cells above it are halved.
pub const SOFT_RATE_CAP: f64 = 0.1;
/// Hard bound on `R·dt` for a single first-order step.
pub const HARD_RATE_CAP: f64 = 0.5;
/// Maximum local halvings of a grid cell.
pub const MAX_REFINE_DEPTH: u32 = 10;

const MAX_GRID_CELLS: usize = 20_000_000;

/// Counter-based random source: one ChaCha stream per `(seed, stream)`
/// pair, so identical pairs reproduce identical trajectories.
pub struct RandomSource {
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
}

impl RandomSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, seed, stream }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

/// A recorded jump. `time` is the rate-evaluation time of the step that
/// produced the jump (the left endpoint of its grid cell or sub-cell).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub from: usize,
    pub to: usize,
}

/// Flagged events that do not abort a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    /// The trajectory occupies a branch whose Born weight is at or below
    /// the zero-weight cutoff: a probability-zero configuration.
    OccupiedBranchBelowEpsilon { time: f64, branch: usize, weight: f64 },
    /// `R·dt` still exceeded the soft cap at maximum refinement depth;
    /// the jump probability was clamped at `1 - exp(-R·dt)`.
    RateCapClamped {
        time: f64,
        branch: usize,
        exit_rate: f64,
        dt: f64,
    },
}

/// One realization of the jump process on the evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub stream: u64,
    pub times: Vec<f64>,
    /// Branch index at each grid point; changes only at recorded jumps.
    pub branch_path: Vec<usize>,
    pub jump_events: Vec<JumpEvent>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Compact trajectory form for JSONL output: the path is implied by the
/// initial branch and the jump events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub stream: u64,
    pub initial_branch: usize,
    pub final_branch: usize,
    pub jump_events: Vec<JumpEvent>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Aggregated occupation frequencies of an ensemble against the Born
/// weights on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub n_trajectories: usize,
    pub times: Vec<f64>,
    /// `occupation[k][b]`: fraction of trajectories in branch `b` at
    /// grid time `k`. Each time slice sums to 1.
    pub occupation: Vec<Vec<f64>>,
    /// Born weights `w_b(t_k)`, with sub-summary-floor values reported
    /// as exactly zero.
    pub born_weights: Vec<Vec<f64>>,
    /// Binomial standard error `sqrt(w(1-w)/n)` of the occupation
    /// estimate under the Born null.
    pub standard_error: Vec<Vec<f64>>,
}

/// Single first-order thinning step. Jumps to branch `m` with probability
/// `T_m,current · dt`; stays otherwise. The caller must keep
/// `R·dt <= `[`HARD_RATE_CAP`] (refine `dt` if not).
pub fn step(
    current: usize,
    rates: &DMatrix<f64>,
    dt: f64,
    rng: &mut RandomSource,
) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("must be positive and finite, got {dt}"),
        });
    }
    let exit_rate: f64 = rates.column(current).sum();
    let product = exit_rate * dt;
    if product > HARD_RATE_CAP {
        return Err(Error::RateCapExceeded {
            rate: exit_rate,
            dt,
            product,
        });
    }
    Ok(sample_jump(current, rates, exit_rate, product, rng))
}

/// Draws the step outcome from a single uniform: jump iff `u < p_jump`,
/// with the target found by cumulative rate sums in index order.
fn sample_jump(
    current: usize,
    rates: &DMatrix<f64>,
    exit_rate: f64,
    p_jump: f64,
    rng: &mut RandomSource,
) -> usize {
    if exit_rate <= 0.0 || p_jump <= 0.0 {
        return current;
    }
    let u = rng.uniform();
    if u >= p_jump {
        return current;
    }
    let threshold = u / p_jump * exit_rate;
    let mut cumulative = 0.0;
    let mut last_positive = current;
    for m in 0..rates.nrows() {
        if m == current {
            continue;
        }
        let r = rates[(m, current)];
        if r <= 0.0 {
            continue;
        }
        cumulative += r;
        last_positive = m;
        if threshold < cumulative {
            return m;
        }
    }
    // Rounding can leave threshold at the top of the last interval.
    last_positive
}

fn born_sample(weights: &[f64], rng: &mut RandomSource) -> usize {
    let total: f64 = weights.iter().sum();
    let threshold = rng.uniform() * total;
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (b, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        cumulative += w;
        last_positive = b;
        if threshold < cumulative {
            return b;
        }
    }
    last_positive
}

/// Evaluation grid: per-segment uniform steps of `dt_base`, with a final
/// partial step landing exactly on each segment boundary.
struct TimeGrid {
    times: Vec<f64>,
    cell_segment: Vec<usize>,
}

fn build_grid(model: &Model, dt_base: f64) -> Result<TimeGrid> {
    if !(dt_base.is_finite() && dt_base > 0.0) {
        return Err(Error::GridMisaligned {
            reason: format!("dt_base must be positive and finite, got {dt_base}"),
        });
    }
    let total_cells = (model.t_max() / dt_base).ceil();
    if !total_cells.is_finite() || total_cells as usize > MAX_GRID_CELLS {
        return Err(Error::GridMisaligned {
            reason: format!(
                "dt_base {dt_base} would need more than {MAX_GRID_CELLS} grid cells"
            ),
        });
    }
    let mut times = vec![0.0];
    let mut cell_segment = Vec::new();
    for (si, seg) in model.schedule().iter().enumerate() {
        let mut k = 1usize;
        loop {
            let t = seg.t_start + k as f64 * dt_base;
            if t >= seg.t_end - 1e-12 * seg.t_end.abs().max(1.0) {
                break;
            }
            times.push(t);
            cell_segment.push(si);
            k += 1;
        }
        times.push(seg.t_end);
        cell_segment.push(si);
    }
    Ok(TimeGrid {
        times,
        cell_segment,
    })
}

/// Shared, immutable per-model machinery for running trajectories: the
/// grid, the rate table on it, and the evaluator for refinement times.
pub struct TrajectoryEngine<'a> {
    model: &'a Model,
    evaluator: RateEvaluator<'a>,
    grid: TimeGrid,
    table: Vec<RatePair>,
}

impl<'a> TrajectoryEngine<'a> {
    pub fn new(model: &'a Model, dt_base: f64) -> Result<Self> {
        let evaluator = RateEvaluator::new(model)?;
        let grid = build_grid(model, dt_base)?;
        let n_points = grid.times.len();
        let table: Vec<RatePair> = (0..n_points)
            .into_par_iter()
            .map(|k| {
                // Rates at a grid point use the Hamiltonian of the cell it
                // opens; the final point reuses the last segment.
                let seg = if k < grid.cell_segment.len() {
                    grid.cell_segment[k]
                } else {
                    model.schedule().len() - 1
                };
                evaluator.rate_pair_in_segment(seg, grid.times[k])
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            model,
            evaluator,
            grid,
            table,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.grid.times
    }

    /// Rate table entry at grid point `k`.
    pub fn rate_pair(&self, k: usize) -> &RatePair {
        &self.table[k]
    }

    fn initial_branch(&self, rng: &mut RandomSource) -> usize {
        match self.model.initial_branch() {
            BranchInit::Fixed(i) => i,
            BranchInit::Born => born_sample(&self.table[0].weights, rng),
        }
    }

    fn run_parts(
        &self,
        seed: u64,
        stream: u64,
    ) -> Result<(Vec<usize>, Vec<JumpEvent>, Vec<Diagnostic>)> {
        let mut rng = RandomSource::new(seed, stream);
        let epsilon_w = self.evaluator.epsilon_w();
        let n_cells = self.grid.cell_segment.len();
        let mut path = Vec::with_capacity(n_cells + 1);
        let mut jumps = Vec::new();
        let mut diagnostics = Vec::new();
        let mut branch = self.initial_branch(&mut rng);
        path.push(branch);
        for k in 0..n_cells {
            let pair = &self.table[k];
            if pair.weights[branch] <= epsilon_w {
                diagnostics.push(Diagnostic::OccupiedBranchBelowEpsilon {
                    time: self.grid.times[k],
                    branch,
                    weight: pair.weights[branch],
                });
            }
            branch = self.step_cell(
                branch,
                self.grid.times[k],
                self.grid.times[k + 1],
                self.grid.cell_segment[k],
                0,
                pair,
                &mut rng,
                &mut jumps,
                &mut diagnostics,
            )?;
            path.push(branch);
        }
        Ok((path, jumps, diagnostics))
    }

    #[allow(clippy::too_many_arguments)]
    fn step_cell(
        &self,
        branch: usize,
        t0: f64,
        t1: f64,
        segment: usize,
        depth: u32,
        pair: &RatePair,
        rng: &mut RandomSource,
        jumps: &mut Vec<JumpEvent>,
        diagnostics: &mut Vec<Diagnostic>,
    ) -> Result<usize> {
        let dt = t1 - t0;
        let exit_rate = pair.exit_rate(branch);
        let product = exit_rate * dt;
        if product <= SOFT_RATE_CAP {
            let next = sample_jump(branch, &pair.rates, exit_rate, product, rng);
            if next != branch {
                jumps.push(JumpEvent {
                    time: t0,
                    from: branch,
                    to: next,
                });
            }
            return Ok(next);
        }
        if depth >= MAX_REFINE_DEPTH {
            diagnostics.push(Diagnostic::RateCapClamped {
                time: t0,
                branch,
                exit_rate,
                dt,
            });
            let p_jump = 1.0 - (-product).exp();
            let next = sample_jump(branch, &pair.rates, exit_rate, p_jump, rng);
            if next != branch {
                jumps.push(JumpEvent {
                    time: t0,
                    from: branch,
                    to: next,
                });
            }
            return Ok(next);
        }
        let mid = 0.5 * (t0 + t1);
        let moved = self.step_cell(
            branch,
            t0,
            mid,
            segment,
            depth + 1,
            pair,
            rng,
            jumps,
            diagnostics,
        )?;
        let mid_pair = self.evaluator.rate_pair_in_segment(segment, mid)?;
        self.step_cell(
            moved,
            mid,
            t1,
            segment,
            depth + 1,
            &mid_pair,
            rng,
            jumps,
            diagnostics,
        )
    }

    /// Runs one trajectory on stream `stream`.
    pub fn run(&self, seed: u64, stream: u64) -> Result<Trajectory> {
        let (branch_path, jump_events, diagnostics) = self.run_parts(seed, stream)?;
        Ok(Trajectory {
            seed,
            stream,
            times: self.grid.times.clone(),
            branch_path,
            jump_events,
            diagnostics,
        })
    }
}

fn compact(
    seed: u64,
    stream: u64,
    path: &[usize],
    jumps: Vec<JumpEvent>,
    diagnostics: Vec<Diagnostic>,
) -> TrajectoryRecord {
    TrajectoryRecord {
        seed,
        stream,
        initial_branch: path[0],
        final_branch: *path.last().expect("grid has at least one point"),
        jump_events: jumps,
        diagnostics,
    }
}

/// Simulates one trajectory of the jump process.
pub fn run_trajectory(model: &Model, seed: u64, stream: u64, dt_base: f64) -> Result<Trajectory> {
    TrajectoryEngine::new(model, dt_base)?.run(seed, stream)
}

struct EnsembleAccumulator {
    counts: Vec<Vec<u64>>,
    records: Vec<TrajectoryRecord>,
}

impl EnsembleAccumulator {
    fn new(n_points: usize, n_branches: usize) -> Self {
        Self {
            counts: vec![vec![0; n_branches]; n_points],
            records: Vec::new(),
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for (mine, theirs) in self.counts.iter_mut().zip(other.counts) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += b;
            }
        }
        self.records.extend(other.records);
        self
    }
}

fn run_ensemble_inner(
    model: &Model,
    n: usize,
    seed: u64,
    dt_base: f64,
    keep_records: bool,
) -> Result<(EnsembleStats, Vec<TrajectoryRecord>)> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "ensemble needs at least one trajectory".into(),
        });
    }
    let engine = TrajectoryEngine::new(model, dt_base)?;
    let n_points = engine.times().len();
    let n_branches = model.n_branches();
    let mut acc = (0..n as u64)
        .into_par_iter()
        .try_fold(
            || EnsembleAccumulator::new(n_points, n_branches),
            |mut acc, stream| -> Result<EnsembleAccumulator> {
                let (path, jumps, diagnostics) = engine.run_parts(seed, stream)?;
                for (k, &b) in path.iter().enumerate() {
                    acc.counts[k][b] += 1;
                }
                if keep_records {
                    acc.records.push(compact(seed, stream, &path, jumps, diagnostics));
                }
                Ok(acc)
            },
        )
        .try_reduce(
            || EnsembleAccumulator::new(n_points, n_branches),
            |a, b| Ok(a.merge(b)),
        )?;
    // Counts are integers, so any reduction order yields the same totals;
    // sorting the records restores the per-stream order.
    acc.records.sort_by_key(|r| r.stream);

    let n_f = n as f64;
    let occupation: Vec<Vec<f64>> = acc
        .counts
        .iter()
        .map(|row| row.iter().map(|&c| c as f64 / n_f).collect())
        .collect();
    let born_weights: Vec<Vec<f64>> = (0..n_points)
        .map(|k| {
            let pair = engine.rate_pair(k);
            pair.weights
                .iter()
                .map(|&w| {
                    if w < crate::branching::SUMMARY_WEIGHT_FLOOR {
                        0.0
                    } else {
                        w
                    }
                })
                .collect()
        })
        .collect();
    let standard_error: Vec<Vec<f64>> = born_weights
        .iter()
        .map(|row| {
            row.iter()
                .map(|&w| (w.clamp(0.0, 1.0) * (1.0 - w.clamp(0.0, 1.0)) / n_f).sqrt())
                .collect()
        })
        .collect();
    Ok((
        EnsembleStats {
            n_trajectories: n,
            times: engine.times().to_vec(),
            occupation,
            born_weights,
            standard_error,
        },
        acc.records,
    ))
}

/// Runs `n` independent trajectories (stream id = trajectory index) and
/// aggregates occupation statistics. Executes in parallel; the result is
/// identical to sequential execution.
pub fn run_ensemble(model: &Model, n: usize, seed: u64, dt_base: f64) -> Result<EnsembleStats> {
    run_ensemble_inner(model, n, seed, dt_base, false).map(|(stats, _)| stats)
}

/// Like [`run_ensemble`], also returning one compact record per
/// trajectory in stream order.
pub fn run_ensemble_full(
    model: &Model,
    n: usize,
    seed: u64,
    dt_base: f64,
) -> Result<(EnsembleStats, Vec<TrajectoryRecord>)> {
    run_ensemble_inner(model, n, seed, dt_base, true)
}
