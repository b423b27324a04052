//! Seeded random scenario generation for fuzz suites and tests.
//!
//! Everything is a pure function of `(seed, index)`, using one ChaCha
//! stream per index, so fuzz batches are reproducible and parallelizable.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::hilbert::{CompositeSpace, HermitianOperator, StateVector};
use crate::model::{BranchInit, ExperienceBasis, Model, Segment};

/// Shape of the random models drawn by [`random_model`].
#[derive(Debug, Clone)]
pub struct RandomModelConfig {
    /// Candidate `(dim_c, dim_r)` splits, drawn uniformly.
    pub dims: Vec<(usize, usize)>,
    pub t_max: f64,
    /// Rough magnitude of the Hamiltonian entries.
    pub hamiltonian_scale: f64,
}

impl Default for RandomModelConfig {
    fn default() -> Self {
        Self {
            dims: vec![(2, 1), (2, 2), (2, 3), (2, 4), (3, 1), (3, 2), (4, 1), (4, 2), (8, 1)],
            t_max: 10.0,
            hamiltonian_scale: 1.0,
        }
    }
}

impl RandomModelConfig {
    /// Keeps only splits with total dimension at most `max_dim`.
    pub fn with_max_total_dim(mut self, max_dim: usize) -> Self {
        self.dims.retain(|&(c, r)| c * r <= max_dim);
        self
    }
}

fn complex_uniform(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
}

/// Random normalized state with i.i.d. complex entries.
pub fn random_state(dim: usize, rng: &mut ChaCha8Rng) -> StateVector {
    loop {
        let amps: Vec<Complex64> = (0..dim).map(|_| complex_uniform(rng)).collect();
        let v = StateVector::new(amps).expect("dim >= 1");
        if v.norm() > 1e-3 {
            return v.normalize().expect("norm checked");
        }
    }
}

/// Random Hermitian matrix `(G + G†)/2` with entries of the given scale.
pub fn random_hermitian(dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> HermitianOperator {
    let g = DMatrix::from_fn(dim, dim, |_, _| complex_uniform(rng) * 2.0 * scale);
    let h = (&g + g.adjoint()) * Complex64::new(0.5, 0.0);
    HermitianOperator::new(h).expect("symmetrized matrix is Hermitian")
}

/// Random orthonormal experience basis from the QR factor of a random
/// complex matrix.
pub fn random_basis(space: CompositeSpace, rng: &mut ChaCha8Rng) -> Result<ExperienceBasis> {
    let dim = space.dim_c();
    let g = DMatrix::from_fn(dim, dim, |_, _| complex_uniform(rng));
    let q = g.qr().q();
    let vectors = (0..dim)
        .map(|k| StateVector::new(q.column(k).iter().copied().collect()).expect("dim >= 1"))
        .collect();
    ExperienceBasis::new(space, vectors)
}

/// Deterministic random model for fuzz index `index` under `seed`.
pub fn random_model(seed: u64, index: u64, config: &RandomModelConfig) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let (dim_c, dim_r) = config.dims[rng.random_range(0..config.dims.len())];
    let space = CompositeSpace::new(dim_c, dim_r)?;
    let hamiltonian = random_hermitian(space.dim(), config.hamiltonian_scale, &mut rng);
    let initial_state = random_state(space.dim(), &mut rng);
    let basis = random_basis(space, &mut rng)?;
    let labels = (0..dim_c).map(|n| n.to_string()).collect();
    Model::new(
        space,
        vec![Segment {
            t_start: 0.0,
            t_end: config.t_max,
            hamiltonian,
        }],
        initial_state,
        basis,
        BranchInit::Born,
        config.t_max,
        1.0,
        labels,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_model_is_deterministic_per_index() {
        let config = RandomModelConfig::default();
        let a = random_model(5, 2, &config).unwrap();
        let b = random_model(5, 2, &config).unwrap();
        assert_eq!(
            a.initial_state().amplitudes(),
            b.initial_state().amplitudes()
        );
        assert_eq!(
            a.schedule()[0].hamiltonian.entries(),
            b.schedule()[0].hamiltonian.entries()
        );
        let c = random_model(5, 3, &config).unwrap();
        assert_ne!(
            a.initial_state().amplitudes(),
            c.initial_state().amplitudes()
        );
    }

    #[test]
    fn max_dim_filter_applies() {
        let config = RandomModelConfig::default().with_max_total_dim(4);
        for k in 0..20 {
            let m = random_model(9, k, &config).unwrap();
            assert!(m.space().dim() <= 4);
        }
    }
}
