//! Finite-dimensional two-law quantum dynamics: deterministic Schrödinger
//! evolution of a universal state vector, plus a stochastic jump process
//! over the branches defined by a fixed experience basis.
//!
//! The first law evolves `|Ψ(t)⟩` unitarily under a piecewise-constant
//! Hamiltonian schedule ([`evolution`]). The second law moves a branch
//! index stochastically with rates `T_mn = max(J_mn, 0)/⟨ψ_n|ψ_n⟩`, where
//! `J_mn = (2/ħ) Im⟨ψ_m|H|ψ_n⟩` is the probability current between
//! branches ([`rates`], [`trajectory`]). The jump process is equivariant:
//! branch occupations that start Born-distributed stay Born-distributed,
//! which [`verify`] checks by integrating the implied master equation
//! independently of the Monte Carlo path.

pub mod branching;
pub mod error;
pub mod evolution;
pub mod hilbert;
pub mod model;
pub mod random;
pub mod rates;
pub mod trajectory;
pub mod verify;

#[cfg(test)]
pub(crate) mod test_support;

pub use branching::{decompose_basis, decompose_projectors, BranchDecomposition};
pub use error::{Error, Result};
pub use evolution::{evolve, Evolver, Propagator};
pub use hilbert::{CompositeSpace, HermitianOperator, StateVector};
pub use model::{
    built_in_diagonal, built_in_measurement, built_in_rabi, load_model, projectors_from_basis,
    serialize_model, BranchInit, ExperienceBasis, Model, ProjectorFamily,
};
pub use rates::{current_matrix, current_matrix_experience, rate_matrix, RateEvaluator, RatePair};
pub use trajectory::{
    run_ensemble, run_ensemble_full, run_trajectory, step, EnsembleStats, RandomSource,
    Trajectory, TrajectoryRecord,
};
pub use verify::{
    equivariance_report, integrate_master_equation, uniform_grid, EquivarianceReport,
    IntegrationParams,
};
