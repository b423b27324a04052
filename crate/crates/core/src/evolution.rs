//! Deterministic Schrödinger evolution of the universal state vector.
//!
//! Propagators are built by eigendecomposition, `U = V exp(-iΛ dt/ħ) V†`,
//! so each schedule segment is propagated exactly (no integrator drift).
//! An [`Evolver`] caches one eigendecomposition per segment together with
//! the eigenbasis coefficients of the state at the segment start, which
//! makes repeated `state_at` queries on a grid cheap.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hilbert::{HermitianOperator, StateVector};
use crate::model::Model;

/// Unitarity tolerance for constructed propagators.
pub const UNITARITY_TOL: f64 = 1e-9;

/// Unitary time-step operator for one schedule segment.
#[derive(Debug, Clone)]
pub struct Propagator {
    matrix: DMatrix<Complex64>,
    t_start: f64,
    t_end: f64,
}

impl Propagator {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    /// The `(t_start, t_end)` span this propagator advances across.
    pub fn segment(&self) -> (f64, f64) {
        (self.t_start, self.t_end)
    }

    /// Applies the propagator to a state.
    pub fn apply(&self, v: &StateVector) -> Result<StateVector> {
        if v.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "Propagator::apply",
                expected: self.dim(),
                got: v.dim(),
            });
        }
        Ok(StateVector::from_dvector(&self.matrix * v.as_dvector()))
    }
}

fn hermitian_eigen(h: &HermitianOperator) -> Result<(DVector<f64>, DMatrix<Complex64>)> {
    let eig = h
        .entries()
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or(Error::EigenFailure { dim: h.dim() })?;
    Ok((eig.eigenvalues, eig.eigenvectors))
}

fn phase_factors(eigenvalues: &DVector<f64>, dt: f64, hbar: f64) -> DVector<Complex64> {
    eigenvalues.map(|lambda| Complex64::new(0.0, -lambda * dt / hbar).exp())
}

/// `U = exp(-iH·dt/ħ)` via eigendecomposition of `H`.
pub fn propagator_for(h: &HermitianOperator, dt: f64, hbar: f64) -> Result<Propagator> {
    if !(dt.is_finite() && dt >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("must be non-negative and finite, got {dt}"),
        });
    }
    let (eigenvalues, v) = hermitian_eigen(h)?;
    let phases = DMatrix::from_diagonal(&phase_factors(&eigenvalues, dt, hbar));
    let matrix = &v * phases * v.adjoint();
    let dim = matrix.nrows();
    let unitarity_dev = (matrix.adjoint() * &matrix - DMatrix::<Complex64>::identity(dim, dim))
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if unitarity_dev > UNITARITY_TOL {
        return Err(Error::EigenFailure { dim });
    }
    Ok(Propagator {
        matrix,
        t_start: 0.0,
        t_end: dt,
    })
}

struct SegmentEigen {
    t_start: f64,
    t_end: f64,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<Complex64>,
    // Eigenbasis coefficients V†·Ψ(t_start) of the state entering the segment.
    start_coeffs: DVector<Complex64>,
}

/// Precomputed exact evolution for one model: a per-segment
/// eigendecomposition cache supporting `state_at` queries at any time.
pub struct Evolver {
    segments: Vec<SegmentEigen>,
    hbar: f64,
    t_max: f64,
}

impl Evolver {
    pub fn new(model: &Model) -> Result<Self> {
        let hbar = model.hbar();
        let mut psi = model.initial_state().as_dvector().clone();
        let mut segments = Vec::with_capacity(model.schedule().len());
        for seg in model.schedule() {
            let (eigenvalues, eigenvectors) = hermitian_eigen(&seg.hamiltonian)?;
            let start_coeffs = eigenvectors.adjoint() * &psi;
            let phases = phase_factors(&eigenvalues, seg.t_end - seg.t_start, hbar);
            psi = &eigenvectors * start_coeffs.component_mul(&phases);
            segments.push(SegmentEigen {
                t_start: seg.t_start,
                t_end: seg.t_end,
                eigenvalues,
                eigenvectors,
                start_coeffs,
            });
        }
        Ok(Self {
            segments,
            hbar,
            t_max: model.t_max(),
        })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// `|Ψ(t)⟩` for any `t` in `[0, t_max]`.
    pub fn state_at(&self, t: f64) -> Result<StateVector> {
        let idx = self.segment_index_at(t)?;
        Ok(self.state_in_segment(idx, t))
    }

    /// `|Ψ(t)⟩` evaluated inside a known segment; `t` must lie within it.
    pub(crate) fn state_in_segment(&self, segment: usize, t: f64) -> StateVector {
        let seg = &self.segments[segment];
        debug_assert!(t >= seg.t_start - 1e-9 && t <= seg.t_end + 1e-9);
        let phases = phase_factors(&seg.eigenvalues, t - seg.t_start, self.hbar);
        StateVector::from_dvector(&seg.eigenvectors * seg.start_coeffs.component_mul(&phases))
    }

    pub(crate) fn segment_index_at(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.t_max).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                t_max: self.t_max,
            });
        }
        Ok(self
            .segments
            .partition_point(|seg| seg.t_end <= t)
            .min(self.segments.len() - 1))
    }
}

/// `|Ψ(t)⟩` for a single query. Builds a fresh [`Evolver`]; use one
/// directly when evaluating many times.
pub fn evolve(model: &Model, t: f64) -> Result<StateVector> {
    Evolver::new(model)?.state_at(t)
}
