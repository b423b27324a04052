//! Decomposition of the universal state into branches and Born weights.
//!
//! A decomposition comes in one of two equivalent forms: experience-basis
//! form, where branch `n` carries the rest-of-world coefficient
//! `|ψ_n⟩ = (⟨φ_n| ⊗ I)|Ψ⟩` on `S_R`, and projector form, where branch `m`
//! carries `Π_m|Ψ⟩` on the full space.

use crate::error::{Error, Result};
use crate::hilbert::{apply, partial_inner, CompositeSpace, StateVector};
use crate::model::{ExperienceBasis, ProjectorFamily};

/// Weights below this are reported as exactly zero in summaries; full
/// precision is retained internally.
pub const SUMMARY_WEIGHT_FLOOR: f64 = 1e-14;

/// Which space the branch vectors of a decomposition live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecompositionForm {
    /// Branch vectors are `|ψ_n⟩` over `S_R`.
    ExperienceBasis,
    /// Branch vectors are `Π_m|Ψ⟩` over the full space.
    Projector,
}

/// Branch vectors and Born weights of a state at one instant.
#[derive(Debug, Clone)]
pub struct BranchDecomposition {
    time: f64,
    form: DecompositionForm,
    branch_vectors: Vec<StateVector>,
    weights: Vec<f64>,
}

impl BranchDecomposition {
    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn form(&self) -> DecompositionForm {
        self.form
    }

    pub fn len(&self) -> usize {
        self.branch_vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branch_vectors.is_empty()
    }

    pub fn branch_vector(&self, n: usize) -> &StateVector {
        &self.branch_vectors[n]
    }

    pub fn branch_vectors(&self) -> &[StateVector] {
        &self.branch_vectors
    }

    /// Born weights `w_n = ⟨ψ_n|ψ_n⟩` at full precision.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Born weights with entries below [`SUMMARY_WEIGHT_FLOOR`] reported
    /// as exactly zero. For human-facing summaries only.
    pub fn summary_weights(&self) -> Vec<f64> {
        self.weights
            .iter()
            .map(|&w| if w < SUMMARY_WEIGHT_FLOOR { 0.0 } else { w })
            .collect()
    }
}

/// Splits `|Ψ⟩ = Σ_n |φ_n⟩|ψ_n⟩` along the experience basis; branch `n`
/// gets `|ψ_n⟩ = (⟨φ_n| ⊗ I)|Ψ⟩` and weight `⟨ψ_n|ψ_n⟩`.
pub fn decompose_basis(
    psi: &StateVector,
    basis: &ExperienceBasis,
    space: &CompositeSpace,
    time: f64,
) -> Result<BranchDecomposition> {
    if psi.dim() != space.dim() {
        return Err(Error::DimensionMismatch {
            context: "decompose_basis",
            expected: space.dim(),
            got: psi.dim(),
        });
    }
    let mut branch_vectors = Vec::with_capacity(basis.len());
    let mut weights = Vec::with_capacity(basis.len());
    for phi in basis.vectors() {
        let branch = partial_inner(phi, psi, space)?;
        weights.push(branch.norm_squared());
        branch_vectors.push(branch);
    }
    Ok(BranchDecomposition {
        time,
        form: DecompositionForm::ExperienceBasis,
        branch_vectors,
        weights,
    })
}

/// Splits `|Ψ⟩` along a projector family; branch `m` gets `Π_m|Ψ⟩` and
/// weight `⟨Ψ|Π_m|Ψ⟩`.
pub fn decompose_projectors(
    psi: &StateVector,
    family: &ProjectorFamily,
    time: f64,
) -> Result<BranchDecomposition> {
    if psi.dim() != family.dim() {
        return Err(Error::DimensionMismatch {
            context: "decompose_projectors",
            expected: family.dim(),
            got: psi.dim(),
        });
    }
    let mut branch_vectors = Vec::with_capacity(family.len());
    let mut weights = Vec::with_capacity(family.len());
    for p in family.projectors() {
        let branch = apply(p, psi)?;
        weights.push(branch.norm_squared());
        branch_vectors.push(branch);
    }
    Ok(BranchDecomposition {
        time,
        form: DecompositionForm::Projector,
        branch_vectors,
        weights,
    })
}
