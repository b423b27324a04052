//! Probability-current matrix `J` and transition-rate matrix `T`.
//!
//! `J_mn = (2/ħ) Im⟨ψ_m|H|ψ_n⟩` is the net probability flow from branch
//! `n` into branch `m`; it is antisymmetric because `H` is Hermitian, and
//! its row sums equal the time derivatives of the Born weights. The jump
//! rates are the minimal-flow solution `T_mn = max(J_mn, 0)/w_n`: for each
//! pair of branches only the direction carrying positive current jumps.
//!
//! Outgoing rates from a branch with weight at or below `epsilon_w` are
//! defined as zero: such a branch is unoccupied in the Born ensemble, and
//! a trajectory found there is flagged as a diagnostic event by the
//! stepper instead of dividing by a vanishing weight. Rates are not
//! clipped here — they diverge like `tan` near a weight node, and bounding
//! the step is the stepper's job.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::branching::{decompose_basis, BranchDecomposition, DecompositionForm};
use crate::error::{Error, Result};
use crate::evolution::Evolver;
use crate::hilbert::{apply, tensor_state, CompositeSpace, HermitianOperator, StateVector};
use crate::model::{ExperienceBasis, Model};

/// Default cutoff below which a branch weight counts as unoccupied.
pub const EPSILON_W: f64 = 1e-12;

/// Whether the rate matrix rectifies the current. [`RateConvention::Raw`]
/// exists only to demonstrate that dropping the rectification breaks
/// equivariance; it is not a physical convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RateConvention {
    #[default]
    Rectified,
    Raw,
}

/// Current matrix, rate matrix, and the branch weights used in the rate
/// denominators, all evaluated at one time.
#[derive(Debug, Clone)]
pub struct RatePair {
    pub time: f64,
    /// `J_mn`, antisymmetric, units 1/time.
    pub current: DMatrix<f64>,
    /// `T_mn`, non-negative, zero diagonal, units 1/time.
    pub rates: DMatrix<f64>,
    pub weights: Vec<f64>,
}

impl RatePair {
    /// Total exit rate `Σ_m T_m,branch` out of a branch.
    pub fn exit_rate(&self, branch: usize) -> f64 {
        self.rates.column(branch).sum()
    }
}

fn current_from_full_vectors(
    vectors: &[StateVector],
    h: &HermitianOperator,
    hbar: f64,
) -> Result<DMatrix<f64>> {
    let n = vectors.len();
    let mut h_applied = Vec::with_capacity(n);
    for v in vectors {
        h_applied.push(apply(h, v)?);
    }
    // Compute the upper triangle and mirror: antisymmetry is exact by
    // construction, as Hermiticity guarantees mathematically.
    let mut j = DMatrix::zeros(n, n);
    for m in 0..n {
        for k in (m + 1)..n {
            let ip: Complex64 = vectors[m].as_dvector().dotc(h_applied[k].as_dvector());
            let val = 2.0 * ip.im / hbar;
            j[(m, k)] = val;
            j[(k, m)] = -val;
        }
    }
    Ok(j)
}

/// `J_mn = (2/ħ) Im⟨ψ_m|H|ψ_n⟩` from a projector-form decomposition,
/// whose branch vectors `Π_m|Ψ⟩` live in the full space.
pub fn current_matrix(
    decomp: &BranchDecomposition,
    h: &HermitianOperator,
    hbar: f64,
) -> Result<DMatrix<f64>> {
    if decomp.form() != DecompositionForm::Projector {
        return Err(Error::InvalidParameter {
            name: "decomp",
            reason: "current_matrix requires a projector-form decomposition".into(),
        });
    }
    if decomp.is_empty() || decomp.branch_vector(0).dim() != h.dim() {
        return Err(Error::DimensionMismatch {
            context: "current_matrix",
            expected: h.dim(),
            got: decomp.branch_vectors().first().map_or(0, |v| v.dim()),
        });
    }
    current_from_full_vectors(decomp.branch_vectors(), h, hbar)
}

/// `J_mn = (2/ħ) Im[(φ_m ⊗ ψ_m)† H (φ_n ⊗ ψ_n)]` from an experience-basis
/// decomposition, whose branch vectors live in `S_R`.
pub fn current_matrix_experience(
    decomp: &BranchDecomposition,
    basis: &ExperienceBasis,
    h: &HermitianOperator,
    space: &CompositeSpace,
    hbar: f64,
) -> Result<DMatrix<f64>> {
    if decomp.form() != DecompositionForm::ExperienceBasis {
        return Err(Error::InvalidParameter {
            name: "decomp",
            reason: "current_matrix_experience requires a basis-form decomposition".into(),
        });
    }
    if h.dim() != space.dim() {
        return Err(Error::DimensionMismatch {
            context: "current_matrix_experience",
            expected: space.dim(),
            got: h.dim(),
        });
    }
    if decomp.len() != basis.len() {
        return Err(Error::DimensionMismatch {
            context: "current_matrix_experience",
            expected: basis.len(),
            got: decomp.len(),
        });
    }
    let lifted: Vec<StateVector> = decomp
        .branch_vectors()
        .iter()
        .zip(basis.vectors())
        .map(|(psi_n, phi_n)| tensor_state(phi_n, psi_n, space))
        .collect::<Result<_>>()?;
    current_from_full_vectors(&lifted, h, hbar)
}

/// `T_mn = max(J_mn, 0)/w_n`, with outgoing rates from branches of weight
/// `<= epsilon_w` set to zero and a zero diagonal.
pub fn rate_matrix(j: &DMatrix<f64>, weights: &[f64], epsilon_w: f64) -> Result<DMatrix<f64>> {
    rate_matrix_with(j, weights, epsilon_w, RateConvention::Rectified)
}

/// Rate matrix under an explicit [`RateConvention`]. The `Raw` form keeps
/// the full signed current `J_mn/w_n` and exists for mutation testing.
pub fn rate_matrix_with(
    j: &DMatrix<f64>,
    weights: &[f64],
    epsilon_w: f64,
    convention: RateConvention,
) -> Result<DMatrix<f64>> {
    let n = weights.len();
    if j.nrows() != n || j.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "rate_matrix",
            expected: n,
            got: j.nrows(),
        });
    }
    for (index, &w) in weights.iter().enumerate() {
        if w < 0.0 {
            return Err(Error::NegativeWeight { index, weight: w });
        }
    }
    let mut t = DMatrix::zeros(n, n);
    for source in 0..n {
        let w = weights[source];
        if w <= epsilon_w {
            continue;
        }
        for target in 0..n {
            if target == source {
                continue;
            }
            let flow = j[(target, source)];
            t[(target, source)] = match convention {
                RateConvention::Rectified => flow.max(0.0) / w,
                RateConvention::Raw => flow / w,
            };
        }
    }
    Ok(t)
}

/// Evaluates the full pipeline state → decomposition → current → rates at
/// arbitrary times of one model. Pure and shareable across threads.
pub struct RateEvaluator<'a> {
    model: &'a Model,
    evolver: Evolver,
    epsilon_w: f64,
    convention: RateConvention,
}

impl<'a> RateEvaluator<'a> {
    pub fn new(model: &'a Model) -> Result<Self> {
        Self::with_convention(model, RateConvention::Rectified)
    }

    pub fn with_convention(model: &'a Model, convention: RateConvention) -> Result<Self> {
        Ok(Self {
            model,
            evolver: Evolver::new(model)?,
            epsilon_w: EPSILON_W,
            convention,
        })
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn evolver(&self) -> &Evolver {
        &self.evolver
    }

    pub fn epsilon_w(&self) -> f64 {
        self.epsilon_w
    }

    /// Branch decomposition of `|Ψ(t)⟩` in experience-basis form.
    pub fn decomposition_at(&self, t: f64) -> Result<BranchDecomposition> {
        let segment = self.evolver.segment_index_at(t)?;
        self.decomposition_in_segment(segment, t)
    }

    fn decomposition_in_segment(&self, segment: usize, t: f64) -> Result<BranchDecomposition> {
        let psi = self.evolver.state_in_segment(segment, t);
        decompose_basis(&psi, self.model.basis(), self.model.space(), t)
    }

    /// Born weights `w_n(t)`.
    pub fn weights_at(&self, t: f64) -> Result<Vec<f64>> {
        Ok(self.decomposition_at(t)?.weights().to_vec())
    }

    /// `(J, T, w)` at time `t`; the Hamiltonian is the one of the schedule
    /// segment containing `t`.
    pub fn rate_pair_at(&self, t: f64) -> Result<RatePair> {
        let segment = self.evolver.segment_index_at(t)?;
        self.rate_pair_in_segment(segment, t)
    }

    /// Same as [`RateEvaluator::rate_pair_at`] with the segment pinned by
    /// the caller, which matters exactly on segment boundaries.
    pub fn rate_pair_in_segment(&self, segment: usize, t: f64) -> Result<RatePair> {
        let decomp = self.decomposition_in_segment(segment, t)?;
        let h = &self.model.schedule()[segment].hamiltonian;
        let current = current_matrix_experience(
            &decomp,
            self.model.basis(),
            h,
            self.model.space(),
            self.model.hbar(),
        )?;
        let rates = rate_matrix_with(&current, decomp.weights(), self.epsilon_w, self.convention)?;
        Ok(RatePair {
            time: t,
            current,
            rates,
            weights: decomp.weights().to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branching::decompose_projectors;
    use crate::model::{built_in_diagonal, built_in_measurement, built_in_rabi};
    use crate::random::{random_model, RandomModelConfig};
    use approx::assert_abs_diff_eq;
    use num_complex::Complex64;

    fn re(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn commuting_hamiltonian_has_zero_current() {
        let model = built_in_diagonal().unwrap();
        let eval = RateEvaluator::new(&model).unwrap();
        for &t in &[0.0, 0.7, 3.1] {
            let pair = eval.rate_pair_at(t).unwrap();
            assert_eq!(pair.current.iter().cloned().fold(0.0, f64::max), 0.0);
            assert_eq!(pair.rates.iter().cloned().fold(0.0, f64::max), 0.0);
        }
    }

    #[test]
    fn rabi_current_matches_hand_evaluation() {
        // ⟨ψ_1|H|ψ_0⟩ = iħω sin(ωt) cos(ωt), so J_10 = ω sin(2ωt).
        let omega = 1.0;
        let model = built_in_rabi(omega).unwrap();
        let eval = RateEvaluator::new(&model).unwrap();
        for &t in &[0.2, 0.7, 1.3, 2.9, 4.4] {
            let pair = eval.rate_pair_at(t).unwrap();
            let want = omega * (2.0 * omega * t).sin();
            assert_abs_diff_eq!(pair.current[(1, 0)], want, epsilon = 1e-9);
            assert_abs_diff_eq!(pair.current[(0, 1)], -want, epsilon = 1e-9);
        }
    }

    #[test]
    fn rabi_current_matches_weight_derivative() {
        // Cross-check by numerical differentiation of w_1(t).
        let model = built_in_rabi(1.0).unwrap();
        let eval = RateEvaluator::new(&model).unwrap();
        let h = 1e-6;
        for &t in &[0.4, 1.1, 2.6] {
            let j = eval.rate_pair_at(t).unwrap().current[(1, 0)];
            let wp = eval.weights_at(t + h).unwrap()[1];
            let wm = eval.weights_at(t - h).unwrap()[1];
            assert_abs_diff_eq!(j, (wp - wm) / (2.0 * h), epsilon = 1e-6);
        }
    }

    #[test]
    fn rabi_rates_closed_form_both_lobes() {
        let model = built_in_rabi(1.0).unwrap();
        let eval = RateEvaluator::new(&model).unwrap();
        // 0 < t < π/2: current flows 0 → 1 at rate 2 tan t.
        for &t in &[0.3, 0.8, 1.4] {
            let pair = eval.rate_pair_at(t).unwrap();
            assert_abs_diff_eq!(pair.rates[(1, 0)], 2.0 * t.tan(), epsilon = 1e-9);
            assert_eq!(pair.rates[(0, 1)], 0.0);
        }
        // π/2 < t < π: the current reverses, T_01 = -sin(2t)/sin²t.
        for &t in &[1.8, 2.4, 3.0] {
            let pair = eval.rate_pair_at(t).unwrap();
            let want = -(2.0 * t).sin() / t.sin().powi(2);
            assert_abs_diff_eq!(pair.rates[(0, 1)], want, epsilon = 1e-9);
            assert_eq!(pair.rates[(1, 0)], 0.0);
        }
    }

    #[test]
    fn zero_current_gives_zero_rates() {
        let j = DMatrix::zeros(3, 3);
        let t = rate_matrix(&j, &[0.2, 0.3, 0.5], EPSILON_W).unwrap();
        assert_eq!(t.iter().cloned().fold(0.0, f64::max), 0.0);
    }

    #[test]
    fn unoccupied_source_branch_has_no_outgoing_rate() {
        let mut j = DMatrix::zeros(2, 2);
        j[(1, 0)] = 1.0;
        j[(0, 1)] = -1.0;
        let t = rate_matrix(&j, &[0.0, 1.0], EPSILON_W).unwrap();
        assert_eq!(t[(1, 0)], 0.0);
        assert_eq!(t[(0, 1)], 0.0);
    }

    #[test]
    fn negative_weight_is_an_error() {
        let j = DMatrix::zeros(2, 2);
        assert!(matches!(
            rate_matrix(&j, &[0.5, -0.1], EPSILON_W),
            Err(Error::NegativeWeight { .. })
        ));
    }

    #[test]
    fn measurement_mid_pulse_current() {
        // With c = (1, 0) the pulse reduces to a two-level rotation between
        // "ready" and "saw 1": J(saw 1, ready) = g sin(2gt).
        let g = 1.0;
        let model = built_in_measurement(&[re(1.0), re(0.0)], g).unwrap();
        let eval = RateEvaluator::new(&model).unwrap();
        let t = model.t_max() / 2.0;
        let pair = eval.rate_pair_at(t).unwrap();
        let want = g * (2.0 * g * t).sin();
        assert_abs_diff_eq!(pair.current[(1, 0)], want, epsilon = 1e-12);
        assert!(pair.current[(1, 0)] > 0.0);
    }

    #[test]
    fn projector_and_experience_forms_agree() {
        // Eq-by-eq agreement of the two current computations on random
        // models; the projector route is the oracle for the basis route.
        for k in 0..10 {
            let model = random_model(11, k, &RandomModelConfig::default()).unwrap();
            let eval = RateEvaluator::new(&model).unwrap();
            let family = model.projector_family().unwrap();
            for &t in &[0.1, 1.7, 4.9] {
                let psi = eval.evolver().state_at(t).unwrap();
                let db = decompose_basis(&psi, model.basis(), model.space(), t).unwrap();
                let dp = decompose_projectors(&psi, &family, t).unwrap();
                let h = &model.schedule()[0].hamiltonian;
                let j_basis = current_matrix_experience(
                    &db,
                    model.basis(),
                    h,
                    model.space(),
                    model.hbar(),
                )
                .unwrap();
                let j_proj = current_matrix(&dp, h, model.hbar()).unwrap();
                for (a, b) in j_basis.iter().zip(j_proj.iter()) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn trivial_environment_reduces_to_pure_subsystem_current() {
        // dim_r = 1: lifting is the identity up to the scalar ψ_n, so the
        // basis-form current equals the direct two-level computation.
        let model = built_in_rabi(1.0).unwrap();
        let eval = RateEvaluator::new(&model).unwrap();
        let t = 0.9;
        let psi = eval.evolver().state_at(t).unwrap();
        let d = decompose_basis(&psi, model.basis(), model.space(), t).unwrap();
        let j = current_matrix_experience(
            &d,
            model.basis(),
            &model.schedule()[0].hamiltonian,
            model.space(),
            1.0,
        )
        .unwrap();
        // Direct: J_10 = 2 Im(conj(ψ_1) H_10 ψ_0) with scalars ψ_n.
        let a0 = psi.amplitudes()[0];
        let a1 = psi.amplitudes()[1];
        let h10 = model.schedule()[0].hamiltonian.entry(1, 0);
        let want = 2.0 * (a1.conj() * h10 * a0).im;
        assert_abs_diff_eq!(j[(1, 0)], want, epsilon = 1e-14);
    }

    #[test]
    fn row_sums_match_weight_derivatives_random_model() {
        // Σ_n J_mn = dw_m/dt, centered difference with step 1e-6.
        let config = RandomModelConfig {
            dims: vec![(3, 2)],
            ..RandomModelConfig::default()
        };
        let model = random_model(23, 0, &config).unwrap();
        let eval = RateEvaluator::new(&model).unwrap();
        let h = 1e-6;
        for &t in &[0.5, 2.0, 6.5] {
            let pair = eval.rate_pair_at(t).unwrap();
            let wp = eval.weights_at(t + h).unwrap();
            let wm = eval.weights_at(t - h).unwrap();
            for m in 0..model.n_branches() {
                let row_sum: f64 = pair.current.row(m).iter().sum();
                let deriv = (wp[m] - wm[m]) / (2.0 * h);
                assert_abs_diff_eq!(row_sum, deriv, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn antisymmetry_and_detailed_flow_on_random_models() {
        for k in 0..5 {
            let model = random_model(37, k, &RandomModelConfig::default()).unwrap();
            let eval = RateEvaluator::new(&model).unwrap();
            for &t in &[0.3, 3.3, 8.1] {
                let pair = eval.rate_pair_at(t).unwrap();
                let n = model.n_branches();
                let scale = pair.current.iter().map(|x| x.abs()).fold(0.0, f64::max);
                for m in 0..n {
                    assert_eq!(pair.current[(m, m)], 0.0);
                    assert_eq!(pair.rates[(m, m)], 0.0);
                    for l in 0..n {
                        assert!(pair.rates[(m, l)] >= 0.0);
                        assert!(
                            (pair.current[(m, l)] + pair.current[(l, m)]).abs()
                                <= 1e-10 * scale.max(1.0)
                        );
                        // At most one direction of a pair carries rate.
                        let fwd = pair.rates[(m, l)] * pair.weights[l];
                        let bwd = pair.rates[(l, m)] * pair.weights[m];
                        assert!(fwd.min(bwd) <= 1e-10 * scale.max(1.0));
                        // Detailed flow identity where both weights are live.
                        if pair.weights[l] > EPSILON_W && pair.weights[m] > EPSILON_W {
                            assert_abs_diff_eq!(
                                fwd - bwd,
                                pair.current[(m, l)],
                                epsilon = 1e-12 * scale.max(1.0)
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn scaling_the_hamiltonian_scales_current_and_rates() {
        // λ = 4 is a power of two, so the scaling is bitwise exact.
        let m1 = built_in_rabi(1.0).unwrap();
        let m4 = built_in_rabi(4.0).unwrap();
        let e1 = RateEvaluator::new(&m1).unwrap();
        let e4 = RateEvaluator::new(&m4).unwrap();
        // Compare at t and t/4: same phase ωt, so identical weights and
        // branch vectors; H scales by 4.
        let t = 0.9;
        let p1 = e1.rate_pair_at(t).unwrap();
        let p4 = e4.rate_pair_at(t / 4.0).unwrap();
        for (a, b) in p1.current.iter().zip(p4.current.iter()) {
            assert_abs_diff_eq!(4.0 * a, *b, epsilon = 1e-12);
        }
        for (a, b) in p1.rates.iter().zip(p4.rates.iter()) {
            assert_abs_diff_eq!(4.0 * a, *b, epsilon = 1e-10);
        }
    }

    #[test]
    fn raw_convention_keeps_signed_rates() {
        let mut j = DMatrix::zeros(2, 2);
        j[(1, 0)] = 0.5;
        j[(0, 1)] = -0.5;
        let t = rate_matrix_with(&j, &[0.5, 0.5], EPSILON_W, RateConvention::Raw).unwrap();
        assert_eq!(t[(1, 0)], 1.0);
        assert_eq!(t[(0, 1)], -1.0);
    }
}
