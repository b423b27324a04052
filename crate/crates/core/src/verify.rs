//! Independent deterministic oracle for the equivariance claim.
//!
//! Integrates the classical master equation implied by the jump rates,
//! `dp_m/dt = Σ_n (T_mn p_n - T_nm p_m)`, and compares the result to the
//! Born weights on a grid. The integrator works on distributions, not
//! trajectories, and shares only state evolution and rate evaluation with
//! the Monte Carlo path, so the two routes fail independently.
//!
//! Integration is fixed-step classical RK4 with a deterministic local
//! halving rule: a step whose left-endpoint stiffness `λ·h` exceeds
//! [`IntegrationParams::refine_cap`] is split in two, recursively. Rates
//! blow up like `tan` where a source weight vanishes, and a fixed step
//! cannot cross such a node stably; the halving bottoms out against the
//! zero-weight rate cutoff, which bounds `λ` by roughly
//! `2‖H‖/√epsilon_w`. The rule depends only on evaluated rates, so
//! reports stay reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::rates::{RateConvention, RateEvaluator, RatePair};

/// Knobs of the master-equation integrator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IntegrationParams {
    /// Nominal RK4 substeps per unit time between grid points.
    pub steps_per_unit_time: f64,
    /// Local halving threshold on `λ·h` (left-endpoint stiffness).
    pub refine_cap: f64,
    /// Maximum local halvings of one nominal step.
    pub max_refine_depth: u32,
    /// Negative undershoot below which entries are clamped to zero and
    /// the distribution renormalized; larger undershoot is an error.
    pub undershoot_limit: f64,
}

impl Default for IntegrationParams {
    fn default() -> Self {
        Self {
            steps_per_unit_time: 2000.0,
            refine_cap: 0.5,
            max_refine_depth: 20,
            undershoot_limit: 1e-10,
        }
    }
}

/// Outcome of one equivariance check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivarianceReport {
    pub model_id: String,
    pub times: Vec<f64>,
    /// Master-equation distribution per grid time.
    pub distributions: Vec<Vec<f64>>,
    /// Born weights per grid time.
    pub born_weights: Vec<Vec<f64>>,
    /// `max_m |p_m(t) - w_m(t)|` per grid time.
    pub deviations: Vec<f64>,
    pub max_abs_deviation: f64,
    pub tolerance: f64,
    /// `max_abs_deviation <= tolerance`.
    pub pass: bool,
    pub parameters: IntegrationParams,
}

impl EquivarianceReport {
    /// Writes the `(time, branch, p, w, deviation)` table as CSV.
    pub fn write_csv<W: std::io::Write>(&self, labels: &[String], out: W) -> std::io::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["t", "branch", "p", "w", "deviation"])?;
        for (k, &t) in self.times.iter().enumerate() {
            for (b, label) in labels.iter().enumerate() {
                let p = self.distributions[k][b];
                let w = self.born_weights[k][b];
                writer.write_record(&[
                    t.to_string(),
                    label.clone(),
                    p.to_string(),
                    w.to_string(),
                    (p - w).abs().to_string(),
                ])?;
            }
        }
        writer.flush()
    }
}

fn max_exit_rate(pair: &RatePair) -> f64 {
    let n = pair.weights.len();
    (0..n)
        .map(|source| pair.rates.column(source).iter().map(|r| r.abs()).sum())
        .fold(0.0, f64::max)
}

/// `dp_m = Σ_n (T_mn p_n - T_nm p_m)`, assembled from the rate matrix.
fn master_rhs(pair: &RatePair, p: &[f64], out: &mut [f64]) {
    let n = p.len();
    for m in 0..n {
        let mut acc = 0.0;
        for source in 0..n {
            if source == m {
                continue;
            }
            acc += pair.rates[(m, source)] * p[source] - pair.rates[(source, m)] * p[m];
        }
        out[m] = acc;
    }
}

struct MasterIntegrator<'a, 'm> {
    evaluator: &'a RateEvaluator<'m>,
    params: IntegrationParams,
    // scratch for RK4 stages
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
}

impl<'a, 'm> MasterIntegrator<'a, 'm> {
    fn new(evaluator: &'a RateEvaluator<'m>, params: IntegrationParams, n: usize) -> Self {
        Self {
            evaluator,
            params,
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            stage: vec![0.0; n],
        }
    }

    /// One RK4 step across `[t0, t1]` inside `segment`, with deterministic
    /// local halving. Returns the rate pair at `t1` for reuse.
    #[allow(clippy::needless_range_loop)]
    fn advance(
        &mut self,
        segment: usize,
        t0: f64,
        t1: f64,
        depth: u32,
        pair0: &RatePair,
        p: &mut [f64],
    ) -> Result<RatePair> {
        let h = t1 - t0;
        if max_exit_rate(pair0) * h > self.params.refine_cap
            && depth < self.params.max_refine_depth
        {
            let mid = 0.5 * (t0 + t1);
            let pair_mid = self.advance(segment, t0, mid, depth + 1, pair0, p)?;
            return self.advance(segment, mid, t1, depth + 1, &pair_mid, p);
        }
        let pair_mid = self
            .evaluator
            .rate_pair_in_segment(segment, 0.5 * (t0 + t1))?;
        let pair_end = self.evaluator.rate_pair_in_segment(segment, t1)?;
        let n = p.len();
        master_rhs(pair0, p, &mut self.k1);
        for m in 0..n {
            self.stage[m] = p[m] + 0.5 * h * self.k1[m];
        }
        master_rhs(&pair_mid, &self.stage, &mut self.k2);
        for m in 0..n {
            self.stage[m] = p[m] + 0.5 * h * self.k2[m];
        }
        master_rhs(&pair_mid, &self.stage, &mut self.k3);
        for m in 0..n {
            self.stage[m] = p[m] + h * self.k3[m];
        }
        master_rhs(&pair_end, &self.stage, &mut self.k4);
        for m in 0..n {
            p[m] += h / 6.0 * (self.k1[m] + 2.0 * self.k2[m] + 2.0 * self.k3[m] + self.k4[m]);
        }
        // Clamp tiny negative undershoot; anything larger means the step
        // could not resolve the dynamics.
        let mut undershoot = 0.0_f64;
        for &x in p.iter() {
            if x < 0.0 {
                undershoot = undershoot.max(-x);
            }
        }
        if undershoot > 0.0 {
            if undershoot >= self.params.undershoot_limit {
                return Err(Error::IntegrationUnstable {
                    t: t1,
                    undershoot,
                    limit: self.params.undershoot_limit,
                });
            }
            for x in p.iter_mut() {
                if *x < 0.0 {
                    *x = 0.0;
                }
            }
            let total: f64 = p.iter().sum();
            for x in p.iter_mut() {
                *x /= total;
            }
        }
        Ok(pair_end)
    }

    /// Integrates across `[a, b]` (within one segment) with nominal steps.
    fn integrate_span(&mut self, segment: usize, a: f64, b: f64, p: &mut [f64]) -> Result<()> {
        if b <= a {
            return Ok(());
        }
        let n_steps = ((b - a) * self.params.steps_per_unit_time).ceil().max(1.0) as usize;
        let h = (b - a) / n_steps as f64;
        let mut pair = self.evaluator.rate_pair_in_segment(segment, a)?;
        for k in 0..n_steps {
            let t0 = a + k as f64 * h;
            let t1 = if k + 1 == n_steps {
                b
            } else {
                a + (k + 1) as f64 * h
            };
            pair = self.advance(segment, t0, t1, 0, &pair, p)?;
        }
        Ok(())
    }
}

fn validate_grid(model: &Model, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter {
            name: "grid",
            reason: "grid must contain at least one time".into(),
        });
    }
    for w in grid.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidParameter {
                name: "grid",
                reason: "grid times must be strictly increasing".into(),
            });
        }
    }
    if grid[0] < 0.0 || *grid.last().unwrap() > model.t_max() {
        return Err(Error::TimeOutOfRange {
            t: if grid[0] < 0.0 {
                grid[0]
            } else {
                *grid.last().unwrap()
            },
            t_max: model.t_max(),
        });
    }
    Ok(())
}

/// Integrates the master equation from `p0` at `t = 0` and reports the
/// distribution at each grid time. Uses default parameters and the
/// rectified rate convention.
pub fn integrate_master_equation(
    model: &Model,
    p0: &[f64],
    grid: &[f64],
) -> Result<Vec<Vec<f64>>> {
    integrate_master_equation_with(
        model,
        p0,
        grid,
        &IntegrationParams::default(),
        RateConvention::Rectified,
    )
}

/// Full-control variant of [`integrate_master_equation`]. The `Raw`
/// convention drops the rectification and is expected to fail.
pub fn integrate_master_equation_with(
    model: &Model,
    p0: &[f64],
    grid: &[f64],
    params: &IntegrationParams,
    convention: RateConvention,
) -> Result<Vec<Vec<f64>>> {
    if p0.len() != model.n_branches() {
        return Err(Error::DimensionMismatch {
            context: "integrate_master_equation",
            expected: model.n_branches(),
            got: p0.len(),
        });
    }
    for (index, &x) in p0.iter().enumerate() {
        if x < 0.0 {
            return Err(Error::NegativeWeight { index, weight: x });
        }
    }
    let total: f64 = p0.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter {
            name: "p0",
            reason: format!("distribution sums to {total}, expected 1"),
        });
    }
    validate_grid(model, grid)?;

    let evaluator = RateEvaluator::with_convention(model, convention)?;
    let mut integrator = MasterIntegrator::new(&evaluator, *params, p0.len());
    let mut p: Vec<f64> = p0.iter().map(|x| x / total).collect();
    let mut outputs = Vec::with_capacity(grid.len());
    let mut t = 0.0;
    for &target in grid {
        // Split the span at segment boundaries so each RK4 stage uses the
        // Hamiltonian that is actually in force.
        while t < target {
            let segment = model.segment_index_at(t)?;
            let stop = model.schedule()[segment].t_end.min(target);
            integrator.integrate_span(segment, t, stop, &mut p)?;
            t = stop;
        }
        outputs.push(p.clone());
    }
    Ok(outputs)
}

/// Checks the equivariance claim: starting the master equation from the
/// Born weights at `t = 0`, the distribution must track the Born weights
/// at every grid time.
pub fn equivariance_report(
    model: &Model,
    grid: &[f64],
    tolerance: f64,
    model_id: &str,
) -> Result<EquivarianceReport> {
    equivariance_report_with(
        model,
        grid,
        tolerance,
        model_id,
        &IntegrationParams::default(),
        RateConvention::Rectified,
    )
}

/// Full-control variant of [`equivariance_report`].
pub fn equivariance_report_with(
    model: &Model,
    grid: &[f64],
    tolerance: f64,
    model_id: &str,
    params: &IntegrationParams,
    convention: RateConvention,
) -> Result<EquivarianceReport> {
    validate_grid(model, grid)?;
    let evaluator = RateEvaluator::new(model)?;
    let p0 = evaluator.weights_at(0.0)?;
    let distributions = integrate_master_equation_with(model, &p0, grid, params, convention)?;
    let born_weights: Vec<Vec<f64>> = grid
        .iter()
        .map(|&t| evaluator.weights_at(t))
        .collect::<Result<_>>()?;
    let deviations: Vec<f64> = distributions
        .iter()
        .zip(&born_weights)
        .map(|(p, w)| {
            p.iter()
                .zip(w)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let max_abs_deviation = deviations.iter().cloned().fold(0.0, f64::max);
    Ok(EquivarianceReport {
        model_id: model_id.to_string(),
        times: grid.to_vec(),
        distributions,
        born_weights,
        deviations,
        max_abs_deviation,
        tolerance,
        pass: max_abs_deviation <= tolerance,
        parameters: *params,
    })
}

/// Uniform grid of `n_points` times covering `[0, t_max]`.
pub fn uniform_grid(t_max: f64, n_points: usize) -> Vec<f64> {
    assert!(n_points >= 2, "grid needs at least two points");
    (0..n_points)
        .map(|k| t_max * k as f64 / (n_points - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{built_in_diagonal, built_in_measurement, built_in_rabi};
    use crate::random::{random_model, RandomModelConfig};
    use approx::assert_abs_diff_eq;
    use num_complex::Complex64;
    use std::f64::consts::FRAC_PI_2;

    fn re(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn zero_rates_freeze_the_distribution() {
        let model = built_in_diagonal().unwrap();
        let grid = uniform_grid(model.t_max(), 11);
        let p0 = vec![0.3, 0.7];
        let out = integrate_master_equation(&model, &p0, &grid).unwrap();
        for p in out {
            assert_eq!(p, p0);
        }
    }

    #[test]
    fn rabi_distribution_follows_closed_form() {
        let model = built_in_rabi(1.0).unwrap();
        let grid = uniform_grid(FRAC_PI_2, 26);
        let out = integrate_master_equation(&model, &[1.0, 0.0], &grid).unwrap();
        for (p, &t) in out.iter().zip(&grid) {
            assert_abs_diff_eq!(p[1], t.sin().powi(2), epsilon = 1e-6);
        }
    }

    #[test]
    fn measurement_distribution_reaches_born_weights() {
        let model = built_in_measurement(&[re(0.6), re(0.8)], 1.0).unwrap();
        let grid = uniform_grid(model.t_max(), 21);
        let p0 = vec![1.0, 0.0, 0.0];
        let out = integrate_master_equation(&model, &p0, &grid).unwrap();
        let last = out.last().unwrap();
        assert_abs_diff_eq!(last[0], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(last[1], 0.36, epsilon = 1e-6);
        assert_abs_diff_eq!(last[2], 0.64, epsilon = 1e-6);
    }

    #[test]
    fn probability_is_conserved() {
        let model = built_in_rabi(1.0).unwrap();
        let grid = uniform_grid(model.t_max(), 50);
        let out = integrate_master_equation(&model, &[0.5, 0.5], &grid).unwrap();
        for p in out {
            let total: f64 = p.iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn rabi_equivariance_passes_at_tight_tolerance() {
        let model = built_in_rabi(1.0).unwrap();
        let grid = uniform_grid(model.t_max(), 101);
        let report = equivariance_report(&model, &grid, 1e-6, "rabi").unwrap();
        assert!(report.pass, "max deviation {}", report.max_abs_deviation);
        assert_eq!(report.pass, report.max_abs_deviation <= report.tolerance);
    }

    #[test]
    fn random_models_pass_equivariance() {
        use rayon::prelude::*;
        let config = RandomModelConfig::default().with_max_total_dim(8);
        let reports: Vec<EquivarianceReport> = (0..6u64)
            .into_par_iter()
            .map(|k| {
                let model = random_model(101, k, &config).unwrap();
                let grid = uniform_grid(model.t_max(), 41);
                equivariance_report(&model, &grid, 1e-5, &format!("fuzz-{k}")).unwrap()
            })
            .collect();
        for r in reports {
            assert!(r.pass, "{} deviated by {}", r.model_id, r.max_abs_deviation);
        }
    }

    #[test]
    fn dropping_the_rectification_is_detected() {
        // Raw J/w rates double the net flow, so either the distribution
        // goes negative (instability error) or it visibly departs from
        // the Born weights.
        let model = built_in_rabi(1.0).unwrap();
        let grid = uniform_grid(model.t_max(), 51);
        match equivariance_report_with(
            &model,
            &grid,
            1e-5,
            "rabi-raw",
            &IntegrationParams::default(),
            RateConvention::Raw,
        ) {
            Err(Error::IntegrationUnstable { .. }) => {}
            Ok(report) => assert!(!report.pass, "raw rates must not pass"),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn integrator_is_fourth_order_on_smooth_intervals() {
        // On [0, 1.2] the rabi rates are smooth; halving the step must
        // shrink the deviation by at least 8x.
        let model = built_in_rabi(1.0).unwrap();
        let grid = uniform_grid(1.2, 13);
        let run = |steps: f64| {
            let params = IntegrationParams {
                steps_per_unit_time: steps,
                ..IntegrationParams::default()
            };
            equivariance_report_with(
                &model,
                &grid,
                1.0,
                "order-check",
                &params,
                RateConvention::Rectified,
            )
            .unwrap()
            .max_abs_deviation
        };
        let coarse = run(50.0);
        let fine = run(100.0);
        assert!(
            coarse / fine >= 8.0,
            "order check: coarse {coarse:.3e} / fine {fine:.3e} = {:.2}",
            coarse / fine
        );
    }

    #[test]
    fn master_flow_equals_current_row_sums_at_born_point() {
        // Σ_n (T_mn w_n - T_nm w_m) = Σ_n J_mn when p = w.
        let config = RandomModelConfig::default();
        for k in 0..5 {
            let model = random_model(55, k, &config).unwrap();
            let eval = RateEvaluator::new(&model).unwrap();
            for &t in &[0.4, 2.7, 7.9] {
                let pair = eval.rate_pair_at(t).unwrap();
                let n = model.n_branches();
                let scale = pair
                    .current
                    .iter()
                    .map(|x| x.abs())
                    .fold(1.0_f64, f64::max);
                for m in 0..n {
                    let flow: f64 = (0..n)
                        .map(|s| {
                            pair.rates[(m, s)] * pair.weights[s]
                                - pair.rates[(s, m)] * pair.weights[m]
                        })
                        .sum();
                    let row_sum: f64 = pair.current.row(m).iter().sum();
                    assert_abs_diff_eq!(flow, row_sum, epsilon = 1e-10 * scale);
                }
            }
        }
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let model = built_in_rabi(1.0).unwrap();
        assert!(integrate_master_equation(&model, &[0.5, 0.6], &[0.0, 1.0]).is_err());
        assert!(integrate_master_equation(&model, &[-0.1, 1.1], &[0.0, 1.0]).is_err());
        assert!(integrate_master_equation(&model, &[1.0, 0.0], &[1.0, 0.5]).is_err());
        assert!(integrate_master_equation(&model, &[1.0, 0.0], &[0.0, 100.0]).is_err());
    }

    #[test]
    fn report_csv_has_expected_shape() {
        let model = built_in_rabi(1.0).unwrap();
        let grid = uniform_grid(model.t_max(), 5);
        let report = equivariance_report(&model, &grid, 1e-6, "rabi").unwrap();
        let mut buf = Vec::new();
        report
            .write_csv(model.labels(), &mut buf)
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,branch,p,w,deviation");
        assert_eq!(text.lines().count(), 1 + 5 * 2);
    }
}
