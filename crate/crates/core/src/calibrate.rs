//! Levenberg-Marquardt estimation of the base parameters.
//!
//! The solver works in base coordinates `dX_b`; every evaluation rebuilds the
//! full variation vector with [`remap_base_to_full`] and evaluates the stacked
//! plane residual, whose ideal value is zero at every contact posture.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::identifiability::{remap_base_to_full, BaseParameterization};
use crate::params::ParameterVector;
use crate::residual::{residual_jacobian, stack_residuals, Dataset, ROWS_PER_POSTURE};

/// Improvement factors are capped here.
pub const IMPROVEMENT_CAP: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub max_iterations: usize,
    pub initial_damping: f64,
    /// Damping multiplier on a rejected step; divisor on an accepted one.
    pub damping_factor: f64,
    pub cost_rel_tol: f64,
    pub gradient_tol: f64,
    /// Optional per-component weights for `(z, roll, pitch)`.
    pub component_weights: Option<[f64; 3]>,
    pub ill_conditioned_threshold: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            initial_damping: 1e-3,
            damping_factor: 10.0,
            cost_rel_tol: 1e-12,
            gradient_tol: 1e-10,
            component_weights: None,
            ill_conditioned_threshold: 1e12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Gradient,
    CostDecrease,
    ZeroCost,
    MaxIterations,
    /// Damping grew past any useful value without an accepted step.
    DampingOverflow,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentStats {
    pub mean: f64,
    pub abs_mean: f64,
    pub std: f64,
    pub rms: f64,
}

impl ComponentStats {
    fn from_values(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let abs_mean = v.iter().map(|x| x.abs()).sum::<f64>() / n;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let rms = (v.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
        Self {
            mean,
            abs_mean,
            std: var.sqrt(),
            rms,
        }
    }
}

/// Per-component statistics of a stacked residual.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualStats {
    pub z: ComponentStats,
    pub roll: ComponentStats,
    pub pitch: ComponentStats,
}

impl ResidualStats {
    pub fn from_stacked(r: &DVector<f64>) -> Self {
        let comp = |c: usize| -> Vec<f64> { r.iter().skip(c).step_by(ROWS_PER_POSTURE).cloned().collect() };
        Self {
            z: ComponentStats::from_values(&comp(0)),
            roll: ComponentStats::from_values(&comp(1)),
            pitch: ComponentStats::from_values(&comp(2)),
        }
    }

    pub fn components(&self) -> [ComponentStats; 3] {
        [self.z, self.roll, self.pitch]
    }

    pub fn rms_total(&self) -> f64 {
        let s: f64 = self.components().iter().map(|c| c.rms * c.rms).sum();
        (s / 3.0).sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct CalibrationResult {
    pub dxb_hat: Vec<f64>,
    pub base_labels: Vec<String>,
    pub full_params: ParameterVector,
    pub iterations: usize,
    pub initial_cost: f64,
    /// `0.5 * |Y_hat|^2` at the estimate.
    pub final_cost: f64,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_trace: Vec<f64>,
    pub stop_reason: StopReason,
    pub residuals_before: DVector<f64>,
    pub residuals_after: DVector<f64>,
    pub stats_before: ResidualStats,
    pub stats_after: ResidualStats,
    /// `sigma^2 (J^T J)^-1`, absent when it cannot be formed.
    pub covariance: Option<DMatrix<f64>>,
    pub condition_number: f64,
    pub warnings: Vec<String>,
}

impl CalibrationResult {
    /// Standard deviations from the covariance diagonal.
    pub fn standard_deviations(&self) -> Option<Vec<f64>> {
        self.covariance
            .as_ref()
            .map(|c| (0..c.nrows()).map(|i| c[(i, i)].max(0.0).sqrt()).collect())
    }
}

struct Problem<'a> {
    ds: &'a Dataset,
    base: &'a BaseParameterization,
    columns: Vec<usize>,
    weights: Option<DVector<f64>>,
}

impl Problem<'_> {
    fn full(&self, x: &DVector<f64>) -> Result<ParameterVector> {
        remap_base_to_full(self.base, x.as_slice())
    }

    fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut r = stack_residuals(self.ds, &self.full(x)?)?;
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("stacked residual".into()));
        }
        if let Some(w) = &self.weights {
            r.component_mul_assign(w);
        }
        Ok(r)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut j = residual_jacobian(self.ds, &self.full(x)?, &self.columns)?;
        if let Some(w) = &self.weights {
            for (i, mut row) in j.row_iter_mut().enumerate() {
                row *= w[i];
            }
        }
        Ok(j)
    }
}

fn condition_number(j: &DMatrix<f64>) -> f64 {
    let sv = j.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Estimates the base parameters from a contact dataset, starting from the
/// nominal model.
pub fn solve(
    ds: &Dataset,
    base: &BaseParameterization,
    options: &SolveOptions,
) -> Result<CalibrationResult> {
    let n_b = base.n_base();
    if base.n_joints != ds.chain.n_joints() {
        return invalid("base parameterization was built for another chain");
    }
    if ds.rows() < n_b {
        return invalid(format!(
            "{} residual rows cannot determine {n_b} base parameters",
            ds.rows()
        ));
    }
    let weights = match options.component_weights {
        Some(w) if w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) => {
            return invalid("component weights must be positive")
        }
        Some(w) => Some(DVector::from_fn(ds.rows(), |i, _| w[i % ROWS_PER_POSTURE])),
        None => None,
    };
    let problem = Problem {
        ds,
        base,
        columns: base.independent_indices(),
        weights,
    };

    let mut x = DVector::zeros(n_b);
    let residuals_before = stack_residuals(ds, &problem.full(&x)?)?;
    let mut r = problem.residual(&x)?;
    let mut cost = 0.5 * r.norm_squared();
    let initial_cost = cost;
    let mut cost_trace = vec![cost];
    let mut jac = problem.jacobian(&x)?;
    let mut lambda = options.initial_damping;
    let mut iterations = 0;

    let stop_reason = 'outer: loop {
        if cost == 0.0 {
            break StopReason::ZeroCost;
        }
        let g = jac.tr_mul(&r);
        if g.amax() < options.gradient_tol {
            break StopReason::Gradient;
        }
        if iterations >= options.max_iterations {
            break StopReason::MaxIterations;
        }
        iterations += 1;
        let jtj = jac.tr_mul(&jac);
        let diag_floor = 1e-12 * jtj.diagonal().amax().max(f64::MIN_POSITIVE);
        loop {
            let mut h = jtj.clone();
            for i in 0..n_b {
                h[(i, i)] += lambda * jtj[(i, i)].max(diag_floor);
            }
            let step = h.cholesky().map(|c| c.solve(&(-&g)));
            let accepted = match step {
                Some(dx) => {
                    let x_new = &x + &dx;
                    match problem.residual(&x_new) {
                        Ok(r_new) => {
                            let cost_new = 0.5 * r_new.norm_squared();
                            (cost_new < cost).then_some((x_new, r_new, cost_new))
                        }
                        Err(Error::NonFinite(m)) => return Err(Error::NonFinite(m)),
                        // a trial step through gimbal lock is simply rejected
                        Err(Error::DegenerateOrientation { .. }) => None,
                        Err(e) => return Err(e),
                    }
                }
                None => None,
            };
            match accepted {
                Some((x_new, r_new, cost_new)) => {
                    let rel = (cost - cost_new) / cost;
                    x = x_new;
                    r = r_new;
                    cost = cost_new;
                    cost_trace.push(cost);
                    lambda /= options.damping_factor;
                    jac = problem.jacobian(&x)?;
                    if rel < options.cost_rel_tol {
                        break 'outer StopReason::CostDecrease;
                    }
                    break;
                }
                None => {
                    lambda *= options.damping_factor;
                    if lambda > 1e16 {
                        break 'outer StopReason::DampingOverflow;
                    }
                }
            }
        }
    };

    let full_params = problem.full(&x)?;
    let residuals_after = stack_residuals(ds, &full_params)?;
    let final_cost = 0.5 * residuals_after.norm_squared();
    let cond = condition_number(&jac);
    let mut warnings = Vec::new();
    if cond > options.ill_conditioned_threshold {
        warnings.push(format!("ill-conditioned Jacobian at solution (condition {cond:e})"));
    }
    let dof = ds.rows() as f64 - n_b as f64;
    let covariance = if dof > 0.0 {
        let sigma2 = 2.0 * (0.5 * r.norm_squared()) / dof;
        jac.tr_mul(&jac).cholesky().map(|c| c.inverse() * sigma2)
    } else {
        None
    };
    if covariance.is_none() {
        warnings.push("covariance unavailable".into());
    }

    Ok(CalibrationResult {
        dxb_hat: x.iter().cloned().collect(),
        base_labels: base.independent_labels(),
        full_params,
        iterations,
        initial_cost,
        final_cost,
        cost_trace,
        stop_reason,
        stats_before: ResidualStats::from_stacked(&residuals_before),
        stats_after: ResidualStats::from_stacked(&residuals_after),
        residuals_before,
        residuals_after,
        covariance,
        condition_number: cond,
        warnings,
    })
}

/// Nominal-over-calibrated ratio of held-out absolute mean residuals.
pub fn improvement_ratio(before: f64, after: f64) -> f64 {
    if before == 0.0 && after == 0.0 {
        1.0
    } else if after == 0.0 {
        IMPROVEMENT_CAP
    } else {
        (before / after).min(IMPROVEMENT_CAP)
    }
}

#[derive(Clone, Debug)]
pub struct CrossValidation {
    pub calibration: CalibrationResult,
    pub test_before: ResidualStats,
    pub test_after: ResidualStats,
    /// Per-component `(z, roll, pitch)` improvement of the held-out abs-mean.
    pub improvement: [f64; 3],
    /// Mean of the per-component improvements.
    pub improvement_factor: f64,
}

/// Calibrates on `train` and compares held-out residuals on `test` under the
/// nominal and the calibrated model. Posture sets are expected to be disjoint;
/// that is not enforced here.
pub fn cross_validate(
    train: &Dataset,
    test: &Dataset,
    base: &BaseParameterization,
    options: &SolveOptions,
) -> Result<CrossValidation> {
    if test.chain.n_joints() != train.chain.n_joints() {
        return invalid("train and test datasets use different chains");
    }
    let calibration = solve(train, base, options)?;
    let nominal = ParameterVector::zeros(test.chain.n_joints());
    let test_before = ResidualStats::from_stacked(&stack_residuals(test, &nominal)?);
    let test_after = ResidualStats::from_stacked(&stack_residuals(test, &calibration.full_params)?);
    let b = test_before.components();
    let a = test_after.components();
    let improvement = [0, 1, 2].map(|c| improvement_ratio(b[c].abs_mean, a[c].abs_mean));
    let improvement_factor = improvement.iter().sum::<f64>() / 3.0;
    Ok(CrossValidation {
        calibration,
        test_before,
        test_after,
        improvement,
        improvement_factor,
    })
}
