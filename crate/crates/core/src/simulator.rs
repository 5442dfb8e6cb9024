//! Synthetic scenarios with a known ground truth.
//!
//! Postures are generated so that the contact constraint holds exactly under
//! the TRUE model (nominal chain plus injected variations); datasets still
//! carry the nominal plane, so calibrating from zero has to find the
//! injected variations again.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calibrate::CalibrationResult;
use crate::error::{invalid, Result};
use crate::identifiability::BaseParameterization;
use crate::kinematics::{JointConfig, KinematicChain};
use crate::params::{is_length_parameter, parameter_labels, ParameterVector, PlaneParams};
use crate::posegen::{build_pool_under, PoolSpec, PosturePool, TargetSpec};
use crate::residual::Dataset;

/// Projection tolerance used for scenario postures.
pub const SCENARIO_TOLERANCE: f64 = 1e-12;

/// Half-widths of the uniform draw: 6 mm for lengths, 1.5 deg for angles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrawRanges {
    pub translation: f64,
    pub rotation: f64,
}

impl Default for DrawRanges {
    fn default() -> Self {
        Self {
            translation: 0.006,
            rotation: 1.5f64.to_radians(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub true_params: ParameterVector,
    pub ranges: DrawRanges,
    pub seed: u64,
}

impl GroundTruth {
    pub fn zero(n_joints: usize) -> Self {
        Self {
            true_params: ParameterVector::zeros(n_joints),
            ranges: DrawRanges::default(),
            seed: 0,
        }
    }

    /// Uniform draw over every free entry of `template`.
    pub fn draw(template: &ParameterVector, ranges: DrawRanges, seed: u64) -> Result<Self> {
        let idx = template.free_indices();
        Self::draw_at(template.clone(), &idx, ranges, seed)
    }

    /// Uniform draw over the base parameters only; every other entry is zero,
    /// so the truth lies exactly in the span the calibration can recover.
    pub fn draw_base(base: &BaseParameterization, ranges: DrawRanges, seed: u64) -> Result<Self> {
        Self::draw_at(ParameterVector::zeros(base.n_joints), &base.independent_indices(), ranges, seed)
    }

    fn draw_at(mut p: ParameterVector, idx: &[usize], ranges: DrawRanges, seed: u64) -> Result<Self> {
        if !(ranges.translation >= 0.0 && ranges.rotation >= 0.0) {
            return invalid("draw ranges must be non-negative");
        }
        let n = p.n_joints();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &i in idx {
            let h = if is_length_parameter(n, i) { ranges.translation } else { ranges.rotation };
            let v = if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 };
            p.set(i, v)?;
        }
        Ok(Self {
            true_params: p,
            ranges,
            seed,
        })
    }

    /// True when every entry lies within its draw range.
    pub fn within_ranges(&self) -> bool {
        let n = self.true_params.n_joints();
        self.true_params.values().iter().enumerate().all(|(i, v)| {
            let h = if is_length_parameter(n, i) { self.ranges.translation } else { self.ranges.rotation };
            v.abs() <= h
        })
    }
}

/// Encoder and measurement noise, angles in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub encoder_sigma: f64,
    pub residual_sigma_z: f64,
    pub residual_sigma_ang: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            encoder_sigma: 0.05f64.to_radians(),
            residual_sigma_z: 0.0,
            residual_sigma_ang: 0.0,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            encoder_sigma: 0.0,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let s = [self.encoder_sigma, self.residual_sigma_z, self.residual_sigma_ang];
        if s.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return invalid("noise sigmas must be finite and non-negative");
        }
        Ok(())
    }
}

/// Generates a contact pool under the true model and wraps it as a dataset
/// against the nominal plane. Projection runs at `SCENARIO_TOLERANCE` unless
/// `pspec` asks for something tighter.
pub fn make_scenario(
    chain: Arc<KinematicChain>,
    plane: &PlaneParams,
    gt: &GroundTruth,
    tspec: &TargetSpec,
    pspec: &PoolSpec,
) -> Result<(Dataset, PosturePool)> {
    let mut spec = pspec.clone();
    spec.projection.tolerance = spec.projection.tolerance.min(SCENARIO_TOLERANCE);
    let pool = build_pool_under(&chain, plane, &gt.true_params, tspec, &spec, None)?;
    let ds = Dataset::with_ids(chain, *plane, pool.postures.clone(), pool.ids())?;
    Ok((ds, pool))
}

/// Adds Gaussian encoder noise to every joint value and, when requested,
/// Gaussian measurement noise on the residual components.
pub fn corrupt(ds: &Dataset, noise: &NoiseModel) -> Result<Dataset> {
    noise.validate()?;
    let mut out = ds.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    if noise.encoder_sigma > 0.0 {
        let d = Normal::new(0.0, noise.encoder_sigma).expect("sigma checked");
        for q in out.postures.iter_mut() {
            *q = JointConfig(q.iter().map(|v| v + d.sample(&mut rng)).collect());
        }
    }
    if noise.residual_sigma_z > 0.0 || noise.residual_sigma_ang > 0.0 {
        let mut m = ds.measurements.clone().unwrap_or_else(|| DVector::zeros(ds.rows()));
        for (i, v) in m.iter_mut().enumerate() {
            let sigma = if i % 3 == 0 { noise.residual_sigma_z } else { noise.residual_sigma_ang };
            if sigma > 0.0 {
                *v += Normal::new(0.0, sigma).expect("sigma checked").sample(&mut rng);
            }
        }
        out.measurements = Some(m);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelError {
    pub label: String,
    pub truth: f64,
    pub estimate: f64,
    pub error: f64,
    /// Covariance-predicted standard deviation, when available.
    pub std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// `max |dxb_hat - A gt|`.
    pub max_abs_error: f64,
    pub parameters: Vec<LabelError>,
}

impl RecoveryReport {
    /// Fraction of parameters whose error is within `k` predicted standard
    /// deviations; `None` without a covariance estimate.
    pub fn fraction_within(&self, k: f64) -> Option<f64> {
        let n = self.parameters.len();
        let mut inside = 0;
        for p in &self.parameters {
            if p.error.abs() <= k * p.std? {
                inside += 1;
            }
        }
        Some(inside as f64 / n.max(1) as f64)
    }
}

/// Compares an estimate with the ground truth in base coordinates, where the
/// answer is unique.
pub fn recovery_report(
    base: &BaseParameterization,
    gt: &GroundTruth,
    estimate: &CalibrationResult,
) -> Result<RecoveryReport> {
    let std = estimate.standard_deviations();
    recovery_from_estimate(base, gt, &estimate.base_labels, &estimate.dxb_hat, std.as_deref())
}

/// As [`recovery_report`], from the raw base estimate and its labels.
pub fn recovery_from_estimate(
    base: &BaseParameterization,
    gt: &GroundTruth,
    base_labels: &[String],
    dxb_hat: &[f64],
    std: Option<&[f64]>,
) -> Result<RecoveryReport> {
    if base_labels != base.independent_labels() || dxb_hat.len() != base.n_base() {
        return invalid("estimate was produced under a different base parameterization");
    }
    if std.is_some_and(|s| s.len() != dxb_hat.len()) {
        return invalid("one standard deviation per base parameter required");
    }
    let truth = base.base_coordinates(&gt.true_params)?;
    let labels = parameter_labels(base.n_joints);
    let parameters: Vec<LabelError> = base
        .independent_indices()
        .iter()
        .enumerate()
        .map(|(k, &idx)| LabelError {
            label: labels[idx].clone(),
            truth: truth[k],
            estimate: dxb_hat[k],
            error: dxb_hat[k] - truth[k],
            std: std.map(|s| s[k]),
        })
        .collect();
    let max_abs_error = parameters.iter().map(|p| p.error.abs()).fold(0.0, f64::max);
    Ok(RecoveryReport {
        max_abs_error,
        parameters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_respect_ranges_and_mask() {
        let template = ParameterVector::zeros(2);
        let gt = GroundTruth::draw(&template, DrawRanges::default(), 4).unwrap();
        assert!(gt.within_ranges());
        assert!(gt.true_params.values().iter().any(|v| *v != 0.0));
        let mut mask = vec![true; template.len()];
        mask[0] = false;
        let masked = ParameterVector::zeros(2).with_mask(mask).unwrap();
        let gt = GroundTruth::draw(&masked, DrawRanges::default(), 4).unwrap();
        assert_eq!(gt.true_params.get(0), 0.0);
        assert_eq!(GroundTruth::draw(&template, DrawRanges::default(), 4).unwrap().true_params,
                   GroundTruth::draw(&template, DrawRanges::default(), 4).unwrap().true_params);
    }

    #[test]
    fn negative_sigma_rejected() {
        let n = NoiseModel { encoder_sigma: -1.0, ..Default::default() };
        assert!(n.validate().is_err());
        assert!((NoiseModel::default().encoder_sigma - 0.05f64.to_radians()).abs() < 1e-18);
    }
}
