//! Parameter layout shared by every module.
//!
//! The full variation vector is `[dX_0 .. dX_{n+1}, dkappa]`: one 6-block per
//! placement (base, each joint, flange) followed by the six plane/contact
//! parameters `[z_c, phix_c, thetay_c, z_p, phix_p, thetay_p]`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kinematics::PLACEMENT_DIM;

pub const PLANE_DIM: usize = 6;

const PLACEMENT_COMPONENTS: [&str; 6] = ["px", "py", "pz", "phix", "phiy", "phiz"];
const PLANE_LABELS: [&str; 6] = [
    "contact.z",
    "contact.phix",
    "contact.thetay",
    "plane.z",
    "plane.phix",
    "plane.thetay",
];

/// Contact frame offset (relative to the flange) and plane frame pose
/// (relative to `R_0`). Yaw about the plane normal is not represented.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneParams {
    pub z_c: f64,
    pub phix_c: f64,
    pub thetay_c: f64,
    pub z_p: f64,
    pub phix_p: f64,
    pub thetay_p: f64,
}

impl PlaneParams {
    pub const ZERO: PlaneParams = PlaneParams {
        z_c: 0.0,
        phix_c: 0.0,
        thetay_c: 0.0,
        z_p: 0.0,
        phix_p: 0.0,
        thetay_p: 0.0,
    };

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            z_c: v[0],
            phix_c: v[1],
            thetay_c: v[2],
            z_p: v[3],
            phix_p: v[4],
            thetay_p: v[5],
        }
    }

    pub fn to_array(self) -> [f64; 6] {
        [
            self.z_c,
            self.phix_c,
            self.thetay_c,
            self.z_p,
            self.phix_p,
            self.thetay_p,
        ]
    }

    /// `kappa_0 + dkappa`.
    pub fn perturbed(&self, d: &[f64]) -> Self {
        let mut v = self.to_array();
        for (a, b) in v.iter_mut().zip(d) {
            *a += b;
        }
        Self::from_array(v)
    }

    /// Placement-style 6-vector of the contact frame in the flange frame.
    pub fn contact_params(&self) -> [f64; 6] {
        [0.0, 0.0, self.z_c, self.phix_c, self.thetay_c, 0.0]
    }

    /// Placement-style 6-vector of the plane frame in `R_0`.
    pub fn plane_params(&self) -> [f64; 6] {
        [0.0, 0.0, self.z_p, self.phix_p, self.thetay_p, 0.0]
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.to_array().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            invalid(format!("non-finite plane parameters {self:?}"))
        }
    }
}

/// Full variation vector `[dX, dkappa]` with a calibrate/freeze mask.
///
/// Frozen entries are always exactly zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    n_joints: usize,
    values: Vec<f64>,
    /// `true` where the entry is calibrated.
    mask: Vec<bool>,
}

impl ParameterVector {
    pub fn len_for(n_joints: usize) -> usize {
        (n_joints + 2) * PLACEMENT_DIM + PLANE_DIM
    }

    pub fn zeros(n_joints: usize) -> Self {
        let len = Self::len_for(n_joints);
        Self {
            n_joints,
            values: vec![0.0; len],
            mask: vec![true; len],
        }
    }

    pub fn from_values(n_joints: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != Self::len_for(n_joints) {
            return invalid(format!(
                "parameter vector for {n_joints} joints needs {} values, got {}",
                Self::len_for(n_joints),
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite parameter value");
        }
        let mask = vec![true; values.len()];
        Ok(Self {
            n_joints,
            values,
            mask,
        })
    }

    /// Applies a mask; frozen entries are zeroed.
    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.values.len() {
            return invalid(format!(
                "mask has {} entries, vector has {}",
                mask.len(),
                self.values.len()
            ));
        }
        for (v, &free) in self.values.iter_mut().zip(&mask) {
            if !free {
                *v = 0.0;
            }
        }
        self.mask = mask;
        Ok(self)
    }

    pub fn n_joints(&self) -> usize {
        self.n_joints
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_free(&self, i: usize) -> bool {
        self.mask.get(i).copied().unwrap_or(false)
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.mask[i]).collect()
    }

    /// Placement variations `dX`.
    pub fn dx(&self) -> &[f64] {
        &self.values[..(self.n_joints + 2) * PLACEMENT_DIM]
    }

    /// Plane variations `dkappa`.
    pub fn dplane(&self) -> &[f64] {
        &self.values[(self.n_joints + 2) * PLACEMENT_DIM..]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn set(&mut self, i: usize, v: f64) -> Result<()> {
        if i >= self.len() {
            return invalid(format!("parameter index {i} out of range"));
        }
        if !v.is_finite() {
            return invalid(format!("non-finite value for parameter {i}"));
        }
        if !self.mask[i] && v != 0.0 {
            return invalid(format!("parameter {i} is frozen"));
        }
        self.values[i] = v;
        Ok(())
    }

    /// Shifts entry `i` without mask or finiteness checks; used by finite differences.
    pub(crate) fn shifted(&self, i: usize, h: f64) -> Self {
        let mut p = self.clone();
        p.values[i] += h;
        p
    }

    /// Index of component `c` of placement block `b`.
    pub fn placement_index(b: usize, c: usize) -> usize {
        b * PLACEMENT_DIM + c
    }

    /// Index of plane entry `k` for a chain of `n_joints`.
    pub fn plane_index(n_joints: usize, k: usize) -> usize {
        (n_joints + 2) * PLACEMENT_DIM + k
    }
}

/// Human-readable labels for every entry of the full variation vector.
pub fn parameter_labels(n_joints: usize) -> Vec<String> {
    let mut labels = Vec::with_capacity(ParameterVector::len_for(n_joints));
    for b in 0..n_joints + 2 {
        let block = match b {
            0 => "base".to_string(),
            b if b <= n_joints => format!("j{b}"),
            _ => "flange".to_string(),
        };
        for c in PLACEMENT_COMPONENTS {
            labels.push(format!("{block}.{c}"));
        }
    }
    labels.extend(PLANE_LABELS.iter().map(|s| s.to_string()));
    labels
}

/// Whether entry `i` is a length (otherwise an angle).
pub fn is_length_parameter(n_joints: usize, i: usize) -> bool {
    let plane_start = (n_joints + 2) * PLACEMENT_DIM;
    if i < plane_start {
        i % PLACEMENT_DIM < 3
    } else {
        matches!(i - plane_start, 0 | 3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_labels() {
        let p = ParameterVector::zeros(15);
        assert_eq!(p.len(), 17 * 6 + 6);
        assert_eq!(p.dx().len(), 102);
        assert_eq!(p.dplane().len(), 6);
        let labels = parameter_labels(2);
        assert_eq!(labels.len(), 30);
        assert_eq!(labels[0], "base.px");
        assert_eq!(labels[ParameterVector::placement_index(2, 5)], "j2.phiz");
        assert_eq!(labels[ParameterVector::placement_index(3, 2)], "flange.pz");
        assert_eq!(labels[ParameterVector::plane_index(2, 3)], "plane.z");
        assert!(is_length_parameter(2, ParameterVector::plane_index(2, 0)));
        assert!(!is_length_parameter(2, ParameterVector::plane_index(2, 4)));
        assert!(!is_length_parameter(2, 5));
    }

    #[test]
    fn frozen_entries_stay_zero() {
        let mut mask = vec![true; ParameterVector::len_for(1)];
        mask[3] = false;
        let p = ParameterVector::from_values(1, vec![0.5; 24])
            .unwrap()
            .with_mask(mask)
            .unwrap();
        assert_eq!(p.get(3), 0.0);
        let mut p = p;
        assert!(p.set(3, 1.0).is_err());
        assert!(p.set(3, 0.0).is_ok());
        assert!(p.set(4, 1.0).is_ok());
        assert!(!p.free_indices().contains(&3));
    }
}
