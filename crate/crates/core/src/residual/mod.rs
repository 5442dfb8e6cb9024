//! Plane-contact measurement model.
//!
//! A 3-point rigid contact pins the contact frame `R_c` to the plane frame
//! `R_p` up to an in-plane translation and a yaw about the normal. The
//! remaining partial pose, the z offset of `O_C` in `R_p` plus the roll and
//! pitch of `R_c` in `R_p`, is zero at every contact posture. The model
//! prediction of that triple is the residual.

mod jacobian;

use std::sync::Arc;

use nalgebra::{DVector, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kinematics::{homogeneous_from_params, FactorChain, JointConfig, KinematicChain};

pub use crate::params::{ParameterVector, PlaneParams};
pub use jacobian::{finite_difference_jacobian, residual_jacobian, FD_STEP};

pub(crate) use jacobian::partial_pose_derivative;

/// Threshold on `cos(pitch)` below which roll/pitch extraction is refused.
pub const GIMBAL_EPS: f64 = 1e-9;

/// Rows per posture in the stacked residual.
pub const ROWS_PER_POSTURE: usize = 3;

/// `(z, roll, pitch)` of `R_c` expressed in `R_p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualTriple {
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
}

impl ResidualTriple {
    pub fn to_array(self) -> [f64; 3] {
        [self.z, self.roll, self.pitch]
    }
}

/// Contact postures of one chain against one plane.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub chain: Arc<KinematicChain>,
    /// Nominal plane and contact parameters `kappa_0`.
    pub plane: PlaneParams,
    pub postures: Vec<JointConfig>,
    /// Identifier of each posture (defaults to its index).
    pub ids: Vec<usize>,
    /// Measured triples, stacked. `None` means the ideal all-zero measurement.
    pub measurements: Option<DVector<f64>>,
}

impl Dataset {
    pub fn new(chain: Arc<KinematicChain>, plane: PlaneParams, postures: Vec<JointConfig>) -> Result<Self> {
        let ids = (0..postures.len()).collect();
        Self::with_ids(chain, plane, postures, ids)
    }

    pub fn with_ids(
        chain: Arc<KinematicChain>,
        plane: PlaneParams,
        postures: Vec<JointConfig>,
        ids: Vec<usize>,
    ) -> Result<Self> {
        if postures.is_empty() {
            return invalid("dataset has no postures");
        }
        if ids.len() != postures.len() {
            return invalid("one id per posture required");
        }
        plane.check_finite()?;
        for q in &postures {
            chain.check_config(q)?;
        }
        Ok(Self {
            chain,
            plane,
            postures,
            ids,
            measurements: None,
        })
    }

    pub fn len(&self) -> usize {
        self.postures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.postures.is_empty()
    }

    pub fn rows(&self) -> usize {
        ROWS_PER_POSTURE * self.len()
    }

    /// Subset of postures by position, keeping ids and measurements aligned.
    pub fn subset(&self, positions: &[usize]) -> Result<Self> {
        let postures = positions.iter().map(|&i| self.postures[i].clone()).collect();
        let ids = positions.iter().map(|&i| self.ids[i]).collect();
        let mut ds = Self::with_ids(self.chain.clone(), self.plane, postures, ids)?;
        if let Some(m) = &self.measurements {
            let mut sub = DVector::zeros(ROWS_PER_POSTURE * positions.len());
            for (k, &i) in positions.iter().enumerate() {
                for r in 0..ROWS_PER_POSTURE {
                    sub[ROWS_PER_POSTURE * k + r] = m[ROWS_PER_POSTURE * i + r];
                }
            }
            ds.measurements = Some(sub);
        }
        Ok(ds)
    }
}

/// Pose of `R_c` relative to `R_p` as a homogeneous matrix, together with the
/// cached chain factors and the inverse plane pose.
pub(crate) struct RelativeContact {
    pub factors: FactorChain,
    pub plane_inv: Matrix4<f64>,
    pub plane_params: [f64; 6],
    pub relative: Matrix4<f64>,
}

impl RelativeContact {
    pub fn evaluate(
        chain: &KinematicChain,
        nominal: &PlaneParams,
        q: &[f64],
        params: &ParameterVector,
    ) -> Self {
        let effective = nominal.perturbed(params.dplane());
        let factors = FactorChain::build(chain, q, params, Some(&effective));
        let plane_params = effective.plane_params();
        let plane = homogeneous_from_params(&plane_params);
        // rigid inverse
        let rt = plane.fixed_view::<3, 3>(0, 0).transpose();
        let t = -(rt * plane.fixed_view::<3, 1>(0, 3));
        let mut plane_inv = Matrix4::identity();
        plane_inv.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        plane_inv.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        let relative = plane_inv * factors.total();
        Self {
            factors,
            plane_inv,
            plane_params,
            relative,
        }
    }
}

pub(crate) fn triple_from_relative(rel: &Matrix4<f64>, posture: usize) -> Result<ResidualTriple> {
    let cos_pitch = rel[(2, 1)].hypot(rel[(2, 2)]);
    if cos_pitch < GIMBAL_EPS || !cos_pitch.is_finite() {
        return Err(Error::DegenerateOrientation { posture, cos_pitch });
    }
    let t = ResidualTriple {
        z: rel[(2, 3)],
        roll: rel[(2, 1)].atan2(rel[(2, 2)]),
        pitch: (-rel[(2, 0)]).atan2(cos_pitch),
    };
    if !(t.z.is_finite() && t.roll.is_finite() && t.pitch.is_finite()) {
        return Err(Error::NonFinite(format!("residual at posture {posture}")));
    }
    Ok(t)
}

fn check_inputs(chain: &KinematicChain, q: &[f64], params: &ParameterVector) -> Result<()> {
    chain.check_config(q)?;
    chain.check_params(params)
}

/// Predicted partial pose `(z, roll, pitch)` of `R_c` in `R_p` at posture `q`.
pub fn plane_residual(
    chain: &KinematicChain,
    nominal: &PlaneParams,
    q: &JointConfig,
    params: &ParameterVector,
) -> Result<ResidualTriple> {
    check_inputs(chain, q, params)?;
    let rc = RelativeContact::evaluate(chain, nominal, q, params);
    triple_from_relative(&rc.relative, 0)
}

/// Stacked residual `Y_hat - Y` over every posture, laid out `(z, roll, pitch)` per posture.
pub fn stack_residuals(ds: &Dataset, params: &ParameterVector) -> Result<DVector<f64>> {
    ds.chain.check_params(params)?;
    let mut out = DVector::zeros(ds.rows());
    for (k, q) in ds.postures.iter().enumerate() {
        let rc = RelativeContact::evaluate(&ds.chain, &ds.plane, q, params);
        let t = triple_from_relative(&rc.relative, ds.ids[k])?;
        out[3 * k] = t.z;
        out[3 * k + 1] = t.roll;
        out[3 * k + 2] = t.pitch;
    }
    if let Some(m) = &ds.measurements {
        out -= m;
    }
    Ok(out)
}
