//! Serial-chain model with URDF-style 6-parameter joint placements.
//!
//! Every inter-frame transform is described by `[px, py, pz, phix, phiy, phiz]`
//! with the rotation realised as fixed-axis roll-pitch-yaw,
//! `R = Rz(phiz) * Ry(phiy) * Rx(phix)`. Calibration variations are added to
//! these six numbers before they are turned into a transform.
//!
//! A chain evaluates as
//!
//! ```text
//! T = P(base + d_0) * [P(X_1 + d_1) * M_1(q_1)] * ... * [P(X_n + d_n) * M_n(q_n)] * P(flange + d_{n+1})
//! ```
//!
//! where `M_i` is the motion about (revolute) or along (prismatic) the joint axis.

use std::f64::consts::PI;
use std::ops::{Deref, Mul};
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::params::{ParameterVector, PlaneParams};

/// Number of parameters describing one placement.
pub const PLACEMENT_DIM: usize = 6;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Rigid transform carried as a rotation matrix and a translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Self {
        Self {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Checks orthonormality and a positive determinant within `tol`.
    pub fn is_rigid(&self, tol: f64) -> bool {
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        err <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        &self * &rhs
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }
}

/// `Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub fn rpy_to_rotation(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    Rotation3::from_euler_angles(roll, pitch, yaw).into_inner()
}

/// Inverse of [`rpy_to_rotation`]. Returns `None` at gimbal lock
/// (`cos(pitch) < eps`).
pub fn rotation_to_rpy(r: &Matrix3<f64>, eps: f64) -> Option<(f64, f64, f64)> {
    let cos_pitch = r[(2, 1)].hypot(r[(2, 2)]);
    if cos_pitch < eps {
        return None;
    }
    let pitch = (-r[(2, 0)]).atan2(cos_pitch);
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    Some((roll, pitch, yaw))
}

/// Nominal placement `[px, py, pz, phix, phiy, phiz]` of a frame relative to its parent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 6]", into = "[f64; 6]")]
pub struct JointPlacement {
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub phix: f64,
    pub phiy: f64,
    pub phiz: f64,
}

impl JointPlacement {
    pub const ZERO: JointPlacement = JointPlacement {
        px: 0.0,
        py: 0.0,
        pz: 0.0,
        phix: 0.0,
        phiy: 0.0,
        phiz: 0.0,
    };

    /// Builds a placement, wrapping the angles into `(-pi, pi]`.
    pub fn new(v: [f64; 6]) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return invalid(format!("non-finite placement {v:?}"));
        }
        Ok(Self {
            px: v[0],
            py: v[1],
            pz: v[2],
            phix: wrap_angle(v[3]),
            phiy: wrap_angle(v[4]),
            phiz: wrap_angle(v[5]),
        })
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.px, self.py, self.pz, self.phix, self.phiy, self.phiz]
    }

    /// Nominal values plus a 6-entry variation (no wrapping, so the map stays smooth).
    pub(crate) fn perturbed(&self, delta: &[f64]) -> [f64; 6] {
        let mut v = self.to_array();
        for (a, d) in v.iter_mut().zip(delta) {
            *a += d;
        }
        v
    }
}

impl TryFrom<[f64; 6]> for JointPlacement {
    type Error = Error;
    fn try_from(v: [f64; 6]) -> Result<Self> {
        Self::new(v)
    }
}

impl From<JointPlacement> for [f64; 6] {
    fn from(p: JointPlacement) -> Self {
        p.to_array()
    }
}

/// Converts a placement into a pose (translation, then fixed-axis XYZ rotation).
pub fn placement_to_pose(pl: &JointPlacement) -> Result<Pose> {
    let v = pl.to_array();
    if v.iter().any(|x| !x.is_finite()) {
        return invalid(format!("non-finite placement {v:?}"));
    }
    Ok(pose_from_params(&v))
}

pub(crate) fn pose_from_params(v: &[f64; 6]) -> Pose {
    Pose {
        rotation: rpy_to_rotation(v[3], v[4], v[5]),
        translation: Vector3::new(v[0], v[1], v[2]),
    }
}

pub(crate) fn homogeneous_from_params(v: &[f64; 6]) -> Matrix4<f64> {
    pose_from_params(v).to_homogeneous()
}

fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Derivative of the homogeneous placement matrix with respect to one of its
/// six parameters, evaluated at `v`.
pub(crate) fn placement_derivative(v: &[f64; 6], component: usize) -> Matrix4<f64> {
    let mut d = Matrix4::zeros();
    if component < 3 {
        d[(component, 3)] = 1.0;
        return d;
    }
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), v[3]).into_inner();
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), v[4]).into_inner();
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), v[5]).into_inner();
    let dr = match component {
        3 => rz * ry * rx * skew(&Vector3::x()),
        4 => rz * ry * skew(&Vector3::y()) * rx,
        5 => skew(&Vector3::z()) * rz * ry * rx,
        _ => unreachable!("placement component out of range"),
    };
    d.fixed_view_mut::<3, 3>(0, 0).copy_from(&dr);
    d
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub kind: JointKind,
    pub axis: Unit<Vector3<f64>>,
    pub limits: [f64; 2],
}

impl Joint {
    pub fn new(kind: JointKind, axis: [f64; 3], limits: [f64; 2]) -> Result<Self> {
        let a = Vector3::from(axis);
        if !a.iter().all(|x| x.is_finite()) || a.norm() == 0.0 {
            return invalid(format!("bad joint axis {axis:?}"));
        }
        if (a.norm() - 1.0).abs() > 1e-9 {
            return invalid(format!("joint axis {axis:?} is not unit length"));
        }
        if !(limits[0].is_finite() && limits[1].is_finite() && limits[0] < limits[1]) {
            return invalid(format!("joint limits {limits:?} must satisfy q_min < q_max"));
        }
        Ok(Self {
            kind,
            axis: Unit::new_normalize(a),
            limits,
        })
    }

    pub fn revolute(axis: [f64; 3], limits: [f64; 2]) -> Result<Self> {
        Self::new(JointKind::Revolute, axis, limits)
    }

    pub fn within_limits(&self, q: f64) -> bool {
        q >= self.limits[0] && q <= self.limits[1]
    }

    pub(crate) fn motion(&self, q: f64) -> Matrix4<f64> {
        match self.kind {
            JointKind::Revolute => Rotation3::from_axis_angle(&self.axis, q).to_homogeneous(),
            JointKind::Prismatic => {
                let mut m = Matrix4::identity();
                m.fixed_view_mut::<3, 1>(0, 3).copy_from(&(self.axis.into_inner() * q));
                m
            }
        }
    }

    pub(crate) fn motion_derivative(&self, q: f64) -> Matrix4<f64> {
        let mut d = Matrix4::zeros();
        match self.kind {
            JointKind::Revolute => {
                let r = Rotation3::from_axis_angle(&self.axis, q).into_inner();
                d.fixed_view_mut::<3, 3>(0, 0)
                    .copy_from(&(skew(&self.axis) * r));
            }
            JointKind::Prismatic => {
                d.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.axis.into_inner());
            }
        }
        d
    }
}

/// One actuated joint and the placement of its frame in the previous one.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainJoint {
    pub joint: Joint,
    pub placement: JointPlacement,
}

/// Joint values, one per chain joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig(pub Vec<f64>);

impl Deref for JointConfig {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for JointConfig {
    fn from(v: Vec<f64>) -> Self {
        JointConfig(v)
    }
}

/// Optional inertial data used by the balance check.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct MassData {
    /// Mass of the link moved by joint `i`.
    pub masses: Vec<f64>,
    /// Centre of mass of link `i`, in the frame after joint `i` moves.
    pub coms: Vec<Vector3<f64>>,
}

/// An ordered serial chain from the base frame `R_0` to the flange frame `R_f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChainFile", into = "ChainFile")]
pub struct KinematicChain {
    pub name: String,
    pub base_placement: JointPlacement,
    pub joints: Vec<ChainJoint>,
    pub flange_placement: JointPlacement,
    pub mass_data: Option<MassData>,
}

impl KinematicChain {
    pub fn new(
        name: impl Into<String>,
        base_placement: JointPlacement,
        joints: Vec<ChainJoint>,
        flange_placement: JointPlacement,
    ) -> Result<Self> {
        if joints.is_empty() {
            return invalid("a chain needs at least one joint");
        }
        Ok(Self {
            name: name.into(),
            base_placement,
            joints,
            flange_placement,
            mass_data: None,
        })
    }

    pub fn with_mass_data(mut self, data: MassData) -> Result<Self> {
        let n = self.n_joints();
        if data.masses.len() != n || data.coms.len() != n {
            return invalid(format!(
                "mass data needs {n} masses and CoMs, got {} and {}",
                data.masses.len(),
                data.coms.len()
            ));
        }
        if data.masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return invalid("link masses must be finite and non-negative");
        }
        self.mass_data = Some(data);
        Ok(self)
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    /// Placement blocks: base, one per joint, flange.
    pub fn n_placements(&self) -> usize {
        self.joints.len() + 2
    }

    /// Length of the full variation vector `[dX, dkappa]`.
    pub fn param_len(&self) -> usize {
        ParameterVector::len_for(self.n_joints())
    }

    /// Nominal placement of block `b` (0 = base, `n+1` = flange).
    pub fn placement(&self, b: usize) -> &JointPlacement {
        match b {
            0 => &self.base_placement,
            b if b <= self.joints.len() => &self.joints[b - 1].placement,
            _ => &self.flange_placement,
        }
    }

    /// Upper bound on the distance any point of the chain can travel from the base.
    pub fn total_reach(&self) -> f64 {
        let mut reach: f64 = (0..self.n_placements())
            .map(|b| {
                let p = self.placement(b);
                Vector3::new(p.px, p.py, p.pz).norm()
            })
            .sum();
        for j in &self.joints {
            if j.joint.kind == JointKind::Prismatic {
                reach += j.joint.limits[0].abs().max(j.joint.limits[1].abs());
            }
        }
        reach
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.len() == self.n_joints()
            && self.joints.iter().zip(q).all(|(j, &v)| j.joint.within_limits(v))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub(crate) fn check_config(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.n_joints() {
            return invalid(format!(
                "joint configuration has {} values, chain '{}' has {} joints",
                q.len(),
                self.name,
                self.n_joints()
            ));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite joint value");
        }
        Ok(())
    }

    pub(crate) fn check_params(&self, delta: &ParameterVector) -> Result<()> {
        if delta.n_joints() != self.n_joints() {
            return invalid(format!(
                "parameter vector sized for {} joints, chain has {}",
                delta.n_joints(),
                self.n_joints()
            ));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointEntry {
    kind: JointKind,
    axis: [f64; 3],
    placement: JointPlacement,
    limits: [f64; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainFile {
    name: String,
    base_placement: JointPlacement,
    joints: Vec<JointEntry>,
    flange_placement: JointPlacement,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    link_masses: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    link_coms: Option<Vec<[f64; 3]>>,
}

impl TryFrom<ChainFile> for KinematicChain {
    type Error = Error;
    fn try_from(f: ChainFile) -> Result<Self> {
        let joints = f
            .joints
            .into_iter()
            .map(|e| {
                Ok(ChainJoint {
                    joint: Joint::new(e.kind, e.axis, e.limits)?,
                    placement: e.placement,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let chain = KinematicChain::new(f.name, f.base_placement, joints, f.flange_placement)?;
        match (f.link_masses, f.link_coms) {
            (Some(masses), Some(coms)) => chain.with_mass_data(MassData {
                masses,
                coms: coms.into_iter().map(Vector3::from).collect(),
            }),
            (None, None) => Ok(chain),
            _ => invalid("link_masses and link_coms must be given together"),
        }
    }
}

impl From<KinematicChain> for ChainFile {
    fn from(c: KinematicChain) -> Self {
        let (link_masses, link_coms) = match c.mass_data {
            Some(m) => (
                Some(m.masses),
                Some(m.coms.iter().map(|v| [v.x, v.y, v.z]).collect()),
            ),
            None => (None, None),
        };
        ChainFile {
            name: c.name,
            base_placement: c.base_placement,
            joints: c
                .joints
                .into_iter()
                .map(|j| JointEntry {
                    kind: j.joint.kind,
                    axis: [j.joint.axis.x, j.joint.axis.y, j.joint.axis.z],
                    placement: j.placement,
                    limits: j.joint.limits,
                })
                .collect(),
            flange_placement: c.flange_placement,
            link_masses,
            link_coms,
        }
    }
}

/// The chain product written out factor by factor, with prefix and suffix
/// products cached so single-factor derivatives cost two matrix products.
pub(crate) struct FactorChain {
    /// Perturbed 6-vectors of the placement-like factors (unused for motions).
    pub params: Vec<[f64; 6]>,
    pub factors: Vec<Matrix4<f64>>,
    /// `prefix[i]` = product of factors `0..i`.
    pub prefix: Vec<Matrix4<f64>>,
    /// `suffix[i]` = product of factors `i+1..`.
    pub suffix: Vec<Matrix4<f64>>,
}

impl FactorChain {
    pub fn build(
        chain: &KinematicChain,
        q: &[f64],
        delta: &ParameterVector,
        contact: Option<&PlaneParams>,
    ) -> Self {
        let values = delta.values();
        let n = chain.n_joints();
        let cap = 2 * n + 3;
        let mut params = Vec::with_capacity(cap);
        let mut factors = Vec::with_capacity(cap);

        let push_placement = |b: usize, params: &mut Vec<[f64; 6]>, factors: &mut Vec<Matrix4<f64>>| {
            let v = chain
                .placement(b)
                .perturbed(&values[b * PLACEMENT_DIM..(b + 1) * PLACEMENT_DIM]);
            factors.push(homogeneous_from_params(&v));
            params.push(v);
        };

        push_placement(0, &mut params, &mut factors);
        for (i, cj) in chain.joints.iter().enumerate() {
            push_placement(i + 1, &mut params, &mut factors);
            factors.push(cj.joint.motion(q[i]));
            params.push([q[i], 0.0, 0.0, 0.0, 0.0, 0.0]);
        }
        push_placement(n + 1, &mut params, &mut factors);
        if let Some(plane) = contact {
            let v = plane.contact_params();
            factors.push(homogeneous_from_params(&v));
            params.push(v);
        }

        let len = factors.len();
        let mut prefix = Vec::with_capacity(len);
        let mut acc = Matrix4::identity();
        for f in &factors {
            prefix.push(acc);
            acc *= f;
        }
        let mut suffix = vec![Matrix4::identity(); len];
        let mut acc = Matrix4::identity();
        for i in (0..len).rev() {
            suffix[i] = acc;
            acc = factors[i] * acc;
        }
        Self {
            params,
            factors,
            prefix,
            suffix,
        }
    }

    pub fn total(&self) -> Matrix4<f64> {
        let last = self.factors.len() - 1;
        self.prefix[last] * self.factors[last]
    }

    /// Position of the factor for placement block `b`.
    pub fn placement_position(b: usize) -> usize {
        // base at 0, joint i (1-based) placement at 2i-1, flange at 2n+1
        if b == 0 {
            0
        } else {
            2 * b - 1
        }
    }

    pub fn motion_position(i: usize) -> usize {
        2 * i + 2
    }

    /// Derivative of the total product with respect to component `c` of the
    /// placement-like factor at `pos`.
    pub fn placement_partial(&self, pos: usize, c: usize) -> Matrix4<f64> {
        self.prefix[pos] * placement_derivative(&self.params[pos], c) * self.suffix[pos]
    }

    /// Derivative of the total product with respect to joint `i`.
    pub fn motion_partial(&self, chain: &KinematicChain, i: usize) -> Matrix4<f64> {
        let pos = Self::motion_position(i);
        let q = self.params[pos][0];
        self.prefix[pos] * chain.joints[i].joint.motion_derivative(q) * self.suffix[pos]
    }
}

/// Pose of `R_f` in `R_0` at joint values `q` with parameter variations `delta`.
pub fn forward_kinematics(
    chain: &KinematicChain,
    q: &JointConfig,
    delta: &ParameterVector,
) -> Result<Pose> {
    chain.check_config(q)?;
    chain.check_params(delta)?;
    let fc = FactorChain::build(chain, q, delta, None);
    Ok(Pose::from_homogeneous(&fc.total()))
}

/// Pose of the contact frame `R_c` in `R_0`; the contact offset
/// `(0, 0, z_c, phix_c, thetay_c, 0)` is read from `contact` as given.
pub fn contact_frame_pose(
    chain: &KinematicChain,
    q: &JointConfig,
    delta: &ParameterVector,
    contact: &PlaneParams,
) -> Result<Pose> {
    chain.check_config(q)?;
    chain.check_params(delta)?;
    contact.check_finite()?;
    let fc = FactorChain::build(chain, q, delta, Some(contact));
    Ok(Pose::from_homogeneous(&fc.total()))
}
