#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::{Matrix4, Rotation3, Translation3, Unit, Vector3};
use planecal::identifiability::{build_posture_regressor, qr_reduce, BaseParameterization, DEFAULT_RANK_TOL};
use planecal::io::{read_pool_csv, PoolRows};
use planecal::kinematics::JointKind;
use planecal::posegen::TargetSpec;
use planecal::{JointConfig, KinematicChain, ParameterVector, PlaneParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod oracle;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

pub fn chain(name: &str) -> Arc<KinematicChain> {
    Arc::new(KinematicChain::from_path(fixture_path(&format!("{name}.json"))).unwrap())
}

/// Tool pointing down onto a horizontal table at z = 0.
pub fn table_plane() -> PlaneParams {
    PlaneParams {
        z_c: 0.05,
        phix_c: std::f64::consts::PI,
        ..PlaneParams::ZERO
    }
}

pub fn table_targets() -> TargetSpec {
    TargetSpec::grid([0.3, 0.6, -0.3, 0.3], 6, 3).unwrap()
}

pub fn shipped_pool() -> PoolRows {
    read_pool_csv(fixture_path("arm6r_pool/pool.csv")).unwrap()
}

pub fn contact_base(chain: &KinematicChain, plane: &PlaneParams, postures: &[JointConfig]) -> BaseParameterization {
    let reg = build_posture_regressor(chain, plane, &ParameterVector::zeros(chain.n_joints()), postures).unwrap();
    qr_reduce(&reg, DEFAULT_RANK_TOL).unwrap()
}

pub fn random_config(chain: &KinematicChain, rng: &mut ChaCha8Rng) -> JointConfig {
    JointConfig(
        chain
            .joints
            .iter()
            .map(|j| rng.random_range(j.joint.limits[0]..j.joint.limits[1]))
            .collect(),
    )
}

/// Every entry uniform in `[-scale, scale]`.
pub fn random_params(n_joints: usize, scale: f64, rng: &mut ChaCha8Rng) -> ParameterVector {
    let n = ParameterVector::len_for(n_joints);
    ParameterVector::from_values(n_joints, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Homogeneous transform of a `[px, py, pz, roll, pitch, yaw]` placement.
pub fn transform(v: [f64; 6]) -> Matrix4<f64> {
    let r = Rotation3::from_euler_angles(v[3], v[4], v[5]);
    Translation3::new(v[0], v[1], v[2]).to_homogeneous() * r.to_homogeneous()
}

pub fn joint_motion(kind: JointKind, axis: &Unit<Vector3<f64>>, q: f64) -> Matrix4<f64> {
    match kind {
        JointKind::Revolute => Rotation3::from_axis_angle(axis, q).to_homogeneous(),
        JointKind::Prismatic => Translation3::from(axis.into_inner() * q).to_homogeneous(),
    }
}
