//! Straightforward re-derivation of the forward model used as a test oracle:
//! product of placement and joint transforms, written without the library's
//! factor caching or analytic derivatives.

use nalgebra::{DMatrix, DVector, Matrix4};
use planecal::{JointConfig, KinematicChain, ParameterVector, PlaneParams};

use super::{joint_motion, transform};

fn perturbed(nominal: [f64; 6], delta: &[f64]) -> [f64; 6] {
    let mut v = nominal;
    for (a, d) in v.iter_mut().zip(delta) {
        *a += d;
    }
    v
}

pub fn flange(chain: &KinematicChain, q: &[f64], p: &ParameterVector) -> Matrix4<f64> {
    let dx = p.dx();
    let block = |b: usize| &dx[6 * b..6 * b + 6];
    let mut t = transform(perturbed(chain.base_placement.to_array(), block(0)));
    for (i, cj) in chain.joints.iter().enumerate() {
        t *= transform(perturbed(cj.placement.to_array(), block(i + 1)));
        t *= joint_motion(cj.joint.kind, &cj.joint.axis, q[i]);
    }
    t * transform(perturbed(chain.flange_placement.to_array(), block(chain.n_joints() + 1)))
}

/// Contact frame expressed in the plane frame.
pub fn relative(chain: &KinematicChain, plane: &PlaneParams, q: &[f64], p: &ParameterVector) -> Matrix4<f64> {
    let d = p.dplane();
    let contact = transform([0.0, 0.0, plane.z_c + d[0], plane.phix_c + d[1], plane.thetay_c + d[2], 0.0]);
    let plane_pose = transform([0.0, 0.0, plane.z_p + d[3], plane.phix_p + d[4], plane.thetay_p + d[5], 0.0]);
    plane_pose.try_inverse().unwrap() * flange(chain, q, p) * contact
}

/// `(z, roll, pitch)` of the contact frame expressed in the plane frame.
pub fn residual(chain: &KinematicChain, plane: &PlaneParams, q: &[f64], p: &ParameterVector) -> [f64; 3] {
    let rel = relative(chain, plane, q, p);
    let roll = rel[(2, 1)].atan2(rel[(2, 2)]);
    let pitch = (-rel[(2, 0)]).atan2((rel[(0, 0)].powi(2) + rel[(1, 0)].powi(2)).sqrt());
    [rel[(2, 3)], roll, pitch]
}

pub fn stacked(chain: &KinematicChain, plane: &PlaneParams, qs: &[JointConfig], p: &ParameterVector) -> DVector<f64> {
    DVector::from_iterator(3 * qs.len(), qs.iter().flat_map(|q| residual(chain, plane, q, p)))
}

/// Central differences of [`stacked`] over every parameter.
pub fn jacobian(chain: &KinematicChain, plane: &PlaneParams, qs: &[JointConfig], p: &ParameterVector, h: f64) -> DMatrix<f64> {
    let n = p.len();
    let mut j = DMatrix::zeros(3 * qs.len(), n);
    for c in 0..n {
        let mut plus = p.clone();
        plus.set(c, p.get(c) + h).unwrap();
        let mut minus = p.clone();
        minus.set(c, p.get(c) - h).unwrap();
        let col = (stacked(chain, plane, qs, &plus) - stacked(chain, plane, qs, &minus)) / (2.0 * h);
        j.set_column(c, &col);
    }
    j
}
