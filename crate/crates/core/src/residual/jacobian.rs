use nalgebra::{DMatrix, Matrix4};
use rayon::prelude::*;

use super::{stack_residuals, triple_from_relative, Dataset, RelativeContact, ROWS_PER_POSTURE};
use crate::error::{invalid, Result};
use crate::kinematics::{placement_derivative, FactorChain, PLACEMENT_DIM};
use crate::params::ParameterVector;

/// Step of the central finite-difference oracle, for lengths and angles alike.
pub const FD_STEP: f64 = 1e-6;

/// Contact and plane entries each map onto z, roll, pitch of a placement-style 6-vector.
const PLANE_COMPONENT: [usize; 3] = [2, 3, 4];

/// Derivative of `(z, roll, pitch)` given the relative pose and its derivative.
pub(crate) fn partial_pose_derivative(rel: &Matrix4<f64>, d: &Matrix4<f64>) -> [f64; 3] {
    let (r20, r21, r22) = (rel[(2, 0)], rel[(2, 1)], rel[(2, 2)]);
    let (d20, d21, d22) = (d[(2, 0)], d[(2, 1)], d[(2, 2)]);
    let s = r21 * r21 + r22 * r22;
    let c = s.sqrt();
    let droll = (r22 * d21 - r21 * d22) / s;
    let dc = (r21 * d21 + r22 * d22) / c;
    let dpitch = (c * (-d20) + r20 * dc) / (r20 * r20 + s);
    [d[(2, 3)], droll, dpitch]
}

fn check_columns(params: &ParameterVector, free_columns: &[usize]) -> Result<()> {
    for &c in free_columns {
        if c >= params.len() {
            return invalid(format!("column {c} out of range"));
        }
        if !params.is_free(c) {
            return invalid(format!("column {c} is frozen"));
        }
    }
    Ok(())
}

fn posture_block(
    ds: &Dataset,
    k: usize,
    params: &ParameterVector,
    free_columns: &[usize],
) -> Result<DMatrix<f64>> {
    let chain = &ds.chain;
    let n_place = chain.n_placements();
    let rc = RelativeContact::evaluate(chain, &ds.plane, &ds.postures[k], params);
    // validates the orientation before differentiating
    triple_from_relative(&rc.relative, ds.ids[k])?;
    let contact_pos = rc.factors.factors.len() - 1;

    let mut block = DMatrix::zeros(ROWS_PER_POSTURE, free_columns.len());
    for (col, &c) in free_columns.iter().enumerate() {
        let d_rel = if c < n_place * PLACEMENT_DIM {
            let pos = FactorChain::placement_position(c / PLACEMENT_DIM);
            rc.plane_inv * rc.factors.placement_partial(pos, c % PLACEMENT_DIM)
        } else {
            let k = c - n_place * PLACEMENT_DIM;
            if k < 3 {
                rc.plane_inv * rc.factors.placement_partial(contact_pos, PLANE_COMPONENT[k])
            } else {
                let d_plane = placement_derivative(&rc.plane_params, PLANE_COMPONENT[k - 3]);
                -(rc.plane_inv * d_plane * rc.relative)
            }
        };
        let d = partial_pose_derivative(&rc.relative, &d_rel);
        for r in 0..ROWS_PER_POSTURE {
            block[(r, col)] = d[r];
        }
    }
    Ok(block)
}

/// Analytic Jacobian of the stacked residual with respect to the listed
/// parameter columns, `3N x |free_columns|`.
pub fn residual_jacobian(
    ds: &Dataset,
    params: &ParameterVector,
    free_columns: &[usize],
) -> Result<DMatrix<f64>> {
    ds.chain.check_params(params)?;
    check_columns(params, free_columns)?;
    let blocks: Vec<DMatrix<f64>> = (0..ds.len())
        .into_par_iter()
        .map(|k| posture_block(ds, k, params, free_columns))
        .collect::<Result<_>>()?;
    let mut jac = DMatrix::zeros(ds.rows(), free_columns.len());
    for (k, b) in blocks.iter().enumerate() {
        jac.rows_mut(ROWS_PER_POSTURE * k, ROWS_PER_POSTURE).copy_from(b);
    }
    Ok(jac)
}

/// Central finite-difference Jacobian of [`stack_residuals`]; the reference
/// the analytic Jacobian is checked against.
pub fn finite_difference_jacobian(
    ds: &Dataset,
    params: &ParameterVector,
    free_columns: &[usize],
    step: f64,
) -> Result<DMatrix<f64>> {
    ds.chain.check_params(params)?;
    check_columns(params, free_columns)?;
    if !(step > 0.0) {
        return invalid("finite-difference step must be positive");
    }
    let cols: Vec<_> = free_columns
        .par_iter()
        .map(|&c| {
            let plus = stack_residuals(ds, &params.shifted(c, step))?;
            let minus = stack_residuals(ds, &params.shifted(c, -step))?;
            Ok((plus - minus) / (2.0 * step))
        })
        .collect::<Result<_>>()?;
    let mut jac = DMatrix::zeros(ds.rows(), free_columns.len());
    for (j, col) in cols.iter().enumerate() {
        jac.set_column(j, col);
    }
    Ok(jac)
}
