//! Numerical identifiability analysis.
//!
//! The stacked Jacobian of the residual over random configurations is reduced
//! with a column-pivoted QR: columns with negligible norm are eliminated as
//! non-influential, columns beyond the numerical rank are written as linear
//! combinations of the independent ones. The result is the base regressor
//! `R_b` and the combination matrix `A` with `dX_b = A dX`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kinematics::{JointConfig, KinematicChain};
use crate::linalg::{col_piv_qr, solve_upper};
use crate::params::{parameter_labels, ParameterVector, PlaneParams};
use crate::residual::{residual_jacobian, Dataset, RelativeContact, ROWS_PER_POSTURE};

/// Default relative rank tolerance.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Combination coefficients below this magnitude are dropped.
pub const COEFF_ZERO_TOL: f64 = 1e-10;

/// Random configurations whose contact pitch lies this close to +-pi/2 are redrawn.
const GIMBAL_GUARD: f64 = 0.1;

/// Stacked Jacobian with the full-vector index and label of every column.
#[derive(Clone, Debug)]
pub struct Regressor {
    pub matrix: DMatrix<f64>,
    /// Index of each column in the full parameter vector.
    pub columns: Vec<usize>,
    pub labels: Vec<String>,
    pub n_joints: usize,
}

impl Regressor {
    pub fn new(matrix: DMatrix<f64>, columns: Vec<usize>, n_joints: usize) -> Result<Self> {
        if matrix.nrows() % ROWS_PER_POSTURE != 0 {
            return invalid("regressor row count must be a multiple of 3");
        }
        if matrix.ncols() != columns.len() {
            return invalid("one column index per regressor column required");
        }
        let len = ParameterVector::len_for(n_joints);
        let mut seen = vec![false; len];
        for &c in &columns {
            if c >= len || seen[c] {
                return invalid(format!("regressor column {c} out of range or repeated"));
            }
            seen[c] = true;
        }
        let all = parameter_labels(n_joints);
        let labels = columns.iter().map(|&c| all[c].clone()).collect();
        Ok(Self {
            matrix,
            columns,
            labels,
            n_joints,
        })
    }

    /// Keeps only the listed column positions.
    pub fn select_columns(&self, positions: &[usize]) -> Result<Self> {
        let m = self.matrix.select_columns(positions);
        let cols = positions.iter().map(|&p| self.columns[p]).collect();
        Self::new(m, cols, self.n_joints)
    }
}

/// Uniform random configuration within the joint limits.
pub fn random_config<R: Rng>(chain: &KinematicChain, rng: &mut R) -> JointConfig {
    JointConfig(
        chain
            .joints
            .iter()
            .map(|j| rng.random_range(j.joint.limits[0]..=j.joint.limits[1]))
            .collect(),
    )
}

/// Default number of random configurations: twice the minimum `ceil(N_free / 3)`.
pub fn default_config_count(n_free: usize) -> usize {
    2 * n_free.div_ceil(ROWS_PER_POSTURE)
}

/// Jacobian over `n_configs` seeded uniform configurations at the nominal model,
/// with every parameter as a candidate column.
pub fn build_random_regressor(
    chain: &KinematicChain,
    plane: &PlaneParams,
    n_configs: usize,
    seed: u64,
) -> Result<Regressor> {
    let params = ParameterVector::zeros(chain.n_joints());
    build_random_regressor_for(chain, plane, &params, n_configs, seed)
}

/// As [`build_random_regressor`], restricted to the unmasked entries of `params`
/// and evaluated at `params`.
pub fn build_random_regressor_for(
    chain: &KinematicChain,
    plane: &PlaneParams,
    params: &ParameterVector,
    n_configs: usize,
    seed: u64,
) -> Result<Regressor> {
    let free = params.free_indices();
    let min = free.len().div_ceil(ROWS_PER_POSTURE);
    if n_configs < min {
        return invalid(format!(
            "{n_configs} configurations cannot determine {} parameters (need at least {min})",
            free.len()
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut postures = Vec::with_capacity(n_configs);
    let limit = (n_configs * 1000).max(1000);
    let mut draws = 0;
    while postures.len() < n_configs {
        draws += 1;
        if draws > limit {
            return invalid("could not draw configurations away from gimbal lock");
        }
        let q = random_config(chain, &mut rng);
        let rc = RelativeContact::evaluate(chain, plane, &q, params);
        let r20 = rc.relative[(2, 0)].clamp(-1.0, 1.0);
        if r20.asin().abs() < std::f64::consts::FRAC_PI_2 - GIMBAL_GUARD {
            postures.push(q);
        }
    }
    let ds = Dataset::new(Arc::new(chain.clone()), *plane, postures)?;
    let jac = residual_jacobian(&ds, params, &free)?;
    Regressor::new(jac, free, chain.n_joints())
}

/// Jacobian at the given postures (typically contact postures) with every
/// unmasked entry of `params` as a candidate column. Directions that no
/// contact posture can excite, such as a yaw about a tool axis held normal to
/// the plane, vanish here although random configurations would excite them.
pub fn build_posture_regressor(
    chain: &KinematicChain,
    plane: &PlaneParams,
    params: &ParameterVector,
    postures: &[JointConfig],
) -> Result<Regressor> {
    let free = params.free_indices();
    let ds = Dataset::new(Arc::new(chain.clone()), *plane, postures.to_vec())?;
    let jac = residual_jacobian(&ds, params, &free)?;
    Regressor::new(jac, free, chain.n_joints())
}

/// Result of the QR reduction: which columns form the base set and how the
/// others fold into it.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseParameterization {
    pub n_joints: usize,
    /// Full-vector index of every regressor column.
    pub columns: Vec<usize>,
    pub labels: Vec<String>,
    /// Positions (into `columns`) of the base parameters, ascending.
    pub independent: Vec<usize>,
    /// Positions of columns expressed through the base set.
    pub dependent: Vec<usize>,
    /// Positions of non-influential columns.
    pub eliminated: Vec<usize>,
    /// `A`, `N_b x columns.len()`.
    pub combination: DMatrix<f64>,
    pub rank_tolerance: f64,
}

impl BaseParameterization {
    pub fn n_base(&self) -> usize {
        self.independent.len()
    }

    /// Full-vector indices of the base parameters.
    pub fn independent_indices(&self) -> Vec<usize> {
        self.independent.iter().map(|&p| self.columns[p]).collect()
    }

    pub fn independent_labels(&self) -> Vec<String> {
        self.independent.iter().map(|&p| self.labels[p].clone()).collect()
    }

    pub fn eliminated_labels(&self) -> Vec<String> {
        self.eliminated.iter().map(|&p| self.labels[p].clone()).collect()
    }

    /// `A * [dX, dkappa]` restricted to the regressor columns.
    pub fn base_coordinates(&self, full: &ParameterVector) -> Result<DVector<f64>> {
        if full.n_joints() != self.n_joints {
            return invalid("parameter vector does not match the parameterization");
        }
        let x = DVector::from_iterator(self.columns.len(), self.columns.iter().map(|&c| full.get(c)));
        Ok(&self.combination * x)
    }

    /// Base regressor: the independent columns of `reg`.
    pub fn base_regressor(&self, reg: &Regressor) -> Result<DMatrix<f64>> {
        if reg.columns != self.columns {
            return invalid("regressor columns differ from the parameterization");
        }
        Ok(reg.matrix.select_columns(&self.independent))
    }

    pub fn report(&self) -> BaseReport {
        let groupings = self
            .independent
            .iter()
            .enumerate()
            .map(|(row, &p)| Grouping {
                base: self.labels[p].clone(),
                terms: (0..self.columns.len())
                    .filter(|&c| self.combination[(row, c)] != 0.0)
                    .map(|c| GroupTerm {
                        label: self.labels[c].clone(),
                        coefficient: self.combination[(row, c)],
                    })
                    .collect(),
            })
            .collect();
        BaseReport {
            kind: BaseReport::KIND.to_string(),
            n_base: self.n_base(),
            tolerance: self.rank_tolerance,
            independent: self.independent_labels(),
            eliminated: self.eliminated_labels(),
            groupings,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupTerm {
    pub label: String,
    pub coefficient: f64,
}

/// One row of `A`: the base parameter and every column folded into it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grouping {
    pub base: String,
    pub terms: Vec<GroupTerm>,
}

/// JSON report of a base parameterization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseReport {
    pub kind: String,
    pub n_base: usize,
    pub tolerance: f64,
    pub independent: Vec<String>,
    pub eliminated: Vec<String>,
    pub groupings: Vec<Grouping>,
}

impl BaseReport {
    pub const KIND: &'static str = "base_parameterization";

    pub fn validate(&self) -> Result<()> {
        if self.kind != Self::KIND {
            return invalid(format!("expected kind '{}', found '{}'", Self::KIND, self.kind));
        }
        if self.n_base != self.independent.len() || self.n_base != self.groupings.len() {
            return invalid("n_base disagrees with the listed base parameters");
        }
        if !(self.tolerance > 0.0) {
            return invalid("tolerance must be positive");
        }
        Ok(())
    }
}

/// Column-pivoted QR reduction at relative tolerance `tol`.
pub fn qr_reduce(reg: &Regressor, tol: f64) -> Result<BaseParameterization> {
    qr_reduce_scaled(reg, tol, None)
}

/// [`qr_reduce`] with an optional characteristic scale per column (e.g. a
/// length that converts radians into meters). Scales only affect pivoting and
/// rank decisions; `A` is always expressed in unscaled units.
pub fn qr_reduce_scaled(
    reg: &Regressor,
    tol: f64,
    column_scales: Option<&[f64]>,
) -> Result<BaseParameterization> {
    if !(tol > 0.0) || !tol.is_finite() {
        return invalid(format!("rank tolerance must be positive, got {tol}"));
    }
    let n = reg.matrix.ncols();
    let scales: Vec<f64> = match column_scales {
        Some(s) if s.len() != n => return invalid("one scale per column required"),
        Some(s) if s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) => {
            return invalid("column scales must be positive")
        }
        Some(s) => s.to_vec(),
        None => vec![1.0; n],
    };
    let mut scaled = reg.matrix.clone();
    for (j, s) in scales.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*s);
    }

    let norms: Vec<f64> = (0..n).map(|j| scaled.column(j).norm()).collect();
    let max_norm = norms.iter().cloned().fold(0.0, f64::max);
    let (kept, eliminated): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&j| max_norm > 0.0 && norms[j] > tol * max_norm);

    let kept_matrix = scaled.select_columns(&kept);
    let qr = col_piv_qr(&kept_matrix);
    let rank = qr.rank(tol);
    let r11 = qr.r.view((0, 0), (rank, rank)).into_owned();

    // pivot position -> regressor column
    let pivot_col = |k: usize| kept[qr.perm[k]];
    let mut independent: Vec<usize> = (0..rank).map(pivot_col).collect();
    let mut dependent: Vec<usize> = (rank..kept.len()).map(pivot_col).collect();
    independent.sort_unstable();
    dependent.sort_unstable();
    let row_of = |col: usize| independent.binary_search(&col).expect("independent column");

    let mut combination = DMatrix::zeros(rank, n);
    for k in 0..rank {
        let c = pivot_col(k);
        combination[(row_of(c), c)] = 1.0;
    }
    for k in rank..kept.len() {
        let d = pivot_col(k);
        let rhs = qr.r.view((0, k), (rank, 1)).column(0).into_owned();
        let beta = solve_upper(&r11, &rhs);
        for (i, b) in beta.iter().enumerate() {
            let c = pivot_col(i);
            // scaled column d = sum beta_i scaled column c  =>  unscaled factor s_c / s_d
            let coeff = b * scales[c] / scales[d];
            if coeff.abs() >= COEFF_ZERO_TOL {
                combination[(row_of(c), d)] = coeff;
            }
        }
    }

    Ok(BaseParameterization {
        n_joints: reg.n_joints,
        columns: reg.columns.clone(),
        labels: reg.labels.clone(),
        independent,
        dependent,
        eliminated,
        combination,
        rank_tolerance: tol,
    })
}

/// Sets the base parameters at their own positions and every other entry to zero.
pub fn remap_base_to_full(base: &BaseParameterization, dxb: &[f64]) -> Result<ParameterVector> {
    if dxb.len() != base.n_base() {
        return invalid(format!(
            "expected {} base values, got {}",
            base.n_base(),
            dxb.len()
        ));
    }
    let mut full = ParameterVector::zeros(base.n_joints);
    for (&idx, &v) in base.independent_indices().iter().zip(dxb) {
        full.set(idx, v)?;
    }
    Ok(full)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_regressor(m: DMatrix<f64>) -> Regressor {
        let cols = (0..m.ncols()).collect();
        Regressor::new(m, cols, 1).unwrap()
    }

    #[test]
    fn duplicated_column_groups_with_unit_coefficient() {
        let base = DMatrix::from_fn(9, 3, |i, j| ((i + 1) as f64 * (j + 2) as f64).cos());
        let mut m = base.clone().insert_column(3, 0.0);
        m.set_column(3, &base.column(1));
        let bp = qr_reduce(&toy_regressor(m.clone()), 1e-8).unwrap();
        assert_eq!(bp.n_base(), 3);
        assert_eq!(bp.dependent.len(), 1);
        let (kept, dropped) = if bp.independent.contains(&1) { (1, 3) } else { (3, 1) };
        let row = bp.independent.iter().position(|&c| c == kept).unwrap();
        assert!((bp.combination[(row, dropped)] - 1.0).abs() < 1e-12);
        let bp3 = qr_reduce(&toy_regressor(base), 1e-8).unwrap();
        assert_eq!(bp3.n_base(), 3);
    }

    #[test]
    fn zero_column_is_eliminated() {
        let mut m = DMatrix::from_fn(6, 3, |i, j| ((i * 7 + j * 3) as f64).sin());
        m.column_mut(2).fill(0.0);
        let bp = qr_reduce(&toy_regressor(m), 1e-8).unwrap();
        assert_eq!(bp.eliminated, vec![2]);
        assert_eq!(bp.n_base(), 2);
        assert_eq!(bp.combination.column(2).amax(), 0.0);
    }

    #[test]
    fn bad_tolerance_is_rejected() {
        let m = DMatrix::identity(3, 3);
        assert!(qr_reduce(&toy_regressor(m.clone()), 0.0).is_err());
        assert!(qr_reduce(&toy_regressor(m), -1.0).is_err());
    }

    #[test]
    fn scaling_keeps_combination_in_unscaled_units() {
        let base = DMatrix::from_fn(6, 2, |i, j| ((i + 2 * j) as f64).sin());
        let mut m = base.clone().insert_column(2, 0.0);
        m.set_column(2, &(base.column(0) * 3.0));
        let reg = toy_regressor(m.clone());
        let bp = qr_reduce_scaled(&reg, 1e-8, Some(&[1.0, 2.0, 0.5])).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.2, 0.7]);
        let lhs = &m * &x;
        let rhs = bp.base_regressor(&reg).unwrap() * (&bp.combination * &x);
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn remap_sets_only_independent_entries() {
        let bp = BaseParameterization {
            n_joints: 1,
            columns: (0..24).collect(),
            labels: parameter_labels(1),
            independent: vec![0, 4, 9],
            dependent: vec![],
            eliminated: vec![],
            combination: DMatrix::zeros(3, 24),
            rank_tolerance: 1e-8,
        };
        let full = remap_base_to_full(&bp, &[1.0, 2.0, 3.0]).unwrap();
        for i in 0..24 {
            let expect = match i {
                0 => 1.0,
                4 => 2.0,
                9 => 3.0,
                _ => 0.0,
            };
            assert_eq!(full.get(i), expect);
        }
        let zero = remap_base_to_full(&bp, &[0.0; 3]).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
        assert!(remap_base_to_full(&bp, &[1.0]).is_err());
    }
}
