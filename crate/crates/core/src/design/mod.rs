//! Experiment design over a pool of candidate postures.
//!
//! Each posture contributes an information matrix `I = J_b^T J_b` built from
//! its `3 x N_b` base Jacobian. Information is additive, so the quality of
//! any subset is read from the sum of its matrices through the observability
//! index
//!
//! ```text
//! O1 = det(sum I)^(1 / 2 N_b) / sqrt(k)
//! ```
//!
//! Selection methods: [`iroc_select`] ranks postures by optimal continuous
//! design weights and cuts the ranking where `O1` stops increasing;
//! [`detmax_select`] and [`random_select`] are the baselines.

mod detmax;
mod iroc;
mod weights;

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::identifiability::BaseParameterization;
use crate::kinematics::{JointConfig, KinematicChain};
use crate::linalg::logdet_spd;
use crate::params::{ParameterVector, PlaneParams};
use crate::residual::{residual_jacobian, Dataset};

pub use detmax::{detmax_select, DetmaxOutcome, DetmaxRun};
pub use iroc::{default_k0, iroc_select, IrocOptions};
pub use weights::{optimize_weights, WeightOptions, WeightResult, WeightVector};

/// Per-posture information matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct InfoMatrix {
    pub matrix: DMatrix<f64>,
    pub posture_id: usize,
}

impl InfoMatrix {
    /// Wraps a square matrix, requiring symmetry within `1e-12` relative to its largest entry.
    pub fn new(matrix: DMatrix<f64>, posture_id: usize) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return invalid("information matrix must be square and nonempty");
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return invalid("information matrix has non-finite entries");
        }
        let scale = matrix.amax().max(1.0);
        if (&matrix - matrix.transpose()).amax() > 1e-12 * scale {
            return invalid("information matrix is not symmetric");
        }
        Ok(Self { matrix, posture_id })
    }

    /// `J^T J`, symmetrised.
    pub fn from_jacobian(j: &DMatrix<f64>, posture_id: usize) -> Self {
        let m = j.tr_mul(j);
        let matrix = (&m + m.transpose()) * 0.5;
        Self { matrix, posture_id }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Information matrix of one posture at the nominal model.
pub fn info_matrix(
    chain: &Arc<KinematicChain>,
    plane: &PlaneParams,
    base: &BaseParameterization,
    q: &JointConfig,
    posture_id: usize,
) -> Result<InfoMatrix> {
    let ds = Dataset::with_ids(chain.clone(), *plane, vec![q.clone()], vec![posture_id])?;
    let j = residual_jacobian(&ds, &ParameterVector::zeros(chain.n_joints()), &base.independent_indices())?;
    Ok(InfoMatrix::from_jacobian(&j, posture_id))
}

/// Information matrices for a whole pool, computed in parallel, in pool order.
pub fn pool_info_matrices(
    chain: &Arc<KinematicChain>,
    plane: &PlaneParams,
    base: &BaseParameterization,
    postures: &[JointConfig],
    ids: &[usize],
) -> Result<Vec<InfoMatrix>> {
    if postures.len() != ids.len() {
        return invalid("one id per posture required");
    }
    postures
        .par_iter()
        .zip(ids.par_iter())
        .map(|(q, &id)| info_matrix(chain, plane, base, q, id))
        .collect()
}

pub(crate) fn check_pool(infos: &[InfoMatrix]) -> Result<usize> {
    let first = infos.first().ok_or_else(|| crate::Error::InvalidArgument("empty posture pool".into()))?;
    let n_b = first.dim();
    if infos.iter().any(|i| i.dim() != n_b) {
        return invalid("information matrices differ in size");
    }
    Ok(n_b)
}

/// `O1` from an already summed information matrix over `k` postures; zero when
/// the sum is singular.
pub fn o1_from_sum(sum: &DMatrix<f64>, k: usize) -> f64 {
    let n_b = sum.nrows();
    match logdet_spd(sum) {
        Some(ld) if k > 0 => (ld / (2.0 * n_b as f64)).exp() / (k as f64).sqrt(),
        _ => 0.0,
    }
}

pub(crate) fn sum_of(infos: &[InfoMatrix], members: impl IntoIterator<Item = usize>) -> DMatrix<f64> {
    let n_b = infos[0].dim();
    let mut s = DMatrix::zeros(n_b, n_b);
    for i in members {
        s += &infos[i].matrix;
    }
    s
}

/// Observability index of a set of postures; `k` defaults to the set size.
pub fn o1_index(infos: &[InfoMatrix], k: Option<usize>) -> Result<f64> {
    check_pool(infos)?;
    let k = k.unwrap_or(infos.len());
    if k == 0 {
        return invalid("k must be at least 1");
    }
    Ok(o1_from_sum(&sum_of(infos, 0..infos.len()), k))
}

/// Outcome of a posture selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionResult {
    pub method: String,
    /// Posture ids, best first.
    pub ranked_ids: Vec<usize>,
    pub k_star: usize,
    /// The first `k_star` entries of `ranked_ids`.
    pub selected_ids: Vec<usize>,
    /// `O1` of the selected set.
    pub o1_selected: f64,
    /// `(k, O1)` of ranked prefixes.
    pub o1_curve: Vec<(usize, f64)>,
    /// Final weight per pool posture, in pool order.
    pub weights: Vec<f64>,
    /// Optimiser objective per iteration (log det for IROC, O1 per round for DETMAX).
    pub objective_trace: Vec<f64>,
    pub flags: Vec<String>,
}

/// Uniformly random subset of `m` postures.
pub fn random_select(infos: &[InfoMatrix], m: usize, seed: u64) -> Result<SelectionResult> {
    check_pool(infos)?;
    let n = infos.len();
    if m == 0 || m > n {
        return invalid(format!("subset size {m} must be in 1..={n}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, n, m).into_vec();
    chosen.sort_unstable();
    let o1 = o1_from_sum(&sum_of(infos, chosen.iter().cloned()), m);
    let mut weights = vec![0.0; n];
    for &i in &chosen {
        weights[i] = 1.0 / m as f64;
    }
    let ids: Vec<usize> = chosen.iter().map(|&i| infos[i].posture_id).collect();
    Ok(SelectionResult {
        method: "random".into(),
        ranked_ids: ids.clone(),
        k_star: m,
        selected_ids: ids,
        o1_selected: o1,
        o1_curve: vec![(m, o1)],
        weights,
        objective_trace: vec![o1],
        flags: vec![],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn diag(v: &[f64], id: usize) -> InfoMatrix {
        InfoMatrix::new(DMatrix::from_diagonal(&DVector::from_row_slice(v)), id).unwrap()
    }

    #[test]
    fn o1_of_identity_is_one() {
        assert_eq!(o1_index(&[diag(&[1.0, 1.0], 0)], None).unwrap(), 1.0);
    }

    #[test]
    fn o1_of_diag_4_1() {
        let v = o1_index(&[diag(&[4.0, 1.0], 0)], None).unwrap();
        assert!((v - 2.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn o1_scales_with_square_root_of_data_scale() {
        let a = vec![diag(&[3.0, 0.5, 2.0], 0), diag(&[1.0, 1.5, 0.2], 1)];
        let b: Vec<_> = a
            .iter()
            .map(|i| InfoMatrix::new(&i.matrix * 2.0, i.posture_id).unwrap())
            .collect();
        let ratio = o1_index(&b, None).unwrap() / o1_index(&a, None).unwrap();
        assert!((ratio - 2.0f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn o1_is_zero_when_singular_and_errors_when_empty() {
        assert_eq!(o1_index(&[diag(&[1.0, 0.0], 0)], None).unwrap(), 0.0);
        assert!(o1_index(&[], None).is_err());
        assert!(o1_index(&[diag(&[1.0], 0)], Some(0)).is_err());
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(InfoMatrix::new(m, 0).is_err());
    }

    #[test]
    fn random_select_full_pool_and_determinism() {
        let pool: Vec<_> = (0..6).map(|i| diag(&[1.0 + i as f64, 2.0], i)).collect();
        let all = random_select(&pool, 6, 1).unwrap();
        assert_eq!(all.selected_ids, vec![0, 1, 2, 3, 4, 5]);
        assert!((all.o1_selected - o1_index(&pool, None).unwrap()).abs() < 1e-15);
        assert_eq!(random_select(&pool, 3, 9).unwrap(), random_select(&pool, 3, 9).unwrap());
        assert!(random_select(&pool, 7, 9).is_err());
    }
}
