use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_pool, InfoMatrix};
use crate::error::{invalid, Error, Result};

/// Nonnegative weights, one per pool posture, summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return invalid("weights must be finite and nonnegative");
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return invalid(format!("weights sum to {s}, expected 1"));
        }
        Ok(Self(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightOptions {
    /// Stop once `max_i |w_i' - w_i| / max_j w_j'` falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Ridge added to a singular moment matrix.
    pub regularization: f64,
    /// Drop postures that provably carry no weight at the optimum.
    pub eliminate: bool,
}

impl Default for WeightOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 10_000,
            regularization: 1e-12,
            eliminate: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WeightResult {
    pub weights: WeightVector,
    /// `log det(sum w_i I_i)` before the first update and after each one.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the moment matrix needed the ridge at some iteration.
    pub regularized: bool,
    /// Postures removed by the support test.
    pub eliminated: usize,
}

/// Log-determinant and inverse of the moment matrix, ridge-regularised if needed.
fn inverse_and_logdet(m: &DMatrix<f64>, ridge: f64, regularized: &mut bool) -> Result<(DMatrix<f64>, f64)> {
    let attempt = |a: DMatrix<f64>| {
        a.cholesky().and_then(|c| {
            let ld = 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            ld.is_finite().then(|| (c.inverse(), ld))
        })
    };
    if let Some(r) = attempt(m.clone()) {
        return Ok(r);
    }
    *regularized = true;
    let n = m.nrows();
    attempt(m + DMatrix::identity(n, n) * ridge)
        .ok_or_else(|| Error::Singular("moment matrix singular even after regularisation".into()))
}

const NEGLIGIBLE_WEIGHT: f64 = 1e-100;

/// Threshold below which a posture's variance function rules it out of every
/// optimal design, given the current optimality gap `eps = max_i d_i - N_b`.
fn support_threshold(n_b: f64, eps: f64) -> f64 {
    n_b * (1.0 + eps / 2.0 - (eps * (4.0 + eps - 4.0 / n_b)).sqrt() / 2.0)
}

/// Active postures' information matrices, packed upper triangles as columns.
struct Stacked {
    n_b: usize,
    active: Vec<usize>,
    matrix: DMatrix<f64>,
}

/// Row/column pairs of the packed upper triangle, column by column.
fn packed_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(|c| (0..=c).map(move |r| (r, c)))
}

impl Stacked {
    fn new(infos: &[InfoMatrix], active: Vec<usize>) -> Self {
        let n_b = infos[0].dim();
        let pairs: Vec<_> = packed_pairs(n_b).collect();
        let matrix = DMatrix::from_fn(pairs.len(), active.len(), |k, c| {
            let (r, cc) = pairs[k];
            infos[active[c]].matrix[(r, cc)]
        });
        Self { n_b, active, matrix }
    }

    fn moment(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let mut packed = DVector::zeros(self.matrix.nrows());
        packed.gemv(1.0, &self.matrix, w, 0.0);
        let mut m = DMatrix::zeros(self.n_b, self.n_b);
        for ((r, c), v) in packed_pairs(self.n_b).zip(packed.iter()) {
            m[(r, c)] = *v;
            m[(c, r)] = *v;
        }
        m
    }

    /// `tr(M^-1 I_i)` for every active posture.
    fn variances(&self, m_inv: &DMatrix<f64>) -> DVector<f64> {
        let weights = DVector::from_iterator(
            self.matrix.nrows(),
            packed_pairs(self.n_b).map(|(r, c)| if r == c { m_inv[(r, c)] } else { 2.0 * m_inv[(r, c)] }),
        );
        let mut d = DVector::zeros(self.active.len());
        d.gemv_tr(1.0, &self.matrix, &weights, 0.0);
        d
    }
}

/// Maximises `log det(sum w_i I_i)` over the probability simplex with the
/// multiplicative update `w_i <- w_i tr(M^-1 I_i) / N_b`, starting from random
/// positive weights. The update is an ascent method for this concave objective
/// and keeps the weights on the simplex. With `eliminate`, postures failing the
/// support test are dropped (weight zero) whenever that does not lower the
/// objective.
pub fn optimize_weights(infos: &[InfoMatrix], seed: u64, options: &WeightOptions) -> Result<WeightResult> {
    let n_b = check_pool(infos)?;
    let n = infos.len();
    let nb = n_b as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init: Vec<f64> = (0..n).map(|_| 1.0 - rng.random::<f64>()).collect();
    let total: f64 = init.iter().sum();
    let mut stacked = Stacked::new(infos, (0..n).collect());
    let mut w = DVector::from_iterator(n, init.iter().map(|v| v / total));

    let mut regularized = false;
    let (mut m_inv, mut ld) = inverse_and_logdet(&stacked.moment(&w), options.regularization, &mut regularized)?;
    let mut trace = vec![ld];
    let mut iterations = 0;
    let mut converged = false;
    let mut eliminated = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        let d = stacked.variances(&m_inv);
        let mut w_new = w.component_mul(&d) / nb;
        // weights this small change nothing and would decay into subnormals
        w_new.iter_mut().for_each(|v| {
            if !(*v > NEGLIGIBLE_WEIGHT) {
                *v = 0.0;
            }
        });
        w_new /= w_new.sum();
        let change = (&w_new - &w).amax() / w_new.max();
        let (mut inv_new, mut ld_new) = inverse_and_logdet(&stacked.moment(&w_new), options.regularization, &mut regularized)?;

        if options.eliminate {
            let eps = (d.max() - nb).max(0.0);
            let h = support_threshold(nb, eps);
            let keep: Vec<usize> = (0..d.len()).filter(|&i| d[i] >= h).collect();
            if keep.len() < d.len() && !keep.is_empty() {
                let mut w_keep = DVector::from_iterator(keep.len(), keep.iter().map(|&i| w_new[i]));
                w_keep /= w_keep.sum();
                let shrunk = Stacked::new(infos, keep.iter().map(|&i| stacked.active[i]).collect());
                let mut reg = false;
                if let Ok((inv_k, ld_k)) = inverse_and_logdet(&shrunk.moment(&w_keep), options.regularization, &mut reg) {
                    if !reg && ld_k >= ld_new {
                        eliminated += d.len() - keep.len();
                        stacked = shrunk;
                        w_new = w_keep;
                        inv_new = inv_k;
                        ld_new = ld_k;
                    }
                }
            }
        }

        w = w_new;
        m_inv = inv_new;
        ld = ld_new;
        trace.push(ld);
        if change < options.tolerance {
            converged = true;
            break;
        }
    }

    let mut full = vec![0.0; n];
    for (k, &i) in stacked.active.iter().enumerate() {
        full[i] = w[k];
    }
    Ok(WeightResult {
        weights: WeightVector(full),
        objective_trace: trace,
        iterations,
        converged,
        regularized,
        eliminated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64], id: usize) -> InfoMatrix {
        InfoMatrix::new(DMatrix::from_diagonal(&DVector::from_row_slice(v)), id).unwrap()
    }

    fn logdet_at(infos: &[InfoMatrix], w: &[f64]) -> f64 {
        let mut m = DMatrix::zeros(infos[0].dim(), infos[0].dim());
        for (i, wi) in infos.iter().zip(w) {
            m += &i.matrix * *wi;
        }
        m.determinant().ln()
    }

    #[test]
    fn symmetric_two_design_is_half_half() {
        let pool = [diag(&[1.0, 0.0], 0), diag(&[0.0, 1.0], 1)];
        let r = optimize_weights(&pool, 5, &WeightOptions::default()).unwrap();
        let w = r.weights.as_slice();
        assert!((w[0] - 0.5).abs() < 1e-9 && (w[1] - 0.5).abs() < 1e-9);
        // grid-search oracle over w_1
        let best = (1..1000)
            .map(|i| i as f64 / 1000.0)
            .max_by(|a, b| {
                logdet_at(&pool, &[*a, 1.0 - a])
                    .partial_cmp(&logdet_at(&pool, &[*b, 1.0 - b]))
                    .unwrap()
            })
            .unwrap();
        assert!((best - 0.5).abs() < 1e-3);
    }

    #[test]
    fn duplicated_direction_shares_mass() {
        let pool = [diag(&[1.0, 0.0], 0), diag(&[1.0, 0.0], 1), diag(&[0.0, 1.0], 2)];
        let r = optimize_weights(&pool, 2, &WeightOptions::default()).unwrap();
        let w = r.weights.as_slice();
        assert!((w[0] + w[1] - 0.5).abs() < 1e-8);
        assert!((w[2] - 0.5).abs() < 1e-8);
        let two = [diag(&[1.0, 0.0], 0), diag(&[0.0, 1.0], 1)];
        assert!((r.objective_trace.last().unwrap() - logdet_at(&two, &[0.5, 0.5])).abs() < 1e-8);
    }

    #[test]
    fn objective_never_decreases_and_weights_stay_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pool: Vec<_> = (0..7)
            .map(|i| {
                let j = DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
                InfoMatrix::from_jacobian(&j, i)
            })
            .collect();
        for eliminate in [false, true] {
            let opts = WeightOptions { eliminate, ..Default::default() };
            let r = optimize_weights(&pool, 11, &opts).unwrap();
            for pair in r.objective_trace.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-12 * pair[0].abs().max(1.0));
            }
        }
        let r = optimize_weights(&pool, 11, &WeightOptions::default()).unwrap();
        for pair in r.objective_trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-12 * pair[0].abs().max(1.0));
        }
        let s: f64 = r.weights.as_slice().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(WeightVector::new(vec![0.5, 0.6]).is_err());
    }

    #[test]
    fn elimination_keeps_the_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pool: Vec<_> = (0..40)
            .map(|i| InfoMatrix::from_jacobian(&DMatrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0)), i))
            .collect();
        let a = optimize_weights(&pool, 1, &WeightOptions { eliminate: false, max_iterations: 200_000, ..Default::default() }).unwrap();
        let b = optimize_weights(&pool, 1, &WeightOptions::default()).unwrap();
        assert!(b.eliminated > 0);
        let fa = *a.objective_trace.last().unwrap();
        let fb = *b.objective_trace.last().unwrap();
        assert!((fa - fb).abs() < 1e-6, "{fa} {fb}");
    }

    #[test]
    fn support_threshold_is_n_b_at_the_optimum() {
        assert_eq!(support_threshold(5.0, 0.0), 5.0);
        assert!(support_threshold(5.0, 1.0) < 5.0);
    }

    #[test]
    fn singular_pool_is_regularised() {
        let pool = [diag(&[1.0, 0.0], 0), diag(&[2.0, 0.0], 1)];
        let r = optimize_weights(&pool, 1, &WeightOptions { max_iterations: 5, ..Default::default() }).unwrap();
        assert!(r.regularized);
    }
}
