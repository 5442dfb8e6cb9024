use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{check_pool, o1_from_sum, optimize_weights, InfoMatrix, SelectionResult, WeightOptions};
use crate::error::{invalid, Error, Result};

/// Relative slack under which a prefix `O1` counts as not increasing.
const NON_INCREASE_RTOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrocOptions {
    /// First prefix size considered; defaults to `ceil(N_b / 3)`.
    pub k0: Option<usize>,
    /// Stop only after two consecutive non-increases.
    pub smoothed: bool,
    /// Keep evaluating prefixes up to the whole pool after the stop is found.
    pub full_curve: bool,
    pub weights: WeightOptions,
}

impl Default for IrocOptions {
    fn default() -> Self {
        Self {
            k0: None,
            smoothed: false,
            full_curve: true,
            weights: WeightOptions::default(),
        }
    }
}

/// Smallest prefix size that can give a nonsingular sum: three rows per posture.
pub fn default_k0(n_base: usize) -> usize {
    n_base.div_ceil(3).max(1)
}

/// Ranks pool positions by weight descending, ties by posture id ascending.
fn rank_by_weight(infos: &[InfoMatrix], w: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..infos.len()).collect();
    order.sort_by(|&a, &b| {
        w[b].total_cmp(&w[a])
            .then(infos[a].posture_id.cmp(&infos[b].posture_id))
    });
    order
}

/// Continuous-relaxation posture selection: optimise design weights, rank
/// postures by weight and take the longest ranked prefix over which `O1`
/// keeps increasing, starting from `k0`.
pub fn iroc_select(infos: &[InfoMatrix], options: &IrocOptions, seed: u64) -> Result<SelectionResult> {
    let n_b = check_pool(infos)?;
    let n = infos.len();
    let min_k0 = default_k0(n_b);
    let k0 = options.k0.unwrap_or(min_k0);
    if k0 < min_k0 {
        return invalid(format!("k0 = {k0} is below the minimum {min_k0} for {n_b} base parameters"));
    }
    if k0 > n {
        return invalid(format!("k0 = {k0} exceeds the pool size {n}"));
    }

    let wr = optimize_weights(infos, seed, &options.weights)?;
    let w = wr.weights.as_slice();
    let order = rank_by_weight(infos, w);

    let mut flags = Vec::new();
    if wr.regularized {
        flags.push("weights_regularized".to_string());
    }
    if !wr.converged {
        flags.push(format!("weights_not_converged_after_{}", wr.iterations));
    }

    let mut sum = DMatrix::zeros(n_b, n_b);
    for &i in &order[..k0 - 1] {
        sum += &infos[i].matrix;
    }
    let mut curve: Vec<(usize, f64)> = Vec::new();
    let mut start = None;
    let mut k_star = None;
    let mut pending_dip = None;
    for k in k0..=n {
        sum += &infos[order[k - 1]].matrix;
        let v = o1_from_sum(&sum, k);
        curve.push((k, v));
        match start {
            None => {
                if v > 0.0 {
                    start = Some(k);
                    if k > k0 {
                        flags.push(format!("singular_start_grown_to_{k}"));
                    }
                }
            }
            Some(_) if k_star.is_none() => {
                let prev = curve[curve.len() - 2].1;
                if v <= prev * (1.0 + NON_INCREASE_RTOL) {
                    if !options.smoothed {
                        k_star = Some(k - 1);
                    } else if let Some(first) = pending_dip {
                        k_star = Some(first - 1);
                    } else {
                        pending_dip = Some(k);
                    }
                } else {
                    pending_dip = None;
                }
            }
            Some(_) => {}
        }
        if k_star.is_some() && !options.full_curve {
            break;
        }
    }
    if start.is_none() {
        return Err(Error::Singular("information summed over the whole pool is singular".into()));
    }
    let k_star = k_star.unwrap_or(n);
    let o1_selected = curve[k_star - k0].1;
    let ranked_ids: Vec<usize> = order.iter().map(|&i| infos[i].posture_id).collect();

    Ok(SelectionResult {
        method: "iroc".into(),
        selected_ids: ranked_ids[..k_star].to_vec(),
        ranked_ids,
        k_star,
        o1_selected,
        o1_curve: curve,
        weights: w.to_vec(),
        objective_trace: wr.objective_trace,
        flags,
    })
}
