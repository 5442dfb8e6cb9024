use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_pool, default_k0, o1_from_sum, sum_of, InfoMatrix, SelectionResult};
use crate::error::{invalid, Result};
use crate::linalg::logdet_spd;

const MAX_ROUNDS: usize = 100;

/// One exchange run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetmaxRun {
    pub run: usize,
    /// `O1` of the initial subset and after every round.
    pub trace: Vec<f64>,
    pub rounds: usize,
    pub selected_ids: Vec<usize>,
    pub o1: f64,
    /// `"repeat"` or `"max_rounds"`.
    pub stop: String,
}

#[derive(Clone, Debug)]
pub struct DetmaxOutcome {
    pub best: SelectionResult,
    pub runs: Vec<DetmaxRun>,
}

/// Orders subsets of equal size: nonsingular beats singular, then larger log det.
/// Singular sums are compared through a small ridge.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Score {
    nonsingular: bool,
    logdet: f64,
}

impl Score {
    fn of(sum: &DMatrix<f64>) -> Self {
        match logdet_spd(sum) {
            Some(ld) => Self { nonsingular: true, logdet: ld },
            None => {
                let n = sum.nrows();
                let ridge = 1e-12 * (sum.trace() / n as f64).max(1.0);
                let ld = logdet_spd(&(sum + DMatrix::identity(n, n) * ridge)).unwrap_or(f64::NEG_INFINITY);
                Self { nonsingular: false, logdet: ld }
            }
        }
    }

    fn better_than(&self, other: &Self) -> bool {
        (self.nonsingular, self.logdet) > (other.nonsingular, other.logdet)
    }
}

fn run_once(infos: &[InfoMatrix], m: usize, seed: u64, run: usize) -> (Vec<usize>, DetmaxRun, Score) {
    let n = infos.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    let mut set = rand::seq::index::sample(&mut rng, n, m).into_vec();
    set.sort_unstable();
    let mut member = vec![false; n];
    for &i in &set {
        member[i] = true;
    }
    let mut sum = sum_of(infos, set.iter().cloned());
    let mut seen = HashSet::new();
    seen.insert(set.clone());
    let mut trace = vec![o1_from_sum(&sum, m)];
    let mut stop = "max_rounds";
    let mut rounds = 0;

    while rounds < MAX_ROUNDS {
        rounds += 1;
        let mut add: Option<(usize, Score)> = None;
        for j in (0..n).filter(|&j| !member[j]) {
            let s = Score::of(&(&sum + &infos[j].matrix));
            if add.is_none_or(|(_, b)| s.better_than(&b)) {
                add = Some((j, s));
            }
        }
        let Some((added, _)) = add else {
            break;
        };
        member[added] = true;
        sum += &infos[added].matrix;

        let mut drop: Option<(usize, Score)> = None;
        for i in (0..n).filter(|&i| member[i]) {
            let s = Score::of(&(&sum - &infos[i].matrix));
            if drop.is_none_or(|(_, b)| s.better_than(&b)) {
                drop = Some((i, s));
            }
        }
        let (dropped, _) = drop.expect("set is nonempty");
        member[dropped] = false;
        sum -= &infos[dropped].matrix;
        // exact recomputation keeps round-off from accumulating in long runs
        set = (0..n).filter(|&i| member[i]).collect();
        sum = sum_of(infos, set.iter().cloned());
        trace.push(o1_from_sum(&sum, m));
        if !seen.insert(set.clone()) {
            stop = "repeat";
            break;
        }
    }

    let score = Score::of(&sum);
    let o1 = o1_from_sum(&sum, m);
    let ids = set.iter().map(|&i| infos[i].posture_id).collect();
    let r = DetmaxRun {
        run,
        trace,
        rounds,
        selected_ids: ids,
        o1,
        stop: stop.into(),
    };
    (set, r, score)
}

/// Add/remove exchange heuristic for a fixed subset size `m`, restarted
/// `n_runs` times from random subsets; the best final subset is returned
/// together with every run's trace.
pub fn detmax_select(infos: &[InfoMatrix], m: usize, n_runs: usize, seed: u64) -> Result<DetmaxOutcome> {
    let n_b = check_pool(infos)?;
    let n = infos.len();
    let min_m = default_k0(n_b);
    if m < min_m || m > n {
        return invalid(format!("subset size {m} must be in {min_m}..={n}"));
    }
    if n_runs == 0 {
        return invalid("at least one run is required");
    }

    let mut best: Option<(Vec<usize>, usize, Score)> = None;
    let mut runs = Vec::with_capacity(n_runs);
    for run in 0..n_runs {
        let (set, r, score) = run_once(infos, m, seed, run);
        if best.as_ref().is_none_or(|(_, _, b)| score.better_than(b)) {
            best = Some((set, run, score));
        }
        runs.push(r);
    }
    let (set, best_run, _) = best.expect("n_runs >= 1");
    let r = &runs[best_run];
    let mut weights = vec![0.0; n];
    for &i in &set {
        weights[i] = 1.0 / m as f64;
    }
    let best = SelectionResult {
        method: "detmax".into(),
        ranked_ids: r.selected_ids.clone(),
        k_star: m,
        selected_ids: r.selected_ids.clone(),
        o1_selected: r.o1,
        o1_curve: vec![(m, r.o1)],
        weights,
        objective_trace: r.trace.clone(),
        flags: vec![format!("best_run_{best_run}"), format!("stop_{}", r.stop)],
    };
    Ok(DetmaxOutcome { best, runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::o1_index;

    fn pool(seed: u64) -> Vec<InfoMatrix> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..8)
            .map(|i| {
                let j = DMatrix::from_fn(2, 4, |_, _| rng.random_range(-1.0..1.0));
                InfoMatrix::from_jacobian(&j, i)
            })
            .collect()
    }

    fn exhaustive_best(p: &[InfoMatrix], m: usize) -> f64 {
        let n = p.len();
        let mut best = 0.0f64;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != m {
                continue;
            }
            let s: Vec<_> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| p[i].clone()).collect();
            best = best.max(o1_index(&s, None).unwrap());
        }
        best
    }

    #[test]
    fn matches_exhaustive_optimum_on_small_pools() {
        for seed in 0..5 {
            let p = pool(seed);
            let out = detmax_select(&p, 3, 10, seed).unwrap();
            let opt = exhaustive_best(&p, 3);
            assert!((out.best.o1_selected - opt).abs() <= 1e-12 * opt, "{seed}");
            assert_eq!(out.runs.len(), 10);
        }
    }

    #[test]
    fn whole_pool_when_m_equals_n() {
        let p = pool(1);
        let out = detmax_select(&p, 8, 2, 0).unwrap();
        assert_eq!(out.best.selected_ids, (0..8).collect::<Vec<_>>());
        assert!((out.best.o1_selected - o1_index(&p, None).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_sizes_and_is_deterministic() {
        let p = pool(2);
        assert!(detmax_select(&p, 1, 1, 0).is_err());
        assert!(detmax_select(&p, 9, 1, 0).is_err());
        assert!(detmax_select(&p, 3, 0, 0).is_err());
        let a = detmax_select(&p, 3, 4, 5).unwrap();
        let b = detmax_select(&p, 3, 4, 5).unwrap();
        assert_eq!(a.runs, b.runs);
    }

    #[test]
    fn score_orders_singular_below_nonsingular() {
        let s = Score::of(&DMatrix::from_diagonal_element(2, 2, 1e-6));
        let t = Score::of(&DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0])));
        assert!(s.better_than(&t));
    }
}
