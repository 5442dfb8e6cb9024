//! Contact posture generation.
//!
//! A random in-limit configuration is pulled onto the contact constraint by
//! Gauss-Newton: the contact frame must lie on the plane (z, roll, pitch of
//! `R_c` in `R_p` all zero) with its origin at a requested `(x, y)` target.
//! Yaw about the plane normal is left free.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::identifiability::random_config;
use crate::kinematics::{FactorChain, JointConfig, KinematicChain};
use crate::params::{ParameterVector, PlaneParams};
use crate::residual::{partial_pose_derivative, triple_from_relative, RelativeContact};

const CONSTRAINT_DIM: usize = 5;

/// Attempts allowed per requested posture before a pool is declared partial.
pub const ATTEMPTS_PER_POSTURE: usize = 100;

/// Contact targets on the plane, in plane coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub targets: Vec<[f64; 2]>,
    /// Postures per target. Defaults to an even split of the pool size,
    /// remainder going to the first targets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quotas: Option<Vec<usize>>,
    /// `[x_min, x_max, y_min, y_max]`; every target must lie inside.
    pub workspace: [f64; 4],
}

impl TargetSpec {
    /// `nx x ny` grid spanning the workspace box, row by row in y.
    pub fn grid(workspace: [f64; 4], nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return invalid("grid needs at least one target per axis");
        }
        let lerp = |lo: f64, hi: f64, i: usize, n: usize| {
            if n == 1 {
                0.5 * (lo + hi)
            } else if i + 1 == n {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        };
        let mut targets = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                targets.push([lerp(workspace[0], workspace[1], i, nx), lerp(workspace[2], workspace[3], j, ny)]);
            }
        }
        let spec = Self { targets, quotas: None, workspace };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let [x0, x1, y0, y1] = self.workspace;
        if !(x0 <= x1 && y0 <= y1) {
            return invalid("workspace box is empty");
        }
        if self.targets.is_empty() {
            return invalid("no contact targets");
        }
        for (i, t) in self.targets.iter().enumerate() {
            if !(t[0] >= x0 && t[0] <= x1 && t[1] >= y0 && t[1] <= y1) {
                return invalid(format!("target {i} ({}, {}) lies outside the workspace box", t[0], t[1]));
            }
        }
        if let Some(q) = &self.quotas {
            if q.len() != self.targets.len() {
                return invalid("one quota per target required");
            }
        }
        Ok(())
    }

    /// Per-target counts for a pool of `n`. Explicit quotas are consumed in
    /// target order until `n` is reached and must add up to at least `n`.
    pub fn quotas_for(&self, n: usize) -> Result<Vec<usize>> {
        let t = self.targets.len();
        match &self.quotas {
            None => Ok((0..t).map(|i| n / t + usize::from(i < n % t)).collect()),
            Some(q) => {
                if q.iter().sum::<usize>() < n {
                    return invalid(format!("quotas add up to less than the pool size {n}"));
                }
                let mut left = n;
                Ok(q.iter()
                    .map(|&c| {
                        let take = c.min(left);
                        left -= take;
                        take
                    })
                    .collect())
            }
        }
    }
}

/// Gauss-Newton settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the infinity norm of the constraint.
    pub tolerance: f64,
    /// Step halvings tried before an iteration counts as diverged.
    pub max_halvings: usize,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-8,
            max_halvings: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceSpec {
    /// Convex support polygon in base `(x, y)`.
    pub polygon: Vec<[f64; 2]>,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub pool_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub projection: ProjectionOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balance: Option<BalanceSpec>,
}

/// Why a sampled configuration did not make it into the pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rejection {
    /// No step reduced the constraint, or the orientation became degenerate.
    Diverged,
    /// Converged outside the joint limits.
    Limits,
    MaxIter,
    Unbalanced,
    /// Refused by the caller's feasibility predicate.
    Infeasible,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoolStats {
    pub attempts: usize,
    pub accepted: usize,
    pub diverged: usize,
    pub limits: usize,
    pub max_iter: usize,
    pub unbalanced: usize,
    pub infeasible: usize,
    /// Accepted postures per target.
    pub per_target: Vec<usize>,
    /// Balance was requested but the chain carries no mass data.
    pub balance_skipped: bool,
}

impl PoolStats {
    fn record(&mut self, r: Rejection) {
        match r {
            Rejection::Diverged => self.diverged += 1,
            Rejection::Limits => self.limits += 1,
            Rejection::MaxIter => self.max_iter += 1,
            Rejection::Unbalanced => self.unbalanced += 1,
            Rejection::Infeasible => self.infeasible += 1,
        }
    }

    fn merge(&mut self, o: &PoolStats) {
        self.attempts += o.attempts;
        self.accepted += o.accepted;
        self.diverged += o.diverged;
        self.limits += o.limits;
        self.max_iter += o.max_iter;
        self.unbalanced += o.unbalanced;
        self.infeasible += o.infeasible;
        self.balance_skipped |= o.balance_skipped;
    }
}

/// Accepted contact postures. Posture ids are positions in this pool.
#[derive(Clone, Debug, PartialEq)]
pub struct PosturePool {
    pub postures: Vec<JointConfig>,
    pub target_ids: Vec<usize>,
    pub stats: PoolStats,
}

impl PosturePool {
    pub fn len(&self) -> usize {
        self.postures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.postures.is_empty()
    }

    pub fn ids(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

/// Caller-supplied check, e.g. collision avoidance.
pub type Feasibility = dyn Fn(&JointConfig) -> bool + Sync;

struct ContactProblem<'a> {
    chain: &'a KinematicChain,
    plane: &'a PlaneParams,
    params: &'a ParameterVector,
    target: [f64; 2],
}

impl ContactProblem<'_> {
    fn evaluate(&self, q: &[f64]) -> Option<(DVector<f64>, RelativeContact)> {
        if q.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let rc = RelativeContact::evaluate(self.chain, self.plane, q, self.params);
        let t = triple_from_relative(&rc.relative, 0).ok()?;
        let rel = &rc.relative;
        let g = DVector::from_vec(vec![
            t.z,
            t.roll,
            t.pitch,
            rel[(0, 3)] - self.target[0],
            rel[(1, 3)] - self.target[1],
        ]);
        Some((g, rc))
    }

    fn jacobian(&self, rc: &RelativeContact) -> DMatrix<f64> {
        let n = self.chain.n_joints();
        let mut j = DMatrix::zeros(CONSTRAINT_DIM, n);
        for i in 0..n {
            let d = rc.plane_inv * rc.factors.motion_partial(self.chain, i);
            let angular = partial_pose_derivative(&rc.relative, &d);
            j[(0, i)] = angular[0];
            j[(1, i)] = angular[1];
            j[(2, i)] = angular[2];
            j[(3, i)] = d[(0, 3)];
            j[(4, i)] = d[(1, 3)];
        }
        j
    }
}

/// Constraint value `(z, roll, pitch, x - t_x, y - t_y)` at `q` under `params`.
pub fn contact_constraint(
    chain: &KinematicChain,
    plane: &PlaneParams,
    params: &ParameterVector,
    q: &JointConfig,
    target: [f64; 2],
) -> Result<[f64; 5]> {
    chain.check_config(q)?;
    chain.check_params(params)?;
    let rc = RelativeContact::evaluate(chain, plane, q, params);
    let t = triple_from_relative(&rc.relative, 0)?;
    let rel = rc.relative;
    Ok([t.z, t.roll, t.pitch, rel[(0, 3)] - target[0], rel[(1, 3)] - target[1]])
}

/// Gauss-Newton projection of `q0` onto the contact constraint. Each step is
/// the minimum-norm least-squares step, halved until the squared constraint
/// norm decreases.
pub fn project_to_contact(
    chain: &KinematicChain,
    plane: &PlaneParams,
    params: &ParameterVector,
    q0: &JointConfig,
    target: [f64; 2],
    opts: &ProjectionOptions,
) -> Result<std::result::Result<JointConfig, Rejection>> {
    Ok(project_to_contact_traced(chain, plane, params, q0, target, opts)?.0)
}

/// [`project_to_contact`], also returning `||g||^2` at the start and after
/// every accepted step.
pub fn project_to_contact_traced(
    chain: &KinematicChain,
    plane: &PlaneParams,
    params: &ParameterVector,
    q0: &JointConfig,
    target: [f64; 2],
    opts: &ProjectionOptions,
) -> Result<(std::result::Result<JointConfig, Rejection>, Vec<f64>)> {
    chain.check_config(q0)?;
    chain.check_params(params)?;
    let problem = ContactProblem { chain, plane, params, target };
    let mut q = DVector::from_column_slice(q0);
    let Some((mut g, mut rc)) = problem.evaluate(q.as_slice()) else {
        return Ok((Err(Rejection::Diverged), vec![]));
    };
    let mut trace = vec![g.norm_squared()];
    let mut iterations = 0;
    loop {
        if g.amax() < opts.tolerance {
            let q = JointConfig(q.iter().cloned().collect());
            let r = if chain.within_limits(&q) { Ok(q) } else { Err(Rejection::Limits) };
            return Ok((r, trace));
        }
        if iterations == opts.max_iterations {
            return Ok((Err(Rejection::MaxIter), trace));
        }
        iterations += 1;
        let j = problem.jacobian(&rc);
        let Ok(step) = j.svd(true, true).solve(&(-&g), 1e-12) else {
            return Ok((Err(Rejection::Diverged), trace));
        };
        let current = g.norm_squared();
        let mut alpha = 1.0;
        let mut next = None;
        for _ in 0..=opts.max_halvings {
            let trial = &q + &step * alpha;
            if let Some((gt, rct)) = problem.evaluate(trial.as_slice()) {
                if gt.norm_squared() < current {
                    next = Some((trial, gt, rct));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match next {
            Some((qn, gn, rcn)) => {
                q = qn;
                g = gn;
                rc = rcn;
                trace.push(g.norm_squared());
            }
            None => return Ok((Err(Rejection::Diverged), trace)),
        }
    }
}

/// Draws a uniform in-limit configuration from `seed` and projects it.
pub fn sample_and_project(
    chain: &KinematicChain,
    plane: &PlaneParams,
    params: &ParameterVector,
    target: [f64; 2],
    seed: u64,
    opts: &ProjectionOptions,
) -> Result<std::result::Result<JointConfig, Rejection>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q0 = random_config(chain, &mut rng);
    project_to_contact(chain, plane, params, &q0, target, opts)
}

/// Seed of attempt `attempt` for target `target`, independent of scheduling.
pub fn attempt_seed(pool_seed: u64, target: usize, attempt: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(pool_seed);
    rng.set_stream(((target as u64) << 32) | attempt as u64);
    rng.next_u64()
}

/// Builds a pool at the nominal model.
pub fn build_pool(
    chain: &KinematicChain,
    plane: &PlaneParams,
    tspec: &TargetSpec,
    pspec: &PoolSpec,
    feasible: Option<&Feasibility>,
) -> Result<PosturePool> {
    build_pool_under(chain, plane, &ParameterVector::zeros(chain.n_joints()), tspec, pspec, feasible)
}

/// Builds a pool whose postures satisfy the contact constraint under the
/// parameter variations `params`. Targets are processed in parallel, each
/// with its own attempt budget of `ATTEMPTS_PER_POSTURE` per requested posture.
pub fn build_pool_under(
    chain: &KinematicChain,
    plane: &PlaneParams,
    params: &ParameterVector,
    tspec: &TargetSpec,
    pspec: &PoolSpec,
    feasible: Option<&Feasibility>,
) -> Result<PosturePool> {
    tspec.validate()?;
    chain.check_params(params)?;
    plane.check_finite()?;
    if pspec.pool_size == 0 {
        return invalid("pool size must be at least 1");
    }
    let polygon = match &pspec.balance {
        Some(b) => Some((SupportPolygon::new(&b.polygon)?, b.margin)),
        None => None,
    };
    let quotas = tspec.quotas_for(pspec.pool_size)?;

    let per_target: Vec<Result<(Vec<JointConfig>, PoolStats)>> = quotas
        .par_iter()
        .enumerate()
        .map(|(t, &quota)| {
            let mut found = Vec::with_capacity(quota);
            let mut stats = PoolStats::default();
            let target = tspec.targets[t];
            let mut attempt = 0;
            while found.len() < quota && attempt < ATTEMPTS_PER_POSTURE * quota {
                let seed = attempt_seed(pspec.seed, t, attempt);
                attempt += 1;
                stats.attempts += 1;
                let q = match sample_and_project(chain, plane, params, target, seed, &pspec.projection)? {
                    Ok(q) => q,
                    Err(r) => {
                        stats.record(r);
                        continue;
                    }
                };
                if let Some((poly, margin)) = &polygon {
                    match balance_check(chain, &q, poly, *margin)? {
                        BalanceStatus::Balanced => {}
                        BalanceStatus::Unbalanced => {
                            stats.record(Rejection::Unbalanced);
                            continue;
                        }
                        BalanceStatus::NotApplicable => stats.balance_skipped = true,
                    }
                }
                if feasible.is_some_and(|f| !f(&q)) {
                    stats.record(Rejection::Infeasible);
                    continue;
                }
                stats.accepted += 1;
                found.push(q);
            }
            Ok((found, stats))
        })
        .collect();

    let mut pool = PosturePool {
        postures: Vec::with_capacity(pspec.pool_size),
        target_ids: Vec::with_capacity(pspec.pool_size),
        stats: PoolStats::default(),
    };
    for (t, r) in per_target.into_iter().enumerate() {
        let (found, stats) = r?;
        pool.stats.merge(&stats);
        pool.stats.per_target.push(found.len());
        pool.target_ids.extend(std::iter::repeat_n(t, found.len()));
        pool.postures.extend(found);
    }
    if pool.len() < pspec.pool_size {
        return Err(Error::PartialPool {
            requested: pspec.pool_size,
            pool: Box::new(pool),
        });
    }
    Ok(pool)
}

/// Convex polygon, stored counter-clockwise.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportPolygon {
    vertices: Vec<[f64; 2]>,
}

impl SupportPolygon {
    pub fn new(vertices: &[[f64; 2]]) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return invalid("support polygon needs at least three vertices");
        }
        let cross = |i: usize| {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        };
        let signs: Vec<f64> = (0..n).map(cross).collect();
        let ccw = signs.iter().all(|&s| s > 0.0);
        let cw = signs.iter().all(|&s| s < 0.0);
        if !ccw && !cw {
            return invalid("support polygon must be strictly convex");
        }
        let mut v = vertices.to_vec();
        if cw {
            v.reverse();
        }
        Ok(Self { vertices: v })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    /// Distance from `p` to the nearest edge line, positive inside.
    pub fn signed_margin(&self, p: [f64; 2]) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let a = self.vertices[i];
                let b = self.vertices[(i + 1) % n];
                let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
                let len = dx.hypot(dy);
                // inward normal of a counter-clockwise edge is (-dy, dx)
                (-dy * (p[0] - a[0]) + dx * (p[1] - a[1])) / len
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BalanceStatus {
    Balanced,
    Unbalanced,
    /// The chain carries no mass data.
    NotApplicable,
}

/// Whole-chain centre of mass in the base frame, or `None` without mass data
/// or with zero total mass.
pub fn center_of_mass(chain: &KinematicChain, q: &JointConfig) -> Result<Option<Vector3<f64>>> {
    chain.check_config(q)?;
    let Some(md) = &chain.mass_data else {
        return Ok(None);
    };
    let total: f64 = md.masses.iter().sum();
    if total <= 0.0 {
        return Ok(None);
    }
    let fc = FactorChain::build(chain, q, &ParameterVector::zeros(chain.n_joints()), None);
    let mut acc = Vector3::zeros();
    for (i, (m, c)) in md.masses.iter().zip(&md.coms).enumerate() {
        let pos = FactorChain::motion_position(i);
        let frame = fc.prefix[pos] * fc.factors[pos];
        let p = frame.fixed_view::<3, 3>(0, 0) * c + frame.fixed_view::<3, 1>(0, 3);
        acc += p * *m;
    }
    Ok(Some(acc / total))
}

/// Quasi-static balance: the CoM projection must sit inside the support
/// polygon by at least `margin`. The comparison is `distance >= margin`.
pub fn balance_check(
    chain: &KinematicChain,
    q: &JointConfig,
    polygon: &SupportPolygon,
    margin: f64,
) -> Result<BalanceStatus> {
    Ok(match center_of_mass(chain, q)? {
        None => BalanceStatus::NotApplicable,
        Some(c) if polygon.signed_margin([c.x, c.y]) >= margin => BalanceStatus::Balanced,
        Some(_) => BalanceStatus::Unbalanced,
    })
}

fn joint_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Joint-space length of the open path visiting `postures` in `order`.
pub fn path_length(postures: &[JointConfig], order: &[usize]) -> f64 {
    order
        .windows(2)
        .map(|w| joint_distance(&postures[w[0]], &postures[w[1]]))
        .sum()
}

const MAX_NN_STARTS: usize = 64;

fn nearest_neighbour(d: &DMatrix<f64>, start: usize) -> Vec<usize> {
    let n = d.nrows();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut cur = start;
    visited[cur] = true;
    order.push(cur);
    for _ in 1..n {
        let next = (0..n)
            .filter(|&j| !visited[j])
            .min_by(|&a, &b| d[(cur, a)].total_cmp(&d[(cur, b)]))
            .expect("unvisited node remains");
        visited[next] = true;
        order.push(next);
        cur = next;
    }
    order
}

/// Open-path 2-opt: reverses any segment, including ones touching an end,
/// while that shortens the path.
fn two_opt(d: &DMatrix<f64>, order: &mut [usize]) {
    let n = order.len();
    let edge = |order: &[usize], a: Option<usize>, b: Option<usize>| match (a, b) {
        (Some(a), Some(b)) => d[(order[a], order[b])],
        _ => 0.0,
    };
    loop {
        let mut improved = false;
        for i in 0..n {
            for j in i + 1..n {
                let before = i.checked_sub(1);
                let after = (j + 1 < n).then_some(j + 1);
                let old = edge(order, before, Some(i)) + edge(order, Some(j), after);
                let new = edge(order, before, Some(j)) + edge(order, Some(i), after);
                if new < old - 1e-12 {
                    order[i..=j].reverse();
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// Visiting order for a set of postures that shortens joint-space travel:
/// nearest-neighbour tours refined by 2-opt. The input order is kept unless
/// a strictly shorter one is found.
pub fn order_route(postures: &[JointConfig]) -> Vec<usize> {
    let n = postures.len();
    let identity: Vec<usize> = (0..n).collect();
    if n < 3 {
        return identity;
    }
    let d = DMatrix::from_fn(n, n, |i, j| joint_distance(&postures[i], &postures[j]));
    let len = |o: &[usize]| o.windows(2).map(|w| d[(w[0], w[1])]).sum::<f64>();
    let starts: Vec<usize> = if n <= MAX_NN_STARTS {
        identity.clone()
    } else {
        (0..MAX_NN_STARTS).map(|k| k * n / MAX_NN_STARTS).collect()
    };
    let mut best_nn = nearest_neighbour(&d, starts[0]);
    let mut best_nn_len = len(&best_nn);
    for &s in &starts[1..] {
        let o = nearest_neighbour(&d, s);
        let l = len(&o);
        if l < best_nn_len {
            best_nn = o;
            best_nn_len = l;
        }
    }
    let mut candidates = vec![best_nn, identity.clone()];
    for c in candidates.iter_mut() {
        two_opt(&d, c);
    }
    let mut best = identity;
    let mut best_len = path_length(postures, &best);
    for c in candidates {
        let l = path_length(postures, &c);
        if l < best_len {
            best = c;
            best_len = l;
        }
    }
    best
}
