mod common;

use std::sync::Arc;

use common::{chain, table_plane, table_targets};
use planecal::calibrate::{cross_validate, solve, SolveOptions, StopReason};
use planecal::identifiability::BaseParameterization;
use planecal::posegen::PoolSpec;
use planecal::simulator::{corrupt, make_scenario, recovery_report, DrawRanges, GroundTruth, NoiseModel};
use planecal::{Dataset, KinematicChain};

fn setup() -> (Arc<KinematicChain>, BaseParameterization) {
    let c = chain("arm6r");
    let pool = common::shipped_pool();
    let base = common::contact_base(&c, &table_plane(), &pool.postures);
    (c, base)
}

fn scenario(c: &Arc<KinematicChain>, gt: &GroundTruth, n: usize, seed: u64) -> Dataset {
    let spec = PoolSpec { pool_size: n, seed, projection: Default::default(), balance: None };
    make_scenario(c.clone(), &table_plane(), gt, &table_targets(), &spec).unwrap().0
}

#[test]
fn noiseless_data_is_fit_exactly_with_monotone_cost() {
    let (c, base) = setup();
    for seed in 0..3 {
        let gt = GroundTruth::draw_base(&base, DrawRanges::default(), seed).unwrap();
        let ds = scenario(&c, &gt, 30, 40 + seed);
        let r = solve(&ds, &base, &SolveOptions::default()).unwrap();
        assert!(r.final_cost < 1e-18, "{}", r.final_cost);
        assert!(r.cost_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.condition_number.is_finite() && r.condition_number >= 1.0);
        let rep = recovery_report(&base, &gt, &r).unwrap();
        assert!(rep.max_abs_error < 1e-7);
    }
}

#[test]
fn zero_truth_stops_immediately() {
    let (c, base) = setup();
    let ds = scenario(&c, &GroundTruth::zero(6), 20, 3);
    let r = solve(&ds, &base, &SolveOptions::default()).unwrap();
    assert!(r.initial_cost < 1e-15);
    assert!(matches!(r.stop_reason, StopReason::ZeroCost | StopReason::Gradient));
    assert!(r.dxb_hat.iter().all(|v| v.abs() < 1e-6));
}

#[test]
fn noisy_errors_are_consistent_with_reported_uncertainty() {
    let (c, base) = setup();
    let mut inside = Vec::new();
    for seed in 0..6 {
        let gt = GroundTruth::draw_base(&base, DrawRanges::default(), seed).unwrap();
        let ds = scenario(&c, &gt, 60, 300 + seed);
        let noisy = corrupt(&ds, &NoiseModel { seed, ..Default::default() }).unwrap();
        let r = solve(&noisy, &base, &SolveOptions::default()).unwrap();
        assert!(r.cost_trace.windows(2).all(|w| w[1] <= w[0]));
        let rep = recovery_report(&base, &gt, &r).unwrap();
        inside.push(rep.fraction_within(3.0).unwrap());
    }
    let mean = inside.iter().sum::<f64>() / inside.len() as f64;
    assert!(mean > 0.9, "{inside:?}");
}

#[test]
fn held_out_residuals_shrink() {
    let (c, base) = setup();
    let gt = GroundTruth::draw_base(&base, DrawRanges::default(), 9).unwrap();
    let ds = corrupt(&scenario(&c, &gt, 40, 900), &NoiseModel { seed: 2, ..Default::default() }).unwrap();
    let train = ds.subset(&(0..31).collect::<Vec<_>>()).unwrap();
    let test = ds.subset(&(31..40).collect::<Vec<_>>()).unwrap();
    let cv = cross_validate(&train, &test, &base, &SolveOptions::default()).unwrap();
    assert!(cv.improvement_factor > 2.0);
    assert!(cv.test_after.rms_total() < cv.test_before.rms_total());
}

#[test]
fn mismatched_parameterization_is_rejected() {
    let (_, base) = setup();
    let other = chain("colinear2");
    let ds = Dataset::new(other.clone(), table_plane(), vec![planecal::JointConfig(vec![0.1, 0.2])]).unwrap();
    assert!(solve(&ds, &base, &SolveOptions::default()).is_err());
}
