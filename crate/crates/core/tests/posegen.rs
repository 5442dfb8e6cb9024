mod common;

use common::{chain, joint_motion, oracle, table_plane, table_targets, transform};
use nalgebra::Vector3;
use planecal::posegen::{
    build_pool, center_of_mass, contact_constraint, order_route, path_length, project_to_contact_traced, BalanceSpec,
    PoolSpec, ProjectionOptions, SupportPolygon, TargetSpec,
};
use planecal::{Error, JointConfig, KinematicChain, ParameterVector, PlaneParams};
use proptest::prelude::*;

fn spec(n: usize, seed: u64) -> PoolSpec {
    PoolSpec { pool_size: n, seed, projection: ProjectionOptions::default(), balance: None }
}

fn com_oracle(c: &KinematicChain, q: &[f64]) -> Vector3<f64> {
    let md = c.mass_data.as_ref().unwrap();
    let mut t = transform(c.base_placement.to_array());
    let mut acc = Vector3::zeros();
    for (i, cj) in c.joints.iter().enumerate() {
        t *= transform(cj.placement.to_array()) * joint_motion(cj.joint.kind, &cj.joint.axis, q[i]);
        let p = t * md.coms[i].push(1.0);
        acc += p.xyz() * md.masses[i];
    }
    acc / md.masses.iter().sum::<f64>()
}

#[test]
fn shipped_pool_rows_satisfy_contact_and_limits() {
    let c = chain("arm6r");
    let rows = common::shipped_pool();
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(common::fixture_path("arm6r_pool/pool.json")).unwrap()).unwrap();
    let targets: TargetSpec = serde_json::from_value(side["targets"].clone()).unwrap();
    let tids = rows.target_ids.as_ref().unwrap();
    let zero = ParameterVector::zeros(6);
    assert_eq!(rows.len(), 300);
    for (q, &t) in rows.postures.iter().zip(tids) {
        assert!(c.within_limits(q));
        let g = contact_constraint(&c, &table_plane(), &zero, q, targets.targets[t]).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-8), "{g:?}");
        let rel = oracle::relative(&c, &table_plane(), q, &zero);
        assert!((rel[(0, 3)] - targets.targets[t][0]).abs() < 1e-8);
        assert!((rel[(1, 3)] - targets.targets[t][1]).abs() < 1e-8);
        assert!(rel[(2, 3)].abs() < 1e-8 && (rel[(2, 2)] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn pool_build_is_a_pure_function_of_its_inputs() {
    let c = chain("arm6r");
    let a = build_pool(&c, &table_plane(), &table_targets(), &spec(36, 4), None).unwrap();
    let b = build_pool(&c, &table_plane(), &table_targets(), &spec(36, 4), None).unwrap();
    assert_eq!(a.postures, b.postures);
    assert_eq!(a.target_ids, b.target_ids);
    assert_eq!(a.stats, b.stats);
    assert_eq!(a.stats.per_target, vec![2; 18]);
    let other = build_pool(&c, &table_plane(), &table_targets(), &spec(36, 5), None).unwrap();
    assert_ne!(a.postures, other.postures);
}

#[test]
fn projection_strictly_decreases_the_constraint() {
    let c = chain("arm6r");
    let zero = ParameterVector::zeros(6);
    let mut rng = common::rng(17);
    let mut converged = 0;
    for k in 0..40 {
        let q0 = common::random_config(&c, &mut rng);
        let target = table_targets().targets[k % 18];
        let (r, trace) =
            project_to_contact_traced(&c, &table_plane(), &zero, &q0, target, &ProjectionOptions::default()).unwrap();
        assert!(!trace.is_empty());
        assert!(trace.windows(2).all(|w| w[1] < w[0]), "{trace:?}");
        if let Ok(q) = r {
            converged += 1;
            let g = contact_constraint(&c, &table_plane(), &zero, &q, target).unwrap();
            assert!(g.iter().all(|v| v.abs() < 1e-8));
        }
    }
    assert!(converged > 0);
}

#[test]
fn centre_of_mass_matches_oracle() {
    let c = chain("humanoid15");
    let mut rng = common::rng(3);
    for _ in 0..20 {
        let q = common::random_config(&c, &mut rng);
        let got = center_of_mass(&c, &q).unwrap().unwrap();
        assert!((got - com_oracle(&c, &q)).amax() < 1e-12);
    }
    assert!(center_of_mass(&chain("arm6r"), &JointConfig(vec![0.0; 6])).unwrap().is_none());
}

#[test]
fn balanced_pool_keeps_the_margin() {
    let c = chain("humanoid15");
    let plane = PlaneParams { z_c: 0.03, phix_c: std::f64::consts::PI, z_p: 0.8, ..PlaneParams::ZERO };
    let targets = TargetSpec::grid([0.2, 0.45, -0.4, -0.1], 3, 2).unwrap();
    let polygon = vec![[-0.1, -0.15], [0.2, -0.15], [0.2, 0.15], [-0.1, 0.15]];
    let margin = 0.01;
    let mut s = spec(12, 0);
    s.balance = Some(BalanceSpec { polygon: polygon.clone(), margin });
    let pool = match build_pool(&c, &plane, &targets, &s, None) {
        Ok(p) => p,
        Err(Error::PartialPool { pool, .. }) => *pool,
        Err(e) => panic!("{e}"),
    };
    assert!(!pool.is_empty());
    assert!(pool.stats.unbalanced > 0);
    let poly = SupportPolygon::new(&polygon).unwrap();
    for q in &pool.postures {
        let com = com_oracle(&c, q);
        // axis-aligned box: distance to the nearest side
        let inside = (com.x + 0.1).min(0.2 - com.x).min(com.y + 0.15).min(0.15 - com.y);
        assert!(inside >= margin - 1e-12, "{inside}");
        assert!((poly.signed_margin([com.x, com.y]) - inside).abs() < 1e-12);
    }
}

#[test]
fn support_polygon_rejects_non_convex_input() {
    assert!(SupportPolygon::new(&[[0.0, 0.0], [1.0, 0.0]]).is_err());
    assert!(SupportPolygon::new(&[[0.0, 0.0], [1.0, 0.0], [0.2, 0.2], [0.0, 1.0]]).is_err());
    let cw = SupportPolygon::new(&[[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]).unwrap();
    assert!((cw.signed_margin([0.5, 0.5]) - 0.5).abs() < 1e-15);
    assert!((cw.signed_margin([2.0, 0.5]) + 1.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn route_is_a_permutation_no_longer_than_input_order(
        pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..24)
    ) {
        let postures: Vec<JointConfig> = pts.into_iter().map(JointConfig).collect();
        let order = order_route(&postures);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..postures.len()).collect::<Vec<_>>());
        let identity: Vec<usize> = (0..postures.len()).collect();
        prop_assert!(path_length(&postures, &order) <= path_length(&postures, &identity) + 1e-12);
    }
}
