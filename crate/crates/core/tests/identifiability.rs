mod common;

use common::{chain, random_params, rng, table_plane};
use nalgebra::DVector;
use planecal::identifiability::{
    build_random_regressor, qr_reduce, remap_base_to_full, Regressor, DEFAULT_RANK_TOL,
};
use planecal::linalg::svd_rank;
use planecal::{stack_residuals, Dataset};
use proptest::prelude::*;

fn full_vector(p: &planecal::ParameterVector, cols: &[usize]) -> DVector<f64> {
    DVector::from_iterator(cols.len(), cols.iter().map(|&c| p.get(c)))
}

#[test]
fn base_regressor_has_full_column_rank() {
    for name in ["arm6r", "humanoid15", "colinear2"] {
        let c = chain(name);
        let reg = build_random_regressor(&c, &table_plane(), 60, 3).unwrap();
        let base = qr_reduce(&reg, DEFAULT_RANK_TOL).unwrap();
        let rb = base.base_regressor(&reg).unwrap();
        let sv = rb.clone().svd(false, false).singular_values;
        assert!(sv.min() > DEFAULT_RANK_TOL * sv.max(), "{name}");
        assert_eq!(base.n_base(), svd_rank(&reg.matrix, DEFAULT_RANK_TOL), "{name}");
    }
}

#[test]
fn reduction_is_idempotent() {
    for name in ["arm6r", "humanoid15"] {
        let c = chain(name);
        let reg = build_random_regressor(&c, &table_plane(), 60, 1).unwrap();
        let base = qr_reduce(&reg, DEFAULT_RANK_TOL).unwrap();
        let again = qr_reduce(&reg.select_columns(&base.independent).unwrap(), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(again.n_base(), base.n_base());
        assert!(again.dependent.is_empty() && again.eliminated.is_empty());
        assert_eq!(again.independent_labels(), base.independent_labels());
    }
}

#[test]
fn humanoid_base_count_is_seed_stable() {
    let c = chain("humanoid15");
    let counts: Vec<usize> = (0..5)
        .map(|s| qr_reduce(&build_random_regressor(&c, &table_plane(), 80, s).unwrap(), DEFAULT_RANK_TOL).unwrap().n_base())
        .collect();
    println!("15-joint fixture base parameter counts: {counts:?}");
    assert!(counts.iter().all(|n| *n == counts[0]));
}

#[test]
fn rejects_bad_inputs() {
    let c = chain("arm6r");
    assert!(build_random_regressor(&c, &table_plane(), 2, 0).is_err());
    let reg = build_random_regressor(&c, &table_plane(), 30, 0).unwrap();
    assert!(qr_reduce(&reg, 0.0).is_err());
    assert!(Regressor::new(reg.matrix.clone(), vec![0; reg.matrix.ncols()], 6).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn regression_is_preserved_by_base_coordinates(seed in any::<u64>()) {
        let c = chain("arm6r");
        let reg = build_random_regressor(&c, &table_plane(), 40, 7).unwrap();
        let base = qr_reduce(&reg, DEFAULT_RANK_TOL).unwrap();
        let rb = base.base_regressor(&reg).unwrap();
        let dx = random_params(6, 0.01, &mut rng(seed));
        let lhs = &reg.matrix * full_vector(&dx, &reg.columns);
        let rhs = &rb * base.base_coordinates(&dx).unwrap();
        prop_assert!((&lhs - rhs).norm() <= 1e-8 * lhs.norm());
    }

    #[test]
    fn remapped_estimate_is_observationally_equivalent(seed in any::<u64>()) {
        let c = chain("arm6r");
        let plane = table_plane();
        let pool = common::shipped_pool();
        let base = common::contact_base(&c, &plane, &pool.postures);
        let truth = random_params(6, 1e-4, &mut rng(seed));
        let remapped = remap_base_to_full(&base, base.base_coordinates(&truth).unwrap().as_slice()).unwrap();
        let ds = Dataset::new(c.clone(), plane, pool.postures[..40].to_vec()).unwrap();
        let a = stack_residuals(&ds, &truth).unwrap();
        let b = stack_residuals(&ds, &remapped).unwrap();
        // first-order equivalence: the gap is second order in the 1e-4 perturbation
        prop_assert!((&a - &b).amax() <= 1e-6, "{}", (&a - &b).amax());
        prop_assert!(a.amax() > 1e-6);
    }
}
