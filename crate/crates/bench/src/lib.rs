//! Fixtures shared by the benchmarks.

use std::path::PathBuf;
use std::sync::Arc;

use planecal::design::{pool_info_matrices, InfoMatrix};
use planecal::identifiability::{build_posture_regressor, qr_reduce, BaseParameterization, DEFAULT_RANK_TOL};
use planecal::io::{read_pool_csv, PoolRows};
use planecal::{KinematicChain, ParameterVector, PlaneParams};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

pub fn arm() -> Arc<KinematicChain> {
    Arc::new(KinematicChain::from_path(fixture("arm6r.json")).expect("arm6r fixture"))
}

/// Tool pointing down onto the table the shipped pool was generated for.
pub fn table() -> PlaneParams {
    PlaneParams {
        z_c: 0.05,
        phix_c: std::f64::consts::PI,
        ..PlaneParams::ZERO
    }
}

pub fn pool() -> PoolRows {
    read_pool_csv(fixture("arm6r_pool/pool.csv")).expect("shipped pool")
}

pub fn base(chain: &KinematicChain, rows: &PoolRows) -> BaseParameterization {
    let reg = build_posture_regressor(chain, &table(), &ParameterVector::zeros(chain.n_joints()), &rows.postures)
        .expect("regressor");
    qr_reduce(&reg, DEFAULT_RANK_TOL).expect("base")
}

pub fn infos(chain: &Arc<KinematicChain>, rows: &PoolRows, base: &BaseParameterization) -> Vec<InfoMatrix> {
    pool_info_matrices(chain, &table(), base, &rows.postures, &rows.ids).expect("information matrices")
}
