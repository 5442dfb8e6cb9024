use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use planecal::calibrate::{solve, SolveOptions};
use planecal::design::{detmax_select, iroc_select, optimize_weights, IrocOptions, WeightOptions};
use planecal::posegen::{PoolSpec, TargetSpec};
use planecal::residual::residual_jacobian;
use planecal::simulator::{corrupt, make_scenario, DrawRanges, GroundTruth, NoiseModel};
use planecal::{Dataset, ParameterVector};
use planecal_bench::{arm, base, infos, pool, table};

fn jacobian(c: &mut Criterion) {
    let chain = arm();
    let rows = pool();
    let ds = Dataset::new(chain.clone(), table(), rows.postures[..60].to_vec()).unwrap();
    let p = ParameterVector::zeros(6);
    let all: Vec<usize> = (0..p.len()).collect();
    c.bench_function("residual_jacobian_60", |b| b.iter(|| residual_jacobian(black_box(&ds), &p, &all).unwrap()));
}

fn selection(c: &mut Criterion) {
    let chain = arm();
    let rows = pool();
    let b = base(&chain, &rows);
    let info = infos(&chain, &rows, &b);
    let mut g = c.benchmark_group("selection");
    g.sample_size(10);
    let short = WeightOptions { max_iterations: 500, ..Default::default() };
    g.bench_function("weights_500_iterations", |bn| bn.iter(|| optimize_weights(black_box(&info), 0, &short).unwrap()));
    g.bench_function("iroc", |bn| bn.iter(|| iroc_select(black_box(&info), &IrocOptions::default(), 0).unwrap()));
    g.bench_function("detmax_10_runs", |bn| bn.iter(|| detmax_select(black_box(&info), 9, 10, 0).unwrap()));
    g.finish();
}

fn calibration(c: &mut Criterion) {
    let chain = arm();
    let rows = pool();
    let b = base(&chain, &rows);
    let gt = GroundTruth::draw_base(&b, DrawRanges::default(), 1).unwrap();
    let targets = TargetSpec::grid([0.3, 0.6, -0.3, 0.3], 6, 3).unwrap();
    let spec = PoolSpec { pool_size: 40, seed: 3, projection: Default::default(), balance: None };
    let (ds, _) = make_scenario(chain, &table(), &gt, &targets, &spec).unwrap();
    let noisy = corrupt(&ds, &NoiseModel::default()).unwrap();
    let mut g = c.benchmark_group("calibration");
    g.sample_size(20);
    g.bench_function("solve_40_postures", |bn| bn.iter(|| solve(black_box(&noisy), &b, &SolveOptions::default()).unwrap()));
    g.finish();
}

criterion_group!(benches, jacobian, selection, calibration);
criterion_main!(benches);
