use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use planecal::calibrate::{cross_validate, solve};
use planecal::design::{
    detmax_select, iroc_select, o1_index, pool_info_matrices, random_select, InfoMatrix, IrocOptions,
    SelectionResult,
};
use planecal::identifiability::{build_posture_regressor, qr_reduce, BaseParameterization};
use planecal::io::{
    check_artifact, read_json, read_pool_csv, write_csv, write_dataset_csv, write_json, write_pool_csv,
    CalibrationReport, DetmaxTraceFile, GroundTruthFile, PipelineSummary, PoolRows, PoolSidecar, RecoveryFile,
    SelectionReport, SelectionSummary, ValidationReport, O1_CURVE_HEADER, RESIDUALS_HEADER, WEIGHTS_HEADER,
};
use planecal::params::parameter_labels;
use planecal::posegen::{build_pool, PosturePool};
use planecal::simulator::{corrupt, make_scenario, recovery_from_estimate, GroundTruth};
use planecal::{Dataset, Error, KinematicChain, ParameterVector};

use crate::config::ScenarioConfig;
use crate::{BadInput, Common, Method};

fn setup(common: &Common) -> Result<(ScenarioConfig, Arc<KinematicChain>)> {
    let cfg = ScenarioConfig::load(&common.config, common.out.as_deref())?;
    let chain = KinematicChain::from_path(&cfg.chain)
        .with_context(|| format!("loading chain {}", cfg.chain.display()))?;
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    Ok((cfg, Arc::new(chain)))
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if !path.is_file() {
        bail!(BadInput(format!("{} not found ({hint})", path.display())));
    }
    Ok(())
}

fn load_pool(cfg: &ScenarioConfig) -> Result<PoolRows> {
    let path = cfg.pool_path();
    require(&path, "run genpool first")?;
    let rows = read_pool_csv(&path).with_context(|| format!("reading pool {}", path.display()))?;
    if rows.is_empty() {
        bail!(BadInput(format!("pool {} is empty", path.display())));
    }
    Ok(rows)
}

fn load_dataset(cfg: &ScenarioConfig, chain: &Arc<KinematicChain>, path: &Path) -> Result<Dataset> {
    require(path, "dataset file")?;
    let rows = read_pool_csv(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(rows
        .into_dataset(chain.clone(), cfg.plane)
        .with_context(|| format!("dataset {}", path.display()))?)
}

/// Base parameterization identified from the pool's contact postures.
fn pool_base(cfg: &ScenarioConfig, chain: &KinematicChain, pool: &PoolRows) -> Result<BaseParameterization> {
    let reg = build_posture_regressor(chain, &cfg.plane, &ParameterVector::zeros(chain.n_joints()), &pool.postures)?;
    let base = qr_reduce(&reg, cfg.rank_tolerance)?;
    write_json(cfg.out("base.json"), &base.report())?;
    Ok(base)
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn write_pool(cfg: &ScenarioConfig, chain: &KinematicChain, pool: &PosturePool, seed: u64) -> Result<PathBuf> {
    let path = cfg.pool_path();
    write_pool_csv(&path, &pool.postures, &pool.target_ids)?;
    let mut spec = cfg.pool.clone();
    spec.seed = seed;
    let name = |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let sidecar = PoolSidecar {
        kind: PoolSidecar::KIND.into(),
        chain: name(&cfg.chain),
        n_joints: chain.n_joints(),
        plane: cfg.plane,
        targets: cfg.targets.clone(),
        pool: spec,
        stats: pool.stats.clone(),
        csv: name(&path),
    };
    write_json(sidecar_path(&path), &sidecar)?;
    Ok(path)
}

pub fn genpool(common: &Common, seed: Option<u64>) -> Result<()> {
    let (cfg, chain) = setup(common)?;
    let mut spec = cfg.pool.clone();
    if let Some(s) = seed {
        spec.seed = s;
    }
    match build_pool(&chain, &cfg.plane, &cfg.targets, &spec, None) {
        Ok(pool) => {
            let path = write_pool(&cfg, &chain, &pool, spec.seed)?;
            println!(
                "{} postures in {} attempts -> {}",
                pool.len(),
                pool.stats.attempts,
                path.display()
            );
            Ok(())
        }
        Err(Error::PartialPool { requested, pool }) => {
            if !pool.is_empty() {
                write_pool(&cfg, &chain, &pool, spec.seed)?;
            }
            Err(Error::PartialPool { requested, pool }.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn write_selection(cfg: &ScenarioConfig, infos: &[InfoMatrix], n_base: usize, o1_full: f64, r: &SelectionResult) -> Result<()> {
    let report = SelectionReport {
        kind: SelectionReport::KIND.into(),
        n_base,
        pool_size: infos.len(),
        o1_full_pool: o1_full,
        result: r.clone(),
    };
    report.validate()?;
    let m = &r.method;
    write_json(cfg.out(&format!("selection_{m}.json")), &report)?;

    let curve: Vec<Vec<String>> = r.o1_curve.iter().map(|(k, v)| vec![k.to_string(), format!("{v:?}")]).collect();
    write_csv(cfg.out(&format!("o1_curve_{m}.csv")), &header(&O1_CURVE_HEADER), &curve)?;

    let position: std::collections::HashMap<usize, usize> =
        infos.iter().enumerate().map(|(i, info)| (info.posture_id, i)).collect();
    let rows: Vec<Vec<String>> = r
        .ranked_ids
        .iter()
        .enumerate()
        .map(|(rank, id)| vec![(rank + 1).to_string(), id.to_string(), format!("{:?}", r.weights[position[id]])])
        .collect();
    write_csv(cfg.out(&format!("weights_{m}.csv")), &header(&WEIGHTS_HEADER), &rows)?;
    Ok(())
}

fn header(h: &[&str]) -> Vec<String> {
    h.iter().map(|s| s.to_string()).collect()
}

pub fn select(common: &Common, method: Method, seed: Option<u64>) -> Result<()> {
    let (cfg, chain) = setup(common)?;
    let sel = &cfg.selection;
    let seed = seed.unwrap_or(sel.seed);
    let pool = load_pool(&cfg)?;
    let base = pool_base(&cfg, &chain, &pool)?;
    let infos = pool_info_matrices(&chain, &cfg.plane, &base, &pool.postures, &pool.ids)?;
    let o1_full = o1_index(&infos, None)?;
    if o1_full == 0.0 {
        return Err(Error::Singular("information matrix of the whole pool is singular".into()).into());
    }
    let iroc_opts = IrocOptions {
        k0: sel.k0,
        smoothed: sel.smoothed,
        full_curve: true,
        weights: sel.weights.clone(),
    };
    let subset_size = |infos: &[InfoMatrix]| -> Result<usize> {
        match sel.m {
            Some(m) => Ok(m),
            None => Ok(iroc_select(infos, &iroc_opts, seed)?.k_star),
        }
    };
    let r = match method {
        Method::Iroc => iroc_select(&infos, &iroc_opts, seed)?,
        Method::Detmax => {
            let m = subset_size(&infos)?;
            let out = detmax_select(&infos, m, sel.n_runs, seed)?;
            for run in &out.runs {
                let f = DetmaxTraceFile {
                    kind: DetmaxTraceFile::KIND.into(),
                    run: run.clone(),
                };
                write_json(cfg.out(&format!("detmax_trace_{:02}.json", run.run)), &f)?;
            }
            out.best
        }
        Method::Random => random_select(&infos, subset_size(&infos)?, seed)?,
    };
    write_selection(&cfg, &infos, base.n_base(), o1_full, &r)?;
    println!(
        "{}: {} of {} postures, O1 {:.6} (full pool {:.6}, N_b {})",
        method.name(),
        r.k_star,
        infos.len(),
        r.o1_selected,
        o1_full,
        base.n_base()
    );
    Ok(())
}

fn residual_rows(ds: &Dataset, before: &[f64], after: &[f64]) -> Vec<Vec<String>> {
    (0..ds.len())
        .map(|k| {
            let mut row = vec![ds.ids[k].to_string()];
            row.extend(before[3 * k..3 * k + 3].iter().map(|v| format!("{v:?}")));
            row.extend(after[3 * k..3 * k + 3].iter().map(|v| format!("{v:?}")));
            row
        })
        .collect()
}

pub fn calibrate(common: &Common, dataset: Option<PathBuf>) -> Result<()> {
    let (cfg, chain) = setup(common)?;
    let path = dataset.or_else(|| cfg.dataset.clone()).unwrap_or_else(|| cfg.out("dataset.csv"));
    let ds = load_dataset(&cfg, &chain, &path)?;
    let pool = load_pool(&cfg)?;
    let base = pool_base(&cfg, &chain, &pool)?;
    let r = solve(&ds, &base, &cfg.calibration)?;
    let report = CalibrationReport::new(&r, ds.len());
    report.validate()?;
    write_json(cfg.out("calibration.json"), &report)?;
    let rows = residual_rows(&ds, r.residuals_before.as_slice(), r.residuals_after.as_slice());
    write_csv(cfg.out("residuals.csv"), &header(&RESIDUALS_HEADER), &rows)?;
    println!(
        "{} postures, {} base parameters: cost {:.3e} -> {:.3e} in {} iterations ({:?})",
        ds.len(),
        base.n_base(),
        r.initial_cost,
        r.final_cost,
        r.iterations,
        r.stop_reason
    );
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn shared_postures(a: &Dataset, b: &Dataset) -> usize {
    let key = |q: &[f64]| q.iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    let seen: std::collections::HashSet<Vec<u64>> = a.postures.iter().map(|q| key(q)).collect();
    b.postures.iter().filter(|q| seen.contains(&key(q))).count()
}

pub fn validate(common: &Common, train: Option<PathBuf>, test: Option<PathBuf>, allow_overlap: bool) -> Result<()> {
    let (cfg, chain) = setup(common)?;
    let train_path = train.or_else(|| cfg.train.clone()).unwrap_or_else(|| cfg.out("train.csv"));
    let test_path = test.or_else(|| cfg.test.clone()).unwrap_or_else(|| cfg.out("test.csv"));
    let train = load_dataset(&cfg, &chain, &train_path)?;
    let test = load_dataset(&cfg, &chain, &test_path)?;
    let shared = shared_postures(&train, &test);
    if shared > 0 && !allow_overlap {
        bail!(BadInput(format!(
            "{shared} test postures also appear in the training set (pass --allow-overlap to accept)"
        )));
    }
    let pool = load_pool(&cfg)?;
    let base = pool_base(&cfg, &chain, &pool)?;
    let cv = cross_validate(&train, &test, &base, &cfg.calibration)?;
    let report = ValidationReport::new(&cv, train.len(), test.len());
    report.validate()?;
    write_json(cfg.out("validation.json"), &report)?;
    println!(
        "trained on {}, tested on {}: improvement factor {:.3} (z {:.3}, roll {:.3}, pitch {:.3})",
        train.len(),
        test.len(),
        cv.improvement_factor,
        cv.improvement[0],
        cv.improvement[1],
        cv.improvement[2]
    );
    Ok(())
}

pub fn simulate(common: &Common, seed: Option<u64>) -> Result<()> {
    let (cfg, chain) = setup(common)?;
    let Some(sim) = cfg.simulation.clone() else {
        bail!(BadInput("config has no 'simulation' section".into()));
    };
    let seed = seed.unwrap_or(sim.seed);
    if sim.n_postures == 0 || sim.n_test >= sim.n_postures {
        bail!(BadInput(format!(
            "need 0 <= n_test < n_postures, got {} and {}",
            sim.n_test, sim.n_postures
        )));
    }
    let pool = load_pool(&cfg)?;
    let base = pool_base(&cfg, &chain, &pool)?;
    let gt = GroundTruth::draw_base(&base, sim.ranges, seed)?;
    let mut spec = cfg.pool.clone();
    spec.pool_size = sim.n_postures;
    spec.seed = seed.wrapping_add(1);
    let (clean, _) = make_scenario(chain.clone(), &cfg.plane, &gt, &cfg.targets, &spec)?;
    let ds = corrupt(&clean, &cfg.noise())?;

    let gt_file = GroundTruthFile {
        kind: GroundTruthFile::KIND.into(),
        labels: parameter_labels(chain.n_joints()),
        ground_truth: gt,
    };
    write_json(cfg.out("ground_truth.json"), &gt_file)?;
    write_dataset_csv(cfg.out("dataset.csv"), &ds)?;
    if sim.n_test > 0 {
        let split = sim.n_postures - sim.n_test;
        write_dataset_csv(cfg.out("train.csv"), &ds.subset(&(0..split).collect::<Vec<_>>())?)?;
        write_dataset_csv(cfg.out("test.csv"), &ds.subset(&(split..sim.n_postures).collect::<Vec<_>>())?)?;
    }
    println!(
        "{} postures under a drawn ground truth ({} base parameters) -> {}",
        ds.len(),
        base.n_base(),
        cfg.out("dataset.csv").display()
    );
    Ok(())
}

fn read_if<T: for<'de> serde::Deserialize<'de>>(path: PathBuf) -> Result<Option<T>> {
    if !path.is_file() {
        return Ok(None);
    }
    Ok(Some(read_json(&path).with_context(|| format!("reading {}", path.display()))?))
}

pub fn report(common: &Common) -> Result<()> {
    let (cfg, chain) = setup(common)?;
    let mut s = PipelineSummary {
        kind: PipelineSummary::KIND.into(),
        ..Default::default()
    };
    if let Some(p) = read_if::<PoolSidecar>(sidecar_path(&cfg.pool_path()))? {
        s.pool_size = Some(p.stats.accepted);
        s.pool_attempts = Some(p.stats.attempts);
    }
    for m in [Method::Iroc, Method::Detmax, Method::Random] {
        if let Some(r) = read_if::<SelectionReport>(cfg.out(&format!("selection_{}.json", m.name())))? {
            s.n_base = Some(r.n_base);
            s.selections.push(SelectionSummary {
                method: r.result.method,
                k_star: r.result.k_star,
                o1_selected: r.result.o1_selected,
                o1_full_pool: r.o1_full_pool,
            });
        }
    }
    let calibration = read_if::<CalibrationReport>(cfg.out("calibration.json"))?;
    if let Some(c) = &calibration {
        s.calibration_final_cost = Some(c.final_cost);
        s.calibration_rms_before = Some(c.stats_before.rms_total());
        s.calibration_rms_after = Some(c.stats_after.rms_total());
    }
    if let Some(v) = read_if::<ValidationReport>(cfg.out("validation.json"))? {
        s.validation_improvement_factor = Some(v.improvement_factor);
    }
    let gt = read_if::<GroundTruthFile>(cfg.out("ground_truth.json"))?;
    if let (Some(c), Some(g)) = (&calibration, gt) {
        let pool = load_pool(&cfg)?;
        let base = pool_base(&cfg, &chain, &pool)?;
        s.n_base = Some(base.n_base());
        let rec = recovery_from_estimate(&base, &g.ground_truth, &c.base_labels, &c.dxb_hat, c.std.as_deref())?;
        s.recovery_max_abs_error = Some(rec.max_abs_error);
        write_json(
            cfg.out("recovery.json"),
            &RecoveryFile {
                kind: RecoveryFile::KIND.into(),
                report: rec,
            },
        )?;
    }
    write_json(cfg.out("summary.json"), &s)?;
    println!("{}", serde_json::to_string_pretty(&s)?);
    Ok(())
}

pub fn check(paths: &[PathBuf]) -> Result<()> {
    let mut failed = 0;
    for p in paths {
        match check_artifact(p) {
            Ok(line) => println!("ok {line}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {}: {e}", p.display());
            }
        }
    }
    if failed > 0 {
        bail!(BadInput(format!("{failed} of {} artifacts failed validation", paths.len())));
    }
    Ok(())
}
