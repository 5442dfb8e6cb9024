use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use planecal::calibrate::SolveOptions;
use planecal::design::WeightOptions;
use planecal::identifiability::DEFAULT_RANK_TOL;
use planecal::posegen::{PoolSpec, TargetSpec};
use planecal::simulator::{DrawRanges, NoiseModel};
use planecal::PlaneParams;
use serde::Deserialize;

use crate::BadInput;

/// Scenario configuration. Relative paths are resolved against the directory
/// holding the config file.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub chain: PathBuf,
    pub plane: PlaneParams,
    pub targets: TargetSpec,
    pub pool: PoolSpec,
    /// Pool CSV used by every stage after `genpool`; defaults to `<out>/pool.csv`.
    #[serde(default)]
    pub pool_file: Option<PathBuf>,
    pub selection: SelectionConfig,
    #[serde(default)]
    pub calibration: SolveOptions,
    #[serde(default = "default_rank_tol")]
    pub rank_tolerance: f64,
    #[serde(default)]
    pub simulation: Option<SimulationConfig>,
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    /// Measured postures for `calibrate`; defaults to `<out>/dataset.csv`.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    pub output_dir: PathBuf,
}

fn default_rank_tol() -> f64 {
    DEFAULT_RANK_TOL
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub seed: u64,
    #[serde(default)]
    pub k0: Option<usize>,
    #[serde(default)]
    pub smoothed: bool,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    /// Subset size for `detmax` and `random`; IROC's `k_star` when absent.
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub weights: WeightOptions,
}

fn default_runs() -> usize {
    10
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    pub n_postures: usize,
    /// Postures held out at the end of the dataset for cross-validation.
    #[serde(default)]
    pub n_test: usize,
    #[serde(default)]
    pub ranges: DrawRanges,
}

impl ScenarioConfig {
    pub fn load(path: &Path, out: Option<&Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(BadInput::wrap)?;
        let mut cfg: Self = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
            .map_err(BadInput::wrap)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        rebase(&mut cfg.chain);
        rebase(&mut cfg.output_dir);
        for p in [&mut cfg.pool_file, &mut cfg.dataset, &mut cfg.train, &mut cfg.test]
            .into_iter()
            .flatten()
        {
            rebase(p);
        }
        if let Some(o) = out {
            cfg.output_dir = o.to_path_buf();
        }
        if !cfg.chain.is_file() {
            bail!(BadInput(format!("chain file {} does not exist", cfg.chain.display())));
        }
        if !(cfg.rank_tolerance > 0.0) {
            bail!(BadInput("rank_tolerance must be positive".into()));
        }
        cfg.targets.validate()?;
        Ok(cfg)
    }

    pub fn pool_path(&self) -> PathBuf {
        self.pool_file.clone().unwrap_or_else(|| self.out("pool.csv"))
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise.clone().unwrap_or_else(NoiseModel::noiseless)
    }
}
