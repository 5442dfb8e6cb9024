//! On-disk formats. Every JSON artifact carries a `kind` tag so that
//! [`check_artifact`] can re-validate it without context; files are written
//! atomically through a temporary file in the target directory.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;

use serde::{Deserialize, Serialize};

use crate::calibrate::{CalibrationResult, CrossValidation, ResidualStats, StopReason};
use crate::design::{DetmaxRun, SelectionResult};
use crate::error::{invalid, Error, Result};
use crate::identifiability::BaseReport;
use crate::kinematics::{JointConfig, KinematicChain};
use crate::params::PlaneParams;
use crate::posegen::{PoolSpec, PoolStats, TargetSpec};
use crate::residual::Dataset;
use crate::simulator::{GroundTruth, RecoveryReport};

/// Writes `bytes` to `path` via a temporary file and a rename.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes a CSV with a header row; floats use the shortest exact representation.
pub fn write_csv(path: impl AsRef<Path>, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Pool CSV: `posture_id, target_id, q_1 .. q_n`.
pub fn write_pool_csv(path: impl AsRef<Path>, postures: &[JointConfig], target_ids: &[usize]) -> Result<()> {
    if postures.len() != target_ids.len() {
        return invalid("one target id per posture required");
    }
    let n = postures.first().map_or(0, |q| q.len());
    let mut header = vec!["posture_id".to_string(), "target_id".to_string()];
    header.extend((1..=n).map(|i| format!("q_{i}")));
    let rows: Vec<Vec<String>> = postures
        .iter()
        .zip(target_ids)
        .enumerate()
        .map(|(id, (q, t))| {
            let mut r = vec![id.to_string(), t.to_string()];
            r.extend(q.iter().map(|v| num(*v)));
            r
        })
        .collect();
    write_csv(path, &header, &rows)
}

/// Dataset CSV: `posture_id, q_1 .. q_n`, plus `y_z, y_roll, y_pitch` when
/// measurements are present.
pub fn write_dataset_csv(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let n = ds.chain.n_joints();
    let mut header = vec!["posture_id".to_string()];
    header.extend((1..=n).map(|i| format!("q_{i}")));
    if ds.measurements.is_some() {
        header.extend(MEASUREMENT_COLUMNS.iter().map(|s| s.to_string()));
    }
    let rows: Vec<Vec<String>> = (0..ds.len())
        .map(|k| {
            let mut r = vec![ds.ids[k].to_string()];
            r.extend(ds.postures[k].iter().map(|v| num(*v)));
            if let Some(m) = &ds.measurements {
                r.extend((0..3).map(|c| num(m[3 * k + c])));
            }
            r
        })
        .collect();
    write_csv(path, &header, &rows)
}

const MEASUREMENT_COLUMNS: [&str; 3] = ["y_z", "y_roll", "y_pitch"];

/// Rows of a pool or dataset CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolRows {
    pub ids: Vec<usize>,
    pub target_ids: Option<Vec<usize>>,
    pub postures: Vec<JointConfig>,
    pub measurements: Option<Vec<[f64; 3]>>,
}

impl PoolRows {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn into_dataset(self, chain: Arc<KinematicChain>, plane: PlaneParams) -> Result<Dataset> {
        let mut ds = Dataset::with_ids(chain, plane, self.postures, self.ids)?;
        if let Some(m) = self.measurements {
            ds.measurements = Some(DVector::from_iterator(3 * m.len(), m.into_iter().flatten()));
        }
        Ok(ds)
    }
}

/// Reads either a pool CSV (with `target_id`) or a dataset CSV.
pub fn read_pool_csv(path: impl AsRef<Path>) -> Result<PoolRows> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header.first().map(String::as_str) != Some("posture_id") {
        return Err(Error::Format("posture CSV header must start with posture_id".into()));
    }
    let has_target = header.get(1).map(String::as_str) == Some("target_id");
    let first_q = if has_target { 2 } else { 1 };
    let has_meas = header.len() >= first_q + 3 && header[header.len() - 3..] == MEASUREMENT_COLUMNS;
    let end_q = if has_meas { header.len() - 3 } else { header.len() };
    if end_q <= first_q {
        return Err(Error::Format("posture CSV has no joint columns".into()));
    }
    for (i, h) in header[first_q..end_q].iter().enumerate() {
        if *h != format!("q_{}", i + 1) {
            return Err(Error::Format(format!("unexpected posture CSV column '{h}'")));
        }
    }
    let mut out = PoolRows {
        ids: vec![],
        target_ids: has_target.then(Vec::new),
        postures: vec![],
        measurements: has_meas.then(Vec::new),
    };
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("row {}: bad integer '{s}'", line + 1)))
        };
        let parse_f64 = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Format(format!("row {}: bad value '{s}'", line + 1)))
        };
        out.ids.push(parse_usize(&rec[0])?);
        if let Some(t) = out.target_ids.as_mut() {
            t.push(parse_usize(&rec[1])?);
        }
        let q = (first_q..end_q).map(|i| parse_f64(&rec[i])).collect::<Result<Vec<f64>>>()?;
        out.postures.push(JointConfig(q));
        if let Some(m) = out.measurements.as_mut() {
            m.push([parse_f64(&rec[end_q])?, parse_f64(&rec[end_q + 1])?, parse_f64(&rec[end_q + 2])?]);
        }
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = out.ids.iter().find(|id| !seen.insert(**id)) {
        return Err(Error::Format(format!("duplicate posture id {dup}")));
    }
    Ok(out)
}

/// Sidecar of a pool CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSidecar {
    pub kind: String,
    pub chain: String,
    pub n_joints: usize,
    pub plane: PlaneParams,
    pub targets: TargetSpec,
    pub pool: PoolSpec,
    pub stats: PoolStats,
    pub csv: String,
}

impl PoolSidecar {
    pub const KIND: &'static str = "pool";
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionReport {
    pub kind: String,
    pub n_base: usize,
    pub pool_size: usize,
    /// `O1` of the whole pool, for comparison with the selected subset.
    pub o1_full_pool: f64,
    pub result: SelectionResult,
}

impl SelectionReport {
    pub const KIND: &'static str = "selection";

    pub fn validate(&self) -> Result<()> {
        let r = &self.result;
        if r.k_star == 0 || r.k_star > self.pool_size || r.k_star > r.ranked_ids.len() {
            return invalid("k_star out of range");
        }
        if r.selected_ids.len() != r.k_star {
            return invalid("selected_ids must hold k_star postures");
        }
        if r.method == "iroc" && r.selected_ids[..] != r.ranked_ids[..r.k_star] {
            return invalid("selected_ids must be the top of ranked_ids");
        }
        if r.weights.len() != self.pool_size {
            return invalid("one weight per pool posture required");
        }
        let s: f64 = r.weights.iter().sum();
        if r.weights.iter().any(|w| *w < 0.0) || (s - 1.0).abs() > 1e-9 {
            return invalid("weights must be non-negative and sum to one");
        }
        if !(r.o1_selected >= 0.0 && self.o1_full_pool >= 0.0) {
            return invalid("O1 must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetmaxTraceFile {
    pub kind: String,
    pub run: DetmaxRun,
}

impl DetmaxTraceFile {
    pub const KIND: &'static str = "detmax_trace";
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationReport {
    pub kind: String,
    pub n_postures: usize,
    pub base_labels: Vec<String>,
    pub dxb_hat: Vec<f64>,
    pub std: Option<Vec<f64>>,
    pub covariance: Option<Vec<Vec<f64>>>,
    pub full_params: Vec<f64>,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub cost_trace: Vec<f64>,
    pub stop_reason: StopReason,
    pub stats_before: ResidualStats,
    pub stats_after: ResidualStats,
    pub condition_number: f64,
    pub warnings: Vec<String>,
}

impl CalibrationReport {
    pub const KIND: &'static str = "calibration";

    pub fn new(r: &CalibrationResult, n_postures: usize) -> Self {
        Self {
            kind: Self::KIND.into(),
            n_postures,
            base_labels: r.base_labels.clone(),
            dxb_hat: r.dxb_hat.clone(),
            std: r.standard_deviations(),
            covariance: r
                .covariance
                .as_ref()
                .map(|c| c.row_iter().map(|row| row.iter().cloned().collect()).collect()),
            full_params: r.full_params.values().to_vec(),
            iterations: r.iterations,
            initial_cost: r.initial_cost,
            final_cost: r.final_cost,
            cost_trace: r.cost_trace.clone(),
            stop_reason: r.stop_reason,
            stats_before: r.stats_before,
            stats_after: r.stats_after,
            condition_number: r.condition_number,
            warnings: r.warnings.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_labels.len() != self.dxb_hat.len() {
            return invalid("one label per base parameter required");
        }
        if self.final_cost > self.initial_cost {
            return invalid("final cost exceeds initial cost");
        }
        if self.cost_trace.windows(2).any(|w| w[1] > w[0]) {
            return invalid("cost trace increases");
        }
        if let Some(s) = &self.std {
            if s.len() != self.dxb_hat.len() {
                return invalid("one standard deviation per base parameter required");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationReport {
    pub kind: String,
    pub n_train: usize,
    pub n_test: usize,
    pub calibration: CalibrationReport,
    pub test_before: ResidualStats,
    pub test_after: ResidualStats,
    pub improvement: [f64; 3],
    pub improvement_factor: f64,
}

impl ValidationReport {
    pub const KIND: &'static str = "cross_validation";

    pub fn new(cv: &CrossValidation, n_train: usize, n_test: usize) -> Self {
        Self {
            kind: Self::KIND.into(),
            n_train,
            n_test,
            calibration: CalibrationReport::new(&cv.calibration, n_train),
            test_before: cv.test_before,
            test_after: cv.test_after,
            improvement: cv.improvement,
            improvement_factor: cv.improvement_factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.calibration.validate()?;
        let mean = self.improvement.iter().sum::<f64>() / 3.0;
        if (mean - self.improvement_factor).abs() > 1e-9 * mean.abs().max(1.0) {
            return invalid("improvement factor is not the mean of the components");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthFile {
    pub kind: String,
    pub labels: Vec<String>,
    pub ground_truth: GroundTruth,
}

impl GroundTruthFile {
    pub const KIND: &'static str = "ground_truth";
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryFile {
    pub kind: String,
    pub report: RecoveryReport,
}

impl RecoveryFile {
    pub const KIND: &'static str = "recovery";
}

fn check_kind(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return invalid(format!("expected kind '{expected}', found '{found}'"));
    }
    Ok(())
}

fn check_csv_header(path: &Path, expected: &[&str]) -> Result<usize> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Format(format!("unexpected CSV header in {}", path.display())));
    }
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        if rec.iter().any(|f| f.parse::<f64>().map_or(true, |v| !v.is_finite())) {
            return Err(Error::Format(format!("non-numeric field in row {}", rows + 1)));
        }
        rows += 1;
    }
    Ok(rows)
}

/// One selection run as listed in a [`PipelineSummary`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSummary {
    pub method: String,
    pub k_star: usize,
    pub o1_selected: f64,
    pub o1_full_pool: f64,
}

/// Headline numbers gathered from the artifacts of one output directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSummary {
    pub kind: String,
    pub pool_size: Option<usize>,
    pub pool_attempts: Option<usize>,
    pub n_base: Option<usize>,
    pub selections: Vec<SelectionSummary>,
    pub calibration_final_cost: Option<f64>,
    pub calibration_rms_before: Option<f64>,
    pub calibration_rms_after: Option<f64>,
    pub validation_improvement_factor: Option<f64>,
    pub recovery_max_abs_error: Option<f64>,
}

impl PipelineSummary {
    pub const KIND: &'static str = "summary";
}

/// Header of the `(k, O1)` curve CSV.
pub const O1_CURVE_HEADER: [&str; 2] = ["k", "o1"];
/// Header of the ranked-weight CSV.
pub const WEIGHTS_HEADER: [&str; 3] = ["rank", "posture_id", "weight"];
/// Header of the per-posture calibration residual CSV.
pub const RESIDUALS_HEADER: [&str; 7] = [
    "posture_id",
    "z_before",
    "roll_before",
    "pitch_before",
    "z_after",
    "roll_after",
    "pitch_after",
];

/// Re-validates an artifact written by this crate; returns a one-line summary.
pub fn check_artifact(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "csv") {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        drop(r);
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows = if h == O1_CURVE_HEADER || h == WEIGHTS_HEADER || h == RESIDUALS_HEADER {
            check_csv_header(path, &h)?
        } else if h.first() == Some(&"posture_id") {
            let p = read_pool_csv(path)?;
            if p.target_ids.is_some() && p.ids != (0..p.len()).collect::<Vec<_>>() {
                return Err(Error::Format("pool posture ids must be 0..N in order".into()));
            }
            p.len()
        } else {
            return Err(Error::Format(format!("unrecognised CSV header in {}", path.display())));
        };
        return Ok(format!("{}: csv, {rows} rows", path.display()));
    }

    let value: serde_json::Value = read_json(path)?;
    let kind = value
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| Error::Format("artifact has no 'kind' field".into()))?
        .to_string();
    match kind.as_str() {
        PoolSidecar::KIND => {
            let s: PoolSidecar = serde_json::from_value(value)?;
            s.targets.validate()?;
            if s.stats.accepted > s.stats.attempts {
                return invalid("more accepted postures than attempts");
            }
        }
        SelectionReport::KIND => serde_json::from_value::<SelectionReport>(value)?.validate()?,
        DetmaxTraceFile::KIND => {
            let t: DetmaxTraceFile = serde_json::from_value(value)?;
            check_kind(&t.kind, DetmaxTraceFile::KIND)?;
        }
        CalibrationReport::KIND => serde_json::from_value::<CalibrationReport>(value)?.validate()?,
        ValidationReport::KIND => serde_json::from_value::<ValidationReport>(value)?.validate()?,
        BaseReport::KIND => serde_json::from_value::<BaseReport>(value)?.validate()?,
        GroundTruthFile::KIND => {
            let g: GroundTruthFile = serde_json::from_value(value)?;
            if g.labels.len() != g.ground_truth.true_params.len() {
                return invalid("one label per ground-truth entry required");
            }
        }
        RecoveryFile::KIND => {
            serde_json::from_value::<RecoveryFile>(value)?;
        }
        PipelineSummary::KIND => {
            serde_json::from_value::<PipelineSummary>(value)?;
        }
        other => return invalid(format!("unknown artifact kind '{other}'")),
    }
    Ok(format!("{}: {kind}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pool.csv");
        let qs = vec![JointConfig(vec![0.1, -1.0 / 3.0]), JointConfig(vec![1e-17, 2.5])];
        write_pool_csv(&p, &qs, &[0, 3]).unwrap();
        let back = read_pool_csv(&p).unwrap();
        assert_eq!(back.postures, qs);
        assert_eq!(back.target_ids, Some(vec![0, 3]));
        assert!(check_artifact(&p).is_ok());
    }

    #[test]
    fn dataset_csv_round_trip_keeps_measurements() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("data.csv");
        let chain = Arc::new(KinematicChain::from_path(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/colinear2.json")).unwrap());
        let qs = vec![JointConfig(vec![0.1, 0.2]), JointConfig(vec![-0.3, 1.0 / 7.0])];
        let mut ds = Dataset::with_ids(chain.clone(), PlaneParams::from_array([0.0; 6]), qs.clone(), vec![4, 9]).unwrap();
        write_dataset_csv(&p, &ds).unwrap();
        let back = read_pool_csv(&p).unwrap();
        assert_eq!((back.target_ids.clone(), back.measurements.clone()), (None, None));
        assert_eq!(back.ids, vec![4, 9]);
        ds.measurements = Some(DVector::from_vec(vec![1e-3, 0.0, -2.0, 0.5, 0.25, 1.0 / 3.0]));
        write_dataset_csv(&p, &ds).unwrap();
        let back = read_pool_csv(&p).unwrap().into_dataset(chain, PlaneParams::from_array([0.0; 6])).unwrap();
        assert_eq!(back.measurements, ds.measurements);
        assert_eq!(back.postures, qs);
        assert!(check_artifact(&p).is_ok());
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        std::fs::write(&p, r#"{"kind": "nope"}"#).unwrap();
        assert!(check_artifact(&p).is_err());
        std::fs::write(&p, r#"{"no_kind": 1}"#).unwrap();
        assert!(check_artifact(&p).is_err());
    }
}
