//! Seed sweeps over scenario files with per-run records and an aggregate
//! table.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coordination::Mode;
use crate::scenario::ScenarioFile;
use crate::sim::{run, SimConfig, SimOutput};

#[derive(thiserror::Error, Debug)]
pub enum BatchError {
    #[error("i/o on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("bad glob pattern: {0}")]
    Pattern(#[from] glob::PatternError),
    #[error("bad seed list `{0}` (expected N, A..B, A..=B or a comma list)")]
    Seeds(String),
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BatchError + '_ {
    move |source| BatchError::Io { path: path.to_path_buf(), source }
}

/// One (scenario, seed) pair.
#[derive(Debug, Clone)]
pub struct BatchJob {
    pub label: String,
    pub scenario: ScenarioFile,
    pub seed: u64,
    /// Replaces the scenario's own mode.
    pub mode: Option<Mode>,
}

/// Outcome of one job as written to `<label>_s<seed>_<mode>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub seed: u64,
    pub mode: Mode,
    pub n_agents: usize,
    pub success: bool,
    pub flight_time_s: Option<f64>,
    pub replans: usize,
    pub replan_failures: usize,
    pub mean_replan_ms: Option<f64>,
    pub median_replan_ms: Option<f64>,
    pub mean_coordination_ms: Option<f64>,
    /// `None` with fewer than two agents.
    pub min_separation_m: Option<f64>,
    /// `None` without obstacles.
    pub min_clearance_m: Option<f64>,
    pub safety_violations: usize,
    pub deadlocked_agents: Vec<usize>,
    /// Set when the run could not be set up or aborted.
    pub error: Option<String>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl RunRecord {
    pub fn from_output(label: &str, seed: u64, mode: Mode, out: &SimOutput) -> Self {
        let m = &out.metrics;
        let rt = &m.runtime;
        let stat = |s: &crate::sim::Stats, v: f64| (s.count > 0).then_some(v);
        Self {
            scenario: label.to_string(),
            seed,
            mode,
            n_agents: m.arrival_times.len(),
            success: m.success,
            flight_time_s: m.flight_time,
            replans: m.replans,
            replan_failures: m.replan_failures,
            mean_replan_ms: stat(&rt.replan_ms, rt.replan_ms.mean),
            median_replan_ms: stat(&rt.replan_ms, rt.replan_ms.median),
            mean_coordination_ms: stat(&rt.coordination_ms, rt.coordination_ms.mean),
            min_separation_m: finite(m.min_separation),
            min_clearance_m: finite(m.min_clearance),
            safety_violations: m.safety_violations,
            deadlocked_agents: m.deadlocked_agents.clone(),
            error: None,
        }
    }

    pub fn failed(label: &str, seed: u64, mode: Mode, n_agents: usize, error: String) -> Self {
        Self {
            scenario: label.to_string(),
            seed,
            mode,
            n_agents,
            success: false,
            flight_time_s: None,
            replans: 0,
            replan_failures: 0,
            mean_replan_ms: None,
            median_replan_ms: None,
            mean_coordination_ms: None,
            min_separation_m: None,
            min_clearance_m: None,
            safety_violations: 0,
            deadlocked_agents: vec![],
            error: Some(error),
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}_s{}_{}.json", self.scenario, self.seed, mode_name(self.mode))
    }
}

pub fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::NoComm => "nocomm",
        Mode::Comm => "comm",
    }
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub mode: String,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Over successful runs.
    pub mean_flight_time_s: Option<f64>,
    /// Mean of the per-run means.
    pub mean_replan_ms: Option<f64>,
    pub safety_violations: usize,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Groups by scenario and mode, in sorted order.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, &'static str), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.scenario.clone(), mode_name(r.mode))).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((scenario, mode), rs)| {
            let successes = rs.iter().filter(|r| r.success).count();
            SummaryRow {
                scenario,
                mode: mode.to_string(),
                runs: rs.len(),
                successes,
                success_rate: successes as f64 / rs.len() as f64,
                mean_flight_time_s: mean(rs.iter().filter(|r| r.success).filter_map(|r| r.flight_time_s)),
                mean_replan_ms: mean(rs.iter().filter_map(|r| r.mean_replan_ms)),
                safety_violations: rs.iter().map(|r| r.safety_violations).sum(),
            }
        })
        .collect()
}

pub fn run_job(job: &BatchJob, base: &SimConfig) -> RunRecord {
    let mode = job.mode.unwrap_or(job.scenario.mode);
    let n = job.scenario.agents.len();
    let mut resolved = match job.scenario.resolve(base, job.seed) {
        Ok(r) => r,
        Err(e) => return RunRecord::failed(&job.label, job.seed, mode, n, e.to_string()),
    };
    resolved.config.mode = mode;
    match run(&resolved.workspace, &resolved.mission, &resolved.config) {
        Ok(out) => RunRecord::from_output(&job.label, job.seed, resolved.config.mode, &out),
        Err(e) => RunRecord::failed(&job.label, job.seed, mode, n, e.to_string()),
    }
}

/// Writes `bytes` to `path` through a sibling temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BatchError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[derive(Debug, Clone)]
pub struct BatchReport {
    /// In job order.
    pub records: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
}

impl BatchReport {
    pub fn all_succeeded(&self) -> bool {
        self.records.iter().all(|r| r.success)
    }
}

/// Runs every job in parallel. With `out_dir`, each record lands in its own
/// JSON file and the summary in `summary.csv`.
pub fn run_batch(jobs: &[BatchJob], base: &SimConfig, out_dir: Option<&Path>) -> Result<BatchReport, BatchError> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|job| {
            let rec = run_job(job, base);
            if let Some(dir) = out_dir {
                let json = serde_json::to_vec_pretty(&rec).expect("record serializes");
                write_atomic(&dir.join(rec.file_name()), &json)?;
            }
            Ok(rec)
        })
        .collect::<Result<_, BatchError>>()?;
    let summary = summarize(&records);
    if let Some(dir) = out_dir {
        write_atomic(&dir.join("summary.csv"), &summary_csv(&summary)?)?;
    }
    Ok(BatchReport { records, summary })
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>, BatchError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| BatchError::Csv(e.into_error().into()))
}

pub const SUMMARY_COLUMNS: [&str; 8] = [
    "scenario",
    "mode",
    "runs",
    "successes",
    "success_rate",
    "mean_flight_time_s",
    "mean_replan_ms",
    "safety_violations",
];

/// Reads every `*.json` record in `dir`.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>, BatchError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let s = fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&s).map_err(|source| BatchError::Json { path: p.clone(), source })
        })
        .collect()
}

/// Scenario files matching `pattern`, sorted.
pub fn expand_glob(pattern: &str) -> Result<Vec<PathBuf>, BatchError> {
    let mut out = Vec::new();
    for entry in glob::glob(pattern)? {
        match entry {
            Ok(p) => out.push(p),
            Err(e) => {
                let path = e.path().to_path_buf();
                return Err(BatchError::Io { path, source: e.into() });
            }
        }
    }
    out.sort();
    Ok(out)
}

/// `7`, `0..30` (exclusive), `0..=29` or `1,4,9`. An empty range is allowed.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>, BatchError> {
    let bad = || BatchError::Seeds(spec.to_string());
    let spec = spec.trim();
    if let Some((a, b)) = spec.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let (b, inclusive) = match b.strip_prefix('=') {
            Some(b) => (b, true),
            None => (b, false),
        };
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        return Ok(if inclusive { (a..=b).collect() } else { (a..b).collect() });
    }
    if spec.is_empty() {
        return Ok(vec![]);
    }
    spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

/// Cartesian product of scenario files and seeds, labelled by file stem.
pub fn jobs_for(files: &[(String, ScenarioFile)], seeds: &[u64], mode: Option<Mode>) -> Vec<BatchJob> {
    files
        .iter()
        .flat_map(|(label, f)| {
            seeds.iter().map(move |&seed| BatchJob { label: label.clone(), scenario: f.clone(), seed, mode })
        })
        .collect()
}
