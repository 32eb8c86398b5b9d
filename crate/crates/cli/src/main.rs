use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use mcswarm::batch::{self, RunRecord};
use mcswarm::export;
use mcswarm::scenario::{generate_scenario, ScenarioFile, ScenarioKind};
use mcswarm::sim::{run, SimConfig, SimTrace};
use mcswarm::Mode;

#[derive(Parser)]
#[command(name = "mcswarm", version, about = "Asynchronous swarm planner and simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario file.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// nocomm or comm; defaults to the scenario's mode.
        #[arg(long)]
        mode: Option<Mode>,
        /// Directory for trace.jsonl and metrics.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Simulated time limit in seconds.
        #[arg(long)]
        time_budget: Option<f64>,
        /// Store corridors and Voronoi cells in the trace.
        #[arg(long)]
        record_regions: bool,
    },
    /// Write a generated scenario as JSON.
    Gen {
        /// empty, forest, forest2d, maze or maze2d
        kind: ScenarioKind,
        #[arg(long)]
        agents: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every matching scenario over a seed range.
    Batch {
        /// Glob such as `scenarios/*.json`.
        pattern: String,
        /// `A..B` (exclusive), `A..=B`, `N` or `a,b,c`.
        #[arg(long, default_value = "0..1")]
        seeds: String,
        #[arg(long)]
        mode: Option<Mode>,
        /// Directory for per-run JSON records and summary.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        time_budget: Option<f64>,
    },
    /// Convert a trace into positions.csv and coordination.csv.
    Export {
        trace: PathBuf,
        /// Output directory; defaults to the trace's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn base_config(time_budget: Option<f64>) -> SimConfig {
    let mut cfg = SimConfig::default();
    if let Some(t) = time_budget {
        cfg.time_budget = t;
    }
    cfg
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    batch::write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(
    scenario: &Path,
    seed: u64,
    mode: Option<Mode>,
    out: Option<&Path>,
    time_budget: Option<f64>,
    record_regions: bool,
) -> Result<bool> {
    let file = ScenarioFile::load(scenario)?;
    let mut base = base_config(time_budget);
    base.record_regions = record_regions;
    let mut r = file.resolve(&base, seed)?;
    if let Some(m) = mode {
        r.config.mode = m;
    }
    let output = run(&r.workspace, &r.mission, &r.config)?;
    let label = scenario.file_stem().map_or_else(|| file.name.clone(), |s| s.to_string_lossy().into_owned());
    let record = RunRecord::from_output(&label, seed, r.config.mode, &output);
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_file(&dir.join("trace.jsonl"), output.trace.to_jsonl().as_bytes())?;
        write_file(&dir.join("metrics.json"), &serde_json::to_vec_pretty(&record)?)?;
    }
    println!("{}", serde_json::to_string(&record)?);
    Ok(record.success)
}

fn cmd_gen(kind: ScenarioKind, agents: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let file = generate_scenario(kind, agents, seed)?;
    match out {
        Some(p) => file.save(p)?,
        None => println!("{}", file.to_json()),
    }
    Ok(())
}

fn cmd_batch(
    pattern: &str,
    seeds: &str,
    mode: Option<Mode>,
    out: Option<&Path>,
    time_budget: Option<f64>,
) -> Result<bool> {
    let seeds = batch::parse_seeds(seeds)?;
    let paths = batch::expand_glob(pattern)?;
    if paths.is_empty() {
        bail!("no scenario matches `{pattern}`");
    }
    let mut files = Vec::with_capacity(paths.len());
    for p in &paths {
        let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        files.push((label, ScenarioFile::load(p)?));
    }
    let jobs = batch::jobs_for(&files, &seeds, mode);
    let report = batch::run_batch(&jobs, &base_config(time_budget), out)?;
    for r in report.records.iter().filter(|r| !r.success) {
        eprintln!(
            "failed: {} seed {} ({})",
            r.scenario,
            r.seed,
            r.error.as_deref().unwrap_or("did not finish")
        );
    }
    std::io::stdout().write_all(&batch::summary_csv(&report.summary)?)?;
    Ok(report.all_succeeded())
}

fn cmd_export(trace: &Path, out: Option<&Path>) -> Result<()> {
    let f = File::open(trace).with_context(|| format!("opening {}", trace.display()))?;
    let t = SimTrace::read_jsonl(BufReader::new(f)).with_context(|| format!("reading {}", trace.display()))?;
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => trace.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let pos = dir.join("positions.csv");
    let rows = export::write_positions(&t, BufWriter::new(File::create(&pos)?))?;
    let coord = dir.join("coordination.csv");
    let snaps = export::write_coordination(&t, BufWriter::new(File::create(&coord)?))?;
    eprintln!("{}: {rows} rows, {}: {snaps} rows", pos.display(), coord.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { scenario, seed, mode, out, time_budget, record_regions } => {
            cmd_run(scenario, *seed, *mode, out.as_deref(), *time_budget, *record_regions)
        }
        Command::Gen { kind, agents, seed, out } => cmd_gen(*kind, *agents, *seed, out.as_deref()).map(|_| true),
        Command::Batch { pattern, seeds, mode, out, time_budget } => {
            cmd_batch(pattern, seeds, *mode, out.as_deref(), *time_budget)
        }
        Command::Export { trace, out } => cmd_export(trace, out.as_deref()).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
