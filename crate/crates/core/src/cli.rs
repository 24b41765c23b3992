//! Command-line shell: config ingestion, subcommand dispatch and file output.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 invalid config or
//! usage, 3 singular initializer.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::fim::{general_gaussian_fim, FimConfig, FimReport};
use crate::initializer::{InitConfig, InitEntry, InitWindow};
use crate::io::{self, fmt_f64, Table};
use crate::par::Execution;
use crate::sim::generate::generate;
use crate::sim::montecarlo::{monte_carlo, ModeCell, MonteCarloConfig, MonteCarloReport, PairedWins};
use crate::sim::pipeline::{run_pipeline, PipelineOptions, TrialStatus};
use crate::sim::{PipelineMode, SimScenario};
use crate::state::Matrix15;
use crate::uwb::RangingMeasurement;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SINGULAR: i32 = 3;

const FIG3_PRESET: &str = include_str!("../../../configs/fig3.json");
const TABLE1_PRESET: &str = include_str!("../../../configs/table1.json");

/// Settings of the `fim` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FimRunConfig {
    pub anchor_id: u32,
    /// Number of leading range epochs in the window.
    pub window: usize,
    /// Localization-error levels; entry `k` gets position variance
    /// `(k + 1) sigma_r^2` per axis.
    pub sigma_r: Vec<f64>,
    pub fisher: FimConfig,
}

impl Default for FimRunConfig {
    fn default() -> Self {
        Self {
            anchor_id: 0,
            window: 150,
            sigma_r: vec![0.0, 0.01, 0.05, 0.1, 0.2, 0.4],
            fisher: FimConfig::default(),
        }
    }
}

/// Complete run configuration; `config-dump` prints every default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; replaces `scenario.seed`.
    pub seed: u64,
    pub mode: PipelineMode,
    pub output_dir: PathBuf,
    pub scenario: SimScenario,
    pub solver: InitConfig,
    pub fim: FimRunConfig,
    pub montecarlo: MonteCarloConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: PipelineMode::default(),
            output_dir: PathBuf::from("out"),
            scenario: SimScenario::default(),
            solver: InitConfig::default(),
            fim: FimRunConfig::default(),
            montecarlo: MonteCarloConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses JSON, reporting the line and column of the first problem.
    pub fn from_json(text: &str, origin: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| {
            CliError::Config(format!("{origin}:{}:{}: {e}", e.line(), e.column()))
        })
    }

    /// Scenario with the master seed applied.
    pub fn scenario(&self) -> SimScenario {
        SimScenario {
            seed: self.seed,
            ..self.scenario.clone()
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Run(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Run(Error::InvalidScenario(_)) => EXIT_CONFIG,
            CliError::Run(_) => EXIT_FAILURE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Run(e @ Error::InvalidScenario(_)) => write!(f, "config error: {e}"),
            CliError::Run(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "uwbcalib", version, about = "UWB anchor self-calibration simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a scenario and write truth and sensor streams as CSV.
    Simulate(CommonArgs),
    /// Run one full pipeline; writes trace.csv and summary.json.
    Calibrate(CommonArgs),
    /// Fisher information of a window over a grid of localization errors.
    Fim(CommonArgs),
    /// Run the configured Monte Carlo experiment; writes report.json and cells.csv.
    Montecarlo(CommonArgs),
    /// Print the effective configuration with all defaults.
    ConfigDump(CommonArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Fig3,
    Table1,
}

#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in configuration; ignored when `--config` is given.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// ri+skf, ri+ekf, lsi+skf or lsi+ekf.
    #[arg(long)]
    pub mode: Option<PipelineMode>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the experiment's trial count.
    #[arg(long)]
    pub trials: Option<usize>,
}

impl CommonArgs {
    /// Config file or preset, then command-line overrides.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match (&self.config, self.preset) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                RunConfig::from_json(&text, &path.display().to_string())?
            }
            (None, Some(Preset::Fig3)) => RunConfig::from_json(FIG3_PRESET, "preset fig3")?,
            (None, Some(Preset::Table1)) => RunConfig::from_json(TABLE1_PRESET, "preset table1")?,
            (None, None) => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(mode) = self.mode {
            cfg.mode = mode;
            cfg.montecarlo.pipeline.modes = vec![mode];
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.scenario().validate()?;
        Ok(cfg)
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: &Command) -> Result<i32, CliError> {
    match cmd {
        Command::Simulate(a) => cmd_simulate(&a.resolve()?),
        Command::Calibrate(a) => cmd_calibrate(&a.resolve()?),
        Command::Fim(a) => cmd_fim(&a.resolve()?),
        Command::Montecarlo(a) => cmd_montecarlo(&a.resolve()?, a.trials),
        Command::ConfigDump(a) => cmd_config_dump(&a.resolve()?, a.out.is_some()),
    }
}

fn output_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    let dir = cfg.output_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| {
        CliError::Run(Error::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })
    })?;
    Ok(dir)
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<i32, CliError> {
    let scenario = cfg.scenario();
    let data = generate(&scenario)?;
    let dir = output_dir(cfg)?;
    io::write_truth(&dir.join("truth.csv"), &data.truth)?;
    io::write_imu(&dir.join("imu.csv"), &data.imu)?;
    io::write_camera(&dir.join("camera.csv"), &data.frames)?;
    io::write_ranges(&dir.join("ranges.csv"), &data.ranges)?;
    io::write_landmarks(&dir.join("landmarks.csv"), &data.landmarks)?;
    io::write_anchors(&dir.join("anchors.csv"), &scenario.anchors)?;
    println!(
        "simulated {:.1} s: {} IMU samples, {} camera frames, {} range epochs -> {}",
        scenario.duration,
        data.imu.len(),
        data.frames.len(),
        data.ranges.len(),
        dir.display()
    );
    Ok(EXIT_OK)
}

pub fn cmd_calibrate(cfg: &RunConfig) -> Result<i32, CliError> {
    let scenario = cfg.scenario();
    let opts = PipelineOptions {
        record_trace: true,
        ..PipelineOptions::default()
    };
    let out = run_pipeline(&scenario, cfg.mode, &cfg.solver, &opts)?;
    let dir = output_dir(cfg)?;
    let ids: Vec<u32> = scenario.anchors.iter().map(|a| a.id).collect();
    io::write_trace(&dir.join("trace.csv"), &out.trace, &ids)?;
    io::write_json(&dir.join("summary.json"), &out.metrics)?;

    let m = &out.metrics;
    println!("mode {}  seed {}  status {:?}", m.mode, m.seed, m.status);
    println!("PRMSE {:.4} m  ORMSE {:.4} deg", m.prmse, m.ormse_deg);
    for a in &m.anchors {
        match a.position_error {
            Some(e) => println!("anchor {:>3}  init t={:>6.2} s  |p err| {:.4} m", a.id, a.init_time.unwrap_or(f64::NAN), e),
            None => println!("anchor {:>3}  not initialized", a.id),
        }
    }
    if let Some(d) = &m.degenerate {
        println!("degenerate geometry: {d}");
    }
    Ok(match m.status {
        TrialStatus::InitSingular => EXIT_SINGULAR,
        _ => EXIT_OK,
    })
}

/// Output of the `fim` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FimOutput {
    pub anchor_id: u32,
    pub window_len: usize,
    pub sigma_r: Vec<f64>,
    pub det_f: Vec<f64>,
    pub reports: Vec<FimReport>,
}

/// Truth poses at the first `cfg.fim.window` range epochs, with consistent
/// position covariance for each localization-error level.
pub fn fim_analysis(cfg: &RunConfig) -> Result<FimOutput, CliError> {
    let scenario = cfg.scenario();
    let run = &cfg.fim;
    let anchor = scenario
        .anchors
        .iter()
        .find(|a| a.id == run.anchor_id)
        .ok_or_else(|| CliError::Config(format!("fim.anchor_id {} is not in scenario.anchors", run.anchor_id)))?
        .state();
    if run.sigma_r.iter().any(|s| !(*s >= 0.0)) {
        return Err(CliError::Config("fim.sigma_r must be non-negative".into()));
    }
    let data = generate(&scenario)?;
    let epochs: Vec<_> = data.ranges.iter().take(run.window).collect();
    let ext = scenario.tag_extrinsics();
    let mut reports = Vec::with_capacity(run.sigma_r.len());
    for &sr in &run.sigma_r {
        let entries = epochs
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let mut cov = Matrix15::zeros();
                for i in 12..15 {
                    cov[(i, i)] = (k + 1) as f64 * sr * sr;
                }
                InitEntry {
                    imu: data.truth[e.index].imu,
                    cov,
                    meas: RangingMeasurement {
                        anchor_id: run.anchor_id,
                        distance: 0.0,
                        timestamp: e.t,
                    },
                }
            })
            .collect();
        let window = InitWindow::new(entries, 1)?;
        reports.push(general_gaussian_fim(&window, &anchor, &ext, &run.fisher));
    }
    Ok(FimOutput {
        anchor_id: run.anchor_id,
        window_len: epochs.len(),
        sigma_r: run.sigma_r.clone(),
        det_f: reports.iter().map(|r| r.det_f).collect(),
        reports,
    })
}

pub fn cmd_fim(cfg: &RunConfig) -> Result<i32, CliError> {
    let out = fim_analysis(cfg)?;
    let dir = output_dir(cfg)?;
    io::write_json(&dir.join("fim.json"), &out)?;
    println!("anchor {}  window {} epochs", out.anchor_id, out.window_len);
    println!("{:>8}  {:>14}  {:>4}  {:>6}  flags", "sigma_r", "det F", "rank", "p-rank");
    for (sr, r) in out.sigma_r.iter().zip(&out.reports) {
        println!(
            "{:>8.3}  {:>14.6e}  {:>4}  {:>6}  {}",
            sr,
            r.det_f,
            r.rank,
            r.position_rank,
            r.degenerate.as_deref().unwrap_or("-")
        );
    }
    Ok(EXIT_OK)
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn mode_rows(table: &mut Table, prefix: &[String], modes: &[ModeCell], wins: Option<&PairedWins>) {
    for m in modes {
        let mut row = prefix.to_vec();
        row.extend([
            m.mode.to_string(),
            opt(m.anchor_error.as_ref().map(|s| s.mean)),
            opt(m.anchor_error.as_ref().map(|s| s.median)),
            opt(m.prmse.as_ref().map(|s| s.mean)),
            m.failures.to_string(),
            opt(wins.filter(|w| w.first == m.mode).and_then(|w| w.anchor_error)),
            opt(wins.filter(|w| w.first == m.mode).and_then(|w| w.prmse)),
        ]);
        table.push(row);
    }
}

const MODE_COLUMNS: [&str; 7] = [
    "mode",
    "anchor_error_mean",
    "anchor_error_median",
    "prmse_mean",
    "failures",
    "anchor_win_rate",
    "prmse_win_rate",
];

/// One row per cell and mode; win rates sit on the row of the first mode.
pub fn cells_table(report: &MonteCarloReport) -> Table {
    if let Some(f) = &report.fig3 {
        let mut t = Table::new(&[
            "sigma_r",
            "ri_rmse",
            "lsi_rmse",
            "ri_median",
            "lsi_median",
            "ri_win_rate",
            "ri_failures",
            "lsi_failures",
        ]);
        for c in &f.cells {
            t.push(vec![
                fmt_f64(c.sigma_r),
                opt(c.ri.as_ref().map(|s| s.rmse)),
                opt(c.lsi.as_ref().map(|s| s.rmse)),
                opt(c.ri.as_ref().map(|s| s.median)),
                opt(c.lsi.as_ref().map(|s| s.median)),
                opt(c.ri_win_rate),
                c.ri_failures.to_string(),
                c.lsi_failures.to_string(),
            ]);
        }
        return t;
    }
    if let Some(r) = &report.table1 {
        let mut t = Table::new(&["sigma_i", "sigma_u"].iter().chain(&MODE_COLUMNS).collect::<Vec<_>>());
        for c in &r.cells {
            mode_rows(&mut t, &[fmt_f64(c.sigma_i), fmt_f64(c.sigma_u)], &c.modes, c.wins.as_ref());
        }
        return t;
    }
    let mut t = Table::new(&MODE_COLUMNS);
    if let Some(p) = &report.pipeline {
        mode_rows(&mut t, &[], &p.modes, p.wins.as_ref());
    }
    t
}

fn pct(x: Option<f64>) -> String {
    x.map(|v| format!("{:5.1}%", 100.0 * v)).unwrap_or_else(|| "    -".into())
}

fn num(x: Option<f64>) -> String {
    x.map(|v| format!("{v:8.4}")).unwrap_or_else(|| "       -".into())
}

fn print_report(report: &MonteCarloReport) {
    println!("{} experiment  seed {}  trials {}", report.experiment.as_str(), report.seed, report.trials);
    if let Some(f) = &report.fig3 {
        println!("{:>8}  {:>8}  {:>8}  {:>7}  {:>6}", "sigma_r", "RI rmse", "LSI rmse", "RI wins", "fails");
        for c in &f.cells {
            println!(
                "{:>8.3}  {}  {}  {:>7}  {:>2}/{:<3}",
                c.sigma_r,
                num(c.ri.as_ref().map(|s| s.rmse)),
                num(c.lsi.as_ref().map(|s| s.rmse)),
                pct(c.ri_win_rate),
                c.ri_failures,
                c.lsi_failures
            );
        }
    }
    let print_modes = |label: String, modes: &[ModeCell], wins: Option<&PairedWins>| {
        for m in modes {
            println!(
                "{label}  {:<8} anchor err {}  PRMSE {}  fails {}",
                m.mode.as_str(),
                num(m.anchor_error.as_ref().map(|s| s.mean)),
                num(m.prmse.as_ref().map(|s| s.mean)),
                m.failures
            );
        }
        if let Some(w) = wins {
            println!(
                "{label}  {} beats {}: anchor err {}  PRMSE {}  ({} paired)",
                w.first,
                w.second,
                pct(w.anchor_error),
                pct(w.prmse),
                w.paired
            );
        }
    };
    if let Some(r) = &report.table1 {
        for c in &r.cells {
            print_modes(format!("sI={:.2} sU={:.2}", c.sigma_i, c.sigma_u), &c.modes, c.wins.as_ref());
        }
    }
    if let Some(p) = &report.pipeline {
        print_modes("pipeline".into(), &p.modes, p.wins.as_ref());
    }
}

pub fn cmd_montecarlo(cfg: &RunConfig, trials: Option<usize>) -> Result<i32, CliError> {
    let report = monte_carlo(&cfg.montecarlo, &cfg.scenario(), &cfg.solver, cfg.seed, trials, Execution::Parallel)?;
    let dir = output_dir(cfg)?;
    io::write_json(&dir.join("report.json"), &report)?;
    io::write_table(&dir.join("cells.csv"), &cells_table(&report))?;
    print_report(&report);
    Ok(EXIT_OK)
}

pub fn cmd_config_dump(cfg: &RunConfig, to_file: bool) -> Result<i32, CliError> {
    let text = io::to_json(cfg)?;
    if to_file {
        let dir = output_dir(cfg)?;
        std::fs::write(dir.join("config.json"), &text).map_err(|e| {
            CliError::Run(Error::Io {
                path: dir.join("config.json").display().to_string(),
                message: e.to_string(),
            })
        })?;
    } else {
        print!("{text}");
    }
    Ok(EXIT_OK)
}
