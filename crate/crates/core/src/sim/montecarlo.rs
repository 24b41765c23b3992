//! Monte Carlo experiments: initializer sweeps over localization error,
//! refinement comparisons over injected anchor error and noise mismatch, and
//! plain pipeline repetitions.
//!
//! Trial `i` of every experiment uses seed `seed + i`, shared by all cells and
//! modes so comparisons are paired.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::pipeline::{run_pipeline, PipelineOptions, TrialMetrics, TrialStatus};
use super::trajectory::kinematics;
use super::{stream_rng, AnchorSpec, PipelineMode, Perturbation, SimScenario, Stream, TrajectorySpec, YawProfile};
use crate::error::{Error, Result};
use crate::initializer::{ls_initialize, robust_initialize, InitConfig, InitEntry, InitWindow, SolverStatus};
use crate::par::{map_indexed, Execution};
use crate::state::{ImuState, Matrix15, Rotation3};
use crate::stats;
use crate::uwb::{simulate_range, TagExtrinsics};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Initializer-only sweep over localization error.
    Fig3,
    /// Refinement modes over injected anchor error and range-noise factor.
    Table1,
    /// Repeated full-pipeline runs of the configured scenario.
    #[default]
    Pipeline,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Fig3 => "fig3",
            ExperimentKind::Table1 => "table1",
            ExperimentKind::Pipeline => "pipeline",
        }
    }
}

/// Random 3-D sinusoid trajectories with a drifting window pose estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig3Config {
    /// Per-admitted-entry random-walk std, m.
    pub sigma_r: Vec<f64>,
    pub trials: usize,
    pub anchor: AnchorSpec,
    pub range_std: f64,
    pub window: usize,
    pub admission_spacing: f64,
    pub center: [f64; 3],
    /// Per-axis amplitude drawn uniformly from this range, m.
    pub amplitude: [f64; 2],
    /// Per-axis period drawn uniformly from this range, s.
    pub period: [f64; 2],
    /// Truth sampling rate used for admission, Hz.
    pub sample_rate: f64,
}

impl Default for Fig3Config {
    fn default() -> Self {
        Self {
            sigma_r: vec![0.01, 0.05, 0.1, 0.2, 0.4],
            trials: 200,
            anchor: AnchorSpec {
                id: 0,
                position: [10.0, 10.0, 10.0],
                beta: 1.0,
                gamma: -0.3,
            },
            range_std: 0.1,
            window: 150,
            // Wide spacing keeps the window well conditioned at small sigma_r.
            admission_spacing: 1.0,
            center: [10.0, 10.0, 4.0],
            amplitude: [4.0, 8.0],
            period: [8.0, 20.0],
            sample_rate: 100.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Table1Config {
    /// `(sigma_i, sigma_u)` pairs.
    pub cells: Vec<[f64; 2]>,
    pub modes: Vec<PipelineMode>,
    pub trials: usize,
}

impl Default for Table1Config {
    fn default() -> Self {
        Self {
            cells: vec![[0.1, 1.0], [0.3, 1.0], [0.3, 0.9], [0.5, 0.9]],
            modes: vec![PipelineMode::RiSkf, PipelineMode::RiEkf],
            trials: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineGridConfig {
    pub modes: Vec<PipelineMode>,
    pub trials: usize,
}

impl Default for PipelineGridConfig {
    fn default() -> Self {
        Self {
            modes: vec![PipelineMode::RiSkf],
            trials: 8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloConfig {
    pub experiment: ExperimentKind,
    pub fig3: Fig3Config,
    pub table1: Table1Config,
    pub pipeline: PipelineGridConfig,
}

/// Sample statistics of one metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub rmse: f64,
}

impl Summary {
    /// `None` for an empty sample.
    pub fn of(xs: &[f64]) -> Option<Summary> {
        (!xs.is_empty()).then(|| Summary {
            count: xs.len(),
            mean: stats::mean(xs),
            median: stats::median(xs),
            std: stats::std_dev(xs),
            rmse: stats::rms(xs),
        })
    }
}

/// Per-trial Fig3 errors for one localization-error level; `None` marks a
/// singular initializer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig3Trial {
    pub seed: u64,
    pub ri_error: Option<f64>,
    pub lsi_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig3Cell {
    pub sigma_r: f64,
    pub ri: Option<Summary>,
    pub lsi: Option<Summary>,
    /// Fraction of all trials won by RI. A singular solve loses to any
    /// successful one; a double failure is a loss for RI.
    pub ri_win_rate: Option<f64>,
    pub ri_failures: usize,
    pub lsi_failures: usize,
    pub trials: Vec<Fig3Trial>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig3Report {
    pub sigma_r: Vec<f64>,
    /// Anchor RMSE per level; `None` when every trial failed.
    pub ri_rmse: Vec<Option<f64>>,
    pub lsi_rmse: Vec<Option<f64>>,
    pub cells: Vec<Fig3Cell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeCell {
    pub mode: PipelineMode,
    pub anchor_error: Option<Summary>,
    pub prmse: Option<Summary>,
    pub failures: usize,
}

/// Paired comparison of the first two modes of a cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedWins {
    pub first: PipelineMode,
    pub second: PipelineMode,
    /// Trials where both modes converged.
    pub paired: usize,
    /// Fraction of paired trials where `first` has the smaller error.
    pub anchor_error: Option<f64>,
    pub prmse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Cell {
    pub sigma_i: f64,
    pub sigma_u: f64,
    pub modes: Vec<ModeCell>,
    pub wins: Option<PairedWins>,
    pub trials: Vec<TrialMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Report {
    pub cells: Vec<Table1Cell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub modes: Vec<ModeCell>,
    pub wins: Option<PairedWins>,
    pub trials: Vec<TrialMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub trials: usize,
    pub fig3: Option<Fig3Report>,
    pub table1: Option<Table1Report>,
    pub pipeline: Option<PipelineReport>,
}

/// Runs the configured experiment. `trials` overrides the experiment's own
/// trial count.
pub fn monte_carlo(
    cfg: &MonteCarloConfig,
    scenario: &SimScenario,
    solver: &InitConfig,
    seed: u64,
    trials: Option<usize>,
    exec: Execution,
) -> Result<MonteCarloReport> {
    let mut report = MonteCarloReport {
        experiment: cfg.experiment,
        seed,
        trials: 0,
        fig3: None,
        table1: None,
        pipeline: None,
    };
    match cfg.experiment {
        ExperimentKind::Fig3 => {
            let n = trials.unwrap_or(cfg.fig3.trials);
            report.trials = n;
            report.fig3 = Some(fig3(&cfg.fig3, solver, seed, n, exec)?);
        }
        ExperimentKind::Table1 => {
            let n = trials.unwrap_or(cfg.table1.trials);
            report.trials = n;
            report.table1 = Some(table1(&cfg.table1, scenario, solver, seed, n, exec)?);
        }
        ExperimentKind::Pipeline => {
            let n = trials.unwrap_or(cfg.pipeline.trials);
            report.trials = n;
            report.pipeline = Some(pipeline_grid(&cfg.pipeline, scenario, solver, seed, n, exec)?);
        }
    }
    Ok(report)
}

fn check_trials(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidScenario("trials must be at least 1".into()));
    }
    Ok(())
}

fn ri_wins(t: &Fig3Trial) -> bool {
    match (t.ri_error, t.lsi_error) {
        (Some(r), Some(l)) => r < l,
        (Some(_), None) => true,
        _ => false,
    }
}

/// A random 3-D sinusoid for one Fig3 trial.
pub fn fig3_trajectory(cfg: &Fig3Config, seed: u64) -> TrajectorySpec {
    let mut rng = stream_rng(seed, Stream::Trajectory);
    let mut draw = |r: [f64; 2]| if r[1] > r[0] { rng.random_range(r[0]..r[1]) } else { r[0] };
    let amplitude = [draw(cfg.amplitude), draw(cfg.amplitude), draw(cfg.amplitude)];
    let period = [draw(cfg.period), draw(cfg.period), draw(cfg.period)];
    let phase = [draw([0.0, TAU]), draw([0.0, TAU]), draw([0.0, TAU])];
    TrajectorySpec::Lissajous {
        center: cfg.center,
        amplitude,
        period,
        phase,
    }
}

/// Window of truth poses and noisy ranges, plus unit random-walk increments
/// that each level scales by its `sigma_r`.
pub struct Fig3Sample {
    truth: Vec<(f64, ImuState)>,
    ranges: Vec<f64>,
    walk: Vec<Vector3<f64>>,
}

pub fn fig3_sample(cfg: &Fig3Config, seed: u64) -> Result<Fig3Sample> {
    let traj = fig3_trajectory(cfg, seed);
    let yaw = YawProfile::default();
    let ext = TagExtrinsics::default();
    let anchor = cfg.anchor.state();
    let mut rng_range = stream_rng(seed, Stream::Range);
    let mut rng_walk = stream_rng(seed, Stream::InitWindow);
    let dt = 1.0 / cfg.sample_rate;
    let mut truth = Vec::with_capacity(cfg.window);
    let mut last: Option<Vector3<f64>> = None;
    let max_steps = 1_000_000;
    let mut i = 0;
    while truth.len() < cfg.window {
        if i >= max_steps {
            return Err(Error::InvalidScenario(
                "fig3 trajectory too slow to fill the window".into(),
            ));
        }
        let t = i as f64 * dt;
        let k = kinematics(&traj, &yaw, t);
        if last.is_none_or(|p| (k.pos - p).norm() >= cfg.admission_spacing) {
            last = Some(k.pos);
            truth.push((t, ImuState::at_pose(Rotation3::from_yaw(k.yaw), k.pos)));
        }
        i += 1;
    }
    let ranges = truth
        .iter()
        .map(|(t, imu)| simulate_range(imu, &anchor, &ext, cfg.range_std, cfg.anchor.id, *t, &mut rng_range).distance)
        .collect();
    let mut acc = Vector3::zeros();
    let walk = (0..truth.len())
        .map(|_| {
            acc += Vector3::new(
                rng_walk.sample::<f64, _>(StandardNormal),
                rng_walk.sample::<f64, _>(StandardNormal),
                rng_walk.sample::<f64, _>(StandardNormal),
            );
            acc
        })
        .collect();
    Ok(Fig3Sample { truth, ranges, walk })
}

pub fn fig3_window(cfg: &Fig3Config, sample: &Fig3Sample, sigma_r: f64) -> Result<InitWindow> {
    let entries = sample
        .truth
        .iter()
        .zip(&sample.ranges)
        .zip(&sample.walk)
        .enumerate()
        .map(|(k, (((t, imu), d), w))| {
            let mut est = *imu;
            est.pos += sigma_r * w;
            let mut cov = Matrix15::zeros();
            let var = (k + 1) as f64 * sigma_r * sigma_r;
            for i in 12..15 {
                cov[(i, i)] = var;
            }
            InitEntry {
                imu: est,
                cov,
                meas: crate::uwb::RangingMeasurement {
                    anchor_id: cfg.anchor.id,
                    distance: *d,
                    timestamp: *t,
                },
            }
        })
        .collect();
    InitWindow::new(entries, 5)
}

fn fig3(cfg: &Fig3Config, solver: &InitConfig, seed: u64, n: usize, exec: Execution) -> Result<Fig3Report> {
    check_trials(n)?;
    if cfg.sigma_r.iter().any(|s| !(*s >= 0.0)) || cfg.window < 5 || !(cfg.sample_rate > 0.0) {
        return Err(Error::InvalidScenario("invalid fig3 configuration".into()));
    }
    let solver = InitConfig {
        range_variance: cfg.range_std * cfg.range_std,
        ..*solver
    };
    let truth = cfg.anchor.state().position;
    let ext = TagExtrinsics::default();
    let per_trial: Vec<Result<Vec<Fig3Trial>>> = map_indexed(n, exec, |i| {
        let s = seed.wrapping_add(i as u64);
        let sample = fig3_sample(cfg, s)?;
        cfg.sigma_r
            .iter()
            .map(|&sr| {
                let window = fig3_window(cfg, &sample, sr)?;
                let err = |status: SolverStatus, p: Vector3<f64>| {
                    (status != SolverStatus::Singular).then(|| (p - truth).norm())
                };
                let ri = robust_initialize(&window, &ext, &solver);
                let lsi = ls_initialize(&window, &ext, &solver);
                Ok(Fig3Trial {
                    seed: s,
                    ri_error: err(ri.status, ri.position),
                    lsi_error: err(lsi.status, lsi.position),
                })
            })
            .collect()
    });
    let per_trial: Vec<Vec<Fig3Trial>> = per_trial.into_iter().collect::<Result<_>>()?;

    let cells: Vec<Fig3Cell> = cfg
        .sigma_r
        .iter()
        .enumerate()
        .map(|(l, &sr)| {
            let trials: Vec<Fig3Trial> = per_trial.iter().map(|t| t[l].clone()).collect();
            let ri: Vec<f64> = trials.iter().filter_map(|t| t.ri_error).collect();
            let lsi: Vec<f64> = trials.iter().filter_map(|t| t.lsi_error).collect();
            let wins = trials.iter().filter(|t| ri_wins(t)).count();
            Fig3Cell {
                sigma_r: sr,
                ri: Summary::of(&ri),
                lsi: Summary::of(&lsi),
                ri_win_rate: (!trials.is_empty()).then(|| wins as f64 / trials.len() as f64),
                ri_failures: trials.len() - ri.len(),
                lsi_failures: trials.len() - lsi.len(),
                trials,
            }
        })
        .collect();
    Ok(Fig3Report {
        sigma_r: cfg.sigma_r.clone(),
        ri_rmse: cells.iter().map(|c| c.ri.as_ref().map(|s| s.rmse)).collect(),
        lsi_rmse: cells.iter().map(|c| c.lsi.as_ref().map(|s| s.rmse)).collect(),
        cells,
    })
}

fn converged(m: &TrialMetrics) -> bool {
    m.status == TrialStatus::Converged && m.mean_anchor_error.is_some()
}

fn mode_cells(modes: &[PipelineMode], trials: &[TrialMetrics]) -> Vec<ModeCell> {
    modes
        .iter()
        .map(|&mode| {
            let runs: Vec<&TrialMetrics> = trials.iter().filter(|t| t.mode == mode).collect();
            let ok: Vec<&TrialMetrics> = runs.iter().copied().filter(|t| converged(t)).collect();
            let err: Vec<f64> = ok.iter().filter_map(|t| t.mean_anchor_error).collect();
            let prmse: Vec<f64> = ok.iter().map(|t| t.prmse).collect();
            ModeCell {
                mode,
                anchor_error: Summary::of(&err),
                prmse: Summary::of(&prmse),
                failures: runs.len() - ok.len(),
            }
        })
        .collect()
}

fn paired_wins(modes: &[PipelineMode], trials: &[TrialMetrics]) -> Option<PairedWins> {
    let (first, second) = (*modes.first()?, *modes.get(1)?);
    let pick = |mode: PipelineMode, seed: u64| {
        trials
            .iter()
            .find(|t| t.mode == mode && t.seed == seed)
            .filter(|t| converged(t))
    };
    let mut paired = 0;
    let mut err_wins = 0;
    let mut prmse_wins = 0;
    for a in trials.iter().filter(|t| t.mode == first) {
        let (Some(a), Some(b)) = (pick(first, a.seed), pick(second, a.seed)) else {
            continue;
        };
        paired += 1;
        if a.mean_anchor_error < b.mean_anchor_error {
            err_wins += 1;
        }
        if a.prmse < b.prmse {
            prmse_wins += 1;
        }
    }
    let rate = |w: usize| (paired > 0).then(|| w as f64 / paired as f64);
    Some(PairedWins {
        first,
        second,
        paired,
        anchor_error: rate(err_wins),
        prmse: rate(prmse_wins),
    })
}

/// Runs every (trial, mode) pair of one scenario family; trial-major order.
fn run_trials(
    scenario: &SimScenario,
    modes: &[PipelineMode],
    solver: &InitConfig,
    seed: u64,
    n: usize,
    exec: Execution,
) -> Result<Vec<TrialMetrics>> {
    check_trials(n)?;
    if modes.is_empty() {
        return Err(Error::InvalidScenario("at least one mode is required".into()));
    }
    scenario.validate()?;
    let k = modes.len();
    let opts = PipelineOptions::default();
    map_indexed(n * k, exec, |job| {
        let s = SimScenario {
            seed: seed.wrapping_add((job / k) as u64),
            ..scenario.clone()
        };
        run_pipeline(&s, modes[job % k], solver, &opts).map(|o| o.metrics)
    })
    .into_iter()
    .collect()
}

fn table1(
    cfg: &Table1Config,
    scenario: &SimScenario,
    solver: &InitConfig,
    seed: u64,
    n: usize,
    exec: Execution,
) -> Result<Table1Report> {
    let cells = cfg
        .cells
        .iter()
        .map(|&[sigma_i, sigma_u]| {
            let s = SimScenario {
                perturbation: Perturbation {
                    anchor_init_error: sigma_i,
                    range_noise_factor: sigma_u,
                },
                ..scenario.clone()
            };
            let trials = run_trials(&s, &cfg.modes, solver, seed, n, exec)?;
            Ok(Table1Cell {
                sigma_i,
                sigma_u,
                modes: mode_cells(&cfg.modes, &trials),
                wins: paired_wins(&cfg.modes, &trials),
                trials,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table1Report { cells })
}

fn pipeline_grid(
    cfg: &PipelineGridConfig,
    scenario: &SimScenario,
    solver: &InitConfig,
    seed: u64,
    n: usize,
    exec: Execution,
) -> Result<PipelineReport> {
    let trials = run_trials(scenario, &cfg.modes, solver, seed, n, exec)?;
    Ok(PipelineReport {
        modes: mode_cells(&cfg.modes, &trials),
        wins: paired_wins(&cfg.modes, &trials),
        trials,
    })
}
