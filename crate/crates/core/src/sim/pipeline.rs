//! Full calibration pipeline over a simulated run: window collection,
//! batch initialization, covariance initialization and refinement.

use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::generate::{generate, SimData};
use super::{stream_rng, PipelineMode, SimScenario, Stream};
use crate::error::{Error, Result};
use crate::fim::degeneracy_flags;
use crate::initializer::{
    initialize_covariance, ls_initialize, robust_initialize, CovarianceInitConfig, InitConfig,
    InitEntry, InitResult, InitWindow, SolverStatus,
};
use crate::propagation::{propagate, vision_update};
use crate::refiner::{ekf_uwb_update, skf_uwb_update, FejRegistry, RefineConfig};
use crate::state::{
    clone_augment, clone_marginalize, BlockCovariance, FilterState, ImuState, Matrix15, RobotState,
    UwbState, ANCHOR_DIM,
};
use crate::stats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineOptions {
    /// Apply range updates to initialized anchors.
    pub uwb_updates: bool,
    /// Keep one trace row per camera frame.
    pub record_trace: bool,
    /// Hash the robot mean and `P_rr` after every range epoch.
    pub record_robot_digests: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            uwb_updates: true,
            record_trace: false,
            record_robot_digests: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialStatus {
    /// Every anchor was initialized and refined.
    Converged,
    /// An initializer reported a singular problem; the trial stopped there.
    InitSingular,
    /// Some anchor never collected enough window entries.
    Incomplete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorMetrics {
    pub id: u32,
    pub initialized: bool,
    pub init_time: Option<f64>,
    pub window_len: usize,
    pub init_status: Option<SolverStatus>,
    pub init_iterations: usize,
    /// Anchor position error right after initialization, before perturbation.
    pub init_position_error: Option<f64>,
    /// Position NEES of the covariance produced at initialization.
    pub init_position_nees: Option<f64>,
    pub position_error: Option<f64>,
    pub beta_error: Option<f64>,
    pub gamma_error: Option<f64>,
    /// Final position NEES against the anchor's 3x3 block.
    pub position_nees: Option<f64>,
    pub estimate: Option<UwbState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub seed: u64,
    pub mode: PipelineMode,
    pub status: TrialStatus,
    pub degenerate: Option<String>,
    pub prmse: f64,
    pub ormse_deg: f64,
    /// PRMSE before and after the last anchor was initialized.
    pub prmse_init: Option<f64>,
    pub prmse_refine: Option<f64>,
    pub anchors: Vec<AnchorMetrics>,
    pub mean_anchor_error: Option<f64>,
    /// Position NEES of the first anchor, sampled once per second after its
    /// initialization.
    pub nees_series: Vec<f64>,
    pub uwb_accepted: usize,
    pub uwb_rejected: usize,
    pub vision_rejected: usize,
    /// Every covariance returned by the covariance initializer was symmetric PSD.
    pub init_covariance_valid: bool,
}

/// Per-anchor estimate and 3-sigma bounds in `(x, y, z, beta, gamma)` order;
/// `NaN` before initialization.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub truth_pos: [f64; 3],
    pub truth_q: [f64; 4],
    pub est_pos: [f64; 3],
    pub est_q: [f64; 4],
    pub anchors: Vec<[f64; ANCHOR_DIM]>,
    pub sigma3: Vec<[f64; ANCHOR_DIM]>,
}

impl TraceRow {
    pub fn position_error_sq(&self) -> f64 {
        (Vector3::from(self.est_pos) - Vector3::from(self.truth_pos)).norm_squared()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub metrics: TrialMetrics,
    pub trace: Vec<TraceRow>,
    pub robot_digests: Vec<u64>,
    pub final_robot: RobotState,
    pub final_p_rr: DMatrix<f64>,
    /// Number of range updates attempted on initialized anchors.
    pub uwb_updates: usize,
}

fn normal3<R: Rng>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

fn initial_covariance(scenario: &SimScenario) -> Matrix15 {
    let u = &scenario.initial;
    let mut p = Matrix15::zeros();
    for (k, s) in [u.attitude, u.gyro_bias, u.velocity, u.accel_bias, u.position]
        .iter()
        .enumerate()
    {
        for i in 0..3 {
            p[(3 * k + i, 3 * k + i)] = s * s;
        }
    }
    p
}

/// Initial estimate: truth plus a draw from the initial uncertainty. Biases
/// start at zero because their truth is drawn from the same prior.
fn initial_estimate(scenario: &SimScenario, truth: &ImuState) -> ImuState {
    let u = &scenario.initial;
    let mut rng = stream_rng(scenario.seed, Stream::Estimate);
    ImuState {
        rot: truth.rot.perturb(&(u.attitude * normal3(&mut rng))),
        bg: Vector3::zeros(),
        vel: truth.vel + u.velocity * normal3(&mut rng),
        ba: Vector3::zeros(),
        pos: truth.pos + u.position * normal3(&mut rng),
    }
}

fn robot_digest(robot: &RobotState, cov: &BlockCovariance) -> u64 {
    let mut h = DefaultHasher::new();
    let mut put = |x: f64| x.to_bits().hash(&mut h);
    put(robot.t);
    let imu = &robot.imu;
    imu.rot.wxyz().into_iter().for_each(&mut put);
    for v in [imu.bg, imu.vel, imu.ba, imu.pos] {
        v.iter().copied().for_each(&mut put);
    }
    for c in &robot.clones {
        put(c.t);
        c.rot.wxyz().into_iter().for_each(&mut put);
        c.pos.iter().copied().for_each(&mut put);
    }
    cov.rr().iter().copied().for_each(&mut put);
    h.finish()
}

#[derive(Default)]
struct AnchorWindow {
    entries: Vec<InitEntry>,
    last_pos: Option<Vector3<f64>>,
}

struct AnchorTracker {
    metrics: AnchorMetrics,
    truth: UwbState,
    window: AnchorWindow,
}

fn position_nees(state: &FilterState, cov: &BlockCovariance, id: u32, truth: &UwbState) -> Option<f64> {
    let j = state.anchor_index(id)?;
    let est = state.anchors[j].state;
    let off = cov.anchor_offset(j);
    let p = cov.matrix().view((off, off), (3, 3)).into_owned();
    let e = DVector::from_column_slice((est.position - truth.position).as_slice());
    stats::nees(&e, &p)
}

fn trace_row(
    t: f64,
    truth: &ImuState,
    state: &FilterState,
    cov: &BlockCovariance,
    ids: &[u32],
) -> TraceRow {
    let mut anchors = Vec::with_capacity(ids.len());
    let mut sigma3 = Vec::with_capacity(ids.len());
    for &id in ids {
        match state.anchor_index(id) {
            Some(j) => {
                let a = state.anchors[j].state;
                let b = cov.anchor_block(j);
                anchors.push([a.position.x, a.position.y, a.position.z, a.beta, a.gamma]);
                let mut s = [0.0; ANCHOR_DIM];
                for (k, v) in s.iter_mut().enumerate() {
                    *v = 3.0 * b[(k, k)].max(0.0).sqrt();
                }
                sigma3.push(s);
            }
            None => {
                anchors.push([f64::NAN; ANCHOR_DIM]);
                sigma3.push([f64::NAN; ANCHOR_DIM]);
            }
        }
    }
    let imu = &state.robot.imu;
    TraceRow {
        t,
        truth_pos: truth.pos.into(),
        truth_q: truth.rot.wxyz(),
        est_pos: imu.pos.into(),
        est_q: imu.rot.wxyz(),
        anchors,
        sigma3,
    }
}

/// Runs one trial of the given mode on the scenario.
///
/// A singular initializer ends the trial early with status
/// [`TrialStatus::InitSingular`]; it is not an error.
pub fn run_pipeline(
    scenario: &SimScenario,
    mode: PipelineMode,
    solver: &InitConfig,
    opts: &PipelineOptions,
) -> Result<PipelineOutput> {
    let data = generate(scenario)?;
    run_on_data(scenario, &data, mode, solver, opts)
}

/// As [`run_pipeline`] on pre-generated sensor data.
pub fn run_on_data(
    scenario: &SimScenario,
    data: &SimData,
    mode: PipelineMode,
    solver: &InitConfig,
    opts: &PipelineOptions,
) -> Result<PipelineOutput> {
    let q_d = scenario.noise.range_std * scenario.noise.range_std;
    if !(q_d > 0.0) {
        return Err(Error::InvalidScenario("range_std must be positive for calibration".into()));
    }
    let ext = scenario.tag_extrinsics();
    let init_cfg = InitConfig {
        range_variance: q_d,
        ..*solver
    };
    let cov_cfg = CovarianceInitConfig {
        range_variance: q_d,
        beta_prior_std: scenario.filter.beta_prior_std,
    };
    let refine_cfg = RefineConfig {
        range_variance: q_d,
        noise_scaling: scenario.filter.noise_scaling,
        gate_prob: scenario.filter.gate_prob,
        fej: scenario.filter.fej,
    };
    let spec = &scenario.window;

    let truth0 = data.truth[0].imu;
    let mut state = FilterState::new(RobotState::new(
        data.truth[0].t,
        initial_estimate(scenario, &truth0),
        scenario.filter.clone_window,
    ));
    let mut cov = BlockCovariance::from_imu(&initial_covariance(scenario));
    let mut registry = FejRegistry::new();
    let mut rng_window = stream_rng(scenario.seed, Stream::InitWindow);
    let mut rng_perturb = stream_rng(scenario.seed, Stream::Perturbation);

    let ids: Vec<u32> = scenario.anchors.iter().map(|a| a.id).collect();
    let mut trackers: BTreeMap<u32, AnchorTracker> = scenario
        .anchors
        .iter()
        .map(|a| {
            (
                a.id,
                AnchorTracker {
                    metrics: AnchorMetrics {
                        id: a.id,
                        initialized: false,
                        init_time: None,
                        window_len: 0,
                        init_status: None,
                        init_iterations: 0,
                        init_position_error: None,
                        init_position_nees: None,
                        position_error: None,
                        beta_error: None,
                        gamma_error: None,
                        position_nees: None,
                        estimate: None,
                    },
                    truth: a.state(),
                    window: AnchorWindow::default(),
                },
            )
        })
        .collect();

    // Random walk corrupting admitted window poses and its step count.
    let mut walk = Vector3::zeros();
    let mut walk_steps = 0usize;

    let mut trace = Vec::new();
    let mut digests = Vec::new();
    let mut pos_err_sq = Vec::with_capacity(data.frames.len());
    let mut att_err_sq = Vec::with_capacity(data.frames.len());
    let mut all_init_at: Option<f64> = if ids.is_empty() { Some(f64::NEG_INFINITY) } else { None };
    let mut split_at = 0usize;
    let mut nees_series = Vec::new();
    let mut uwb_accepted = 0;
    let mut uwb_rejected = 0;
    let mut vision_rejected = 0;
    let mut init_cov_valid = true;
    let mut singular: Option<String> = None;
    let mut epoch_count = 0usize;

    let mut frames = data.frames.iter().peekable();
    let mut epochs = data.ranges.iter().peekable();
    'run: for i in 0..data.imu.len() {
        if i > 0 {
            propagate(&mut state, &mut cov, &data.imu[i - 1], &data.imu[i], &scenario.noise.imu)?;
        }
        let truth = &data.truth[i].imu;

        if let Some(frame) = frames.next_if(|f| f.index == i) {
            if state.robot.clones.len() >= state.robot.window {
                (state, cov) = clone_marginalize(&state, &cov, 0)?;
            }
            (state, cov) = clone_augment(&state, &cov)?;
            let live: Vec<f64> = state.robot.clones.iter().map(|c| c.t).collect();
            registry.retain_clones(&live);
            registry.seed_clone(state.robot.t, state.robot.imu.rot, state.robot.imu.pos);
            match vision_update(
                &mut state,
                &mut cov,
                &frame.observations,
                &data.landmarks,
                &data.camera,
                scenario.noise.pixel_std,
                scenario.filter.gate_prob,
            ) {
                Ok(r) => vision_rejected += r.rejected,
                Err(Error::NoValidObservations) => vision_rejected += frame.observations.len(),
                Err(e) => return Err(e),
            }
            let est = &state.robot.imu;
            pos_err_sq.push((est.pos - truth.pos).norm_squared());
            att_err_sq.push(est.rot.angle_to(&truth.rot).to_degrees().powi(2));
            if all_init_at.is_none() {
                split_at = pos_err_sq.len();
            }
            if opts.record_trace {
                trace.push(trace_row(frame.t, truth, &state, &cov, &ids));
            }
        }

        let Some(epoch) = epochs.next_if(|e| e.index == i) else {
            continue;
        };
        let mut admitted = Vec::new();
        for meas in &epoch.ranges {
            let Some(tracker) = trackers.get_mut(&meas.anchor_id) else {
                continue;
            };
            if tracker.metrics.initialized {
                if !opts.uwb_updates {
                    continue;
                }
                let report = if mode.schmidt() {
                    skf_uwb_update(&mut state, &mut cov, meas, &ext, Some(&registry), &refine_cfg)?
                } else {
                    ekf_uwb_update(&mut state, &mut cov, meas, &ext, Some(&registry), &refine_cfg)?
                };
                if report.accepted {
                    uwb_accepted += 1;
                } else {
                    uwb_rejected += 1;
                }
                continue;
            }
            let pos = state.robot.imu.pos;
            let far = tracker
                .window
                .last_pos
                .is_none_or(|p| (pos - p).norm() >= spec.admission_spacing);
            if far {
                tracker.window.last_pos = Some(pos);
                admitted.push(*meas);
            }
        }
        if !admitted.is_empty() {
            let std_r = scenario.noise.init_pose_std;
            if std_r > 0.0 {
                walk += std_r * normal3(&mut rng_window);
                walk_steps += 1;
            }
            let mut imu = state.robot.imu;
            imu.pos += walk;
            let mut p_ii = cov.imu_block();
            let extra = walk_steps as f64 * std_r * std_r;
            for k in 12..15 {
                p_ii[(k, k)] += extra;
            }
            for meas in admitted {
                let tracker = trackers.get_mut(&meas.anchor_id).expect("tracked anchor");
                tracker.window.entries.push(InitEntry { imu, cov: p_ii, meas });
            }
        }

        for &id in &ids {
            let tracker = trackers.get_mut(&id).expect("tracked anchor");
            let n = tracker.window.entries.len();
            let ready = !tracker.metrics.initialized
                && (n >= spec.target || (epoch.t >= spec.timeout && n >= spec.min));
            if !ready {
                continue;
            }
            tracker.metrics.window_len = n;
            let window = InitWindow::new(std::mem::take(&mut tracker.window.entries), spec.min)?;
            let result: InitResult = if mode.robust_init() {
                robust_initialize(&window, &ext, &init_cfg)
            } else {
                ls_initialize(&window, &ext, &init_cfg)
            };
            tracker.metrics.init_status = Some(result.status);
            tracker.metrics.init_iterations = result.iterations;
            if result.status == SolverStatus::Singular {
                let label = result.degeneracy.label().map(str::to_string);
                singular = Some(label.unwrap_or_else(|| "singular".into()));
                break 'run;
            }
            let (next_state, next_cov) = match initialize_covariance(
                &window, &result, id, &state, &cov, &ext, &init_cfg, &cov_cfg,
            ) {
                Ok(v) => v,
                Err(Error::RankDeficient) | Err(Error::InsufficientMeasurements { .. }) => {
                    let flags = degeneracy_flags(&window.positions());
                    singular = Some(flags.label().unwrap_or("rank-deficient").to_string());
                    break 'run;
                }
                Err(e) => return Err(e),
            };
            init_cov_valid &= next_cov.asymmetry() == 0.0 && next_cov.is_valid();
            state = next_state;
            cov = next_cov;
            let j = state.anchor_index(id).expect("anchor just added");
            tracker.metrics.init_position_error =
                Some((state.anchors[j].state.position - tracker.truth.position).norm());
            tracker.metrics.init_position_nees = position_nees(&state, &cov, id, &tracker.truth);
            let sigma_i = scenario.perturbation.anchor_init_error;
            if sigma_i > 0.0 {
                state.anchors[j].state.position += sigma_i * normal3(&mut rng_perturb);
            }
            registry.seed_anchor(id, state.anchors[j].state);
            tracker.metrics.initialized = true;
            tracker.metrics.init_time = Some(epoch.t);
        }
        if all_init_at.is_none() && trackers.values().all(|t| t.metrics.initialized) {
            all_init_at = Some(epoch.t);
        }

        if let Some(first) = ids.first() {
            if epoch_count.is_multiple_of(10) && trackers[first].metrics.initialized {
                if let Some(v) = position_nees(&state, &cov, *first, &trackers[first].truth) {
                    nees_series.push(v);
                }
            }
        }
        epoch_count += 1;
        if opts.record_robot_digests {
            digests.push(robot_digest(&state.robot, &cov));
        }
    }

    let mut anchors = Vec::with_capacity(ids.len());
    for id in &ids {
        let tracker = trackers.remove(id).expect("tracked anchor");
        let mut m = tracker.metrics;
        if let Some(est) = state.anchor(*id) {
            m.position_error = Some((est.position - tracker.truth.position).norm());
            m.beta_error = Some((est.beta - tracker.truth.beta).abs());
            m.gamma_error = Some((est.gamma - tracker.truth.gamma).abs());
            m.position_nees = position_nees(&state, &cov, *id, &tracker.truth);
            m.estimate = Some(*est);
        }
        if m.window_len == 0 {
            m.window_len = tracker.window.entries.len();
        }
        anchors.push(m);
    }
    let errors: Vec<f64> = anchors.iter().filter_map(|a| a.position_error).collect();
    let status = if singular.is_some() {
        TrialStatus::InitSingular
    } else if anchors.iter().all(|a| a.initialized) {
        TrialStatus::Converged
    } else {
        TrialStatus::Incomplete
    };
    let rms_of = |xs: &[f64]| (!xs.is_empty()).then(|| (stats::mean(xs)).sqrt());
    let split = split_at.min(pos_err_sq.len());
    let metrics = TrialMetrics {
        seed: scenario.seed,
        mode,
        status,
        degenerate: singular,
        prmse: rms_of(&pos_err_sq).unwrap_or(0.0),
        ormse_deg: rms_of(&att_err_sq).unwrap_or(0.0),
        prmse_init: rms_of(&pos_err_sq[..split]),
        prmse_refine: rms_of(&pos_err_sq[split..]),
        mean_anchor_error: (errors.len() == ids.len() && !errors.is_empty())
            .then(|| stats::mean(&errors)),
        anchors,
        nees_series,
        uwb_accepted,
        uwb_rejected,
        vision_rejected,
        init_covariance_valid: init_cov_valid,
    };
    Ok(PipelineOutput {
        metrics,
        trace,
        robot_digests: digests,
        final_robot: state.robot.clone(),
        final_p_rr: cov.rr(),
        uwb_updates: uwb_accepted + uwb_rejected,
    })
}

/// PRMSE recomputed from trace rows.
pub fn trace_prmse(rows: &[TraceRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let sq: Vec<f64> = rows.iter().map(TraceRow::position_error_sq).collect();
    stats::mean(&sq).sqrt()
}
