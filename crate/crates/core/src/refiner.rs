//! Range updates of the joint filter.
//!
//! [`ekf_uwb_update`] corrects every state. [`skf_uwb_update`] treats the
//! robot states as nuisance: their mean and covariance never change, while the
//! anchor block and the robot/anchor cross-covariance are updated.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{BlockCovariance, FilterState, Rotation3, UwbState, ANCHOR_DIM, IMU_DIM};
use crate::stats::chi2_quantile;
use crate::update::{kalman_update, mahalanobis, innovation, GainPolicy, SparseMeasurement};
use crate::uwb::{predict_range, range_jacobians, RangeJacobians, RangeNoiseScaling, RangingMeasurement, TagExtrinsics};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateMode {
    Ekf,
    #[default]
    Skf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub anchor_id: u32,
    pub mode: UpdateMode,
    pub residual: f64,
    pub innovation: f64,
    pub mahalanobis: f64,
    pub accepted: bool,
    pub dp_rr_norm: f64,
    pub dp_ru_norm: f64,
    pub dp_uu_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    /// Range noise variance `Q_d`, m².
    pub range_variance: f64,
    pub noise_scaling: RangeNoiseScaling,
    /// Probability mass kept by the chi-square gate.
    pub gate_prob: f64,
    pub fej: FejPolicy,
}

/// Which states are linearized at their first estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FejPolicy {
    /// Current estimates everywhere.
    Off,
    /// Robot pose at its first estimate, anchors at the current estimate.
    #[default]
    Robot,
    /// Robot pose and anchors at their first estimates.
    All,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            range_variance: 0.01,
            noise_scaling: RangeNoiseScaling::Scaled,
            gate_prob: 0.999,
            fej: FejPolicy::Robot,
        }
    }
}

fn time_key(t: f64) -> i64 {
    (t * 1e6).round() as i64
}

/// Write-once store of first estimates used for linearization.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FejRegistry {
    anchors: BTreeMap<u32, UwbState>,
    clones: BTreeMap<i64, (Rotation3, Vector3<f64>)>,
}

impl FejRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores the first estimate; returns `false` if one already exists.
    pub fn seed_anchor(&mut self, id: u32, first: UwbState) -> bool {
        if self.anchors.contains_key(&id) {
            return false;
        }
        self.anchors.insert(id, first);
        true
    }

    pub fn anchor(&self, id: u32) -> Option<&UwbState> {
        self.anchors.get(&id)
    }

    pub fn seed_clone(&mut self, t: f64, rot: Rotation3, pos: Vector3<f64>) -> bool {
        let key = time_key(t);
        if self.clones.contains_key(&key) {
            return false;
        }
        self.clones.insert(key, (rot, pos));
        true
    }

    pub fn clone_pose(&self, t: f64) -> Option<&(Rotation3, Vector3<f64>)> {
        self.clones.get(&time_key(t))
    }

    /// Drops entries for clones that left the window.
    pub fn retain_clones(&mut self, live: &[f64]) {
        let keep: Vec<i64> = live.iter().map(|&t| time_key(t)).collect();
        self.clones.retain(|k, _| keep.contains(k));
    }
}

/// Range Jacobians at the first estimates of the anchor and, when the robot
/// time matches a registered clone, of the robot pose.
pub fn fej_linearize(
    anchor_id: u32,
    state: &FilterState,
    registry: &FejRegistry,
    ext: &TagExtrinsics,
) -> Result<RangeJacobians> {
    linearize(anchor_id, state, registry, ext, FejPolicy::All)
}

fn linearize(
    anchor_id: u32,
    state: &FilterState,
    registry: &FejRegistry,
    ext: &TagExtrinsics,
    policy: FejPolicy,
) -> Result<RangeJacobians> {
    let current = state
        .anchor(anchor_id)
        .ok_or(Error::UnknownAnchor(anchor_id))?;
    let first = registry
        .anchor(anchor_id)
        .ok_or(Error::UnseededAnchor(anchor_id))?;
    let mut imu = state.robot.imu;
    if policy != FejPolicy::Off && state.robot.clone_index(state.robot.t).is_some() {
        if let Some((rot, pos)) = registry.clone_pose(state.robot.t) {
            imu.rot = *rot;
            imu.pos = *pos;
        }
    }
    let uwb = if policy == FejPolicy::All { first } else { current };
    range_jacobians(&imu, uwb, ext)
}

fn uwb_update(
    state: &mut FilterState,
    cov: &mut BlockCovariance,
    meas: &RangingMeasurement,
    ext: &TagExtrinsics,
    registry: Option<&FejRegistry>,
    cfg: &RefineConfig,
    mode: UpdateMode,
) -> Result<UpdateReport> {
    let j = state
        .anchor_index(meas.anchor_id)
        .ok_or(Error::UnknownAnchor(meas.anchor_id))?;
    let uwb = state.anchors[j].state;
    let jac = match registry {
        Some(reg) => linearize(meas.anchor_id, state, reg, ext, cfg.fej)?,
        _ => range_jacobians(&state.robot.imu, &uwb, ext)?,
    };
    let residual = meas.distance - predict_range(&state.robot.imu, &uwb, ext)?;
    let offset = cov.anchor_offset(j);
    let mut cols: Vec<usize> = (0..IMU_DIM).collect();
    cols.extend(offset..offset + ANCHOR_DIM);
    let mut h = DMatrix::zeros(1, IMU_DIM + ANCHOR_DIM);
    for c in 0..IMU_DIM {
        h[(0, c)] = jac.h_imu[c];
    }
    for c in 0..ANCHOR_DIM {
        h[(0, IMU_DIM + c)] = jac.h_uwb[c];
    }
    let noise = cfg.noise_scaling.variance(cfg.range_variance, uwb.beta);
    let sparse = SparseMeasurement {
        cols,
        h,
        residual: DVector::from_element(1, residual),
        noise: DMatrix::from_element(1, 1, noise),
    };
    let s = innovation(cov, &sparse);
    if !(s[(0, 0)] > 0.0) {
        return Err(Error::NonPositiveInnovation(s[(0, 0)]));
    }
    let m2 = mahalanobis(&s, &sparse.residual)?;
    let mut report = UpdateReport {
        anchor_id: meas.anchor_id,
        mode,
        residual,
        innovation: s[(0, 0)],
        mahalanobis: m2,
        accepted: false,
        dp_rr_norm: 0.0,
        dp_ru_norm: 0.0,
        dp_uu_norm: 0.0,
    };
    if m2 > chi2_quantile(1, cfg.gate_prob) {
        return Ok(report);
    }
    let policy = match mode {
        UpdateMode::Ekf => GainPolicy::Full,
        UpdateMode::Skf => GainPolicy::AnchorsOnly,
    };
    let out = kalman_update(state, cov, &sparse, policy)?;
    report.accepted = true;
    report.dp_rr_norm = out.dp_rr_norm;
    report.dp_ru_norm = out.dp_ru_norm;
    report.dp_uu_norm = out.dp_uu_norm;
    Ok(report)
}

/// Full-state range update. A gated measurement is reported with
/// `accepted = false` and leaves the filter untouched.
pub fn ekf_uwb_update(
    state: &mut FilterState,
    cov: &mut BlockCovariance,
    meas: &RangingMeasurement,
    ext: &TagExtrinsics,
    registry: Option<&FejRegistry>,
    cfg: &RefineConfig,
) -> Result<UpdateReport> {
    uwb_update(state, cov, meas, ext, registry, cfg, UpdateMode::Ekf)
}

/// Schmidt range update: robot mean and `P_rr` are left bitwise unchanged.
pub fn skf_uwb_update(
    state: &mut FilterState,
    cov: &mut BlockCovariance,
    meas: &RangingMeasurement,
    ext: &TagExtrinsics,
    registry: Option<&FejRegistry>,
    cfg: &RefineConfig,
) -> Result<UpdateReport> {
    uwb_update(state, cov, meas, ext, registry, cfg, UpdateMode::Skf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{clone_augment, Anchor, ImuState, Matrix15, Matrix5, RobotState};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn truth() -> UwbState {
        UwbState::new(Vector3::new(10.0, 10.0, 10.0), 0.9, -0.3)
    }

    /// Filter with one clone and one anchor correlated with the robot.
    fn setup(correlated: bool, estimate: UwbState) -> (FilterState, BlockCovariance, FejRegistry) {
        let imu = ImuState::at_pose(Rotation3::from_yaw(0.3), Vector3::new(1.0, -2.0, 1.5));
        let mut s = FilterState::new(RobotState::new(0.0, imu, 5));
        let mut p = Matrix15::identity() * 1e-3;
        p[(12, 0)] = 2e-4;
        p[(0, 12)] = 2e-4;
        let cov = BlockCovariance::from_imu(&p);
        let (s2, cov) = clone_augment(&s, &cov).unwrap();
        s = s2;
        s.robot.t = 0.0;
        let cross = DMatrix::from_fn(cov.dim(), 5, |r, c| {
            if correlated && c < 3 {
                0.5 * cov.matrix()[(r, 12 + c)]
            } else {
                0.0
            }
        });
        let cov = cov.with_anchor(&cross, &(Matrix5::identity() * 0.25)).unwrap();
        s.anchors.push(Anchor { id: 7, state: estimate });
        let mut reg = FejRegistry::new();
        reg.seed_anchor(7, estimate);
        (s, cov, reg)
    }

    fn exact_range(s: &FilterState) -> RangingMeasurement {
        RangingMeasurement {
            anchor_id: 7,
            distance: predict_range(&s.robot.imu, &s.anchors[0].state, &TagExtrinsics::default())
                .unwrap(),
            timestamp: s.robot.t,
        }
    }

    #[test]
    fn zero_residual_only_shrinks_covariance() {
        let (mut s, mut cov, reg) = setup(true, truth());
        let before = s.clone();
        let tr = cov.matrix().trace();
        let m = exact_range(&s);
        let cfg = RefineConfig::default();
        let rep = ekf_uwb_update(&mut s, &mut cov, &m, &TagExtrinsics::default(), Some(&reg), &cfg).unwrap();
        assert!(rep.accepted);
        assert_eq!(rep.residual, 0.0);
        assert_eq!(s, before);
        assert!(cov.matrix().trace() < tr);
        assert!(cov.is_valid());
    }

    #[test]
    fn skf_leaves_robot_bitwise() {
        let (mut s, mut cov, reg) = setup(true, truth());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rr = cov.rr();
        let robot = s.robot.clone();
        let cfg = RefineConfig::default();
        for _ in 0..50 {
            let mut m = exact_range(&s);
            m.distance += rng.random_range(-0.2..0.2);
            let uu = cov.uu().trace();
            let rep = skf_uwb_update(&mut s, &mut cov, &m, &TagExtrinsics::default(), Some(&reg), &cfg).unwrap();
            assert!(rep.accepted);
            assert_eq!(rep.dp_rr_norm, 0.0);
            assert!(cov.uu().trace() <= uu);
            assert!(cov.is_valid());
        }
        assert_eq!(s.robot, robot);
        assert_eq!(cov.rr(), rr);
    }

    #[test]
    fn uncorrelated_skf_matches_ekf_on_anchor() {
        let est = UwbState::new(Vector3::new(10.3, 9.8, 10.1), 1.0, 0.0);
        let (mut se, mut ce, reg) = setup(false, est);
        let (mut ss, mut cs, _) = setup(false, est);
        let m = RangingMeasurement {
            anchor_id: 7,
            distance: 15.0,
            timestamp: 0.0,
        };
        let cfg = RefineConfig::default();
        let ext = TagExtrinsics::default();
        ekf_uwb_update(&mut se, &mut ce, &m, &ext, Some(&reg), &cfg).unwrap();
        skf_uwb_update(&mut ss, &mut cs, &m, &ext, Some(&reg), &cfg).unwrap();
        let du = se.anchors[0].state.boxminus(&ss.anchors[0].state);
        assert!(du.iter().all(|v| v.abs() < 1e-10));
        assert!((ce.uu() - cs.uu()).amax() < 1e-10);
    }

    #[test]
    fn outlier_is_gated_and_ignored() {
        let (mut s, mut cov, reg) = setup(true, truth());
        let mut m = exact_range(&s);
        m.distance += 100.0;
        let (s0, c0) = (s.clone(), cov.clone());
        for mode in [UpdateMode::Ekf, UpdateMode::Skf] {
            let cfg = RefineConfig::default();
            let rep = uwb_update(&mut s, &mut cov, &m, &TagExtrinsics::default(), Some(&reg), &cfg, mode)
                .unwrap();
            assert!(!rep.accepted);
            assert_eq!(s, s0);
            assert_eq!(cov, c0);
        }
    }

    #[test]
    fn unknown_and_unseeded_anchors() {
        let (mut s, mut cov, _) = setup(true, truth());
        let mut m = exact_range(&s);
        m.anchor_id = 3;
        let cfg = RefineConfig::default();
        let ext = TagExtrinsics::default();
        assert_eq!(
            ekf_uwb_update(&mut s, &mut cov, &m, &ext, None, &cfg).unwrap_err(),
            Error::UnknownAnchor(3)
        );
        assert_eq!(
            fej_linearize(7, &s, &FejRegistry::new(), &ext).unwrap_err(),
            Error::UnseededAnchor(7)
        );
    }

    #[test]
    fn fej_is_write_once() {
        let (mut s, mut cov, mut reg) = setup(true, truth());
        let ext = TagExtrinsics::default();
        let first = fej_linearize(7, &s, &reg, &ext).unwrap();
        let direct = range_jacobians(&s.robot.imu, &s.anchors[0].state, &ext).unwrap();
        assert_eq!(first, direct);
        let mut m = exact_range(&s);
        m.distance += 0.2;
        skf_uwb_update(&mut s, &mut cov, &m, &ext, Some(&reg), &RefineConfig::default()).unwrap();
        assert_ne!(s.anchors[0].state, truth());
        assert!(!reg.seed_anchor(7, s.anchors[0].state));
        assert_eq!(fej_linearize(7, &s, &reg, &ext).unwrap(), first);
    }

    #[test]
    fn anchor_error_shrinks_over_updates() {
        let t = truth();
        let est = UwbState::new(t.position + Vector3::new(0.6, -0.5, 0.4), 1.0, 0.0);
        let imu = ImuState::at_pose(Rotation3::identity(), Vector3::zeros());
        let mut s = FilterState::new(RobotState::new(0.0, imu, 5));
        let cov = BlockCovariance::from_imu(&(Matrix15::identity() * 1e-8));
        let mut block = Matrix5::identity() * 0.5;
        block[(3, 3)] = 0.01;
        let mut cov = cov.with_anchor(&DMatrix::zeros(15, 5), &block).unwrap();
        s.anchors.push(Anchor { id: 7, state: est });
        let mut reg = FejRegistry::new();
        reg.seed_anchor(7, est);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ext = TagExtrinsics::default();
        let cfg = RefineConfig {
            range_variance: 1e-4,
            fej: FejPolicy::Robot,
            ..RefineConfig::default()
        };
        let mut errs = Vec::new();
        for k in 0..500 {
            let tau = k as f64 * 0.05;
            s.robot.imu.pos = Vector3::new(
                10.0 + 8.0 * (0.5 * tau).sin(),
                10.0 + 7.0 * (0.33 * tau).cos(),
                2.0 + 1.5 * (0.7 * tau).sin(),
            );
            s.robot.t = tau;
            let m = crate::uwb::simulate_range(&s.robot.imu, &t, &ext, 0.01, 7, tau, &mut rng);
            ekf_uwb_update(&mut s, &mut cov, &m, &ext, Some(&reg), &cfg).unwrap();
            errs.push((s.anchors[0].state.position - t.position).norm());
        }
        let avg: Vec<f64> = errs.chunks(100).map(|c| c.iter().sum::<f64>() / 100.0).collect();
        for w in avg.windows(2) {
            assert!(w[1] < w[0], "{avg:?}");
        }
    }
}
