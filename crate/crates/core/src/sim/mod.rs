//! Reproducible simulation scenarios, the full calibration pipeline and
//! Monte Carlo experiments.

pub mod generate;
pub mod montecarlo;
pub mod pipeline;
pub mod trajectory;

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::ImuNoise;
use crate::refiner::FejPolicy;
use crate::state::UwbState;
use crate::uwb::{RangeNoiseScaling, TagExtrinsics};

pub use trajectory::{TrajectorySpec, YawProfile};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorSpec {
    pub id: u32,
    pub position: [f64; 3],
    pub beta: f64,
    pub gamma: f64,
}

impl AnchorSpec {
    pub fn state(&self) -> UwbState {
        UwbState::new(Vector3::from(self.position), self.beta, self.gamma)
    }
}

pub fn default_anchors() -> Vec<AnchorSpec> {
    [
        [10.0, 10.0, 10.0],
        [-9.0, 8.0, 2.0],
        [8.0, -10.0, 6.0],
        [-10.0, -9.0, 9.0],
    ]
    .iter()
    .enumerate()
    .map(|(i, p)| AnchorSpec {
        id: i as u32,
        position: *p,
        beta: 0.9,
        gamma: -0.3,
    })
    .collect()
}

/// Landmarks scattered on a vertical cylinder around the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandmarkSpec {
    pub count: usize,
    pub radius: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for LandmarkSpec {
    fn default() -> Self {
        Self {
            count: 400,
            radius: 25.0,
            z_min: -1.0,
            z_max: 14.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSpec {
    pub max_observations: usize,
    /// Half field of view as a tangent of normalized coordinates.
    pub max_tan: f64,
    pub min_depth: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            max_observations: 8,
            max_tan: 1.0,
            min_depth: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub imu: ImuNoise,
    /// Normalized image coordinates.
    pub pixel_std: f64,
    /// Range noise std before bias scaling, m.
    pub range_std: f64,
    /// Per-entry random-walk std corrupting init-window poses, m.
    pub init_pose_std: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            imu: ImuNoise::default(),
            pixel_std: 0.005,
            range_std: 0.1,
            init_pose_std: 0.0,
        }
    }
}

/// Initial filter standard deviations; the initial truth error is drawn from
/// the same distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialUncertainty {
    pub attitude: f64,
    pub gyro_bias: f64,
    pub velocity: f64,
    pub accel_bias: f64,
    pub position: f64,
}

impl Default for InitialUncertainty {
    fn default() -> Self {
        Self {
            attitude: 1e-3,
            gyro_bias: 5e-4,
            velocity: 0.01,
            accel_bias: 0.02,
            position: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSpec {
    /// Minimum robot travel between admitted ranges, m.
    pub admission_spacing: f64,
    /// Entries collected before an anchor is initialized.
    pub target: usize,
    pub min: usize,
    /// Latest time at which a short window (>= `min`) is accepted, s.
    pub timeout: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            admission_spacing: 0.10,
            target: 150,
            min: 20,
            timeout: 40.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSpec {
    pub clone_window: usize,
    pub gate_prob: f64,
    pub noise_scaling: RangeNoiseScaling,
    pub fej: FejPolicy,
    pub beta_prior_std: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            clone_window: 11,
            gate_prob: 0.999,
            noise_scaling: RangeNoiseScaling::Scaled,
            fej: FejPolicy::Robot,
            beta_prior_std: 0.1,
        }
    }
}

/// Errors injected after initialization that the filter is not told about.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Perturbation {
    /// Per-axis std of an additive anchor-position error, m.
    pub anchor_init_error: f64,
    /// Factor on the true range noise std; the filter keeps the nominal one.
    pub range_noise_factor: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            anchor_init_error: 0.0,
            range_noise_factor: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimScenario {
    pub trajectory: TrajectorySpec,
    pub yaw: YawProfile,
    pub duration: f64,
    pub imu_rate: f64,
    pub camera_rate: f64,
    pub uwb_rate: f64,
    /// Tag position in the IMU frame, m.
    pub tag: [f64; 3],
    pub anchors: Vec<AnchorSpec>,
    pub landmarks: LandmarkSpec,
    pub camera: CameraSpec,
    pub noise: NoiseSpec,
    pub initial: InitialUncertainty,
    pub window: WindowSpec,
    pub filter: FilterSpec,
    pub perturbation: Perturbation,
    pub seed: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self {
            trajectory: TrajectorySpec::default(),
            yaw: YawProfile::default(),
            duration: 60.0,
            imu_rate: 200.0,
            camera_rate: 10.0,
            uwb_rate: 10.0,
            tag: [0.05, 0.0, 0.03],
            anchors: default_anchors(),
            landmarks: LandmarkSpec::default(),
            camera: CameraSpec::default(),
            noise: NoiseSpec::default(),
            initial: InitialUncertainty::default(),
            window: WindowSpec::default(),
            filter: FilterSpec::default(),
            perturbation: Perturbation::default(),
            seed: 0,
        }
    }
}

impl SimScenario {
    pub fn tag_extrinsics(&self) -> TagExtrinsics {
        TagExtrinsics {
            p_t: Vector3::from(self.tag),
        }
    }

    /// IMU samples between sensor events, checked to be integral.
    pub fn decimation(&self, rate: f64) -> Result<usize> {
        let ratio = self.imu_rate / rate;
        let k = ratio.round();
        if !(k >= 1.0) || (ratio - k).abs() > 1e-9 {
            return Err(Error::InvalidScenario(format!(
                "sensor rate {rate} must divide the imu rate {}",
                self.imu_rate
            )));
        }
        Ok(k as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        for (name, v) in [
            ("duration", self.duration),
            ("imu_rate", self.imu_rate),
            ("camera_rate", self.camera_rate),
            ("uwb_rate", self.uwb_rate),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive"));
            }
        }
        self.decimation(self.camera_rate)?;
        self.decimation(self.uwb_rate)?;
        if 1.0 / self.imu_rate > 0.1 {
            return bad("imu period must not exceed 0.1 s".into());
        }
        self.trajectory.validate()?;
        let mut ids: Vec<u32> = self.anchors.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.anchors.len() {
            return bad("anchor ids must be unique".into());
        }
        if self.anchors.iter().any(|a| !(a.beta > 0.0)) {
            return bad("anchor beta must be positive".into());
        }
        let n = &self.noise;
        if [n.pixel_std, n.range_std, n.init_pose_std].iter().any(|v| !(*v >= 0.0)) {
            return bad("noise stds must be non-negative".into());
        }
        if !(self.noise.pixel_std > 0.0) {
            return bad("pixel_std must be positive".into());
        }
        if self.window.min < 5 || self.window.target < self.window.min {
            return bad("window sizes must satisfy 5 <= min <= target".into());
        }
        if self.filter.clone_window == 0 {
            return bad("clone_window must be at least 1".into());
        }
        if !(self.filter.gate_prob > 0.0 && self.filter.gate_prob < 1.0) {
            return bad("gate_prob must lie in (0, 1)".into());
        }
        if !(self.perturbation.range_noise_factor >= 0.0)
            || !(self.perturbation.anchor_init_error >= 0.0)
        {
            return bad("perturbations must be non-negative".into());
        }
        Ok(())
    }
}

/// Initializer and refinement combination.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PipelineMode {
    #[default]
    #[serde(rename = "ri+skf")]
    RiSkf,
    #[serde(rename = "ri+ekf")]
    RiEkf,
    #[serde(rename = "lsi+skf")]
    LsiSkf,
    #[serde(rename = "lsi+ekf")]
    LsiEkf,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 4] = [
        PipelineMode::RiSkf,
        PipelineMode::RiEkf,
        PipelineMode::LsiSkf,
        PipelineMode::LsiEkf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineMode::RiSkf => "ri+skf",
            PipelineMode::RiEkf => "ri+ekf",
            PipelineMode::LsiSkf => "lsi+skf",
            PipelineMode::LsiEkf => "lsi+ekf",
        }
    }

    pub fn robust_init(self) -> bool {
        matches!(self, PipelineMode::RiSkf | PipelineMode::RiEkf)
    }

    pub fn schmidt(self) -> bool {
        matches!(self, PipelineMode::RiSkf | PipelineMode::LsiSkf)
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        PipelineMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown mode `{s}`; expected ri+skf, ri+ekf, lsi+skf or lsi+ekf"))
    }
}

/// Independent random streams derived from one seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Stream {
    Imu = 1,
    Camera = 2,
    Range = 3,
    Landmarks = 4,
    Initial = 5,
    InitWindow = 6,
    Perturbation = 7,
    Trajectory = 8,
    Estimate = 9,
}

pub(crate) fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
