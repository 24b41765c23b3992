//! Sensor stream generation from a scenario.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::trajectory::kinematics;
use super::{stream_rng, SimScenario, Stream};
use crate::error::Result;
use crate::propagation::{camera_point, gravity, CameraExtrinsics, ImuSample, LandmarkMap, LandmarkObservation};
use crate::state::{ImuState, Rotation3};
use crate::uwb::{simulate_range, RangingMeasurement};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub imu: ImuState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraFrame {
    pub t: f64,
    /// Index into the IMU stream.
    pub index: usize,
    pub observations: Vec<LandmarkObservation>,
}

/// Ranges of all anchors taken at one IMU index.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeEpoch {
    pub t: f64,
    pub index: usize,
    pub ranges: Vec<RangingMeasurement>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimData {
    pub truth: Vec<TruthSample>,
    pub imu: Vec<ImuSample>,
    pub frames: Vec<CameraFrame>,
    pub ranges: Vec<RangeEpoch>,
    pub landmarks: LandmarkMap,
    pub camera: CameraExtrinsics,
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn normal3<R: Rng>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(normal(rng), normal(rng), normal(rng))
}

pub fn landmark_map(scenario: &SimScenario) -> LandmarkMap {
    let spec = &scenario.landmarks;
    let mut rng = stream_rng(scenario.seed, Stream::Landmarks);
    let points = (0..spec.count)
        .map(|_| {
            let a: f64 = rng.random_range(0.0..TAU);
            let z = if spec.z_max > spec.z_min {
                rng.random_range(spec.z_min..spec.z_max)
            } else {
                spec.z_min
            };
            Vector3::new(spec.radius * a.cos(), spec.radius * a.sin(), z)
        })
        .collect();
    LandmarkMap::new(points)
}

/// Generates truth, IMU, camera and range streams. Deterministic in the seed.
///
/// Ranges are taken half a camera period after frames so that range and
/// camera updates never share a timestamp.
pub fn generate(scenario: &SimScenario) -> Result<SimData> {
    scenario.validate()?;
    let dt = 1.0 / scenario.imu_rate;
    let n = (scenario.duration * scenario.imu_rate).floor() as usize + 1;
    let cam_stride = scenario.decimation(scenario.camera_rate)?;
    let uwb_stride = scenario.decimation(scenario.uwb_rate)?;
    let uwb_offset = (cam_stride / 2) % uwb_stride;
    let noise = &scenario.noise;
    let ext = scenario.tag_extrinsics();
    let cam = CameraExtrinsics::default();
    let landmarks = landmark_map(scenario);
    let anchors: Vec<_> = scenario.anchors.iter().map(|a| (a.id, a.state())).collect();

    let mut rng_imu = stream_rng(scenario.seed, Stream::Imu);
    let mut rng_cam = stream_rng(scenario.seed, Stream::Camera);
    let mut rng_range = stream_rng(scenario.seed, Stream::Range);
    let mut rng_init = stream_rng(scenario.seed, Stream::Initial);

    let mut bg = scenario.initial.gyro_bias * normal3(&mut rng_init);
    let mut ba = scenario.initial.accel_bias * normal3(&mut rng_init);
    let white_g = noise.imu.gyro_density / dt.sqrt();
    let white_a = noise.imu.accel_density / dt.sqrt();
    let walk_g = noise.imu.gyro_walk * dt.sqrt();
    let walk_a = noise.imu.accel_walk * dt.sqrt();
    let range_std = noise.range_std * scenario.perturbation.range_noise_factor;

    let mut truth = Vec::with_capacity(n);
    let mut imu = Vec::with_capacity(n);
    let mut frames = Vec::new();
    let mut ranges = Vec::new();
    for i in 0..n {
        let t = i as f64 * dt;
        let k = kinematics(&scenario.trajectory, &scenario.yaw, t);
        let rot = Rotation3::from_yaw(k.yaw);
        let state = ImuState {
            rot,
            bg,
            vel: k.vel,
            ba,
            pos: k.pos,
        };
        truth.push(TruthSample { t, imu: state });
        let omega = Vector3::new(0.0, 0.0, k.yaw_rate);
        let force = rot.inverse().rotate(&(k.acc - gravity()));
        imu.push(ImuSample {
            t,
            gyro: omega + bg + white_g * normal3(&mut rng_imu),
            accel: force + ba + white_a * normal3(&mut rng_imu),
        });
        bg += walk_g * normal3(&mut rng_imu);
        ba += walk_a * normal3(&mut rng_imu);

        if i % cam_stride == 0 {
            let mut visible: Vec<u32> = landmarks
                .iter()
                .filter(|(_, p)| {
                    let pc = camera_point(p, &rot, &k.pos, &cam);
                    pc.z >= scenario.camera.min_depth
                        && (pc.x / pc.z).abs() <= scenario.camera.max_tan
                        && (pc.y / pc.z).abs() <= scenario.camera.max_tan
                })
                .map(|(id, _)| id)
                .collect();
            let keep = scenario.camera.max_observations.min(visible.len());
            visible.partial_shuffle(&mut rng_cam, keep);
            visible.truncate(keep);
            visible.sort_unstable();
            let observations = visible
                .into_iter()
                .map(|id| {
                    let pc = camera_point(landmarks.get(id).expect("visible id"), &rot, &k.pos, &cam);
                    LandmarkObservation {
                        landmark_id: id,
                        u: pc.x / pc.z + noise.pixel_std * normal(&mut rng_cam),
                        v: pc.y / pc.z + noise.pixel_std * normal(&mut rng_cam),
                        t,
                    }
                })
                .collect();
            frames.push(CameraFrame {
                t,
                index: i,
                observations,
            });
        }
        if i % uwb_stride == uwb_offset {
            let r = anchors
                .iter()
                .map(|(id, a)| simulate_range(&state, a, &ext, range_std, *id, t, &mut rng_range))
                .collect();
            ranges.push(RangeEpoch {
                t,
                index: i,
                ranges: r,
            });
        }
    }
    Ok(SimData {
        truth,
        imu,
        frames,
        ranges,
        landmarks,
        camera: cam,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::{propagate_mean, ImuNoise};
    use crate::sim::{InitialUncertainty, NoiseSpec, TrajectorySpec};
    use crate::uwb::predict_range;

    fn noiseless(traj: TrajectorySpec) -> SimScenario {
        SimScenario {
            trajectory: traj,
            noise: NoiseSpec {
                imu: ImuNoise::zero(),
                pixel_std: 1e-9,
                range_std: 0.0,
                init_pose_std: 0.0,
            },
            initial: InitialUncertainty {
                gyro_bias: 0.0,
                accel_bias: 0.0,
                ..InitialUncertainty::default()
            },
            ..SimScenario::default()
        }
    }

    fn integration_error(s: &SimScenario) -> f64 {
        let data = generate(s).unwrap();
        let mut est = data.truth[0].imu;
        let mut worst: f64 = 0.0;
        for i in 1..data.imu.len() {
            est = propagate_mean(&est, &data.imu[i - 1], &data.imu[i]);
            worst = worst.max((est.pos - data.truth[i].imu.pos).norm());
        }
        worst
    }

    #[test]
    fn zero_noise_circle_integrates_to_truth() {
        let s = noiseless(TrajectorySpec::Circle {
            center: [0.0, 0.0, 2.0],
            radius: 4.0,
            period: 20.0,
            z_amplitude: 1.0,
            z_period: 9.0,
        });
        assert!(integration_error(&s) < 1e-3);
    }

    #[test]
    fn zero_noise_lissajous_integrates_to_truth() {
        assert!(integration_error(&noiseless(TrajectorySpec::default())) < 1e-3);
    }

    #[test]
    fn same_seed_same_streams() {
        let s = SimScenario {
            duration: 5.0,
            seed: 17,
            ..SimScenario::default()
        };
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        let other = SimScenario { seed: 18, ..s.clone() };
        assert_ne!(generate(&s).unwrap().imu, generate(&other).unwrap().imu);
    }

    #[test]
    fn zero_noise_ranges_match_model() {
        let s = SimScenario {
            duration: 5.0,
            ..noiseless(TrajectorySpec::default())
        };
        let data = generate(&s).unwrap();
        let ext = s.tag_extrinsics();
        for epoch in &data.ranges {
            let truth = &data.truth[epoch.index].imu;
            for (m, a) in epoch.ranges.iter().zip(&s.anchors) {
                assert_eq!(m.distance, predict_range(truth, &a.state(), &ext).unwrap());
            }
        }
        assert_eq!(data.ranges.len(), 50);
        assert_eq!(data.frames.len(), 51);
        assert!(data.frames.iter().all(|f| !f.observations.is_empty()));
    }
}
