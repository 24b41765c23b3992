//! Parametric truth trajectories with analytic derivatives.
//!
//! Attitude is yaw-only so that the body z axis stays aligned with gravity.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrajectorySpec {
    /// `center + amplitude * sin(2 pi t / period + phase)` per axis.
    Lissajous {
        center: [f64; 3],
        amplitude: [f64; 3],
        period: [f64; 3],
        phase: [f64; 3],
    },
    /// Horizontal circle with a vertical sinusoid.
    Circle {
        center: [f64; 3],
        radius: f64,
        period: f64,
        z_amplitude: f64,
        z_period: f64,
    },
    /// Closed Catmull-Rom spline through the waypoints, one segment per
    /// `segment_duration`. Acceleration is discontinuous at the waypoints.
    WaypointSpline {
        waypoints: Vec<[f64; 3]>,
        segment_duration: f64,
    },
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec::Lissajous {
            center: [0.0, 0.0, 6.0],
            amplitude: [12.0, 11.0, 5.0],
            period: [20.0, 14.0, 9.0],
            phase: [0.0, 1.0, 0.5],
        }
    }
}

/// `yaw(t) = offset + rate t + amplitude sin(2 pi t / period)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct YawProfile {
    pub offset: f64,
    pub rate: f64,
    pub amplitude: f64,
    pub period: f64,
}

impl Default for YawProfile {
    fn default() -> Self {
        Self {
            offset: 0.0,
            rate: 0.15,
            amplitude: 0.6,
            period: 17.0,
        }
    }
}

/// Position, velocity and acceleration plus yaw and yaw rate at one time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kinematics {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub acc: Vector3<f64>,
    pub yaw: f64,
    pub yaw_rate: f64,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidScenario(m.to_string()));
        match self {
            TrajectorySpec::Lissajous { period, .. } => {
                if period.iter().any(|p| !(*p > 0.0)) {
                    return bad("lissajous periods must be positive");
                }
            }
            TrajectorySpec::Circle {
                radius,
                period,
                z_period,
                ..
            } => {
                if !(*period > 0.0) || !(*z_period > 0.0) || !(*radius >= 0.0) {
                    return bad("circle radius and periods must be positive");
                }
            }
            TrajectorySpec::WaypointSpline {
                waypoints,
                segment_duration,
            } => {
                if waypoints.len() < 3 {
                    return bad("waypoint spline needs at least 3 waypoints");
                }
                if !(*segment_duration > 0.0) {
                    return bad("segment duration must be positive");
                }
            }
        }
        Ok(())
    }

    /// Position, velocity and acceleration at `t`.
    pub fn eval(&self, t: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        match self {
            TrajectorySpec::Lissajous {
                center,
                amplitude,
                period,
                phase,
            } => {
                let mut p = Vector3::zeros();
                let mut v = Vector3::zeros();
                let mut a = Vector3::zeros();
                for i in 0..3 {
                    let w = TAU / period[i];
                    let arg = w * t + phase[i];
                    p[i] = center[i] + amplitude[i] * arg.sin();
                    v[i] = amplitude[i] * w * arg.cos();
                    a[i] = -amplitude[i] * w * w * arg.sin();
                }
                (p, v, a)
            }
            TrajectorySpec::Circle {
                center,
                radius,
                period,
                z_amplitude,
                z_period,
            } => {
                let w = TAU / period;
                let wz = TAU / z_period;
                let (s, c) = (w * t).sin_cos();
                let (sz, cz) = (wz * t).sin_cos();
                let p = Vector3::new(
                    center[0] + radius * c,
                    center[1] + radius * s,
                    center[2] + z_amplitude * sz,
                );
                let v = Vector3::new(-radius * w * s, radius * w * c, z_amplitude * wz * cz);
                let a = Vector3::new(
                    -radius * w * w * c,
                    -radius * w * w * s,
                    -z_amplitude * wz * wz * sz,
                );
                (p, v, a)
            }
            TrajectorySpec::WaypointSpline {
                waypoints,
                segment_duration,
            } => {
                let n = waypoints.len();
                let total = n as f64 * segment_duration;
                let tau = t.rem_euclid(total) / segment_duration;
                let seg = (tau.floor() as usize).min(n - 1);
                let u = tau - seg as f64;
                let pt = |k: usize| Vector3::from(waypoints[k % n]);
                let p0 = pt(seg + n - 1);
                let p1 = pt(seg);
                let p2 = pt(seg + 1);
                let p3 = pt(seg + 2);
                let c1 = -p0 + p2;
                let c2 = 2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3;
                let c3 = -p0 + 3.0 * p1 - 3.0 * p2 + p3;
                let pos = 0.5 * (2.0 * p1 + c1 * u + c2 * u * u + c3 * u * u * u);
                let vel = 0.5 * (c1 + 2.0 * c2 * u + 3.0 * c3 * u * u) / *segment_duration;
                let acc = 0.5 * (2.0 * c2 + 6.0 * c3 * u) / (segment_duration * segment_duration);
                (pos, vel, acc)
            }
        }
    }
}

impl YawProfile {
    pub fn eval(&self, t: f64) -> (f64, f64) {
        if self.period > 0.0 && self.amplitude != 0.0 {
            let w = TAU / self.period;
            (
                self.offset + self.rate * t + self.amplitude * (w * t).sin(),
                self.rate + self.amplitude * w * (w * t).cos(),
            )
        } else {
            (self.offset + self.rate * t, self.rate)
        }
    }
}

pub fn kinematics(traj: &TrajectorySpec, yaw: &YawProfile, t: f64) -> Kinematics {
    let (pos, vel, acc) = traj.eval(t);
    let (y, yr) = yaw.eval(t);
    Kinematics {
        pos,
        vel,
        acc,
        yaw: y,
        yaw_rate: yr,
    }
}
