//! Biased UWB ranging model `d = beta * (|p + R p_T - p_a| + n) + gamma`.

use nalgebra::{RowSVector, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{imu_idx, skew, ImuState, UwbState, ANCHOR_DIM, IMU_DIM};

/// Distances below this are treated as tag/anchor coincidence.
pub const DEGENERATE_DISTANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangingMeasurement {
    pub anchor_id: u32,
    pub distance: f64,
    pub timestamp: f64,
}

/// Tag position in the IMU frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagExtrinsics {
    pub p_t: Vector3<f64>,
}

impl Default for TagExtrinsics {
    fn default() -> Self {
        Self {
            p_t: Vector3::zeros(),
        }
    }
}

/// Which variance the filter assigns to a range residual.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RangeNoiseScaling {
    /// `beta^2 * Q_d`, matching the noise entering inside the scale bias.
    #[default]
    Scaled,
    /// Plain `Q_d`.
    Unscaled,
}

impl RangeNoiseScaling {
    pub fn variance(self, q_d: f64, beta: f64) -> f64 {
        match self {
            RangeNoiseScaling::Scaled => beta * beta * q_d,
            RangeNoiseScaling::Unscaled => q_d,
        }
    }
}

/// Tag position in the global frame.
pub fn tag_position(imu: &ImuState, ext: &TagExtrinsics) -> Vector3<f64> {
    imu.pos + imu.rot.rotate(&ext.p_t)
}

fn separation(imu: &ImuState, uwb: &UwbState, ext: &TagExtrinsics) -> Result<Vector3<f64>> {
    let u = tag_position(imu, ext) - uwb.position;
    if u.norm() < DEGENERATE_DISTANCE {
        return Err(Error::DegenerateGeometry);
    }
    Ok(u)
}

/// Noiseless range prediction.
pub fn predict_range(imu: &ImuState, uwb: &UwbState, ext: &TagExtrinsics) -> Result<f64> {
    let u = separation(imu, uwb, ext)?;
    Ok(uwb.beta * u.norm() + uwb.gamma)
}

/// Range Jacobians with respect to the IMU error state and the anchor error state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeJacobians {
    /// Columns `(dtheta, dbg, dv, dba, dp)`.
    pub h_imu: RowSVector<f64, IMU_DIM>,
    /// Columns `(dp_a, dbeta, dgamma)`.
    pub h_uwb: RowSVector<f64, ANCHOR_DIM>,
}

impl RangeJacobians {
    /// The 1x3 direction row `H_p`.
    pub fn h_p(&self) -> RowSVector<f64, 3> {
        self.h_imu.fixed_columns::<3>(imu_idx::POS).into_owned()
    }
}

pub fn range_jacobians(
    imu: &ImuState,
    uwb: &UwbState,
    ext: &TagExtrinsics,
) -> Result<RangeJacobians> {
    let u = separation(imu, uwb, ext)?;
    let dist = u.norm();
    let h_p = (u / dist).transpose() * uwb.beta;
    let lever = imu.rot.rotate(&ext.p_t);
    let h_theta = -(h_p * skew(&lever));

    let mut h_imu = RowSVector::<f64, IMU_DIM>::zeros();
    h_imu
        .fixed_columns_mut::<3>(imu_idx::THETA)
        .copy_from(&h_theta);
    h_imu.fixed_columns_mut::<3>(imu_idx::POS).copy_from(&h_p);

    let mut h_uwb = RowSVector::<f64, ANCHOR_DIM>::zeros();
    h_uwb.fixed_columns_mut::<3>(0).copy_from(&(-h_p));
    h_uwb[3] = dist;
    h_uwb[4] = 1.0;
    Ok(RangeJacobians { h_imu, h_uwb })
}

/// Draws a biased range; the noise enters inside the scale bias.
pub fn simulate_range<R: Rng + ?Sized>(
    imu: &ImuState,
    uwb: &UwbState,
    ext: &TagExtrinsics,
    noise_std: f64,
    anchor_id: u32,
    timestamp: f64,
    rng: &mut R,
) -> RangingMeasurement {
    let dist = (tag_position(imu, ext) - uwb.position).norm();
    let eta: f64 = rng.sample::<f64, _>(StandardNormal) * noise_std;
    RangingMeasurement {
        anchor_id,
        distance: uwb.beta * (dist + eta) + uwb.gamma,
        timestamp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::Rotation3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn origin() -> ImuState {
        ImuState::default()
    }

    fn anchor(beta: f64, gamma: f64) -> UwbState {
        UwbState::new(Vector3::new(10.0, 10.0, 10.0), beta, gamma)
    }

    fn random_config(rng: &mut ChaCha8Rng) -> (ImuState, UwbState, TagExtrinsics) {
        let v = |rng: &mut ChaCha8Rng, s: f64| {
            Vector3::new(
                rng.random_range(-s..s),
                rng.random_range(-s..s),
                rng.random_range(-s..s),
            )
        };
        let imu = ImuState {
            rot: Rotation3::exp(&v(rng, 3.0)),
            pos: v(rng, 5.0),
            ..ImuState::default()
        };
        let uwb = UwbState::new(
            v(rng, 12.0) + Vector3::new(0.0, 0.0, 3.0),
            rng.random_range(0.8..1.2),
            rng.random_range(-0.5..0.5),
        );
        let ext = TagExtrinsics { p_t: v(rng, 0.3) };
        (imu, uwb, ext)
    }

    #[test]
    fn unit_bias_reduces_to_distance() {
        let d = predict_range(&origin(), &anchor(1.0, 0.0), &TagExtrinsics::default()).unwrap();
        assert!((d - 300f64.sqrt()).abs() < 1e-12);
        assert!((d - 17.320508).abs() < 1e-6);
    }

    #[test]
    fn biased_range_hand_value() {
        let d = predict_range(&origin(), &anchor(0.9, -0.3), &TagExtrinsics::default()).unwrap();
        assert!((d - 15.288457).abs() < 1e-6);
    }

    #[test]
    fn coincident_tag_is_degenerate() {
        let imu = ImuState::at_pose(Rotation3::identity(), Vector3::new(10.0, 10.0, 10.0));
        let r = predict_range(&imu, &anchor(1.0, 0.0), &TagExtrinsics::default());
        assert_eq!(r, Err(Error::DegenerateGeometry));
        assert!(range_jacobians(&imu, &anchor(1.0, 0.0), &TagExtrinsics::default()).is_err());
    }

    #[test]
    fn jacobian_hand_values() {
        let j = range_jacobians(&origin(), &anchor(0.9, -0.3), &TagExtrinsics::default()).unwrap();
        for k in 0..3 {
            assert!((j.h_p()[k] + 0.5196152).abs() < 1e-7);
        }
        assert!((j.h_uwb[3] - 17.320508).abs() < 1e-6);
        assert_eq!(j.h_uwb[4], 1.0);
    }

    #[test]
    fn h_p_norm_equals_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let (imu, uwb, ext) = random_config(&mut rng);
            let j = range_jacobians(&imu, &uwb, &ext).unwrap();
            assert!((j.h_p().norm_squared() - uwb.beta * uwb.beta).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let (imu, uwb, ext) = random_config(&mut rng);
            let worst = crate::testutil::range_jacobian_fd_error(&imu, &uwb, &ext);
            assert!(worst < 1e-5, "fd relative error {worst}");
        }
    }

    #[test]
    fn rigid_transform_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (imu, uwb, ext) = random_config(&mut rng);
            let g = Rotation3::exp(&Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ));
            let t = Vector3::new(3.0, -7.0, 1.5);
            let imu2 = ImuState {
                rot: g.compose(&imu.rot),
                pos: g.rotate(&imu.pos) + t,
                ..imu
            };
            let uwb2 = UwbState {
                position: g.rotate(&uwb.position) + t,
                ..uwb
            };
            let a = predict_range(&imu, &uwb, &ext).unwrap();
            let b = predict_range(&imu2, &uwb2, &ext).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_noise_matches_prediction_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (imu, uwb, ext) = random_config(&mut rng);
        let m = simulate_range(&imu, &uwb, &ext, 0.0, 4, 1.5, &mut rng);
        assert_eq!(m.distance, predict_range(&imu, &uwb, &ext).unwrap());
        assert_eq!(m.anchor_id, 4);
        assert_eq!(m.timestamp, 1.5);
    }

    #[test]
    fn noise_moments_follow_scaled_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let uwb = anchor(0.9, -0.3);
        let ext = TagExtrinsics::default();
        let sigma = 0.1;
        let n = 100_000;
        let truth = predict_range(&origin(), &uwb, &ext).unwrap();
        let draws: Vec<f64> = (0..n)
            .map(|_| simulate_range(&origin(), &uwb, &ext, sigma, 0, 0.0, &mut rng).distance)
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let eff = uwb.beta * sigma;
        assert!((mean - truth).abs() < 4.0 * eff / (n as f64).sqrt());
        assert!((var.sqrt() - eff).abs() < 0.05 * eff);
    }
}
