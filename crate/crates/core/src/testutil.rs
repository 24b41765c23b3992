//! Finite-difference oracles shared by unit tests.

use crate::state::{ImuState, UwbState, ANCHOR_DIM, IMU_DIM};
use crate::uwb::{predict_range, range_jacobians, TagExtrinsics};

/// Worst relative deviation between analytic range Jacobians and central
/// differences of `predict_range` with step `1e-6`.
pub fn range_jacobian_fd_error(imu: &ImuState, uwb: &UwbState, ext: &TagExtrinsics) -> f64 {
    let h = 1e-6;
    let j = range_jacobians(imu, uwb, ext).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..IMU_DIM {
        let mut d = [0.0; IMU_DIM];
        d[k] = h;
        let plus = predict_range(&imu.boxplus(&d), uwb, ext).unwrap();
        d[k] = -h;
        let minus = predict_range(&imu.boxplus(&d), uwb, ext).unwrap();
        let fd = (plus - minus) / (2.0 * h);
        worst = worst.max((fd - j.h_imu[k]).abs() / j.h_imu[k].abs().max(1.0));
    }
    for k in 0..ANCHOR_DIM {
        let mut d = [0.0; ANCHOR_DIM];
        d[k] = h;
        let plus = predict_range(imu, &uwb.boxplus(&d), ext).unwrap();
        d[k] = -h;
        let minus = predict_range(imu, &uwb.boxplus(&d), ext).unwrap();
        let fd = (plus - minus) / (2.0 * h);
        worst = worst.max((fd - j.h_uwb[k]).abs() / j.h_uwb[k].abs().max(1.0));
    }
    worst
}
