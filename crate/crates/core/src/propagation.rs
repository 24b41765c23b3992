//! Strapdown IMU propagation with block covariance propagation, and the
//! known-landmark camera update.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{
    imu_idx, right_jacobian, skew, BlockCovariance, FilterState, ImuState, Matrix15, Rotation3,
    CLONE_DIM, IMU_DIM,
};
use crate::stats::chi2_quantile;
use crate::update::{innovation, kalman_update, mahalanobis, GainPolicy, SparseMeasurement};

/// Gravity magnitude, global frame is +z up.
pub const GRAVITY: f64 = 9.81;

pub fn gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -GRAVITY)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    /// Angular velocity, rad/s, body frame.
    pub gyro: Vector3<f64>,
    /// Specific force, m/s², body frame.
    pub accel: Vector3<f64>,
}

/// Continuous-time IMU noise densities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuNoise {
    /// rad/s/√Hz
    pub gyro_density: f64,
    /// m/s²/√Hz
    pub accel_density: f64,
    /// rad/s²/√Hz
    pub gyro_walk: f64,
    /// m/s³/√Hz
    pub accel_walk: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        Self {
            gyro_density: 1.7e-4,
            accel_density: 2.0e-3,
            gyro_walk: 2.0e-5,
            accel_walk: 3.0e-3,
        }
    }
}

impl ImuNoise {
    pub fn zero() -> Self {
        Self {
            gyro_density: 0.0,
            accel_density: 0.0,
            gyro_walk: 0.0,
            accel_walk: 0.0,
        }
    }
}

/// Mean propagation between two consecutive samples.
///
/// Attitude uses the averaged rate; velocity and position use the exact
/// integrals of a world acceleration that varies linearly over the step.
pub fn propagate_mean(imu: &ImuState, from: &ImuSample, to: &ImuSample) -> ImuState {
    let dt = to.t - from.t;
    let w = 0.5 * (from.gyro + to.gyro) - imu.bg;
    let r0 = imu.rot;
    let r1 = r0.compose(&Rotation3::exp(&(w * dt)));
    let aw0 = r0.rotate(&(from.accel - imu.ba)) + gravity();
    let aw1 = r1.rotate(&(to.accel - imu.ba)) + gravity();
    ImuState {
        rot: r1,
        bg: imu.bg,
        vel: imu.vel + 0.5 * (aw0 + aw1) * dt,
        ba: imu.ba,
        pos: imu.pos + imu.vel * dt + (aw0 / 3.0 + aw1 / 6.0) * (dt * dt),
    }
}

/// State transition `Phi` of [`propagate_mean`] and the discrete process
/// noise `Q`, both over the 15-dim IMU error state.
pub fn transition(
    imu: &ImuState,
    from: &ImuSample,
    to: &ImuSample,
    noise: &ImuNoise,
) -> (Matrix15, Matrix15) {
    use imu_idx::{BA, BG, POS, THETA, VEL};
    let dt = to.t - from.t;
    let phi_vec = (0.5 * (from.gyro + to.gyro) - imu.bg) * dt;
    let r0 = imu.rot.matrix();
    let r1 = imu.rot.compose(&Rotation3::exp(&phi_vec)).matrix();
    let jr = right_jacobian(&phi_vec);
    let f0 = r0 * (from.accel - imu.ba);
    let f1 = r1 * (to.accel - imu.ba);
    let (sf0, sf1) = (skew(&f0), skew(&f1));
    let dth_dbg = -r1 * jr * dt;
    let dt2 = dt * dt;

    let mut phi = Matrix15::identity();
    let mut set = |r: usize, c: usize, m: Matrix3<f64>| {
        phi.fixed_view_mut::<3, 3>(r, c).copy_from(&m);
    };
    set(THETA, BG, dth_dbg);
    // velocity: 0.5 dt (df0 + df1), df1 sees the propagated attitude error
    set(VEL, THETA, -0.5 * dt * (sf0 + sf1));
    set(VEL, BG, -0.5 * dt * sf1 * dth_dbg);
    set(VEL, BA, -0.5 * dt * (r0 + r1));
    set(POS, THETA, -dt2 * (sf0 / 3.0 + sf1 / 6.0));
    set(POS, BG, -dt2 / 6.0 * sf1 * dth_dbg);
    set(POS, VEL, Matrix3::identity() * dt);
    set(POS, BA, -dt2 * (r0 / 3.0 + r1 / 6.0));

    let mut q = Matrix15::zeros();
    let gyro_var = noise.gyro_density.powi(2) / dt;
    let accel_var = noise.accel_density.powi(2) / dt;
    let g_theta = dth_dbg;
    let g_v = -0.5 * dt * (r0 + r1);
    let g_p = -dt2 * (r0 / 3.0 + r1 / 6.0);
    let mut add = |r: usize, c: usize, m: Matrix3<f64>| {
        let mut blk = q.fixed_view_mut::<3, 3>(r, c);
        blk += m;
    };
    add(THETA, THETA, g_theta * g_theta.transpose() * gyro_var);
    add(VEL, VEL, g_v * g_v.transpose() * accel_var);
    add(POS, POS, g_p * g_p.transpose() * accel_var);
    add(VEL, POS, g_v * g_p.transpose() * accel_var);
    add(POS, VEL, g_p * g_v.transpose() * accel_var);
    add(BG, BG, Matrix3::identity() * noise.gyro_walk.powi(2) * dt);
    add(BA, BA, Matrix3::identity() * noise.accel_walk.powi(2) * dt);
    (phi, q)
}

/// Propagates the IMU state from `from.t` to `to.t`.
///
/// Only `P_II` and the IMU rows of the cross blocks change; `P_CC`, `P_CU`
/// and `P_UU` are left untouched.
pub fn propagate(
    state: &mut FilterState,
    cov: &mut BlockCovariance,
    from: &ImuSample,
    to: &ImuSample,
    noise: &ImuNoise,
) -> Result<()> {
    let dt = to.t - from.t;
    if !dt.is_finite() || dt <= 0.0 || dt > 0.1 {
        return Err(Error::InvalidTimeStep(dt));
    }
    let finite = |v: &Vector3<f64>| v.iter().all(|x| x.is_finite());
    if !(finite(&from.gyro) && finite(&from.accel) && finite(&to.gyro) && finite(&to.accel)) {
        return Err(Error::NonFinite("imu sample"));
    }
    if !state.robot.imu.is_finite() {
        return Err(Error::NonFinite("imu state"));
    }

    let (phi, q) = transition(&state.robot.imu, from, to, noise);
    state.robot.imu = propagate_mean(&state.robot.imu, from, to);
    state.robot.t = to.t;

    let n = cov.dim();
    let nr = cov.robot_dim();
    let p = cov.matrix_mut();
    // IMU rows against clones, then against anchors
    for (c0, len) in [(IMU_DIM, nr - IMU_DIM), (nr, n - nr)] {
        if len == 0 {
            continue;
        }
        let rows = phi * p.view((0, c0), (IMU_DIM, len));
        p.view_mut((0, c0), (IMU_DIM, len)).copy_from(&rows);
        p.view_mut((c0, 0), (len, IMU_DIM))
            .copy_from(&rows.transpose());
    }
    let p_ii = p.fixed_view::<IMU_DIM, IMU_DIM>(0, 0).into_owned();
    let mut p_ii = phi * p_ii * phi.transpose() + q;
    p_ii = 0.5 * (p_ii + p_ii.transpose());
    p.fixed_view_mut::<IMU_DIM, IMU_DIM>(0, 0).copy_from(&p_ii);
    Ok(())
}

/// Camera mounting: `p_C = R_CI * p_I + p_CI` for a point `p_I` in the IMU frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraExtrinsics {
    pub r_ci: Rotation3,
    pub p_ci: Vector3<f64>,
}

impl Default for CameraExtrinsics {
    /// Forward-looking camera: optical axis along body +x, image x along
    /// body -y, image y along body -z.
    fn default() -> Self {
        let m = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
        let r = nalgebra::Rotation3::from_matrix_unchecked(m);
        Self {
            r_ci: Rotation3::from_unit_quaternion(nalgebra::UnitQuaternion::from_rotation_matrix(
                &r,
            )),
            p_ci: Vector3::zeros(),
        }
    }
}

/// Minimum camera-frame depth accepted by [`project`].
pub const MIN_DEPTH: f64 = 1e-6;

/// Landmark position in the camera frame of a pose.
pub fn camera_point(
    landmark: &Vector3<f64>,
    rot: &Rotation3,
    pos: &Vector3<f64>,
    cam: &CameraExtrinsics,
) -> Vector3<f64> {
    cam.r_ci
        .rotate(&rot.inverse().rotate(&(landmark - pos)))
        + cam.p_ci
}

/// Normalized image coordinates `(x/z, y/z)` of a landmark seen from a pose.
pub fn project(
    landmark: &Vector3<f64>,
    rot: &Rotation3,
    pos: &Vector3<f64>,
    cam: &CameraExtrinsics,
) -> Result<Vector2<f64>> {
    let pc = camera_point(landmark, rot, pos, cam);
    if pc.z <= MIN_DEPTH {
        return Err(Error::NonPositiveDepth(pc.z));
    }
    Ok(Vector2::new(pc.x / pc.z, pc.y / pc.z))
}

/// Projection with its Jacobians with respect to the pose errors `(dtheta, dp)`.
pub fn project_with_jacobian(
    landmark: &Vector3<f64>,
    rot: &Rotation3,
    pos: &Vector3<f64>,
    cam: &CameraExtrinsics,
) -> Result<(Vector2<f64>, Matrix2x3<f64>, Matrix2x3<f64>)> {
    let pc = camera_point(landmark, rot, pos, cam);
    if pc.z <= MIN_DEPTH {
        return Err(Error::NonPositiveDepth(pc.z));
    }
    let iz = 1.0 / pc.z;
    let dproj = Matrix2x3::new(iz, 0.0, -pc.x * iz * iz, 0.0, iz, -pc.y * iz * iz);
    let r_cg = cam.r_ci.matrix() * rot.matrix().transpose();
    let d_theta = dproj * r_cg * skew(&(landmark - pos));
    let d_pos = -dproj * r_cg;
    Ok((Vector2::new(pc.x * iz, pc.y * iz), d_theta, d_pos))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkObservation {
    pub landmark_id: u32,
    pub u: f64,
    pub v: f64,
    /// Timestamp of the clone the observation was taken from.
    pub t: f64,
}

/// Known landmark positions indexed by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LandmarkMap {
    points: Vec<Vector3<f64>>,
}

impl LandmarkMap {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self { points }
    }

    pub fn get(&self, id: u32) -> Option<&Vector3<f64>> {
        self.points.get(id as usize)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &Vector3<f64>)> {
        self.points.iter().enumerate().map(|(i, p)| (i as u32, p))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VisionReport {
    pub accepted: usize,
    pub rejected: usize,
}

/// EKF update with stacked reprojection residuals of known landmarks.
///
/// Each observation is gated individually at `gate_prob` of `chi2(2)`.
pub fn vision_update(
    state: &mut FilterState,
    cov: &mut BlockCovariance,
    observations: &[LandmarkObservation],
    map: &LandmarkMap,
    cam: &CameraExtrinsics,
    pixel_noise_std: f64,
    gate_prob: f64,
) -> Result<VisionReport> {
    let threshold = chi2_quantile(2, gate_prob);
    let var = pixel_noise_std * pixel_noise_std;
    let mut rows: Vec<VisionRow> = Vec::new();
    let mut rejected = 0;
    for obs in observations {
        let ci = state
            .robot
            .clone_index(obs.t)
            .ok_or(Error::UnknownClone(obs.t))?;
        let lm = map
            .get(obs.landmark_id)
            .ok_or(Error::UnknownLandmark(obs.landmark_id))?;
        let clone = &state.robot.clones[ci];
        let (pred, d_th, d_p) = match project_with_jacobian(lm, &clone.rot, &clone.pos, cam) {
            Ok(v) => v,
            Err(_) => {
                rejected += 1;
                continue;
            }
        };
        let r = Vector2::new(obs.u, obs.v) - pred;
        let single = sparse_from_rows(cov, &[(ci, d_th, d_p, r)], var);
        let s = innovation(cov, &single);
        if mahalanobis(&s, &single.residual)? > threshold {
            rejected += 1;
            continue;
        }
        rows.push((ci, d_th, d_p, r));
    }
    if rows.is_empty() {
        return Err(Error::NoValidObservations);
    }
    let meas = sparse_from_rows(cov, &rows, var);
    kalman_update(state, cov, &meas, GainPolicy::Full)?;
    Ok(VisionReport {
        accepted: rows.len(),
        rejected,
    })
}

/// Clone index, clone-pose Jacobian blocks and residual of one observation.
type VisionRow = (usize, Matrix2x3<f64>, Matrix2x3<f64>, Vector2<f64>);

fn sparse_from_rows(
    cov: &BlockCovariance,
    rows: &[VisionRow],
    var: f64,
) -> SparseMeasurement {
    let clones: BTreeSet<usize> = rows.iter().map(|r| r.0).collect();
    let clones: Vec<usize> = clones.into_iter().collect();
    let cols: Vec<usize> = clones
        .iter()
        .flat_map(|&c| {
            let o = cov.clone_offset(c);
            o..o + CLONE_DIM
        })
        .collect();
    let m = 2 * rows.len();
    let mut h = DMatrix::zeros(m, cols.len());
    let mut residual = DVector::zeros(m);
    for (k, (ci, d_th, d_p, r)) in rows.iter().enumerate() {
        let slot = clones.iter().position(|c| c == ci).unwrap() * CLONE_DIM;
        h.view_mut((2 * k, slot), (2, 3)).copy_from(d_th);
        h.view_mut((2 * k, slot + 3), (2, 3)).copy_from(d_p);
        residual.rows_mut(2 * k, 2).copy_from(r);
    }
    SparseMeasurement {
        cols,
        h,
        residual,
        noise: DMatrix::identity(m, m) * var,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{clone_augment, RobotState};

    fn sample(t: f64, gyro: Vector3<f64>, accel: Vector3<f64>) -> ImuSample {
        ImuSample { t, gyro, accel }
    }

    fn moving_state() -> ImuState {
        ImuState {
            rot: Rotation3::exp(&Vector3::new(0.2, -0.1, 0.7)),
            bg: Vector3::new(0.01, -0.02, 0.005),
            vel: Vector3::new(1.0, -0.5, 0.3),
            ba: Vector3::new(0.05, 0.02, -0.03),
            pos: Vector3::new(1.0, 2.0, 3.0),
        }
    }

    #[test]
    fn hover_keeps_position_and_velocity() {
        let imu = ImuState::default();
        let up = Vector3::new(0.0, 0.0, GRAVITY);
        let a = sample(0.0, Vector3::zeros(), up);
        let b = sample(0.005, Vector3::zeros(), up);
        let out = propagate_mean(&imu, &a, &b);
        assert!(out.pos.norm() < 1e-12);
        assert!(out.vel.norm() < 1e-12);
    }

    #[test]
    fn transition_matches_finite_differences() {
        let imu = moving_state();
        let a = sample(0.0, Vector3::new(0.3, -0.2, 0.5), Vector3::new(0.4, 0.1, 9.7));
        let b = sample(0.01, Vector3::new(0.25, -0.1, 0.6), Vector3::new(0.5, -0.2, 9.9));
        let (phi, _) = transition(&imu, &a, &b, &ImuNoise::default());
        let base = propagate_mean(&imu, &a, &b);
        let h = 1e-6;
        let mut fd = Matrix15::zeros();
        for k in 0..IMU_DIM {
            let mut d = [0.0; IMU_DIM];
            d[k] = h;
            let plus = propagate_mean(&imu.boxplus(&d), &a, &b).boxminus(&base);
            d[k] = -h;
            let minus = propagate_mean(&imu.boxplus(&d), &a, &b).boxminus(&base);
            for r in 0..IMU_DIM {
                fd[(r, k)] = (plus[r] - minus[r]) / (2.0 * h);
            }
        }
        let err = (fd - phi).abs().max() / phi.abs().max().max(1.0);
        assert!(err < 1e-4, "relative error {err}");
    }

    fn filter_with_anchor() -> (FilterState, BlockCovariance) {
        let mut s = FilterState::new(RobotState::new(0.0, moving_state(), 5));
        let mut cov = BlockCovariance::from_imu(&(Matrix15::identity() * 1e-3));
        let (s2, c2) = clone_augment(&s, &cov).unwrap();
        s = s2;
        cov = c2;
        // anchor correlated with the current position, consistent by construction
        let cross = DMatrix::from_fn(cov.dim(), 5, |r, c| {
            if c < 3 {
                0.1 * cov.matrix()[(r, 12 + c)]
            } else {
                0.0
            }
        });
        cov = cov
            .with_anchor(&cross, &(crate::state::Matrix5::identity() * 0.1))
            .unwrap();
        s.anchors.push(crate::state::Anchor {
            id: 0,
            state: crate::state::UwbState::new(Vector3::new(10.0, 10.0, 10.0), 1.0, 0.0),
        });
        (s, cov)
    }

    #[test]
    fn propagation_leaves_clone_and_anchor_blocks() {
        let (mut s, mut cov) = filter_with_anchor();
        let before = cov.clone();
        let a = sample(0.0, Vector3::new(0.1, 0.0, 0.2), Vector3::new(0.0, 0.3, 9.8));
        let b = sample(0.005, Vector3::new(0.1, 0.0, 0.2), Vector3::new(0.0, 0.3, 9.8));
        let trace0 = cov.matrix().trace();
        propagate(&mut s, &mut cov, &a, &b, &ImuNoise::default()).unwrap();
        assert_eq!(cov.uu(), before.uu());
        assert_eq!(cov.cc(), before.cc());
        assert_eq!(cov.cu(), before.cu());
        assert!(cov.matrix().trace() >= trace0);
        assert!(cov.is_valid());
        assert_eq!(s.robot.t, 0.005);
    }

    #[test]
    fn propagation_rejects_bad_steps() {
        let (mut s, mut cov) = filter_with_anchor();
        let a = sample(0.0, Vector3::zeros(), Vector3::zeros());
        let b = sample(0.2, Vector3::zeros(), Vector3::zeros());
        assert!(propagate(&mut s, &mut cov, &a, &b, &ImuNoise::default()).is_err());
        let c = sample(0.01, Vector3::new(f64::NAN, 0.0, 0.0), Vector3::zeros());
        assert!(propagate(&mut s, &mut cov, &a, &c, &ImuNoise::default()).is_err());
    }

    #[test]
    fn projection_values() {
        let cam = CameraExtrinsics {
            r_ci: Rotation3::identity(),
            p_ci: Vector3::zeros(),
        };
        let id = Rotation3::identity();
        let uv = project(&Vector3::new(0.0, 0.0, 2.0), &id, &Vector3::zeros(), &cam).unwrap();
        assert_eq!(uv, Vector2::zeros());
        let uv = project(&Vector3::new(1.0, 1.0, 1.0), &id, &Vector3::zeros(), &cam).unwrap();
        assert_eq!(uv, Vector2::new(1.0, 1.0));
        assert!(matches!(
            project(&Vector3::new(0.0, 0.0, -1.0), &id, &Vector3::zeros(), &cam),
            Err(Error::NonPositiveDepth(_))
        ));
    }

    #[test]
    fn projection_jacobian_matches_finite_differences() {
        let cam = CameraExtrinsics::default();
        let rot = Rotation3::exp(&Vector3::new(0.05, -0.1, 0.4));
        let pos = Vector3::new(0.5, -0.2, 1.0);
        let lm = Vector3::new(9.0, 3.0, 2.5);
        let (_, d_th, d_p) = project_with_jacobian(&lm, &rot, &pos, &cam).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = h;
            let fd_th = (project(&lm, &rot.perturb(&e), &pos, &cam).unwrap()
                - project(&lm, &rot.perturb(&-e), &pos, &cam).unwrap())
                / (2.0 * h);
            let fd_p = (project(&lm, &rot, &(pos + e), &cam).unwrap()
                - project(&lm, &rot, &(pos - e), &cam).unwrap())
                / (2.0 * h);
            let scale = d_th.abs().max().max(d_p.abs().max());
            assert!((fd_th - d_th.column(k)).abs().max() / scale < 1e-5);
            assert!((fd_p - d_p.column(k)).abs().max() / scale < 1e-5);
        }
    }

    fn observe(s: &FilterState, map: &LandmarkMap, cam: &CameraExtrinsics) -> Vec<LandmarkObservation> {
        let c = s.robot.clones.last().unwrap();
        map.iter()
            .filter_map(|(id, p)| {
                project(p, &c.rot, &c.pos, cam).ok().map(|uv| LandmarkObservation {
                    landmark_id: id,
                    u: uv.x,
                    v: uv.y,
                    t: c.t,
                })
            })
            .collect()
    }

    fn front_map(s: &FilterState, cam: &CameraExtrinsics) -> LandmarkMap {
        let c = &s.robot.imu;
        let fwd = c.rot.rotate(&Vector3::x());
        let left = c.rot.rotate(&Vector3::y());
        let up = c.rot.rotate(&Vector3::z());
        let _ = cam;
        LandmarkMap::new(vec![
            c.pos + fwd * 8.0 + left * 1.0,
            c.pos + fwd * 9.0 - left * 2.0 + up,
            c.pos + fwd * 7.0 + up * -1.5,
        ])
    }

    #[test]
    fn zero_residual_update_shrinks_covariance_only() {
        let (mut s, mut cov) = filter_with_anchor();
        let cam = CameraExtrinsics::default();
        let map = front_map(&s, &cam);
        let obs = observe(&s, &map, &cam);
        let before = s.clone();
        let tr = cov.matrix().trace();
        let rep = vision_update(&mut s, &mut cov, &obs, &map, &cam, 0.01, 0.999).unwrap();
        assert_eq!(rep.accepted, 3);
        assert_eq!(boxminus_norm(&s, &before), 0.0);
        assert!(cov.matrix().trace() < tr);
        assert!(cov.is_valid());
    }

    fn boxminus_norm(a: &FilterState, b: &FilterState) -> f64 {
        crate::state::boxminus(a, b).unwrap().amax()
    }

    #[test]
    fn confident_prior_is_barely_moved() {
        let (mut s, _) = filter_with_anchor();
        let cov = BlockCovariance::from_imu(&(Matrix15::identity() * 1e-14));
        s.anchors.clear();
        s.robot.clones.clear();
        let (mut s, mut cov) = clone_augment(&s, &cov).unwrap();
        let cam = CameraExtrinsics::default();
        let map = front_map(&s, &cam);
        let mut obs = observe(&s, &map, &cam);
        obs.truncate(1);
        obs[0].u += 1e-3;
        let before = s.clone();
        let p0 = cov.clone();
        vision_update(&mut s, &mut cov, &obs, &map, &cam, 0.01, 0.999).unwrap();
        assert!(boxminus_norm(&s, &before) < 1e-6);
        assert!((cov.matrix() - p0.matrix()).amax() < 1e-6);
    }

    #[test]
    fn unknown_clone_and_empty_gate_are_errors() {
        let (mut s, mut cov) = filter_with_anchor();
        let cam = CameraExtrinsics::default();
        let map = front_map(&s, &cam);
        let mut obs = observe(&s, &map, &cam);
        obs[0].t = 99.0;
        assert!(matches!(
            vision_update(&mut s, &mut cov, &obs[..1], &map, &cam, 0.01, 0.999),
            Err(Error::UnknownClone(_))
        ));
        let mut obs = observe(&s, &map, &cam);
        for o in &mut obs {
            o.u += 5.0;
        }
        assert_eq!(
            vision_update(&mut s, &mut cov, &obs, &map, &cam, 0.001, 0.999),
            Err(Error::NoValidObservations)
        );
    }
}
