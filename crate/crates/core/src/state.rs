//! Rotation and pose algebra, the filter state, and the partitioned joint
//! covariance.
//!
//! Conventions used across the crate:
//!
//! * Attitudes are Hamilton unit quaternions holding the body-to-global
//!   rotation `R_GI`, so a tag mounted at `p_T` in the IMU frame sits at
//!   `p + R_GI * p_T` in the global frame.
//! * Attitude errors are left-multiplicative 3-vectors,
//!   `R_true = Exp(dtheta) * R_est`. With this choice the range Jacobian with
//!   respect to attitude is `-H_p * [R_GI p_T]x`.
//! * The error state is ordered `[imu(15) | clones(6 each) | anchors(5 each)]`
//!   with the IMU block `(dtheta, dbg, dv, dba, dp)`, clone blocks
//!   `(dtheta, dp)` and anchor blocks `(dp_a, dbeta, dgamma)`.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IMU_DIM: usize = 15;
pub const CLONE_DIM: usize = 6;
pub const ANCHOR_DIM: usize = 5;

/// Offsets inside the 15-dim IMU error block.
pub mod imu_idx {
    pub const THETA: usize = 0;
    pub const BG: usize = 3;
    pub const VEL: usize = 6;
    pub const BA: usize = 9;
    pub const POS: usize = 12;
}

/// Offsets inside a 5-dim anchor error block.
pub mod anchor_idx {
    pub const POS: usize = 0;
    pub const BETA: usize = 3;
    pub const GAMMA: usize = 4;
}

pub type Matrix15 = SMatrix<f64, 15, 15>;
pub type Matrix5 = SMatrix<f64, 5, 5>;

/// Cross-product matrix: `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Right Jacobian of SO(3).
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    if theta2 < 1e-10 {
        return Matrix3::identity() - 0.5 * k + (k * k) / 6.0;
    }
    let theta = theta2.sqrt();
    Matrix3::identity() - (1.0 - theta.cos()) / theta2 * k
        + (theta - theta.sin()) / (theta2 * theta) * (k * k)
}

/// Unit quaternion attitude (body-to-global).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation3(UnitQuaternion<f64>);

impl Default for Rotation3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation3 {
    pub fn identity() -> Self {
        Self(UnitQuaternion::identity())
    }

    /// Builds from quaternion components, normalizing.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self(UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            w, x, y, z,
        )))
    }

    /// Keeps the components bit-for-bit; the caller guarantees unit norm.
    pub fn from_wxyz_unchecked(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self(UnitQuaternion::new_unchecked(nalgebra::Quaternion::new(w, x, y, z)))
    }

    pub fn from_yaw(yaw: f64) -> Self {
        Self::exp(&Vector3::new(0.0, 0.0, yaw))
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        let mut q = q;
        q.renormalize();
        Self(q)
    }

    pub fn exp(v: &Vector3<f64>) -> Self {
        Self(UnitQuaternion::from_scaled_axis(*v))
    }

    pub fn log(&self) -> Vector3<f64> {
        self.0.scaled_axis()
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    /// `[w, x, y, z]`
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    pub fn compose(&self, rhs: &Rotation3) -> Self {
        let mut q = self.0 * rhs.0;
        q.renormalize();
        Self(q)
    }

    /// Applies a left (global-frame) error: `Exp(dtheta) * self`.
    pub fn perturb(&self, dtheta: &Vector3<f64>) -> Self {
        // exact identity keeps untouched states bitwise stable
        if *dtheta == Vector3::zeros() {
            return *self;
        }
        Self::exp(dtheta).compose(self)
    }

    /// The error `dtheta` with `Exp(dtheta) * other == self`.
    pub fn difference(&self, other: &Rotation3) -> Vector3<f64> {
        self.compose(&other.inverse()).log()
    }

    /// Geodesic angle to `other` in radians.
    pub fn angle_to(&self, other: &Rotation3) -> f64 {
        self.0.angle_to(&other.0)
    }
}

/// IMU navigation state: attitude, gyro bias, velocity, accel bias, position.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ImuState {
    pub rot: Rotation3,
    pub bg: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub ba: Vector3<f64>,
    pub pos: Vector3<f64>,
}

impl ImuState {
    pub fn at_pose(rot: Rotation3, pos: Vector3<f64>) -> Self {
        Self {
            rot,
            pos,
            ..Self::default()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rot.wxyz().iter().all(|x| x.is_finite())
            && self.bg.iter().all(|x| x.is_finite())
            && self.vel.iter().all(|x| x.is_finite())
            && self.ba.iter().all(|x| x.is_finite())
            && self.pos.iter().all(|x| x.is_finite())
    }

    pub fn boxplus(&self, delta: &[f64]) -> ImuState {
        let v = |o: usize| Vector3::new(delta[o], delta[o + 1], delta[o + 2]);
        ImuState {
            rot: self.rot.perturb(&v(imu_idx::THETA)),
            bg: self.bg + v(imu_idx::BG),
            vel: self.vel + v(imu_idx::VEL),
            ba: self.ba + v(imu_idx::BA),
            pos: self.pos + v(imu_idx::POS),
        }
    }

    /// `self ⊟ other`: the 15-dim error taking `other` to `self`.
    pub fn boxminus(&self, other: &ImuState) -> [f64; IMU_DIM] {
        let mut out = [0.0; IMU_DIM];
        let parts = [
            self.rot.difference(&other.rot),
            self.bg - other.bg,
            self.vel - other.vel,
            self.ba - other.ba,
            self.pos - other.pos,
        ];
        for (b, p) in parts.iter().enumerate() {
            out[3 * b..3 * b + 3].copy_from_slice(p.as_slice());
        }
        out
    }
}

/// A stochastic clone of a historical IMU pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseClone {
    pub t: f64,
    pub rot: Rotation3,
    pub pos: Vector3<f64>,
}

/// The active navigation state: IMU state plus a sliding window of clones.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotState {
    pub t: f64,
    pub imu: ImuState,
    pub clones: Vec<PoseClone>,
    /// Maximum number of clones kept.
    pub window: usize,
}

impl RobotState {
    pub fn new(t: f64, imu: ImuState, window: usize) -> Self {
        Self {
            t,
            imu,
            clones: Vec::new(),
            window,
        }
    }

    pub fn error_dim(&self) -> usize {
        IMU_DIM + CLONE_DIM * self.clones.len()
    }

    pub fn clone_index(&self, t: f64) -> Option<usize> {
        self.clones.iter().position(|c| (c.t - t).abs() < 1e-9)
    }
}

/// Anchor calibration parameters: position, scale bias `beta`, offset bias `gamma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UwbState {
    pub position: Vector3<f64>,
    pub beta: f64,
    pub gamma: f64,
}

impl UwbState {
    pub fn new(position: Vector3<f64>, beta: f64, gamma: f64) -> Self {
        Self {
            position,
            beta,
            gamma,
        }
    }

    pub fn boxplus(&self, delta: &[f64]) -> UwbState {
        UwbState {
            position: self.position + Vector3::new(delta[0], delta[1], delta[2]),
            // beta must stay positive
            beta: (self.beta + delta[anchor_idx::BETA]).max(1e-6),
            gamma: self.gamma + delta[anchor_idx::GAMMA],
        }
    }

    pub fn boxminus(&self, other: &UwbState) -> [f64; ANCHOR_DIM] {
        let d = self.position - other.position;
        [d.x, d.y, d.z, self.beta - other.beta, self.gamma - other.gamma]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub id: u32,
    pub state: UwbState,
}

/// Robot state together with every initialized anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterState {
    pub robot: RobotState,
    pub anchors: Vec<Anchor>,
}

impl FilterState {
    pub fn new(robot: RobotState) -> Self {
        Self {
            robot,
            anchors: Vec::new(),
        }
    }

    pub fn robot_dim(&self) -> usize {
        self.robot.error_dim()
    }

    pub fn dim(&self) -> usize {
        self.robot_dim() + ANCHOR_DIM * self.anchors.len()
    }

    pub fn anchor_index(&self, id: u32) -> Option<usize> {
        self.anchors.iter().position(|a| a.id == id)
    }

    pub fn anchor(&self, id: u32) -> Option<&UwbState> {
        self.anchors.iter().find(|a| a.id == id).map(|a| &a.state)
    }
}

/// Applies an error-state increment to every component of the state.
pub fn boxplus(state: &FilterState, delta: &DVector<f64>) -> Result<FilterState> {
    if delta.len() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            got: delta.len(),
        });
    }
    let d = delta.as_slice();
    let mut out = state.clone();
    out.robot.imu = state.robot.imu.boxplus(&d[..IMU_DIM]);
    for (i, c) in out.robot.clones.iter_mut().enumerate() {
        let o = IMU_DIM + CLONE_DIM * i;
        c.rot = c.rot.perturb(&Vector3::new(d[o], d[o + 1], d[o + 2]));
        c.pos += Vector3::new(d[o + 3], d[o + 4], d[o + 5]);
    }
    let base = state.robot_dim();
    for (j, a) in out.anchors.iter_mut().enumerate() {
        let o = base + ANCHOR_DIM * j;
        a.state = a.state.boxplus(&d[o..o + ANCHOR_DIM]);
    }
    Ok(out)
}

/// `a ⊟ b`: the increment with `boxplus(b, a ⊟ b) == a`.
///
/// Both states must share the same clone and anchor layout.
pub fn boxminus(a: &FilterState, b: &FilterState) -> Result<DVector<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: b.dim(),
            got: a.dim(),
        });
    }
    let mut out = DVector::zeros(a.dim());
    out.as_mut_slice()[..IMU_DIM].copy_from_slice(&a.robot.imu.boxminus(&b.robot.imu));
    for (i, (ca, cb)) in a.robot.clones.iter().zip(&b.robot.clones).enumerate() {
        let o = IMU_DIM + CLONE_DIM * i;
        let dth = ca.rot.difference(&cb.rot);
        let dp = ca.pos - cb.pos;
        out.rows_mut(o, 3).copy_from(&dth);
        out.rows_mut(o + 3, 3).copy_from(&dp);
    }
    let base = a.robot_dim();
    for (j, (xa, xb)) in a.anchors.iter().zip(&b.anchors).enumerate() {
        let o = base + ANCHOR_DIM * j;
        out.as_mut_slice()[o..o + ANCHOR_DIM].copy_from_slice(&xa.state.boxminus(&xb.state));
    }
    Ok(out)
}

/// Joint covariance over `[imu | clones | anchors]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockCovariance {
    mat: DMatrix<f64>,
    n_clones: usize,
    n_anchors: usize,
}

impl BlockCovariance {
    pub fn new(mat: DMatrix<f64>, n_clones: usize, n_anchors: usize) -> Result<Self> {
        let dim = IMU_DIM + CLONE_DIM * n_clones + ANCHOR_DIM * n_anchors;
        if mat.nrows() != dim || mat.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: mat.nrows(),
            });
        }
        Ok(Self {
            mat,
            n_clones,
            n_anchors,
        })
    }

    pub fn from_imu(p_ii: &Matrix15) -> Self {
        Self {
            mat: DMatrix::from_iterator(IMU_DIM, IMU_DIM, p_ii.iter().copied()),
            n_clones: 0,
            n_anchors: 0,
        }
    }

    /// Reassembles the joint matrix from its six blocks.
    pub fn from_blocks(
        ii: &DMatrix<f64>,
        ic: &DMatrix<f64>,
        iu: &DMatrix<f64>,
        cc: &DMatrix<f64>,
        cu: &DMatrix<f64>,
        uu: &DMatrix<f64>,
    ) -> Result<Self> {
        let nc = cc.nrows();
        let nu = uu.nrows();
        if !nc.is_multiple_of(CLONE_DIM) || !nu.is_multiple_of(ANCHOR_DIM) {
            return Err(Error::DimensionMismatch {
                expected: CLONE_DIM,
                got: nc,
            });
        }
        let n = IMU_DIM + nc + nu;
        let mut mat = DMatrix::zeros(n, n);
        let c0 = IMU_DIM;
        let u0 = IMU_DIM + nc;
        mat.view_mut((0, 0), (IMU_DIM, IMU_DIM)).copy_from(ii);
        mat.view_mut((0, c0), (IMU_DIM, nc)).copy_from(ic);
        mat.view_mut((c0, 0), (nc, IMU_DIM)).copy_from(&ic.transpose());
        mat.view_mut((0, u0), (IMU_DIM, nu)).copy_from(iu);
        mat.view_mut((u0, 0), (nu, IMU_DIM)).copy_from(&iu.transpose());
        mat.view_mut((c0, c0), (nc, nc)).copy_from(cc);
        mat.view_mut((c0, u0), (nc, nu)).copy_from(cu);
        mat.view_mut((u0, c0), (nu, nc)).copy_from(&cu.transpose());
        mat.view_mut((u0, u0), (nu, nu)).copy_from(uu);
        Self::new(mat, nc / CLONE_DIM, nu / ANCHOR_DIM)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn n_clones(&self) -> usize {
        self.n_clones
    }

    pub fn n_anchors(&self) -> usize {
        self.n_anchors
    }

    /// Dimension of the robot part (IMU plus clones).
    pub fn robot_dim(&self) -> usize {
        IMU_DIM + CLONE_DIM * self.n_clones
    }

    pub fn clone_offset(&self, i: usize) -> usize {
        IMU_DIM + CLONE_DIM * i
    }

    pub fn anchor_offset(&self, j: usize) -> usize {
        self.robot_dim() + ANCHOR_DIM * j
    }

    fn block(&self, r0: usize, nr: usize, c0: usize, nc: usize) -> DMatrix<f64> {
        self.mat.view((r0, c0), (nr, nc)).into_owned()
    }

    pub fn ii(&self) -> DMatrix<f64> {
        self.block(0, IMU_DIM, 0, IMU_DIM)
    }

    pub fn ic(&self) -> DMatrix<f64> {
        self.block(0, IMU_DIM, IMU_DIM, CLONE_DIM * self.n_clones)
    }

    pub fn iu(&self) -> DMatrix<f64> {
        self.block(0, IMU_DIM, self.robot_dim(), ANCHOR_DIM * self.n_anchors)
    }

    pub fn cc(&self) -> DMatrix<f64> {
        let n = CLONE_DIM * self.n_clones;
        self.block(IMU_DIM, n, IMU_DIM, n)
    }

    pub fn cu(&self) -> DMatrix<f64> {
        self.block(
            IMU_DIM,
            CLONE_DIM * self.n_clones,
            self.robot_dim(),
            ANCHOR_DIM * self.n_anchors,
        )
    }

    pub fn uu(&self) -> DMatrix<f64> {
        let n = ANCHOR_DIM * self.n_anchors;
        let o = self.robot_dim();
        self.block(o, n, o, n)
    }

    /// The robot block `[[P_II, P_IC], [P_CI, P_CC]]`.
    pub fn rr(&self) -> DMatrix<f64> {
        let n = self.robot_dim();
        self.block(0, n, 0, n)
    }

    /// 5x5 block of anchor `j`.
    pub fn anchor_block(&self, j: usize) -> Matrix5 {
        let o = self.anchor_offset(j);
        Matrix5::from_fn(|r, c| self.mat[(o + r, o + c)])
    }

    pub fn imu_block(&self) -> Matrix15 {
        Matrix15::from_fn(|r, c| self.mat[(r, c)])
    }

    pub fn symmetrize(&mut self) {
        let n = self.dim();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (self.mat[(i, j)] + self.mat[(j, i)]);
                self.mat[(i, j)] = v;
                self.mat[(j, i)] = v;
            }
        }
    }

    /// Largest absolute asymmetry `|P_ij - P_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.mat[(i, j)] - self.mat[(j, i)]).abs());
            }
        }
        worst
    }

    /// `(min, max)` eigenvalue of the symmetric part.
    pub fn eigen_range(&self) -> (f64, f64) {
        eigen_range(&self.mat)
    }

    /// Symmetric within `1e-9` and `min eig >= -1e-9 * max eig`.
    pub fn is_valid(&self) -> bool {
        if self.asymmetry() > 1e-9 {
            return false;
        }
        let (lo, hi) = self.eigen_range();
        lo >= -1e-9 * hi.abs().max(f64::MIN_POSITIVE)
    }

    /// Returns a copy with a new anchor block appended.
    ///
    /// `cross` holds the covariance between the existing state (rows) and the
    /// new anchor (columns).
    pub fn with_anchor(&self, cross: &DMatrix<f64>, block: &Matrix5) -> Result<Self> {
        let n = self.dim();
        if cross.nrows() != n || cross.ncols() != ANCHOR_DIM {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: cross.nrows(),
            });
        }
        let mut mat = DMatrix::zeros(n + ANCHOR_DIM, n + ANCHOR_DIM);
        mat.view_mut((0, 0), (n, n)).copy_from(&self.mat);
        mat.view_mut((0, n), (n, ANCHOR_DIM)).copy_from(cross);
        mat.view_mut((n, 0), (ANCHOR_DIM, n))
            .copy_from(&cross.transpose());
        mat.view_mut((n, n), (ANCHOR_DIM, ANCHOR_DIM))
            .copy_from(block);
        Ok(Self {
            mat,
            n_clones: self.n_clones,
            n_anchors: self.n_anchors + 1,
        })
    }

    fn reindexed(&self, map: &[usize], n_clones: usize) -> Self {
        let n = map.len();
        let mat = DMatrix::from_fn(n, n, |i, j| self.mat[(map[i], map[j])]);
        Self {
            mat,
            n_clones,
            n_anchors: self.n_anchors,
        }
    }
}

pub(crate) fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = 0.5 * (m + m.transpose());
    let eig = sym.symmetric_eigenvalues();
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Appends the current IMU pose as a clone, duplicating its covariance rows.
pub fn clone_augment(
    state: &FilterState,
    cov: &BlockCovariance,
) -> Result<(FilterState, BlockCovariance)> {
    let robot = &state.robot;
    if robot.clones.len() >= robot.window {
        return Err(Error::WindowFull(robot.clones.len()));
    }
    if let Some(last) = robot.clones.last() {
        if robot.t <= last.t {
            return Err(Error::NonMonotonicClone(robot.t));
        }
    }
    let off = cov.robot_dim();
    let n = cov.dim();
    const SRC: [usize; CLONE_DIM] = [
        imu_idx::THETA,
        imu_idx::THETA + 1,
        imu_idx::THETA + 2,
        imu_idx::POS,
        imu_idx::POS + 1,
        imu_idx::POS + 2,
    ];
    let map: Vec<usize> = (0..n + CLONE_DIM)
        .map(|i| {
            if i < off {
                i
            } else if i < off + CLONE_DIM {
                SRC[i - off]
            } else {
                i - CLONE_DIM
            }
        })
        .collect();
    let new_cov = cov.reindexed(&map, cov.n_clones + 1);

    let mut out = state.clone();
    out.robot.clones.push(PoseClone {
        t: robot.t,
        rot: robot.imu.rot,
        pos: robot.imu.pos,
    });
    Ok((out, new_cov))
}

/// Removes clone `index` and its covariance rows and columns.
pub fn clone_marginalize(
    state: &FilterState,
    cov: &BlockCovariance,
    index: usize,
) -> Result<(FilterState, BlockCovariance)> {
    let len = state.robot.clones.len();
    if index >= len {
        return Err(Error::InvalidCloneIndex { index, len });
    }
    let off = cov.clone_offset(index);
    let map: Vec<usize> = (0..cov.dim())
        .filter(|&i| i < off || i >= off + CLONE_DIM)
        .collect();
    let new_cov = cov.reindexed(&map, cov.n_clones - 1);
    let mut out = state.clone();
    out.robot.clones.remove(index);
    Ok((out, new_cov))
}
