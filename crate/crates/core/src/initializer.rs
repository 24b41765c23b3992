//! Anchor initialization from a window of robot pose estimates and ranges.
//!
//! Two estimators share one Gauss-Newton core with step-halving:
//!
//! * [`ls_initialize`]: plain least squares over `(p_a, gamma)` with `beta = 1`.
//! * [`robust_initialize`]: adds the expected contribution of the pose
//!   uncertainty, `trace(H_I P_II Hᵀ_I)`, to every term and optionally whitens
//!   each term by `Q_d + H_I P_II Hᵀ_I`.
//!
//! [`initialize_covariance`] then linearizes the stacked ranges at the
//! solution and augments the joint covariance with the new anchor block.

use nalgebra::{DMatrix, Matrix3, Matrix4, RowVector4, SymmetricEigen, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fim::{degeneracy_flags_within, DegeneracyFlags, DEGENERACY_TOLERANCE};
use crate::state::{
    anchor_idx, imu_idx, skew, Anchor, BlockCovariance, FilterState, ImuState, Matrix15, Matrix5,
    UwbState, ANCHOR_DIM, IMU_DIM,
};
use crate::uwb::{range_jacobians, tag_position, RangingMeasurement, TagExtrinsics};

/// One stored pose estimate, its covariance and the range taken there.
#[derive(Clone, Debug, PartialEq)]
pub struct InitEntry {
    pub imu: ImuState,
    pub cov: Matrix15,
    pub meas: RangingMeasurement,
}

/// A validated initialization window.
#[derive(Clone, Debug, PartialEq)]
pub struct InitWindow {
    entries: Vec<InitEntry>,
}

impl InitWindow {
    /// Validates length, timestamp order and covariance shape.
    pub fn new(entries: Vec<InitEntry>, min_len: usize) -> Result<Self> {
        if entries.len() < min_len {
            return Err(Error::WindowTooShort {
                got: entries.len(),
                min: min_len,
            });
        }
        for (k, w) in entries.windows(2).enumerate() {
            if w[1].meas.timestamp <= w[0].meas.timestamp {
                return Err(Error::WindowOrder(k + 1));
            }
        }
        for (k, e) in entries.iter().enumerate() {
            let asym = (e.cov - e.cov.transpose()).abs().max();
            let eig = SymmetricEigen::new(e.cov).eigenvalues;
            let hi = eig.max().max(0.0);
            if asym > 1e-9 || eig.min() < -1e-9 * hi.max(1e-300) {
                return Err(Error::WindowCovariance(k));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[InitEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.entries.iter().map(|e| e.imu.pos).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStatus {
    Converged,
    MaxIterations,
    Singular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMethod {
    LeastSquares,
    Robust,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitResult {
    pub position: Vector3<f64>,
    pub gamma: f64,
    /// Held at 1 during initialization.
    pub beta: f64,
    pub method: InitMethod,
    pub status: SolverStatus,
    pub cost: f64,
    /// Cost of the starting point under the final weights.
    pub initial_cost: f64,
    pub iterations: usize,
    /// Accepted-iterate costs of the final pass.
    pub cost_history: Vec<f64>,
    /// Flags raised by the window geometry check.
    pub degeneracy: DegeneracyFlags,
}

impl InitResult {
    pub fn uwb_state(&self) -> UwbState {
        UwbState::new(self.position, self.beta, self.gamma)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub max_halvings: usize,
    /// Range noise variance `Q_d`, m².
    pub range_variance: f64,
    /// Whiten robust-cost terms by `Q_d + H_I P_II Hᵀ_I`.
    pub whiten: bool,
    /// Number of robust solves, each re-evaluating the whitening weights.
    pub reweight_passes: usize,
    /// Starting `[x, y, z, gamma]`; defaults to the window centroid lifted
    /// by the mean range.
    pub initial_guess: Option<[f64; 4]>,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            step_tolerance: 1e-8,
            max_halvings: 10,
            range_variance: 0.01,
            whiten: true,
            reweight_passes: 2,
            initial_guess: None,
        }
    }
}

/// Expected range variance from pose uncertainty, `H_I P_II Hᵀ_I`.
pub fn pose_variance(entry: &InitEntry, uwb: &UwbState, ext: &TagExtrinsics) -> f64 {
    match range_jacobians(&entry.imu, uwb, ext) {
        Ok(j) => (j.h_imu * entry.cov * j.h_imu.transpose())[(0, 0)],
        Err(_) => 0.0,
    }
}

/// Default starting point: centroid plus the mean range along +z, `gamma = 0`.
pub fn default_initial_guess(entries: &[InitEntry]) -> Vector4<f64> {
    let n = entries.len() as f64;
    let centroid = entries.iter().map(|e| e.imu.pos).sum::<Vector3<f64>>() / n;
    let mean_range = entries.iter().map(|e| e.meas.distance).sum::<f64>() / n;
    Vector4::new(centroid.x, centroid.y, centroid.z + mean_range, 0.0)
}

/// Per-entry quantities that do not depend on the anchor iterate.
struct Term {
    tag: Vector3<f64>,
    d: f64,
    /// `L` with `Lᵀ L = G P Gᵀ`, `G` mapping the IMU error to tag position.
    sqrt_tag_cov: Matrix3<f64>,
}

fn terms(entries: &[InitEntry], ext: &TagExtrinsics, with_trace: bool) -> Vec<Term> {
    entries
        .iter()
        .map(|e| {
            let sqrt_tag_cov = if with_trace {
                let lever = e.imu.rot.rotate(&ext.p_t);
                let mut g = nalgebra::SMatrix::<f64, 3, IMU_DIM>::zeros();
                g.fixed_view_mut::<3, 3>(0, imu_idx::THETA)
                    .copy_from(&(-skew(&lever)));
                g.fixed_view_mut::<3, 3>(0, imu_idx::POS)
                    .copy_from(&Matrix3::identity());
                let m = g * e.cov * g.transpose();
                let eig = SymmetricEigen::new(0.5 * (m + m.transpose()));
                let sqrt_l = Matrix3::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
                sqrt_l * eig.eigenvectors.transpose()
            } else {
                Matrix3::zeros()
            };
            Term {
                tag: tag_position(&e.imu, ext),
                d: e.meas.distance,
                sqrt_tag_cov,
            }
        })
        .collect()
}

fn cost_at(terms: &[Term], weights: &[f64], x: &Vector4<f64>) -> f64 {
    let a = x.fixed_rows::<3>(0).into_owned();
    terms
        .iter()
        .zip(weights)
        .map(|(t, w)| {
            let u = t.tag - a;
            let rho = u.norm();
            let r = t.d - rho - x[3];
            let tr = if rho > 0.0 {
                (t.sqrt_tag_cov * (u / rho)).norm_squared()
            } else {
                0.0
            };
            w * (r * r + tr)
        })
        .sum()
}

struct GnOutcome {
    x: Vector4<f64>,
    cost: f64,
    iterations: usize,
    status: SolverStatus,
    history: Vec<f64>,
}

fn gauss_newton(
    terms: &[Term],
    weights: &[f64],
    x0: Vector4<f64>,
    cfg: &InitConfig,
) -> GnOutcome {
    let mut x = x0;
    let mut cost = cost_at(terms, weights, &x);
    let mut history = vec![cost];
    for it in 1..=cfg.max_iterations {
        let a = x.fixed_rows::<3>(0).into_owned();
        let mut normal = Matrix4::zeros();
        let mut grad = Vector4::zeros();
        for (t, &w) in terms.iter().zip(weights) {
            let u = t.tag - a;
            let rho = u.norm();
            if rho < 1e-12 {
                continue;
            }
            let n = u / rho;
            let r = t.d - rho - x[3];
            let jr = RowVector4::new(n.x, n.y, n.z, -1.0);
            normal += w * jr.transpose() * jr;
            grad += w * jr.transpose() * r;
            let dn = -(Matrix3::identity() - n * n.transpose()) / rho;
            let e = t.sqrt_tag_cov * n;
            let je3 = t.sqrt_tag_cov * dn;
            let mut je = nalgebra::Matrix3x4::zeros();
            je.fixed_view_mut::<3, 3>(0, 0).copy_from(&je3);
            normal += w * je.transpose() * je;
            grad += w * je.transpose() * e;
        }
        let eig = SymmetricEigen::new(normal).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        if !(hi > 0.0) || lo <= 1e-12 * hi {
            return GnOutcome {
                x,
                cost,
                iterations: it - 1,
                status: SolverStatus::Singular,
                history,
            };
        }
        let step = match normal.cholesky() {
            Some(c) => -c.solve(&grad),
            None => {
                return GnOutcome {
                    x,
                    cost,
                    iterations: it - 1,
                    status: SolverStatus::Singular,
                    history,
                }
            }
        };
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let cand = x + step * alpha;
            let c = cost_at(terms, weights, &cand);
            if c < cost {
                accepted = Some((cand, c));
                break;
            }
            alpha *= 0.5;
        }
        // predicted decrease of the local quadratic model
        let predicted = -grad.dot(&step);
        let moved = match accepted {
            Some((cand, c)) => {
                let moved = (cand - x).norm();
                x = cand;
                cost = c;
                history.push(c);
                moved
            }
            // Cost comparisons are meaningless inside the rounding floor; take
            // the full step without recording it.
            None if predicted <= 1e-12 * cost.max(f64::MIN_POSITIVE) => {
                x += step;
                cost = cost_at(terms, weights, &x);
                step.norm()
            }
            None => 0.0,
        };
        // A short halved move is not convergence; the full step must be small.
        let stalled = moved == 0.0;
        if stalled || step.norm() < cfg.step_tolerance {
            return GnOutcome {
                x,
                cost,
                iterations: it,
                status: SolverStatus::Converged,
                history,
            };
        }
    }
    GnOutcome {
        x,
        cost,
        iterations: cfg.max_iterations,
        status: SolverStatus::MaxIterations,
        history,
    }
}

fn start_point(entries: &[InitEntry], cfg: &InitConfig) -> Vector4<f64> {
    cfg.initial_guess
        .map(Vector4::from)
        .unwrap_or_else(|| default_initial_guess(entries))
}

fn singular_result(
    x: Vector4<f64>,
    method: InitMethod,
    degeneracy: DegeneracyFlags,
) -> InitResult {
    InitResult {
        position: x.fixed_rows::<3>(0).into_owned(),
        gamma: x[3],
        beta: 1.0,
        method,
        status: SolverStatus::Singular,
        cost: f64::NAN,
        initial_cost: f64::NAN,
        iterations: 0,
        cost_history: Vec::new(),
        degeneracy,
    }
}

/// Spread off the best-fit point or line below three range-noise stds cannot
/// be told apart from noise, so such windows count as degenerate.
fn window_flags(entries: &[InitEntry], cfg: &InitConfig) -> DegeneracyFlags {
    let tol = DEGENERACY_TOLERANCE.max(3.0 * cfg.range_variance.max(0.0).sqrt());
    degeneracy_flags_within(&entries.iter().map(|e| e.imu.pos).collect::<Vec<_>>(), tol)
}

pub(crate) fn solve_ls(entries: &[InitEntry], ext: &TagExtrinsics, cfg: &InitConfig) -> InitResult {
    let x0 = start_point(entries, cfg);
    let flags = window_flags(entries, cfg);
    if flags.is_static || flags.collinear {
        return singular_result(x0, InitMethod::LeastSquares, flags);
    }
    let t = terms(entries, ext, false);
    let w = vec![1.0; t.len()];
    let out = gauss_newton(&t, &w, x0, cfg);
    InitResult {
        position: out.x.fixed_rows::<3>(0).into_owned(),
        gamma: out.x[3],
        beta: 1.0,
        method: InitMethod::LeastSquares,
        status: out.status,
        cost: out.cost,
        initial_cost: cost_at(&t, &w, &x0),
        iterations: out.iterations,
        cost_history: out.history,
        degeneracy: flags,
    }
}

pub(crate) fn robust_weights(
    entries: &[InitEntry],
    ext: &TagExtrinsics,
    x: &Vector4<f64>,
    cfg: &InitConfig,
) -> Vec<f64> {
    let uwb = UwbState::new(x.fixed_rows::<3>(0).into_owned(), 1.0, x[3]);
    entries
        .iter()
        .map(|e| {
            if cfg.whiten {
                1.0 / (cfg.range_variance + pose_variance(e, &uwb, ext))
            } else {
                1.0
            }
        })
        .collect()
}

pub(crate) fn solve_robust(
    entries: &[InitEntry],
    ext: &TagExtrinsics,
    cfg: &InitConfig,
) -> InitResult {
    let x0 = start_point(entries, cfg);
    let flags = window_flags(entries, cfg);
    if flags.is_static || flags.collinear {
        return singular_result(x0, InitMethod::Robust, flags);
    }
    let t = terms(entries, ext, true);
    let passes = cfg.reweight_passes.max(1);
    let mut x = x0;
    let mut iterations = 0;
    let mut last = None;
    for _ in 0..passes {
        let w = robust_weights(entries, ext, &x, cfg);
        // unchanged weights would only restart a converged solve
        if last.as_ref().is_some_and(|(_, prev)| *prev == w) {
            break;
        }
        let out = gauss_newton(&t, &w, x, cfg);
        iterations += out.iterations;
        x = out.x;
        let singular = out.status == SolverStatus::Singular;
        last = Some((out, w));
        if singular || !cfg.whiten {
            break;
        }
    }
    let (out, w) = last.expect("at least one pass");
    InitResult {
        position: out.x.fixed_rows::<3>(0).into_owned(),
        gamma: out.x[3],
        beta: 1.0,
        method: InitMethod::Robust,
        status: out.status,
        cost: out.cost,
        initial_cost: cost_at(&t, &w, &x0),
        iterations,
        cost_history: out.history,
        degeneracy: flags,
    }
}

/// Plain least-squares initialization with `beta = 1`.
pub fn ls_initialize(window: &InitWindow, ext: &TagExtrinsics, cfg: &InitConfig) -> InitResult {
    solve_ls(window.entries(), ext, cfg)
}

/// Uncertainty-aware initialization with `beta = 1`.
pub fn robust_initialize(
    window: &InitWindow,
    ext: &TagExtrinsics,
    cfg: &InitConfig,
) -> InitResult {
    solve_robust(window.entries(), ext, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovarianceInitConfig {
    /// Range noise variance `Q_d`, m².
    pub range_variance: f64,
    /// Standard deviation assigned to `beta` when it is re-opened.
    pub beta_prior_std: f64,
}

impl Default for CovarianceInitConfig {
    fn default() -> Self {
        Self {
            range_variance: 0.01,
            beta_prior_std: 0.1,
        }
    }
}

/// Linearizes the stacked window at the initializer solution and appends the
/// new anchor to the state and the joint covariance.
///
/// The stacked residuals are `d~ = H_A X~ + H_4 x~_4 + h_beta beta~ + n`, with
/// `x_4 = (p_a, gamma)`. A thin QR of the (weighted) `H_4` isolates the four
/// rows that determine `x_4`; the remaining rows only involve the window poses
/// and are not used. Window poses are mutually independent except the entry
/// stamped at the current filter time, whose error is the live IMU error, so
/// the new anchor is correlated with every existing state through it. `beta`
/// is re-opened with an independent prior and its effect on `x_4` is carried
/// through the same projection.
#[allow(clippy::too_many_arguments)]
pub fn initialize_covariance(
    window: &InitWindow,
    init: &InitResult,
    anchor_id: u32,
    state: &FilterState,
    cov: &BlockCovariance,
    ext: &TagExtrinsics,
    init_cfg: &InitConfig,
    cfg: &CovarianceInitConfig,
) -> Result<(FilterState, BlockCovariance)> {
    if state.anchor_index(anchor_id).is_some() {
        return Err(Error::DuplicateAnchor(anchor_id));
    }
    let entries = window.entries();
    let m = entries.len();
    if m < ANCHOR_DIM {
        return Err(Error::InsufficientMeasurements { got: m });
    }
    let uwb = init.uwb_state();
    let x4 = Vector4::new(uwb.position.x, uwb.position.y, uwb.position.z, uwb.gamma);
    let weights = match init.method {
        InitMethod::LeastSquares => vec![1.0; m],
        InitMethod::Robust => {
            let mut c = *init_cfg;
            c.range_variance = cfg.range_variance;
            robust_weights(entries, ext, &x4, &c)
        }
    };

    let mut h4 = DMatrix::zeros(m, 4);
    let mut h_beta = nalgebra::DVector::zeros(m);
    let mut row_var = nalgebra::DVector::zeros(m);
    let mut h_imu = Vec::with_capacity(m);
    for (k, e) in entries.iter().enumerate() {
        let j = range_jacobians(&e.imu, &uwb, ext)?;
        let s = weights[k].sqrt();
        for c in 0..3 {
            h4[(k, c)] = s * j.h_uwb[anchor_idx::POS + c];
        }
        h4[(k, 3)] = s * j.h_uwb[anchor_idx::GAMMA];
        h_beta[k] = j.h_uwb[anchor_idx::BETA];
        row_var[k] = cfg.range_variance + (j.h_imu * e.cov * j.h_imu.transpose())[(0, 0)];
        h_imu.push(j.h_imu);
    }

    let qr = h4.clone().qr();
    let r = qr.r();
    let q1 = qr.q();
    let diag_max = (0..4).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..4).any(|i| r[(i, i)].abs() <= 1e-10 * diag_max.max(1e-300)) {
        return Err(Error::RankDeficient);
    }
    // T = -R⁻¹ Q1ᵀ W^{1/2}
    let mut q1t_s = q1.transpose();
    for k in 0..m {
        let s = weights[k].sqrt();
        for i in 0..4 {
            q1t_s[(i, k)] *= s;
        }
    }
    let t = -r
        .solve_upper_triangular(&q1t_s)
        .ok_or(Error::RankDeficient)?;

    let beta_var = cfg.beta_prior_std * cfg.beta_prior_std;
    let t_beta = &t * &h_beta;
    let p44 = &t * DMatrix::from_diagonal(&row_var) * t.transpose()
        + &t_beta * t_beta.transpose() * beta_var;

    // order (p_a, gamma) -> (p_a, beta, gamma)
    let slot = [anchor_idx::POS, anchor_idx::POS + 1, anchor_idx::POS + 2, anchor_idx::GAMMA];
    let mut block = Matrix5::zeros();
    for i in 0..4 {
        for j in 0..4 {
            block[(slot[i], slot[j])] = p44[(i, j)];
        }
        block[(slot[i], anchor_idx::BETA)] = t_beta[i] * beta_var;
        block[(anchor_idx::BETA, slot[i])] = t_beta[i] * beta_var;
    }
    block[(anchor_idx::BETA, anchor_idx::BETA)] = beta_var;
    block = 0.5 * (block + block.transpose());

    let n = cov.dim();
    let mut cross = DMatrix::zeros(n, ANCHOR_DIM);
    let current = entries
        .iter()
        .rposition(|e| (e.meas.timestamp - state.robot.t).abs() < 1e-9);
    if let Some(c) = current {
        // Cov(x~, x~_4) = P[:, imu] H_Iᵀ T[:, c]ᵀ
        let p_xi = cov.matrix().columns(0, IMU_DIM);
        let hx = p_xi * h_imu[c].transpose();
        for i in 0..4 {
            let tc = t[(i, c)];
            for row in 0..n {
                cross[(row, slot[i])] = hx[row] * tc;
            }
        }
    }

    let mut new_cov = cov.with_anchor(&cross, &block)?;
    // only the new anchor rows need symmetrizing
    let o = new_cov.anchor_offset(new_cov.n_anchors() - 1);
    let p = new_cov.matrix_mut();
    for i in o..o + ANCHOR_DIM {
        for j in 0..o + ANCHOR_DIM {
            let v = if j >= o { 0.5 * (p[(i, j)] + p[(j, i)]) } else { p[(i, j)] };
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
    let mut new_state = state.clone();
    new_state.anchors.push(Anchor {
        id: anchor_id,
        state: uwb,
    });
    Ok((new_state, new_cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{Rotation3, RobotState};
    use crate::uwb::simulate_range;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rich_positions(n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|k| {
                let s = k as f64 * 0.15;
                Vector3::new(9.0 * (0.7 * s).sin(), 7.5 * (0.45 * s).cos(), 3.0 + 2.0 * (0.9 * s).sin())
            })
            .collect()
    }

    fn window(
        positions: &[Vector3<f64>],
        truth: &UwbState,
        noise: f64,
        pose_var: f64,
        rng: &mut ChaCha8Rng,
    ) -> Vec<InitEntry> {
        let ext = TagExtrinsics::default();
        positions
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let imu = ImuState::at_pose(Rotation3::from_yaw(0.1 * k as f64), *p);
                let meas = simulate_range(&imu, truth, &ext, noise, 0, k as f64 * 0.1, rng);
                let mut cov = Matrix15::zeros();
                for i in 12..15 {
                    cov[(i, i)] = pose_var;
                }
                InitEntry { imu, cov, meas }
            })
            .collect()
    }

    fn truth(gamma: f64) -> UwbState {
        UwbState::new(Vector3::new(10.0, 10.0, 10.0), 1.0, gamma)
    }

    #[test]
    fn noiseless_recovers_anchor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for gamma in [0.0, -0.3] {
            let w = InitWindow::new(window(&rich_positions(60), &truth(gamma), 0.0, 0.0, &mut rng), 20)
                .unwrap();
            let res = ls_initialize(&w, &TagExtrinsics::default(), &InitConfig::default());
            assert_eq!(res.status, SolverStatus::Converged);
            assert!((res.position - truth(gamma).position).norm() < 1e-6);
            assert!((res.gamma - gamma).abs() < 1e-6);
        }
    }

    #[test]
    fn collinear_window_is_singular() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let line: Vec<_> = (0..30)
            .map(|k| Vector3::new(0.1 * k as f64, 0.05 * k as f64, 1.0))
            .collect();
        let w = InitWindow::new(window(&line, &truth(0.0), 0.05, 0.0, &mut rng), 20).unwrap();
        let res = ls_initialize(&w, &TagExtrinsics::default(), &InitConfig::default());
        assert_eq!(res.status, SolverStatus::Singular);
        assert!(res.degeneracy.collinear);
    }

    #[test]
    fn zero_pose_covariance_reduces_to_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = InitWindow::new(window(&rich_positions(50), &truth(-0.3), 0.1, 0.0, &mut rng), 20)
            .unwrap();
        let cfg = InitConfig::default();
        let ls = ls_initialize(&w, &TagExtrinsics::default(), &cfg);
        let ri = robust_initialize(&w, &TagExtrinsics::default(), &cfg);
        assert!((ls.position - ri.position).norm() < 1e-8);
        assert!((ls.gamma - ri.gamma).abs() < 1e-8);
    }

    #[test]
    fn robust_cost_descends_from_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = InitWindow::new(window(&rich_positions(50), &truth(-0.3), 0.1, 0.04, &mut rng), 20)
            .unwrap();
        let res = robust_initialize(&w, &TagExtrinsics::default(), &InitConfig::default());
        assert!(res.cost.is_finite());
        assert!(res.cost <= res.initial_cost);
        for pair in res.cost_history.windows(2) {
            assert!(pair[1] <= pair[0]);
        }
    }

    #[test]
    fn window_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let entries = window(&rich_positions(10), &truth(0.0), 0.1, 0.0, &mut rng);
        assert!(matches!(
            InitWindow::new(entries.clone(), 20),
            Err(Error::WindowTooShort { got: 10, min: 20 })
        ));
        let mut swapped = entries.clone();
        swapped.swap(2, 3);
        assert_eq!(InitWindow::new(swapped, 5), Err(Error::WindowOrder(3)));
        let mut bad = entries;
        bad[4].cov[(12, 12)] = -1.0;
        assert_eq!(InitWindow::new(bad, 5), Err(Error::WindowCovariance(4)));
    }

    fn filter_state(t: f64, p: Vector3<f64>) -> (FilterState, BlockCovariance) {
        let imu = ImuState::at_pose(Rotation3::identity(), p);
        let s = FilterState::new(RobotState::new(t, imu, 11));
        let cov = BlockCovariance::from_imu(&(Matrix15::identity() * 1e-3));
        (s, cov)
    }

    #[test]
    fn too_few_rows_for_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let entries = window(&rich_positions(4), &truth(0.0), 0.1, 0.0, &mut rng);
        let w = InitWindow::new(entries, 1).unwrap();
        let res = InitResult {
            position: truth(0.0).position,
            gamma: 0.0,
            beta: 1.0,
            method: InitMethod::LeastSquares,
            status: SolverStatus::Converged,
            cost: 0.0,
            initial_cost: 0.0,
            iterations: 0,
            cost_history: vec![],
            degeneracy: DegeneracyFlags::default(),
        };
        let (s, cov) = filter_state(0.0, Vector3::zeros());
        let err = initialize_covariance(
            &w,
            &res,
            0,
            &s,
            &cov,
            &TagExtrinsics::default(),
            &InitConfig::default(),
            &CovarianceInitConfig::default(),
        )
        .unwrap_err();
        assert_eq!(err, Error::InsufficientMeasurements { got: 4 });
    }

    #[test]
    fn augmented_covariance_is_valid_and_preserves_robot_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let positions = rich_positions(40);
        let entries = window(&positions, &truth(-0.3), 0.1, 0.01, &mut rng);
        let t_last = entries.last().unwrap().meas.timestamp;
        let w = InitWindow::new(entries, 20).unwrap();
        let cfg = InitConfig::default();
        let res = robust_initialize(&w, &TagExtrinsics::default(), &cfg);
        let (s, cov) = filter_state(t_last, *positions.last().unwrap());
        let (s2, c2) = initialize_covariance(
            &w,
            &res,
            3,
            &s,
            &cov,
            &TagExtrinsics::default(),
            &cfg,
            &CovarianceInitConfig::default(),
        )
        .unwrap();
        assert!(c2.is_valid());
        assert_eq!(c2.ii(), cov.ii());
        assert_eq!(s2.anchors.len(), 1);
        assert_eq!(s2.anchors[0].id, 3);
        assert!((c2.anchor_block(0)[(3, 3)] - 0.01).abs() < 1e-15);
        // linked to the live IMU state through the last entry
        assert!(c2.iu().norm() > 0.0);
        let dup = initialize_covariance(
            &w,
            &res,
            3,
            &s2,
            &c2,
            &TagExtrinsics::default(),
            &cfg,
            &CovarianceInitConfig::default(),
        );
        assert_eq!(dup.unwrap_err(), Error::DuplicateAnchor(3));
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let entries = window(&rich_positions(45), &truth(-0.3), 0.1, 0.02, &mut rng);
        let ext = TagExtrinsics::default();
        let cfg = InitConfig::default();
        let mut shuffled = entries.clone();
        for i in (1..shuffled.len()).rev() {
            let j = rng.random_range(0..=i);
            shuffled.swap(i, j);
        }
        // permutation changes the default start (no), so both start alike
        let a = solve_robust(&entries, &ext, &cfg);
        let b = solve_robust(&shuffled, &ext, &cfg);
        assert!((a.position - b.position).norm() < 1e-8);
        let a = solve_ls(&entries, &ext, &cfg);
        let b = solve_ls(&shuffled, &ext, &cfg);
        assert!((a.position - b.position).norm() < 1e-8);
    }
}
