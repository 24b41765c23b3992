//! Fisher information of a window for the anchor state when both the range
//! mean and its variance depend on the anchor, plus geometric degeneracy
//! checks on the window trajectory.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::initializer::{pose_variance, InitWindow};
use crate::state::{anchor_idx, UwbState, ANCHOR_DIM};
use crate::uwb::{range_jacobians, TagExtrinsics};

/// Geometric residual below which a window is called degenerate, m.
pub const DEGENERACY_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegeneracyFlags {
    #[serde(rename = "static")]
    pub is_static: bool,
    pub collinear: bool,
    pub planar: bool,
    /// Planar with the plane normal along z.
    pub planar_z: bool,
}

impl DegeneracyFlags {
    /// Most specific flag raised, if any.
    pub fn label(&self) -> Option<&'static str> {
        if self.is_static {
            Some("static")
        } else if self.collinear {
            Some("collinear")
        } else if self.planar_z {
            Some("planar-z")
        } else if self.planar {
            Some("planar")
        } else {
            None
        }
    }

    pub fn any(&self) -> bool {
        self.label().is_some()
    }
}

/// RMS residuals of the best-fit point, line and plane.
pub fn geometric_residuals(positions: &[Vector3<f64>]) -> (f64, f64, f64, Vector3<f64>) {
    if positions.is_empty() {
        return (0.0, 0.0, 0.0, Vector3::z());
    }
    let n = positions.len() as f64;
    let c = positions.iter().sum::<Vector3<f64>>() / n;
    let scatter = positions
        .iter()
        .map(|p| (p - c) * (p - c).transpose())
        .sum::<Matrix3<f64>>()
        / n;
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let l = order.map(|i| eig.eigenvalues[i].max(0.0));
    let normal = eig.eigenvectors.column(order[0]).into_owned();
    ((l[0] + l[1] + l[2]).sqrt(), (l[0] + l[1]).sqrt(), l[0].sqrt(), normal)
}

pub fn degeneracy_flags(positions: &[Vector3<f64>]) -> DegeneracyFlags {
    degeneracy_flags_within(positions, DEGENERACY_TOLERANCE)
}

/// Flags with a caller-chosen residual tolerance, m.
pub fn degeneracy_flags_within(positions: &[Vector3<f64>], tolerance: f64) -> DegeneracyFlags {
    let (spread, line, plane, normal) = geometric_residuals(positions);
    let planar = plane < tolerance;
    DegeneracyFlags {
        is_static: spread < tolerance,
        collinear: line < tolerance,
        planar,
        planar_z: planar && normal.z.abs() > 1.0 - 1e-6,
    }
}

/// Per-entry `Q_d + H_I P_II Hᵀ_I` at the supplied anchor hypothesis.
pub fn build_sigma(
    window: &InitWindow,
    uwb: &UwbState,
    ext: &TagExtrinsics,
    range_variance: f64,
) -> Vec<f64> {
    window
        .entries()
        .iter()
        .map(|e| range_variance + pose_variance(e, uwb, ext))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FimMode {
    /// Mean and covariance terms.
    #[default]
    Full,
    /// Mean term only.
    Classical,
    /// Second term built from the mean gradient instead of the variance
    /// gradient; kept for comparison only.
    Printed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FimConfig {
    pub mode: FimMode,
    /// Exclude `beta` and report a 4x4 matrix over `(p_a, gamma)`.
    pub fix_beta: bool,
    pub range_variance: f64,
    pub fd_step: f64,
}

impl Default for FimConfig {
    fn default() -> Self {
        Self {
            mode: FimMode::Full,
            fix_beta: true,
            range_variance: 0.01,
            fd_step: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FimReport {
    /// Row-major; parameter order `(p_a, beta, gamma)` or `(p_a, gamma)`.
    pub fisher: Vec<Vec<f64>>,
    pub det_f: f64,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub rank: usize,
    /// Rank of the anchor-position sub-block.
    pub position_rank: usize,
    pub flags: DegeneracyFlags,
    pub degenerate: Option<String>,
}

impl FimReport {
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.fisher.len();
        DMatrix::from_fn(n, n, |i, j| self.fisher[i][j])
    }
}

fn params(fix_beta: bool) -> Vec<usize> {
    if fix_beta {
        vec![anchor_idx::POS, anchor_idx::POS + 1, anchor_idx::POS + 2, anchor_idx::GAMMA]
    } else {
        (0..ANCHOR_DIM).collect()
    }
}

fn ascending_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn rank_of(ev: &[f64]) -> usize {
    let max = ev.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if max == 0.0 {
        return 0;
    }
    ev.iter().filter(|&&v| v > 1e-8 * max).count()
}

/// Plug-in Fisher information of the window at `uwb`.
pub fn general_gaussian_fim(
    window: &InitWindow,
    uwb: &UwbState,
    ext: &TagExtrinsics,
    cfg: &FimConfig,
) -> FimReport {
    let cols = params(cfg.fix_beta);
    let n = cols.len();
    let mut f = DMatrix::zeros(n, n);
    let sigma = build_sigma(window, uwb, ext, cfg.range_variance);
    for (k, e) in window.entries().iter().enumerate() {
        let Ok(j) = range_jacobians(&e.imu, uwb, ext) else {
            continue;
        };
        let s = sigma[k];
        let g: Vec<f64> = cols.iter().map(|&c| j.h_uwb[c]).collect();
        let second: Vec<f64> = match cfg.mode {
            FimMode::Classical => vec![0.0; n],
            FimMode::Printed => g.clone(),
            FimMode::Full => cols
                .iter()
                .map(|&c| {
                    let mut d = [0.0; ANCHOR_DIM];
                    d[c] = cfg.fd_step;
                    let plus = cfg.range_variance + pose_variance(e, &uwb.boxplus(&d), ext);
                    d[c] = -cfg.fd_step;
                    let minus = cfg.range_variance + pose_variance(e, &uwb.boxplus(&d), ext);
                    (plus - minus) / (2.0 * cfg.fd_step)
                })
                .collect(),
        };
        for a in 0..n {
            for b in 0..n {
                f[(a, b)] += g[a] * g[b] / s + 0.5 * second[a] * second[b] / (s * s);
            }
        }
    }
    let f = 0.5 * (&f + f.transpose());
    let eigenvalues = ascending_eigenvalues(&f);
    let position_rank = rank_of(&ascending_eigenvalues(&f.view((0, 0), (3, 3)).into_owned()));
    let flags = degeneracy_flags(&window.positions());
    FimReport {
        fisher: (0..n).map(|i| f.row(i).iter().copied().collect()).collect(),
        det_f: f.determinant(),
        rank: rank_of(&eigenvalues),
        eigenvalues,
        position_rank,
        flags,
        degenerate: flags.label().map(str::to_string),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initializer::InitEntry;
    use crate::state::{ImuState, Matrix15, Rotation3};
    use crate::uwb::RangingMeasurement;

    fn window_from(positions: &[Vector3<f64>], pos_var: f64) -> InitWindow {
        let entries = positions
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let mut cov = Matrix15::zeros();
                for i in 12..15 {
                    cov[(i, i)] = pos_var;
                }
                InitEntry {
                    imu: ImuState::at_pose(Rotation3::identity(), *p),
                    cov,
                    meas: RangingMeasurement {
                        anchor_id: 0,
                        distance: 0.0,
                        timestamp: k as f64,
                    },
                }
            })
            .collect();
        InitWindow::new(entries, 1).unwrap()
    }

    fn lissajous(n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|k| {
                let t = k as f64 * 0.1;
                Vector3::new(3.0 * (0.5 * t).sin(), 2.0 * (0.7 * t).sin(), 1.5 + (0.3 * t).cos())
            })
            .collect()
    }

    fn anchor() -> UwbState {
        UwbState::new(Vector3::new(10.0, 10.0, 10.0), 0.9, -0.3)
    }

    #[test]
    fn sigma_values() {
        let w = window_from(&lissajous(10), 0.0);
        let ext = TagExtrinsics::default();
        assert!(build_sigma(&w, &anchor(), &ext, 0.01).iter().all(|&s| s == 0.01));
        let w = window_from(&lissajous(10), 0.04);
        for s in build_sigma(&w, &anchor(), &ext, 0.01) {
            assert!((s - (0.01 + 0.81 * 0.04)).abs() < 1e-12);
        }
    }

    #[test]
    fn sigma_depends_on_anchor_hypothesis() {
        let ext = TagExtrinsics::default();
        let mut entries = window_from(&lissajous(3), 0.0).entries().to_vec();
        entries[0].cov[(12, 12)] = 0.1;
        let w = InitWindow::new(entries, 1).unwrap();
        let a = build_sigma(&w, &anchor(), &ext, 0.01);
        let other = UwbState::new(Vector3::new(-5.0, 2.0, 0.0), 0.9, -0.3);
        let b = build_sigma(&w, &other, &ext, 0.01);
        assert_ne!(a[0], b[0]);
    }

    #[test]
    fn flags() {
        let same = vec![Vector3::new(1.0, 2.0, 3.0); 30];
        let f = degeneracy_flags(&same);
        assert!(f.is_static);
        assert_eq!(f.label(), Some("static"));
        let grid: Vec<_> = (0..25)
            .map(|k| Vector3::new((k % 5) as f64, (k / 5) as f64, 1.0))
            .collect();
        let f = degeneracy_flags(&grid);
        assert!(f.planar && f.planar_z && !f.collinear);
        assert_eq!(f.label(), Some("planar-z"));
        assert!(!degeneracy_flags(&lissajous(300)).any());
    }

    #[test]
    fn static_window_position_rank_one() {
        let w = window_from(&vec![Vector3::new(0.5, 0.2, 1.0); 30], 0.01);
        let r = general_gaussian_fim(&w, &anchor(), &TagExtrinsics::default(), &FimConfig::default());
        assert_eq!(r.position_rank, 1);
        assert_eq!(r.degenerate.as_deref(), Some("static"));
    }

    #[test]
    fn in_plane_anchor_is_singular() {
        let grid: Vec<_> = (0..25)
            .map(|k| Vector3::new((k % 5) as f64, (k / 5) as f64, 10.0))
            .collect();
        let w = window_from(&grid, 0.01);
        let r = general_gaussian_fim(&w, &anchor(), &TagExtrinsics::default(), &FimConfig::default());
        assert!(r.det_f.abs() < 1e-12, "det {}", r.det_f);
        assert!(r.fisher[2].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn larger_pose_uncertainty_lowers_det() {
        let ext = TagExtrinsics::default();
        for fix_beta in [true, false] {
            let cfg = FimConfig {
                fix_beta,
                ..FimConfig::default()
            };
            let lo = general_gaussian_fim(&window_from(&lissajous(100), 0.01), &anchor(), &ext, &cfg);
            let hi = general_gaussian_fim(&window_from(&lissajous(100), 0.1), &anchor(), &ext, &cfg);
            assert!(hi.det_f < lo.det_f);
            assert_eq!(lo.fisher.len(), if fix_beta { 4 } else { 5 });
        }
    }

    #[test]
    fn classical_mode_matches_hand_fim() {
        let ext = TagExtrinsics::default();
        let w = window_from(&lissajous(40), 0.0);
        let cfg = FimConfig {
            mode: FimMode::Classical,
            fix_beta: false,
            ..FimConfig::default()
        };
        let r = general_gaussian_fim(&w, &anchor(), &ext, &cfg);
        let a = anchor();
        let mut oracle = [[0.0; 5]; 5];
        for p in lissajous(40) {
            let u = p - a.position;
            let rho = u.norm();
            let g = [
                -a.beta * u.x / rho,
                -a.beta * u.y / rho,
                -a.beta * u.z / rho,
                rho,
                1.0,
            ];
            for (row, gi) in oracle.iter_mut().zip(g) {
                for (cell, gj) in row.iter_mut().zip(g) {
                    *cell += gi * gj / 0.01;
                }
            }
        }
        assert_eq!(r.fisher.len(), 5);
        for (got_row, want_row) in r.fisher.iter().zip(&oracle) {
            for (got, want) in got_row.iter().zip(want_row) {
                assert!((got - want).abs() / want.abs().max(1.0) < 1e-10);
            }
        }
    }

    #[test]
    fn fim_is_symmetric_psd_and_monotone_in_window() {
        let ext = TagExtrinsics::default();
        let cfg = FimConfig {
            fix_beta: false,
            ..FimConfig::default()
        };
        let pts = lissajous(80);
        let full = general_gaussian_fim(&window_from(&pts, 0.02), &anchor(), &ext, &cfg);
        let part = general_gaussian_fim(&window_from(&pts[..50], 0.02), &anchor(), &ext, &cfg);
        let m = full.matrix();
        assert!((&m - m.transpose()).amax() <= 1e-9 * m.amax());
        let max = full.eigenvalues.last().copied().unwrap();
        assert!(full.eigenvalues[0] >= -1e-8 * max);
        for (a, b) in part.eigenvalues.iter().zip(&full.eigenvalues) {
            assert!(*a <= *b * (1.0 + 1e-9) + 1e-9);
        }
    }
}
