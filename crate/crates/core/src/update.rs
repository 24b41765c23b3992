//! Kalman measurement updates over a sparse Jacobian.
//!
//! Every product is formed separately for the robot rows and the anchor rows
//! so that the robot block of the result never depends on the size of the
//! anchor block.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::state::{boxplus, BlockCovariance, FilterState};

/// A linearized measurement `r = H x~ + n` with `H` nonzero only on `cols`.
#[derive(Clone, Debug)]
pub struct SparseMeasurement {
    pub cols: Vec<usize>,
    /// `m x cols.len()`
    pub h: DMatrix<f64>,
    pub residual: DVector<f64>,
    /// `m x m`
    pub noise: DMatrix<f64>,
}

/// Which rows receive a gain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GainPolicy {
    /// Standard EKF: every state moves.
    Full,
    /// Schmidt: robot rows are nuisance states with zero gain; only the
    /// anchor block is updated, cross-covariances are still tracked.
    AnchorsOnly,
}

#[derive(Clone, Debug)]
pub struct UpdateOutcome {
    pub innovation: DMatrix<f64>,
    pub delta: DVector<f64>,
    pub dp_rr_norm: f64,
    pub dp_ru_norm: f64,
    pub dp_uu_norm: f64,
}

fn gather(cov: &BlockCovariance, rows: std::ops::Range<usize>, cols: &[usize]) -> DMatrix<f64> {
    let p = cov.matrix();
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| p[(rows.start + i, cols[j])])
}

/// `S = H P Hᵀ + R`.
pub fn innovation(cov: &BlockCovariance, meas: &SparseMeasurement) -> DMatrix<f64> {
    let p_cc = DMatrix::from_fn(meas.cols.len(), meas.cols.len(), |i, j| {
        cov.matrix()[(meas.cols[i], meas.cols[j])]
    });
    let s = &meas.h * p_cc * meas.h.transpose() + &meas.noise;
    0.5 * (&s + s.transpose())
}

/// Squared Mahalanobis distance of the residual.
pub fn mahalanobis(s: &DMatrix<f64>, r: &DVector<f64>) -> Result<f64> {
    let chol = s
        .clone()
        .cholesky()
        .ok_or(Error::NonPositiveInnovation(s.determinant()))?;
    Ok(r.dot(&chol.solve(r)))
}

/// Applies the update in place and returns the increment and block deltas.
pub fn kalman_update(
    state: &mut FilterState,
    cov: &mut BlockCovariance,
    meas: &SparseMeasurement,
    policy: GainPolicy,
) -> Result<UpdateOutcome> {
    let n = cov.dim();
    let nr = cov.robot_dim();
    let s = innovation(cov, meas);
    let chol = s
        .clone()
        .cholesky()
        .ok_or(Error::NonPositiveInnovation(s.determinant()))?;

    let ht = meas.h.transpose();
    let pht_r = gather(cov, 0..nr, &meas.cols) * &ht;
    let pht_u = gather(cov, nr..n, &meas.cols) * &ht;
    // K = P Hᵀ S⁻¹, computed as (S⁻¹ H P)ᵀ
    let k_r = chol.solve(&pht_r.transpose()).transpose();
    let k_u = chol.solve(&pht_u.transpose()).transpose();

    let mut delta = DVector::zeros(n);
    if policy == GainPolicy::Full {
        delta.rows_mut(0, nr).copy_from(&(&k_r * &meas.residual));
    }
    delta
        .rows_mut(nr, n - nr)
        .copy_from(&(&k_u * &meas.residual));

    let dp_uu = &k_u * pht_u.transpose();
    let (dp_rr, dp_ru) = match policy {
        GainPolicy::Full => (Some(&k_r * pht_r.transpose()), &k_r * pht_u.transpose()),
        // Joseph form with K_r = 0 and optimal K_U
        GainPolicy::AnchorsOnly => (None, &pht_r * k_u.transpose()),
    };

    let p = cov.matrix_mut();
    if let Some(d) = &dp_rr {
        let mut blk = p.view_mut((0, 0), (nr, nr));
        blk -= d;
    }
    {
        let mut blk = p.view_mut((0, nr), (nr, n - nr));
        blk -= &dp_ru;
    }
    {
        let mut blk = p.view_mut((nr, 0), (n - nr, nr));
        blk -= dp_ru.transpose();
    }
    {
        let mut blk = p.view_mut((nr, nr), (n - nr, n - nr));
        blk -= &dp_uu;
    }
    symmetrize_blocks(cov, policy == GainPolicy::Full);

    *state = boxplus(state, &delta)?;
    Ok(UpdateOutcome {
        innovation: s,
        delta,
        dp_rr_norm: dp_rr.map(|d| d.norm()).unwrap_or(0.0),
        dp_ru_norm: dp_ru.norm(),
        dp_uu_norm: dp_uu.norm(),
    })
}

/// Symmetrizes the touched diagonal blocks; off-diagonal blocks are written
/// as exact transposes above.
fn symmetrize_blocks(cov: &mut BlockCovariance, robot: bool) {
    let n = cov.dim();
    let nr = cov.robot_dim();
    let p = cov.matrix_mut();
    let mut sym = |lo: usize, hi: usize| {
        for i in lo..hi {
            for j in (i + 1)..hi {
                let v = 0.5 * (p[(i, j)] + p[(j, i)]);
                p[(i, j)] = v;
                p[(j, i)] = v;
            }
        }
    };
    if robot {
        sym(0, nr);
    }
    sym(nr, n);
}
