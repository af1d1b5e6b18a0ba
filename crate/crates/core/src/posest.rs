//! Relative-position estimators.
//!
//! By delay differences: each MPC gives one linear equation
//! `s·d + cε = cΔ` with the projection vector `s = (s_A + s_B)/(1 + s_Aᵀs_B)`.
//! By raw delays: each MPC gives the vector equation
//! `cτ_B s_B − cτ_A s_A = d + cε s_B + cε_A (s_B − s_A)` with one A-side clock
//! offset per observer. Both systems are solved by least squares, and time unknowns are
//! carried as `c·offset` so every unknown is in meters.

use nalgebra::{DMatrix, DVector};

use crate::chansim::MpcObservation;
use crate::error::{Error, Result};
use crate::geom::{projection_vector, Vec3, SPEED_OF_LIGHT};

const C: f64 = SPEED_OF_LIGHT;

/// Smallest admissible `1 + s_Aᵀs_B`.
pub const ANTIPARALLEL_GUARD: f64 = 1e-6;

/// Largest condition number accepted before reporting a rank-deficient system.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PositionMethod {
    LseByDelta,
    LseByDeltaPwa,
    GlsByDelta,
    LseByTau,
    LseByTauSync,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionEstimate {
    /// Displacement from A to B, meters.
    pub d_vec: Vec3,
    /// Clock offset between B and A, seconds.
    pub eps_hat: f64,
    /// Clock offsets between A and each observer, seconds (by-delay estimators only).
    pub eps_a_hats: Vec<f64>,
    pub method: PositionMethod,
    /// Condition number of the solved system (1 where no system is solved).
    pub condition_number: f64,
}

/// Linear system of the by-difference estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedDiffSystem {
    /// 4×K matrix with columns `[s; 1]`.
    pub e: DMatrix<f64>,
    /// Delay differences, seconds.
    pub delta: DVector<f64>,
    pub s_vectors: Vec<Vec3>,
}

impl StackedDiffSystem {
    /// Stacks all MPCs; with `pwa` the A-side direction replaces the projection vector.
    pub fn build(obs: &[Vec<MpcObservation>], pwa: bool) -> Result<Self> {
        let mut s_vectors = Vec::new();
        let mut delta = Vec::new();
        for (o, group) in obs.iter().enumerate() {
            for (k, m) in group.iter().enumerate() {
                let s =
                    if pwa {
                        m.dir_a.into_inner()
                    } else {
                        projection_vector(&m.dir_a, &m.dir_b, ANTIPARALLEL_GUARD).ok_or(
                            Error::AntiparallelDirections { observer: o, mpc: k, margin: 1.0 + m.dir_a.dot(&m.dir_b) },
                        )?
                    };
                s_vectors.push(s);
                delta.push(m.delay_diff());
            }
        }
        let k = s_vectors.len();
        let e = DMatrix::from_fn(4, k, |r, j| if r < 3 { s_vectors[j][r] } else { 1.0 });
        Ok(StackedDiffSystem { e, delta: DVector::from_vec(delta), s_vectors })
    }

    pub fn len(&self) -> usize {
        self.s_vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_vectors.is_empty()
    }
}

/// Linear system of the by-delay estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedTauSystem {
    /// 3K×(4+M) matrix with row blocks `[I₃ | s_B | s_B − s_A in the observer column]`.
    pub g: DMatrix<f64>,
    /// Stacked `cτ_B s_B − cτ_A s_A`, meters.
    pub t: DVector<f64>,
}

impl StackedTauSystem {
    pub fn build(obs: &[Vec<MpcObservation>]) -> Self {
        let m = obs.len();
        let k: usize = obs.iter().map(Vec::len).sum();
        let mut g = DMatrix::zeros(3 * k, 4 + m);
        let mut t = DVector::zeros(3 * k);
        let mut row = 0;
        for (o, group) in obs.iter().enumerate() {
            for mpc in group {
                let sa = mpc.dir_a.into_inner();
                let sb = mpc.dir_b.into_inner();
                let rhs = C * mpc.tau_b * sb - C * mpc.tau_a * sa;
                for i in 0..3 {
                    g[(row + i, i)] = 1.0;
                    g[(row + i, 3)] = sb[i];
                    g[(row + i, 4 + o)] = sb[i] - sa[i];
                    t[row + i] = rhs[i];
                }
                row += 3;
            }
        }
        StackedTauSystem { g, t }
    }
}

/// Least-squares solution of `a·x ≈ b` with the condition number of `a`.
///
/// The condition number comes from the singular values; the solve itself uses
/// Householder QR, which is more accurate here than the SVD back-substitution.
fn solve_lsq(a: DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let n = a.ncols();
    if a.nrows() < n {
        return Err(Error::RankDeficient { condition: f64::INFINITY });
    }
    let sv = a.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::RankDeficient { condition });
    }
    let qr = a.qr();
    let qtb = qr.q().transpose() * b;
    let x = qr.r().solve_upper_triangular(&qtb).ok_or(Error::RankDeficient { condition })?;
    Ok((x, condition))
}

fn delta_estimate(x: &DVector<f64>, method: PositionMethod, condition: f64) -> PositionEstimate {
    PositionEstimate {
        d_vec: Vec3::new(x[0], x[1], x[2]),
        eps_hat: x[3] / C,
        eps_a_hats: Vec::new(),
        method,
        condition_number: condition,
    }
}

fn by_delta(obs: &[Vec<MpcObservation>], pwa: bool, method: PositionMethod) -> Result<PositionEstimate> {
    let sys = StackedDiffSystem::build(obs, pwa)?;
    let (x, cond) = solve_lsq(sys.e.transpose(), &(C * &sys.delta))?;
    Ok(delta_estimate(&x, method, cond))
}

/// Least-squares displacement and clock offset from delay differences.
///
/// Needs at least four MPCs whose projection vectors span three dimensions.
pub fn lse_by_delta(obs: &[Vec<MpcObservation>]) -> Result<PositionEstimate> {
    by_delta(obs, false, PositionMethod::LseByDelta)
}

/// [`lse_by_delta`] under the plane-wave assumption: the A-side direction
/// stands in for the projection vector, so B-side directions are not used.
pub fn lse_by_delta_pwa(obs: &[Vec<MpcObservation>]) -> Result<PositionEstimate> {
    by_delta(obs, true, PositionMethod::LseByDeltaPwa)
}

/// Generalized least squares for correlated or biased delay-difference errors.
///
/// `error_mean` (seconds) is removed from the differences and the system is
/// whitened with the Cholesky factor of `error_cov` (seconds²). With
/// `error_cov = σ²I` and zero mean the result equals [`lse_by_delta`].
pub fn gls_by_delta(
    obs: &[Vec<MpcObservation>],
    error_mean: &DVector<f64>,
    error_cov: &DMatrix<f64>,
) -> Result<PositionEstimate> {
    let sys = StackedDiffSystem::build(obs, false)?;
    let k = sys.len();
    if error_mean.len() != k || error_cov.nrows() != k || error_cov.ncols() != k {
        return Err(Error::DimensionMismatch(format!(
            "{k} MPCs, error mean of length {}, covariance {}×{}",
            error_mean.len(),
            error_cov.nrows(),
            error_cov.ncols()
        )));
    }
    // Work in meters² so the factor is well scaled.
    let chol = (C * C * error_cov).cholesky().ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    let a = l.solve_lower_triangular(&sys.e.transpose()).ok_or(Error::NotPositiveDefinite)?;
    let b = l.solve_lower_triangular(&(C * (&sys.delta - error_mean))).ok_or(Error::NotPositiveDefinite)?;
    let (x, cond) = solve_lsq(a, &b)?;
    Ok(delta_estimate(&x, PositionMethod::GlsByDelta, cond))
}

/// Joint least-squares displacement, clock offset and per-observer A-side
/// clock offsets from raw delays and both directions.
pub fn lse_by_tau(obs: &[Vec<MpcObservation>]) -> Result<PositionEstimate> {
    let sys = StackedTauSystem::build(obs);
    let (x, cond) = solve_lsq(sys.g, &sys.t)?;
    Ok(PositionEstimate {
        d_vec: Vec3::new(x[0], x[1], x[2]),
        eps_hat: x[3] / C,
        eps_a_hats: x.iter().skip(4).map(|v| v / C).collect(),
        method: PositionMethod::LseByTau,
        condition_number: cond,
    })
}

/// Synchronized clocks: mean of `cτ_B s_B − cτ_A s_A` over all MPCs.
pub fn lse_by_tau_sync(obs: &[Vec<MpcObservation>]) -> Result<PositionEstimate> {
    let k: usize = obs.iter().map(Vec::len).sum();
    if k == 0 {
        return Err(Error::InsufficientMpcs { needed: 1, got: 0 });
    }
    let sum = obs
        .iter()
        .flatten()
        .fold(Vec3::zeros(), |acc, m| acc + C * m.tau_b * m.dir_b.into_inner() - C * m.tau_a * m.dir_a.into_inner());
    Ok(PositionEstimate {
        d_vec: sum / k as f64,
        eps_hat: 0.0,
        eps_a_hats: vec![0.0; obs.len()],
        method: PositionMethod::LseByTauSync,
        condition_number: 1.0,
    })
}
