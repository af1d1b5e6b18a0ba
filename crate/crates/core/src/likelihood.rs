//! Soft-indicator likelihood terms and a small two-dimensional maximizer.
//!
//! For a delay difference `x` (already corrected by a clock-offset hypothesis)
//! and a distance hypothesis `d`, the soft indicator is
//! `F(x + d/c) − F(x − d/c)`, where `F` is the CDF of the measurement error.
//! It is the probability that the noise-free value lies in `[−d/c, d/c]`.
//! Everything is evaluated in the log domain; a zero likelihood maps to `−∞`.

use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::geom::SPEED_OF_LIGHT;

/// Distribution of the per-MPC delay-difference error.
#[derive(Debug, Clone, PartialEq)]
pub enum ErrorModel {
    /// No measurement error: the indicator is hard.
    Exact,
    /// Zero-mean Gaussian error, one standard deviation (seconds) per MPC.
    Gaussian { sigma: Vec<f64> },
}

impl ErrorModel {
    /// Gaussian model with the same deviation for `k` MPCs; `sigma = 0` gives [`ErrorModel::Exact`].
    pub fn iid(sigma: f64, k: usize) -> Self {
        if sigma == 0.0 {
            ErrorModel::Exact
        } else {
            ErrorModel::Gaussian { sigma: vec![sigma; k] }
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        match self {
            ErrorModel::Exact => Ok(()),
            ErrorModel::Gaussian { sigma } => {
                if sigma.len() != k {
                    return Err(Error::DimensionMismatch(format!("{} error deviations for {k} MPCs", sigma.len())));
                }
                if sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    return Err(Error::InvalidParams("error deviations must be positive".into()));
                }
                Ok(())
            }
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, ErrorModel::Exact)
    }

    /// Largest per-MPC deviation (zero for the exact model).
    pub fn max_sigma(&self) -> f64 {
        match self {
            ErrorModel::Exact => 0.0,
            ErrorModel::Gaussian { sigma } => sigma.iter().copied().fold(0.0, f64::max),
        }
    }
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Natural log of the Gaussian tail `Q(z) = P(N(0,1) > z)`, accurate far into both tails.
pub fn ln_q(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z < 0.0 {
        (-0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln_1p()
    } else if z < 30.0 {
        (0.5 * erfc(z / std::f64::consts::SQRT_2)).ln()
    } else {
        let r = 1.0 / (z * z);
        let series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)));
        -0.5 * z * z - z.ln() - LN_SQRT_2PI + series.ln()
    }
}

/// `ln(1 − e^t)` for `t ≤ 0`.
fn ln_one_minus_exp(t: f64) -> f64 {
    if t > -std::f64::consts::LN_2 {
        (-t.exp_m1()).ln()
    } else {
        (-t.exp()).ln_1p()
    }
}

/// Log of `Φ(v) − Φ(u)` for `u ≤ v`.
fn ln_normal_mass(u: f64, v: f64) -> f64 {
    if !(v > u) {
        return f64::NEG_INFINITY;
    }
    // Work in the upper tail where Q has full relative precision.
    let (lo, hi) = if u + v >= 0.0 { (u, v) } else { (-v, -u) };
    let a = ln_q(lo);
    let b = ln_q(hi);
    a + ln_one_minus_exp(b - a)
}

/// Log soft indicator `ln[F(x + d/c) − F(x − d/c)]` for the MPC at `index`.
pub fn ln_soft_indicator(x: f64, d_hyp: f64, model: &ErrorModel, index: usize, c: f64) -> f64 {
    let half_width = d_hyp / c;
    match model {
        ErrorModel::Exact => {
            if x.abs() <= half_width {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
        ErrorModel::Gaussian { sigma } => {
            let s = sigma[index];
            ln_normal_mass((x - half_width) / s, (x + half_width) / s)
        }
    }
}

/// Soft indicator `F(x + d/c) − F(x − d/c)` in `[0, 1]`.
pub fn soft_indicator(x: f64, d_hyp: f64, model: &ErrorModel, index: usize, c: f64) -> f64 {
    ln_soft_indicator(x, d_hyp, model, index, c).exp()
}

/// Uniform grid on `[min, max]` with `steps` points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl GridAxis {
    pub fn new(min: f64, max: f64, steps: usize) -> Self {
        GridAxis { min, max, steps }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max > self.min) || self.steps < 2 || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::InvalidParams(format!("bad grid axis {self:?}")));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.steps - 1) as f64
    }

    pub fn value(&self, i: usize) -> f64 {
        if i + 1 == self.steps {
            self.max
        } else {
            self.min + i as f64 * self.step()
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.steps).map(|i| self.value(i))
    }
}

/// Settings for [`maximize_2d`].
///
/// Grids left as `None` are filled in by the estimators from the data.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// Distance grid, meters.
    pub grid_d: Option<GridAxis>,
    /// Clock-offset grid, seconds.
    pub grid_eps: Option<GridAxis>,
    /// Points per axis of data-driven default grids.
    pub default_steps: usize,
    /// Nelder–Mead iteration budget per start.
    pub refine_iters: usize,
    /// Number of best grid cells refined.
    pub multistart: usize,
    /// Convergence tolerance, meters (the clock axis uses `tolerance / c`).
    pub tolerance: f64,
    /// Smallest admissible distance hypothesis, meters.
    pub d_floor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            grid_d: None,
            grid_eps: None,
            default_steps: 100,
            refine_iters: 200,
            multistart: 8,
            tolerance: 1e-4,
            d_floor: 1e-6,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(g) = &self.grid_d {
            g.validate()?;
        }
        if let Some(g) = &self.grid_eps {
            g.validate()?;
        }
        if self.default_steps < 2 || !(self.tolerance > 0.0) || self.multistart == 0 {
            return Err(Error::InvalidParams("bad optimizer settings".into()));
        }
        Ok(())
    }

    /// Copy with missing grids replaced by the given ranges.
    pub fn with_default_grids(&self, d_max: f64, eps_lo: f64, eps_hi: f64) -> Self {
        let mut out = self.clone();
        out.grid_d.get_or_insert(GridAxis::new(0.0, d_max, self.default_steps));
        out.grid_eps.get_or_insert(GridAxis::new(eps_lo, eps_hi, self.default_steps));
        out
    }
}

/// Outcome of a maximization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Maximum {
    pub d: f64,
    pub eps: f64,
    pub value: f64,
    /// Best value among the grid and seed points before refinement.
    pub start_value: f64,
    pub evaluations: usize,
    pub iterations: usize,
}

/// Grid scan followed by Nelder–Mead refinement from the best starts.
///
/// `seeds` are extra (d, eps) points that compete with the grid cells for
/// the refinement starts. Ties between equal starts go to the lowest `d`,
/// then the lowest `eps`.
pub fn maximize_2d<F>(objective: F, cfg: &OptimizerConfig, seeds: &[(f64, f64)]) -> Result<Maximum>
where
    F: Fn(f64, f64) -> f64 + Sync,
{
    cfg.validate()?;
    let (gd, ge) = match (cfg.grid_d, cfg.grid_eps) {
        (Some(d), Some(e)) => (d, e),
        _ => return Err(Error::InvalidParams("optimizer grids are not set".into())),
    };
    let floor = cfg.d_floor;
    let eval = |d: f64, e: f64| -> f64 {
        if !(d >= floor) || !d.is_finite() || !e.is_finite() {
            return f64::NEG_INFINITY;
        }
        let v = objective(d, e);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };

    let mut points: Vec<(f64, f64)> =
        (0..gd.steps).flat_map(|i| (0..ge.steps).map(move |j| (gd.value(i).max(floor), ge.value(j)))).collect();
    points.extend(seeds.iter().map(|&(d, e)| (d.max(floor), e)));
    let values: Vec<f64> = points.par_iter().map(|&(d, e)| eval(d, e)).collect();
    let mut evaluations = values.len();

    let mut order: Vec<usize> = (0..points.len()).filter(|&i| values[i] > f64::NEG_INFINITY).collect();
    if order.is_empty() {
        return Err(Error::DegenerateObjective);
    }
    order.sort_by(|&a, &b| {
        values[b]
            .total_cmp(&values[a])
            .then(points[a].0.total_cmp(&points[b].0))
            .then(points[a].1.total_cmp(&points[b].1))
    });
    let start = order[0];
    let mut best = Maximum {
        d: points[start].0,
        eps: points[start].1,
        value: values[start],
        start_value: values[start],
        evaluations: 0,
        iterations: 0,
    };

    let scale = [gd.step(), ge.step()];
    let tol = [cfg.tolerance, cfg.tolerance / SPEED_OF_LIGHT];
    let mut iterations = 0;
    for &i in order.iter().take(cfg.multistart) {
        let run = nelder_mead(&eval, [points[i].0, points[i].1], values[i], scale, tol, cfg.refine_iters);
        evaluations += run.evaluations;
        iterations += run.iterations;
        if run.value > best.value {
            best.d = run.x[0];
            best.eps = run.x[1];
            best.value = run.value;
        }
    }
    best.evaluations = evaluations;
    best.iterations = iterations;
    Ok(best)
}

struct NmRun {
    x: [f64; 2],
    value: f64,
    evaluations: usize,
    iterations: usize,
}

/// Derivative-free maximization in coordinates scaled by `scale`, with restarts
/// from the incumbent until a restart no longer improves it.
fn nelder_mead<F>(f: &F, x0: [f64; 2], f0: f64, scale: [f64; 2], tol: [f64; 2], budget: usize) -> NmRun
where
    F: Fn(f64, f64) -> f64,
{
    // Minimize the negated objective in scaled coordinates.
    let cost = |u: &[f64; 2]| -f(x0[0] + u[0] * scale[0], x0[1] + u[1] * scale[1]);
    let tol_u = [tol[0] / scale[0], tol[1] / scale[1]];

    let mut best_u = [0.0, 0.0];
    let mut best_c = -f0;
    let mut evaluations = 0;
    let mut iterations = 0;
    let mut step = 1.0;

    for _restart in 0..4 {
        let mut simplex = [best_u, [best_u[0] + step, best_u[1]], [best_u[0], best_u[1] + step]];
        let mut vals = [best_c, cost(&simplex[1]), cost(&simplex[2])];
        evaluations += 2;
        let improved_before = best_c;

        while iterations < budget {
            iterations += 1;
            let mut idx = [0usize, 1, 2];
            idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
            let (lo, mid, hi) = (idx[0], idx[1], idx[2]);

            let extent = (0..2).all(|k| {
                let span = simplex.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max)
                    - simplex.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
                span <= tol_u[k]
            });
            if extent {
                break;
            }

            let centroid = [0.5 * (simplex[lo][0] + simplex[mid][0]), 0.5 * (simplex[lo][1] + simplex[mid][1])];
            let along = |t: f64| {
                [centroid[0] + t * (simplex[hi][0] - centroid[0]), centroid[1] + t * (simplex[hi][1] - centroid[1])]
            };

            let xr = along(-1.0);
            let fr = cost(&xr);
            evaluations += 1;
            if fr < vals[lo] {
                let xe = along(-2.0);
                let fe = cost(&xe);
                evaluations += 1;
                if fe < fr {
                    simplex[hi] = xe;
                    vals[hi] = fe;
                } else {
                    simplex[hi] = xr;
                    vals[hi] = fr;
                }
            } else if fr < vals[mid] {
                simplex[hi] = xr;
                vals[hi] = fr;
            } else {
                let (xc, fc) = if fr < vals[hi] {
                    let xc = along(-0.5);
                    (xc, cost(&xc))
                } else {
                    let xc = along(0.5);
                    (xc, cost(&xc))
                };
                evaluations += 1;
                if fc < vals[hi].min(fr) {
                    simplex[hi] = xc;
                    vals[hi] = fc;
                } else {
                    for &j in &[mid, hi] {
                        simplex[j] = [
                            simplex[lo][0] + 0.5 * (simplex[j][0] - simplex[lo][0]),
                            simplex[lo][1] + 0.5 * (simplex[j][1] - simplex[lo][1]),
                        ];
                        vals[j] = cost(&simplex[j]);
                    }
                    evaluations += 2;
                }
            }
        }

        for (p, &v) in simplex.iter().zip(&vals) {
            if v < best_c {
                best_c = v;
                best_u = *p;
            }
        }
        if !(best_c < improved_before) || iterations >= budget {
            break;
        }
        step *= 0.25;
    }

    NmRun { x: [x0[0] + best_u[0] * scale[0], x0[1] + best_u[1] * scale[1]], value: -best_c, evaluations, iterations }
}
