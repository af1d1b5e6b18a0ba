//! Distance estimators from delay differences.
//!
//! With the MPC association known, every delay difference satisfies
//! `|Δ − ε| ≤ d/c` up to measurement error. The closed forms below follow from
//! that bound; the general case maximizes the likelihood
//! `d^−K · Π I(Δ − ε, d)` numerically. Without association the product runs
//! over a permutation sum per observer, evaluated as a matrix permanent.

use crate::chansim::MpcObservation;
use crate::error::{Error, Result};
use crate::geom::SPEED_OF_LIGHT;
use crate::likelihood::{ln_soft_indicator, maximize_2d, ErrorModel, GridAxis, OptimizerConfig};

const C: f64 = SPEED_OF_LIGHT;

/// Largest per-observer MPC count accepted by [`mle_async_noassoc`].
pub const PERMUTATION_CAP: usize = 8;

/// Largest size evaluated by direct enumeration; bigger permanents use Ryser's formula.
pub const ENUMERATION_LIMIT: usize = 6;

/// Number of noiseless candidates used as extra starts in the Gaussian no-association search.
const CANDIDATE_SEEDS: usize = 16;

/// Delay differences `Δ = τ_B − τ_A` in seconds, grouped by observer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DelayDiffSet {
    groups: Vec<Vec<f64>>,
}

impl DelayDiffSet {
    pub fn new(groups: Vec<Vec<f64>>) -> Self {
        DelayDiffSet { groups }
    }

    /// All differences from a single observer.
    pub fn single(diffs: &[f64]) -> Self {
        DelayDiffSet { groups: vec![diffs.to_vec()] }
    }

    pub fn from_observations(obs: &[Vec<MpcObservation>]) -> Self {
        DelayDiffSet { groups: obs.iter().map(|g| g.iter().map(|m| m.delay_diff()).collect()).collect() }
    }

    pub fn groups(&self) -> &[Vec<f64>] {
        &self.groups
    }

    /// Total number of differences `K`.
    pub fn len(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differences in observer-major order; model deviations are indexed in this order.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.groups.iter().flatten().copied()
    }

    /// Copy with `delta` added to every difference.
    pub fn shifted(&self, delta: f64) -> Self {
        DelayDiffSet { groups: self.groups.iter().map(|g| g.iter().map(|x| x + delta).collect()).collect() }
    }

    fn extent(&self) -> (f64, f64) {
        self.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
    }

    fn require(&self, needed: usize) -> Result<()> {
        let got = self.len();
        if got < needed {
            return Err(Error::InsufficientMpcs { needed, got });
        }
        if self.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParams("delay differences must be finite".into()));
        }
        Ok(())
    }
}

/// Which estimator produced a [`DistanceEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistanceMethod {
    MvueAsync,
    MleAsyncNoiseless,
    MleSync,
    MvueSync,
    MleAsyncGaussian,
    MleAsyncNoAssoc,
}

/// Optimizer bookkeeping attached to numerical estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    /// Log-likelihood at the estimate.
    pub log_likelihood: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceEstimate {
    /// Distance, meters.
    pub d_hat: f64,
    /// Clock offset between B and A, seconds.
    pub eps_hat: f64,
    pub method: DistanceMethod,
    pub diagnostics: Option<Diagnostics>,
}

impl DistanceEstimate {
    fn closed(d_hat: f64, eps_hat: f64, method: DistanceMethod) -> Self {
        DistanceEstimate { d_hat, eps_hat, method, diagnostics: None }
    }
}

/// Bias-corrected closed form `(K+1)/(K−1) · (c/2)(max Δ − min Δ)`.
///
/// ```
/// use mpcloc::distest::{mvue_async, DelayDiffSet};
/// let est = mvue_async(&DelayDiffSet::single(&[-1e-9, 0.0, 3e-9])).unwrap();
/// assert!((est.d_hat - 299_792_458.0 * 4e-9).abs() < 1e-9);
/// assert!((est.eps_hat - 1e-9).abs() < 1e-21);
/// ```
pub fn mvue_async(diffs: &DelayDiffSet) -> Result<DistanceEstimate> {
    let base = mle_async_noiseless(diffs)?;
    let k = diffs.len() as f64;
    Ok(DistanceEstimate { d_hat: (k + 1.0) / (k - 1.0) * base.d_hat, method: DistanceMethod::MvueAsync, ..base })
}

/// Noiseless maximum-likelihood closed form `(c/2)(max Δ − min Δ)`.
///
/// It never exceeds the true distance when the differences are exact.
pub fn mle_async_noiseless(diffs: &DelayDiffSet) -> Result<DistanceEstimate> {
    diffs.require(2)?;
    let (lo, hi) = diffs.extent();
    Ok(DistanceEstimate::closed(0.5 * C * (hi - lo), 0.5 * (hi + lo), DistanceMethod::MleAsyncNoiseless))
}

/// Synchronized clocks: `c · max |Δ|`.
pub fn mle_sync(diffs: &DelayDiffSet) -> Result<DistanceEstimate> {
    diffs.require(1)?;
    let m = diffs.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()));
    Ok(DistanceEstimate::closed(C * m, 0.0, DistanceMethod::MleSync))
}

/// Synchronized clocks with bias correction: `(K+1)/K · c · max |Δ|`.
pub fn mvue_sync(diffs: &DelayDiffSet) -> Result<DistanceEstimate> {
    let base = mle_sync(diffs)?;
    let k = diffs.len() as f64;
    Ok(DistanceEstimate { d_hat: (k + 1.0) / k * base.d_hat, method: DistanceMethod::MvueSync, ..base })
}

/// Known-association log-likelihood `−K ln d + Σ ln I(Δ − ε, d)`; `−∞` for `d ≤ 0`.
pub fn log_likelihood_known(diffs: &DelayDiffSet, model: &ErrorModel, d_hyp: f64, eps_hyp: f64) -> f64 {
    if !(d_hyp > 0.0) {
        return f64::NEG_INFINITY;
    }
    let mut acc = -(diffs.len() as f64) * d_hyp.ln();
    for (i, x) in diffs.iter().enumerate() {
        acc += ln_soft_indicator(x - eps_hyp, d_hyp, model, i, C);
        if acc == f64::NEG_INFINITY {
            break;
        }
    }
    acc
}

/// Offsets a user-supplied clock grid into the centered frame.
fn centered_grid(cfg: &OptimizerConfig, center: f64, d_max: f64, eps_half: f64) -> OptimizerConfig {
    let mut cfg = cfg.clone();
    if let Some(g) = cfg.grid_eps {
        cfg.grid_eps = Some(GridAxis::new(g.min - center, g.max - center, g.steps));
    }
    cfg.with_default_grids(d_max, -eps_half, eps_half)
}

/// Joint maximum-likelihood estimate of distance and clock offset with known association.
///
/// The data are centered on their midrange before the search, so the
/// default grids and the result move with any common shift of the input.
/// The exact model short-circuits to [`mle_async_noiseless`].
pub fn mle_async_gaussian(diffs: &DelayDiffSet, model: &ErrorModel, cfg: &OptimizerConfig) -> Result<DistanceEstimate> {
    diffs.require(2)?;
    model.validate(diffs.len())?;
    if model.is_exact() {
        return mle_async_noiseless(diffs);
    }
    let (lo, hi) = diffs.extent();
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let centered = diffs.shifted(-center);
    let s = model.max_sigma();
    let grid = centered_grid(cfg, center, C * (2.0 * half + 4.0 * s), half + 3.0 * s);

    let best = maximize_2d(|d, e| log_likelihood_known(&centered, model, d, e), &grid, &[(C * half, 0.0)])?;
    Ok(DistanceEstimate {
        d_hat: best.d,
        eps_hat: center + best.eps,
        method: DistanceMethod::MleAsyncGaussian,
        diagnostics: Some(Diagnostics {
            log_likelihood: best.value,
            iterations: best.iterations,
            evaluations: best.evaluations,
        }),
    })
}

/// Permanent of a row-major `n × n` matrix, by enumeration up to
/// [`ENUMERATION_LIMIT`] and Ryser's formula above.
pub fn permanent(a: &[f64], n: usize) -> f64 {
    debug_assert_eq!(a.len(), n * n);
    if n <= ENUMERATION_LIMIT {
        permanent_enumerate(a, n)
    } else {
        permanent_ryser(a, n)
    }
}

/// Sum over all permutations of the products `Π a[i][π(i)]` (Heap's algorithm).
pub fn permanent_enumerate(a: &[f64], n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut counters = vec![0usize; n];
    let product = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| a[i * n + j]).product::<f64>();
    let mut total = product(&perm);
    let mut i = 1;
    while i < n {
        if counters[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(counters[i], i);
            }
            total += product(&perm);
            counters[i] += 1;
            i = 1;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }
    total
}

/// Ryser's inclusion–exclusion formula with Gray-code subset order.
pub fn permanent_ryser(a: &[f64], n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut row_sums = vec![0.0; n];
    let mut total = 0.0;
    let mut gray = 0usize;
    for step in 1..(1usize << n) {
        let next = step ^ (step >> 1);
        let col = (gray ^ next).trailing_zeros() as usize;
        let sign = if next & (1 << col) != 0 { 1.0 } else { -1.0 };
        for (i, s) in row_sums.iter_mut().enumerate() {
            *s += sign * a[i * n + col];
        }
        gray = next;
        let prod: f64 = row_sums.iter().product();
        if (n - next.count_ones() as usize).is_multiple_of(2) {
            total += prod;
        } else {
            total -= prod;
        }
    }
    total
}

/// Log permanent of a matrix given by its entrywise logs.
///
/// Rows and columns are rescaled by their maxima first, which leaves the
/// permanent unchanged up to a known factor and keeps the entries near one.
pub fn ln_permanent(ln_a: &[f64], n: usize) -> f64 {
    let mut m = ln_a.to_vec();
    let mut offset = 0.0;
    for i in 0..n {
        let r = m[i * n..(i + 1) * n].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if r == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        m[i * n..(i + 1) * n].iter_mut().for_each(|x| *x -= r);
        offset += r;
    }
    for j in 0..n {
        let c = (0..n).map(|i| m[i * n + j]).fold(f64::NEG_INFINITY, f64::max);
        if c == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        (0..n).for_each(|i| m[i * n + j] -= c);
        offset += c;
    }
    m.iter_mut().for_each(|x| *x = x.exp());
    let p = permanent(&m, n);
    if p > 0.0 {
        p.ln() + offset
    } else {
        f64::NEG_INFINITY
    }
}

fn check_noassoc_shape(tau_a: &[Vec<f64>], tau_b: &[Vec<f64>]) -> Result<usize> {
    if tau_a.len() != tau_b.len() {
        return Err(Error::DimensionMismatch(format!("{} A-side and {} B-side observers", tau_a.len(), tau_b.len())));
    }
    for (o, (a, b)) in tau_a.iter().zip(tau_b).enumerate() {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch(format!(
                "observer {o}: {} A-side and {} B-side delays",
                a.len(),
                b.len()
            )));
        }
        if a.len() > PERMUTATION_CAP {
            return Err(Error::PermutationCapExceeded { observer: o, count: a.len(), cap: PERMUTATION_CAP });
        }
        if a.iter().chain(b).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParams("delays must be finite".into()));
        }
    }
    Ok(tau_a.iter().map(Vec::len).sum())
}

/// Log of the per-observer permutation sum `Σ_π Π_k I(τ_B[π(k)] − τ_A[k] − ε, d)`.
///
/// `first_index` is the flat index of the observer's first A-side MPC, used to
/// pick deviations from the model.
pub fn ln_permutation_sum(
    tau_a: &[f64],
    tau_b: &[f64],
    model: &ErrorModel,
    first_index: usize,
    d_hyp: f64,
    eps_hyp: f64,
) -> f64 {
    let n = tau_a.len();
    let mut ln_m = Vec::with_capacity(n * n);
    for (k, ta) in tau_a.iter().enumerate() {
        for tb in tau_b {
            ln_m.push(ln_soft_indicator(tb - ta - eps_hyp, d_hyp, model, first_index + k, C));
        }
    }
    ln_permanent(&ln_m, n)
}

/// Unknown-association log-likelihood `−K ln d + Σ_o ln Σ_π Π_k I(·)`; `−∞` for `d ≤ 0`.
pub fn log_likelihood_noassoc(
    tau_a: &[Vec<f64>],
    tau_b: &[Vec<f64>],
    model: &ErrorModel,
    d_hyp: f64,
    eps_hyp: f64,
) -> f64 {
    if !(d_hyp > 0.0) {
        return f64::NEG_INFINITY;
    }
    let k: usize = tau_a.iter().map(Vec::len).sum();
    let mut acc = -(k as f64) * d_hyp.ln();
    let mut first = 0;
    for (a, b) in tau_a.iter().zip(tau_b) {
        acc += ln_permutation_sum(a, b, model, first, d_hyp, eps_hyp);
        if acc == f64::NEG_INFINITY {
            break;
        }
        first += a.len();
    }
    acc
}

/// A noiseless candidate with its feasibility summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub d: f64,
    pub eps: f64,
    /// Observers with at least one feasible permutation.
    pub feasible_observers: usize,
    /// `−K ln d` plus the log permutation counts of the feasible observers.
    pub log_likelihood: f64,
}

/// Feasibility with a few ulps of slack, so candidates placed exactly on a
/// wedge border are not lost to rounding.
fn within(x: f64, half_width: f64) -> bool {
    x.abs() <= half_width + 4.0 * f64::EPSILON * (half_width + x.abs())
}

fn evaluate_candidate(tau_a: &[Vec<f64>], tau_b: &[Vec<f64>], k: usize, d: f64, eps: f64) -> Candidate {
    let mut feasible = 0;
    let mut ll = -(k as f64) * d.ln();
    for (a, b) in tau_a.iter().zip(tau_b) {
        let n = a.len();
        let m: Vec<f64> = a
            .iter()
            .flat_map(|ta| b.iter().map(move |tb| if within(tb - ta - eps, d / C) { 1.0 } else { 0.0 }))
            .collect();
        let count = permanent(&m, n).round();
        if count > 0.0 {
            feasible += 1;
            ll += count.ln();
        }
    }
    Candidate { d, eps, feasible_observers: feasible, log_likelihood: ll }
}

/// Wedge-apex and border-intersection candidates of the noiseless
/// no-association likelihood, best first.
///
/// Ranking: more feasible observers first, then smaller `d`, then larger
/// log-likelihood, then smaller `eps`.
pub fn noiseless_candidates(tau_a: &[Vec<f64>], tau_b: &[Vec<f64>], d_floor: f64) -> Result<Vec<Candidate>> {
    let k = check_noassoc_shape(tau_a, tau_b)?;
    let deltas: Vec<f64> = tau_a
        .iter()
        .zip(tau_b)
        .flat_map(|(a, b)| a.iter().flat_map(move |ta| b.iter().map(move |tb| tb - ta)))
        .collect();
    let mut points = Vec::with_capacity(deltas.len() * (deltas.len() + 1) / 2);
    for (i, &di) in deltas.iter().enumerate() {
        points.push((d_floor, di));
        for &dj in &deltas[i + 1..] {
            let d = 0.5 * C * (di - dj).abs();
            if d >= d_floor {
                points.push((d, 0.5 * (di + dj)));
            }
        }
    }
    let mut out: Vec<Candidate> = points.into_iter().map(|(d, e)| evaluate_candidate(tau_a, tau_b, k, d, e)).collect();
    out.sort_by(|x, y| {
        y.feasible_observers
            .cmp(&x.feasible_observers)
            .then(x.d.total_cmp(&y.d))
            .then(y.log_likelihood.total_cmp(&x.log_likelihood))
            .then(x.eps.total_cmp(&y.eps))
    });
    out.dedup_by(|a, b| a.d == b.d && a.eps == b.eps);
    Ok(out)
}

/// Maximum-likelihood distance and clock offset when the MPC association is unknown.
///
/// `tau_a[o]` and `tau_b[o]` hold the delays seen at observer `o`, in any
/// order. The exact model evaluates the finite candidate set of
/// [`noiseless_candidates`]; the Gaussian model runs the grid search seeded
/// with the best of those candidates. No bias correction is applied.
pub fn mle_async_noassoc(
    tau_a: &[Vec<f64>],
    tau_b: &[Vec<f64>],
    model: &ErrorModel,
    cfg: &OptimizerConfig,
) -> Result<DistanceEstimate> {
    let k = check_noassoc_shape(tau_a, tau_b)?;
    if k < 2 {
        return Err(Error::InsufficientMpcs { needed: 2, got: k });
    }
    model.validate(k)?;
    cfg.validate()?;

    // Center on the midrange of all cross differences.
    let (lo, hi) = tau_a
        .iter()
        .zip(tau_b)
        .flat_map(|(a, b)| a.iter().flat_map(move |ta| b.iter().map(move |tb| tb - ta)))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let tau_b: Vec<Vec<f64>> = tau_b.iter().map(|g| g.iter().map(|t| t - center).collect()).collect();

    let candidates = noiseless_candidates(tau_a, &tau_b, cfg.d_floor)?;
    if model.is_exact() {
        let best = candidates[0];
        return Ok(DistanceEstimate {
            d_hat: best.d,
            eps_hat: center + best.eps,
            method: DistanceMethod::MleAsyncNoAssoc,
            diagnostics: Some(Diagnostics {
                log_likelihood: best.log_likelihood,
                iterations: 0,
                evaluations: candidates.len(),
            }),
        });
    }

    let s = model.max_sigma();
    let grid = centered_grid(cfg, center, C * (2.0 * half + 4.0 * s), half + 3.0 * s);
    let seeds: Vec<(f64, f64)> = candidates.iter().take(CANDIDATE_SEEDS).map(|c| (c.d, c.eps)).collect();
    let best = maximize_2d(|d, e| log_likelihood_noassoc(tau_a, &tau_b, model, d, e), &grid, &seeds)?;
    Ok(DistanceEstimate {
        d_hat: best.d,
        eps_hat: center + best.eps,
        method: DistanceMethod::MleAsyncNoAssoc,
        diagnostics: Some(Diagnostics {
            log_likelihood: best.value,
            iterations: best.iterations,
            evaluations: best.evaluations,
        }),
    })
}

/// Splits observations into per-observer A-side and B-side delay lists.
pub fn delays_by_side(obs: &[Vec<MpcObservation>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    obs.iter().map(|g| (g.iter().map(|m| m.tau_a).collect(), g.iter().map(|m| m.tau_b).collect())).unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::seed::stream_rng;

    const NS: f64 = 1e-9;

    /// Permanent by recursion over the first row.
    fn permanent_oracle(a: &[f64], n: usize) -> f64 {
        fn rec(a: &[f64], n: usize, row: usize, used: &mut Vec<bool>) -> f64 {
            if row == n {
                return 1.0;
            }
            let mut s = 0.0;
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    s += a[row * n + j] * rec(a, n, row + 1, used);
                    used[j] = false;
                }
            }
            s
        }
        rec(a, n, 0, &mut vec![false; n])
    }

    #[test]
    fn closed_form_examples() {
        let set = DelayDiffSet::single(&[-NS, 0.0, 3.0 * NS]);
        let mv = mvue_async(&set).unwrap();
        assert!((mv.d_hat - C * 4.0 * NS).abs() < 1e-12);
        assert!((mv.eps_hat - 1.0 * NS).abs() < 1e-24);
        let ml = mle_async_noiseless(&DelayDiffSet::single(&[0.0, 2.0 * NS])).unwrap();
        assert!((ml.d_hat - C * NS).abs() < 1e-12);

        let flat = DelayDiffSet::single(&[7.0 * NS; 5]);
        let mv = mvue_async(&flat).unwrap();
        assert_eq!(mv.d_hat, 0.0);
        assert_eq!(mv.eps_hat, 7.0 * NS);
    }

    #[test]
    fn sync_examples() {
        assert_eq!(mle_sync(&DelayDiffSet::single(&[0.0])).unwrap().d_hat, 0.0);
        let set = DelayDiffSet::single(&[-3.0 * NS, 1.0 * NS]);
        assert!((mle_sync(&set).unwrap().d_hat - C * 3.0 * NS).abs() < 1e-12);
        assert!((mvue_sync(&set).unwrap().d_hat - 1.5 * C * 3.0 * NS).abs() < 1e-12);
    }

    #[test]
    fn too_few_differences() {
        let one = DelayDiffSet::single(&[1.0]);
        assert_eq!(mvue_async(&one).unwrap_err(), Error::InsufficientMpcs { needed: 2, got: 1 });
        assert!(mle_sync(&DelayDiffSet::default()).is_err());
    }

    #[test]
    fn permanent_methods_agree() {
        let mut rng = stream_rng(11, 0);
        for n in 0..=PERMUTATION_CAP {
            let a: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
            let oracle = permanent_oracle(&a, n);
            let e = permanent_enumerate(&a, n);
            let r = permanent_ryser(&a, n);
            assert!((e - oracle).abs() <= 1e-12 * oracle.abs().max(1.0), "n={n}");
            assert!((r - oracle).abs() <= 1e-11 * oracle.abs().max(1.0), "n={n}");
        }
    }

    #[test]
    fn ln_permanent_survives_tiny_entries() {
        let ln_a = [-1000.0, -1001.0, -1002.0, -1000.5];
        let direct = (-2000.5f64).exp();
        assert_eq!(direct, 0.0);
        let expected = -2000.5 + (-2.5f64).exp().ln_1p();
        assert!((ln_permanent(&ln_a, 2) - expected).abs() < 1e-12);
        assert_eq!(ln_permanent(&[0.0, f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY], 2), f64::NEG_INFINITY);
    }

    #[test]
    fn gaussian_tends_to_noiseless() {
        let set = DelayDiffSet::new(vec![vec![-2.0 * NS, 1.0 * NS, 0.3 * NS], vec![2.5 * NS, -0.7 * NS]]);
        let exact = mle_async_noiseless(&set).unwrap();
        let model = ErrorModel::iid(1e-14, set.len());
        let est = mle_async_gaussian(&set, &model, &OptimizerConfig::default()).unwrap();
        assert!((est.d_hat - exact.d_hat).abs() < 1e-3, "{est:?} vs {exact:?}");
        assert!((est.eps_hat - exact.eps_hat).abs() < 1e-3 / C);
    }

    #[test]
    fn gaussian_beats_its_start() {
        let set = DelayDiffSet::single(&[-NS, 0.4 * NS, 2.0 * NS, 0.9 * NS]);
        let model = ErrorModel::iid(0.5 * NS, 4);
        let est = mle_async_gaussian(&set, &model, &OptimizerConfig::default()).unwrap();
        let v = est.diagnostics.unwrap().log_likelihood;
        for &(d, e) in &[(0.5, 0.5 * NS), (0.3, 0.45 * NS), (1.0, 0.0)] {
            assert!(v >= log_likelihood_known(&set, &model, d, e));
        }
    }

    #[test]
    fn single_mpc_per_observer_matches_known_association() {
        let tau_a = vec![vec![20.0 * NS], vec![35.0 * NS], vec![50.0 * NS]];
        let tau_b = vec![vec![26.1 * NS], vec![39.2 * NS], vec![57.5 * NS]];
        let diffs = DelayDiffSet::new(vec![vec![6.1 * NS], vec![4.2 * NS], vec![7.5 * NS]]);
        let model = ErrorModel::iid(0.2 * NS, 3);
        for (d, e) in [(0.7, 5.0 * NS), (1.3, 6.0 * NS), (2.0, 4.1 * NS)] {
            let a = log_likelihood_noassoc(&tau_a, &tau_b, &model, d, e);
            let b = log_likelihood_known(&diffs, &model, d, e);
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
        let cfg = OptimizerConfig::default();
        let na = mle_async_noassoc(&tau_a, &tau_b, &model, &cfg).unwrap();
        let ka = mle_async_gaussian(&diffs, &model, &cfg).unwrap();
        assert!((na.d_hat - ka.d_hat).abs() < 1e-3, "{na:?} {ka:?}");
    }

    #[test]
    fn noiseless_noassoc_example() {
        // Two observers, true association identity, d = 1.5 m, eps = 3 ns.
        let a = 1.5 / C;
        let tau_a = vec![vec![10.0 * NS, 30.0 * NS], vec![15.0 * NS, 22.0 * NS]];
        let tilde = [[0.9 * a, -0.4 * a], [-a, 0.2 * a]];
        let tau_b: Vec<Vec<f64>> =
            tau_a.iter().zip(tilde).map(|(g, t)| g.iter().zip(t).map(|(ta, x)| ta + x + 3.0 * NS).collect()).collect();
        let est = mle_async_noassoc(&tau_a, &tau_b, &ErrorModel::Exact, &OptimizerConfig::default()).unwrap();
        let known = mle_async_noiseless(&DelayDiffSet::new(
            tilde.iter().map(|t| t.iter().map(|x| x + 3.0 * NS).collect()).collect(),
        ))
        .unwrap();
        assert!(est.d_hat <= known.d_hat + 1e-12);
        assert!(est.d_hat > 0.0);
        let c0 = noiseless_candidates(&tau_a, &tau_b, 1e-6).unwrap()[0];
        assert_eq!(c0.feasible_observers, 2);
    }

    #[test]
    fn cap_and_shape_errors() {
        let nine = vec![vec![0.0; 9]];
        assert!(matches!(
            mle_async_noassoc(&nine, &nine, &ErrorModel::Exact, &OptimizerConfig::default()),
            Err(Error::PermutationCapExceeded { observer: 0, count: 9, cap: 8 })
        ));
        assert!(matches!(
            mle_async_noassoc(&[vec![0.0, 1.0]], &[vec![0.0]], &ErrorModel::Exact, &OptimizerConfig::default()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn envelope_bound() {
        let set = DelayDiffSet::single(&[0.3 * NS, -0.2 * NS, 0.9 * NS]);
        let model = ErrorModel::iid(0.3 * NS, 3);
        for d in [0.01, 0.2, 1.0, 5.0] {
            for e in [-NS, 0.0, 0.4 * NS] {
                assert!(log_likelihood_known(&set, &model, d, e) <= -3.0 * f64::ln(d) + 1e-12);
            }
        }
    }
}
