//! MPC association between the A and B sides of each observer.
//!
//! The cost of pairing A-side MPC `k` with B-side MPC `l` is
//! `‖s_B − s_A‖² + λ²((τ_B − μ_B) − (τ_A − μ_A))²`, with `μ` the mean measured
//! delay of each side at that observer, and `+∞` beyond an angle gate.
//! The minimum-cost assignment is found with the Hungarian method on a
//! square matrix padded with a finite no-match cost.

use crate::chansim::{MpcObservation, Observations};
use crate::error::{Error, Result};

/// Delay spread used for the default regularization weight, seconds.
pub const DEFAULT_SIGMA_TAU: f64 = 26.3e-9;

/// Problems up to this size get the lexicographic tie-break pass.
const TIE_BREAK_LIMIT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssocConfig {
    /// Weight of the delay term, 1/seconds.
    pub lambda: f64,
    /// Largest admissible angle between the two directions of a pair, radians.
    pub angle_gate: f64,
    /// Delay spread the default `lambda` was derived from, seconds.
    pub sigma_tau: f64,
    /// Cost of leaving an MPC unmatched; also stands in for gated pairs.
    pub no_match_cost: f64,
}

impl Default for AssocConfig {
    fn default() -> Self {
        AssocConfig::with_sigma_tau(DEFAULT_SIGMA_TAU)
    }
}

impl AssocConfig {
    /// `lambda = 1/sigma_tau` with the 30° gate.
    pub fn with_sigma_tau(sigma_tau: f64) -> Self {
        AssocConfig { lambda: 1.0 / sigma_tau, angle_gate: 30f64.to_radians(), sigma_tau, no_match_cost: 1e9 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParams(format!("lambda must be finite and nonnegative, got {}", self.lambda)));
        }
        if !(self.angle_gate > 0.0 && self.angle_gate <= std::f64::consts::PI) {
            return Err(Error::InvalidParams(format!("angle gate must lie in (0, π], got {}", self.angle_gate)));
        }
        if !(self.no_match_cost > 0.0 && self.no_match_cost.is_finite()) {
            return Err(Error::InvalidParams("no-match cost must be finite and positive".into()));
        }
        Ok(())
    }
}

/// Cost of pairing the A side of `a` with the B side of `b`.
pub fn pair_cost(a: &MpcObservation, b: &MpcObservation, cfg: &AssocConfig, mu_a: f64, mu_b: f64) -> f64 {
    let cos = a.dir_a.dot(&b.dir_b).clamp(-1.0, 1.0);
    if cos.acos() > cfg.angle_gate {
        return f64::INFINITY;
    }
    let chord = (b.dir_b.into_inner() - a.dir_a.into_inner()).norm_squared();
    let lag = (b.tau_b - mu_b) - (a.tau_a - mu_a);
    chord + cfg.lambda * cfg.lambda * lag * lag
}

/// Association for all observers.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `permutation[o][k]` is the B-side index paired with A-side MPC `k`, if any.
    pub permutation: Vec<Vec<Option<usize>>>,
    /// Sum of pair costs over matched pairs.
    pub total_cost: f64,
}

impl Assignment {
    pub fn is_matched(&self, observer: usize, k: usize) -> bool {
        self.permutation[observer][k].is_some()
    }

    pub fn matched_count(&self) -> usize {
        self.permutation.iter().flatten().filter(|p| p.is_some()).count()
    }

    /// True when every A-side MPC is paired with its true partner.
    pub fn is_correct(&self, truth: &[Vec<usize>]) -> bool {
        self.permutation.len() == truth.len()
            && self
                .permutation
                .iter()
                .zip(truth)
                .all(|(p, t)| p.len() == t.len() && p.iter().zip(t).all(|(a, b)| *a == Some(*b)))
    }
}

/// Minimum-cost perfect matching of a square matrix (row-major, `n × n`).
///
/// Returns the column of each row. Shortest augmenting paths with dual potentials.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    debug_assert_eq!(cost.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut rows = vec![0; n];
    for j in 1..=n {
        rows[owner[j] - 1] = j - 1;
    }
    rows
}

/// One observer's problem: `pairs[k * nb + l]` is the pair cost, `+∞` when gated.
struct Problem {
    na: usize,
    nb: usize,
    pairs: Vec<f64>,
    no_match: f64,
}

/// Quality of a matching: unmatched count first, then real cost.
#[derive(Debug, Clone, Copy)]
struct Score {
    unmatched: usize,
    cost: f64,
}

impl Score {
    fn same_as(&self, other: &Score) -> bool {
        self.unmatched == other.unmatched
            && (self.cost - other.cost).abs() <= 1e-9 * (1.0 + self.cost.abs().max(other.cost.abs()))
    }
}

impl Problem {
    fn size(&self) -> usize {
        self.na.max(self.nb)
    }

    /// Padded square cost; dummy rows and columns and gated pairs cost `no_match`.
    fn padded(&self, k: usize, l: usize) -> f64 {
        if k < self.na && l < self.nb {
            let c = self.pairs[k * self.nb + l];
            if c.is_finite() {
                return c;
            }
        }
        self.no_match
    }

    fn score(&self, cols: &[usize]) -> Score {
        let mut s = Score { unmatched: 0, cost: 0.0 };
        for (k, &l) in cols.iter().enumerate().take(self.na) {
            let c = if l < self.nb { self.pairs[k * self.nb + l] } else { f64::INFINITY };
            if c.is_finite() {
                s.cost += c;
            } else {
                s.unmatched += 1;
            }
        }
        s
    }

    /// Best completion of a partial matching over the free rows and columns.
    fn complete(&self, fixed: &[Option<usize>]) -> Vec<usize> {
        let n = self.size();
        let free_rows: Vec<usize> = (0..n).filter(|&k| fixed[k].is_none()).collect();
        let taken: Vec<bool> = {
            let mut t = vec![false; n];
            fixed.iter().flatten().for_each(|&l| t[l] = true);
            t
        };
        let free_cols: Vec<usize> = (0..n).filter(|&l| !taken[l]).collect();
        let m = free_rows.len();
        let sub: Vec<f64> = free_rows
            .iter()
            .flat_map(|&k| free_cols.iter().map(move |&l| (k, l)))
            .map(|(k, l)| self.padded(k, l))
            .collect();
        let sol = hungarian(&sub, m);
        let mut cols: Vec<usize> = fixed.iter().map(|f| f.unwrap_or(usize::MAX)).collect();
        for (i, &k) in free_rows.iter().enumerate() {
            cols[k] = free_cols[sol[i]];
        }
        cols
    }

    fn solve(&self) -> Vec<Option<usize>> {
        let n = self.size();
        let mut cols = self.complete(&vec![None; n]);
        let best = self.score(&cols);
        if n <= TIE_BREAK_LIMIT {
            // Fix rows in order to the smallest column that still attains the optimum.
            let mut fixed = vec![None; n];
            for k in 0..self.na {
                for l in 0..n {
                    if fixed.contains(&Some(l)) {
                        continue;
                    }
                    fixed[k] = Some(l);
                    let trial = self.complete(&fixed);
                    if self.score(&trial).same_as(&best) {
                        cols = trial;
                        break;
                    }
                    fixed[k] = None;
                }
            }
        }
        (0..self.na)
            .map(|k| {
                let l = cols[k];
                (l < self.nb && self.pairs[k * self.nb + l].is_finite()).then_some(l)
            })
            .collect()
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Minimum-cost association per observer.
///
/// A-side parameters come from `obs_a`, B-side parameters from `obs_b`; the
/// counts per observer may differ. Pairs beyond the angle gate are never
/// matched, and among equal-cost optima the lexicographically smallest
/// `(k, l)` assignment is returned.
pub fn associate(
    obs_a: &[Vec<MpcObservation>],
    obs_b: &[Vec<MpcObservation>],
    cfg: &AssocConfig,
) -> Result<Assignment> {
    cfg.validate()?;
    if obs_a.len() != obs_b.len() {
        return Err(Error::DimensionMismatch(format!("{} A-side and {} B-side observers", obs_a.len(), obs_b.len())));
    }
    let mut permutation = Vec::with_capacity(obs_a.len());
    let mut total = 0.0;
    for (ga, gb) in obs_a.iter().zip(obs_b) {
        let mu_a = mean(ga.iter().map(|m| m.tau_a));
        let mu_b = mean(gb.iter().map(|m| m.tau_b));
        let pairs: Vec<f64> = ga
            .iter()
            .flat_map(|a| gb.iter().map(move |b| (a, b)))
            .map(|(a, b)| pair_cost(a, b, cfg, mu_a, mu_b))
            .collect();
        let problem = Problem { na: ga.len(), nb: gb.len(), pairs, no_match: cfg.no_match_cost };
        let perm = problem.solve();
        total += perm.iter().enumerate().filter_map(|(k, l)| l.map(|l| problem.pairs[k * problem.nb + l])).sum::<f64>();
        permutation.push(perm);
    }
    Ok(Assignment { permutation, total_cost: total })
}

/// Pairs the `i`-th smallest A-side delay with the `i`-th smallest B-side delay.
///
/// `total_cost` is evaluated under `cfg` and is infinite if a sorted pair is gated.
pub fn associate_by_sorting(
    obs_a: &[Vec<MpcObservation>],
    obs_b: &[Vec<MpcObservation>],
    cfg: &AssocConfig,
) -> Result<Assignment> {
    if obs_a.len() != obs_b.len() {
        return Err(Error::DimensionMismatch("observer counts differ".into()));
    }
    let mut permutation = Vec::with_capacity(obs_a.len());
    let mut total = 0.0;
    for (o, (ga, gb)) in obs_a.iter().zip(obs_b).enumerate() {
        if ga.len() != gb.len() {
            return Err(Error::DimensionMismatch(format!(
                "observer {o}: {} A-side and {} B-side MPCs",
                ga.len(),
                gb.len()
            )));
        }
        let mut ra: Vec<usize> = (0..ga.len()).collect();
        ra.sort_by(|&i, &j| ga[i].tau_a.total_cmp(&ga[j].tau_a).then(i.cmp(&j)));
        let mut rb: Vec<usize> = (0..gb.len()).collect();
        rb.sort_by(|&i, &j| gb[i].tau_b.total_cmp(&gb[j].tau_b).then(i.cmp(&j)));
        let mut perm = vec![None; ga.len()];
        for (&k, &l) in ra.iter().zip(&rb) {
            perm[k] = Some(l);
        }
        let mu_a = mean(ga.iter().map(|m| m.tau_a));
        let mu_b = mean(gb.iter().map(|m| m.tau_b));
        total += perm
            .iter()
            .enumerate()
            .map(|(k, l)| pair_cost(&ga[k], &gb[l.expect("sorted pairing is complete")], cfg, mu_a, mu_b))
            .sum::<f64>();
        permutation.push(perm);
    }
    Ok(Assignment { permutation, total_cost: total })
}

/// Re-pairs observations whose B side is in unknown order.
///
/// Record `k` of observer `o` keeps its A side and takes the B side of
/// record `assignment.permutation[o][k]`; unmatched MPCs are dropped.
pub fn apply_assignment(obs: &[Vec<MpcObservation>], assignment: &Assignment) -> Result<Observations> {
    if obs.len() != assignment.permutation.len() {
        return Err(Error::DimensionMismatch("assignment does not fit the observations".into()));
    }
    let mut out = Vec::with_capacity(obs.len());
    for (group, perm) in obs.iter().zip(&assignment.permutation) {
        if group.len() != perm.len() {
            return Err(Error::DimensionMismatch("assignment does not fit the observations".into()));
        }
        out.push(
            perm.iter()
                .enumerate()
                .filter_map(|(k, l)| {
                    l.map(|l| MpcObservation { tau_b: group[l].tau_b, dir_b: group[l].dir_b, ..group[k] })
                })
                .collect(),
        );
    }
    Ok(out)
}
