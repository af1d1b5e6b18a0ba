//! Stochastic scenario generation.
//!
//! Excess delays come from a Saleh–Valenzuela arrival process: clusters arrive
//! as a Poisson process starting with a cluster at zero excess delay, and the
//! rays of each cluster arrive as a Poisson process after the cluster start.
//! Each ray carries the mean power `exp(−T·cluster_decay − t·ray_decay)`, with
//! `T` the cluster arrival and `t` the ray offset. Rays are generated inside a
//! finite excess-delay window; the MPCs of one channel are drawn from its rays
//! by power-weighted sampling without replacement.
//!
//! Directions at node A are uniform on the unit sphere, the B side is completed
//! from the geometry, and measured values receive Gaussian delay noise, clock
//! offsets and cone-shaped direction errors.

use std::io::{Read, Write};

use nalgebra::Unit;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::geom::{complete_mpc, Direction, MpcTrue, Scenario, Vec3, SPEED_OF_LIGHT};
use crate::seed::{stream_id, stream_rng};

const NS: f64 = 1e-9;

/// Retries when a sampled MPC lands its virtual source on node B.
pub const DEGENERATE_RETRIES: usize = 100;

/// Saleh–Valenzuela arrival and decay parameters (all in seconds or 1/seconds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvParams {
    /// Mean inter-cluster arrival time.
    pub cluster_mean: f64,
    /// Mean ray inter-arrival time within a cluster.
    pub ray_mean: f64,
    /// Cluster power decay rate.
    pub cluster_decay: f64,
    /// Ray power decay rate.
    pub ray_decay: f64,
    /// Delay floor added to every excess delay.
    pub tau_min: f64,
    /// Rays are generated with excess delay below this bound.
    pub window: f64,
}

impl Default for SvParams {
    fn default() -> Self {
        SvParams {
            cluster_mean: 20.0 * NS,
            ray_mean: 10.0 * NS,
            cluster_decay: 1.0 / (60.0 * NS),
            ray_decay: 1.0 / (20.0 * NS),
            tau_min: 16.7 * NS,
            window: 100.0 * NS,
        }
    }
}

impl SvParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("cluster_mean", self.cluster_mean),
            ("ray_mean", self.ray_mean),
            ("cluster_decay", self.cluster_decay),
            ("ray_decay", self.ray_decay),
            ("tau_min", self.tau_min),
            ("window", self.window),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Rays of one channel realization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SvRealization {
    /// Excess delays, seconds.
    pub delays: Vec<f64>,
    /// Mean powers, linear scale.
    pub powers: Vec<f64>,
}

impl SvRealization {
    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    /// Power-weighted mean excess delay and RMS delay spread of this realization.
    pub fn delay_moments(&self) -> (f64, f64) {
        let total: f64 = self.powers.iter().sum();
        let mean = self.delays.iter().zip(&self.powers).map(|(t, p)| t * p).sum::<f64>() / total;
        let var = self.delays.iter().zip(&self.powers).map(|(t, p)| p * (t - mean).powi(2)).sum::<f64>() / total;
        (mean, var.sqrt())
    }
}

/// Draws one channel realization.
pub fn realize_sv<R: Rng + ?Sized>(params: &SvParams, rng: &mut R) -> Result<SvRealization> {
    params.validate()?;
    let cluster_gap = Exp::new(1.0 / params.cluster_mean).map_err(invalid)?;
    let ray_gap = Exp::new(1.0 / params.ray_mean).map_err(invalid)?;
    let mut out = SvRealization::default();
    let mut cluster = 0.0;
    while cluster < params.window {
        let mut offset = ray_gap.sample(rng);
        while cluster + offset < params.window {
            out.delays.push(cluster + offset);
            out.powers.push((-cluster * params.cluster_decay - offset * params.ray_decay).exp());
            offset += ray_gap.sample(rng);
        }
        cluster += cluster_gap.sample(rng);
    }
    Ok(out)
}

fn invalid<E: std::fmt::Display>(e: E) -> Error {
    Error::InvalidParams(e.to_string())
}

/// Picks `k` distinct rays with probability proportional to power.
///
/// Uses exponential keys `ln(u)/p`: the `k` largest keys form a weighted
/// sample without replacement.
pub fn select_power_weighted<R: Rng + ?Sized>(real: &SvRealization, k: usize, rng: &mut R) -> Option<Vec<f64>> {
    if real.len() < k {
        return None;
    }
    let mut keyed: Vec<(f64, f64)> = real
        .delays
        .iter()
        .zip(&real.powers)
        .map(|(&t, &p)| {
            let u: f64 = rng.random();
            (u.ln() / p, t)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
    Some(keyed.into_iter().take(k).map(|(_, t)| t).collect())
}

const MAX_REALIZATIONS: usize = 1000;

/// Excess delays of `k` MPCs of one channel (no `tau_min` added).
pub fn sample_channel_delays<R: Rng + ?Sized>(params: &SvParams, k: usize, rng: &mut R) -> Result<Vec<f64>> {
    for _ in 0..MAX_REALIZATIONS {
        let real = realize_sv(params, rng)?;
        if let Some(picked) = select_power_weighted(&real, k, rng) {
            return Ok(picked);
        }
    }
    Err(Error::InvalidParams(format!("window of {:.1} ns rarely holds {k} rays", params.window / NS)))
}

/// `count` excess delays, each the single power-weighted pick of an independent realization.
///
/// The samples follow the mean power-delay profile, so their mean and standard
/// deviation estimate the mean excess delay and the RMS delay spread.
pub fn sample_excess_delays(params: &SvParams, count: usize, seed: u64) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::InvalidParams("count must be at least 1".into()));
    }
    params.validate()?;
    let mut rng = stream_rng(seed, stream_id(&[0x5eed_de1a]));
    (0..count).map(|_| sample_channel_delays(params, 1, &mut rng).map(|v| v[0])).collect()
}

/// Uniformly distributed unit vector.
pub fn uniform_direction<R: Rng + ?Sized>(rng: &mut R) -> Direction {
    loop {
        let v = Vec3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-9 {
            return Unit::new_unchecked(v / n);
        }
    }
}

/// Rotates `dir` by `alpha` toward the in-plane axis at azimuth `phi`.
pub fn rotate_on_cone(dir: &Direction, alpha: f64, phi: f64) -> Direction {
    let v = dir.into_inner();
    let helper = if v.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = v.cross(&helper).normalize();
    let w = v.cross(&u);
    let axis = phi.cos() * u + phi.sin() * w;
    Unit::new_normalize(alpha.cos() * v + alpha.sin() * axis)
}

/// Perturbs a direction by an angle `α ~ N(0, sigma_dir²)` at uniform azimuth.
pub fn perturb_direction<R: Rng + ?Sized>(dir: &Direction, sigma_dir: f64, rng: &mut R) -> Direction {
    if sigma_dir == 0.0 {
        return *dir;
    }
    let alpha = sigma_dir * {
        let z: f64 = StandardNormal.sample(rng);
        z
    };
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    rotate_on_cone(dir, alpha, phi)
}

/// Scenario with `pos_a` at the origin and `pos_b = (d, 0, 0)`.
pub fn sample_scenario(d: f64, params: &SvParams, k_per_observer: &[usize], seed: u64) -> Result<Scenario> {
    let mut rng = stream_rng(seed, stream_id(&[0x5ce7_a410]));
    sample_scenario_with_rng(d, params, k_per_observer, &mut rng)
}

pub fn sample_scenario_with_rng<R: Rng + ?Sized>(
    d: f64,
    params: &SvParams,
    k_per_observer: &[usize],
    rng: &mut R,
) -> Result<Scenario> {
    if !(d >= 0.0 && d.is_finite()) {
        return Err(Error::InvalidParams(format!("distance must be nonnegative, got {d}")));
    }
    if k_per_observer.is_empty() || k_per_observer.contains(&0) {
        return Err(Error::InvalidParams("need at least one observer and one MPC per observer".into()));
    }
    params.validate()?;
    let c = SPEED_OF_LIGHT;
    let pos_a = Vec3::zeros();
    let pos_b = Vec3::new(d, 0.0, 0.0);
    let mut mpcs = Vec::with_capacity(k_per_observer.len());
    for (o, &k) in k_per_observer.iter().enumerate() {
        let excess = sample_channel_delays(params, k, rng)?;
        let mut group = Vec::with_capacity(k);
        for (i, &ex) in excess.iter().enumerate() {
            let mut tau_a = params.tau_min + ex;
            let mut attempt = 0;
            let m = loop {
                match complete_mpc(&pos_a, &pos_b, tau_a, uniform_direction(rng), c) {
                    Ok(m) => break m,
                    Err(e) if attempt + 1 >= DEGENERATE_RETRIES => return Err(e),
                    Err(_) => {
                        attempt += 1;
                        tau_a = params.tau_min + sample_channel_delays(params, 1, rng)?[0];
                    }
                }
            };
            group.push(MpcTrue { observer: o, mpc: i, ..m });
        }
        mpcs.push(group);
    }
    Ok(Scenario { pos_a, pos_b, mpcs, c })
}

/// Measurement errors and clock offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseParams {
    /// Standard deviation of the delay-difference error; each side gets `sigma/√2`.
    pub sigma: f64,
    /// Standard deviation of the direction error angle, radians.
    pub sigma_dir: f64,
    /// Clock offset between A and B.
    pub eps: f64,
    /// Clock offset between A and each observer; B's offset is `eps_a + eps`.
    pub eps_a: Vec<f64>,
}

impl NoiseParams {
    pub fn noiseless(observers: usize) -> Self {
        NoiseParams { sigma: 0.0, sigma_dir: 0.0, eps: 0.0, eps_a: vec![0.0; observers] }
    }

    pub fn validate(&self, observers: usize) -> Result<()> {
        if !(self.sigma >= 0.0) || !(self.sigma_dir >= 0.0) {
            return Err(Error::InvalidParams("noise deviations must be nonnegative".into()));
        }
        if self.eps_a.len() != observers {
            return Err(Error::InvalidParams(format!(
                "{} per-observer clock offsets for {observers} observers",
                self.eps_a.len()
            )));
        }
        Ok(())
    }
}

/// Measured parameters of one MPC at one observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcObservation {
    pub tau_a: f64,
    pub tau_b: f64,
    pub dir_a: Direction,
    pub dir_b: Direction,
    pub observer: usize,
    pub mpc: usize,
}

impl MpcObservation {
    /// Measured delay difference `tau_b − tau_a`.
    pub fn delay_diff(&self) -> f64 {
        self.tau_b - self.tau_a
    }

    /// Exact observation of a true MPC.
    pub fn exact(m: &MpcTrue) -> Self {
        MpcObservation {
            tau_a: m.tau_a,
            tau_b: m.tau_b,
            dir_a: m.dir_a,
            dir_b: m.dir_b,
            observer: m.observer,
            mpc: m.mpc,
        }
    }
}

/// Observations grouped by observer.
pub type Observations = Vec<Vec<MpcObservation>>;

/// Noiseless observations of every MPC in the scenario.
pub fn observe_exact(s: &Scenario) -> Observations {
    s.mpcs.iter().map(|g| g.iter().map(MpcObservation::exact).collect()).collect()
}

/// Measured MPC parameters under the configured noise; association order is preserved.
pub fn observe(s: &Scenario, noise: &NoiseParams, seed: u64) -> Result<Observations> {
    let mut rng = stream_rng(seed, stream_id(&[0x0b5e_47e0]));
    observe_with_rng(s, noise, &mut rng)
}

pub fn observe_with_rng<R: Rng + ?Sized>(s: &Scenario, noise: &NoiseParams, rng: &mut R) -> Result<Observations> {
    noise.validate(s.observer_count())?;
    let side = Normal::new(0.0, noise.sigma / std::f64::consts::SQRT_2).map_err(invalid)?;
    Ok(s.mpcs
        .iter()
        .zip(&noise.eps_a)
        .map(|(group, &eps_a)| {
            let eps_b = eps_a + noise.eps;
            group
                .iter()
                .map(|m| MpcObservation {
                    tau_a: m.tau_a + side.sample(rng) + eps_a,
                    tau_b: m.tau_b + side.sample(rng) + eps_b,
                    dir_a: perturb_direction(&m.dir_a, noise.sigma_dir, rng),
                    dir_b: perturb_direction(&m.dir_b, noise.sigma_dir, rng),
                    observer: m.observer,
                    mpc: m.mpc,
                })
                .collect()
        })
        .collect())
}

/// Observations whose B side was reordered within each observer.
#[derive(Debug, Clone, PartialEq)]
pub struct Scrambled {
    pub obs: Observations,
    /// `truth[o][k]` is the position of A-side MPC `k`'s partner among the scrambled B records.
    pub truth: Vec<Vec<usize>>,
}

/// Permutes the B-side records (delay and direction) uniformly within each observer.
pub fn scramble_association(obs: &[Vec<MpcObservation>], seed: u64) -> Scrambled {
    let mut rng = stream_rng(seed, stream_id(&[0x5c7a_3b1e]));
    scramble_association_with_rng(obs, &mut rng)
}

pub fn scramble_association_with_rng<R: Rng + ?Sized>(obs: &[Vec<MpcObservation>], rng: &mut R) -> Scrambled {
    use rand::seq::SliceRandom;
    let mut out = Vec::with_capacity(obs.len());
    let mut truth = Vec::with_capacity(obs.len());
    for group in obs {
        let mut src: Vec<usize> = (0..group.len()).collect();
        src.shuffle(rng);
        let mut inverse = vec![0; group.len()];
        let scrambled = group
            .iter()
            .enumerate()
            .map(|(l, a)| {
                let b = &group[src[l]];
                inverse[src[l]] = l;
                MpcObservation { tau_b: b.tau_b, dir_b: b.dir_b, ..*a }
            })
            .collect();
        out.push(scrambled);
        truth.push(inverse);
    }
    Scrambled { obs: out, truth }
}

/// Column names of the scenario dump.
pub const DUMP_HEADER: [&str; 18] = [
    "observer",
    "mpc",
    "tau_a_true",
    "tau_b_true",
    "sax",
    "say",
    "saz",
    "sbx",
    "sby",
    "sbz",
    "tau_a_meas",
    "tau_b_meas",
    "max",
    "may",
    "maz",
    "mbx",
    "mby",
    "mbz",
];

/// Writes one CSV row per MPC with true and measured parameters (SI units).
pub fn write_scenario_csv<W: Write>(s: &Scenario, obs: &[Vec<MpcObservation>], out: W) -> Result<()> {
    if obs.len() != s.mpcs.len() || obs.iter().zip(&s.mpcs).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::DimensionMismatch("observations do not match scenario".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Config(e.to_string());
    w.write_record(DUMP_HEADER).map_err(io)?;
    for (m, o) in s.iter_mpcs().zip(obs.iter().flatten()) {
        let fields = [
            m.tau_a, m.tau_b, m.dir_a.x, m.dir_a.y, m.dir_a.z, m.dir_b.x, m.dir_b.y, m.dir_b.z, o.tau_a, o.tau_b,
            o.dir_a.x, o.dir_a.y, o.dir_a.z, o.dir_b.x, o.dir_b.y, o.dir_b.z,
        ];
        let mut rec = vec![m.observer.to_string(), m.mpc.to_string()];
        rec.extend(fields.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Config(e.to_string()))?;
    Ok(())
}

/// Reads a scenario dump back into true MPCs and observations, grouped by observer.
pub fn read_scenario_csv<R: Read>(input: R) -> Result<(Vec<Vec<MpcTrue>>, Observations)> {
    let mut r = csv::Reader::from_reader(input);
    let bad = |msg: String| Error::Config(msg);
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(DUMP_HEADER.iter().copied()) {
        return Err(bad("unexpected scenario dump header".into()));
    }
    let mut truth: Vec<Vec<MpcTrue>> = Vec::new();
    let mut obs: Observations = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let observer: usize = row[0].parse().map_err(|_| bad(format!("bad observer {:?}", &row[0])))?;
        let mpc: usize = row[1].parse().map_err(|_| bad(format!("bad mpc {:?}", &row[1])))?;
        let mut v = [0.0; 16];
        for (i, slot) in v.iter_mut().enumerate() {
            *slot = row[i + 2].parse().map_err(|_| bad(format!("bad number {:?}", &row[i + 2])))?;
        }
        let dir = |x: f64, y: f64, z: f64| Unit::new_normalize(Vec3::new(x, y, z));
        if truth.len() <= observer {
            truth.resize_with(observer + 1, Vec::new);
            obs.resize_with(observer + 1, Vec::new);
        }
        truth[observer].push(MpcTrue {
            tau_a: v[0],
            tau_b: v[1],
            dir_a: dir(v[2], v[3], v[4]),
            dir_b: dir(v[5], v[6], v[7]),
            observer,
            mpc,
        });
        obs[observer].push(MpcObservation {
            tau_a: v[8],
            tau_b: v[9],
            dir_a: dir(v[10], v[11], v[12]),
            dir_b: dir(v[13], v[14], v[15]),
            observer,
            mpc,
        });
    }
    Ok((truth, obs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;

    #[test]
    fn excess_delays_are_reproducible() {
        let p = SvParams::default();
        let a = sample_excess_delays(&p, 16, 42).unwrap();
        let b = sample_excess_delays(&p, 16, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_excess_delays(&p, 16, 43).unwrap());
        assert!(a.iter().all(|&t| (0.0..p.window).contains(&t)));
    }

    #[test]
    fn rejects_bad_params() {
        let p = SvParams { ray_mean: 0.0, ..SvParams::default() };
        assert!(matches!(sample_excess_delays(&p, 4, 1), Err(Error::InvalidParams(_))));
        assert!(sample_excess_delays(&SvParams::default(), 0, 1).is_err());
    }

    #[test]
    fn channel_delays_are_distinct() {
        let mut rng = stream_rng(3, 0);
        for _ in 0..50 {
            let mut v = sample_channel_delays(&SvParams::default(), 6, &mut rng).unwrap();
            v.sort_by(f64::total_cmp);
            assert!(v.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn zero_distance_scenario_has_identical_sides() {
        let s = sample_scenario(0.0, &SvParams::default(), &[4, 4], 9).unwrap();
        for m in s.iter_mpcs() {
            assert!((m.tau_a - m.tau_b).abs() < 1e-20);
            assert!((m.dir_a.into_inner() - m.dir_b.into_inner()).norm() < 1e-12);
        }
    }

    #[test]
    fn scenario_respects_delay_floor_and_identities() {
        let p = SvParams::default();
        for seed in 0..50 {
            let s = sample_scenario(3.0, &p, &[4, 4, 4], seed).unwrap();
            assert_eq!(s.mpc_count(), 12);
            assert!(s.iter_mpcs().all(|m| m.tau_a >= p.tau_min));
            assert!(s.max_identity_violation() < 1e-9);
        }
    }

    #[test]
    fn noiseless_observation_is_identity() {
        let s = sample_scenario(2.0, &SvParams::default(), &[3, 2], 5).unwrap();
        let obs = observe(&s, &NoiseParams::noiseless(2), 11).unwrap();
        assert_eq!(obs, observe_exact(&s));
    }

    #[test]
    fn clock_offset_enters_delay_difference() {
        let s = sample_scenario(2.0, &SvParams::default(), &[4], 5).unwrap();
        let noise = NoiseParams { sigma: 0.0, sigma_dir: 0.0, eps: 5e-9, eps_a: vec![0.0] };
        let obs = observe(&s, &noise, 1).unwrap();
        for (m, o) in s.iter_mpcs().zip(obs.iter().flatten()) {
            assert!((o.delay_diff() - m.delay_diff() - 5e-9).abs() < 1e-18);
        }
    }

    #[test]
    fn offset_count_must_match_observers() {
        let s = sample_scenario(1.0, &SvParams::default(), &[2, 2], 5).unwrap();
        let noise = NoiseParams { eps_a: vec![0.0], ..NoiseParams::noiseless(1) };
        assert!(observe(&s, &noise, 1).is_err());
    }

    #[test]
    fn cone_rotation_keeps_unit_norm_and_angle() {
        let mut rng = stream_rng(1, 1);
        for _ in 0..200 {
            let d = uniform_direction(&mut rng);
            let alpha = rng.random_range(0.0..1.0);
            let phi = rng.random_range(0.0..6.0);
            let r = rotate_on_cone(&d, alpha, phi);
            assert!((r.norm() - 1.0).abs() < 1e-12);
            assert!((d.dot(&r).clamp(-1.0, 1.0).acos() - alpha).abs() < 1e-9);
        }
    }

    #[test]
    fn single_mpc_scramble_is_identity() {
        let s = sample_scenario(1.0, &SvParams::default(), &[1, 1, 1], 2).unwrap();
        let obs = observe_exact(&s);
        for seed in 0..10 {
            let sc = scramble_association(&obs, seed);
            assert_eq!(sc.truth, vec![vec![0], vec![0], vec![0]]);
            assert_eq!(sc.obs, obs);
        }
    }

    #[test]
    fn scramble_truth_points_at_partner() {
        let s = sample_scenario(1.0, &SvParams::default(), &[5, 3], 2).unwrap();
        let obs = observe_exact(&s);
        let sc = scramble_association(&obs, 77);
        assert_eq!(sc, scramble_association(&obs, 77));
        for (o, group) in obs.iter().enumerate() {
            for (k, rec) in group.iter().enumerate() {
                let l = sc.truth[o][k];
                assert_eq!(sc.obs[o][l].tau_b, rec.tau_b);
                assert_eq!(sc.obs[o][k].tau_a, rec.tau_a);
            }
        }
    }

    #[test]
    fn csv_dump_round_trips() {
        let s = sample_scenario(2.0, &SvParams::default(), &[2, 3], 8).unwrap();
        let noise = NoiseParams { sigma: 0.2e-9, sigma_dir: 0.01, eps: 5e-9, eps_a: vec![1e-9, 2e-9] };
        let obs = observe(&s, &noise, 4).unwrap();
        let mut buf = Vec::new();
        write_scenario_csv(&s, &obs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("observer,mpc,tau_a_true,tau_b_true,sax,say,saz,sbx,sby,sbz,tau_a_meas,tau_b_meas,max,may,maz,mbx,mby,mbz\n"));
        assert_eq!(text.lines().count(), 6);
        let (truth, back) = read_scenario_csv(buf.as_slice()).unwrap();
        assert_eq!(truth.len(), 2);
        for (a, b) in back.iter().flatten().zip(obs.iter().flatten()) {
            assert_eq!(a.tau_a, b.tau_a);
            assert_eq!(a.tau_b, b.tau_b);
            assert!((a.dir_b.into_inner() - b.dir_b.into_inner()).norm() < 1e-15);
        }
    }
}
