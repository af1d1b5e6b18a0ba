//! Monte-Carlo evaluation harness: RMSE sweeps, likelihood surfaces and
//! delay-statistics calibration.
//!
//! Every trial draws from its own random stream keyed by the user seed, the
//! sweep point and the trial index, so output does not depend on the thread
//! count. Per-trial estimator errors are counted as failures and excluded
//! from the RMSE.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::assoc::{apply_assignment, associate, associate_by_sorting, AssocConfig};
use crate::chansim::{
    observe, observe_with_rng, sample_excess_delays, sample_scenario_with_rng, scramble_association_with_rng,
    NoiseParams, Observations, SvParams,
};
use crate::distest::{
    delays_by_side, log_likelihood_known, log_likelihood_noassoc, mle_async_noassoc, mvue_async, DelayDiffSet,
};
use crate::error::{Error, Result};
use crate::geom::{mpc_from_virtual_source, Scenario, Vec3, SPEED_OF_LIGHT};
use crate::likelihood::{ErrorModel, GridAxis, OptimizerConfig};
use crate::posest::{lse_by_delta, lse_by_delta_pwa, lse_by_tau};
use crate::seed::{stream_id, stream_rng};

const NS: f64 = 1e-9;

/// Estimation pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorTag {
    /// Bias-corrected distance from delay differences, true association.
    Mv,
    /// Distance MLE without association.
    Na,
    /// Distance after associating by sorted delays.
    So,
    /// Position from delay differences, true association.
    Dd,
    /// Position from delay differences under the plane-wave assumption.
    Pwa,
    /// Position from delay differences after cost-based association.
    Ddn,
    /// Position from raw delays, true association.
    Tau,
    /// Position from raw delays after cost-based association.
    Tna,
}

impl EstimatorTag {
    pub const ALL: [EstimatorTag; 8] = [
        EstimatorTag::Mv,
        EstimatorTag::Na,
        EstimatorTag::So,
        EstimatorTag::Dd,
        EstimatorTag::Pwa,
        EstimatorTag::Ddn,
        EstimatorTag::Tau,
        EstimatorTag::Tna,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorTag::Mv => "MV",
            EstimatorTag::Na => "NA",
            EstimatorTag::So => "SO",
            EstimatorTag::Dd => "DD",
            EstimatorTag::Pwa => "PWA",
            EstimatorTag::Ddn => "DDN",
            EstimatorTag::Tau => "TAU",
            EstimatorTag::Tna => "TNA",
        }
    }

    /// Distance-only pipelines report `d̂ − d`; the others report `‖d̂ − d‖`.
    pub fn is_distance(self) -> bool {
        matches!(self, EstimatorTag::Mv | EstimatorTag::Na | EstimatorTag::So)
    }
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorTag::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown estimator {s:?}")))
    }
}

/// Quantity varied across sweep points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    /// Node distance, meters.
    Distance,
    /// Direction error deviation, radians.
    DirectionError,
    /// MPCs per observer.
    MpcCount,
}

impl SweepKind {
    /// Name written to the `sweep_param` column.
    pub fn column_name(self) -> &'static str {
        match self {
            SweepKind::Distance => "d_m",
            SweepKind::DirectionError => "sigma_dir_rad",
            SweepKind::MpcCount => "mpcs_per_observer",
        }
    }
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "distance" | "d" => Ok(SweepKind::Distance),
            "direction_error" | "sigma_dir" => Ok(SweepKind::DirectionError),
            "mpc_count" | "k" => Ok(SweepKind::MpcCount),
            _ => Err(Error::Config(format!("unknown sweep {s:?}"))),
        }
    }
}

/// Settings of a Monte-Carlo sweep. All quantities are SI.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub sweep: SweepKind,
    /// Sweep points, in the unit of the swept quantity.
    pub values: Vec<f64>,
    /// Distance when not swept, meters.
    pub d: f64,
    /// Delay-difference error deviation, seconds.
    pub sigma: f64,
    /// Direction error deviation when not swept, radians.
    pub sigma_dir: f64,
    pub observers: usize,
    /// MPCs per observer when not swept.
    pub mpcs_per_observer: usize,
    pub trials: usize,
    /// Trials for the no-association MLE, which is much slower.
    pub trials_na: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorTag>,
    pub sv: SvParams,
    /// Clock offset between B and A, seconds.
    pub eps: f64,
    /// Clock offsets between A and the observers are uniform on `[0, eps_a_max]`.
    pub eps_a_max: f64,
    pub assoc: AssocConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sweep: SweepKind::Distance,
            values: (0..=8).map(f64::from).collect(),
            d: 2.0,
            sigma: 0.2 * NS,
            sigma_dir: 0.0,
            observers: 3,
            mpcs_per_observer: 4,
            trials: 1000,
            trials_na: 200,
            seed: 1,
            estimators: EstimatorTag::ALL.to_vec(),
            sv: SvParams::default(),
            eps: 5.0 * NS,
            eps_a_max: 100.0 * NS,
            assoc: AssocConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// Parses `a`, `a,b,c` or inclusive ranges `start:stop:step` (mixable with commas).
pub fn parse_values(s: &str) -> Result<Vec<f64>> {
    let num =
        |t: &str| -> Result<f64> { t.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad number {t:?}"))) };
    let mut out = Vec::new();
    for item in s.split(',').filter(|t| !t.trim().is_empty()) {
        let parts: Vec<&str> = item.split(':').collect();
        match parts.as_slice() {
            [x] => out.push(num(x)?),
            [a, b, step] => {
                let (a, b, step) = (num(a)?, num(b)?, num(step)?);
                if !(step > 0.0) || b < a {
                    return Err(Error::Config(format!("bad range {item:?}")));
                }
                let n = ((b - a) / step + 1e-9).floor() as usize;
                out.extend((0..=n).map(|i| a + i as f64 * step));
            }
            _ => return Err(Error::Config(format!("bad value list item {item:?}"))),
        }
    }
    if out.is_empty() {
        return Err(Error::Config("empty value list".into()));
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

impl ExperimentConfig {
    /// Applies one setting. Keys use flag units: `sigma_ns`, `sigma_dir_deg`, `eps_ns`;
    /// `values` are degrees for the direction-error sweep, so `sweep` must be set first.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().to_ascii_lowercase().replace('-', "_");
        match key.as_str() {
            "sweep" => self.sweep = value.parse()?,
            "values" | "over" => {
                let raw = parse_values(value)?;
                self.values = match self.sweep {
                    SweepKind::DirectionError => raw.into_iter().map(f64::to_radians).collect(),
                    _ => raw,
                }
            }
            "d" => self.d = parse(&key, value)?,
            "sigma_ns" => self.sigma = parse::<f64>(&key, value)? * NS,
            "sigma_dir_deg" => self.sigma_dir = parse::<f64>(&key, value)?.to_radians(),
            "observers" => self.observers = parse(&key, value)?,
            "mpcs_per_observer" => self.mpcs_per_observer = parse(&key, value)?,
            "trials" => self.trials = parse(&key, value)?,
            "trials_na" => self.trials_na = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "eps_ns" => self.eps = parse::<f64>(&key, value)? * NS,
            "eps_a_max_ns" => self.eps_a_max = parse::<f64>(&key, value)? * NS,
            "estimators" => {
                self.estimators =
                    value.split(',').filter(|t| !t.trim().is_empty()).map(str::parse).collect::<Result<_>>()?
            }
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies settings in order, except that `sweep` goes first.
    pub fn apply<'a, I>(&mut self, settings: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let (sweep, rest): (Vec<_>, Vec<_>) =
            settings.into_iter().partition(|(k, _)| k.trim().eq_ignore_ascii_case("sweep"));
        for (k, v) in sweep.into_iter().chain(rest) {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.values.is_empty() {
            return bad("no sweep points");
        }
        if self.observers == 0 || self.mpcs_per_observer == 0 {
            return bad("need at least one observer and one MPC per observer");
        }
        if self.estimators.is_empty() {
            return bad("no estimators selected");
        }
        if !(self.sigma >= 0.0) || !(self.sigma_dir >= 0.0) || !(self.d >= 0.0) || !(self.eps_a_max >= 0.0) {
            return bad("distances and deviations must be nonnegative");
        }
        for &v in &self.values {
            let ok = match self.sweep {
                SweepKind::Distance | SweepKind::DirectionError => v >= 0.0 && v.is_finite(),
                SweepKind::MpcCount => v >= 1.0 && v.fract() == 0.0,
            };
            if !ok {
                return Err(Error::Config(format!("bad sweep value {v}")));
            }
        }
        self.sv.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.assoc.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.optimizer.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// Reads a flat `key = value` file; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) =
            line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// One line of sweep output.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sweep_param: &'static str,
    pub value: f64,
    pub estimator: EstimatorTag,
    pub trials: usize,
    pub failures: usize,
    pub rmse_m: f64,
    /// Mean of `d̂ − d` for distance pipelines, of `‖d̂ − d‖` for position pipelines.
    pub mean_err_m: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_HEADER: [&str; 7] = ["sweep_param", "value", "estimator", "trials", "failures", "rmse_m", "mean_err_m"];

impl SweepResult {
    pub fn row(&self, value: f64, estimator: EstimatorTag) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.value == value && r.estimator == estimator)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Config(e.to_string());
        w.write_record(SWEEP_HEADER).map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.sweep_param.to_string(),
                r.value.to_string(),
                r.estimator.to_string(),
                r.trials.to_string(),
                r.failures.to_string(),
                r.rmse_m.to_string(),
                r.mean_err_m.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Config(e.to_string()))
    }
}

/// Draws one trial and returns the error of each selected estimator (`None` on failure).
pub fn run_trial(cfg: &ExperimentConfig, point: usize, value: f64, trial: usize) -> Vec<Option<f64>> {
    let mut rng = stream_rng(cfg.seed, stream_id(&[point as u64, trial as u64]));
    let (d, sigma_dir, k) = match cfg.sweep {
        SweepKind::Distance => (value, cfg.sigma_dir, cfg.mpcs_per_observer),
        SweepKind::DirectionError => (cfg.d, value, cfg.mpcs_per_observer),
        SweepKind::MpcCount => (cfg.d, cfg.sigma_dir, value as usize),
    };
    let Ok(scenario) = sample_scenario_with_rng(d, &cfg.sv, &vec![k; cfg.observers], &mut rng) else {
        return vec![None; cfg.estimators.len()];
    };
    let noise = NoiseParams {
        sigma: cfg.sigma,
        sigma_dir,
        eps: cfg.eps,
        eps_a: (0..cfg.observers).map(|_| rng.random::<f64>() * cfg.eps_a_max).collect(),
    };
    let Ok(obs) = observe_with_rng(&scenario, &noise, &mut rng) else {
        return vec![None; cfg.estimators.len()];
    };
    // Always drawn so every pipeline sees the same stream regardless of selection.
    let scrambled = scramble_association_with_rng(&obs, &mut rng);
    let truth = scenario.displacement();

    cfg.estimators
        .iter()
        .map(|&tag| {
            if tag == EstimatorTag::Na && trial >= cfg.trials_na {
                return None;
            }
            estimate(cfg, tag, &obs, &scrambled.obs).ok().map(|est| match est {
                Estimate::Distance(dh) => dh - d,
                Estimate::Position(v) => (v - truth).norm(),
            })
        })
        .collect()
}

enum Estimate {
    Distance(f64),
    Position(Vec3),
}

fn estimate(
    cfg: &ExperimentConfig,
    tag: EstimatorTag,
    obs: &Observations,
    scrambled: &Observations,
) -> Result<Estimate> {
    let relabel = |sorted: bool| -> Result<Observations> {
        let a = if sorted {
            associate_by_sorting(scrambled, scrambled, &cfg.assoc)?
        } else {
            associate(scrambled, scrambled, &cfg.assoc)?
        };
        apply_assignment(scrambled, &a)
    };
    Ok(match tag {
        EstimatorTag::Mv => Estimate::Distance(mvue_async(&DelayDiffSet::from_observations(obs))?.d_hat),
        EstimatorTag::So => Estimate::Distance(mvue_async(&DelayDiffSet::from_observations(&relabel(true)?))?.d_hat),
        EstimatorTag::Na => {
            let (ta, tb) = delays_by_side(scrambled);
            let k = ta.iter().map(Vec::len).sum();
            let model = ErrorModel::iid(cfg.sigma, k);
            Estimate::Distance(mle_async_noassoc(&ta, &tb, &model, &cfg.optimizer)?.d_hat)
        }
        EstimatorTag::Dd => Estimate::Position(lse_by_delta(obs)?.d_vec),
        EstimatorTag::Pwa => Estimate::Position(lse_by_delta_pwa(obs)?.d_vec),
        EstimatorTag::Tau => Estimate::Position(lse_by_tau(obs)?.d_vec),
        EstimatorTag::Ddn => Estimate::Position(lse_by_delta(&relabel(false)?)?.d_vec),
        EstimatorTag::Tna => Estimate::Position(lse_by_tau(&relabel(false)?)?.d_vec),
    })
}

/// Runs every sweep point and trial and aggregates RMSE per estimator.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (p, &value) in cfg.values.iter().enumerate() {
        let errors: Vec<Vec<Option<f64>>> =
            (0..cfg.trials).into_par_iter().map(|t| run_trial(cfg, p, value, t)).collect();
        for (j, &tag) in cfg.estimators.iter().enumerate() {
            let attempted = if tag == EstimatorTag::Na { cfg.trials.min(cfg.trials_na) } else { cfg.trials };
            let ok: Vec<f64> = errors.iter().take(attempted).filter_map(|e| e[j]).collect();
            let n = ok.len() as f64;
            rows.push(SweepRow {
                sweep_param: cfg.sweep.column_name(),
                value,
                estimator: tag,
                trials: attempted,
                failures: attempted - ok.len(),
                rmse_m: (ok.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
                mean_err_m: ok.iter().sum::<f64>() / n,
            });
        }
    }
    Ok(SweepResult { rows })
}

/// Settings of a likelihood-surface dump.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceConfig {
    /// Evaluate the permutation-sum likelihood instead of the known-association one.
    pub no_assoc: bool,
    /// Error deviation assumed by the likelihood, seconds (0 for the hard indicator).
    pub sigma: f64,
    pub grid_d: GridAxis,
    pub grid_eps: GridAxis,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        SurfaceConfig {
            no_assoc: false,
            sigma: 0.0,
            grid_d: GridAxis::new(0.025, 5.0, 200),
            grid_eps: GridAxis::new(0.0, 10.0 * NS, 201),
        }
    }
}

/// True distance of [`surface_scenario`], meters.
pub const SURFACE_DISTANCE: f64 = 2.5;
/// Clock offset used with [`surface_scenario`], seconds.
pub const SURFACE_EPS: f64 = 5.0 * NS;

/// Three paths at one observer: the direct path from an observer at
/// (−3, 0, 0) and two reflections, with B at (2.5, 0, 0).
///
/// The direct path and the reflection behind B sit on opposite wedge edges,
/// so the noiseless known-association surface peaks exactly at the truth.
pub fn surface_scenario() -> Result<Scenario> {
    let c = SPEED_OF_LIGHT;
    let pos_a = Vec3::zeros();
    let pos_b = Vec3::new(SURFACE_DISTANCE, 0.0, 0.0);
    let sources = [Vec3::new(-3.0, 0.0, 0.0), Vec3::new(15.0, 0.0, 0.0), Vec3::new(-3.0, 6.0, 0.0)];
    let group = sources
        .iter()
        .enumerate()
        .map(|(k, s)| mpc_from_virtual_source(&pos_a, &pos_b, s, c).map(|m| crate::geom::MpcTrue { mpc: k, ..m }))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scenario { pos_a, pos_b, mpcs: vec![group], c })
}

/// One cell of a likelihood surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub d: f64,
    pub eps: f64,
    pub loglik: f64,
}

/// Log-likelihood of [`surface_scenario`] on the configured grid, `d`-major.
///
/// The delays are noiseless; `sigma` only changes the error model, so the
/// surfaces for different `sigma` describe the same channel.
pub fn dump_surface(cfg: &SurfaceConfig) -> Result<Vec<SurfacePoint>> {
    cfg.grid_d.validate().map_err(|e| Error::Config(e.to_string()))?;
    cfg.grid_eps.validate().map_err(|e| Error::Config(e.to_string()))?;
    if !(cfg.sigma >= 0.0) {
        return Err(Error::Config("sigma must be nonnegative".into()));
    }
    let scenario = surface_scenario()?;
    let noise = NoiseParams { eps: SURFACE_EPS, ..NoiseParams::noiseless(1) };
    let obs = observe(&scenario, &noise, 0)?;
    let k = scenario.mpc_count();
    let model = ErrorModel::iid(cfg.sigma, k);
    let diffs = DelayDiffSet::from_observations(&obs);
    let (ta, tb) = delays_by_side(&obs);
    let mut out = Vec::with_capacity(cfg.grid_d.steps * cfg.grid_eps.steps);
    for d in cfg.grid_d.values() {
        for eps in cfg.grid_eps.values() {
            let loglik = if cfg.no_assoc {
                log_likelihood_noassoc(&ta, &tb, &model, d, eps)
            } else {
                log_likelihood_known(&diffs, &model, d, eps)
            };
            out.push(SurfacePoint { d, eps, loglik });
        }
    }
    Ok(out)
}

pub fn write_surface_csv<W: Write>(points: &[SurfacePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Config(e.to_string());
    w.write_record(["d", "eps", "loglik"]).map_err(io)?;
    for p in points {
        w.write_record([p.d.to_string(), p.eps.to_string(), p.loglik.to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Config(e.to_string()))
}

/// Target mean excess delay, seconds.
pub const TARGET_MEAN_EXCESS: f64 = 40.5 * NS;
/// Target RMS delay spread, seconds.
pub const TARGET_DELAY_SPREAD: f64 = 26.3 * NS;
/// Relative band accepted around each target.
pub const CALIBRATION_BAND: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationReport {
    pub samples: usize,
    /// Empirical mean excess delay, seconds.
    pub mean_excess: f64,
    /// Empirical RMS delay spread, seconds.
    pub delay_spread: f64,
    pub mean_ok: bool,
    pub spread_ok: bool,
}

impl CalibrationReport {
    pub fn passed(&self) -> bool {
        self.mean_ok && self.spread_ok
    }
}

/// Samples `samples` excess delays and checks their mean and spread against the targets.
pub fn calibrate(sv: &SvParams, samples: usize, seed: u64) -> Result<CalibrationReport> {
    let delays = sample_excess_delays(sv, samples, seed)?;
    let n = delays.len() as f64;
    let mean = delays.iter().sum::<f64>() / n;
    let spread = (delays.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
    let within = |x: f64, target: f64| (x - target).abs() <= CALIBRATION_BAND * target;
    Ok(CalibrationReport {
        samples,
        mean_excess: mean,
        delay_spread: spread,
        mean_ok: within(mean, TARGET_MEAN_EXCESS),
        spread_ok: within(spread, TARGET_DELAY_SPREAD),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(estimators: &[EstimatorTag]) -> ExperimentConfig {
        ExperimentConfig {
            values: vec![2.0],
            trials: 20,
            trials_na: 5,
            estimators: estimators.to_vec(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn noiseless_single_trial_is_exact() {
        let cfg = ExperimentConfig { sigma: 0.0, trials: 1, ..small(&[EstimatorTag::Dd, EstimatorTag::Tau]) };
        let res = run_sweep(&cfg).unwrap();
        for r in &res.rows {
            assert_eq!(r.failures, 0);
            assert!(r.rmse_m < 1e-9, "{r:?}");
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = small(&EstimatorTag::ALL);
        let mut a = Vec::new();
        let mut b = Vec::new();
        run_sweep(&cfg).unwrap().write_csv(&mut a).unwrap();
        run_sweep(&cfg).unwrap().write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("sweep_param,value,estimator,trials,failures,rmse_m,mean_err_m\n"));
        assert_eq!(text.lines().count(), 1 + EstimatorTag::ALL.len());
    }

    #[test]
    fn selection_does_not_change_other_pipelines() {
        let both = run_sweep(&small(&[EstimatorTag::Mv, EstimatorTag::Dd])).unwrap();
        let one = run_sweep(&small(&[EstimatorTag::Dd])).unwrap();
        assert_eq!(both.row(2.0, EstimatorTag::Dd), one.row(2.0, EstimatorTag::Dd));
    }

    #[test]
    fn reduced_trials_for_no_association() {
        let res = run_sweep(&small(&[EstimatorTag::Na])).unwrap();
        assert_eq!(res.rows[0].trials, 5);
    }

    #[test]
    fn rank_failures_are_counted() {
        let cfg = ExperimentConfig {
            sweep: SweepKind::MpcCount,
            values: vec![3.0],
            observers: 1,
            ..small(&[EstimatorTag::Dd])
        };
        let r = &run_sweep(&cfg).unwrap().rows[0];
        assert_eq!(r.failures, r.trials);
        assert!(r.rmse_m.is_nan());
    }

    #[test]
    fn config_keys_and_values() {
        let mut cfg = ExperimentConfig::default();
        let kv =
            parse_kv("over = 0:8:2 # degrees\nsigma-ns = 0.5\nestimators = dd,TAU\nsweep = direction_error\n").unwrap();
        cfg.apply(kv.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
        assert_eq!(cfg.sweep, SweepKind::DirectionError);
        let deg: Vec<f64> = cfg.values.iter().map(|v| v.to_degrees()).collect();
        for (got, want) in deg.iter().zip([0.0, 2.0, 4.0, 6.0, 8.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((cfg.sigma - 0.5 * NS).abs() < 1e-24);
        assert_eq!(cfg.estimators, vec![EstimatorTag::Dd, EstimatorTag::Tau]);
        assert!(cfg.set("bogus", "1").is_err());
        assert!(parse_kv("no equals sign").is_err());
        assert!(parse_values("1:0:1").is_err());
    }

    #[test]
    fn surface_peaks_at_truth() {
        let cfg = SurfaceConfig::default();
        let pts = dump_surface(&cfg).unwrap();
        let best = pts.iter().max_by(|a, b| a.loglik.total_cmp(&b.loglik)).unwrap();
        assert!((best.d - SURFACE_DISTANCE).abs() <= cfg.grid_d.step() * 1.000001);
        assert!((best.eps - SURFACE_EPS).abs() <= cfg.grid_eps.step() * 1.000001);
    }

    #[test]
    fn surface_scenario_geometry() {
        let s = surface_scenario().unwrap();
        assert!(s.max_identity_violation() < 1e-9);
        let diffs: Vec<f64> = s.iter_mpcs().map(|m| m.delay_diff() * SPEED_OF_LIGHT).collect();
        assert!((diffs[0] - 2.5).abs() < 1e-9);
        assert!((diffs[1] + 2.5).abs() < 1e-9);
    }
}
