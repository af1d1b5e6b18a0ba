use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mpcloc::chansim::{observe_with_rng, sample_scenario_with_rng, write_scenario_csv, NoiseParams};
use mpcloc::eval::{calibrate, dump_surface, parse_kv, run_sweep, write_surface_csv, ExperimentConfig, SurfaceConfig};
use mpcloc::likelihood::GridAxis;
use mpcloc::seed::{stream_id, stream_rng};
use mpcloc::Error;
use rand::Rng;

const NS: f64 = 1e-9;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CALIBRATION: u8 = 3;

/// Monte-Carlo evaluation of MPC-based distance and position estimators.
#[derive(Parser)]
#[command(name = "mpceval", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// RMSE of the selected estimators over a distance, direction-error or MPC-count sweep.
    Sweep(SweepArgs),
    /// Log-likelihood of the three-path example on a (d, eps) grid.
    Surface(SurfaceArgs),
    /// Checks the delay sampler against the target mean excess delay and delay spread.
    Calibrate(CalibrateArgs),
    /// Writes one sampled scenario with its noisy observations.
    ScenarioDump(ExperimentArgs),
}

/// Settings shared by `sweep` and `scenario-dump`; flags override `--config`.
#[derive(Args)]
struct ExperimentArgs {
    /// Flat `key = value` file with the same keys as the flags (underscores or dashes).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Node distance in meters when not swept.
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    sigma_ns: Option<String>,
    #[arg(long)]
    sigma_dir_deg: Option<String>,
    #[arg(long)]
    observers: Option<String>,
    #[arg(long)]
    mpcs_per_observer: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    /// Trials for the no-association estimator.
    #[arg(long)]
    trials_na: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    eps_ns: Option<String>,
    /// Comma-separated tags: MV, NA, SO, DD, PWA, DDN, TAU, TNA.
    #[arg(long)]
    estimators: Option<String>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// distance, direction_error or mpc_count.
    #[arg(long)]
    sweep: Option<String>,
    /// Sweep points: `a,b,c` or `start:stop:step`; degrees for direction_error.
    #[arg(long)]
    over: Option<String>,
    #[command(flatten)]
    common: ExperimentArgs,
}

#[derive(Args)]
struct SurfaceArgs {
    /// Use the permutation-sum likelihood instead of the known association.
    #[arg(long)]
    no_assoc: bool,
    /// Error deviation of the likelihood model; 0 gives the hard indicator.
    #[arg(long, default_value_t = 0.0)]
    sigma_ns: f64,
    #[arg(long, default_value_t = 0.025)]
    d_min: f64,
    #[arg(long, default_value_t = 5.0)]
    d_max: f64,
    #[arg(long, default_value_t = 200)]
    d_steps: usize,
    #[arg(long, default_value_t = 0.0)]
    eps_min_ns: f64,
    #[arg(long, default_value_t = 10.0)]
    eps_max_ns: f64,
    #[arg(long, default_value_t = 201)]
    eps_steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sweep(args) => sweep(args),
        Command::Surface(args) => surface(args),
        Command::Calibrate(args) => calibrate_cmd(args),
        Command::ScenarioDump(args) => scenario_dump(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("mpceval: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::InvalidParams(_) => EXIT_CONFIG,
                _ => EXIT_FAILURE,
            })
        }
    }
}

fn output(path: Option<&Path>) -> mpcloc::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Error::Config(format!("cannot create {}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn experiment(common: &ExperimentArgs, extra: &[(&str, &Option<String>)]) -> mpcloc::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let file = match &common.config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            parse_kv(&text)?
        }
        None => Vec::new(),
    };
    let flags = [
        ("d", &common.d),
        ("sigma_ns", &common.sigma_ns),
        ("sigma_dir_deg", &common.sigma_dir_deg),
        ("observers", &common.observers),
        ("mpcs_per_observer", &common.mpcs_per_observer),
        ("trials", &common.trials),
        ("trials_na", &common.trials_na),
        ("seed", &common.seed),
        ("eps_ns", &common.eps_ns),
        ("estimators", &common.estimators),
    ];
    let flags: Vec<(&str, &str)> =
        extra.iter().chain(&flags).filter_map(|(k, v)| v.as_deref().map(|v| (*k, v))).collect();
    // The sweep kind decides how values are read, so it is settled before either source.
    let sweep_kind = flags
        .iter()
        .copied()
        .chain(file.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .find(|(k, _)| k.trim().eq_ignore_ascii_case("sweep"));
    cfg.apply(sweep_kind)?;
    cfg.apply(file.iter().map(|(k, v)| (k.as_str(), v.as_str())).filter(|(k, _)| !k.eq_ignore_ascii_case("sweep")))?;
    cfg.apply(flags.into_iter().filter(|(k, _)| *k != "sweep"))?;
    cfg.validate()?;
    Ok(cfg)
}

fn sweep(args: SweepArgs) -> mpcloc::Result<u8> {
    let cfg = experiment(&args.common, &[("sweep", &args.sweep), ("values", &args.over)])?;
    let result = run_sweep(&cfg)?;
    result.write_csv(output(args.common.out.as_deref())?)?;
    Ok(0)
}

fn surface(args: SurfaceArgs) -> mpcloc::Result<u8> {
    let cfg = SurfaceConfig {
        no_assoc: args.no_assoc,
        sigma: args.sigma_ns * NS,
        grid_d: GridAxis::new(args.d_min, args.d_max, args.d_steps),
        grid_eps: GridAxis::new(args.eps_min_ns * NS, args.eps_max_ns * NS, args.eps_steps),
    };
    let points = dump_surface(&cfg)?;
    write_surface_csv(&points, output(args.out.as_deref())?)?;
    Ok(0)
}

fn calibrate_cmd(args: CalibrateArgs) -> mpcloc::Result<u8> {
    if args.samples == 0 {
        return Err(Error::Config("samples must be at least 1".into()));
    }
    let rep = calibrate(&Default::default(), args.samples, args.seed)?;
    let verdict = |ok: bool| if ok { "ok" } else { "out of band" };
    println!("samples = {}", rep.samples);
    println!("mean_excess_s = {:e} ({})", rep.mean_excess, verdict(rep.mean_ok));
    println!("delay_spread_s = {:e} ({})", rep.delay_spread, verdict(rep.spread_ok));
    Ok(if rep.passed() { 0 } else { EXIT_CALIBRATION })
}

fn scenario_dump(args: ExperimentArgs) -> mpcloc::Result<u8> {
    let cfg = experiment(&args, &[])?;
    let mut rng = stream_rng(cfg.seed, stream_id(&[0xd0_0d]));
    let scenario = sample_scenario_with_rng(cfg.d, &cfg.sv, &vec![cfg.mpcs_per_observer; cfg.observers], &mut rng)?;
    let noise = NoiseParams {
        sigma: cfg.sigma,
        sigma_dir: cfg.sigma_dir,
        eps: cfg.eps,
        eps_a: (0..cfg.observers).map(|_| rng.random::<f64>() * cfg.eps_a_max).collect(),
    };
    let obs = observe_with_rng(&scenario, &noise, &mut rng)?;
    write_scenario_csv(&scenario, &obs, output(args.out.as_deref())?)?;
    Ok(0)
}
