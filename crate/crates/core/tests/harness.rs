use statrs::distribution::{ContinuousCDF, Normal};

use mpcloc::distest::permanent;
use mpcloc::eval::{
    dump_surface, run_sweep, run_trial, surface_scenario, EstimatorTag, ExperimentConfig, SurfaceConfig,
    SURFACE_DISTANCE, SURFACE_EPS,
};
use mpcloc::geom::SPEED_OF_LIGHT;

const NS: f64 = 1e-9;

fn dd_config(trials: usize) -> ExperimentConfig {
    ExperimentConfig { values: vec![2.0], trials, estimators: vec![EstimatorTag::Dd], ..ExperimentConfig::default() }
}

#[test]
fn rmse_grows_with_delay_noise() {
    let rmse: Vec<f64> = [0.1, 0.2, 0.4]
        .iter()
        .map(|&s| {
            let cfg = ExperimentConfig { sigma: s * NS, ..dd_config(300) };
            run_sweep(&cfg).unwrap().rows[0].rmse_m
        })
        .collect();
    assert!(rmse[0] < rmse[1] && rmse[1] < rmse[2], "{rmse:?}");
}

#[test]
fn distance_rmse_is_smaller_without_delay_noise() {
    let rmse = |sigma: f64| {
        let cfg = ExperimentConfig { sigma, estimators: vec![EstimatorTag::Mv], ..dd_config(1000) };
        run_sweep(&cfg).unwrap().rows[0].rmse_m
    };
    let (clean, noisy) = (rmse(0.0), rmse(1.0 * NS));
    assert!(clean < noisy, "{clean} vs {noisy}");
}

#[test]
fn doubling_trials_extends_the_same_sample() {
    let n = 100;
    let small = run_sweep(&dd_config(n)).unwrap().rows[0].clone();
    let large = run_sweep(&dd_config(2 * n)).unwrap().rows[0].clone();
    let cfg = dd_config(2 * n);
    let extra: Vec<f64> = (n..2 * n).filter_map(|t| run_trial(&cfg, 0, 2.0, t)[0]).collect();
    let ok_small = (n - small.failures) as f64;
    let sum_sq = small.rmse_m.powi(2) * ok_small + extra.iter().map(|e| e * e).sum::<f64>();
    let combined = (sum_sq / (ok_small + extra.len() as f64)).sqrt();
    assert_eq!(large.failures, small.failures + (n - extra.len()));
    assert!((combined - large.rmse_m).abs() <= 1e-12 * large.rmse_m);

    // Standard error of the RMSE by the delta method on the squared errors.
    let sq: Vec<f64> = (0..2 * n).filter_map(|t| run_trial(&cfg, 0, 2.0, t)[0]).map(|e| e * e).collect();
    let mean = sq.iter().sum::<f64>() / sq.len() as f64;
    let var = sq.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (sq.len() - 1) as f64;
    let se = (var / sq.len() as f64).sqrt() / (2.0 * mean.sqrt());
    assert!((small.rmse_m - large.rmse_m).abs() < 3.0 * se);
}

#[test]
fn gaussian_surface_peak_matches_an_independent_evaluation() {
    let cfg = SurfaceConfig { sigma: 1.0 * NS, ..SurfaceConfig::default() };
    let pts = dump_surface(&cfg).unwrap();
    let best = pts.iter().max_by(|a, b| a.loglik.total_cmp(&b.loglik)).unwrap();

    let s = surface_scenario().unwrap();
    let diffs: Vec<f64> = s.mpcs[0].iter().map(|m| m.delay_diff() + SURFACE_EPS).collect();
    let normal = Normal::new(0.0, cfg.sigma).unwrap();
    let oracle = |d: f64, eps: f64| {
        let w = d / SPEED_OF_LIGHT;
        diffs.iter().map(|x| (normal.cdf(x - eps + w) - normal.cdf(x - eps - w)).ln()).sum::<f64>()
            - diffs.len() as f64 * d.ln()
    };
    let expected = pts.iter().max_by(|a, b| oracle(a.d, a.eps).total_cmp(&oracle(b.d, b.eps))).unwrap();
    assert_eq!((best.d, best.eps), (expected.d, expected.eps));
    assert!((best.loglik - oracle(best.d, best.eps)).abs() < 1e-9);
    // Soft edges reward widening the wedge past the outermost differences.
    assert!(best.d > SURFACE_DISTANCE && best.d < SURFACE_DISTANCE + 3.0 * SPEED_OF_LIGHT * cfg.sigma);
    assert!((best.eps - SURFACE_EPS).abs() <= 2.0 * cfg.grid_eps.step() + 1e-18, "{best:?}");
}

#[test]
fn unknown_association_surface_is_a_union_of_wedges() {
    let cfg = SurfaceConfig {
        no_assoc: true,
        grid_d: mpcloc::likelihood::GridAxis::new(0.05, 5.0, 60),
        grid_eps: mpcloc::likelihood::GridAxis::new(0.0, 10.0 * NS, 61),
        ..SurfaceConfig::default()
    };
    let s = surface_scenario().unwrap();
    let ta: Vec<f64> = s.mpcs[0].iter().map(|m| m.tau_a).collect();
    let tb: Vec<f64> = s.mpcs[0].iter().map(|m| m.tau_b + SURFACE_EPS).collect();
    let n = ta.len();
    for p in dump_surface(&cfg).unwrap() {
        // Indicator matrix of feasible pairs; its permanent counts feasible permutations.
        let feasible: Vec<f64> = (0..n * n)
            .map(|i| {
                let x = tb[i % n] - ta[i / n] - p.eps;
                f64::from(u8::from(SPEED_OF_LIGHT * x.abs() <= p.d * (1.0 + 1e-12)))
            })
            .collect();
        let count = permanent(&feasible, n);
        assert_eq!(p.loglik.is_finite(), count > 0.0, "{p:?}");
    }
}
