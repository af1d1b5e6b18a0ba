use mpcloc::chansim::{observe, sample_scenario, NoiseParams, SvParams};
use mpcloc::geom::SPEED_OF_LIGHT;
use mpcloc::posest::lse_by_tau_sync;

const NS: f64 = 1e-9;

#[test]
fn synchronized_single_path_error_matches_the_delay_noise() {
    // Each side contributes an independent error of size cσ/√2 along its own
    // direction, so the mean squared error norm is (cσ)².
    let sigma = 0.2 * NS;
    let trials = 20_000;
    let mut sq = 0.0;
    for seed in 0..trials {
        let s = sample_scenario(2.0, &SvParams::default(), &[1], seed).unwrap();
        let noise = NoiseParams { sigma, sigma_dir: 0.0, eps: 0.0, eps_a: vec![0.0] };
        let obs = observe(&s, &noise, seed).unwrap();
        let est = lse_by_tau_sync(&obs).unwrap();
        sq += (est.d_vec - s.displacement()).norm_squared();
    }
    let rms = (sq / trials as f64).sqrt();
    let expected = SPEED_OF_LIGHT * sigma;
    assert!((rms / expected - 1.0).abs() < 0.03, "rms {rms}, expected {expected}");
}
