use std::collections::HashMap;

use mpcloc::chansim::{observe, sample_excess_delays, sample_scenario, scramble_association, NoiseParams, SvParams};
use mpcloc::geom::Vec3;

const NS: f64 = 1e-9;

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[test]
fn delay_difference_noise_has_the_configured_spread() {
    let observers = 20_000;
    let s = sample_scenario(2.0, &SvParams::default(), &vec![5; observers], 3).unwrap();
    let noise = NoiseParams { sigma: 0.2 * NS, sigma_dir: 0.0, eps: 5.0 * NS, eps_a: vec![0.0; observers] };
    let obs = observe(&s, &noise, 3).unwrap();
    let errors: Vec<f64> =
        obs.iter().flatten().zip(s.iter_mpcs()).map(|(o, t)| o.delay_diff() - t.delay_diff() - noise.eps).collect();
    assert_eq!(errors.len(), 100_000);
    let (mean, std) = mean_std(&errors);
    assert!((std / (0.2 * NS) - 1.0).abs() < 0.02, "std {std:e}");
    assert!(mean.abs() < 4.0 * 0.2 * NS / (errors.len() as f64).sqrt());
}

#[test]
fn arrival_directions_cover_the_sphere_evenly() {
    let mut sum = Vec3::zeros();
    let mut n = 0;
    for seed in 0..1000 {
        let s = sample_scenario(2.0, &SvParams::default(), &[4, 4, 4], seed).unwrap();
        for m in s.iter_mpcs() {
            sum += m.dir_a.into_inner();
            n += 1;
        }
    }
    assert!(n >= 10_000);
    assert!((sum / n as f64).norm() < 0.05);
}

#[test]
fn scrambling_draws_every_permutation_equally_often() {
    let s = sample_scenario(2.0, &SvParams::default(), &[3], 9).unwrap();
    let obs = observe(&s, &NoiseParams::noiseless(1), 9).unwrap();
    let draws = 10_000;
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    for seed in 0..draws {
        *counts.entry(scramble_association(&obs, seed).truth[0].clone()).or_default() += 1;
    }
    assert_eq!(counts.len(), 6);
    for (perm, n) in counts {
        let freq = n as f64 / draws as f64;
        assert!((freq - 1.0 / 6.0).abs() < 0.02, "{perm:?}: {freq}");
    }
}

#[test]
fn single_dense_cluster_follows_the_ray_decay() {
    // One cluster at zero delay and dense rays: the power-weighted pick is
    // close to exponential with mean and deviation equal to the ray time constant.
    let params = SvParams {
        cluster_mean: 1e3,
        ray_mean: 0.5 * NS,
        ray_decay: 1.0 / (20.0 * NS),
        window: 300.0 * NS,
        ..SvParams::default()
    };
    let delays = sample_excess_delays(&params, 10_000, 4).unwrap();
    let (mean, std) = mean_std(&delays);
    assert!((mean / (20.0 * NS) - 1.0).abs() < 0.05, "mean {mean:e}");
    assert!((std / (20.0 * NS) - 1.0).abs() < 0.05, "std {std:e}");
}
