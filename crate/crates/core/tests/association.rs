use rand::Rng;

use mpcloc::assoc::{associate, AssocConfig};
use mpcloc::chansim::{observe, sample_scenario, scramble_association, NoiseParams, SvParams};
use mpcloc::seed::stream_rng;

const NS: f64 = 1e-9;

#[test]
fn short_range_association_is_almost_always_right() {
    let trials = 1000;
    let correct = (0..trials)
        .filter(|&seed| {
            let mut rng = stream_rng(seed, 0);
            let s = sample_scenario(0.5, &SvParams::default(), &[4, 4, 4], seed).unwrap();
            let noise = NoiseParams {
                sigma: 0.2 * NS,
                sigma_dir: 0.0,
                eps: 5.0 * NS,
                eps_a: (0..3).map(|_| rng.random_range(0.0..100.0) * NS).collect(),
            };
            let obs = observe(&s, &noise, seed).unwrap();
            let sc = scramble_association(&obs, seed);
            associate(&sc.obs, &sc.obs, &AssocConfig::default()).unwrap().is_correct(&sc.truth)
        })
        .count();
    assert!(correct as f64 >= 0.99 * trials as f64, "{correct}/{trials}");
}
