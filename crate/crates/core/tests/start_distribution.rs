mod common;

use explore_core::episode::{Episode, EpisodeConfig};
use explore_core::predictor::IdentityPredictor;

/// 1000 resets spread over the admissible start cells in proportion to
/// their number: a χ² test on equal-probability bins of cells.
#[test]
fn resets_sample_start_cells_uniformly() {
    let plan = common::small_plan(2);
    let cfg = EpisodeConfig {
        rng_seed: 17,
        coverage_target: 1.0,
        ..EpisodeConfig::default()
    };
    let mut ep = Episode::new(plan.clone(), cfg, Box::new(IdentityPredictor)).unwrap();
    let cells = ep.start_cells().to_vec();
    assert!(cells.len() >= 50, "only {} start cells", cells.len());
    let bins = 10;
    let bin_of = |cell: usize| cells.iter().position(|&c| c == cell).map(|k| k * bins / cells.len());
    let mut counts = vec![0usize; bins];
    let n = 1000;
    let res = plan.resolution();
    for _ in 0..n {
        ep.reset_state().unwrap();
        let p = ep.pose();
        let cell = (p.y / res).floor() as usize * plan.width() + (p.x / res).floor() as usize;
        counts[bin_of(cell).expect("start outside the admissible set")] += 1;
        assert!((-std::f64::consts::PI..=std::f64::consts::PI).contains(&p.yaw));
    }
    let chi2: f64 = (0..bins)
        .map(|b| {
            let lo = (b * cells.len()).div_ceil(bins);
            let hi = ((b + 1) * cells.len()).div_ceil(bins);
            let expected = n as f64 * (hi - lo) as f64 / cells.len() as f64;
            (counts[b] as f64 - expected).powi(2) / expected
        })
        .sum();
    // 9 degrees of freedom, p = 0.001
    assert!(chi2 < 27.88, "chi2 = {chi2}, counts {counts:?}");
}
