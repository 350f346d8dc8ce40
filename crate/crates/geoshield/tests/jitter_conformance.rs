use geoshield::core::{SimDuration, TimingParams};
use geoshield::harness::{fraction_below, pair_differences, synth_latency_trace};
use geoshield::simnet::InterLinkModel;

/// Pairs sent together differ by less than the jitter bound with probability at least
/// `p_norm`, within three standard deviations.
#[test]
fn synthetic_pairs_meet_the_jitter_assumption() {
    let bound = TimingParams::default().inter_jitter;
    for (p, seed) in [(0.999, 1u64), (0.99, 2), (0.9, 3)] {
        let mut inter = InterLinkModel::default();
        inter.jitter.p_norm = p;
        let n = 200_000;
        let trace = synth_latency_trace(&inter, n, SimDuration::from_millis(10), seed).unwrap();
        let diffs = pair_differences(&trace, inter.jitter.pair_window);
        assert_eq!(diffs.len(), n);
        let frac = fraction_below(&diffs, bound);
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!(frac >= p - 3.0 * sigma, "p={p}: {frac}");
    }
}

#[test]
fn degraded_network_breaks_the_assumption() {
    let bound = TimingParams::default().inter_jitter;
    let mut inter = InterLinkModel::default();
    inter.dos_p_norm = Some(0.9);
    let trace = synth_latency_trace(&inter, 50_000, SimDuration::from_millis(10), 4).unwrap();
    let frac = fraction_below(&pair_differences(&trace, inter.jitter.pair_window), bound);
    assert!(frac < 0.95 && frac > 0.85, "{frac}");
}
