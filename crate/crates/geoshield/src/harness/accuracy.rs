//! Long measurement runs split into independent chunks.

use rayon::prelude::*;

use super::mc::trial_seed;
use crate::core::TimingParams;
use crate::measure::{accuracy, run_measurement, AccuracyStats, MeasureConfig, MeasureError};
use crate::simnet::InterLinkModel;

/// Runs `rounds` correct measurement rounds in chunks of `chunk`, each chunk on its own
/// seed and round range, and pools the accuracy tallies.
pub fn accuracy_run(
    params: &TimingParams,
    inter: &InterLinkModel,
    f: usize,
    rounds: u64,
    chunk: u64,
    seed: u64,
) -> Result<AccuracyStats, MeasureError> {
    let chunks = rounds.div_ceil(chunk);
    let parts: Result<Vec<AccuracyStats>, MeasureError> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut cfg = MeasureConfig::new(params.clone(), f, f, trial_seed(seed, c));
            cfg.inter = *inter;
            cfg.keep_faults = 0;
            let start = 1 + c * chunk;
            let end = (start + chunk).min(rounds + 1);
            Ok(accuracy(params, &run_measurement(&cfg, start..end)?.summaries))
        })
        .collect();
    Ok(parts?.into_iter().fold(AccuracyStats::default(), |a, b| AccuracyStats {
        rounds: a.rounds + b.rounds,
        timeouts: a.timeouts + b.timeouts,
        lower_violations: a.lower_violations + b.lower_violations,
        upper_misses: a.upper_misses + b.upper_misses,
        disagreements: a.disagreements + b.disagreements,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_meets_both_bounds() {
        let p = TimingParams::default();
        let s = accuracy_run(&p, &InterLinkModel::default(), 1, 400, 100, 5).unwrap();
        assert_eq!(s.rounds, 400);
        assert_eq!(s.lower_violations, 0);
        assert!(s.upper_fraction() >= 0.98, "{s:?}");
    }
}
