//! Parallel trial execution with per-trial seed streams and Wilson intervals.

use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::simnet::stream_rng;
use crate::tgs::{run_tgs_trial, TgsTrialConfig, TgsTrialResult};

/// Normal quantile for a two-sided 95% interval.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Seed of trial `i`, independent of how trials are scheduled.
pub fn trial_seed(base: u64, i: u64) -> u64 {
    stream_rng(base, &[77, i]).next_u64()
}

/// Runs `trials` trials, each on its own seed. The output order is the trial order
/// whether or not the work runs in parallel.
pub fn run_trials<T, F>(base_seed: u64, trials: u64, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, u64) -> T + Sync + Send,
{
    if parallel {
        (0..trials).into_par_iter().map(|i| f(i, trial_seed(base_seed, i))).collect()
    } else {
        (0..trials).map(|i| f(i, trial_seed(base_seed, i))).collect()
    }
}

pub fn wilson(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Success probability over in-model trials with its 95% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub trials: u64,
    pub successes: u64,
    /// Trials that exceeded the fault budget; not part of `trials`.
    pub out_of_model: u64,
    pub p: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl Estimate {
    pub fn from_counts(successes: u64, trials: u64, out_of_model: u64) -> Self {
        let (ci_lo, ci_hi) = wilson(successes, trials, Z95);
        let p = if trials == 0 { 0.0 } else { successes as f64 / trials as f64 };
        Estimate { trials, successes, out_of_model, p, ci_lo, ci_hi }
    }

    /// Pools `(success, out_of_model)` outcomes.
    pub fn from_outcomes(outcomes: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let (mut s, mut n, mut oom) = (0, 0, 0);
        for (ok, out) in outcomes {
            if out {
                oom += 1;
            } else {
                n += 1;
                s += ok as u64;
            }
        }
        Self::from_counts(s, n, oom)
    }

    pub fn contains(&self, p: f64) -> bool {
        self.ci_lo <= p && p <= self.ci_hi
    }

    pub fn merge(&self, other: &Estimate) -> Estimate {
        Self::from_counts(self.successes + other.successes, self.trials + other.trials, self.out_of_model + other.out_of_model)
    }
}

/// Stay-normal probability of the invocation-level task model.
pub fn run_monte_carlo(cfg: &TgsTrialConfig, trials: u64, parallel: bool) -> (Estimate, Vec<TgsTrialResult>) {
    let results = run_trials(cfg.seed, trials, parallel, |_, seed| run_tgs_trial(&TgsTrialConfig { seed, ..cfg.clone() }));
    let est = Estimate::from_outcomes(results.iter().map(|r| (r.stayed_normal, false)));
    (est, results)
}
