//! Stay-normal grids over the score parameters and the degraded-network suite.

use serde::{Deserialize, Serialize};

use super::mc::{run_monte_carlo, trial_seed, Estimate};
use crate::tgs::{Compromise, TgsAttack, TgsError, TgsParams, TgsTrialConfig};

/// Invocations in thirty days at one per second.
pub const MONTH_INVOCATIONS: u64 = 2_592_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub f: usize,
    /// Normal-pair probability the scores are tuned for.
    pub p_norm: f64,
    /// Probability that a message between correct nodes is late.
    pub late_prob: f64,
    pub invocations: u64,
    pub trials: u64,
    pub seed: u64,
    pub alphas: Vec<f64>,
    pub betas: Vec<u32>,
    pub attack: TgsAttack,
    pub compromise: Compromise,
}

impl SweepSpec {
    pub fn new(f: usize, p_norm: f64, attack: TgsAttack, compromise: Compromise) -> Self {
        SweepSpec {
            f,
            p_norm,
            late_prob: 1.0 - p_norm,
            invocations: MONTH_INVOCATIONS,
            trials: 300,
            seed: 0,
            alphas: vec![0.01, 0.05, 0.1, 0.2, 1.0],
            betas: vec![1, 3, 5, 10, 50],
            attack,
            compromise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub alpha: f64,
    pub beta: u32,
    pub attack: TgsAttack,
    pub compromise: Compromise,
    /// `None` where the attack cannot act without being flagged at once.
    pub estimate: Option<Estimate>,
}

/// The adaptive attacker drops all `f + 1` messages of an invocation or none; with
/// `beta <= f + 1` one such invocation already flags it.
pub fn adaptive_applicable(beta: u32, f: usize) -> bool {
    beta as usize > f + 1
}

fn cell_seed(base: u64, i: usize, j: usize) -> u64 {
    trial_seed(base, ((i as u64) << 32) | j as u64)
}

pub fn sweep_tgs(spec: &SweepSpec) -> Result<Vec<SweepCell>, TgsError> {
    let mut out = Vec::new();
    for (i, &alpha) in spec.alphas.iter().enumerate() {
        for (j, &beta) in spec.betas.iter().enumerate() {
            let params = TgsParams::new(alpha, beta, spec.p_norm)?;
            let estimate = if spec.attack == TgsAttack::Adaptive && !adaptive_applicable(beta, spec.f) {
                None
            } else {
                let cfg = TgsTrialConfig {
                    f: spec.f,
                    tgs: Some(params),
                    late_prob: spec.late_prob,
                    invocations: spec.invocations,
                    attack: spec.attack,
                    compromise: spec.compromise,
                    seed: cell_seed(spec.seed, i, j),
                };
                Some(run_monte_carlo(&cfg, spec.trials, true).0)
            };
            out.push(SweepCell { alpha, beta, attack: spec.attack, compromise: spec.compromise, estimate });
        }
    }
    Ok(out)
}

/// Stay-normal probability with scoring disabled.
pub fn baseline(f: usize, late_prob: f64, invocations: u64, trials: u64, seed: u64) -> Estimate {
    let cfg = TgsTrialConfig {
        f,
        tgs: None,
        late_prob,
        invocations,
        attack: TgsAttack::Aggressive,
        compromise: Compromise::Both,
        seed,
    };
    run_monte_carlo(&cfg, trials, true).0
}

fn name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// `alpha,beta,attack,compromise,trials,stay_normal,ci_lo,ci_hi`; inapplicable cells read `N/A`.
pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["alpha", "beta", "attack", "compromise", "trials", "stay_normal", "ci_lo", "ci_hi"])
        .expect("in-memory write");
    for c in cells {
        let mut row = vec![c.alpha.to_string(), c.beta.to_string(), name(&c.attack), name(&c.compromise)];
        match &c.estimate {
            Some(e) => row.extend([e.trials.to_string(), format!("{:.4}", e.p), format!("{:.4}", e.ci_lo), format!("{:.4}", e.ci_hi)]),
            None => row.extend(["N/A"; 4].map(String::from)),
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

pub const COMPROMISES: [Compromise; 3] = [Compromise::Upstream, Compromise::Downstream, Compromise::Both];
pub const ATTACKS: [TgsAttack; 2] = [TgsAttack::Aggressive, TgsAttack::Adaptive];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DosReport {
    pub alpha: f64,
    pub beta: u32,
    pub configured_p_norm: f64,
    pub actual_p_norm: f64,
    pub scenarios: Vec<(TgsAttack, Compromise, Estimate)>,
    pub pooled: Estimate,
}

/// Both attacks against each compromised side, with scores tuned for `configured` while
/// the network only delivers `actual`.
pub fn dos_suite(
    alpha: f64,
    beta: u32,
    configured: f64,
    actual: f64,
    invocations: u64,
    trials: u64,
    seed: u64,
) -> Result<DosReport, TgsError> {
    let params = TgsParams::new(alpha, beta, configured)?;
    let mut scenarios = Vec::new();
    for (i, attack) in ATTACKS.iter().enumerate() {
        for (j, compromise) in COMPROMISES.iter().enumerate() {
            let cfg = TgsTrialConfig {
                f: 1,
                tgs: Some(params),
                late_prob: 1.0 - actual,
                invocations,
                attack: *attack,
                compromise: *compromise,
                seed: cell_seed(seed, i, j),
            };
            scenarios.push((*attack, *compromise, run_monte_carlo(&cfg, trials, true).0));
        }
    }
    let pooled = scenarios.iter().skip(1).fold(scenarios[0].2, |acc, (_, _, e)| acc.merge(e));
    Ok(DosReport { alpha, beta, configured_p_norm: configured, actual_p_norm: actual, scenarios, pooled })
}
