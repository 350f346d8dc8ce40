//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and fails if any
//! criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::Rng;

use geoshield::casestudies::{
    simulate_incorrect_ma, simulate_wenzhou, smart_grid_run, GridConfig, MaAttackConfig, TrainMode, WenzhouConfig,
    WenzhouVariant,
};
use geoshield::core::{early_bound, NodeId, RegionId, SimDuration, SimTime, TimingParams};
use geoshield::harness::{
    accuracy_run, baseline, dos_suite, linear_fit, run_scenario, scaling_report, sweep_tgs, BandwidthConfig, Scenario, SweepSpec,
    ATTACKS, MONTH_INVOCATIONS,
};
use geoshield::meas_dispute::DisputeBehavior;
use geoshield::measure::{early_heartbeat_sweep, run_measurement, MeasureBehavior, MeasureConfig, MeasureRun};
use geoshield::poc::{run_poc_trial, PocAttack, PocTrialConfig};
use geoshield::recovery::{btr_deadline, run_propagation, FaultClass, MeasurerFault, PropagationConfig};
use geoshield::simnet::{stream_rng, BaseWalk, InterLinkModel};
use geoshield::tgs::{long_term_search, max_unflagged_suspicious, short_term_search, Compromise, ExactScores, TgsParams};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Written straight to the process's stdout so the line survives test-output capture.
fn report(id: usize, title: &str, o: &Outcome, took: Duration) {
    let status = if o.pass { "PASS" } else { "FAIL" };
    let line = format!("[acceptance] {id:>2} {status} {title}: {} ({:.1} s)\n", o.detail, took.as_secs_f64());
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).expect("stdout");
    out.flush().expect("stdout");
}

fn early_heartbeat() -> Outcome {
    let p = TimingParams::default();
    let grid = SimDuration::from_micros(1);
    let start = Instant::now();
    let mut attempts = 0;
    for f in 1..=2 {
        for faulty in 1..=f {
            let s = early_heartbeat_sweep(&p, f, faulty, 11, SimDuration::from_millis(10), grid).unwrap();
            attempts += s.attempts;
            if !s.respects_bound() {
                return outcome(false, format!("f={f} faulty={faulty}: valid heartbeat at {:?} before {}", s.earliest_valid, s.bound));
            }
        }
    }
    let fast = start.elapsed() < Duration::from_secs(60);
    outcome(fast, format!("{attempts} attempts at 1 us, none valid before t_n - {}", early_bound(&p)))
}

fn accuracy() -> Outcome {
    let p = TimingParams::default();
    let inter = InterLinkModel::default();
    let rounds = 100_000;
    let s = accuracy_run(&p, &inter, 1, rounds, 2_000, 2024).unwrap();
    let pn = inter.jitter.p_norm;
    let margin = 3.0 * (pn * (1.0 - pn) / rounds as f64).sqrt();
    let upper = s.upper_fraction();
    let pass = s.rounds as u64 == rounds && s.lower_violations == 0 && upper >= pn - margin;
    outcome(
        pass,
        format!("{} rounds, lower-bound violations {}, upper bound held in {upper:.5} (need >= {:.5})", s.rounds, s.lower_violations, pn - margin),
    )
}

fn blamed_per_detector(run: &MeasureRun, n: u64) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
    let mut out: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for (_, f) in run.faults.iter().filter(|(r, _)| *r == n) {
        if let Some(b) = f.blamed.node() {
            out.entry(f.detector).or_default().insert(b);
        }
    }
    out
}

fn agreement() -> Outcome {
    let dispute_attacks = [
        DisputeBehavior::TamperLog,
        DisputeBehavior::HideLog,
        DisputeBehavior::EquivocateLog,
        DisputeBehavior::EquivocateNewAccept,
        DisputeBehavior::FabricateNewAccept,
        DisputeBehavior::Silent,
    ];
    let mut rounds = 0;
    for seed in 0..1_000u64 {
        let f = 1 + (seed % 2) as usize;
        let mut cfg = MeasureConfig::new(TimingParams::default(), f, f, seed);
        let down = cfg.down_nodes();
        let region: Vec<NodeId> = down.iter().copied().chain(cfg.keeper_nodes()).collect();
        match seed % 3 {
            0 => {
                let d = SimDuration::from_micros(500 + seed % 7_000);
                cfg.behaviors.insert(down[(seed as usize / 3) % down.len()], MeasureBehavior::EquivocateAccept(d));
            }
            1 => {
                cfg.behaviors.insert(down[(seed as usize / 3) % down.len()], MeasureBehavior::Silent);
            }
            _ => {
                let attack = dispute_attacks[(seed as usize / 3) % dispute_attacks.len()];
                let trigger = down[0];
                cfg.behaviors.insert(trigger, MeasureBehavior::EquivocateAccept(SimDuration::from_millis(4)));
                cfg.dispute.insert(trigger, attack);
                for extra in region.iter().rev().take(f - 1) {
                    cfg.dispute.insert(*extra, attack);
                }
            }
        }
        let run = run_measurement(&cfg, 1..4).unwrap();
        for s in &run.summaries {
            rounds += 1;
            if !(s.agreement && s.dispute_in_time && s.from_valid_proposal) {
                return outcome(false, format!("seed {seed}: {s:?}"));
            }
        }
    }
    // Every accept pattern of one faulty measurer in a 3-node region.
    let mut patterns = 0;
    for faulty_idx in 0..2 {
        for code in 0..25u32 {
            let mut cfg = MeasureConfig::new(TimingParams::default(), 1, 1, 7_000 + code as u64);
            let eq = cfg.down_nodes()[faulty_idx];
            cfg.behaviors.insert(eq, MeasureBehavior::AcceptPattern(code));
            let run = run_measurement(&cfg, 1..2).unwrap();
            let s = &run.summaries[0];
            if !(s.agreement && s.dispute_in_time && s.from_valid_proposal) {
                return outcome(false, format!("pattern {code}: {s:?}"));
            }
            let blamed = blamed_per_detector(&run, 1);
            if blamed.values().any(|b| b.iter().any(|n| *n != eq)) {
                return outcome(false, format!("pattern {code}: a correct node was blamed"));
            }
            patterns += 1;
        }
    }
    outcome(true, format!("1000 adversarial trials ({rounds} rounds) and {patterns} accept patterns: unanimous, in time, valid proposals"))
}

fn poc_unanimity() -> Outcome {
    let attacks = [
        PocAttack::ForgedOutput,
        PocAttack::SplitForgedOutput,
        PocAttack::SelectiveForward,
        PocAttack::FabricatedPoc,
        PocAttack::Replay,
        PocAttack::WithholdShare,
        PocAttack::HeartbeatLoss,
    ];
    let mut safe_jobs = 0;
    for seed in 0..1_000u64 {
        let f = 1 + (seed % 2) as usize;
        let attack = attacks[(seed as usize / 2) % attacks.len()];
        let r = run_poc_trial(&PocTrialConfig::new(TimingParams::default(), f, seed, attack)).unwrap();
        if !r.unanimous || r.forged_accepted {
            return outcome(false, format!("seed {seed} {attack:?}: unanimous={} forged_accepted={}", r.unanimous, r.forged_accepted));
        }
        safe_jobs += r.safe_mode.values().filter(|v| v.is_some()).count();
    }
    outcome(true, format!("1000 trials over {} strategies unanimous, no forged output accepted, {safe_jobs} safe-mode jobs", attacks.len()))
}

fn score_bounds() -> Outcome {
    // (a) identities, in scaled integers and in floating point.
    for alpha in [(1, 100), (1, 10), (1, 5), (1, 1)] {
        for beta in [1, 3, 5, 10, 50] {
            let ex = ExactScores::new(alpha, beta, (999, 1000));
            if ex.max != beta as i64 * ex.penalty || ex.penalty * alpha.1 as i64 != ex.award * 999 * alpha.0 as i64 {
                return outcome(false, format!("identity fails at alpha={alpha:?} beta={beta}"));
            }
            let p = TgsParams::new(alpha.0 as f64 / alpha.1 as f64, beta, 0.999).unwrap();
            let ratio = p.penalty() / p.award();
            if (p.penalty() - 1.0 / beta as f64).abs() > 1e-15 || (ratio - p.alpha * 0.999 / 0.001).abs() > 1e-9 * ratio {
                return outcome(false, "floating-point identity mismatch");
            }
        }
    }
    // (b) periodic schedules.
    let mut searched = 0;
    for alpha in [(1, 10), (1, 5), (1, 1)] {
        for beta in [1, 3, 5] {
            let r = long_term_search(&ExactScores::new(alpha, beta, (999, 1000)), 50);
            searched += 1;
            if !r.violations.is_empty() {
                return outcome(false, format!("alpha={alpha:?} beta={beta}: unflagged schedules {:?}", r.violations));
            }
        }
    }
    // (c) windows: exhaustive where the window is integral, dynamic programming at p = 0.999.
    let mut enumerated = 0u64;
    for alpha in [(1, 10), (1, 5), (1, 1)] {
        for beta in 1..=5 {
            let ex = ExactScores::new(alpha, beta, (alpha.1, alpha.1 + alpha.0));
            for k in 1..=3 {
                let (num, den) = ex.window(k as i64);
                let w = ((num + den - 1) / den) as usize;
                let r = short_term_search(&ex, k, w);
                enumerated += r.schedules;
                if r.unflagged != 0 {
                    return outcome(false, format!("alpha={alpha:?} beta={beta} k={k}: {} unflagged", r.unflagged));
                }
            }
        }
        for beta in 1..=5 {
            let ex = ExactScores::new(alpha, beta, (999, 1000));
            for k in 1..=3 {
                let (num, den) = ex.window(k as i64);
                let w = (num / den) as usize;
                if max_unflagged_suspicious(&ex, w) >= (beta + k) as usize {
                    return outcome(false, format!("p=0.999 alpha={alpha:?} beta={beta} k={k}: floor window admits beta+k"));
                }
            }
        }
    }
    outcome(true, format!("identities exact; {searched} long-term grids to period 50; {enumerated} short-term schedules enumerated"))
}

fn recovery_bound() -> Outcome {
    let p = TimingParams::default();
    let mut rng = stream_rng(606, &[]);
    let (mut runs, mut starts, mut degraded) = (0, 0, 0);
    for seed in 0..600u64 {
        let f = 1 + (seed % 2) as usize;
        let regions = [2u32, 3, 5][(seed % 3) as usize];
        let det = RegionId(rng.random_range(0..regions));
        let bad = RegionId(rng.random_range(0..regions));
        let mut c = PropagationConfig::new(p.clone(), f, regions, det, bad, seed);
        c.class = if seed % 4 == 0 { FaultClass::Omission } else { FaultClass::Commission };
        c.t_rls = SimTime::ZERO + SimDuration::from_millis(rng.random_range(1_000..30_000));
        let base = SimDuration::from_millis(rng.random_range(10..120));
        c.inter.base = BaseWalk { initial: base, min: base, max: base + SimDuration::from_millis(30), ..c.inter.base };
        if seed % 3 == 0 {
            // Degraded network outside the jitter assumption.
            c.inter.dos_p_norm = Some([0.99, 0.9, 0.5][(seed / 3 % 3) as usize]);
            c.inter.drop_prob = [0.0, 0.1, 0.4][(seed / 9 % 3) as usize];
            degraded += 1;
        }
        for r in c.region_ids() {
            let budget = if r == c.faulty_region { f - 1 } else { f };
            let k = rng.random_range(0..=budget);
            let ms = c.measurers(r);
            for m in ms.choose_multiple(&mut rng, k) {
                if *m != c.blamed() {
                    let kind = if rng.random_bool(0.5) { MeasurerFault::Silent } else { MeasurerFault::Tamper };
                    c.measurer_faults.insert(*m, kind);
                }
            }
        }
        if c.replicas(c.detector).iter().all(|n| !c.is_correct(*n)) {
            continue;
        }
        let r = run_propagation(&c).unwrap();
        runs += 1;
        starts += r.starts.len();
        if !r.bound_met() {
            return outcome(false, format!("seed {seed}: violations {:?}, missing {:?}", r.violations(), r.missing()));
        }
    }
    outcome(true, format!("{runs} runs ({degraded} degraded), {starts} recovery starts, all within t_det + {}", btr_deadline(&p)))
}

fn baselines() -> Outcome {
    let cases = [(1usize, 0.999, 0.107), (1, 0.99, 0.105), (2, 0.99, 0.486)];
    let mut parts = Vec::new();
    let mut deviations = Vec::new();
    for (i, (f, p, paper)) in cases.iter().enumerate() {
        let e = baseline(*f, 1.0 - p, MONTH_INVOCATIONS, 1_000, 700 + i as u64);
        parts.push(format!("f={f} p={p}: {:.3} [{:.3}, {:.3}] vs {paper}", e.p, e.ci_lo, e.ci_hi));
        if !e.contains(*paper) {
            deviations.push(format!(
                "f={f} p_norm={p}: measured {:.3} [{:.3}, {:.3}], reference {paper}; independent per-link lateness with \
                 probability 1 - p_norm and no scoring",
                e.p, e.ci_lo, e.ci_hi
            ));
        }
    }
    let dir = std::path::PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let mut text = String::from("schema_version = 1\nexperiment = no-scoring baselines\ntrials = 1000\ninvocations = 2592000\n");
    for d in &deviations {
        text.push_str(&format!("deviation = {d}\n"));
    }
    let written = std::fs::write(dir.join("baseline_manifest.txt"), text).is_ok();
    let note = if deviations.is_empty() { String::new() } else { format!("; {} deviation(s) recorded in manifest", deviations.len()) };
    outcome(written, format!("{}{note}", parts.join("; ")))
}

fn effectiveness() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for attack in ATTACKS {
        let cell = |alpha: f64, beta: u32, seed: u64| {
            let mut spec = SweepSpec::new(1, 0.999, attack, Compromise::Both);
            spec.alphas = vec![alpha];
            spec.betas = vec![beta];
            spec.trials = 300;
            spec.seed = seed;
            sweep_tgs(&spec).unwrap()[0].estimate
        };
        let mut interior = Vec::new();
        for (i, alpha) in [0.05, 0.1, 0.2].iter().enumerate() {
            for (j, beta) in [3u32, 5, 10].iter().enumerate() {
                if let Some(e) = cell(*alpha, *beta, (i * 3 + j) as u64) {
                    interior.push(e.p);
                }
            }
        }
        let worst = interior.iter().copied().fold(1.0, f64::min);
        let strict = cell(1.0, 1, 90);
        let loose = cell(0.01, 50, 91).unwrap();
        let extremes_below = strict.is_none_or(|s| s.p < worst) && loose.p < worst;
        pass &= worst > 0.95 && extremes_below;
        let strict_text = strict.map_or("N/A".to_string(), |s| format!("{:.3}", s.p));
        lines.push(format!("{attack:?}: interior min {worst:.3}, (1,1) {strict_text}, (0.01,50) {:.3}", loose.p));
    }
    outcome(pass, lines.join("; "))
}

fn dos() -> Outcome {
    let r = dos_suite(0.01, 5, 0.999, 0.99, MONTH_INVOCATIONS, 500, 42).unwrap();
    let e = r.pooled;
    outcome(e.p >= 0.90, format!("six scenarios pooled {:.3} [{:.3}, {:.3}] over {} trials (reference 0.932)", e.p, e.ci_lo, e.ci_hi, e.trials))
}

fn railway() -> Outcome {
    let normal = simulate_incorrect_ma(&MaAttackConfig { attacked: false, ..Default::default() }).unwrap();
    let onset = normal.trace.iter().find(|s| s.mode == TrainMode::ServiceBrake).map_or(f64::NAN, |s| s.x);
    let stop = normal.stop_x.unwrap_or(f64::NAN);
    let unprotected = simulate_incorrect_ma(&MaAttackConfig { protected: false, ..Default::default() }).unwrap();
    let crash_pos = unprotected.trace.last().map_or(0.0, |s| s.x);
    let protected = simulate_incorrect_ma(&MaAttackConfig::default()).unwrap();
    let fix = protected.corrected_at.unwrap_or(f64::NAN);
    let w = simulate_wenzhou(&WenzhouConfig { variant: WenzhouVariant::Protected, ..Default::default() }).unwrap();
    let safe = w.safe_mode_at.unwrap_or(f64::NAN);
    let pass = (onset - 3_160.0).abs() <= 10.0
        && (stop - 9_910.0).abs() <= 10.0
        && unprotected.crashed
        && crash_pos >= 10_000.0
        && (fix - 36.08).abs() <= 0.05
        && !protected.crashed
        && safe == 10.2
        && w.min_separation > 0.0;
    outcome(
        pass,
        format!(
            "onset {onset:.0} m, stop {stop:.0} m; unprotected crash at {crash_pos:.0} m, {:.1} m/s; corrected MA at {fix:.3} s, \
             no crash; safe mode at {safe} s, min separation {:.0} m",
            unprotected.crash_speed, w.min_separation
        ),
    )
}

fn smart_grid() -> Outcome {
    let r = smart_grid_run(&GridConfig { queries: 2_000, ..Default::default() }).unwrap();
    let first: Vec<u64> = r.delays.iter().copied().take(3).collect();
    let throttled = r.delays.get(3).is_none_or(|d| *d > 13 + 10);
    let frac = r.steady_delay_fraction(13);
    let pass = first == [10, 11, 12] && throttled;
    outcome(pass, format!("delays at {first:?}, then throttled; steady-state fraction {frac:.4} = 1/{:.0} (reference 1/66)", 1.0 / frac))
}

fn bandwidth() -> Outcome {
    let rows = scaling_report(&[5, 10, 20, 50], &BandwidthConfig::default());
    let xs: Vec<f64> = rows.iter().map(|b| b.regions as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|b| b.inter_kbps).collect();
    let (_, _, r2) = linear_fit(&xs, &ys);
    let five = &rows[0];
    let within = |v: f64, r: f64| v >= r / 3.0 && v <= r * 3.0;
    let pass = r2 >= 0.99 && within(five.inter_kbps, 7.28) && within(five.intra_kbps, 6.25);
    outcome(pass, format!("inter R^2 {r2:.5}; 5 regions: intra {:.2} kB/s (6.25), inter {:.2} kB/s (7.28)", five.intra_kbps, five.inter_kbps))
}

fn determinism() -> Outcome {
    let scenarios = [
        "name = \"tgs\"\nseed = 5\ntrials = 20\n[tgs]\nalpha = 0.1\nbeta = 5\np_norm = 0.999\n[experiment]\nkind = \"tgs\"\n\
         invocations = 100000\nlate_prob = 0.01\nattack = \"adaptive\"\ncompromise = \"both\"\n",
        "name = \"measure\"\nseed = 6\ntrials = 2\n[attack]\ncompromised = [{ node = 2, region = 1, strategy = { kind = \
         \"protocol\", attack = \"equivocate_accept\" } }]\n[experiment]\nkind = \"measure\"\nrounds = 10\n",
        "name = \"propagation\"\nseed = 7\ntrials = 5\n[topology]\nregions = [{ n = 3, f = 1 }, { n = 3, f = 1 }, \
         { n = 3, f = 1 }]\n[experiment]\nkind = \"propagation\"\ndetector = 1\nfaulty_region = 2\n",
    ];
    for text in scenarios {
        let s = Scenario::from_toml(text).unwrap();
        if run_scenario(&s).unwrap() != run_scenario(&s).unwrap() {
            return outcome(false, format!("{} differs between runs", s.name));
        }
    }
    outcome(true, "three scenarios byte-identical across re-runs")
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("early heartbeats", early_heartbeat),
        ("measurement accuracy", accuracy),
        ("measurement agreement", agreement),
        ("endorsement unanimity", poc_unanimity),
        ("score bounds", score_bounds),
        ("recovery deadline", recovery_bound),
        ("no-scoring baselines", baselines),
        ("scoring effectiveness", effectiveness),
        ("degraded network", dos),
        ("railway", railway),
        ("smart grid", smart_grid),
        ("bandwidth", bandwidth),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (title, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        report(i + 1, title, &o, start.elapsed());
        if !o.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
