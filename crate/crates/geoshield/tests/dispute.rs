use std::collections::{BTreeMap, BTreeSet};

use geoshield::core::{NodeId, SimDuration, TimingParams};
use geoshield::meas_dispute::DisputeBehavior;
use geoshield::measure::{run_measurement, MeasureBehavior, MeasureConfig, MeasureRun};
use geoshield::simnet::InterLinkModel;

fn blamed_per_detector(run: &MeasureRun, n: u64) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
    let mut out: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for (_, f) in run.faults.iter().filter(|(r, _)| *r == n) {
        if let Some(b) = f.blamed.node() {
            out.entry(f.detector).or_default().insert(b);
        }
    }
    out
}

#[test]
fn every_accept_equivocation_pattern_blames_exactly_the_equivocator() {
    // f = 1 downstream: two measurers and one log keeper; the faulty measurer picks one of
    // five actions per recipient.
    let mut checked = 0;
    for faulty_idx in 0..2 {
        for code in 0..25u32 {
            let mut cfg = MeasureConfig::new(TimingParams::default(), 1, 1, 100 + code as u64);
            cfg.inter = InterLinkModel::default();
            let eq = cfg.down_nodes()[faulty_idx];
            cfg.behaviors.insert(eq, MeasureBehavior::AcceptPattern(code));
            let run = run_measurement(&cfg, 1..2).unwrap();
            let s = &run.summaries[0];
            assert!(s.agreement, "pattern {code}: {s:?}");
            assert!(s.dispute_in_time && s.from_valid_proposal, "pattern {code}: {s:?}");
            let blamed = blamed_per_detector(&run, 1);
            let correct: Vec<NodeId> =
                cfg.down_nodes().into_iter().chain(cfg.keeper_nodes()).filter(|v| *v != eq).collect();
            // Recipient order is the region order without the equivocator.
            let digits = [code % 5, code / 5];
            let conflicting = digits.iter().any(|d| (1..=3).contains(d));
            for (i, c) in correct.iter().enumerate() {
                let got = blamed.get(c).cloned().unwrap_or_default();
                // A pure omission is visible only to the node that missed the accept;
                // any conflicting value reaches every correct node through the dispute.
                let expect_blame = conflicting || digits[i] == 4;
                if expect_blame {
                    assert_eq!(got, BTreeSet::from([eq]), "pattern {code}: detector {c}");
                } else {
                    assert!(got.is_empty(), "pattern {code}: {c} blamed {got:?}");
                }
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 50);
}

#[test]
fn majority_soundness_under_log_attacks() {
    let attacks = [
        DisputeBehavior::Silent,
        DisputeBehavior::TamperLog,
        DisputeBehavior::HideLog,
        DisputeBehavior::EquivocateNewAccept,
        DisputeBehavior::FabricateNewAccept,
    ];
    for f in 1..=2usize {
        for (k, attack) in attacks.iter().enumerate() {
            let mut cfg = MeasureConfig::new(TimingParams::default(), 1, f, 500 + (f * 10 + k) as u64);
            let region: Vec<NodeId> = cfg.down_nodes().into_iter().chain(cfg.keeper_nodes()).collect();
            // An equivocating measurer triggers the dispute; up to f - 1 more nodes attack the logs.
            let trigger = cfg.down_nodes()[0];
            cfg.behaviors.insert(trigger, MeasureBehavior::EquivocateAccept(SimDuration::from_millis(7)));
            cfg.dispute.insert(trigger, *attack);
            for extra in region.iter().rev().take(f - 1) {
                cfg.dispute.insert(*extra, *attack);
            }
            let faulty: BTreeSet<NodeId> = cfg.dispute.keys().copied().collect();
            let run = run_measurement(&cfg, 1..6).unwrap();
            for s in &run.summaries {
                assert!(s.agreement && s.dispute_in_time && s.from_valid_proposal, "f={f} {attack:?}: {s:?}");
                let blamed = blamed_per_detector(&run, s.n);
                let correct: Vec<NodeId> = region.iter().copied().filter(|v| !faulty.contains(v)).collect();
                let reference = blamed.get(&correct[0]).cloned().unwrap_or_default();
                assert!(reference.contains(&trigger), "f={f} {attack:?}: {reference:?}");
                for c in &correct {
                    let got = blamed.get(c).cloned().unwrap_or_default();
                    assert!(got.is_subset(&faulty), "correct node blamed: f={f} {attack:?} {got:?}");
                    assert_eq!(got, reference, "f={f} {attack:?}");
                }
            }
        }
    }
}

#[test]
fn randomized_network_disputes_meet_deadline() {
    for seed in 0..20 {
        let mut cfg = MeasureConfig::new(TimingParams::default(), 2, 2, seed);
        cfg.behaviors.insert(cfg.down_nodes()[1], MeasureBehavior::EquivocateAccept(SimDuration::from_millis(3)));
        cfg.behaviors.insert(cfg.up_nodes()[0], MeasureBehavior::EarlyHeartbeat);
        let run = run_measurement(&cfg, 1..11).unwrap();
        for s in &run.summaries {
            assert!(s.agreement && s.dispute_in_time && s.from_valid_proposal, "seed {seed}: {s:?}");
        }
        for inc in &run.incidents {
            assert!(inc.to_json_line().contains("\"t_dclr\""));
        }
    }
}
