//! Timeliness scores: suspicious-behaviour claims, score updates, flagging and
//! deterministic replica reassignment.

mod exact;
mod montecarlo;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{DigestWriter, NodeId, Signature, Signer, SimDuration, SimTime, TaskId, Verifier};
use crate::recovery::{Blame, FaultClass, FaultRecord, FaultScope};

pub use exact::{long_term_search, max_unflagged_suspicious, short_term_search, ExactScores, LongTermReport, ShortTermReport};
pub use montecarlo::{run_tgs_trial, Compromise, TgsAttack, TgsTrialConfig, TgsTrialResult};

/// Scores at or below this are treated as zero; absorbs rounding in the float recurrence.
pub const SCORE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TgsError {
    #[error("alpha must lie in (0, 1], got {0}")]
    Alpha(f64),
    #[error("beta must be a positive integer")]
    Beta,
    #[error("p_norm must lie strictly between 0 and 1, got {0}")]
    PNorm(f64),
}

/// Score parameters. The maximum and initial score are both 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TgsParams {
    pub alpha: f64,
    pub beta: u32,
    pub p_norm: f64,
}

impl TgsParams {
    pub const S_MAX: f64 = 1.0;

    pub fn new(alpha: f64, beta: u32, p_norm: f64) -> Result<Self, TgsError> {
        let p = TgsParams { alpha, beta, p_norm };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), TgsError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(TgsError::Alpha(self.alpha));
        }
        if self.beta == 0 {
            return Err(TgsError::Beta);
        }
        if !(self.p_norm > 0.0 && self.p_norm < 1.0) {
            return Err(TgsError::PNorm(self.p_norm));
        }
        Ok(())
    }

    pub fn penalty(&self) -> f64 {
        Self::S_MAX / self.beta as f64
    }

    pub fn award(&self) -> f64 {
        self.penalty() * (1.0 - self.p_norm) / (self.alpha * self.p_norm)
    }

    /// Long-run normal fraction below which a node is eventually flagged.
    pub fn min_normal_fraction(&self) -> f64 {
        self.alpha * self.p_norm / (1.0 + (self.alpha - 1.0) * self.p_norm)
    }

    /// Window length in which `beta + k` suspicious events always flag.
    pub fn window(&self, k: u32) -> f64 {
        let k = k as f64;
        self.beta as f64 + k + k * self.alpha * self.p_norm / (1.0 - self.p_norm)
    }

    /// Expected per-round increment of a correct endpoint.
    pub fn expected_drift(&self) -> f64 {
        self.award() * self.p_norm - self.penalty() * (1.0 - self.p_norm)
    }
}

/// One side of a sender/receiver pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub node: NodeId,
    pub task: TaskId,
}

impl Endpoint {
    pub const fn new(node: NodeId, task: TaskId) -> Self {
        Endpoint { node, task }
    }
}

/// A receiver's signed list of pairs whose message missed its deadline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Claim {
    pub claimer: NodeId,
    pub round: u64,
    pub pairs: Vec<(Endpoint, Endpoint)>,
    pub sig: Signature,
}

impl Claim {
    fn digest(claimer: NodeId, round: u64, pairs: &[(Endpoint, Endpoint)]) -> crate::core::Digest {
        let mut w = DigestWriter::new("claim");
        w.u32(claimer.0).u64(round).u64(pairs.len() as u64);
        for (s, r) in pairs {
            w.u32(s.node.0).u32(s.task.0).u32(r.node.0).u32(r.task.0);
        }
        w.finish()
    }

    pub fn build(signer: &Signer, round: u64, pairs: Vec<(Endpoint, Endpoint)>) -> Self {
        let sig = signer.sign_digest(&Self::digest(signer.node(), round, &pairs));
        Claim { claimer: signer.node(), round, pairs, sig }
    }

    pub fn is_valid(&self, verifier: &Verifier) -> bool {
        self.sig.signer == self.claimer && verifier.check(&Self::digest(self.claimer, self.round, &self.pairs), &self.sig)
    }
}

/// Lists every expected message that did not arrive by `sent + deadline`.
pub fn classify_and_claim(
    signer: &Signer,
    receiver: Endpoint,
    round: u64,
    sent: SimTime,
    deadline: SimDuration,
    expected: &[(Endpoint, Option<SimTime>)],
) -> Claim {
    let cutoff = sent + deadline;
    let pairs = expected
        .iter()
        .filter(|(_, arrival)| arrival.is_none_or(|t| t > cutoff))
        .map(|(sender, _)| (*sender, receiver))
        .collect();
    Claim::build(signer, round, pairs)
}

/// Scores per endpoint and flag counters per node, as replicated at every replica.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub params: TgsParams,
    scores: BTreeMap<Endpoint, f64>,
    flags: BTreeMap<NodeId, u32>,
}

impl ScoreTable {
    pub fn new(params: TgsParams) -> Self {
        ScoreTable { params, scores: BTreeMap::new(), flags: BTreeMap::new() }
    }

    pub fn score(&self, e: Endpoint) -> f64 {
        self.scores.get(&e).copied().unwrap_or(TgsParams::S_MAX)
    }

    pub fn flag_count(&self, node: NodeId) -> u32 {
        self.flags.get(&node).copied().unwrap_or(0)
    }

    pub fn flag_counts(&self) -> &BTreeMap<NodeId, u32> {
        &self.flags
    }

    /// Starts a fresh endpoint at the initial score.
    pub fn init(&mut self, e: Endpoint) {
        self.scores.insert(e, TgsParams::S_MAX);
    }

    pub fn remove(&mut self, e: Endpoint) {
        self.scores.remove(&e);
    }

    /// One round over the expected sender/receiver `pairs`. Each pair named in a valid
    /// claim costs both endpoints one penalty; every other pair gives both one award,
    /// capped. Returns endpoints whose score is no longer positive; their nodes' flag
    /// counters are incremented.
    pub fn apply_round(&mut self, pairs: &[(Endpoint, Endpoint)], claims: &[Claim]) -> Vec<Endpoint> {
        let claimed: BTreeSet<(Endpoint, Endpoint)> = claims.iter().flat_map(|c| c.pairs.iter().copied()).collect();
        let (pen, awd) = (self.params.penalty(), self.params.award());
        let mut touched = BTreeSet::new();
        for pair in pairs {
            let bad = claimed.contains(pair);
            for e in [pair.0, pair.1] {
                touched.insert(e);
                let s = self.scores.entry(e).or_insert(TgsParams::S_MAX);
                *s = if bad { *s - pen } else { (*s + awd).min(TgsParams::S_MAX) };
            }
        }
        let flagged: Vec<Endpoint> = touched.into_iter().filter(|e| self.scores[e] <= SCORE_EPS).collect();
        for e in &flagged {
            *self.flags.entry(e.node).or_insert(0) += 1;
        }
        flagged
    }
}

/// Adaptive attacker rule: misbehave on `messages` messages only if the score stays
/// positive afterwards. When `messages` penalties exhaust a full score the strategy never acts.
pub fn adaptive_should_drop(score: f64, params: &TgsParams, messages: usize) -> bool {
    score - messages as f64 * params.penalty() > SCORE_EPS
}

/// Which node runs which task in one region, with per-node slot capacity.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TaskSlots {
    pub capacity: BTreeMap<NodeId, usize>,
    pub assignment: BTreeMap<TaskId, BTreeSet<NodeId>>,
    pub excluded: BTreeSet<NodeId>,
}

impl TaskSlots {
    pub fn load(&self, node: NodeId) -> usize {
        self.assignment.values().filter(|s| s.contains(&node)).count()
    }

    /// Minimum flag counter, then minimum id, among nodes with a free slot that do not
    /// already run `task`. `None` means the region must enter safe mode.
    pub fn select_replacement(&self, task: TaskId, flags: &BTreeMap<NodeId, u32>) -> Option<NodeId> {
        let running = self.assignment.get(&task);
        self.capacity
            .iter()
            .filter(|(n, cap)| {
                !self.excluded.contains(n) && running.is_none_or(|r| !r.contains(n)) && self.load(**n) < **cap
            })
            .map(|(n, _)| (flags.get(n).copied().unwrap_or(0), *n))
            .min()
            .map(|(_, n)| n)
    }

    pub fn reassign(&mut self, task: TaskId, from: NodeId, to: NodeId) {
        let set = self.assignment.entry(task).or_default();
        set.remove(&from);
        set.insert(to);
    }
}

/// A replica's proposal to flag `flagged` on `task` and move it to `replacement`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct FlagProposal {
    pub flagged: NodeId,
    pub task: TaskId,
    pub replacement: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReassignOutcome {
    /// Agreed once `f + 1` proposals match the local one.
    pub agreed: Option<FlagProposal>,
    pub faults: Vec<FaultRecord>,
}

/// Checks the proposals of the other replicas against the locally computed one.
pub fn flag_and_reassign(
    me: NodeId,
    f: usize,
    local: FlagProposal,
    received: &BTreeMap<NodeId, Option<FlagProposal>>,
    at: SimTime,
) -> ReassignOutcome {
    let mut matching = 1;
    let mut faults = Vec::new();
    for (from, p) in received.iter().filter(|(n, _)| **n != me) {
        match p {
            Some(p) if *p == local => matching += 1,
            Some(_) => faults.push(FaultRecord::new(
                at,
                me,
                FaultClass::Commission,
                FaultScope::Intra,
                Blame::Node(*from),
                "mismatching flag proposal",
            )),
            None => faults.push(FaultRecord::new(
                at,
                me,
                FaultClass::Omission,
                FaultScope::Intra,
                Blame::Node(*from),
                "missing flag proposal",
            )),
        }
    }
    ReassignOutcome { agreed: (matching > f).then_some(local), faults }
}

/// One sample of a score time series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreSample {
    pub time: SimTime,
    pub node: NodeId,
    pub task: TaskId,
    pub score: f64,
    pub flagged: bool,
}

/// `time,node,task,score,flagged` rows.
pub fn score_csv(samples: &[ScoreSample]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["time", "node", "task", "score", "flagged"]).expect("in-memory write");
    for s in samples {
        w.write_record([
            s.time.to_string(),
            s.node.to_string(),
            s.task.to_string(),
            format!("{:.9}", s.score),
            s.flagged.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::KeyStore;

    const TAU: TaskId = TaskId(1);

    #[test]
    fn derived_values_for_grid_settings() {
        let p = TgsParams::new(0.2, 3, 0.999).unwrap();
        assert!((p.penalty() - 1.0 / 3.0).abs() < 1e-15);
        // Independent evaluation: (1/3) * 0.001 / (0.2 * 0.999).
        assert!((p.award() - 1.668_335_001_668_335e-3).abs() < 1e-15);
        assert!((p.penalty() / p.award() - 0.2 * 0.999 / 0.001).abs() < 1e-9);
        let unit = TgsParams::new(1.0, 3, 0.999).unwrap();
        assert!((unit.min_normal_fraction() - 0.999).abs() < 1e-15);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert_eq!(TgsParams::new(5.0, 1, 0.999), Err(TgsError::Alpha(5.0)));
        assert_eq!(TgsParams::new(0.5, 0, 0.999), Err(TgsError::Beta));
        assert!(TgsParams::new(0.5, 1, 1.0).is_err());
    }

    #[test]
    fn beta_consecutive_drops_flag_a_fresh_node() {
        let p = TgsParams::new(0.2, 3, 0.999).unwrap();
        let keys = KeyStore::new(1, [NodeId(1), NodeId(2)]);
        let mut table = ScoreTable::new(p);
        let (s, r) = (Endpoint::new(NodeId(1), TAU), Endpoint::new(NodeId(2), TaskId(2)));
        let claim = |round| Claim::build(&keys.signer(NodeId(2)).unwrap(), round, vec![(s, r)]);
        assert!(table.apply_round(&[(s, r)], &[claim(1)]).is_empty());
        assert!(table.apply_round(&[(s, r)], &[claim(2)]).is_empty());
        let flagged = table.apply_round(&[(s, r)], &[claim(3)]);
        assert_eq!(flagged, vec![s, r]);
        assert_eq!(table.flag_count(NodeId(1)), 1);
    }

    #[test]
    fn award_is_capped() {
        let p = TgsParams::new(0.01, 5, 0.9).unwrap();
        let mut table = ScoreTable::new(p);
        let e = Endpoint::new(NodeId(1), TAU);
        let r = Endpoint::new(NodeId(2), TaskId(2));
        for _ in 0..100 {
            table.apply_round(&[(e, r)], &[]);
            assert!(table.score(e) <= TgsParams::S_MAX);
        }
    }

    #[test]
    fn claim_boundary() {
        let keys = KeyStore::new(1, [NodeId(1), NodeId(2)]);
        let s = Endpoint::new(NodeId(1), TAU);
        let r = Endpoint::new(NodeId(2), TaskId(2));
        let sent = SimTime::from_secs_f64(5.0);
        let d = SimDuration::from_millis(40);
        let signer = keys.signer(NodeId(2)).unwrap();
        let just_in = sent + d - SimDuration::from_nanos(1);
        let c = classify_and_claim(&signer, r, 5, sent, d, &[(s, Some(just_in))]);
        assert!(c.pairs.is_empty());
        let c = classify_and_claim(&signer, r, 5, sent, d, &[(s, None)]);
        assert_eq!(c.pairs, vec![(s, r)]);
        assert!(c.is_valid(&keys.verifier()));
    }

    #[test]
    fn replacement_prefers_low_counter_then_low_id() {
        let mut slots = TaskSlots::default();
        for i in 1..=3 {
            slots.capacity.insert(NodeId(i), 1);
        }
        let flags = BTreeMap::from([(NodeId(3), 2)]);
        assert_eq!(slots.select_replacement(TAU, &flags), Some(NodeId(1)));
        let flags = BTreeMap::from([(NodeId(1), 1)]);
        slots.capacity.remove(&NodeId(3));
        assert_eq!(slots.select_replacement(TAU, &flags), Some(NodeId(2)));
        slots.assignment.insert(TaskId(9), BTreeSet::from([NodeId(1), NodeId(2)]));
        assert_eq!(slots.select_replacement(TAU, &flags), None);
    }

    #[test]
    fn deviating_proposal_is_a_fault() {
        let local = FlagProposal { flagged: NodeId(1), task: TAU, replacement: Some(NodeId(3)) };
        let other = FlagProposal { replacement: Some(NodeId(2)), ..local };
        let received = BTreeMap::from([(NodeId(2), Some(local)), (NodeId(4), Some(other)), (NodeId(5), None)]);
        let out = flag_and_reassign(NodeId(1), 1, local, &received, SimTime::ZERO);
        assert_eq!(out.agreed, Some(local));
        assert_eq!(out.faults.len(), 2);
        assert_eq!(out.faults[0].blamed, Blame::Node(NodeId(4)));
        assert_eq!(out.faults[1].class, FaultClass::Omission);
    }

    #[test]
    fn adaptive_rule_examples() {
        let p = TgsParams::new(0.2, 3, 0.999).unwrap();
        let drops = |messages: usize| {
            let mut s = 1.0;
            let mut n = 0;
            while adaptive_should_drop(s, &p, messages) {
                s -= messages as f64 * p.penalty();
                n += 1;
            }
            n
        };
        assert_eq!(drops(1), 2);
        // f = 1: a round costs two penalties, and beta = 3 allows one such round.
        assert_eq!(drops(2), 1);
        // beta <= f + 1: never acts.
        assert_eq!(drops(3), 0);
        let strict = TgsParams::new(0.2, 1, 0.999).unwrap();
        assert!(!adaptive_should_drop(1.0, &strict, 1));
    }

    #[test]
    fn correct_endpoint_drift_is_positive_below_unit_alpha() {
        for alpha in [0.01, 0.2, 0.9] {
            assert!(TgsParams::new(alpha, 3, 0.999).unwrap().expected_drift() > 0.0);
        }
        assert!(TgsParams::new(1.0, 3, 0.999).unwrap().expected_drift().abs() < 1e-15);
    }
}
