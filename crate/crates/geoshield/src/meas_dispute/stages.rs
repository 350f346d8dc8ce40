//! Dispute messages and the four per-node stage procedures.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::core::{Digest, DigestWriter, NodeId, RoundSchedule, Signature, Signer, SimDuration, SimTime, Verifier};
use crate::measure::{AcceptMsg, AcceptValue, LoggedProposal, MeasureCtx, Proposal};
use crate::recovery::{Blame, FaultClass};

/// What the declarer holds as its own view of the accepted value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Evidence {
    /// A measurer's proposal behind its accepted value.
    Proposal(Proposal),
    /// A signed accept the declarer trusts (its own TIMEOUT accept, or a peer's accept at a log keeper).
    Accept(AcceptMsg),
}

impl Evidence {
    pub fn value(&self, inter_jitter: SimDuration) -> AcceptValue {
        match self {
            Evidence::Proposal(p) => AcceptValue::Latency(p.latency + inter_jitter),
            Evidence::Accept(a) => a.value,
        }
    }

    fn digest(&self) -> Digest {
        match self {
            Evidence::Proposal(p) => p.digest(),
            Evidence::Accept(a) => a.digest(),
        }
    }

    fn signature_ok(&self, ctx: &MeasureCtx) -> bool {
        match self {
            Evidence::Proposal(p) => ctx.proposal_valid(p),
            Evidence::Accept(a) => ctx.is_measurer(a.sender) && a.is_valid(&ctx.verifier),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultDeclaration {
    pub declarer: NodeId,
    pub n: u64,
    pub ts: SimTime,
    pub evidence: Evidence,
    pub offending: AcceptMsg,
    pub sig: Signature,
}

impl FaultDeclaration {
    fn body(declarer: NodeId, n: u64, ts: SimTime, evidence: &Evidence, offending: &AcceptMsg) -> Digest {
        let mut w = DigestWriter::new("dclr");
        w.u32(declarer.0).u64(n).u64(ts.as_nanos()).digest(&evidence.digest()).digest(&offending.digest());
        w.finish()
    }

    pub fn digest(&self) -> Digest {
        Self::body(self.declarer, self.n, self.ts, &self.evidence, &self.offending)
    }
}

/// Stage 1: sign a declaration against `offending`.
pub fn stage1_declare(signer: &Signer, n: u64, ts: SimTime, evidence: Evidence, offending: AcceptMsg) -> FaultDeclaration {
    let body = FaultDeclaration::body(signer.node(), n, ts, &evidence, &offending);
    FaultDeclaration { declarer: signer.node(), n, ts, evidence, offending, sig: signer.sign_digest(&body) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeclarationVerdict {
    Valid,
    BadSignature,
    /// The two embedded values agree, so the declaration should not have been sent.
    EqualValues,
}

/// Stage 2 validity check (forwarding is handled by the caller).
pub fn stage2_validate(ctx: &MeasureCtx, decl: &FaultDeclaration) -> DeclarationVerdict {
    let outer_ok = decl.sig.signer == decl.declarer && ctx.verifier.check(&decl.digest(), &decl.sig);
    let inner_ok = decl.evidence.signature_ok(ctx)
        && ctx.is_measurer(decl.offending.sender)
        && decl.offending.is_valid(&ctx.verifier)
        && decl.offending.n == decl.n;
    if !outer_ok || !inner_ok {
        return DeclarationVerdict::BadSignature;
    }
    if decl.evidence.value(ctx.params.inter_jitter) == decl.offending.value {
        return DeclarationVerdict::EqualValues;
    }
    DeclarationVerdict::Valid
}

/// One proposal in a shared log, countersigned by the log's owner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub holder: NodeId,
    pub prop: Proposal,
    pub at: SimTime,
    pub holder_sig: Signature,
}

impl LogEntry {
    fn body(holder: NodeId, prop: &Proposal) -> Digest {
        let mut w = DigestWriter::new("log-entry");
        w.u32(holder.0).digest(&prop.digest());
        w.finish()
    }

    pub fn new(signer: &Signer, prop: Proposal, at: SimTime) -> Self {
        let holder_sig = signer.sign_digest(&Self::body(signer.node(), &prop));
        LogEntry { holder: signer.node(), prop, at, holder_sig }
    }

    pub fn holder_ok(&self, verifier: &Verifier) -> bool {
        self.holder_sig.signer == self.holder && verifier.check(&Self::body(self.holder, &self.prop), &self.holder_sig)
    }

    /// `(upstream, proposer)` pair this entry measures.
    pub fn pair(&self) -> (NodeId, NodeId) {
        (self.prop.upstream(), self.prop.proposer)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalLog {
    pub owner: NodeId,
    pub n: u64,
    pub entries: Vec<LogEntry>,
}

/// Builds the log a node shares in stage 3. Log keepers first drop proposals that fail
/// the Phase 3a reasonableness test at their recorded receive time.
pub fn build_log(ctx: &MeasureCtx, signer: &Signer, sched: &RoundSchedule, held: &[LoggedProposal]) -> ProposalLog {
    let keeper = !ctx.is_measurer(signer.node());
    let entries = held
        .iter()
        .filter(|l| l.prop.n == sched.n && ctx.proposal_valid(&l.prop))
        .filter(|l| !keeper || l.prop.latency >= ctx.d_min(sched, l.at))
        .map(|l| LogEntry::new(signer, l.prop.clone(), l.at))
        .collect();
    ProposalLog { owner: signer.node(), n: sched.n, entries }
}

/// A blame raised by one node during the dispute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DisputeBlame {
    pub blamed: Blame,
    pub class: FaultClass,
    pub rule: BlameRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BlameRule {
    InvalidDeclaration,
    DeclarationOnlyForwarded,
    MissingLog,
    InvalidLogEntry,
    AcceptMismatchesLog,
    ProposalEquivocation,
    ProposalWithheld,
    MissingNewAccept,
    NewAcceptEquivocation,
    InvalidNewAccept,
}

/// The chosen minimum pair and its supporting entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub up: NodeId,
    pub down: NodeId,
    pub latency: SimDuration,
    pub support: Vec<LogEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewAccept {
    pub sender: NodeId,
    pub n: u64,
    /// `None` decides TIMEOUT: no pair had enough support.
    pub choice: Option<Choice>,
    pub sig: Signature,
}

impl NewAccept {
    fn body(sender: NodeId, n: u64, choice: &Option<Choice>) -> Digest {
        let mut w = DigestWriter::new("new-acc");
        w.u32(sender.0).u64(n);
        match choice {
            None => {
                w.u8(0);
            }
            Some(c) => {
                w.u8(1).u32(c.up.0).u32(c.down.0).u64(c.latency.as_nanos()).u64(c.support.len() as u64);
                for e in &c.support {
                    w.u32(e.holder.0).digest(&e.prop.digest()).digest(&e.holder_sig.tag);
                }
            }
        }
        w.finish()
    }

    pub fn build(signer: &Signer, n: u64, choice: Option<Choice>) -> Self {
        let sig = signer.sign_digest(&Self::body(signer.node(), n, &choice));
        NewAccept { sender: signer.node(), n, choice, sig }
    }

    pub fn signature_ok(&self, verifier: &Verifier) -> bool {
        self.sig.signer == self.sender && verifier.check(&Self::body(self.sender, self.n, &self.choice), &self.sig)
    }

    /// Signed, and a latency choice carries `f + 1` distinct holders of one valid proposal.
    pub fn is_valid(&self, ctx: &MeasureCtx) -> bool {
        if !self.signature_ok(&ctx.verifier) {
            return false;
        }
        let Some(c) = &self.choice else { return true };
        let participants = ctx.region_nodes();
        let mut holders = BTreeSet::new();
        for e in &c.support {
            let matches = e.pair() == (c.up, c.down) && e.prop.latency == c.latency && e.prop.n == self.n;
            if matches && participants.contains(&e.holder) && e.holder_ok(&ctx.verifier) && ctx.proposal_valid(&e.prop) {
                holders.insert(e.holder);
            }
        }
        holders.len() > ctx.f_down
    }

    pub fn value(&self, inter_jitter: SimDuration) -> AcceptValue {
        match &self.choice {
            Some(c) => AcceptValue::Latency(c.latency + inter_jitter),
            None => AcceptValue::Timeout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Stage3Result {
    pub blames: BTreeSet<DisputeBlame>,
    pub choice: Option<Choice>,
}

/// Stage 3 at node `me` over the logs it received (its own included).
pub fn stage3_cross_validate(
    ctx: &MeasureCtx,
    me: NodeId,
    logs: &BTreeMap<NodeId, ProposalLog>,
    expected: &[NodeId],
    offending: &[AcceptMsg],
) -> Stage3Result {
    let mut out = Stage3Result::default();
    let mut blame = |blamed: NodeId, class: FaultClass, rule: BlameRule| {
        out.blames.insert(DisputeBlame { blamed: Blame::Node(blamed), class, rule });
    };
    for v in expected {
        if *v != me && !logs.contains_key(v) {
            blame(*v, FaultClass::Omission, BlameRule::MissingLog);
        }
    }
    // Valid entries per log owner.
    let mut valid: BTreeMap<NodeId, Vec<&LogEntry>> = BTreeMap::new();
    for (owner, log) in logs {
        let mut kept = Vec::new();
        for e in &log.entries {
            if e.holder == *owner && e.holder_ok(&ctx.verifier) && ctx.proposal_valid(&e.prop) && e.prop.n == log.n {
                kept.push(e);
            } else {
                blame(*owner, FaultClass::Commission, BlameRule::InvalidLogEntry);
            }
        }
        valid.insert(*owner, kept);
    }
    for acc in offending {
        let Some(entries) = valid.get(&acc.sender) else { continue };
        let expected_value = entries
            .iter()
            .map(|e| e.prop.latency)
            .min()
            .map_or(AcceptValue::Timeout, |d| AcceptValue::Latency(d + ctx.params.inter_jitter));
        if expected_value != acc.value {
            blame(acc.sender, FaultClass::Commission, BlameRule::AcceptMismatchesLog);
        }
    }
    // Per pair: distinct latencies and the set of logs holding it.
    let mut values: BTreeMap<(NodeId, NodeId), BTreeSet<SimDuration>> = BTreeMap::new();
    let mut holders: BTreeMap<(NodeId, NodeId), BTreeMap<NodeId, &LogEntry>> = BTreeMap::new();
    for (owner, entries) in &valid {
        for e in entries {
            values.entry(e.pair()).or_default().insert(e.prop.latency);
            holders.entry(e.pair()).or_default().entry(*owner).or_insert(e);
        }
    }
    let own_pairs: BTreeSet<(NodeId, NodeId)> =
        valid.get(&me).map(|es| es.iter().map(|e| e.pair()).collect()).unwrap_or_default();
    for (pair, vals) in &values {
        if vals.len() > 1 {
            blame(pair.1, FaultClass::Commission, BlameRule::ProposalEquivocation);
        }
        if !own_pairs.contains(pair) {
            blame(pair.1, FaultClass::Omission, BlameRule::ProposalWithheld);
        }
    }
    let best = holders
        .iter()
        .filter(|(pair, hs)| values[*pair].len() == 1 && hs.len() > ctx.f_down)
        .map(|(pair, hs)| (*values[pair].iter().next().unwrap(), *pair, hs))
        .min_by_key(|(lat, pair, _)| (*lat, *pair));
    out.choice = best.map(|(latency, (up, down), hs)| Choice {
        up,
        down,
        latency,
        support: hs.values().take(ctx.f_down + 1).map(|e| (*e).clone()).collect(),
    });
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage4Result {
    pub decided: AcceptValue,
    pub blames: BTreeSet<DisputeBlame>,
}

/// Stage 4: `copies` holds every copy of each sender's new accept that arrived in time.
pub fn stage4_decide_new(ctx: &MeasureCtx, copies: &BTreeMap<NodeId, Vec<NewAccept>>, expected: &[NodeId]) -> Stage4Result {
    let mut blames = BTreeSet::new();
    let mut latencies = Vec::new();
    for v in expected {
        let Some(cs) = copies.get(v).filter(|c| !c.is_empty()) else {
            blames.insert(DisputeBlame { blamed: Blame::Node(*v), class: FaultClass::Omission, rule: BlameRule::MissingNewAccept });
            continue;
        };
        if cs.iter().any(|c| c != &cs[0]) {
            blames.insert(DisputeBlame {
                blamed: Blame::Node(*v),
                class: FaultClass::Commission,
                rule: BlameRule::NewAcceptEquivocation,
            });
            continue;
        }
        if cs[0].sender != *v || !cs[0].is_valid(ctx) {
            blames.insert(DisputeBlame { blamed: Blame::Node(*v), class: FaultClass::Commission, rule: BlameRule::InvalidNewAccept });
            continue;
        }
        if let Some(c) = &cs[0].choice {
            latencies.push(c.latency);
        }
    }
    let decided = latencies
        .into_iter()
        .min()
        .map_or(AcceptValue::Timeout, |d| AcceptValue::Latency(d + ctx.params.inter_jitter));
    Stage4Result { decided, blames }
}
