//! Message-level execution of one dispute instance over the intra-region network.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::stages::*;
use crate::core::{NodeId, RoundSchedule, Signer, SimDuration, SimTime, TimingParams};
use crate::measure::{AcceptMsg, AcceptValue, LoggedProposal, MeasureCtx, Proposal};
use crate::recovery::{Blame, FaultClass};
use crate::simnet::{NetError, Network};

/// How a participant behaves during the dispute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum DisputeBehavior {
    #[default]
    Correct,
    /// Sends and forwards nothing.
    Silent,
    /// Adds a self-signed proposal below its real minimum to the shared log.
    TamperLog,
    /// Shares an empty log.
    HideLog,
    /// Shares its full log with some peers and an empty one with the rest.
    EquivocateLog,
    /// Sends its honest new accept to one peer and TIMEOUT to the rest.
    EquivocateNewAccept,
    /// Claims a lower latency than any log supports.
    FabricateNewAccept,
}

#[derive(Debug, Clone)]
pub struct Participant {
    pub signer: Signer,
    /// Local schedule of the disputed round (used for the keeper reasonableness filter).
    pub sched: RoundSchedule,
    pub log: Vec<LoggedProposal>,
    pub behavior: DisputeBehavior,
}

#[derive(Debug, Clone)]
pub struct DisputeInput<'a> {
    pub ctx: &'a MeasureCtx,
    pub n: u64,
    pub participants: BTreeMap<NodeId, Participant>,
    /// Each declaration with the peers its declarer actually sent it to.
    pub declarations: Vec<(FaultDeclaration, Vec<NodeId>)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditRecord {
    pub time: SimTime,
    pub node: NodeId,
    pub stage: u8,
    pub event: String,
}

#[derive(Debug, Clone, Default)]
pub struct DisputeOutcome {
    /// Earliest declaration time.
    pub t_dclr: SimTime,
    pub deadline: SimTime,
    /// Participants that saw at least one valid declaration.
    pub engaged: BTreeSet<NodeId>,
    /// Decision and decision time of each engaged participant.
    pub decisions: BTreeMap<NodeId, (AcceptValue, SimTime)>,
    pub blames: BTreeMap<NodeId, BTreeSet<DisputeBlame>>,
    pub audit: Vec<AuditRecord>,
}

impl DisputeOutcome {
    /// Nodes blamed by `detector`.
    pub fn blamed_by(&self, detector: NodeId) -> BTreeSet<NodeId> {
        self.blames.get(&detector).map(|b| b.iter().filter_map(|x| x.blamed.node()).collect()).unwrap_or_default()
    }

    pub fn audit_jsonl(&self) -> String {
        self.audit.iter().map(|r| serde_json::to_string(r).expect("audit record serializes") + "\n").collect()
    }
}

/// One JSON-lines audit entry per dispute incident.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IncidentRecord {
    pub n: u64,
    pub t_dclr: SimTime,
    pub participants: Vec<NodeId>,
    pub blamed: Vec<NodeId>,
    /// Phase 4 values seen by participants before the dispute (`None` for a mismatch).
    pub old_values: BTreeMap<NodeId, Option<AcceptValue>>,
    pub new_values: BTreeMap<NodeId, AcceptValue>,
}

impl IncidentRecord {
    pub fn new(n: u64, out: &DisputeOutcome, old_values: BTreeMap<NodeId, Option<AcceptValue>>) -> Self {
        let blamed: BTreeSet<NodeId> = out.blames.keys().flat_map(|d| out.blamed_by(*d)).collect();
        IncidentRecord {
            n,
            t_dclr: out.t_dclr,
            participants: out.engaged.iter().copied().collect(),
            blamed: blamed.into_iter().collect(),
            old_values,
            new_values: out.decisions.iter().map(|(k, (v, _))| (*k, *v)).collect(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("incident record serializes") + "\n"
    }
}

/// Latest decision time for a dispute whose first declaration is sent at `t_dclr`.
pub fn dispute_deadline(p: &TimingParams, t_dclr: SimTime) -> SimTime {
    t_dclr + p.intra_delay * 5 + p.dclr_validate_exec + p.log_exchange_exec + p.log_validate_exec + p.decide_exec
}

struct Copy<T> {
    msg: T,
    at: SimTime,
    forwarded: bool,
}

fn lower_latency(log: &[LoggedProposal]) -> Option<&LoggedProposal> {
    log.iter().min_by_key(|l| l.prop.latency)
}

/// Runs one dispute. Stage instants are anchored at the earliest declaration; every
/// intra-region send samples `net`.
pub fn run_dispute(input: &DisputeInput<'_>, net: &mut Network) -> Result<DisputeOutcome, NetError> {
    let ctx = input.ctx;
    let p = &ctx.params;
    let d = p.intra_delay;
    let nodes: Vec<NodeId> = input.participants.keys().copied().collect();
    let behavior = |v: NodeId| input.participants.get(&v).map_or(DisputeBehavior::Silent, |x| x.behavior);
    let mut out = DisputeOutcome::default();
    let Some(t_dclr) = input.declarations.iter().map(|(dc, _)| dc.ts).min() else {
        return Ok(out);
    };
    out.t_dclr = t_dclr;
    out.deadline = dispute_deadline(p, t_dclr);
    let mut audit = Vec::new();

    // Stage 1 and 2: direct delivery, forwarding on first timely receipt.
    let mut held: BTreeMap<NodeId, Vec<Copy<FaultDeclaration>>> = BTreeMap::new();
    for (decl, recipients) in &input.declarations {
        rec(&mut audit, decl.ts, decl.declarer, 1, format!("declare against {} ({})", decl.offending.sender, decl.offending.value));
        held.entry(decl.declarer).or_default().push(Copy { msg: decl.clone(), at: decl.ts, forwarded: false });
        for r in recipients.iter().filter(|r| **r != decl.declarer && nodes.contains(r)) {
            if let Some(at) = net.send(decl.declarer, *r, decl.ts)?.time() {
                held.entry(*r).or_default().push(Copy { msg: decl.clone(), at, forwarded: false });
            }
        }
    }
    let mut forwards = Vec::new();
    for (z, copies) in &held {
        if behavior(*z) == DisputeBehavior::Silent {
            continue;
        }
        let mut seen = BTreeSet::new();
        for c in copies.iter().filter(|c| c.msg.declarer != *z && c.at <= c.msg.ts + d) {
            if seen.insert(c.msg.digest()) {
                for r in nodes.iter().filter(|r| **r != *z && **r != c.msg.declarer) {
                    if let Some(at) = net.send(*z, *r, c.at)?.time() {
                        forwards.push((*r, Copy { msg: c.msg.clone(), at, forwarded: true }));
                    }
                }
            }
        }
    }
    for (r, c) in forwards {
        held.entry(r).or_default().push(c);
    }

    let mut offending: BTreeMap<NodeId, Vec<AcceptMsg>> = BTreeMap::new();
    for z in &nodes {
        let blames = out.blames.entry(*z).or_default();
        let mut by_decl: BTreeMap<_, (FaultDeclaration, bool)> = BTreeMap::new();
        for c in held.get(z).into_iter().flatten() {
            let in_time = if c.forwarded { c.at <= c.msg.ts + d * 2 } else { c.at <= c.msg.ts + d };
            if in_time {
                let e = by_decl.entry(c.msg.digest()).or_insert((c.msg.clone(), false));
                e.1 |= !c.forwarded;
            }
        }
        for (decl, direct) in by_decl.values() {
            if !direct {
                blames.insert(DisputeBlame {
                    blamed: Blame::Node(decl.declarer),
                    class: FaultClass::Omission,
                    rule: BlameRule::DeclarationOnlyForwarded,
                });
            }
            match stage2_validate(ctx, decl) {
                DeclarationVerdict::Valid => {
                    out.engaged.insert(*z);
                    let list = offending.entry(*z).or_default();
                    list.push(decl.offending.clone());
                    if let Evidence::Accept(a) = &decl.evidence {
                        list.push(a.clone());
                    }
                }
                verdict => {
                    blames.insert(DisputeBlame {
                        blamed: Blame::Node(decl.declarer),
                        class: FaultClass::Commission,
                        rule: BlameRule::InvalidDeclaration,
                    });
                    rec(&mut audit, decl.ts + d * 2, *z, 2, format!("reject declaration by {}: {verdict:?}", decl.declarer));
                }
            }
        }
    }
    let engaged: Vec<NodeId> = out.engaged.iter().copied().collect();

    // Stage 3: log exchange among engaged participants.
    let s1 = t_dclr + d * 2 + p.dclr_validate_exec + p.log_exchange_exec;
    let mut received_logs: BTreeMap<NodeId, BTreeMap<NodeId, ProposalLog>> = BTreeMap::new();
    for v in &engaged {
        let part = &input.participants[v];
        let honest = build_log(ctx, &part.signer, &part.sched, &part.log);
        received_logs.entry(*v).or_default().insert(*v, honest.clone());
        let empty = ProposalLog { owner: *v, n: input.n, entries: Vec::new() };
        for (i, r) in engaged.iter().filter(|r| *r != v).enumerate() {
            let log = match part.behavior {
                DisputeBehavior::Silent => continue,
                DisputeBehavior::HideLog => empty.clone(),
                DisputeBehavior::EquivocateLog if i % 2 == 1 => empty.clone(),
                DisputeBehavior::TamperLog => tampered_log(ctx, part, &honest),
                _ => honest.clone(),
            };
            if let Some(at) = net.send(*v, *r, s1)?.time() {
                if at <= s1 + d {
                    received_logs.entry(*r).or_default().insert(*v, log);
                }
            }
        }
    }
    let mut choices: BTreeMap<NodeId, Option<Choice>> = BTreeMap::new();
    for z in &engaged {
        let logs = received_logs.remove(z).unwrap_or_default();
        let res = stage3_cross_validate(ctx, *z, &logs, &engaged, offending.get(z).map_or(&[][..], |v| &v[..]));
        rec(&mut audit, s1 + d, *z, 3, format!("{} logs, choice {:?}", logs.len(), res.choice.as_ref().map(|c| (c.up, c.down, c.latency))));
        out.blames.entry(*z).or_default().extend(res.blames);
        choices.insert(*z, res.choice);
    }

    // Stage 4: new accepts, forwarded once on timely direct receipt.
    let s2 = s1 + d + p.log_validate_exec;
    let mut na_copies: BTreeMap<NodeId, Vec<Copy<NewAccept>>> = BTreeMap::new();
    for v in &engaged {
        let part = &input.participants[v];
        let honest = NewAccept::build(&part.signer, input.n, choices[v].clone());
        na_copies.entry(*v).or_default().push(Copy { msg: honest.clone(), at: s2, forwarded: false });
        for (i, r) in engaged.iter().filter(|r| *r != v).enumerate() {
            let msg = match part.behavior {
                DisputeBehavior::Silent => continue,
                DisputeBehavior::EquivocateNewAccept if i > 0 => NewAccept::build(&part.signer, input.n, None),
                DisputeBehavior::FabricateNewAccept => fabricated_new_accept(part, input.n, &honest),
                _ => honest.clone(),
            };
            if let Some(at) = net.send(*v, *r, s2)?.time() {
                na_copies.entry(*r).or_default().push(Copy { msg, at, forwarded: false });
            }
        }
    }
    let mut fwd = Vec::new();
    for (z, copies) in &na_copies {
        if behavior(*z) == DisputeBehavior::Silent {
            continue;
        }
        for c in copies.iter().filter(|c| c.msg.sender != *z && c.at <= s2 + d) {
            for r in engaged.iter().filter(|r| **r != *z && **r != c.msg.sender) {
                if let Some(at) = net.send(*z, *r, c.at)?.time() {
                    fwd.push((*r, Copy { msg: c.msg.clone(), at, forwarded: true }));
                }
            }
        }
    }
    for (r, c) in fwd {
        na_copies.entry(r).or_default().push(c);
    }
    for z in &engaged {
        let mut by_sender: BTreeMap<NodeId, Vec<NewAccept>> = BTreeMap::new();
        let mut last = s2;
        for c in na_copies.get(z).into_iter().flatten() {
            let limit = if c.forwarded { s2 + d * 2 } else { s2 + d };
            if c.at <= limit {
                last = last.max(c.at);
                let list = by_sender.entry(c.msg.sender).or_default();
                if !list.contains(&c.msg) {
                    list.push(c.msg.clone());
                }
            }
        }
        // Missing or partial copies mean waiting for the full forwarding window.
        let complete = engaged.iter().all(|v| by_sender.contains_key(v))
            && na_copies.get(z).map_or(0, |c| c.len()) > (engaged.len() - 1) * (engaged.len() - 1);
        let ready = if complete { last } else { s2 + d * 2 };
        let res = stage4_decide_new(ctx, &by_sender, &engaged);
        let at = ready + p.decide_exec;
        rec(&mut audit, at, *z, 4, format!("decide {}", res.decided));
        out.decisions.insert(*z, (res.decided, at));
        out.blames.entry(*z).or_default().extend(res.blames);
    }
    out.audit = audit;
    Ok(out)
}

fn rec(audit: &mut Vec<AuditRecord>, time: SimTime, node: NodeId, stage: u8, event: String) {
    audit.push(AuditRecord { time, node, stage, event });
}

fn tampered_log(ctx: &MeasureCtx, part: &Participant, honest: &ProposalLog) -> ProposalLog {
    let Some(base) = lower_latency(&part.log) else { return honest.clone() };
    let fake_latency = base.prop.latency.saturating_sub(SimDuration::from_millis(1));
    let fake = Proposal::build(&part.signer, base.prop.n, fake_latency, base.prop.hb.clone());
    let mut log = honest.clone();
    if ctx.proposal_valid(&fake) {
        log.entries.push(LogEntry::new(&part.signer, fake, base.at));
    }
    log
}

fn fabricated_new_accept(part: &Participant, n: u64, honest: &NewAccept) -> NewAccept {
    let Some(base) = lower_latency(&part.log) else { return honest.clone() };
    let latency = base.prop.latency.saturating_sub(SimDuration::from_millis(5));
    let fake = Proposal::build(&part.signer, n, latency, base.prop.hb.clone());
    let support = vec![LogEntry::new(&part.signer, fake.clone(), base.at)];
    NewAccept::build(&part.signer, n, Some(Choice { up: fake.upstream(), down: fake.proposer, latency, support }))
}
