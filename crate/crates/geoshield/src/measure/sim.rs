//! Event-driven simulation of one directed measurement relation over many rounds.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use super::msg::{AcceptMsg, AcceptValue, Heartbeat, Proposal, SigShare};
use super::state::{DecideOutcome, HeartbeatOutcome, MeasureCtx, ProposalOutcome, RoundState};
use crate::core::{
    digest_of, early_bound, round_schedule, Digest, KeyStore, NodeId, RegionId, RoundSchedule, Signer, SimDuration,
    SimTime, TimeError, TimingParams,
};
use crate::meas_dispute::{
    run_dispute, stage1_declare, DisputeBehavior, DisputeInput, Evidence, FaultDeclaration, IncidentRecord, Participant,
};
use crate::recovery::{Blame, FaultClass, FaultRecord, FaultScope};
use crate::simnet::{stream_rng, ClockModel, EventQueue, InterLinkModel, IntraLinkModel, NetError, Network, SimError, Trace, TrialRng};

pub const UPSTREAM: RegionId = RegionId(0);
pub const DOWNSTREAM: RegionId = RegionId(1);

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Time(#[from] TimeError),
    #[error("round {0} starts before the previous round has finished")]
    Overlap(u64),
}

/// Phase-level behaviour of one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum MeasureBehavior {
    #[default]
    Correct,
    /// Sends nothing at all.
    Silent,
    /// Upstream: sends the heartbeat as soon as enough signatures are in hand.
    EarlyHeartbeat,
    /// Upstream: sends the heartbeat this much after the send instant.
    LateHeartbeat(SimDuration),
    /// Upstream: contributes an unverifiable signature share.
    GarbageSignature,
    /// Downstream: proposes the measured latency minus this amount, with no build delay.
    LowProposal(SimDuration),
    /// Downstream: sends its accept value plus this amount to every other recipient.
    EquivocateAccept(SimDuration),
    /// Downstream: sends proposals to log keepers only.
    SelectiveProposal,
    /// Downstream: declares a dispute using two accepts that agree.
    FalseDeclaration,
    /// Downstream: base-5 digit `i` picks what recipient `i` gets: honest, +5 ms, -5 ms,
    /// TIMEOUT, or nothing.
    AcceptPattern(u32),
}

fn patterned(code: u32, i: usize, honest: AcceptValue) -> Option<AcceptValue> {
    let shift = SimDuration::from_millis(5);
    match (code / 5u32.pow(i as u32)) % 5 {
        0 => Some(honest),
        1 => Some(AcceptValue::Latency(honest.latency().unwrap_or(SimDuration::ZERO) + shift)),
        2 => Some(AcceptValue::Latency(honest.latency().map_or(shift, |d| d.saturating_sub(shift)))),
        3 => Some(AcceptValue::Timeout),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct MeasureConfig {
    pub params: TimingParams,
    pub f_up: usize,
    pub f_down: usize,
    pub inter: InterLinkModel,
    pub seed: u64,
    pub behaviors: BTreeMap<NodeId, MeasureBehavior>,
    pub dispute: BTreeMap<NodeId, DisputeBehavior>,
    /// Fixed clock offsets in ns; drawn within the skew bound when `None`.
    pub clock_offsets: Option<BTreeMap<NodeId, i64>>,
    /// Faulty upstream measurers hand their signature shares to an early-heartbeat sender
    /// at the start of the round.
    pub collude: bool,
    pub trace: bool,
    /// Fault records kept verbatim; the rest are only counted.
    pub keep_faults: usize,
}

impl MeasureConfig {
    pub fn new(params: TimingParams, f_up: usize, f_down: usize, seed: u64) -> Self {
        MeasureConfig {
            params,
            f_up,
            f_down,
            inter: InterLinkModel::default(),
            seed,
            behaviors: BTreeMap::new(),
            dispute: BTreeMap::new(),
            clock_offsets: None,
            collude: true,
            trace: false,
            keep_faults: 10_000,
        }
    }

    pub fn up_nodes(&self) -> Vec<NodeId> {
        (0..=self.f_up as u32).map(NodeId).collect()
    }

    pub fn down_nodes(&self) -> Vec<NodeId> {
        let base = self.f_up as u32 + 1;
        (base..=base + self.f_down as u32).map(NodeId).collect()
    }

    pub fn keeper_nodes(&self) -> Vec<NodeId> {
        let base = self.f_up as u32 + self.f_down as u32 + 2;
        (base..base + self.f_down as u32).map(NodeId).collect()
    }

    pub fn all_nodes(&self) -> Vec<NodeId> {
        let mut v = self.up_nodes();
        v.extend(self.down_nodes());
        v.extend(self.keeper_nodes());
        v
    }

    pub fn behavior(&self, node: NodeId) -> MeasureBehavior {
        self.behaviors.get(&node).copied().unwrap_or_default()
    }

    fn dispute_behavior(&self, node: NodeId) -> DisputeBehavior {
        match self.behavior(node) {
            MeasureBehavior::Silent => DisputeBehavior::Silent,
            _ => self.dispute.get(&node).copied().unwrap_or_default(),
        }
    }

    pub fn is_correct(&self, node: NodeId) -> bool {
        self.behavior(node) == MeasureBehavior::Correct && self.dispute_behavior(node) == DisputeBehavior::Correct
    }

    fn intra(&self) -> IntraLinkModel {
        IntraLinkModel { delay: self.params.intra_delay, spread: self.params.intra_spread }
    }
}

/// Outcome of one round as seen by the correct downstream nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoundSummary {
    pub n: u64,
    pub t_send: SimTime,
    /// Base latency plus the normal jitter spread at the send instant.
    pub d_real: SimDuration,
    /// Common final value of the correct nodes, if they agree.
    pub decided: Option<AcceptValue>,
    pub agreement: bool,
    pub dispute: bool,
    /// Every correct dispute decision met the stage-4 deadline.
    pub dispute_in_time: bool,
    /// The decided latency equals a proposal held by a correct node (TIMEOUT counts as true).
    pub from_valid_proposal: bool,
    pub faults: usize,
    /// True send time of the earliest heartbeat that passed validation.
    pub earliest_valid_hb: Option<SimTime>,
}

#[derive(Debug, Default)]
pub struct MeasureRun {
    pub summaries: Vec<RoundSummary>,
    pub faults: Vec<(u64, FaultRecord)>,
    pub fault_count: usize,
    pub incidents: Vec<IncidentRecord>,
    pub trace: Trace,
}

impl MeasureRun {
    /// `round,region_pair,decided,dispute,faults` rows.
    pub fn summaries_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["round", "region_pair", "decided", "dispute", "faults"]).expect("in-memory write");
        for s in &self.summaries {
            let decided = s.decided.map_or("NONE".to_string(), |v| v.to_string());
            w.write_record([
                s.n.to_string(),
                format!("{UPSTREAM}->{DOWNSTREAM}"),
                decided,
                s.dispute.to_string(),
                s.faults.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn incidents_jsonl(&self) -> String {
        self.incidents.iter().map(|i| i.to_json_line()).collect()
    }
}

#[derive(Debug, Clone)]
enum Ev {
    SigStart(NodeId),
    SigArrive { to: NodeId, from: NodeId, share: SigShare },
    HbSend(NodeId),
    HbEmit(NodeId),
    HbArrive { to: NodeId, hb: Heartbeat },
    PropEmit { node: NodeId, latency: SimDuration, hb: Heartbeat },
    PropArrive { to: NodeId, prop: Proposal },
    AcceptSend(NodeId),
    AcceptArrive { to: NodeId, acc: AcceptMsg },
    Decide(NodeId),
    Finalize,
}

struct Round {
    sched: RoundSchedule,
    states: BTreeMap<NodeId, RoundState>,
    sigs: BTreeMap<NodeId, Vec<(SigShare, SimTime)>>,
    early_sent: BTreeSet<NodeId>,
    declarations: Vec<(FaultDeclaration, Vec<NodeId>)>,
    phase4: BTreeMap<NodeId, Option<AcceptValue>>,
    faults: usize,
    earliest_valid_hb: Option<SimTime>,
}

struct Sim<'a> {
    cfg: &'a MeasureConfig,
    ctx: MeasureCtx,
    signers: BTreeMap<NodeId, Signer>,
    clock: ClockModel,
    net: Network,
    rng: TrialRng,
    queue: EventQueue<Ev>,
    round: Option<Round>,
    out: MeasureRun,
    end: u64,
}

/// Runs rounds `rounds` of the relation described by `cfg`. Round numbers must start at 1
/// or later so that every round instant is non-negative.
pub fn run_measurement(cfg: &MeasureConfig, rounds: Range<u64>) -> Result<MeasureRun, MeasureError> {
    let nodes = cfg.all_nodes();
    let keys = KeyStore::new(cfg.seed, nodes.iter().copied());
    let ctx = MeasureCtx {
        params: cfg.params.clone(),
        verifier: keys.verifier(),
        up: cfg.up_nodes(),
        f_up: cfg.f_up,
        down: cfg.down_nodes(),
        keepers: cfg.keeper_nodes(),
        f_down: cfg.f_down,
    };
    let clock = match &cfg.clock_offsets {
        Some(o) => ClockModel::from_offsets(o.iter().map(|(k, v)| (*k, *v))),
        None => ClockModel::random(nodes.iter().copied(), cfg.params.clock_skew, &mut stream_rng(cfg.seed, &[10])),
    };
    let placement = nodes.iter().map(|n| (*n, if ctx.up.contains(n) { UPSTREAM } else { DOWNSTREAM }));
    let net = Network::new(cfg.seed, placement, cfg.intra(), cfg.inter);
    let signers = nodes.iter().map(|n| (*n, keys.signer(*n).expect("registered"))).collect();
    let mut sim = Sim {
        cfg,
        ctx,
        signers,
        clock,
        net,
        rng: stream_rng(cfg.seed, &[11]),
        queue: EventQueue::new(),
        round: None,
        out: MeasureRun::default(),
        end: rounds.end,
    };
    if rounds.is_empty() {
        return Ok(sim.out);
    }
    sim.start_round(rounds.start)?;
    while let Some((t, ev)) = sim.queue.pop() {
        sim.handle(t, ev)?;
    }
    Ok(sim.out)
}

impl Sim<'_> {
    fn true_at(&self, node: NodeId, local: SimTime) -> Result<SimTime, TimeError> {
        self.clock.true_time(node, local)
    }

    fn local(&self, node: NodeId, t: SimTime) -> Result<SimTime, TimeError> {
        self.clock.local_clock(node, t)
    }

    fn beh(&self, node: NodeId) -> MeasureBehavior {
        self.cfg.behavior(node)
    }

    fn round(&mut self) -> &mut Round {
        self.round.as_mut().expect("a round is active")
    }

    fn trace(&mut self, t: SimTime, node: Option<NodeId>, kind: &str, details: impl Into<String>) {
        if self.cfg.trace {
            self.out.trace.record(t, node, kind, details);
        }
    }

    fn fault(&mut self, at: SimTime, detector: NodeId, class: FaultClass, scope: FaultScope, blamed: Blame, reason: &str) {
        let n = self.round().sched.n;
        self.round().faults += 1;
        self.out.fault_count += 1;
        if self.out.faults.len() < self.cfg.keep_faults {
            self.out.faults.push((n, FaultRecord::new(at, detector, class, scope, blamed, reason)));
        }
        self.trace(at, Some(detector), "fault", format!("{class:?} {blamed}: {reason}"));
    }

    fn start_round(&mut self, n: u64) -> Result<(), MeasureError> {
        let sched = round_schedule(n, &self.cfg.params)?;
        let mut round = Round {
            sched,
            states: BTreeMap::new(),
            sigs: BTreeMap::new(),
            early_sent: BTreeSet::new(),
            declarations: Vec::new(),
            phase4: BTreeMap::new(),
            faults: 0,
            earliest_valid_hb: None,
        };
        let mut latest_decide = SimTime::ZERO;
        let mut pending = Vec::new();
        for up in self.ctx.up.clone() {
            match self.beh(up) {
                MeasureBehavior::Silent => {}
                b => {
                    pending.push((self.true_at(up, sched.t_sig)?, Ev::SigStart(up)));
                    let send = match b {
                        MeasureBehavior::LateHeartbeat(d) => Some(sched.t_send + d),
                        MeasureBehavior::EarlyHeartbeat => None,
                        _ => Some(sched.t_send),
                    };
                    if let Some(local) = send {
                        pending.push((self.true_at(up, local)?, Ev::HbSend(up)));
                    }
                }
            }
        }
        for node in self.ctx.region_nodes() {
            round.states.insert(node, RoundState::new(sched));
            if self.beh(node) == MeasureBehavior::Silent {
                continue;
            }
            if self.ctx.is_measurer(node) {
                pending.push((self.true_at(node, sched.t_accept)?, Ev::AcceptSend(node)));
            }
            let dec = self.true_at(node, sched.t_decide)?;
            latest_decide = latest_decide.max(dec);
            pending.push((dec, Ev::Decide(node)));
        }
        for (t, _) in &pending {
            if *t < self.queue.now() {
                return Err(MeasureError::Overlap(n));
            }
        }
        for (t, ev) in pending {
            self.queue.schedule(t, ev)?;
        }
        self.queue.schedule(latest_decide + SimDuration::from_nanos(1), Ev::Finalize)?;
        if self.cfg.collude {
            let colluders: Vec<NodeId> =
                self.ctx.up.iter().copied().filter(|u| self.beh(*u) != MeasureBehavior::Correct).collect();
            let start = self.queue.now();
            for attacker in colluders.iter().filter(|u| self.beh(**u) == MeasureBehavior::EarlyHeartbeat) {
                for c in &colluders {
                    let share = SigShare::new(&self.signers[c], UPSTREAM, n, Digest::default());
                    round.sigs.entry(*attacker).or_default().push((share, start));
                }
            }
        }
        self.round = Some(round);
        Ok(())
    }

    fn handle(&mut self, t: SimTime, ev: Ev) -> Result<(), MeasureError> {
        match ev {
            Ev::SigStart(node) => self.on_sig_start(t, node),
            Ev::SigArrive { to, from, share } => {
                self.trace(t, Some(to), "sig_recv", format!("from {from}"));
                self.round().sigs.entry(to).or_default().push((share, t));
                if self.beh(to) == MeasureBehavior::EarlyHeartbeat {
                    self.try_early(t, to)?;
                }
                Ok(())
            }
            Ev::HbSend(node) => self.on_hb_send(t, node),
            Ev::HbEmit(node) => {
                let shares: Vec<SigShare> = self.round().sigs.get(&node).into_iter().flatten().map(|(s, _)| s.clone()).collect();
                self.emit_heartbeat(t, node, shares)
            }
            Ev::HbArrive { to, hb } => self.on_hb_arrive(t, to, hb),
            Ev::PropEmit { node, latency, hb } => self.on_prop_emit(t, node, latency, hb),
            Ev::PropArrive { to, prop } => self.on_prop_arrive(t, to, prop),
            Ev::AcceptSend(node) => self.on_accept_send(t, node),
            Ev::AcceptArrive { to, acc } => {
                let local = self.local(to, t)?;
                let ctx = self.ctx.clone();
                let st = self.round().states.get_mut(&to).expect("region node");
                if local <= st.sched.t_decide && !st.on_accept(&ctx, acc.clone()) {
                    self.fault(t, to, FaultClass::Commission, FaultScope::Intra, Blame::Node(acc.sender), "invalid accept");
                }
                Ok(())
            }
            Ev::Decide(node) => self.on_decide(t, node),
            Ev::Finalize => self.finalize(t),
        }
    }

    fn on_sig_start(&mut self, t: SimTime, node: NodeId) -> Result<(), MeasureError> {
        let n = self.round().sched.n;
        let mut share = SigShare::new(&self.signers[&node], UPSTREAM, n, Digest::default());
        if self.beh(node) == MeasureBehavior::GarbageSignature {
            share.sig.tag = digest_of(b"garbage");
        }
        self.round().sigs.entry(node).or_default().push((share.clone(), t));
        for to in self.ctx.up.clone().into_iter().filter(|u| *u != node) {
            if let Some(at) = self.net.send(node, to, t)?.time() {
                self.queue.schedule(at, Ev::SigArrive { to, from: node, share: share.clone() })?;
            }
        }
        self.trace(t, Some(node), "sig_send", format!("round {n}"));
        if self.beh(node) == MeasureBehavior::EarlyHeartbeat {
            self.try_early(t, node)?;
        }
        Ok(())
    }

    fn valid_signers(&mut self, node: NodeId, until: SimTime) -> BTreeSet<NodeId> {
        let ctx = self.ctx.clone();
        self.round()
            .sigs
            .get(&node)
            .into_iter()
            .flatten()
            .filter(|(s, at)| *at <= until && ctx.up.contains(&s.sig.signer) && s.is_valid(&ctx.verifier))
            .map(|(s, _)| s.sig.signer)
            .collect()
    }

    fn try_early(&mut self, t: SimTime, node: NodeId) -> Result<(), MeasureError> {
        if self.round().early_sent.contains(&node) || self.valid_signers(node, t).len() <= self.cfg.f_up {
            return Ok(());
        }
        self.round().early_sent.insert(node);
        let p = &self.cfg.params;
        self.queue.schedule(t + (p.hb_build - p.hb_build_spread), Ev::HbEmit(node))?;
        Ok(())
    }

    fn on_hb_send(&mut self, t: SimTime, node: NodeId) -> Result<(), MeasureError> {
        let sched = self.round().sched;
        // Peers' clocks may trail ours by up to the skew bound; the build slack absorbs it.
        let p = &self.cfg.params;
        let deadline = self.true_at(node, sched.t_sig + p.intra_delay + p.clock_skew)?.min(t);
        let received: Vec<(SigShare, SimTime)> = self.round().sigs.get(&node).cloned().unwrap_or_default();
        let mut shares = Vec::new();
        for peer in self.ctx.up.clone() {
            let got: Vec<&SigShare> =
                received.iter().filter(|(s, at)| s.sig.signer == peer && *at <= deadline).map(|(s, _)| s).collect();
            if got.is_empty() {
                self.fault(deadline, node, FaultClass::Omission, FaultScope::Intra, Blame::Node(peer), "missing signature share");
            } else if let Some(ok) = got.iter().find(|s| s.is_valid(&self.ctx.verifier)) {
                shares.push((*ok).clone());
            } else {
                self.fault(deadline, node, FaultClass::Commission, FaultScope::Intra, Blame::Link(peer, node), "invalid signature share");
            }
        }
        self.emit_heartbeat(t, node, shares)
    }

    fn emit_heartbeat(&mut self, t: SimTime, node: NodeId, shares: Vec<SigShare>) -> Result<(), MeasureError> {
        let n = self.round().sched.n;
        let mut seen = BTreeSet::new();
        let sigs = shares
            .into_iter()
            .filter(|s| s.is_valid(&self.ctx.verifier) && seen.insert(s.sig.signer))
            .map(|s| s.sig)
            .collect();
        let hb = Heartbeat::build(&self.signers[&node], UPSTREAM, n, Digest::default(), sigs);
        if hb.validate(&self.ctx.verifier, &self.ctx.up, self.cfg.f_up).is_ok() {
            let r = self.round();
            r.earliest_valid_hb = Some(r.earliest_valid_hb.map_or(t, |e| e.min(t)));
        }
        self.trace(t, Some(node), "hb_send", format!("round {n}, {} sigs", hb.sigs.len()));
        for to in self.ctx.down.clone() {
            if let Some(at) = self.net.send(node, to, t)?.time() {
                self.queue.schedule(at, Ev::HbArrive { to, hb: hb.clone() })?;
            }
        }
        Ok(())
    }

    fn on_hb_arrive(&mut self, t: SimTime, to: NodeId, hb: Heartbeat) -> Result<(), MeasureError> {
        let beh = self.beh(to);
        if beh == MeasureBehavior::Silent {
            return Ok(());
        }
        let local = self.local(to, t)?;
        let ctx = self.ctx.clone();
        let outcome = self.round().states.get_mut(&to).expect("measurer").on_heartbeat(&ctx, &hb, local);
        self.trace(t, Some(to), "hb_recv", format!("from {} {outcome:?}", hb.sender));
        match outcome {
            HeartbeatOutcome::Propose(d) => {
                let (latency, delay) = match beh {
                    MeasureBehavior::LowProposal(shave) => {
                        (d.saturating_sub(shave).max(SimDuration::from_micros(1)), SimDuration::ZERO)
                    }
                    _ => {
                        let p = &self.cfg.params;
                        let lo = (p.prop_build - p.prop_build_spread).as_nanos();
                        (d, SimDuration::from_nanos(self.rng.random_range(lo..=p.prop_build.as_nanos())))
                    }
                };
                self.queue.schedule(t + delay, Ev::PropEmit { node: to, latency, hb })?;
            }
            HeartbeatOutcome::Late => {}
            HeartbeatOutcome::Invalid(e) => {
                self.fault(t, to, FaultClass::Commission, FaultScope::Inter, Blame::Node(hb.sender), &format!("invalid heartbeat: {e}"));
            }
            HeartbeatOutcome::Premature => {
                self.fault(t, to, FaultClass::Commission, FaultScope::Inter, Blame::Node(hb.sender), "premature heartbeat");
            }
        }
        Ok(())
    }

    fn on_prop_emit(&mut self, t: SimTime, node: NodeId, latency: SimDuration, hb: Heartbeat) -> Result<(), MeasureError> {
        let n = self.round().sched.n;
        let prop = Proposal::build(&self.signers[&node], n, latency, hb);
        let local = self.local(node, t)?;
        self.round().states.get_mut(&node).expect("measurer").record_own(prop.clone(), local);
        self.trace(t, Some(node), "prop_send", format!("{} via {}", latency, prop.upstream()));
        let mut to: Vec<NodeId> = self.ctx.keepers.clone();
        if self.beh(node) != MeasureBehavior::SelectiveProposal {
            to.extend(self.ctx.down.iter().filter(|d| **d != node));
        }
        for r in to {
            if let Some(at) = self.net.send(node, r, t)?.time() {
                self.queue.schedule(at, Ev::PropArrive { to: r, prop: prop.clone() })?;
            }
        }
        Ok(())
    }

    fn on_prop_arrive(&mut self, t: SimTime, to: NodeId, prop: Proposal) -> Result<(), MeasureError> {
        if self.beh(to) == MeasureBehavior::Silent {
            return Ok(());
        }
        let local = self.local(to, t)?;
        let ctx = self.ctx.clone();
        let st = self.round().states.get_mut(&to).expect("region node");
        let outcome = if ctx.is_measurer(to) {
            if local > st.sched.t_accept {
                return Ok(());
            }
            st.on_proposal(&ctx, &prop, local)
        } else {
            st.keeper_store(&ctx, &prop, local)
        };
        match outcome {
            ProposalOutcome::Invalid => {
                self.fault(t, to, FaultClass::Commission, FaultScope::Intra, Blame::Node(prop.proposer), "invalid proposal");
            }
            ProposalOutcome::Unreasonable => {
                self.trace(t, Some(to), "prop_unreasonable", format!("{} from {}", prop.latency, prop.proposer));
            }
            ProposalOutcome::Accepted => {}
        }
        Ok(())
    }

    fn on_accept_send(&mut self, t: SimTime, node: NodeId) -> Result<(), MeasureError> {
        let n = self.round().sched.n;
        let jitter = self.cfg.params.inter_jitter;
        let ctx = self.ctx.clone();
        let value = self.round().states[&node].accept_value(jitter);
        let acc = AcceptMsg::build(&self.signers[&node], n, value);
        let st = self.round().states.get_mut(&node).expect("measurer");
        st.own_accept = Some(acc.clone());
        st.on_accept(&ctx, acc.clone());
        self.trace(t, Some(node), "accept_send", value.to_string());
        let wrong = match (self.beh(node), value) {
            (MeasureBehavior::EquivocateAccept(delta), AcceptValue::Latency(d)) => Some(AcceptValue::Latency(d + delta)),
            (MeasureBehavior::EquivocateAccept(delta), AcceptValue::Timeout) => Some(AcceptValue::Latency(delta)),
            _ => None,
        };
        let recipients: Vec<NodeId> = ctx.region_nodes().into_iter().filter(|r| *r != node).collect();
        for (i, r) in recipients.into_iter().enumerate() {
            let msg = match (self.beh(node), wrong) {
                (MeasureBehavior::AcceptPattern(code), _) => match patterned(code, i, value) {
                    Some(v) if v == value => acc.clone(),
                    Some(v) => AcceptMsg::build(&self.signers[&node], n, v),
                    None => continue,
                },
                (_, Some(w)) if i % 2 == 1 => AcceptMsg::build(&self.signers[&node], n, w),
                _ => acc.clone(),
            };
            if let Some(at) = self.net.send(node, r, t)?.time() {
                self.queue.schedule(at, Ev::AcceptArrive { to: r, acc: msg })?;
            }
        }
        Ok(())
    }

    fn on_decide(&mut self, t: SimTime, node: NodeId) -> Result<(), MeasureError> {
        let ctx = self.ctx.clone();
        let st = self.round().states[&node].clone();
        let n = st.sched.n;
        let signer = self.signers[&node].clone();
        if self.beh(node) == MeasureBehavior::FalseDeclaration {
            let all: Vec<&AcceptMsg> = st.accepts.values().flatten().collect();
            let pair = all.iter().enumerate().find_map(|(i, a)| {
                all[i + 1..].iter().find(|b| b.value == a.value && b.sender != a.sender).map(|b| ((*a).clone(), (*b).clone()))
            });
            if let Some((a, b)) = pair {
                let decl = stage1_declare(&signer, n, t, Evidence::Accept(a), b);
                self.round().declarations.push((decl, ctx.region_nodes()));
            }
        }
        let outcome = st.decide(&ctx);
        self.trace(t, Some(node), "decide", format!("{outcome:?}"));
        let value = match outcome {
            DecideOutcome::Decided(v) => Some(v),
            DecideOutcome::Missing(missing) => {
                for m in missing {
                    self.fault(t, node, FaultClass::Omission, FaultScope::Intra, Blame::Node(m), "missing accept");
                }
                let values: BTreeSet<AcceptValue> = st.accepts.values().flatten().map(|a| a.value).collect();
                (values.len() == 1).then(|| *values.iter().next().unwrap())
            }
            DecideOutcome::Mismatch { reference, offending } => {
                let evidence = match (&st.own_accept, st.proposal_for_min()) {
                    (Some(own), Some(lp)) if own.value.latency().is_some() => Evidence::Proposal(lp.prop.clone()),
                    (Some(own), _) => Evidence::Accept(own.clone()),
                    (None, _) => Evidence::Accept(reference),
                };
                let decl = stage1_declare(&signer, n, t, evidence, offending);
                let to = ctx.region_nodes().into_iter().filter(|r| *r != node).collect();
                self.round().declarations.push((decl, to));
                None
            }
        };
        self.round().phase4.insert(node, value);
        Ok(())
    }

    fn finalize(&mut self, _t: SimTime) -> Result<(), MeasureError> {
        let mut round = self.round.take().expect("a round is active");
        let n = round.sched.n;
        let cfg = self.cfg;
        let mut finals: BTreeMap<NodeId, Option<AcceptValue>> = round.phase4.clone();
        let mut dispute_in_time = true;
        let dispute = !round.declarations.is_empty();
        if dispute {
            let participants = self
                .ctx
                .region_nodes()
                .into_iter()
                .map(|v| {
                    let part = Participant {
                        signer: self.signers[&v].clone(),
                        sched: round.sched,
                        log: round.states[&v].log.clone(),
                        behavior: cfg.dispute_behavior(v),
                    };
                    (v, part)
                })
                .collect();
            let input = DisputeInput { ctx: &self.ctx, n, participants, declarations: std::mem::take(&mut round.declarations) };
            let outcome = run_dispute(&input, &mut self.net)?;
            for (node, (v, at)) in &outcome.decisions {
                finals.insert(*node, Some(*v));
                if cfg.is_correct(*node) && *at > outcome.deadline {
                    dispute_in_time = false;
                }
            }
            self.round = Some(round);
            for (detector, blames) in &outcome.blames {
                for b in blames {
                    self.fault(outcome.t_dclr, *detector, b.class, FaultScope::Intra, b.blamed, &format!("{:?}", b.rule));
                }
            }
            round = self.round.take().expect("restored");
            if cfg.trace {
                for a in &outcome.audit {
                    self.out.trace.record(a.time, Some(a.node), "dispute", format!("stage {}: {}", a.stage, a.event));
                }
            }
            self.out.incidents.push(IncidentRecord::new(n, &outcome, round.phase4.clone()));
        }
        let correct: Vec<NodeId> = self.ctx.region_nodes().into_iter().filter(|v| cfg.is_correct(*v)).collect();
        let values: BTreeSet<Option<AcceptValue>> = correct.iter().map(|v| finals.get(v).copied().flatten()).collect();
        let agreement = values.len() == 1 && values.iter().next().is_some_and(|v| v.is_some());
        let decided = if agreement { *values.iter().next().unwrap() } else { None };
        let held: BTreeSet<SimDuration> =
            correct.iter().flat_map(|v| round.states[v].log.iter().map(|l| l.prop.latency)).collect();
        let from_valid_proposal = match decided {
            Some(AcceptValue::Latency(x)) => x.checked_sub(cfg.params.inter_jitter).is_ok_and(|d| held.contains(&d)),
            _ => true,
        };
        let d_real = self.net.normal_max_latency(UPSTREAM, DOWNSTREAM, round.sched.t_send);
        self.out.summaries.push(RoundSummary {
            n,
            t_send: round.sched.t_send,
            d_real,
            decided,
            agreement,
            dispute,
            dispute_in_time,
            from_valid_proposal,
            faults: round.faults,
            earliest_valid_hb: round.earliest_valid_hb,
        });
        if n + 1 < self.end {
            self.start_round(n + 1)?;
        }
        Ok(())
    }
}

/// Accuracy tallies over decided rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct AccuracyStats {
    pub rounds: usize,
    pub timeouts: usize,
    pub lower_violations: usize,
    /// Rounds (TIMEOUT included) where the decided value exceeds the upper bound.
    pub upper_misses: usize,
    pub disagreements: usize,
}

impl AccuracyStats {
    pub fn upper_fraction(&self) -> f64 {
        if self.rounds == 0 {
            return 1.0;
        }
        1.0 - self.upper_misses as f64 / self.rounds as f64
    }
}

/// Largest amount a decided value may fall below the real maximum latency.
pub fn lower_slack(p: &TimingParams) -> SimDuration {
    early_bound(p) + p.prop_build_spread + p.intra_spread + p.clock_skew
}

/// Largest amount a decided value may exceed the real maximum latency in a normal round.
pub fn upper_slack(p: &TimingParams) -> SimDuration {
    p.inter_jitter + p.clock_skew
}

pub fn accuracy(p: &TimingParams, summaries: &[RoundSummary]) -> AccuracyStats {
    let mut s = AccuracyStats { rounds: summaries.len(), ..Default::default() };
    for r in summaries {
        match r.decided {
            None => {
                s.disagreements += 1;
                s.upper_misses += 1;
            }
            Some(AcceptValue::Timeout) => {
                s.timeouts += 1;
                s.upper_misses += 1;
            }
            Some(AcceptValue::Latency(d)) => {
                if d + lower_slack(p) < r.d_real {
                    s.lower_violations += 1;
                }
                if d > r.d_real + upper_slack(p) {
                    s.upper_misses += 1;
                }
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::{BaseWalk, JitterModel};

    fn quiet_inter() -> InterLinkModel {
        InterLinkModel {
            base: BaseWalk::constant(SimDuration::from_millis(40)),
            jitter: JitterModel { spread: SimDuration::from_nanos(1), p_norm: 0.999_999_999, ..JitterModel::default() },
            ..InterLinkModel::default()
        }
    }

    fn cfg(seed: u64) -> MeasureConfig {
        let mut c = MeasureConfig::new(TimingParams::default(), 1, 1, seed);
        c.inter = quiet_inter();
        c
    }

    #[test]
    fn correct_system_agrees_every_round() {
        let run = run_measurement(&cfg(1), 1..21).unwrap();
        assert_eq!(run.summaries.len(), 20);
        for s in &run.summaries {
            assert!(s.agreement && !s.dispute && s.faults == 0, "{s:?} {:?}", run.faults);
        }
    }

    #[test]
    fn constant_network_decides_base_plus_jitter_within_skew() {
        let c = cfg(2);
        let run = run_measurement(&c, 1..11).unwrap();
        let target = SimDuration::from_millis(40) + c.params.inter_jitter;
        for s in &run.summaries {
            let d = s.decided.unwrap().latency().unwrap();
            assert!(d.as_nanos().abs_diff(target.as_nanos()) <= c.params.clock_skew.as_nanos(), "{d}");
        }
    }

    #[test]
    fn no_heartbeats_decides_timeout() {
        let mut c = cfg(3);
        c.inter.drop_prob = 1.0;
        let run = run_measurement(&c, 1..4).unwrap();
        assert!(run.summaries.iter().all(|s| s.decided == Some(AcceptValue::Timeout)));
    }

    #[test]
    fn silent_measurer_raises_omission_faults() {
        let mut c = cfg(4);
        let silent = c.down_nodes()[1];
        c.behaviors.insert(silent, MeasureBehavior::Silent);
        let run = run_measurement(&c, 1..3).unwrap();
        assert!(run
            .faults
            .iter()
            .any(|(_, f)| f.blamed == Blame::Node(silent) && f.class == FaultClass::Omission && f.reason == "missing accept"));
        assert!(run.summaries.iter().all(|s| s.agreement));
    }

    #[test]
    fn silent_upstream_measurer_blamed_for_missing_share() {
        let mut c = cfg(5);
        let silent = c.up_nodes()[1];
        c.behaviors.insert(silent, MeasureBehavior::Silent);
        let run = run_measurement(&c, 1..2).unwrap();
        assert!(run.faults.iter().any(|(_, f)| f.blamed == Blame::Node(silent) && f.reason == "missing signature share"));
        // One valid signature is not enough, so no heartbeat validates.
        assert_eq!(run.summaries[0].decided, Some(AcceptValue::Timeout));
    }

    #[test]
    fn garbage_signature_blames_the_link() {
        let mut c = cfg(6);
        let bad = c.up_nodes()[1];
        c.behaviors.insert(bad, MeasureBehavior::GarbageSignature);
        let run = run_measurement(&c, 1..2).unwrap();
        assert!(run.faults.iter().any(|(_, f)| matches!(f.blamed, Blame::Link(a, _) if a == bad)));
    }

    #[test]
    fn equivocating_accept_is_resolved_by_dispute() {
        let mut c = cfg(7);
        let eq = c.down_nodes()[1];
        c.behaviors.insert(eq, MeasureBehavior::EquivocateAccept(SimDuration::from_millis(10)));
        let run = run_measurement(&c, 1..6).unwrap();
        for s in &run.summaries {
            assert!(s.dispute && s.agreement && s.dispute_in_time && s.from_valid_proposal, "{s:?}");
        }
        let inc = &run.incidents[0];
        assert_eq!(inc.blamed, vec![eq]);
    }

    #[test]
    fn low_proposals_cannot_pull_below_lower_bound() {
        let mut c = cfg(8);
        c.behaviors.insert(c.down_nodes()[1], MeasureBehavior::LowProposal(SimDuration::from_millis(39)));
        let run = run_measurement(&c, 1..11).unwrap();
        let stats = accuracy(&c.params, &run.summaries);
        assert_eq!(stats.lower_violations, 0);
        assert_eq!(stats.disagreements, 0);
    }

    #[test]
    fn false_declaration_blames_declarer_without_changing_value() {
        let mut c = cfg(9);
        let liar = c.down_nodes()[1];
        c.behaviors.insert(liar, MeasureBehavior::FalseDeclaration);
        let run = run_measurement(&c, 1..3).unwrap();
        assert!(run.summaries.iter().all(|s| s.agreement));
        assert!(run.faults.iter().any(|(_, f)| f.blamed == Blame::Node(liar) && f.class == FaultClass::Commission));
    }

    #[test]
    fn summaries_csv_has_header_and_rows() {
        let run = run_measurement(&cfg(10), 1..3).unwrap();
        let csv = run.summaries_csv();
        assert!(csv.starts_with("round,region_pair,decided,dispute,faults\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn same_seed_same_summaries() {
        let mut c = cfg(11);
        c.inter = InterLinkModel::default();
        let a = run_measurement(&c, 1..30).unwrap();
        let b = run_measurement(&c, 1..30).unwrap();
        assert_eq!(a.summaries, b.summaries);
    }
}
