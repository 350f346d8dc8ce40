//! Per-node, per-round protocol state and the phase transitions that act on it.

use std::collections::BTreeMap;

use super::msg::{AcceptMsg, AcceptValue, Heartbeat, HeartbeatError, Proposal};
use crate::core::{NodeId, RoundSchedule, SimDuration, SimTime, TimingParams, Verifier};

/// Static facts about one directed measurement relation.
#[derive(Debug, Clone)]
pub struct MeasureCtx {
    pub params: TimingParams,
    pub verifier: Verifier,
    /// Upstream measurers (heartbeat senders).
    pub up: Vec<NodeId>,
    pub f_up: usize,
    /// Downstream measurers.
    pub down: Vec<NodeId>,
    /// Downstream log keepers.
    pub keepers: Vec<NodeId>,
    pub f_down: usize,
}

impl MeasureCtx {
    pub fn is_measurer(&self, node: NodeId) -> bool {
        self.down.contains(&node)
    }

    /// Downstream measurers and log keepers.
    pub fn region_nodes(&self) -> Vec<NodeId> {
        self.down.iter().chain(self.keepers.iter()).copied().collect()
    }

    pub fn proposal_valid(&self, p: &Proposal) -> bool {
        p.is_valid(&self.verifier, &self.up, self.f_up, &self.down)
    }

    /// Smallest latency a proposal received at local time `t` may carry.
    pub fn d_min(&self, sched: &RoundSchedule, t: SimTime) -> SimDuration {
        let p = &self.params;
        let elapsed = t.since(sched.t_send).unwrap_or(SimDuration::ZERO);
        elapsed.saturating_sub(p.prop_build + p.intra_delay + p.clock_skew)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoggedProposal {
    pub prop: Proposal,
    /// Local receive time; equal to the send time for own proposals.
    pub at: SimTime,
    pub own: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeartbeatOutcome {
    /// Make a proposal with this latency.
    Propose(SimDuration),
    /// Arrived after the cutoff; logged only.
    Late,
    /// Invalid heartbeat: inter-region commission fault against the sender.
    Invalid(HeartbeatError),
    /// Arrived before the nominal send instant; cannot be a timely heartbeat.
    Premature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalOutcome {
    Accepted,
    Unreasonable,
    /// Bad signature or embedded heartbeat: intra-region commission fault against the proposer.
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecideOutcome {
    Decided(AcceptValue),
    /// Measurers whose accept did not arrive in time.
    Missing(Vec<NodeId>),
    /// Two measurers sent different values (or one sender sent conflicting copies).
    Mismatch { reference: AcceptMsg, offending: AcceptMsg },
}

/// State of one node in one round.
#[derive(Debug, Clone)]
pub struct RoundState {
    pub sched: RoundSchedule,
    pub heartbeats: Vec<(Heartbeat, SimTime)>,
    pub p_min: Option<SimDuration>,
    pub a_min: Option<SimDuration>,
    pub log: Vec<LoggedProposal>,
    pub accepts: BTreeMap<NodeId, Vec<AcceptMsg>>,
    pub own_accept: Option<AcceptMsg>,
    pub decided: Option<AcceptValue>,
}

fn lower(cur: &mut Option<SimDuration>, d: SimDuration) {
    if cur.is_none_or(|c| d < c) {
        *cur = Some(d);
    }
}

impl RoundState {
    pub fn new(sched: RoundSchedule) -> Self {
        RoundState {
            sched,
            heartbeats: Vec::new(),
            p_min: None,
            a_min: None,
            log: Vec::new(),
            accepts: BTreeMap::new(),
            own_accept: None,
            decided: None,
        }
    }

    /// Phase 2 at a downstream measurer: `t_recv` is the local receive time.
    pub fn on_heartbeat(&mut self, ctx: &MeasureCtx, hb: &Heartbeat, t_recv: SimTime) -> HeartbeatOutcome {
        if hb.n != self.sched.n {
            return HeartbeatOutcome::Invalid(HeartbeatError::BadOuterSignature);
        }
        if let Err(e) = hb.validate(&ctx.verifier, &ctx.up, ctx.f_up) {
            return HeartbeatOutcome::Invalid(e);
        }
        self.heartbeats.push((hb.clone(), t_recv));
        if t_recv > self.sched.t_hb_stop {
            return HeartbeatOutcome::Late;
        }
        match t_recv.since(self.sched.t_send) {
            Ok(d) => HeartbeatOutcome::Propose(d),
            Err(_) => HeartbeatOutcome::Premature,
        }
    }

    /// Records a proposal this measurer sent.
    pub fn record_own(&mut self, prop: Proposal, at: SimTime) {
        lower(&mut self.p_min, prop.latency);
        self.log.push(LoggedProposal { prop, at, own: true });
    }

    /// Phase 3a at a downstream measurer.
    pub fn on_proposal(&mut self, ctx: &MeasureCtx, prop: &Proposal, t: SimTime) -> ProposalOutcome {
        if prop.n != self.sched.n || !ctx.proposal_valid(prop) {
            return ProposalOutcome::Invalid;
        }
        if prop.latency < ctx.d_min(&self.sched, t) {
            return ProposalOutcome::Unreasonable;
        }
        lower(&mut self.a_min, prop.latency);
        self.log.push(LoggedProposal { prop: prop.clone(), at: t, own: false });
        ProposalOutcome::Accepted
    }

    /// Log keepers store every signed proposal with its receive time and validate later.
    pub fn keeper_store(&mut self, ctx: &MeasureCtx, prop: &Proposal, t: SimTime) -> ProposalOutcome {
        if prop.n != self.sched.n || !ctx.proposal_valid(prop) {
            return ProposalOutcome::Invalid;
        }
        self.log.push(LoggedProposal { prop: prop.clone(), at: t, own: false });
        ProposalOutcome::Accepted
    }

    /// Phase 3b.
    pub fn accept_value(&self, inter_jitter: SimDuration) -> AcceptValue {
        let best = match (self.a_min, self.p_min) {
            (Some(a), Some(p)) => Some(a.min(p)),
            (a, p) => a.or(p),
        };
        best.map_or(AcceptValue::Timeout, |d| AcceptValue::Latency(d + inter_jitter))
    }

    pub fn on_accept(&mut self, ctx: &MeasureCtx, acc: AcceptMsg) -> bool {
        if acc.n != self.sched.n || !ctx.is_measurer(acc.sender) || !acc.is_valid(&ctx.verifier) {
            return false;
        }
        let copies = self.accepts.entry(acc.sender).or_default();
        if !copies.contains(&acc) {
            copies.push(acc);
        }
        true
    }

    /// Phase 4: needs a valid accept from every measurer, all with one value.
    pub fn decide(&self, ctx: &MeasureCtx) -> DecideOutcome {
        let missing: Vec<NodeId> = ctx.down.iter().filter(|m| !self.accepts.contains_key(m)).copied().collect();
        let reference = self
            .own_accept
            .clone()
            .or_else(|| self.accepts.values().flat_map(|v| v.iter()).next().cloned());
        if let Some(reference) = &reference {
            for copies in self.accepts.values() {
                for c in copies {
                    if c.value != reference.value {
                        return DecideOutcome::Mismatch { reference: reference.clone(), offending: c.clone() };
                    }
                }
            }
        }
        if !missing.is_empty() {
            return DecideOutcome::Missing(missing);
        }
        match reference {
            Some(r) if self.accepts.len() > ctx.f_down => DecideOutcome::Decided(r.value),
            _ => DecideOutcome::Missing(ctx.down.clone()),
        }
    }

    /// The logged proposal whose latency equals the accepted minimum, used as declaration evidence.
    pub fn proposal_for_min(&self) -> Option<&LoggedProposal> {
        self.log.iter().min_by_key(|l| (l.prop.latency, l.prop.proposer, l.prop.upstream()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{round_schedule, Digest, KeyStore, RegionId};
    use crate::measure::msg::SigShare;

    pub(crate) fn ctx() -> (MeasureCtx, KeyStore) {
        let ks = KeyStore::new(5, (0..7).map(NodeId));
        let ctx = MeasureCtx {
            params: TimingParams {
                prop_build: SimDuration::from_millis(2),
                intra_delay: SimDuration::from_millis(2),
                clock_skew: SimDuration::from_millis(1),
                ..TimingParams::default()
            },
            verifier: ks.verifier(),
            up: vec![NodeId(0), NodeId(1)],
            f_up: 1,
            down: vec![NodeId(2), NodeId(3)],
            keepers: vec![NodeId(4)],
            f_down: 1,
        };
        (ctx, ks)
    }

    fn hb(ks: &KeyStore, n: u64) -> Heartbeat {
        let sigs = [0, 1]
            .iter()
            .map(|s| SigShare::new(&ks.signer(NodeId(*s)).unwrap(), RegionId(0), n, Digest::default()).sig)
            .collect();
        Heartbeat::build(&ks.signer(NodeId(0)).unwrap(), RegionId(0), n, Digest::default(), sigs)
    }

    fn state(ctx: &MeasureCtx, n: u64) -> RoundState {
        RoundState::new(round_schedule(n, &ctx.params).unwrap())
    }

    #[test]
    fn heartbeat_latency_and_cutoff() {
        let (ctx, ks) = ctx();
        let mut s = state(&ctx, 4);
        let t = s.sched.t_send + SimDuration::from_millis(43);
        assert_eq!(s.on_heartbeat(&ctx, &hb(&ks, 4), t), HeartbeatOutcome::Propose(SimDuration::from_millis(43)));
        let late = s.sched.t_hb_stop + SimDuration::from_nanos(1);
        assert_eq!(s.on_heartbeat(&ctx, &hb(&ks, 4), late), HeartbeatOutcome::Late);
        assert_eq!(s.heartbeats.len(), 2);
    }

    #[test]
    fn heartbeat_with_f_signatures_is_invalid() {
        let (ctx, ks) = ctx();
        let mut s = state(&ctx, 4);
        let sig = SigShare::new(&ks.signer(NodeId(0)).unwrap(), RegionId(0), 4, Digest::default()).sig;
        let h = Heartbeat::build(&ks.signer(NodeId(0)).unwrap(), RegionId(0), 4, Digest::default(), vec![sig]);
        assert!(matches!(s.on_heartbeat(&ctx, &h, s.sched.t_send), HeartbeatOutcome::Invalid(_)));
    }

    #[test]
    fn reasonableness_threshold() {
        let (ctx, ks) = ctx();
        let mut s = state(&ctx, 4);
        let t = s.sched.t_send + SimDuration::from_millis(50);
        assert_eq!(ctx.d_min(&s.sched, t), SimDuration::from_millis(45));
        let signer = ks.signer(NodeId(3)).unwrap();
        let ok = Proposal::build(&signer, 4, SimDuration::from_millis(45), hb(&ks, 4));
        let low = Proposal::build(&signer, 4, SimDuration::from_micros(44_900), hb(&ks, 4));
        assert_eq!(s.on_proposal(&ctx, &ok, t), ProposalOutcome::Accepted);
        assert_eq!(s.on_proposal(&ctx, &low, t), ProposalOutcome::Unreasonable);
        assert_eq!(s.a_min, Some(SimDuration::from_millis(45)));
    }

    #[test]
    fn accept_value_rules() {
        let (ctx, ks) = ctx();
        let mut s = state(&ctx, 4);
        let jitter = SimDuration::from_micros(2400);
        assert_eq!(s.accept_value(jitter), AcceptValue::Timeout);
        s.p_min = Some(SimDuration::from_millis(40));
        s.a_min = Some(SimDuration::from_millis(38));
        assert_eq!(s.accept_value(jitter), AcceptValue::Latency(SimDuration::from_micros(40_400)));
        let _ = ks;
    }

    #[test]
    fn decide_needs_matching_accepts_from_all_measurers() {
        let (ctx, ks) = ctx();
        let mut s = state(&ctx, 4);
        let v = AcceptValue::Latency(SimDuration::from_millis(41));
        s.on_accept(&ctx, AcceptMsg::build(&ks.signer(NodeId(2)).unwrap(), 4, v));
        assert_eq!(s.decide(&ctx), DecideOutcome::Missing(vec![NodeId(3)]));
        s.on_accept(&ctx, AcceptMsg::build(&ks.signer(NodeId(3)).unwrap(), 4, v));
        assert_eq!(s.decide(&ctx), DecideOutcome::Decided(v));
        let w = AcceptValue::Latency(SimDuration::from_millis(51));
        s.on_accept(&ctx, AcceptMsg::build(&ks.signer(NodeId(3)).unwrap(), 4, w));
        assert!(matches!(s.decide(&ctx), DecideOutcome::Mismatch { .. }));
    }

    #[test]
    fn timeout_accepts_decide_timeout() {
        let (ctx, ks) = ctx();
        let mut s = state(&ctx, 4);
        for m in [2, 3] {
            s.on_accept(&ctx, AcceptMsg::build(&ks.signer(NodeId(m)).unwrap(), 4, AcceptValue::Timeout));
        }
        assert_eq!(s.decide(&ctx), DecideOutcome::Decided(AcceptValue::Timeout));
    }

    #[test]
    fn accepts_from_non_measurers_are_ignored() {
        let (ctx, ks) = ctx();
        let mut s = state(&ctx, 4);
        assert!(!s.on_accept(&ctx, AcceptMsg::build(&ks.signer(NodeId(4)).unwrap(), 4, AcceptValue::Timeout)));
    }
}
