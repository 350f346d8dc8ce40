//! Message-level recovery propagation: fault detection, local recovery in the faulty
//! region, and one or two heartbeat hops carrying the recovery payload to every other region.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{apply_local_recovery, btr_deadline, rp_round_for, Blame, FaultClass, FaultRecord, FaultScenario, FaultScope, RecoveryError, RpMessage};
use crate::core::{round_schedule, Digest, JobId, KeyStore, NodeId, RegionId, SimDuration, SimTime, TaskId, TimingParams, Verifier};
use crate::measure::{Heartbeat, SigShare};
use crate::simnet::{stream_rng, InterLinkModel, IntraLinkModel, Network, TrialRng};
use crate::tgs::TaskSlots;

const MEASURE_TASK: TaskId = TaskId(0);
const APP_TASK: TaskId = TaskId(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurerFault {
    /// Neither signs nor sends nor forwards.
    Silent,
    /// Sends or forwards a heartbeat whose payload was altered.
    Tamper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub params: TimingParams,
    pub f: usize,
    pub regions: u32,
    /// Region whose nodes detect the fault.
    pub detector: RegionId,
    /// Region hosting the blamed node.
    pub faulty_region: RegionId,
    pub class: FaultClass,
    pub t_rls: SimTime,
    /// Offline detection bound relative to release.
    pub d_det: SimDuration,
    pub inter: InterLinkModel,
    pub measurer_faults: BTreeMap<NodeId, MeasurerFault>,
    pub seed: u64,
}

impl PropagationConfig {
    pub fn new(params: TimingParams, f: usize, regions: u32, detector: RegionId, faulty_region: RegionId, seed: u64) -> Self {
        PropagationConfig {
            d_det: params.detect_bound,
            params,
            f,
            regions,
            detector,
            faulty_region,
            class: FaultClass::Commission,
            t_rls: SimTime::from_secs_f64(3.0),
            inter: InterLinkModel::default(),
            measurer_faults: BTreeMap::new(),
            seed,
        }
    }

    pub fn region_ids(&self) -> Vec<RegionId> {
        (0..self.regions).map(RegionId).collect()
    }

    /// `2f + 1` nodes numbered `100 * region + i`.
    pub fn nodes(&self, r: RegionId) -> Vec<NodeId> {
        (0..=2 * self.f as u32).map(|i| NodeId(100 * r.0 + i)).collect()
    }

    /// Application task replicas: the first `f + 1` nodes.
    pub fn replicas(&self, r: RegionId) -> Vec<NodeId> {
        self.nodes(r)[..=self.f].to_vec()
    }

    /// Measurers: the last `f + 1` nodes.
    pub fn measurers(&self, r: RegionId) -> Vec<NodeId> {
        self.nodes(r)[self.f..].to_vec()
    }

    pub fn blamed(&self) -> NodeId {
        self.replicas(self.faulty_region)[0]
    }

    pub fn is_correct(&self, n: NodeId) -> bool {
        n != self.blamed() && !self.measurer_faults.contains_key(&n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryAction {
    /// Acted on a local fault declaration.
    Local,
    /// Acted on a verified recovery payload.
    Recovered,
    SafeMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RecoveryStart {
    pub region: RegionId,
    pub node: NodeId,
    pub at: SimTime,
    pub action: RecoveryAction,
    /// 0 for detection, otherwise the propagation hop.
    pub hop: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropagationResult {
    pub t_det: SimTime,
    pub bound: SimTime,
    pub blamed: NodeId,
    pub class: FaultClass,
    pub scope: FaultScope,
    pub rounds: Vec<u64>,
    /// First action of every correct node.
    pub starts: BTreeMap<NodeId, RecoveryStart>,
    pub faults: Vec<FaultRecord>,
    /// `(round, measurer, payload digest)` for every correct measurer that signed a payload.
    pub embedded: Vec<(u64, NodeId, Digest)>,
    pub expected: BTreeSet<NodeId>,
}

impl PropagationResult {
    pub fn violations(&self) -> Vec<RecoveryStart> {
        self.starts.values().filter(|s| s.at > self.bound).copied().collect()
    }

    /// Correct nodes that never acted.
    pub fn missing(&self) -> Vec<NodeId> {
        self.expected.iter().filter(|n| !self.starts.contains_key(n)).copied().collect()
    }

    pub fn bound_met(&self) -> bool {
        self.violations().is_empty() && self.missing().is_empty()
    }

    /// Correct measurers of one round signed the same payload.
    pub fn embedded_agree(&self, round: u64) -> bool {
        let set: BTreeSet<Digest> = self.embedded.iter().filter(|(n, _, _)| *n == round).map(|(_, _, d)| *d).collect();
        set.len() <= 1
    }
}

struct Sim<'a> {
    cfg: &'a PropagationConfig,
    net: Network,
    keys: KeyStore,
    verifier: Verifier,
    knows: BTreeSet<NodeId>,
    out: PropagationResult,
}

struct Arrival {
    at: SimTime,
    sender: NodeId,
    hb: Heartbeat,
    body: RpMessage,
}

fn tampered(rp: &RpMessage, liar: NodeId) -> RpMessage {
    RpMessage { blamed: Blame::Node(NodeId(liar.0 ^ 1)), reassignments: Vec::new(), ..rp.clone() }
}

impl Sim<'_> {
    fn note(&mut self, node: NodeId, at: SimTime, action: RecoveryAction, hop: u8) {
        if !self.cfg.is_correct(node) {
            return;
        }
        if action != RecoveryAction::SafeMode {
            self.knows.insert(node);
        }
        let region = RegionId(node.0 / 100);
        let start = RecoveryStart { region, node, at, action, hop };
        self.out.starts.entry(node).and_modify(|s| if at < s.at { *s = start }).or_insert(start);
    }

    fn fault(&mut self, at: SimTime, detector: NodeId, class: FaultClass, scope: FaultScope, blamed: NodeId, why: &str) {
        self.out.faults.push(FaultRecord::new(at, detector, class, scope, Blame::Node(blamed), why));
    }

    fn valid(&self, a: &Arrival, src: RegionId, n: u64) -> bool {
        a.hb.region == src
            && a.hb.n == n
            && a.hb.extras == a.body.digest()
            && a.hb.validate(&self.verifier, &self.cfg.measurers(src), self.cfg.f).is_ok()
    }

    /// Sends `what` from `from` to every other node of its region.
    fn broadcast(&mut self, from: NodeId, at: SimTime, action: RecoveryAction, hop: u8) -> Result<Vec<(NodeId, SimTime)>, RecoveryError> {
        let region = RegionId(from.0 / 100);
        let mut got = Vec::new();
        for node in self.cfg.nodes(region) {
            if node == from || node == self.cfg.blamed() {
                continue;
            }
            if let Some(t) = self.net.send(from, node, at).map_err(net_err)?.time() {
                self.note(node, t, action, hop);
                got.push((node, t));
            }
        }
        Ok(got)
    }

    fn hop(&mut self, src: RegionId, dsts: &[RegionId], n: u64, rp_of: &BTreeMap<NodeId, RpMessage>, hop: u8) -> Result<(), RecoveryError> {
        let p = self.cfg.params.clone();
        let sched = round_schedule(n, &p)?;
        let next = round_schedule(n + 1, &p)?;
        let ms = self.cfg.measurers(src);
        self.out.rounds.push(n);

        let mut shares: Vec<(NodeId, SigShare)> = Vec::new();
        for m in &ms {
            if self.cfg.measurer_faults.get(m) == Some(&MeasurerFault::Silent) {
                continue;
            }
            let Some(rp) = rp_of.get(m) else { continue };
            let signer = self.keys.signer(*m).expect("registered");
            shares.push((*m, SigShare::new(&signer, src, n, rp.digest())));
            if self.cfg.is_correct(*m) {
                self.out.embedded.push((n, *m, rp.digest()));
            }
        }
        // A signature still missing one round later is an omission.
        for m in ms.iter().filter(|m| self.cfg.is_correct(**m)) {
            for peer in &ms {
                if peer != m && !shares.iter().any(|(s, _)| s == peer) {
                    let at = next.t_sig + p.intra_delay;
                    self.fault(at, *m, FaultClass::Omission, FaultScope::Intra, *peer, "rp signature missing in two rounds");
                }
            }
        }

        let ready_by = sched.t_send - p.hb_build;
        let mut arrivals: BTreeMap<NodeId, Vec<Arrival>> = BTreeMap::new();
        for (m, _) in shares.clone() {
            let rp = &rp_of[&m];
            let digest = rp.digest();
            let mut sigs = Vec::new();
            for (s, share) in shares.iter().filter(|(_, sh)| sh.extras == digest) {
                let arrived = *s == m || self.net.send(*s, m, sched.t_sig).map_err(net_err)?.time().is_some_and(|t| t <= ready_by);
                if arrived {
                    sigs.push(share.sig);
                }
            }
            let signer = self.keys.signer(m).expect("registered");
            let body = match self.cfg.measurer_faults.get(&m) {
                Some(MeasurerFault::Tamper) => tampered(rp, m),
                _ => rp.clone(),
            };
            // The body digest travels as the signed payload; a tampered body breaks every share.
            let hb = Heartbeat::build(&signer, src, n, body.digest(), sigs);
            for dst in dsts {
                for r in self.cfg.measurers(*dst) {
                    if let Some(at) = self.net.send(m, r, sched.t_send).map_err(net_err)?.time() {
                        arrivals.entry(r).or_default().push(Arrival { at, sender: m, hb: hb.clone(), body: body.clone() });
                    }
                }
            }
        }

        for dst in dsts {
            for r in self.cfg.measurers(*dst) {
                if r == self.cfg.blamed() {
                    continue;
                }
                let mut list = arrivals.remove(&r).unwrap_or_default();
                list.sort_by_key(|a| (a.at, a.sender));
                let correct = self.cfg.is_correct(r);
                let mut accepted = None;
                for a in list.iter().filter(|a| a.at <= sched.t_accept) {
                    if self.valid(a, src, n) {
                        accepted = accepted.or(Some(a.at));
                    } else if correct {
                        self.fault(a.at, r, FaultClass::Commission, FaultScope::Inter, a.sender, "rp heartbeat signatures do not cover the payload");
                    }
                }
                match (self.cfg.measurer_faults.get(&r), accepted) {
                    (None, Some(t)) => {
                        self.note(r, t, RecoveryAction::Recovered, hop);
                        self.broadcast(r, t, RecoveryAction::Recovered, hop)?;
                    }
                    (None, None) => {
                        self.note(r, sched.t_accept, RecoveryAction::SafeMode, hop);
                        self.broadcast(r, sched.t_accept, RecoveryAction::SafeMode, hop)?;
                    }
                    (Some(MeasurerFault::Tamper), Some(t)) => {
                        // Forwarded copy with an altered body: receivers reject it.
                        for node in self.cfg.nodes(*dst) {
                            if node == r || !self.cfg.is_correct(node) {
                                continue;
                            }
                            if let Some(at) = self.net.send(r, node, t).map_err(net_err)?.time() {
                                self.fault(at, node, FaultClass::Commission, FaultScope::Intra, r, "forwarded rp does not verify");
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

fn net_err(e: crate::simnet::NetError) -> RecoveryError {
    match e {
        crate::simnet::NetError::Time(t) => RecoveryError::Time(t),
        crate::simnet::NetError::UnknownNode(_) => RecoveryError::Setup("unknown node"),
    }
}

fn check_setup(cfg: &PropagationConfig) -> Result<(), RecoveryError> {
    if cfg.f == 0 || cfg.regions < 2 {
        return Err(RecoveryError::Setup("need f >= 1 and at least two regions"));
    }
    if cfg.detector.0 >= cfg.regions || cfg.faulty_region.0 >= cfg.regions {
        return Err(RecoveryError::Setup("region out of range"));
    }
    if cfg.params.detect_spread > cfg.d_det {
        return Err(RecoveryError::Setup("detection spread exceeds the detection bound"));
    }
    for r in cfg.region_ids() {
        let faulty = cfg.nodes(r).into_iter().filter(|n| !cfg.is_correct(*n)).count();
        if faulty > cfg.f {
            return Err(RecoveryError::Budget { region: r, faulty, f: cfg.f });
        }
    }
    Ok(())
}

/// Runs detection, local recovery and propagation for one fault.
pub fn run_propagation(cfg: &PropagationConfig) -> Result<PropagationResult, RecoveryError> {
    check_setup(cfg)?;
    let p = &cfg.params;
    let placement: Vec<(NodeId, RegionId)> =
        cfg.region_ids().into_iter().flat_map(|r| cfg.nodes(r).into_iter().map(move |n| (n, r))).collect();
    let all: Vec<NodeId> = placement.iter().map(|(n, _)| *n).collect();
    let keys = KeyStore::new(cfg.seed, all.iter().copied());
    let net = Network::new(cfg.seed, placement, IntraLinkModel { delay: p.intra_delay, spread: p.intra_spread }, cfg.inter);
    let mut rng: TrialRng = stream_rng(cfg.seed, &[21]);

    let (det, bad) = (cfg.detector, cfg.faulty_region);
    let blamed = cfg.blamed();
    let scope = if det == bad { FaultScope::Intra } else { FaultScope::Inter };
    let detectors: Vec<NodeId> = cfg.replicas(det).into_iter().filter(|n| cfg.is_correct(*n)).collect();
    if detectors.is_empty() {
        return Err(RecoveryError::Setup("no correct detector"));
    }
    let latest = cfg.t_rls + cfg.d_det;
    let times: Vec<SimTime> = detectors
        .iter()
        .map(|_| latest - SimDuration::from_nanos(rng.random_range(0..=p.detect_spread.as_nanos())))
        .collect();
    let t_det = *times.iter().min().expect("non-empty");
    let expected = all.iter().copied().filter(|n| cfg.is_correct(*n)).collect();
    let mut sim = Sim {
        cfg,
        net,
        verifier: keys.verifier(),
        keys,
        knows: BTreeSet::new(),
        out: PropagationResult {
            t_det,
            bound: t_det + btr_deadline(p),
            blamed,
            class: cfg.class,
            scope,
            rounds: Vec::new(),
            starts: BTreeMap::new(),
            faults: Vec::new(),
            embedded: Vec::new(),
            expected,
        },
    };
    for (d, t) in detectors.iter().zip(&times) {
        sim.out.faults.push(FaultRecord::new(*t, *d, cfg.class, scope, Blame::Node(blamed), "detected"));
        sim.note(*d, *t, RecoveryAction::Local, 0);
        sim.broadcast(*d, *t, RecoveryAction::Local, 0)?;
    }

    let mut slots = TaskSlots::default();
    for n in cfg.nodes(bad) {
        slots.capacity.insert(n, 2);
    }
    slots.assignment.insert(APP_TASK, cfg.replicas(bad).into_iter().collect());
    slots.assignment.insert(MEASURE_TASK, cfg.measurers(bad).into_iter().collect());
    let mut scenario = FaultScenario::default();
    let moved = apply_local_recovery(&mut scenario, bad, cfg.f, Blame::Node(blamed), &mut slots, &BTreeMap::new())?;

    let request = RpMessage {
        origin: det,
        class: cfg.class,
        scope,
        blamed: Blame::Node(blamed),
        job: JobId::new(APP_TASK, 0),
        t_rls: cfg.t_rls,
        reassignments: Vec::new(),
        new_input: false,
        safe_mode: false,
    };
    let announce = RpMessage { origin: bad, reassignments: moved, ..request.clone() };
    let others: Vec<RegionId> = cfg.region_ids().into_iter().filter(|r| *r != bad).collect();
    let senders = |r: RegionId| cfg.measurers(r).into_iter().filter(|m| *m != blamed);

    if det == bad {
        let n = rp_round_for(cfg.t_rls, cfg.d_det, p)?;
        let rp_of = senders(bad).map(|m| (m, announce.clone())).collect();
        sim.hop(bad, &others, n, &rp_of, 1)?;
    } else {
        let n1 = rp_round_for(cfg.t_rls, cfg.d_det, p)?;
        let rp_of = senders(det).map(|m| (m, request.clone())).collect();
        sim.hop(det, &[bad], n1, &rp_of, 1)?;
        // Every correct node of the faulty region has acted by this instant.
        let ready = round_schedule(n1, p)?.t_accept + p.intra_delay;
        let n2 = rp_round_for(ready, SimDuration::ZERO, p)?;
        let safe = RpMessage { safe_mode: true, reassignments: Vec::new(), ..announce.clone() };
        let rp_of = senders(bad)
            .map(|m| {
                let knows = !cfg.is_correct(m) || sim.knows.contains(&m);
                (m, if knows { announce.clone() } else { safe.clone() })
            })
            .collect();
        sim.hop(bad, &others, n2, &rp_of, 2)?;
    }
    Ok(sim.out)
}

/// One row per correct node.
pub fn audit_csv(r: &PropagationResult) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t_det", "kind", "blamed", "node", "region", "t_recovery_start", "action", "hop", "d_rp_bound", "bound_met"])
        .expect("in-memory write");
    let kind = format!("{:?}-{:?}", r.class, r.scope).to_lowercase();
    for s in r.starts.values() {
        w.write_record([
            r.t_det.to_string(),
            kind.clone(),
            r.blamed.to_string(),
            s.node.to_string(),
            s.region.to_string(),
            s.at.to_string(),
            format!("{:?}", s.action).to_lowercase(),
            s.hop.to_string(),
            r.bound.to_string(),
            (s.at <= r.bound).to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}
