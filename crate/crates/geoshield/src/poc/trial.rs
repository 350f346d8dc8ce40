//! End-to-end PoC trials: one producing and one consuming region, a few jobs, and a
//! Byzantine strategy applied by up to `f` nodes per region.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    assemble_poc, downstream_validate, output_hash, poc_list_digest, poc_round_for, InputMsg, Poc, PocShare,
    PendingInputSet, ShareCollection, Verdict,
};
use crate::core::{
    round_schedule, Digest, DigestWriter, JobId, KeyStore, NodeId, RegionId, Signature, SimDuration, SimTime, TaskId,
    TimingParams,
};
use crate::measure::{Heartbeat, MeasureError, SigShare};
use crate::recovery::{Blame, FaultClass, FaultRecord, FaultScope};
use crate::simnet::{stream_rng, InterLinkModel, IntraLinkModel, Network};

const PRODUCER: RegionId = RegionId(0);
const CONSUMER: RegionId = RegionId(1);
const SRC_TASK: TaskId = TaskId(1);
const DEST_TASK: TaskId = TaskId(2);
const CONSUMER_BASE: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PocAttack {
    None,
    /// Faulty producing replicas emit and endorse a different output.
    ForgedOutput,
    /// As above, but endorse the forged hash at some measurers and the true one at others.
    SplitForgedOutput,
    /// A producing replica sends its output but no endorsement.
    WithholdShare,
    /// Faulty consuming measurers forward PoCs to one replica, as late as allowed.
    SelectiveForward,
    /// Faulty measurers inject a PoC for a forged hash, upstream in the heartbeat and
    /// downstream straight to the replicas.
    FabricatedPoc,
    /// Faulty producing replicas resend the previous job's output under the new job id;
    /// faulty consuming measurers forward the old PoC relabelled.
    Replay,
    /// Every heartbeat of the PoC round is lost.
    HeartbeatLoss,
}

impl PocAttack {
    pub const ALL: [PocAttack; 8] = [
        PocAttack::None,
        PocAttack::ForgedOutput,
        PocAttack::SplitForgedOutput,
        PocAttack::WithholdShare,
        PocAttack::SelectiveForward,
        PocAttack::FabricatedPoc,
        PocAttack::Replay,
        PocAttack::HeartbeatLoss,
    ];
}

#[derive(Debug, Clone)]
pub struct PocTrialConfig {
    pub params: TimingParams,
    pub f: usize,
    pub seed: u64,
    pub attack: PocAttack,
    pub jobs: u64,
    pub inter: InterLinkModel,
    /// Wait for an endorsed replacement input before entering safe mode.
    pub task_timeout: SimDuration,
}

impl PocTrialConfig {
    pub fn new(params: TimingParams, f: usize, seed: u64, attack: PocAttack) -> Self {
        let task_timeout = params.hb_timeout;
        PocTrialConfig { params, f, seed, attack, jobs: 3, inter: InterLinkModel::default(), task_timeout }
    }

    fn region(&self, base: u32) -> Vec<NodeId> {
        (0..=2 * self.f as u32).map(|i| NodeId(base + i)).collect()
    }

    /// The first `f + 1` nodes of a region replicate the task.
    fn replicas(&self, base: u32) -> Vec<NodeId> {
        self.region(base)[..=self.f].to_vec()
    }

    /// The last `f + 1` nodes of a region measure.
    fn measurers(&self, base: u32) -> Vec<NodeId> {
        self.region(base)[self.f..].to_vec()
    }
}

/// One classification of one candidate input at one consuming replica.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerdictRow {
    pub replica: NodeId,
    pub job: JobId,
    pub sender: NodeId,
    pub verdict: Verdict,
    pub decision_time: SimTime,
    pub safe_mode: bool,
}

#[derive(Debug, Clone, Default)]
pub struct PocTrialResult {
    pub faulty: BTreeSet<NodeId>,
    pub rows: Vec<VerdictRow>,
    pub faults: Vec<FaultRecord>,
    /// Per job: safe mode decided, and from when.
    pub safe_mode: BTreeMap<JobId, Option<SimTime>>,
    /// Correct consuming replicas agreed on every endorsed hash and every safe-mode decision.
    pub unanimous: bool,
    /// Some correct replica accepted an output that differs from the true one.
    pub forged_accepted: bool,
}

impl PocTrialResult {
    /// `replica,job,sender,verdict,decision_time,safe_mode` rows.
    pub fn verdict_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["replica", "job", "sender", "verdict", "decision_time", "safe_mode"]).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.replica.to_string(),
                r.job.to_string(),
                r.sender.to_string(),
                r.verdict.to_string(),
                r.decision_time.to_string(),
                r.safe_mode.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

fn content(j: u64, label: &str) -> Digest {
    let mut w = DigestWriter::new("job-output");
    w.bytes(label.as_bytes()).u64(j);
    w.finish()
}

fn garbage(node: NodeId, j: u64) -> Signature {
    let mut w = DigestWriter::new("garbage");
    w.u32(node.0).u64(j);
    Signature { signer: node, tag: w.finish() }
}

pub fn run_poc_trial(cfg: &PocTrialConfig) -> Result<PocTrialResult, MeasureError> {
    let p = &cfg.params;
    let f = cfg.f;
    let up_all = cfg.region(0);
    let down_all = cfg.region(CONSUMER_BASE);
    let (rep_u, meas_u) = (cfg.replicas(0), cfg.measurers(0));
    let (rep_d, meas_d) = (cfg.replicas(CONSUMER_BASE), cfg.measurers(CONSUMER_BASE));
    let keys = KeyStore::new(cfg.seed, up_all.iter().chain(&down_all).copied());
    let verifier = keys.verifier();
    let signer = |n: NodeId| keys.signer(n).expect("registered");
    let placement = up_all.iter().map(|n| (*n, PRODUCER)).chain(down_all.iter().map(|n| (*n, CONSUMER)));
    let intra = IntraLinkModel { delay: p.intra_delay, spread: p.intra_spread };
    let mut net = Network::new(cfg.seed, placement, intra, cfg.inter);

    let mut rng = stream_rng(cfg.seed, &[7]);
    let mut faulty = BTreeSet::new();
    if cfg.attack != PocAttack::None {
        for region in [&up_all, &down_all] {
            for i in rand::seq::index::sample(&mut rng, region.len(), f) {
                faulty.insert(region[i]);
            }
        }
    }
    let is_faulty = |n: &NodeId| faulty.contains(n);
    let attack = cfg.attack;

    let mut out = PocTrialResult { faulty: faulty.clone(), unanimous: true, ..Default::default() };
    let mut prev_poc: Option<Poc> = None;

    for j in 1..=cfg.jobs {
        let job = JobId::new(SRC_TASK, j);
        let offset = SimDuration::from_micros(rng.random_range(100_000..800_000));
        let t_m = p.epoch + p.period * j + offset;
        let n = poc_round_for(t_m, p)?;
        let sched = round_schedule(n, p)?;
        let truth = content(j, "true");
        let truth_hash = output_hash(job, DEST_TASK, &truth);
        let forged = content(j, "forged");
        let forged_hash = output_hash(job, DEST_TASK, &forged);

        // Producing replicas: outputs to the consumers, endorsements to the measurers.
        let mut inputs: BTreeMap<NodeId, Vec<(SimTime, InputMsg)>> = BTreeMap::new();
        let mut shares: BTreeMap<NodeId, ShareCollection> = BTreeMap::new();
        for r in &rep_u {
            let s = signer(*r);
            let bad = is_faulty(r);
            let sent = match attack {
                PocAttack::ForgedOutput | PocAttack::SplitForgedOutput if bad => forged,
                PocAttack::Replay if bad && j > 1 => content(j - 1, "true"),
                _ => truth,
            };
            let msg = InputMsg::build(&s, job, DEST_TASK, sent);
            for d in &rep_d {
                if let Some(at) = net.send(*r, *d, t_m)?.time() {
                    inputs.entry(*d).or_default().push((at, msg.clone()));
                }
            }
            if bad && attack == PocAttack::WithholdShare {
                continue;
            }
            for (k, m) in meas_u.iter().enumerate() {
                let endorsed = match attack {
                    PocAttack::SplitForgedOutput if bad && k % 2 == 1 => truth_hash,
                    _ => msg.hash(),
                };
                let at = net.send(*r, *m, t_m)?.time();
                if at.is_some_and(|t| t <= t_m + p.intra_delay) {
                    let share = PocShare::new(&s, DEST_TASK, job, endorsed);
                    shares.entry(*m).or_default().received.insert(*r, share);
                }
            }
        }

        // Producing measurers assemble and agree on the attachment list.
        let share_deadline = t_m + p.intra_delay;
        let mut lists: BTreeMap<NodeId, Vec<Poc>> = BTreeMap::new();
        for m in meas_u.iter().filter(|m| !is_faulty(m)) {
            let a = assemble_poc(
                &verifier,
                *m,
                &rep_u,
                f,
                DEST_TASK,
                job,
                truth_hash,
                &shares.remove(m).unwrap_or_default(),
                share_deadline,
            );
            out.faults.extend(a.faults);
            lists.insert(*m, a.poc.into_iter().collect());
        }
        let honest_list = lists.values().next().cloned().unwrap_or_default();
        let fabricated = Poc {
            dest: DEST_TASK,
            job,
            hash: forged_hash,
            sigs: rep_u
                .iter()
                .map(|r| {
                    if is_faulty(r) {
                        PocShare::new(&signer(*r), DEST_TASK, job, forged_hash).sig
                    } else {
                        garbage(*r, j)
                    }
                })
                .collect(),
        };

        let mut heartbeats: Vec<(NodeId, Heartbeat, Vec<Poc>)> = Vec::new();
        for u in &meas_u {
            let list = if is_faulty(u) {
                let mut l = honest_list.clone();
                if attack == PocAttack::FabricatedPoc {
                    l.push(fabricated.clone());
                }
                l
            } else {
                lists[u].clone()
            };
            let extras = poc_list_digest(&list);
            let sigs: Vec<Signature> = meas_u
                .iter()
                .filter(|v| is_faulty(v) || lists.get(v).is_some_and(|l| poc_list_digest(l) == extras))
                .map(|v| SigShare::new(&signer(*v), PRODUCER, n, extras).sig)
                .collect();
            // A correct measurer only sends once it holds a quorum; colluders send regardless.
            if !is_faulty(u) && sigs.len() <= f {
                continue;
            }
            let hb = Heartbeat::build(&signer(*u), PRODUCER, n, extras, sigs);
            heartbeats.push((*u, hb, list));
        }

        // Consuming measurers: first valid heartbeat by the cutoff.
        let mut received: BTreeMap<NodeId, (SimTime, Vec<Poc>)> = BTreeMap::new();
        for m in &meas_d {
            let mut arrivals = Vec::new();
            for (u, hb, list) in &heartbeats {
                if attack == PocAttack::HeartbeatLoss {
                    continue;
                }
                if let Some(at) = net.send(*u, *m, sched.t_send)?.time() {
                    arrivals.push((at, *u, hb, list));
                }
            }
            arrivals.sort_by_key(|a| (a.0, a.1));
            for (at, u, hb, list) in arrivals {
                if at > sched.t_hb_stop {
                    break;
                }
                let ok = hb.n == n
                    && hb.region == PRODUCER
                    && hb.validate(&verifier, &meas_u, f).is_ok()
                    && hb.extras == poc_list_digest(list)
                    && list.iter().all(|q| q.is_final(&verifier, &rep_u, f));
                if !ok {
                    if !is_faulty(m) {
                        out.faults.push(FaultRecord::new(
                            at,
                            *m,
                            FaultClass::Commission,
                            FaultScope::Inter,
                            Blame::Node(u),
                            "invalid heartbeat",
                        ));
                    }
                    continue;
                }
                received.entry(*m).or_insert((at, list.clone()));
            }
        }
        let timed_out = !meas_d.iter().any(|m| !is_faulty(m) && received.contains_key(m));

        // Measurers forward PoCs to the consuming replicas.
        let direct_window = sched.t_hb_stop + p.poc_exec + p.intra_delay;
        let peer_window = direct_window + p.intra_delay;
        let mut poc_in: BTreeMap<NodeId, Vec<(SimTime, NodeId, Poc)>> = BTreeMap::new();
        for m in &meas_d {
            let bad = is_faulty(m);
            let got = received.get(m);
            let (send_at, targets, pocs): (SimTime, Vec<NodeId>, Vec<Poc>) = match (bad, attack, got) {
                (true, PocAttack::SelectiveForward, Some((_, l))) => (sched.t_hb_stop, vec![rep_d[0]], l.clone()),
                (true, PocAttack::FabricatedPoc, _) => (sched.t_hb_stop, rep_d.clone(), vec![fabricated.clone()]),
                (true, PocAttack::Replay, _) => {
                    let mut l = Vec::new();
                    if let Some(old) = &prev_poc {
                        l.push(old.clone());
                        l.push(Poc { job, ..old.clone() });
                    }
                    (sched.t_hb_stop, rep_d.clone(), l)
                }
                (_, _, Some((at, l))) => (*at, rep_d.clone(), l.clone()),
                (_, _, None) => continue,
            };
            for d in targets {
                if let Some(at) = net.send(*m, d, send_at + p.poc_exec)?.time() {
                    for q in &pocs {
                        poc_in.entry(d).or_default().push((at, *m, q.clone()));
                    }
                }
            }
        }

        // Consuming replicas: direct copies, then one forwarding hop among peers.
        let correct_d: Vec<NodeId> = rep_d.iter().copied().filter(|d| !is_faulty(d)).collect();
        let mut sets: BTreeMap<NodeId, PendingInputSet> = BTreeMap::new();
        let mut relayed: Vec<(NodeId, SimTime, Poc)> = Vec::new();
        for d in &correct_d {
            let set = sets.entry(*d).or_default();
            let mut copies = poc_in.remove(d).unwrap_or_default();
            copies.sort_by_key(|c| (c.0, c.1));
            for (at, from, q) in copies {
                if at > direct_window || q.job != job {
                    continue;
                }
                if !q.is_final(&verifier, &rep_u, f) {
                    out.faults.push(FaultRecord::new(
                        at,
                        *d,
                        FaultClass::Commission,
                        FaultScope::Intra,
                        Blame::Node(from),
                        "invalid poc",
                    ));
                    continue;
                }
                if set.offer_poc(q.clone()) {
                    relayed.push((*d, at, q));
                }
            }
        }
        for (from, at, q) in relayed {
            for peer in rep_d.iter().filter(|v| **v != from) {
                let Some(arr) = net.send(from, *peer, at)?.time() else { continue };
                if arr <= peer_window {
                    if let Some(set) = sets.get_mut(peer) {
                        set.offer_poc(q.clone());
                    }
                }
            }
        }

        // Candidate inputs, with the same one-hop forwarding.
        let input_direct = sched.t_decide - p.intra_delay;
        let mut forwarded: Vec<(NodeId, SimTime, InputMsg)> = Vec::new();
        for d in &correct_d {
            let mut got = inputs.remove(d).unwrap_or_default();
            got.sort_by_key(|g| (g.0, g.1.sender));
            let set = sets.get_mut(d).expect("created above");
            for (at, msg) in got {
                if at <= input_direct && msg.signature_ok(&verifier) && set.offer_input(msg.clone()) {
                    forwarded.push((*d, at, msg));
                }
            }
        }
        for (from, at, msg) in forwarded {
            for peer in rep_d.iter().filter(|v| **v != from) {
                let Some(arr) = net.send(from, *peer, at)?.time() else { continue };
                if arr <= sched.t_decide {
                    if let Some(set) = sets.get_mut(peer) {
                        set.offer_input(msg.clone());
                    }
                }
            }
        }

        // Decision at the end of the PoC round.
        let mut endorsed_views = BTreeSet::new();
        let mut safe_views = BTreeSet::new();
        let mut safe_at = None;
        for d in &correct_d {
            let set = sets.get_mut(d).expect("created above");
            let v = downstream_validate(*d, job, set, timed_out, sched.t_decide, cfg.task_timeout);
            let safe = v.safe_mode_now || v.new_input_request;
            safe_at = if v.safe_mode_now { Some(sched.t_accept) } else { v.replacement_deadline };
            for (m, verdict) in &v.verdicts {
                if *verdict == Verdict::Correct && m.content != truth {
                    out.forged_accepted = true;
                }
                out.rows.push(VerdictRow {
                    replica: *d,
                    job,
                    sender: m.sender,
                    verdict: *verdict,
                    decision_time: sched.t_decide,
                    safe_mode: safe,
                });
            }
            out.faults.extend(v.faults);
            let endorsed: BTreeSet<Digest> = set.pocs.values().filter(|q| q.job == job).map(|q| q.hash).collect();
            endorsed_views.insert(endorsed);
            safe_views.insert(safe);
        }
        if endorsed_views.len() > 1 || safe_views.len() > 1 {
            out.unanimous = false;
        }
        out.safe_mode.insert(job, safe_at);
        prev_poc = honest_list.into_iter().next();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(attack: PocAttack, f: usize, seed: u64) -> PocTrialResult {
        run_poc_trial(&PocTrialConfig::new(TimingParams::default(), f, seed, attack)).unwrap()
    }

    #[test]
    fn honest_run_accepts_everything() {
        let r = run(PocAttack::None, 1, 1);
        assert!(r.unanimous && !r.forged_accepted);
        assert!(r.faults.is_empty(), "{:?}", r.faults);
        assert!(r.rows.iter().all(|row| row.verdict == Verdict::Correct && !row.safe_mode));
        assert!(r.safe_mode.values().all(Option::is_none));
    }

    #[test]
    fn forged_output_is_never_endorsed() {
        for seed in 0..20 {
            let r = run(PocAttack::ForgedOutput, 2, seed);
            assert!(r.unanimous && !r.forged_accepted, "seed {seed}");
            let faulty_replica = r.faulty.iter().any(|n| n.0 <= 2);
            if faulty_replica {
                assert!(r.rows.iter().all(|row| row.verdict == Verdict::Incorrect));
                assert!(r.rows.iter().all(|row| row.safe_mode));
            }
        }
    }

    #[test]
    fn heartbeat_loss_triggers_safe_mode_at_the_accept_instant() {
        let r = run(PocAttack::HeartbeatLoss, 1, 3);
        assert!(r.unanimous);
        for (job, at) in &r.safe_mode {
            let t = at.expect("safe mode");
            assert_eq!(t.as_nanos() % 1_000_000_000, 200_000_000, "{job}");
        }
    }

    #[test]
    fn every_strategy_keeps_unanimity() {
        for attack in PocAttack::ALL {
            for f in 1..=2 {
                for seed in 0..10 {
                    let mut cfg = PocTrialConfig::new(TimingParams::default(), f, seed, attack);
                    // Lossy links on half the seeds exercise the forwarding windows.
                    cfg.inter.drop_prob = if seed % 2 == 0 { 0.0 } else { 0.3 };
                    let r = run_poc_trial(&cfg).unwrap();
                    assert!(r.unanimous, "{attack:?} f={f} seed={seed}");
                    assert!(!r.forged_accepted, "{attack:?} f={f} seed={seed}");
                }
            }
        }
    }

    #[test]
    fn fabricated_poc_blames_the_forwarder() {
        let r = run(PocAttack::FabricatedPoc, 1, 5);
        let bad_meas: Vec<NodeId> = r.faulty.iter().copied().filter(|n| n.0 >= CONSUMER_BASE + 1).collect();
        for m in bad_meas {
            assert!(r.faults.iter().any(|x| x.blamed == Blame::Node(m) && x.reason == "invalid poc"));
        }
    }

    #[test]
    fn csv_has_header() {
        let r = run(PocAttack::None, 1, 2);
        assert!(r.verdict_csv().starts_with("replica,job,sender,verdict,decision_time,safe_mode\n"));
    }
}
