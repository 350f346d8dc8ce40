//! Proof-of-correctness endorsements for inter-region messages.
//!
//! Every replica of the producing task signs the hash of its output; the region's
//! measurers assemble the signatures into a PoC and attach it to a heartbeat. A consumer
//! treats an input as correct only if a valid PoC for its hash reached it in time.

mod trial;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::core::{
    round_schedule, Digest, DigestWriter, JobId, NodeId, SimDuration, SimTime, Signature, Signer, TaskId, TimeError,
    TimingParams, Verifier,
};
use crate::recovery::{Blame, FaultClass, FaultRecord, FaultScope};

pub use trial::{run_poc_trial, PocAttack, PocTrialConfig, PocTrialResult, VerdictRow};

/// An output of job `job` addressed to the consuming task `dest`, signed by its sender.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputMsg {
    pub sender: NodeId,
    pub job: JobId,
    pub dest: TaskId,
    pub content: Digest,
    pub sig: Signature,
}

/// Hash of an output as endorsed by the producing replicas. The job id is part of the
/// hashed identifier, so an old output relabelled with a new job hashes differently.
pub fn output_hash(job: JobId, dest: TaskId, content: &Digest) -> Digest {
    let mut w = DigestWriter::new("output");
    w.u32(job.task.0).u64(job.index).u32(dest.0).digest(content);
    w.finish()
}

impl InputMsg {
    pub fn build(signer: &Signer, job: JobId, dest: TaskId, content: Digest) -> Self {
        let sig = signer.sign_digest(&Self::envelope(signer.node(), &output_hash(job, dest, &content)));
        InputMsg { sender: signer.node(), job, dest, content, sig }
    }

    fn envelope(sender: NodeId, hash: &Digest) -> Digest {
        let mut w = DigestWriter::new("input-msg");
        w.u32(sender.0).digest(hash);
        w.finish()
    }

    pub fn hash(&self) -> Digest {
        output_hash(self.job, self.dest, &self.content)
    }

    pub fn signature_ok(&self, verifier: &Verifier) -> bool {
        self.sig.signer == self.sender && verifier.check(&Self::envelope(self.sender, &self.hash()), &self.sig)
    }
}

/// Payload every producing replica signs.
pub fn poc_payload(dest: TaskId, job: JobId, hash: &Digest) -> Digest {
    let mut w = DigestWriter::new("poc");
    w.u32(dest.0).u32(job.task.0).u64(job.index).digest(hash);
    w.finish()
}

/// One replica's endorsement of an output hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PocShare {
    pub dest: TaskId,
    pub job: JobId,
    pub hash: Digest,
    pub sig: Signature,
}

impl PocShare {
    pub fn new(signer: &Signer, dest: TaskId, job: JobId, hash: Digest) -> Self {
        PocShare { dest, job, hash, sig: signer.sign_digest(&poc_payload(dest, job, &hash)) }
    }

    pub fn is_valid(&self, verifier: &Verifier) -> bool {
        verifier.check(&poc_payload(self.dest, self.job, &self.hash), &self.sig)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Poc {
    pub dest: TaskId,
    pub job: JobId,
    pub hash: Digest,
    pub sigs: Vec<Signature>,
}

impl Poc {
    /// Distinct `replicas` whose signature verifies.
    pub fn valid_signers(&self, verifier: &Verifier, replicas: &[NodeId]) -> usize {
        let payload = poc_payload(self.dest, self.job, &self.hash);
        let signers: BTreeSet<NodeId> = self
            .sigs
            .iter()
            .filter(|s| replicas.contains(&s.signer) && verifier.check(&payload, s))
            .map(|s| s.signer)
            .collect();
        signers.len()
    }

    /// Final iff `f + 1` producing replicas endorse the hash.
    pub fn is_final(&self, verifier: &Verifier, replicas: &[NodeId], f: usize) -> bool {
        self.valid_signers(verifier, replicas) > f
    }

    fn order_key(&self) -> (TaskId, JobId, Digest) {
        (self.dest, self.job, self.hash)
    }
}

/// Canonical heartbeat attachment digest: PoCs in ascending `(task, job)` order.
pub fn poc_list_digest(pocs: &[Poc]) -> Digest {
    let mut sorted: Vec<&Poc> = pocs.iter().collect();
    sorted.sort_by_key(|p| p.order_key());
    let mut w = DigestWriter::new("poc-list");
    w.u64(sorted.len() as u64);
    for p in sorted {
        w.u32(p.dest.0).u32(p.job.task.0).u64(p.job.index).digest(&p.hash).u64(p.sigs.len() as u64);
        for s in &p.sigs {
            w.u32(s.signer.0).digest(&s.tag);
        }
    }
    w.finish()
}

/// Time from an output's deadline to the send instant of a heartbeat that can carry its PoC.
pub fn poc_gap(p: &TimingParams) -> SimDuration {
    p.poc_exec + p.intra_delay * 2 + p.sig_exec + p.hb_build
}

/// Smallest round whose send instant is at least `t_m + poc_gap`.
pub fn poc_round_for(t_m: SimTime, p: &TimingParams) -> Result<u64, TimeError> {
    first_round_at_or_after(t_m.checked_add(poc_gap(p))?, p)
}

pub(crate) fn first_round_at_or_after(t: SimTime, p: &TimingParams) -> Result<u64, TimeError> {
    let since = t.since(p.epoch).unwrap_or(SimDuration::ZERO).as_nanos();
    let period = p.period.as_nanos();
    Ok(since.div_ceil(period).max(1))
}

/// A measurer's view of the shares it received for one job.
#[derive(Debug, Clone, Default)]
pub struct ShareCollection {
    pub received: BTreeMap<NodeId, PocShare>,
}

/// Outcome of share assembly at one producing-region measurer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assembly {
    pub poc: Option<Poc>,
    pub faults: Vec<FaultRecord>,
}

/// Assembles the final PoC at `deadline`. `reference` is the output hash the region's
/// re-execution check yields; replicas endorsing anything else are blamed.
#[allow(clippy::too_many_arguments)]
pub fn assemble_poc(
    verifier: &Verifier,
    me: NodeId,
    replicas: &[NodeId],
    f: usize,
    dest: TaskId,
    job: JobId,
    reference: Digest,
    shares: &ShareCollection,
    deadline: SimTime,
) -> Assembly {
    let mut faults = Vec::new();
    let mut agreeing = Vec::new();
    for r in replicas {
        match shares.received.get(r) {
            None => faults.push(FaultRecord::new(
                deadline,
                me,
                FaultClass::Omission,
                FaultScope::Intra,
                Blame::Node(*r),
                "missing poc share",
            )),
            Some(s) if s.sig.signer != *r || s.dest != dest || s.job != job || !s.is_valid(verifier) => {
                faults.push(FaultRecord::new(
                    deadline,
                    me,
                    FaultClass::Commission,
                    FaultScope::Intra,
                    Blame::Node(*r),
                    "invalid poc share",
                ))
            }
            Some(s) if s.hash != reference => faults.push(FaultRecord::new(
                deadline,
                me,
                FaultClass::Commission,
                FaultScope::Intra,
                Blame::Node(*r),
                "replica output disagrees",
            )),
            Some(s) => agreeing.push(s.sig),
        }
    }
    let poc = (agreeing.len() > f).then_some(Poc { dest, job, hash: reference, sigs: agreeing });
    Assembly { poc, faults }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Verdict {
    Correct,
    Incorrect,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Correct => "correct",
            Verdict::Incorrect => "incorrect",
        })
    }
}

/// Candidate inputs and endorsements one consuming replica holds for one job.
#[derive(Debug, Clone, Default)]
pub struct PendingInputSet {
    pub candidates: BTreeMap<Digest, InputMsg>,
    pub pocs: BTreeMap<Digest, Poc>,
    /// Hash of the input consumed, once decided.
    pub used: Option<Digest>,
}

impl PendingInputSet {
    /// Adds a candidate; returns `true` on first sight so the caller forwards it once.
    pub fn offer_input(&mut self, m: InputMsg) -> bool {
        let h = m.hash();
        if self.candidates.contains_key(&h) {
            return false;
        }
        self.candidates.insert(h, m);
        true
    }

    /// Adds a PoC already checked final; returns `true` on first sight.
    pub fn offer_poc(&mut self, poc: Poc) -> bool {
        if self.pocs.contains_key(&poc.hash) {
            return false;
        }
        self.pocs.insert(poc.hash, poc);
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Validation {
    pub verdicts: Vec<(InputMsg, Verdict)>,
    /// No endorsed input exists for the job; a replacement is requested through recovery.
    pub new_input_request: bool,
    /// Set when the round's latency decision is TIMEOUT.
    pub safe_mode_now: bool,
    /// Safe mode starts here unless an endorsed replacement arrives first.
    pub replacement_deadline: Option<SimTime>,
    pub faults: Vec<FaultRecord>,
}

/// Classifies every candidate at the decision instant of the PoC round.
pub fn downstream_validate(
    me: NodeId,
    job: JobId,
    set: &mut PendingInputSet,
    timed_out: bool,
    at: SimTime,
    task_timeout: SimDuration,
) -> Validation {
    let mut verdicts = Vec::new();
    let mut faults = Vec::new();
    for (h, m) in &set.candidates {
        let endorsed = set.pocs.get(h).is_some_and(|p| p.job == m.job && p.dest == m.dest) && m.job == job;
        if endorsed {
            verdicts.push((m.clone(), Verdict::Correct));
        } else {
            verdicts.push((m.clone(), Verdict::Incorrect));
            faults.push(FaultRecord::new(
                at,
                me,
                FaultClass::Commission,
                FaultScope::Inter,
                Blame::Node(m.sender),
                "input without poc",
            ));
        }
    }
    let endorsed_job = set.pocs.values().any(|p| p.job == job);
    set.used = verdicts.iter().find(|(_, v)| *v == Verdict::Correct).map(|(m, _)| m.hash());
    let new_input_request = !endorsed_job;
    Validation {
        verdicts,
        new_input_request,
        safe_mode_now: timed_out,
        replacement_deadline: new_input_request.then(|| at + task_timeout),
        faults,
    }
}

/// Round and decision instant at which the PoC for an output due at `t_m` is judged.
pub fn poc_decision_time(t_m: SimTime, p: &TimingParams) -> Result<(u64, SimTime), TimeError> {
    let n = poc_round_for(t_m, p)?;
    Ok((n, round_schedule(n, p)?.t_decide))
}
