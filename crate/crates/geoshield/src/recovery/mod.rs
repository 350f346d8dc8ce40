//! Fault records, local recovery bookkeeping and bounded-time recovery propagation.

mod fault;
mod propagate;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{Digest, DigestWriter, JobId, NodeId, RegionId, SimDuration, SimTime, TaskId, TimeError, TimingParams};
use crate::tgs::TaskSlots;

pub use fault::{Blame, FaultClass, FaultRecord, FaultScope};
pub use propagate::{
    audit_csv, run_propagation, MeasurerFault, PropagationConfig, PropagationResult, RecoveryAction, RecoveryStart,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecoveryError {
    #[error("region {region} has {faulty} known-faulty nodes, more than f = {f}")]
    Budget { region: RegionId, faulty: usize, f: usize },
    #[error("invalid propagation setup: {0}")]
    Setup(&'static str),
    #[error(transparent)]
    Time(#[from] TimeError),
}

/// Smallest round whose signature exchange starts at or after `t_rls + d_det`.
pub fn rp_round_for(t_rls: SimTime, d_det: SimDuration, p: &TimingParams) -> Result<u64, TimeError> {
    let target = t_rls.checked_add(d_det)?;
    let lead = p.intra_delay.checked_add(p.hb_build)?;
    // t_sig(n) = epoch + n * period - lead
    let shifted = target.checked_add(lead)?.since(p.epoch).unwrap_or(SimDuration::ZERO).as_nanos();
    Ok(shifted.div_ceil(p.period.as_nanos()).max(1))
}

/// Worst-case time from detection until every node that must act has started recovery
/// or entered safe mode: two propagation hops.
pub fn btr_deadline(p: &TimingParams) -> SimDuration {
    (p.detect_spread + p.period + p.intra_delay * 2 + p.hb_exec + p.hb_timeout) * 2
}

/// A task moved off an excluded node; `to == None` means no node had room.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Reassignment {
    pub task: TaskId,
    pub from: NodeId,
    pub to: Option<NodeId>,
}

/// Recovery payload carried inside heartbeats.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RpMessage {
    pub origin: RegionId,
    pub class: FaultClass,
    pub scope: FaultScope,
    pub blamed: Blame,
    pub job: JobId,
    pub t_rls: SimTime,
    pub reassignments: Vec<Reassignment>,
    pub new_input: bool,
    /// The origin region could not validate the fault and switched to safe mode.
    pub safe_mode: bool,
}

impl RpMessage {
    pub fn digest(&self) -> Digest {
        let mut w = DigestWriter::new("rp");
        w.u32(self.origin.0)
            .u8(self.class as u8)
            .u8(self.scope as u8)
            .u32(self.job.task.0)
            .u64(self.job.index)
            .u64(self.t_rls.as_nanos())
            .u8(self.new_input as u8)
            .u8(self.safe_mode as u8);
        match self.blamed {
            Blame::Node(n) => w.u8(0).u32(n.0),
            Blame::Link(a, b) => w.u8(1).u32(a.0).u32(b.0),
        };
        w.u64(self.reassignments.len() as u64);
        for r in &self.reassignments {
            w.u32(r.task.0).u32(r.from.0).u32(r.to.map_or(u32::MAX, |n| n.0));
        }
        w.finish()
    }
}

/// Known-faulty nodes and links plus the current mode of each region. Only grows.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FaultScenario {
    pub faulty_nodes: BTreeSet<NodeId>,
    pub faulty_links: BTreeSet<(NodeId, NodeId)>,
    pub mode: BTreeMap<RegionId, u64>,
    pub out_of_model: bool,
}

/// Records validated fault evidence for `region`, excludes a blamed node and moves its
/// tasks to the lowest-counter nodes with room. `slots.capacity` lists the region's nodes.
pub fn apply_local_recovery(
    scenario: &mut FaultScenario,
    region: RegionId,
    f: usize,
    blamed: Blame,
    slots: &mut TaskSlots,
    flags: &BTreeMap<NodeId, u32>,
) -> Result<Vec<Reassignment>, RecoveryError> {
    *scenario.mode.entry(region).or_insert(0) += 1;
    let node = match blamed {
        Blame::Link(a, b) => {
            scenario.faulty_links.insert((a, b));
            return Ok(Vec::new());
        }
        Blame::Node(n) => n,
    };
    scenario.faulty_nodes.insert(node);
    let faulty = slots.capacity.keys().filter(|n| scenario.faulty_nodes.contains(n)).count();
    if faulty > f {
        scenario.out_of_model = true;
        return Err(RecoveryError::Budget { region, faulty, f });
    }
    slots.excluded.insert(node);
    let tasks: Vec<TaskId> = slots.assignment.iter().filter(|(_, s)| s.contains(&node)).map(|(t, _)| *t).collect();
    let mut out = Vec::new();
    for task in tasks {
        let to = slots.select_replacement(task, flags);
        match to {
            Some(to) => slots.reassign(task, node, to),
            None => {
                slots.assignment.entry(task).or_default().remove(&node);
            }
        }
        out.push(Reassignment { task, from: node, to });
    }
    Ok(out)
}

/// Tracks the window in which the system may be exposed after faults. A fault arriving
/// while recovery is still open restarts the deadline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExposureTracker {
    pub per_fault: SimDuration,
    open: Option<(SimTime, SimTime)>,
    closed: SimDuration,
}

impl ExposureTracker {
    pub fn new(d_rp: SimDuration, d_rec_intra: SimDuration) -> Self {
        ExposureTracker { per_fault: d_rp + d_rec_intra, open: None, closed: SimDuration::ZERO }
    }

    /// Registers a fault at `t` and returns the instant by which the system is safe again.
    pub fn on_fault(&mut self, t: SimTime) -> SimTime {
        let deadline = t + self.per_fault;
        self.open = Some(match self.open {
            Some((start, end)) if t < end => (start, deadline),
            Some((start, end)) => {
                self.closed = self.closed + end.since(start).unwrap_or(SimDuration::ZERO);
                (t, deadline)
            }
            None => (t, deadline),
        });
        deadline
    }

    pub fn safe_by(&self) -> Option<SimTime> {
        self.open.map(|(_, end)| end)
    }

    /// Total length of all exposure windows so far.
    pub fn exposure(&self) -> SimDuration {
        self.closed + self.open.map_or(SimDuration::ZERO, |(s, e)| e.since(s).unwrap_or(SimDuration::ZERO))
    }
}
