use std::collections::BTreeMap;

use rand::Rng;

use crate::core::{NodeId, SimDuration, SimTime, TimeError};

/// Per-node clock offsets; local reading = true time + offset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClockModel {
    offsets: BTreeMap<NodeId, i64>,
}

impl ClockModel {
    pub fn perfect(nodes: impl IntoIterator<Item = NodeId>) -> Self {
        ClockModel { offsets: nodes.into_iter().map(|n| (n, 0)).collect() }
    }

    /// Offsets drawn uniformly from `[-skew/2, skew/2]`, so any two differ by at most `skew`.
    pub fn random<R: Rng>(nodes: impl IntoIterator<Item = NodeId>, skew: SimDuration, rng: &mut R) -> Self {
        let half = (skew.as_nanos() / 2) as i64;
        ClockModel { offsets: nodes.into_iter().map(|n| (n, rng.random_range(-half..=half))).collect() }
    }

    pub fn from_offsets(offsets: impl IntoIterator<Item = (NodeId, i64)>) -> Self {
        ClockModel { offsets: offsets.into_iter().collect() }
    }

    pub fn set(&mut self, node: NodeId, offset_ns: i64) {
        self.offsets.insert(node, offset_ns);
    }

    pub fn offset(&self, node: NodeId) -> i64 {
        self.offsets.get(&node).copied().unwrap_or(0)
    }

    /// Largest pairwise offset difference.
    pub fn spread(&self) -> u64 {
        let lo = self.offsets.values().min().copied().unwrap_or(0);
        let hi = self.offsets.values().max().copied().unwrap_or(0);
        (hi - lo) as u64
    }

    pub fn respects(&self, skew: SimDuration) -> bool {
        self.spread() <= skew.as_nanos()
    }

    pub fn local_clock(&self, node: NodeId, true_time: SimTime) -> Result<SimTime, TimeError> {
        true_time.offset_by(self.offset(node))
    }

    /// True instant at which `node`'s clock reads `local`.
    pub fn true_time(&self, node: NodeId, local: SimTime) -> Result<SimTime, TimeError> {
        local.offset_by(-self.offset(node))
    }
}
