//! Byzantine strategies and attack budgets.
//!
//! A [`Strategy`] decides, message by message, what a compromised node does with its own
//! inter-region sends. Strategies hold no signing keys of other nodes, so they can drop,
//! delay or replace their own messages but never forge someone else's.
//! [`ProtocolAttack`] names the step-level attacks and maps each one onto the behaviour
//! switch of the simulator that exercises it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{NodeId, RegionId, SimDuration, SimTime};
use crate::meas_dispute::DisputeBehavior;
use crate::measure::MeasureBehavior;
use crate::poc::PocAttack;
use crate::tgs::{adaptive_should_drop, Compromise, TgsAttack, TgsParams, SCORE_EPS};

/// What happens to one outgoing message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendAction {
    Pass,
    Drop,
    Delay(SimDuration),
    /// Send a substituted payload signed with the node's own key.
    Replace,
}

/// Facts about one send as seen by the compromised node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SendCtx {
    pub now: SimTime,
    pub inter_region: bool,
    /// The node currently runs an inter-region task.
    pub assigned: bool,
}

pub trait Strategy {
    fn on_send(&mut self, ctx: &SendCtx) -> SendAction;

    /// Reports how the receivers classified the messages of the last invocation.
    fn observe(&mut self, _suspicious: usize, _normal: usize) {}
}

/// Drops every inter-region message while assigned an inter-region task.
#[derive(Debug, Clone, Copy, Default)]
pub struct Aggressive;

impl Strategy for Aggressive {
    fn on_send(&mut self, ctx: &SendCtx) -> SendAction {
        if ctx.inter_region && ctx.assigned {
            SendAction::Drop
        } else {
            SendAction::Pass
        }
    }
}

/// Misbehaves on a whole invocation only if its own score stays positive afterwards.
/// It mirrors its score exactly, which is the strongest knowledge it could have.
#[derive(Debug, Clone, Copy)]
pub struct Adaptive {
    pub params: TgsParams,
    /// Messages it sends per invocation.
    pub messages: usize,
    /// Drop, or delay past the deadline by this much.
    pub delay: Option<SimDuration>,
    pub score: f64,
    /// Sends left in the current invocation and whether it misbehaves on them.
    pending: usize,
    acting: bool,
}

impl Adaptive {
    pub fn new(params: TgsParams, messages: usize, delay: Option<SimDuration>) -> Self {
        Adaptive { params, messages, delay, score: TgsParams::S_MAX, pending: 0, acting: false }
    }

    /// Under `beta <= messages` a single misbehaving invocation already flags the node.
    pub fn applicable(&self) -> bool {
        adaptive_should_drop(TgsParams::S_MAX, &self.params, self.messages)
    }
}

impl Strategy for Adaptive {
    fn on_send(&mut self, ctx: &SendCtx) -> SendAction {
        if !(ctx.inter_region && ctx.assigned) {
            return SendAction::Pass;
        }
        if self.pending == 0 {
            self.pending = self.messages;
            self.acting = adaptive_should_drop(self.score, &self.params, self.messages);
        }
        self.pending -= 1;
        match (self.acting, self.delay) {
            (false, _) => SendAction::Pass,
            (true, Some(d)) => SendAction::Delay(d),
            (true, None) => SendAction::Drop,
        }
    }

    fn observe(&mut self, suspicious: usize, normal: usize) {
        let (pen, awd) = (self.params.penalty(), self.params.award());
        self.score -= suspicious as f64 * pen;
        for _ in 0..normal {
            self.score = (self.score + awd).min(TgsParams::S_MAX);
        }
        if self.score <= SCORE_EPS {
            // Flagged: a reassigned node restarts at the initial score.
            self.score = TgsParams::S_MAX;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolAttack {
    EarlyHeartbeat,
    LateHeartbeat,
    EquivocateAccept,
    IncorrectOutput,
    SelectivePocForward,
    /// A receiver that claims it missed every message.
    LyingReceiver,
}

impl ProtocolAttack {
    pub const ALL: [ProtocolAttack; 6] = [
        ProtocolAttack::EarlyHeartbeat,
        ProtocolAttack::LateHeartbeat,
        ProtocolAttack::EquivocateAccept,
        ProtocolAttack::IncorrectOutput,
        ProtocolAttack::SelectivePocForward,
        ProtocolAttack::LyingReceiver,
    ];

    pub fn measure(self) -> Option<MeasureBehavior> {
        match self {
            ProtocolAttack::EarlyHeartbeat => Some(MeasureBehavior::EarlyHeartbeat),
            ProtocolAttack::LateHeartbeat => Some(MeasureBehavior::LateHeartbeat(SimDuration::from_millis(50))),
            ProtocolAttack::EquivocateAccept => Some(MeasureBehavior::EquivocateAccept(SimDuration::from_millis(5))),
            _ => None,
        }
    }

    /// Behaviour of the equivocator once the dispute starts.
    pub fn dispute(self) -> Option<DisputeBehavior> {
        (self == ProtocolAttack::EquivocateAccept).then_some(DisputeBehavior::Correct)
    }

    pub fn poc(self) -> Option<PocAttack> {
        match self {
            ProtocolAttack::IncorrectOutput => Some(PocAttack::ForgedOutput),
            ProtocolAttack::SelectivePocForward => Some(PocAttack::SelectiveForward),
            _ => None,
        }
    }

    pub fn tgs(self) -> Option<(TgsAttack, Compromise)> {
        (self == ProtocolAttack::LyingReceiver).then_some((TgsAttack::Aggressive, Compromise::Downstream))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StrategyKind {
    Aggressive,
    Adaptive { delay_ms: Option<u64> },
    Protocol { attack: ProtocolAttack },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeAttack {
    pub node: NodeId,
    pub region: RegionId,
    pub strategy: StrategyKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub compromised: Vec<NodeAttack>,
    /// Instant at which the nodes turn faulty.
    #[serde(default)]
    pub at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdversaryError {
    #[error("region {region}: {count} compromised nodes exceed f = {f}")]
    RegionBudget { region: RegionId, count: usize, f: usize },
    #[error("{count} compromised nodes exceed the system-wide budget {total}")]
    TotalBudget { count: usize, total: usize },
    #[error("node {0} listed twice")]
    Duplicate(NodeId),
    #[error("region {0} is not part of the system")]
    UnknownRegion(RegionId),
}

impl AttackSpec {
    /// Enforces at most `f[region]` compromised nodes per region and `total` overall.
    pub fn validate(&self, f: &BTreeMap<RegionId, usize>, total: usize) -> Result<(), AdversaryError> {
        let mut per: BTreeMap<RegionId, usize> = BTreeMap::new();
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.compromised {
            if !seen.insert(a.node) {
                return Err(AdversaryError::Duplicate(a.node));
            }
            *per.entry(a.region).or_insert(0) += 1;
        }
        for (region, count) in per {
            let limit = *f.get(&region).ok_or(AdversaryError::UnknownRegion(region))?;
            if count > limit {
                return Err(AdversaryError::RegionBudget { region, count, f: limit });
            }
        }
        if self.compromised.len() > total {
            return Err(AdversaryError::TotalBudget { count: self.compromised.len(), total });
        }
        Ok(())
    }

    pub fn strategy_of(&self, node: NodeId) -> Option<StrategyKind> {
        self.compromised.iter().find(|a| a.node == node).map(|a| a.strategy)
    }
}
