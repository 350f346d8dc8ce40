use std::fmt;

use serde::{Deserialize, Serialize};

use crate::core::{NodeId, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FaultClass {
    Omission,
    Commission,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FaultScope {
    Intra,
    Inter,
}

/// What a fault declaration blames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Blame {
    Node(NodeId),
    Link(NodeId, NodeId),
}

impl Blame {
    pub fn node(self) -> Option<NodeId> {
        match self {
            Blame::Node(n) => Some(n),
            Blame::Link(..) => None,
        }
    }
}

impl fmt::Display for Blame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Blame::Node(n) => write!(f, "{n}"),
            Blame::Link(a, b) => write!(f, "{a}-{b}"),
        }
    }
}

/// A locally detected fault.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FaultRecord {
    pub at: SimTime,
    pub detector: NodeId,
    pub class: FaultClass,
    pub scope: FaultScope,
    pub blamed: Blame,
    pub reason: String,
}

impl FaultRecord {
    pub fn new(at: SimTime, detector: NodeId, class: FaultClass, scope: FaultScope, blamed: Blame, reason: &str) -> Self {
        FaultRecord { at, detector, class, scope, blamed, reason: reason.to_string() }
    }
}
