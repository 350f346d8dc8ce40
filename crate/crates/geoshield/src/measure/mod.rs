//! Per-round inter-region latency measurement.
//!
//! Upstream measurers co-sign a heartbeat each round; downstream measurers time its
//! arrival, exchange signed proposals, and agree on the smallest reasonable latency
//! plus the jitter bound, or on TIMEOUT.

mod early;
mod msg;
mod sim;
mod state;

pub use early::{early_heartbeat_sweep, EarlySweep};
pub use msg::{round_payload, AcceptMsg, AcceptValue, Heartbeat, HeartbeatError, Proposal, SigShare};
pub use sim::*;
pub use state::{DecideOutcome, HeartbeatOutcome, LoggedProposal, MeasureCtx, ProposalOutcome, RoundState};
