//! Resolution of inconsistent accept values within the downstream region.
//!
//! A declaration carries two conflicting signed values. Every measurer and log keeper
//! then shares its proposal log, blames whoever contradicts the logs, and re-decides on
//! the smallest latency found in at least `f + 1` logs.

mod run;
mod stages;

pub use run::{dispute_deadline, run_dispute, AuditRecord, DisputeBehavior, IncidentRecord, DisputeInput, DisputeOutcome, Participant};
pub use stages::{
    build_log, stage1_declare, stage2_validate, stage3_cross_validate, stage4_decide_new, BlameRule, Choice,
    DeclarationVerdict, DisputeBlame, Evidence, FaultDeclaration, LogEntry, NewAccept, ProposalLog, Stage3Result,
    Stage4Result,
};
