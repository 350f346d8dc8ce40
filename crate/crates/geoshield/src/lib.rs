//! Deterministic discrete-event simulator and protocol library for bounded-time
//! Byzantine recovery in geo-distributed cyber-physical systems.
//!
//! Module map:
//!
//! - [`core`]: identifiers, integer-nanosecond time, round schedule, signatures.
//! - [`simnet`]: event queue, clock skew, intra- and inter-region link models.
//! - [`measure`]: the per-round inter-region latency measurement protocol.
//! - [`meas_dispute`]: fault declaration, log cross-validation and re-decision.
//! - [`poc`]: proof-of-correctness endorsements for inter-region messages.
//! - [`tgs`]: timeliness scores, flagging and replica reassignment.
//! - [`recovery`]: recovery propagation across regions and its deadline.
//! - [`adversary`]: Byzantine strategies.
//! - [`casestudies`]: railway braking and smart-grid workloads.
//! - [`harness`]: scenarios, Monte Carlo runner, bandwidth model, outputs.

pub mod adversary;
pub mod casestudies;
pub mod core;
pub mod harness;
pub mod meas_dispute;
pub mod measure;
pub mod poc;
pub mod recovery;
pub mod simnet;
pub mod tgs;
