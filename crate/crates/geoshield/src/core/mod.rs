//! Domain types shared by every protocol layer.

mod auth;
mod ids;
mod params;
mod schedule;
mod time;

pub use auth::{digest_of, AuthError, Digest, DigestWriter, KeyStore, Signature, Signer, Verifier};
pub use ids::{JobId, NodeId, RegionId, TaskId};
pub use params::{ParamError, TimingParams};
pub use schedule::{early_bound, round_schedule, RoundSchedule};
pub use time::{SimDuration, SimTime, TimeError};
