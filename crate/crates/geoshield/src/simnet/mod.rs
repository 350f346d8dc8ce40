//! Deterministic discrete-event engine and the two-tier network model.

mod clock;
mod link;
mod net;
mod queue;
mod rng;
mod trace;

pub use clock::ClockModel;
pub use link::{BaseWalk, InterLinkModel, IntraLinkModel, JitterModel, LinkError};
pub use net::{Delivery, NetError, Network};
pub use queue::{EventQueue, SimError};
pub use rng::{stream_rng, TrialRng};
pub use trace::{Trace, TraceRow};
