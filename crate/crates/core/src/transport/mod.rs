//! The simulated interconnect: CK_S/CK_R forwarding units joined by bounded
//! FIFO links, driven either cycle by cycle or by free-running threads.

mod fabric;
mod link;
mod sched;
mod shared;
mod trace;
mod unit;

pub use fabric::{Fabric, ON_CHIP_LATENCY};
pub use link::{Link, LinkDesc, LinkId, LinkStats, Node, Progress};
pub(crate) use sched::{Go, Pacer, Turn};
pub use sched::{Program, RunReport};
pub(crate) use shared::Claim;
pub use shared::{EndpointStats, Shared};
pub use trace::{write_trace_csv, TraceEvent, TraceKind};
pub use unit::{route_packet, CkKind, CkUnit, Forwarding, StepOutcome, UnitStats};
