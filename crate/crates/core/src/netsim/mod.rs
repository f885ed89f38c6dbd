//! Trace-driven single-bottleneck emulation.

mod link;
mod sim;
mod spec;
mod trace;

pub use link::{Delivery, EnqueueOutcome, Link, LinkConfig, LinkCounters, Packet};
pub use sim::{run_event_loop, Ack, Conservation, Endpoint, Event, EventKind, EventLog, Simulation};
pub use spec::{LinkSpec, TraceSpec};
pub use trace::{generate_poisson_trace, mbps_to_packets_per_ms, parse_trace, TraceSchedule, DEFAULT_MTU};
