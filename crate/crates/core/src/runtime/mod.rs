//! Deterministic two-node streaming simulator: chunk clock, delayed links,
//! node scheduling, causality audit and link-rate calculators.

mod audit;
mod channel;
mod delay;
mod session;

#[cfg(test)]
mod tests;

pub use audit::{causality_audit, AuditKind, AuditReport, Violation};
pub use channel::{ChannelMessage, DelayChannel, MessageKind, CHANNEL_BOUND};
pub use delay::{delay_to_chunks, header_overhead, hint_throughput, DelayConfig, TickDelays, CHUNK_SECONDS};
pub use session::{digest, run_session, LocalEvent, LocalNode, RemoteEvent, RemoteNode, Session, SessionOutput, SessionTrace, TickRecord};
