//! Deterministic simulated grid: sites joined by a bandwidth/latency
//! matrix, barrier-separated stages, and exact message accounting.
//!
//! Timing is analytical. A stage lasts as long as its slowest activity and
//! a run lasts the sum of its stages; there is no queuing or contention.

mod links;
mod session;
mod stages;

pub use links::{comm_time, LinkMatrix, INTRA_BANDWIDTH_MBPS, INTRA_LATENCY_MS};
pub use session::{Envelope, Exchange, Payload, RoundCtx, Session, TimingMode, Work};
pub use stages::{
    run_stages, AccountingLog, Activity, LogEntry, OutMessage, RoundTotals, Stage, StagePlan, StageRun,
};
