//! Capacity analysis for live video delivered over a block-scheduled
//! cellular downlink.
//!
//! * [`channel`]: traces, MCS lookup, per-block rate distributions.
//! * [`queueing`]: the playout buffer as a discrete-time batch-arrival queue.
//! * [`playout`]: largest sustainable playout rate, buffer dimensioning.
//! * [`allocation`]: sharing the frame between users.
//! * [`sim`]: frame-level simulation under constant and adaptive playout.

pub mod allocation;
pub mod channel;
pub mod error;
pub mod playout;
pub mod presets;
pub mod queueing;
pub mod sim;

pub use allocation::{AllocationPlan, CellConfig, TwoClassConfig, TwoClassSplit, User};
pub use channel::{McsTable, RatePmf, SignalMap, TraceRecord};
pub use error::{Error, Result};
pub use playout::{FrameParams, PlayoutSolution, QoeConstraints};
pub use queueing::{ArrivalPmf, FiniteBufferDist, InfiniteBufferBoundary, QueueModel, SolverReport};
pub use sim::{AbrParams, SimConfig, SimReport};
