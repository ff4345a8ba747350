//! Real-time teleoperation service: steps a [`ballchain::session::Session`]
//! at a fixed rate, takes operator commands over a WebSocket and broadcasts
//! the state after every tick.
//!
//! Routes: `GET /ws` (JSON frames, see `WIRE.md`), `GET /health`, and the
//! optional static UI directory at `/`.

pub mod queue;
pub mod service;
pub mod wire;

pub use queue::{CommandError, CommandQueue, Intake, DEAD_MAN};
pub use service::{serve, start, Health, RunningService, ServiceConfig, ServiceError, ServiceSummary};
pub use wire::{FeedDirection, SolverHealth, WireCommand, WireFrame, WireState};
