//! JSON frames exchanged over the WebSocket. See `WIRE.md`.

use ballchain::session::{Metrics, SessionEvent, SessionState, TickRecord};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedDirection {
    Insert,
    Retract,
}

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum WireCommand {
    /// Magnet angular velocity (rad/s, world or tip frame per scenario).
    /// Applies until replaced or until the dead-man timeout.
    Velocity {
        #[serde(default)]
        unit_id: Option<String>,
        omega: [f64; 3],
        #[serde(default)]
        client_ts: Option<f64>,
    },
    /// One feed pulse.
    Feed {
        direction: FeedDirection,
        #[serde(default)]
        client_ts: Option<f64>,
    },
    Reconfigure {
        #[serde(default)]
        client_ts: Option<f64>,
    },
    /// Restart the session from the scenario's initial state.
    Reset {
        #[serde(default)]
        client_ts: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverHealth {
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Most recent failed tick, cleared by the next good one.
    pub last_error: Option<String>,
}

/// Full snapshot broadcast after every tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireState {
    pub tick: u64,
    pub time_s: f64,
    pub n: usize,
    /// Ball centres (mm, 0.01 mm resolution).
    pub positions_mm: Vec<[f64; 3]>,
    pub tip_mm: [f64; 3],
    pub dipoles: BTreeMap<String, [f64; 3]>,
    pub touched: Vec<String>,
    pub reconfiguring: bool,
    pub solver: SolverHealth,
    pub metrics: Metrics,
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum WireFrame {
    State(WireState),
    Event { tick: u64, event: SessionEvent },
    /// Sent only to the client whose message was rejected.
    Error { message: String },
}

pub fn round_mm(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn mm(v: &ballchain::Vec3) -> [f64; 3] {
    [round_mm(v.x * 1e3), round_mm(v.y * 1e3), round_mm(v.z * 1e3)]
}

impl WireState {
    pub fn new(state: &SessionState, record: &TickRecord, metrics: Metrics, last_error: Option<String>) -> Self {
        Self {
            tick: state.tick,
            time_s: record.time_s,
            n: state.n(),
            positions_mm: state.shape.positions.iter().map(mm).collect(),
            tip_mm: mm(&state.shape.tip_position()),
            dipoles: record.dipoles.clone(),
            touched: record.touched.clone(),
            reconfiguring: record.reconfiguring,
            solver: SolverHealth {
                converged: state.diagnostics.converged,
                iterations: state.diagnostics.iterations,
                gradient_norm: state.diagnostics.gradient_norm,
                last_error,
            },
            metrics,
        }
    }
}
