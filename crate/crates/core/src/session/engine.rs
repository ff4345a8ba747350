//! The per-tick teleoperation loop.

use nalgebra::Rotation3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::scenario::{Mapping, Scenario, Target};
use crate::actuation::{integrate_rotation, reconfigure_tick};
use crate::magnetics::Vec3;
use crate::statics::{solve_equilibrium, ChainShape, Diagnostics, EnvField};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feed {
    Insert,
    Retract,
    #[default]
    Hold,
}

/// Operator input for one tick.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TeleopCommand {
    /// Magnet angular velocity per unit (rad/s); missing entries are zero.
    #[serde(default)]
    pub omega: Vec<Vec3>,
    #[serde(default)]
    pub feed: Feed,
    #[serde(default)]
    pub reconfigure: bool,
}

impl TeleopCommand {
    pub fn hold() -> Self {
        Self::default()
    }

    pub fn is_hold(&self) -> bool {
        self.feed == Feed::Hold && !self.reconfigure && self.omega.iter().all(|w| *w == Vec3::zeros())
    }
}

/// Something noteworthy that happened during a tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Touched { id: String },
    Fed { n: usize },
    /// Feed requested beyond `[1, max_balls]`; `n` unchanged.
    FeedClamped { n: usize },
    /// An operator velocity exceeded the limit and was scaled down.
    VelocityClamped { unit: String },
    ReconfigureStarted,
    Reconfigured,
    ReconfigureFailed { unit: String },
    /// Teleop input was dropped because reconfiguration is running.
    CommandIgnored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ReconfigureProgress {
    steps: Vec<usize>,
    done: Vec<bool>,
}

/// Live simulation state.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub tick: u64,
    pub shape: ChainShape,
    pub rotations: Vec<Rotation3<f64>>,
    /// Touch tick per target id.
    pub touched: BTreeMap<String, u64>,
    pub diagnostics: Diagnostics,
    pub tip_path_length: f64,
    /// Seconds the current feed direction has been held since the last ball.
    feed_held: f64,
    feed_last: Feed,
    reconfiguring: Option<ReconfigureProgress>,
    rng: ChaCha8Rng,
}

impl SessionState {
    pub fn n(&self) -> usize {
        self.shape.len()
    }

    pub fn is_reconfiguring(&self) -> bool {
        self.reconfiguring.is_some()
    }

    pub fn dipole_directions(&self) -> Vec<Vec3> {
        self.rotations.iter().map(|r| r * Vec3::z()).collect()
    }
}

/// One line of the session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub time_s: f64,
    pub n: usize,
    pub tip_mm: [f64; 3],
    pub dipoles: BTreeMap<String, [f64; 3]>,
    pub touched: Vec<String>,
    pub events: Vec<SessionEvent>,
    pub reconfiguring: bool,
    pub diagnostics: LogDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub restarts: usize,
    pub energy_j: f64,
    pub gradient_norm: f64,
    pub constraint_violation: f64,
}

impl From<&Diagnostics> for LogDiagnostics {
    fn from(d: &Diagnostics) -> Self {
        Self {
            converged: d.converged,
            iterations: d.iterations,
            restarts: d.restarts,
            energy_j: d.energy,
            gradient_norm: d.gradient_norm,
            constraint_violation: d.constraint_violation,
        }
    }
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Mark every target within its radius of `tip`. Touches are never removed.
pub fn check_targets(tip: &Vec3, targets: &[Target], touched: &mut BTreeMap<String, u64>, tick: u64) -> Vec<String> {
    let mut new = Vec::new();
    for t in targets {
        if (tip - t.position).norm() <= t.radius && !touched.contains_key(&t.id) {
            touched.insert(t.id.clone(), tick);
            new.push(t.id.clone());
        }
    }
    new
}

fn solve(scenario: &Scenario, env: &EnvField, n: usize, warm: Option<ChainShape>) -> Result<(ChainShape, Diagnostics)> {
    let mut config = scenario.chain.clone();
    config.n = n;
    let warm = warm.map(|s| if s.len() == n { s } else { s.resized(n, &config) });
    let eq = solve_equilibrium(&config, env, &scenario.solver.clone().warm(warm))?;
    Ok((eq.shape, eq.diagnostics))
}

/// Equilibrium at the scenario's initial unit orientations and length.
pub fn initial_state(scenario: &Scenario) -> Result<SessionState> {
    let rotations = scenario.initial_rotations();
    let env = scenario.env_for(&rotations);
    let (shape, diagnostics) = solve(scenario, &env, scenario.chain.n, None)?;
    let mut touched = BTreeMap::new();
    check_targets(&shape.tip_position(), &scenario.targets, &mut touched, 0);
    Ok(SessionState {
        tick: 0,
        shape,
        rotations,
        touched,
        diagnostics,
        tip_path_length: 0.0,
        feed_held: 0.0,
        feed_last: Feed::Hold,
        reconfiguring: None,
        rng: ChaCha8Rng::seed_from_u64(scenario.seed),
    })
}

/// Orthonormal frame (tangent, lateral, binormal) at the tip.
fn tip_frame(shape: &ChainShape) -> [Vec3; 3] {
    let t = shape.tip_tangent().normalize();
    let helper = if t.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
    let lateral = helper.cross(&t).normalize();
    [t, lateral, t.cross(&lateral)]
}

/// Advance `state` by one tick. On error the caller keeps its previous state.
pub fn step(state: &SessionState, cmd: &TeleopCommand, scenario: &Scenario) -> Result<(SessionState, Vec<SessionEvent>)> {
    let mut next = state.clone();
    next.tick += 1;
    let dt = scenario.tick_dt;
    let mut events = Vec::new();
    let mut n = state.n();

    if next.reconfiguring.is_none() && cmd.reconfigure {
        next.reconfiguring =
            Some(ReconfigureProgress { steps: vec![0; scenario.units.len()], done: vec![false; scenario.units.len()] });
        events.push(SessionEvent::ReconfigureStarted);
    }

    if let Some(progress) = next.reconfiguring.as_mut() {
        if !cmd.is_hold() && !cmd.reconfigure {
            events.push(SessionEvent::CommandIgnored);
        }
        let mut failed = Vec::new();
        for (k, setup) in scenario.units.iter().enumerate() {
            if progress.done[k] {
                continue;
            }
            let opts = &setup.reconfigure;
            let mut unit = setup.unit.clone();
            unit.rotation = next.rotations[k];
            // control periods that fit in this tick, at least one
            let periods = ((dt / opts.dt).round() as usize).max(1);
            for _ in 0..periods {
                if progress.steps[k] >= opts.max_steps {
                    failed.push(setup.id.clone());
                    progress.done[k] = true;
                    break;
                }
                let sample = reconfigure_tick(&mut unit, opts, progress.steps[k], &mut next.rng)?;
                progress.steps[k] += 1;
                if sample.converged {
                    progress.done[k] = true;
                    break;
                }
            }
            next.rotations[k] = unit.rotation;
        }
        let all_done = progress.done.iter().all(|d| *d);
        events.extend(failed.into_iter().map(|unit| SessionEvent::ReconfigureFailed { unit }));
        if all_done {
            next.reconfiguring = None;
            if !events.iter().any(|e| matches!(e, SessionEvent::ReconfigureFailed { .. })) {
                events.push(SessionEvent::Reconfigured);
            }
        }
        next.feed_held = 0.0;
        next.feed_last = Feed::Hold;
    } else {
        let frame = tip_frame(&state.shape);
        for (k, setup) in scenario.units.iter().enumerate() {
            let mut w = cmd.omega.get(k).copied().unwrap_or_else(Vec3::zeros);
            if !w.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidArgument(format!("non-finite angular velocity for unit {}", setup.id)));
            }
            let norm = w.norm();
            if norm > scenario.max_angular_velocity {
                w *= scenario.max_angular_velocity / norm;
                events.push(SessionEvent::VelocityClamped { unit: setup.id.clone() });
            }
            if scenario.mapping == Mapping::TipFrame {
                w = frame[0] * w.x + frame[1] * w.y + frame[2] * w.z;
            }
            if w != Vec3::zeros() {
                next.rotations[k] = integrate_rotation(&next.rotations[k], &w, dt);
            }
        }

        // the first tick of a press feeds one ball, holding repeats every interval
        if cmd.feed == Feed::Hold {
            next.feed_held = 0.0;
        } else {
            let pressed = cmd.feed != state.feed_last;
            if pressed {
                next.feed_held = 0.0;
            } else {
                next.feed_held += dt;
            }
            if pressed || next.feed_held >= scenario.feed_interval * (1.0 - 1e-9) {
                if !pressed {
                    next.feed_held -= scenario.feed_interval;
                }
                let wanted = if cmd.feed == Feed::Insert { n as isize + 1 } else { n as isize - 1 };
                if wanted < 1 || wanted as usize > scenario.max_balls {
                    events.push(SessionEvent::FeedClamped { n });
                } else {
                    n = wanted as usize;
                    events.push(SessionEvent::Fed { n });
                }
            }
        }
        next.feed_last = cmd.feed;
    }

    let unchanged = n == state.n() && next.rotations == state.rotations;
    if !unchanged {
        let env = scenario.env_for(&next.rotations);
        let (shape, diagnostics) = solve(scenario, &env, n, Some(state.shape.clone()))?;
        next.shape = shape;
        next.diagnostics = diagnostics;
    }

    let tip = next.shape.tip_position();
    next.tip_path_length += (tip - state.shape.tip_position()).norm();
    for id in check_targets(&tip, &scenario.targets, &mut next.touched, next.tick) {
        events.push(SessionEvent::Touched { id });
    }
    Ok((next, events))
}

/// Log line for `state` after a tick that produced `events`.
pub fn tick_record(state: &SessionState, events: Vec<SessionEvent>, scenario: &Scenario) -> TickRecord {
    let tip = state.shape.tip_position() * 1e3;
    TickRecord {
        tick: state.tick,
        time_s: state.tick as f64 * scenario.tick_dt,
        n: state.n(),
        tip_mm: arr(&tip),
        dipoles: scenario
            .units
            .iter()
            .zip(&state.rotations)
            .map(|(u, r)| (u.id.clone(), arr(&(r * Vec3::z()))))
            .collect(),
        touched: state.touched.keys().cloned().collect(),
        events,
        reconfiguring: state.is_reconfiguring(),
        diagnostics: (&state.diagnostics).into(),
    }
}

/// One entry of a recorded command log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub tick: u64,
    pub command: TeleopCommand,
}

/// A scenario together with its live state and the commands applied so far.
#[derive(Debug, Clone)]
pub struct Session {
    pub scenario: Scenario,
    pub state: SessionState,
    pub commands: Vec<CommandRecord>,
}

impl Session {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let state = initial_state(&scenario)?;
        Ok(Self { scenario, state, commands: Vec::new() })
    }

    /// Step once. Non-hold commands are recorded for replay.
    pub fn advance(&mut self, cmd: &TeleopCommand) -> Result<TickRecord> {
        let (next, events) = step(&self.state, cmd, &self.scenario)?;
        if !cmd.is_hold() {
            self.commands.push(CommandRecord { tick: next.tick, command: cmd.clone() });
        }
        self.state = next;
        Ok(tick_record(&self.state, events, &self.scenario))
    }
}

/// Re-run a command log for `ticks` ticks, holding on ticks without an entry.
/// Returns one record per tick; stops at the first solver failure.
pub fn replay(scenario: &Scenario, commands: &[CommandRecord], ticks: u64) -> Result<Vec<TickRecord>> {
    let mut by_tick: BTreeMap<u64, &TeleopCommand> = BTreeMap::new();
    for c in commands {
        by_tick.insert(c.tick, &c.command);
    }
    let mut session = Session::new(scenario.clone())?;
    let hold = TeleopCommand::hold();
    let mut out = Vec::with_capacity(ticks as usize);
    for tick in 1..=ticks {
        let cmd = by_tick.get(&tick).copied().unwrap_or(&hold);
        out.push(session.advance(cmd)?);
    }
    Ok(out)
}

/// Serialize records as JSON lines.
pub fn to_json_lines<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parse JSON lines, skipping blank lines.
pub fn parse_command_log(text: &str) -> Result<Vec<CommandRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            serde_json::from_str(l).map_err(|e| Error::Validation(vec![format!("command log line {}: {e}", k + 1)]))
        })
        .collect()
}
