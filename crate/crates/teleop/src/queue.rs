//! Command intake between client tasks and the tick loop.
//!
//! Velocities are latest-wins per unit and expire after the dead-man
//! timeout. Feed pulses accumulate and are released one ball at a time.

use ballchain::session::{Feed, TeleopCommand};
use ballchain::Vec3;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::wire::{FeedDirection, WireCommand};

pub const DEAD_MAN: Duration = Duration::from_millis(250);

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CommandError {
    #[error("unknown unit id {0:?}")]
    UnknownUnit(String),
    #[error("angular velocity must be finite")]
    NonFinite,
}

#[derive(Debug, Default)]
struct Pending {
    velocity: Vec<Option<(Vec3, Instant)>>,
    /// Net feed pulses, positive to insert.
    feed: i64,
    /// A pulse was issued on the previous tick; the next tick must release
    /// the feed so the following pulse counts as a fresh press.
    feed_cooldown: bool,
    reconfigure: bool,
    reset: bool,
}

/// What the tick loop should do this tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Intake {
    pub command: TeleopCommand,
    pub reset: bool,
}

#[derive(Debug)]
pub struct CommandQueue {
    unit_ids: Vec<String>,
    max_angular_velocity: f64,
    /// Bound on stored feed pulses in either direction.
    max_feed: i64,
    dead_man: Duration,
    pending: Mutex<Pending>,
}

impl CommandQueue {
    pub fn new(unit_ids: Vec<String>, max_angular_velocity: f64, max_feed: usize) -> Self {
        let pending = Pending { velocity: vec![None; unit_ids.len()], ..Default::default() };
        Self { unit_ids, max_angular_velocity, max_feed: max_feed as i64, dead_man: DEAD_MAN, pending: Mutex::new(pending) }
    }

    pub fn with_dead_man(mut self, timeout: Duration) -> Self {
        self.dead_man = timeout;
        self
    }

    pub fn push(&self, cmd: WireCommand, now: Instant) -> Result<(), CommandError> {
        let mut p = self.pending.lock().expect("command queue poisoned");
        match cmd {
            WireCommand::Velocity { unit_id, omega, .. } => {
                let k = match unit_id {
                    None => 0,
                    Some(id) => self.unit_ids.iter().position(|u| *u == id).ok_or(CommandError::UnknownUnit(id))?,
                };
                let mut w = Vec3::from(omega);
                if !w.iter().all(|c| c.is_finite()) {
                    return Err(CommandError::NonFinite);
                }
                let norm = w.norm();
                if norm > self.max_angular_velocity {
                    w *= self.max_angular_velocity / norm;
                }
                p.velocity[k] = Some((w, now));
            }
            WireCommand::Feed { direction, .. } => {
                let step = if direction == FeedDirection::Insert { 1 } else { -1 };
                p.feed = (p.feed + step).clamp(-self.max_feed, self.max_feed);
            }
            WireCommand::Reconfigure { .. } => p.reconfigure = true,
            WireCommand::Reset { .. } => {
                *p = Pending { velocity: vec![None; self.unit_ids.len()], reset: true, ..Default::default() };
            }
        }
        Ok(())
    }

    /// Command for the tick starting at `now`.
    pub fn take(&self, now: Instant) -> Intake {
        let mut p = self.pending.lock().expect("command queue poisoned");
        let omega = p
            .velocity
            .iter()
            .map(|v| match v {
                Some((w, at)) if now.saturating_duration_since(*at) <= self.dead_man => *w,
                _ => Vec3::zeros(),
            })
            .collect();
        let feed = if p.feed_cooldown || p.feed == 0 {
            p.feed_cooldown = false;
            Feed::Hold
        } else {
            p.feed_cooldown = true;
            let f = if p.feed > 0 { Feed::Insert } else { Feed::Retract };
            p.feed -= p.feed.signum();
            f
        };
        let reconfigure = std::mem::take(&mut p.reconfigure);
        let reset = std::mem::take(&mut p.reset);
        Intake { command: TeleopCommand { omega, feed, reconfigure }, reset }
    }
}
