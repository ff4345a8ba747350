//! Task timing from touch ticks.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::scenario::Target;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetTiming {
    pub id: String,
    pub touch_tick: u64,
    /// Ticks since the previous touch (or since the start for the first).
    pub delta_ticks: u64,
    pub delta_s: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Touched targets in touch order.
    pub timings: Vec<TargetTiming>,
    /// Start to first touch.
    pub first_target_s: Option<f64>,
    /// Start to last touch.
    pub total_s: Option<f64>,
    pub tip_path_length_mm: f64,
    pub untouched: Vec<String>,
    pub incomplete: bool,
}

/// Timings of the touches in `touched` relative to `start_tick`. Touches are
/// ordered by tick, ties by position in `targets`.
pub fn compute_metrics(
    targets: &[Target],
    touched: &BTreeMap<String, u64>,
    start_tick: u64,
    tick_dt: f64,
    tip_path_length: f64,
) -> Metrics {
    let mut order: Vec<(u64, usize)> = targets
        .iter()
        .enumerate()
        .filter_map(|(k, t)| touched.get(&t.id).map(|&tick| (tick.max(start_tick), k)))
        .collect();
    order.sort_unstable();
    let mut timings = Vec::with_capacity(order.len());
    let mut prev = start_tick;
    for (tick, k) in order {
        let delta = tick - prev;
        timings.push(TargetTiming {
            id: targets[k].id.clone(),
            touch_tick: tick,
            delta_ticks: delta,
            delta_s: delta as f64 * tick_dt,
            elapsed_s: (tick - start_tick) as f64 * tick_dt,
        });
        prev = tick;
    }
    let untouched: Vec<String> =
        targets.iter().filter(|t| !touched.contains_key(&t.id)).map(|t| t.id.clone()).collect();
    Metrics {
        first_target_s: timings.first().map(|t| t.elapsed_s),
        total_s: timings.last().map(|t| t.elapsed_s),
        timings,
        tip_path_length_mm: tip_path_length * 1e3,
        incomplete: !untouched.is_empty(),
        untouched,
    }
}
