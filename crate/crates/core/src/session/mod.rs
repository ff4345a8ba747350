//! Teleoperation sessions and batch studies on top of the statics solver.

mod engine;
mod metrics;
mod scenario;
mod studies;

pub use engine::{
    check_targets, initial_state, parse_command_log, replay, step, tick_record, to_json_lines, CommandRecord, Feed,
    LogDiagnostics, Session, SessionEvent, SessionState, TeleopCommand, TickRecord,
};
pub use metrics::{compute_metrics, Metrics, TargetTiming};
pub use scenario::{
    bundled_document, bundled_names, bundled_scenario, load_scenario, load_scenario_file, resolve_scenario,
    FieldMode, Mapping, Scenario, ScenarioDoc, StudySetup, Target, UnitSetup, DEFAULT_TARGET_RADIUS,
};
pub use studies::{
    alignment_for_scenario, default_alignment_axes, dipole_for_field_direction, run_alignment_study,
    sweep_for_scenario, sweep_workspace, write_csv, AlignmentRow, AlignmentStudy, SweepPlane, SweepPoint, SweepRow,
    TipTrace, WorkspaceSweep,
};
