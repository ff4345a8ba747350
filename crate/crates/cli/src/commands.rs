use ballchain::actuation::{reconfigure_run, ReconfigureSample};
use ballchain::magnetics::alignment_angle;
use ballchain::session::{
    self, bundled_scenario, load_scenario_file, parse_command_log, replay, resolve_scenario, run_alignment_study,
    sweep_workspace, to_json_lines, write_csv, FieldMode, Scenario, SweepPlane,
};
use ballchain::sizing::{design, SizingInput, SizingProblem};
use ballchain::statics::{solve_equilibrium, ChainShape, Diagnostics, EnvField};
use ballchain::Vec3;
use ballchain_teleop::{serve, ServiceConfig, ServiceError};
use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use std::io::Write;
use std::path::Path;

use crate::{CliError, Command, Common, OnOff, Outcome};

type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn dispatch(cmd: &Command, stderr: &mut dyn Write) -> Result<Outcome> {
    match cmd {
        Command::Solve { common, angle, balls, field_mt, sleeve } => solve(common, *angle, *balls, *field_mt, *sleeve),
        Command::Sweep { common, angle, balls, sleeve } => sweep(common, angle, balls, *sleeve),
        Command::Align { common, angle, balls, field_mt, sleeve } => align(common, angle, balls, *field_mt, *sleeve),
        Command::Design { config, seed, .. } => design_cmd(config.as_deref(), *seed),
        Command::Reconfig { common, angle } => reconfig(common, *angle),
        Command::Serve { common, bind, static_dir } => serve_cmd(common, *bind, static_dir.clone(), stderr),
        Command::Replay { common, commands, ticks } => replay_cmd(common, commands, *ticks),
    }
}

fn load(common: &Common, default: &str) -> Result<Scenario> {
    let mut s = match (&common.config, &common.scenario) {
        (Some(path), _) => load_scenario_file(path).map_err(|e| input_error(path, e))?,
        (None, Some(name)) => resolve_scenario(name).map_err(|e| input_error(Path::new(name), e))?,
        (None, None) => bundled_scenario(default)?,
    };
    if let Some(seed) = common.seed {
        s.seed = seed;
        s.solver.seed = seed;
    }
    Ok(s)
}

/// Unreadable input files are usage errors, not runtime failures.
fn input_error(path: &Path, e: ballchain::Error) -> CliError {
    match e {
        ballchain::Error::Io(io) => CliError::Usage(format!("cannot read {}: {io}", path.display())),
        other => other.into(),
    }
}

fn apply_sleeve(s: &mut Scenario, sleeve: Option<OnOff>) {
    if let Some(v) = sleeve {
        s.chain.sleeve.enabled = v == OnOff::On;
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("serializable");
    b.push(b'\n');
    b
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    Ok(buf)
}

fn mm(v: &Vec3) -> [f64; 3] {
    [v.x * 1e3, v.y * 1e3, v.z * 1e3]
}

#[derive(Serialize)]
struct SolveOutput {
    n: usize,
    positions_mm: Vec<[f64; 3]>,
    dipole_dirs: Vec<[f64; 3]>,
    tip_mm: [f64; 3],
    tip_tangent: [f64; 3],
    field_at_base_mt: [f64; 3],
    /// Angle between the field at the insertion point and the tip dipole.
    tip_alignment_deg: Option<f64>,
    diagnostics: Diagnostics,
}

fn shape_output(shape: &ChainShape, b: &Vec3, diagnostics: Diagnostics) -> SolveOutput {
    let tip = shape.tip_tangent();
    SolveOutput {
        n: shape.len(),
        positions_mm: shape.positions.iter().map(mm).collect(),
        dipole_dirs: shape.dipole_dirs.iter().map(|d| [d.x, d.y, d.z]).collect(),
        tip_mm: mm(&shape.tip_position()),
        tip_tangent: [tip.x, tip.y, tip.z],
        field_at_base_mt: mm(b),
        tip_alignment_deg: (b.norm() > 0.0).then(|| alignment_angle(b, &tip).to_degrees()),
        diagnostics,
    }
}

fn solve(common: &Common, angle: Option<f64>, balls: Option<usize>, field_mt: Option<f64>, sleeve: Option<OnOff>) -> Result<Outcome> {
    let mut s = load(common, "rotating-field")?;
    apply_sleeve(&mut s, sleeve);
    if let Some(n) = balls {
        if n == 0 {
            return Err(CliError::Usage("--balls must be at least 1".into()));
        }
        s.chain.n = n;
    }
    let angle_rad = angle.unwrap_or(0.0).to_radians();
    let env = match (field_mt, &s.field_mode) {
        (Some(b), _) => {
            if b.is_nan() || b < 0.0 {
                return Err(CliError::Usage("--field-mt must be non-negative".into()));
            }
            let plane = SweepPlane::new(&s.chain, None, None)?;
            EnvField::uniform(b * 1e-3 * plane.direction(angle_rad))
        }
        (None, FieldMode::Uniform { magnitude }) => {
            let plane = SweepPlane::new(&s.chain, None, None)?;
            match angle {
                Some(_) => EnvField::uniform(*magnitude * plane.direction(angle_rad)),
                None => s.env_for(&s.initial_rotations()),
            }
        }
        (None, FieldMode::DipoleSources) => {
            let mut rotations = s.initial_rotations();
            if angle.is_some() {
                let unit = &s.units[0].unit;
                let plane = SweepPlane::new(&s.chain, None, Some(unit.position))?;
                let m = session::dipole_for_field_direction(&unit.position, &s.chain.base_position, &plane.direction(angle_rad))?;
                rotations[0] = Rotation3::rotation_between(&Vec3::z(), &m).unwrap_or(rotations[0]);
            }
            s.env_for(&rotations)
        }
    };
    s.chain.validate()?;
    let eq = solve_equilibrium(&s.chain, &env, &s.solver)?;
    let b = env.field_at(&s.chain.base_position)?;
    let out = shape_output(&eq.shape, &b, eq.diagnostics);
    let summary = json!({
        "n": out.n,
        "tip_alignment_deg": out.tip_alignment_deg,
        "converged": out.diagnostics.converged,
        "iterations": out.diagnostics.iterations,
    });
    let config = json!({"scenario": to_value(&s), "field": to_value(&env)});
    Ok(Outcome { primary: json_bytes(&out), config, summary, seed: Some(s.seed), extra_outputs: vec![] })
}

fn sweep(common: &Common, angles: &[f64], balls: &[usize], sleeve: Option<OnOff>) -> Result<Outcome> {
    let mut s = load(common, "bench-sweep")?;
    apply_sleeve(&mut s, sleeve);
    if let Some(study) = s.study.as_mut() {
        if !angles.is_empty() {
            study.angles_deg = angles.to_vec();
        }
        if !balls.is_empty() {
            study.lengths = balls.to_vec();
        }
    } else {
        s.study = Some(session::StudySetup {
            lengths: if balls.is_empty() { vec![4, 9, 16] } else { balls.to_vec() },
            angles_deg: if angles.is_empty() { (0..=36).map(|k| 5.0 * k as f64).collect() } else { angles.to_vec() },
        });
    }
    if s.field_mode != FieldMode::DipoleSources {
        return Err(CliError::Usage("sweep needs a dipole-source scenario".into()));
    }
    let study = s.study.clone().expect("set above");
    if study.lengths.contains(&0) {
        return Err(CliError::Usage("--balls values must be at least 1".into()));
    }
    let w = sweep_workspace(&s.chain, &s.units[0].unit, &study.angles_deg, &study.lengths, None, &s.solver)?;
    let summary = json!({
        "area_mm2": w.area_mm2,
        "traces": w.traces.iter().map(|t| json!({
            "n": t.n, "area_mm2": t.area_mm2, "reach_mm": t.reach_mm(), "failed_deg": t.failed_deg,
        })).collect::<Vec<_>>(),
    });
    Ok(Outcome { primary: csv_bytes(&w.rows())?, config: to_value(&s), summary, seed: Some(s.seed), extra_outputs: vec![] })
}

fn align(common: &Common, angles: &[f64], balls: &[usize], field_mt: Option<f64>, sleeve: Option<OnOff>) -> Result<Outcome> {
    let mut s = load(common, "rotating-field")?;
    apply_sleeve(&mut s, sleeve);
    let magnitude = match (field_mt, s.field_mode) {
        (Some(b), _) => b * 1e-3,
        (None, FieldMode::Uniform { magnitude }) => magnitude,
        (None, FieldMode::DipoleSources) => {
            return Err(CliError::Usage("align needs --field-mt or a uniform-field scenario".into()))
        }
    };
    let (default_lengths, default_angles) = session::default_alignment_axes();
    let (study_lengths, study_angles) = match &s.study {
        Some(st) => (st.lengths.clone(), st.angles_deg.clone()),
        None => (default_lengths, default_angles),
    };
    let lengths = if balls.is_empty() { study_lengths } else { balls.to_vec() };
    let angles = if angles.is_empty() { study_angles } else { angles.to_vec() };
    if lengths.contains(&0) {
        return Err(CliError::Usage("--balls values must be at least 1".into()));
    }
    let study = run_alignment_study(&s.chain, &lengths, magnitude, &angles, &s.solver)?;
    let summary = json!({
        "field_mt": study.field_mt,
        "max_alignment_deg": study.max_per_length().iter().map(|(n, m)| json!({"n": n, "max_deg": m})).collect::<Vec<_>>(),
    });
    let config = json!({"scenario": to_value(&s), "lengths": lengths, "angles_deg": angles, "field_mt": magnitude * 1e3});
    Ok(Outcome { primary: csv_bytes(&study.rows)?, config, summary, seed: Some(s.seed), extra_outputs: vec![] })
}

fn design_cmd(config: Option<&Path>, seed: Option<u64>) -> Result<Outcome> {
    let problem = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            let input: SizingInput = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            input.resolve()?
        }
        None => SizingProblem::default(),
    };
    let report = design(&problem)?;
    let summary = to_value(&report);
    Ok(Outcome { primary: json_bytes(&report), config: to_value(&problem), summary, seed, extra_outputs: vec![] })
}

#[derive(Serialize)]
struct ReconfigRow {
    step: usize,
    angle_deg: f64,
    escape: bool,
    converged: bool,
    omega_w1: f64,
    omega_w2: f64,
    omega_w3: f64,
}

impl From<&ReconfigureSample> for ReconfigRow {
    fn from(s: &ReconfigureSample) -> Self {
        Self {
            step: s.step,
            angle_deg: s.angle.to_degrees(),
            escape: s.escape,
            converged: s.converged,
            omega_w1: s.omega_w.x,
            omega_w2: s.omega_w.y,
            omega_w3: s.omega_w.z,
        }
    }
}

fn reconfig(common: &Common, angle_deg: f64) -> Result<Outcome> {
    if !(0.0..=180.0).contains(&angle_deg) {
        return Err(CliError::Usage(format!("--angle must lie in [0, 180], got {angle_deg}")));
    }
    let s = load(common, "bench-sweep")?;
    let setup = &s.units[0];
    let mut unit = setup.unit.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    // tilt the neutral direction by the start angle about a seeded perpendicular axis
    let neutral = unit.neutral_dipole.normalize();
    let helper = if neutral.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = neutral.cross(&helper).normalize();
    let e2 = neutral.cross(&e1);
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let axis = Unit::new_normalize(phi.cos() * e1 + phi.sin() * e2);
    let to_neutral = Rotation3::rotation_between(&Vec3::z(), &neutral)
        .unwrap_or_else(|| Rotation3::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI));
    unit.rotation = Rotation3::from_axis_angle(&axis, angle_deg.to_radians()) * to_neutral;
    let run = reconfigure_run(&mut unit, &setup.reconfigure, &mut rng)?;
    let rows: Vec<ReconfigRow> = run.samples.iter().map(Into::into).collect();
    let summary = json!({
        "converged": run.converged,
        "steps": run.steps,
        "final_angle_deg": run.final_angle.to_degrees(),
        "escapes": run.samples.iter().filter(|s| s.escape).count(),
    });
    let config = json!({"unit": to_value(&setup), "start_angle_deg": angle_deg});
    let primary = csv_bytes(&rows)?;
    if !run.converged {
        return Err(CliError::Runtime(format!(
            "reconfiguration did not converge in {} steps (final angle {:.3}°)",
            run.steps,
            run.final_angle.to_degrees()
        )));
    }
    Ok(Outcome { primary, config, summary, seed: Some(s.seed), extra_outputs: vec![] })
}

fn serve_cmd(common: &Common, bind: std::net::SocketAddr, static_dir: Option<std::path::PathBuf>, stderr: &mut dyn Write) -> Result<Outcome> {
    let s = load(common, "pv-rings")?;
    if let Some(dir) = &static_dir {
        if !dir.is_dir() {
            return Err(CliError::Usage(format!("--static-dir {} is not a directory", dir.display())));
        }
    }
    let mut cfg = ServiceConfig::new(bind);
    cfg.static_dir = static_dir;
    let mut extra = Vec::new();
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir)?;
        cfg.session_log = Some(dir.join("session.jsonl"));
        cfg.command_log = Some(dir.join("commands.jsonl"));
        extra.push(dir.join("session.jsonl").display().to_string());
        extra.push(dir.join("commands.jsonl").display().to_string());
    }
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .try_init();
    let runtime = tokio::runtime::Runtime::new()?;
    let scenario = s.clone();
    let summary = runtime
        .block_on(serve(scenario, cfg, async {
            let _ = tokio::signal::ctrl_c().await;
        }))
        .map_err(|e| match e {
            ServiceError::Session(inner) => inner.into(),
            other => CliError::Runtime(other.to_string()),
        })?;
    let _ = writeln!(stderr, "served {} ticks ({} failed), logs closed", summary.ticks, summary.failed_ticks);
    Ok(Outcome {
        primary: json_bytes(&summary),
        config: to_value(&s),
        summary: to_value(&summary),
        seed: Some(s.seed),
        extra_outputs: extra,
    })
}

fn replay_cmd(common: &Common, commands: &Path, ticks: Option<u64>) -> Result<Outcome> {
    let s = load(common, "pv-rings")?;
    let text = std::fs::read_to_string(commands)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", commands.display())))?;
    let log = parse_command_log(&text)?;
    let ticks = ticks.unwrap_or_else(|| log.iter().map(|c| c.tick).max().unwrap_or(0));
    let records = replay(&s, &log, ticks)?;
    let touched = records.last().map(|r| r.touched.len()).unwrap_or(0);
    let summary = json!({
        "ticks": ticks,
        "commands": log.len(),
        "final_n": records.last().map(|r| r.n),
        "touched": touched,
        "untouched": s.targets.len() - touched,
    });
    Ok(Outcome { primary: to_json_lines(&records)?.into_bytes(), config: to_value(&s), summary, seed: Some(s.seed), extra_outputs: vec![] })
}
