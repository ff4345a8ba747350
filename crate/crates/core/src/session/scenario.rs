//! Scenario documents.
//!
//! Documents carry explicit units in their field names (`_mm`, `_mt`, `_kpa`,
//! ...) and are converted to SI once, here.

use nalgebra::{Matrix3, Rotation3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

use crate::actuation::{ActuationUnit, ReconfigureOptions, WheelSet};
use crate::magnetics::{Dipole, Vec3};
use crate::statics::{tube_second_moment, BallSpec, ChainConfig, EnvField, SleeveSpec, SolverConfig};
use crate::units::{self, NDFEB_DENSITY, N52_REMANENCE};
use crate::{Error, Result};

/// A point the tip has to touch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub id: String,
    pub position: Vec3,
    /// Touch tolerance (m).
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldMode {
    /// Superposed dipole fields of the units.
    DipoleSources,
    /// Uniform field `magnitude · R_a e3` per unit, summed.
    Uniform { magnitude: f64 },
}

/// How operator angular velocities are interpreted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mapping {
    #[default]
    World,
    /// Components along (tip tangent, lateral, binormal).
    TipFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSetup {
    pub id: String,
    pub unit: ActuationUnit,
    pub reconfigure: ReconfigureOptions,
}

/// Batch study settings carried by a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySetup {
    pub lengths: Vec<usize>,
    pub angles_deg: Vec<f64>,
}

/// Fully resolved scenario in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// `chain.n` is the initial exposed length.
    pub chain: ChainConfig,
    pub max_balls: usize,
    pub units: Vec<UnitSetup>,
    pub targets: Vec<Target>,
    pub field_mode: FieldMode,
    /// s
    pub tick_dt: f64,
    /// Time a feed command must be held per ball (s).
    pub feed_interval: f64,
    /// rad/s
    pub max_angular_velocity: f64,
    pub mapping: Mapping,
    pub solver: SolverConfig,
    pub seed: u64,
    pub study: Option<StudySetup>,
}

impl Scenario {
    /// Field acting on the chain for the given unit orientations.
    pub fn env_for(&self, rotations: &[Rotation3<f64>]) -> EnvField {
        match self.field_mode {
            FieldMode::DipoleSources => EnvField::DipoleSources {
                sources: self
                    .units
                    .iter()
                    .zip(rotations)
                    .map(|(u, r)| Dipole::new(u.unit.position, u.unit.moment * (r * Vec3::z())))
                    .collect(),
            },
            FieldMode::Uniform { magnitude } => {
                EnvField::uniform(rotations.iter().map(|r| magnitude * (r * Vec3::z())).sum())
            }
        }
    }

    pub fn initial_rotations(&self) -> Vec<Rotation3<f64>> {
        self.units.iter().map(|u| u.unit.rotation).collect()
    }

    pub fn unit_index(&self, id: &str) -> Option<usize> {
        self.units.iter().position(|u| u.id == id)
    }
}

// ---- document schema ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub name: Option<String>,
    pub chain: ChainDoc,
    #[serde(default)]
    pub entry: EntryDoc,
    pub units: Vec<UnitDoc>,
    #[serde(default)]
    pub targets: Vec<TargetDoc>,
    #[serde(default)]
    pub field: FieldDoc,
    pub tick_dt_s: Option<f64>,
    pub feed_interval_s: Option<f64>,
    pub max_angular_velocity_rad_s: Option<f64>,
    #[serde(default)]
    pub mapping: Mapping,
    #[serde(default)]
    pub solver: SolverDoc,
    pub seed: Option<u64>,
    pub study: Option<StudyDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainDoc {
    pub max_balls: usize,
    pub initial_balls: Option<usize>,
    pub ball_diameter_mm: Option<f64>,
    pub remanence_t: Option<f64>,
    pub density_kg_m3: Option<f64>,
    #[serde(default)]
    pub sleeve: SleeveDoc,
    pub gravity_m_s2: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SleeveDoc {
    #[serde(default)]
    pub enabled: bool,
    pub elastic_modulus_kpa: Option<f64>,
    pub outer_diameter_mm: Option<f64>,
    pub inner_diameter_mm: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryDoc {
    pub position_mm: [f64; 3],
    pub direction: [f64; 3],
}

impl Default for EntryDoc {
    fn default() -> Self {
        Self { position_mm: [0.0; 3], direction: [1.0, 0.0, 0.0] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitDoc {
    pub id: String,
    pub position_mm: [f64; 3],
    /// Initial dipole direction.
    pub dipole: [f64; 3],
    /// Reconfiguration target; defaults to the initial dipole.
    pub neutral_dipole: Option<[f64; 3]>,
    /// Explicit moment; otherwise from the magnet geometry.
    pub moment_a_m2: Option<f64>,
    pub magnet_diameter_mm: Option<f64>,
    pub magnet_height_mm: Option<f64>,
    pub remanence_t: Option<f64>,
    pub wheel_radius_mm: Option<f64>,
    pub magnet_radius_mm: Option<f64>,
    /// Rows of the wheel matrix; defaults to the bench drive.
    pub wheel_matrix: Option<[[f64; 3]; 3]>,
    pub sensor_distance_mm: Option<f64>,
    pub sensor_noise_mt: Option<f64>,
    pub slip: Option<[f64; 3]>,
    pub gain_per_s: Option<f64>,
    pub control_dt_s: Option<f64>,
    pub max_reconfigure_steps: Option<usize>,
    pub threshold_deg: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetDoc {
    pub id: String,
    pub position_mm: [f64; 3],
    pub radius_mm: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldDoc {
    #[default]
    DipoleSources,
    Uniform { magnitude_mt: f64 },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverDoc {
    pub gradient_tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub penalty_weight: Option<f64>,
    pub multistart_count: Option<usize>,
    pub saddle_probe: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyDoc {
    pub lengths: Vec<usize>,
    pub angles_deg: Vec<f64>,
}

/// Default touch radius of a 5 mm printed target.
pub const DEFAULT_TARGET_RADIUS: f64 = 2.5e-3;
/// Effective radius of the bench magnet seen by the wheels.
const DEFAULT_MAGNET_RADIUS_MM: f64 = 43.5;
const DEFAULT_WHEEL_RADIUS_MM: f64 = 48.0;

fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn mm3(a: [f64; 3]) -> Vec3 {
    vec3(a) * 1e-3
}

struct Problems(Vec<String>);

impl Problems {
    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.0.push(msg());
        }
    }

    fn positive(&mut self, path: &str, v: Option<f64>) {
        if let Some(v) = v {
            self.check(v > 0.0 && v.is_finite(), || format!("{path}: must be positive, got {v}"));
        }
    }

    fn direction(&mut self, path: &str, v: [f64; 3]) {
        let ok = v.iter().all(|c| c.is_finite()) && vec3(v).norm() > 1e-12;
        self.check(ok, || format!("{path}: must be a non-zero direction"));
    }
}

/// Rotation taking `e3` to `dir`.
fn rotation_to(dir: &Vec3) -> Rotation3<f64> {
    let d = dir.normalize();
    Rotation3::rotation_between(&Vec3::z(), &d)
        .unwrap_or_else(|| Rotation3::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI))
}

impl ScenarioDoc {
    fn validate(&self) -> Vec<String> {
        let mut p = Problems(Vec::new());
        let c = &self.chain;
        p.check(c.max_balls >= 1, || "chain.max_balls: must be at least 1".into());
        if let Some(n) = c.initial_balls {
            p.check(n >= 1 && n <= c.max_balls, || {
                format!("chain.initial_balls: must lie in [1, {}], got {n}", c.max_balls)
            });
        }
        p.positive("chain.ball_diameter_mm", c.ball_diameter_mm);
        p.positive("chain.remanence_t", c.remanence_t);
        p.positive("chain.density_kg_m3", c.density_kg_m3);
        p.positive("chain.sleeve.elastic_modulus_kpa", c.sleeve.elastic_modulus_kpa);
        p.positive("chain.sleeve.outer_diameter_mm", c.sleeve.outer_diameter_mm);
        if let Some(id) = c.sleeve.inner_diameter_mm {
            p.check(id >= 0.0, || format!("chain.sleeve.inner_diameter_mm: must be non-negative, got {id}"));
            let od = c.sleeve.outer_diameter_mm.unwrap_or(3.5);
            p.check(id < od, || "chain.sleeve: inner diameter must be below outer diameter".into());
        }
        p.direction("entry.direction", self.entry.direction);

        p.check(!self.units.is_empty(), || "units: at least one actuation unit is required".into());
        p.check(self.units.len() <= 2, || format!("units: at most two units are supported, got {}", self.units.len()));
        let mut ids = BTreeSet::new();
        for (k, u) in self.units.iter().enumerate() {
            let path = format!("units[{k}]");
            p.check(ids.insert(u.id.clone()), || format!("{path}.id: duplicate unit id {:?}", u.id));
            p.direction(&format!("{path}.dipole"), u.dipole);
            if let Some(n) = u.neutral_dipole {
                p.direction(&format!("{path}.neutral_dipole"), n);
            }
            for (name, v) in [
                ("moment_a_m2", u.moment_a_m2),
                ("magnet_diameter_mm", u.magnet_diameter_mm),
                ("magnet_height_mm", u.magnet_height_mm),
                ("remanence_t", u.remanence_t),
                ("wheel_radius_mm", u.wheel_radius_mm),
                ("magnet_radius_mm", u.magnet_radius_mm),
                ("sensor_distance_mm", u.sensor_distance_mm),
                ("gain_per_s", u.gain_per_s),
                ("control_dt_s", u.control_dt_s),
                ("threshold_deg", u.threshold_deg),
            ] {
                p.positive(&format!("{path}.{name}"), v);
            }
            if let Some(s) = u.sensor_noise_mt {
                p.check(s >= 0.0, || format!("{path}.sensor_noise_mt: must be non-negative"));
            }
            if let Some(s) = u.slip {
                p.check(s.iter().all(|v| *v > 0.0), || format!("{path}.slip: factors must be positive"));
            }
            let magnet_r = u.magnet_radius_mm.unwrap_or(DEFAULT_MAGNET_RADIUS_MM);
            if let Some(dist) = u.sensor_distance_mm {
                p.check(dist > magnet_r, || format!("{path}.sensor_distance_mm: sensor lies inside the magnet"));
            }
            let gain = u.gain_per_s.unwrap_or(2.0);
            let dt = u.control_dt_s.unwrap_or(0.05);
            p.check(gain * dt < 1.0, || format!("{path}: gain_per_s × control_dt_s must be below 1"));
            if let Some(m) = u.wheel_matrix {
                let a = Matrix3::from_fn(|i, j| m[i][j]);
                p.check(a.determinant().abs() > 1e-9, || format!("{path}.wheel_matrix: singular"));
            }
        }

        let mut tids = BTreeSet::new();
        for (k, t) in self.targets.iter().enumerate() {
            p.check(tids.insert(t.id.clone()), || format!("targets[{k}].id: duplicate target id {:?}", t.id));
            p.positive(&format!("targets[{k}].radius_mm"), t.radius_mm);
        }
        if let FieldDoc::Uniform { magnitude_mt } = self.field {
            p.positive("field.magnitude_mt", Some(magnitude_mt));
        }
        p.positive("tick_dt_s", self.tick_dt_s);
        p.positive("feed_interval_s", self.feed_interval_s);
        p.positive("max_angular_velocity_rad_s", self.max_angular_velocity_rad_s);
        p.positive("solver.gradient_tolerance", self.solver.gradient_tolerance);
        p.positive("solver.penalty_weight", self.solver.penalty_weight);
        if let Some(m) = self.solver.max_iterations {
            p.check(m > 0, || "solver.max_iterations: must be positive".into());
        }
        if let Some(s) = &self.study {
            p.check(!s.lengths.is_empty(), || "study.lengths: must not be empty".into());
            p.check(s.lengths.iter().all(|&n| n >= 1), || "study.lengths: lengths must be at least 1".into());
            p.check(
                s.angles_deg.iter().all(|a| (0.0..=180.0).contains(a)),
                || "study.angles_deg: angles must lie in [0, 180]".into(),
            );
        }
        p.0
    }

    pub fn resolve(&self) -> Result<Scenario> {
        let problems = self.validate();
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        let c = &self.chain;
        let diameter = units::mm(c.ball_diameter_mm.unwrap_or(3.175));
        let remanence = c.remanence_t.unwrap_or(N52_REMANENCE);
        let density = c.density_kg_m3.unwrap_or(NDFEB_DENSITY);
        let volume = units::sphere_volume(diameter);
        let ball = BallSpec { diameter, moment: units::moment_from_remanence(remanence, volume), mass: density * volume };
        let sleeve = SleeveSpec {
            elastic_modulus: c.sleeve.elastic_modulus_kpa.map(|e| e * 1e3).unwrap_or(SleeveSpec::nominal().elastic_modulus),
            second_moment: tube_second_moment(
                units::mm(c.sleeve.outer_diameter_mm.unwrap_or(3.5)),
                units::mm(c.sleeve.inner_diameter_mm.unwrap_or(3.0)),
            ),
            enabled: c.sleeve.enabled,
        };
        let chain = ChainConfig {
            n: c.initial_balls.unwrap_or(c.max_balls),
            ball,
            sleeve,
            base_position: mm3(self.entry.position_mm),
            base_tangent: vec3(self.entry.direction).normalize(),
            gravity: c.gravity_m_s2.map(vec3).unwrap_or_else(Vec3::zeros),
        };

        let mut unit_setups = Vec::new();
        for u in &self.units {
            let magnet_radius = units::mm(u.magnet_radius_mm.unwrap_or(DEFAULT_MAGNET_RADIUS_MM));
            let wheel_radius = units::mm(u.wheel_radius_mm.unwrap_or(DEFAULT_WHEEL_RADIUS_MM));
            let matrix = u
                .wheel_matrix
                .map(|m| Matrix3::from_fn(|i, j| m[i][j]))
                .unwrap_or_else(crate::actuation::reference_matrix);
            let wheels = WheelSet::from_matrix(wheel_radius, magnet_radius, matrix)?;
            let moment = u.moment_a_m2.unwrap_or_else(|| {
                let d = units::mm(u.magnet_diameter_mm.unwrap_or(76.2));
                let h = units::mm(u.magnet_height_mm.unwrap_or(38.1));
                units::moment_from_remanence(u.remanence_t.unwrap_or(N52_REMANENCE), units::cylinder_volume(d / 2.0, h))
            });
            let mut unit = ActuationUnit::new(wheels, moment, mm3(u.position_mm));
            unit.rotation = rotation_to(&vec3(u.dipole));
            if let Some(d) = u.sensor_distance_mm {
                unit.sensor_distance = units::mm(d);
            }
            unit.neutral_dipole = vec3(u.neutral_dipole.unwrap_or(u.dipole)).normalize();
            if let Some(s) = u.slip {
                unit.slip = vec3(s);
            }
            unit.sensor_noise = units::mt(u.sensor_noise_mt.unwrap_or(0.0));
            let defaults = ReconfigureOptions::default();
            let reconfigure = ReconfigureOptions {
                gain: u.gain_per_s.unwrap_or(defaults.gain),
                dt: u.control_dt_s.unwrap_or(defaults.dt),
                max_steps: u.max_reconfigure_steps.unwrap_or(defaults.max_steps),
                threshold: u.threshold_deg.map(f64::to_radians).unwrap_or(defaults.threshold),
            };
            unit_setups.push(UnitSetup { id: u.id.clone(), unit, reconfigure });
        }

        let targets = self
            .targets
            .iter()
            .map(|t| Target {
                id: t.id.clone(),
                position: mm3(t.position_mm),
                radius: t.radius_mm.map(units::mm).unwrap_or(DEFAULT_TARGET_RADIUS),
            })
            .collect();

        let d = SolverConfig::default();
        let seed = self.seed.unwrap_or(0);
        let solver = SolverConfig {
            gradient_tolerance: self.solver.gradient_tolerance.unwrap_or(d.gradient_tolerance),
            max_iterations: self.solver.max_iterations.unwrap_or(d.max_iterations),
            penalty_weight: self.solver.penalty_weight.unwrap_or(d.penalty_weight),
            multistart_count: self.solver.multistart_count.unwrap_or(d.multistart_count),
            saddle_probe: self.solver.saddle_probe.unwrap_or(d.saddle_probe),
            seed,
            warm_start: None,
        };

        Ok(Scenario {
            name: self.name.clone().unwrap_or_else(|| "unnamed".into()),
            chain,
            max_balls: c.max_balls,
            units: unit_setups,
            targets,
            field_mode: match self.field {
                FieldDoc::DipoleSources => FieldMode::DipoleSources,
                FieldDoc::Uniform { magnitude_mt } => FieldMode::Uniform { magnitude: units::mt(magnitude_mt) },
            },
            tick_dt: self.tick_dt_s.unwrap_or(0.05),
            feed_interval: self.feed_interval_s.unwrap_or(0.2),
            max_angular_velocity: self.max_angular_velocity_rad_s.unwrap_or(1.0),
            mapping: self.mapping,
            solver,
            seed,
            study: self.study.as_ref().map(|s| StudySetup { lengths: s.lengths.clone(), angles_deg: s.angles_deg.clone() }),
        })
    }
}

/// Parse and resolve a scenario document.
pub fn load_scenario(document: &str) -> Result<Scenario> {
    let doc: ScenarioDoc =
        serde_json::from_str(document).map_err(|e| Error::Validation(vec![format!("schema: {e}")]))?;
    doc.resolve()
}

pub fn load_scenario_file(path: &Path) -> Result<Scenario> {
    load_scenario(&std::fs::read_to_string(path)?)
}

const BUNDLED: [(&str, &str); 3] = [
    ("pv-rings", include_str!("../../scenarios/pv-rings.json")),
    ("bench-sweep", include_str!("../../scenarios/bench-sweep.json")),
    ("rotating-field", include_str!("../../scenarios/rotating-field.json")),
];

pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn bundled_document(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, d)| *d)
}

pub fn bundled_scenario(name: &str) -> Result<Scenario> {
    let doc = bundled_document(name).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "unknown bundled scenario {name:?} (available: {})",
            bundled_names().collect::<Vec<_>>().join(", ")
        ))
    })?;
    load_scenario(doc)
}

/// A bundled name or a path to a document.
pub fn resolve_scenario(name_or_path: &str) -> Result<Scenario> {
    match bundled_document(name_or_path) {
        Some(doc) => load_scenario(doc),
        None => load_scenario_file(Path::new(name_or_path)),
    }
}
