//! Batch studies: workspace sweeps and field-alignment tables.

use geo::{Area, BooleanOps, LineString, MultiPolygon, Polygon};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use std::io::Write;

use super::scenario::{FieldMode, Scenario};
use crate::actuation::ActuationUnit;
use crate::magnetics::{alignment_angle, Dipole, Vec3};
use crate::statics::{solve_equilibrium, ChainConfig, ChainShape, EnvField, SolverConfig};
use crate::{Error, Result};

/// In-plane basis `(t, u)` with `t` the insertion direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPlane {
    pub origin: Vec3,
    pub t: Vec3,
    pub u: Vec3,
}

impl SweepPlane {
    /// Plane through the base containing the insertion direction and normal
    /// to `normal`. Without a normal the plane also contains `towards` when
    /// that is off-axis, and is the world x-y plane otherwise.
    pub fn new(config: &ChainConfig, normal: Option<Vec3>, towards: Option<Vec3>) -> Result<Self> {
        let t = config.base_tangent.normalize();
        let normal = match normal {
            Some(nrm) => nrm,
            None => {
                let off = towards.map(|p| t.cross(&(p - config.base_position))).filter(|c| c.norm() > 1e-9);
                match off {
                    Some(c) => c,
                    None if t.cross(&Vec3::z()).norm() > 1e-6 => Vec3::z(),
                    None => Vec3::y(),
                }
            }
        };
        let u = normal.cross(&t);
        if u.norm() < 1e-9 {
            return Err(Error::InvalidArgument("sweep plane normal is parallel to the insertion direction".into()));
        }
        Ok(Self { origin: config.base_position, t, u: u.normalize() })
    }

    /// In-plane unit vector at `angle` from `t` towards `u`.
    pub fn direction(&self, angle: f64) -> Vec3 {
        angle.cos() * self.t + angle.sin() * self.u
    }

    pub fn project(&self, p: &Vec3) -> (f64, f64) {
        let r = p - self.origin;
        (r.dot(&self.t), r.dot(&self.u))
    }
}

/// Dipole direction that makes the field of a magnet at `source` point along
/// `field_dir` at `point`.
pub fn dipole_for_field_direction(source: &Vec3, point: &Vec3, field_dir: &Vec3) -> Result<Vec3> {
    let r = point - source;
    if r.norm() < 1e-12 {
        return Err(Error::Singular("field point coincides with the source"));
    }
    let r = r.normalize();
    Ok(((1.5 * r * r.transpose() - Matrix3::identity()) * field_dir.normalize()).normalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub angle_deg: f64,
    /// Tip in plane coordinates (mm).
    pub tip_mm: (f64, f64),
    pub tip: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TipTrace {
    pub n: usize,
    pub points: Vec<SweepPoint>,
    /// Angles whose solve failed; excluded from the trace.
    pub failed_deg: Vec<f64>,
    /// Area of the insertion point plus ordered tips (mm²).
    pub area_mm2: f64,
}

impl TipTrace {
    /// Farthest tip from the insertion point (mm).
    pub fn reach_mm(&self) -> f64 {
        self.points.iter().map(|p| p.tip_mm.0.hypot(p.tip_mm.1)).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceSweep {
    pub traces: Vec<TipTrace>,
    /// Union of the per-length regions (mm²).
    pub area_mm2: f64,
}

fn trace_polygon(points: &[SweepPoint]) -> Option<Polygon<f64>> {
    if points.len() < 2 {
        return None;
    }
    let mut ring = vec![(0.0, 0.0)];
    ring.extend(points.iter().map(|p| p.tip_mm));
    Some(Polygon::new(LineString::from(ring), vec![]))
}

/// Tip traces for each chain length while the unit's dipole is turned so the
/// field at the insertion point sweeps `angles_deg` in the plane.
pub fn sweep_workspace(
    config: &ChainConfig,
    unit: &ActuationUnit,
    angles_deg: &[f64],
    lengths: &[usize],
    plane: Option<SweepPlane>,
    solver: &SolverConfig,
) -> Result<WorkspaceSweep> {
    if let Some(a) = angles_deg.iter().find(|a| !(0.0..=180.0).contains(*a)) {
        return Err(Error::InvalidArgument(format!("sweep angle {a}° outside [0°, 180°]")));
    }
    let plane = match plane {
        Some(p) => p,
        None => SweepPlane::new(config, None, Some(unit.position))?,
    };
    let mut traces = Vec::with_capacity(lengths.len());
    let mut union = MultiPolygon::<f64>::new(vec![]);
    for &n in lengths {
        let mut cfg = config.clone();
        cfg.n = n;
        let mut warm: Option<ChainShape> = None;
        let mut points = Vec::new();
        let mut failed_deg = Vec::new();
        for &angle in angles_deg {
            let b = plane.direction(angle.to_radians());
            let m = dipole_for_field_direction(&unit.position, &config.base_position, &b)?;
            let env = EnvField::DipoleSources { sources: vec![Dipole::new(unit.position, unit.moment * m)] };
            match solve_equilibrium(&cfg, &env, &solver.clone().warm(warm.clone())) {
                Ok(eq) => {
                    let tip = eq.shape.tip_position();
                    let (a, b) = plane.project(&tip);
                    points.push(SweepPoint { angle_deg: angle, tip_mm: (a * 1e3, b * 1e3), tip });
                    warm = Some(eq.shape);
                }
                Err(_) => failed_deg.push(angle),
            }
        }
        let polygon = trace_polygon(&points);
        let area_mm2 = polygon.as_ref().map_or(0.0, |p| p.unsigned_area());
        if let Some(p) = polygon.filter(|_| area_mm2 > 0.0) {
            union = union.union(&MultiPolygon::new(vec![p]));
        }
        traces.push(TipTrace { n, points, failed_deg, area_mm2 });
    }
    Ok(WorkspaceSweep { traces, area_mm2: union.unsigned_area() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub n: usize,
    pub angle_deg: f64,
    pub alignment_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentStudy {
    pub field_mt: f64,
    pub rows: Vec<AlignmentRow>,
}

impl AlignmentStudy {
    /// Largest alignment angle per length, in the order lengths appear.
    pub fn max_per_length(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for r in &self.rows {
            match out.iter_mut().find(|(n, _)| *n == r.n) {
                Some(e) => e.1 = e.1.max(r.alignment_deg),
                None => out.push((r.n, r.alignment_deg)),
            }
        }
        out
    }
}

/// Angle between a uniform field of `field_mag` (T) and the tip dipole for
/// each length and in-plane field angle. Each length is one sweep over the
/// angles in order, warm-started from the previous angle.
pub fn run_alignment_study(
    template: &ChainConfig,
    lengths: &[usize],
    field_mag: f64,
    angles_deg: &[f64],
    solver: &SolverConfig,
) -> Result<AlignmentStudy> {
    if !(field_mag > 0.0) {
        return Err(Error::InvalidArgument(format!("field magnitude must be positive, got {field_mag}")));
    }
    let plane = SweepPlane::new(template, None, None)?;
    let mut rows = Vec::with_capacity(lengths.len() * angles_deg.len());
    for &n in lengths {
        let mut cfg = template.clone();
        cfg.n = n;
        let mut warm: Option<ChainShape> = None;
        for &angle in angles_deg {
            let b = field_mag * plane.direction(angle.to_radians());
            let eq = solve_equilibrium(&cfg, &EnvField::uniform(b), &solver.clone().warm(warm.take()))?;
            let tip = eq.shape.dipole_dirs.last().copied().unwrap_or(Vec3::zeros());
            rows.push(AlignmentRow { n, angle_deg: angle, alignment_deg: alignment_angle(&b, &tip).to_degrees() });
            warm = Some(eq.shape);
        }
    }
    Ok(AlignmentStudy { field_mt: field_mag * 1e3, rows })
}

/// Study lengths and angles of a scenario, or the given defaults.
fn study_axes(scenario: &Scenario, lengths: &[usize], angles: &[f64]) -> (Vec<usize>, Vec<f64>) {
    match &scenario.study {
        Some(s) => (s.lengths.clone(), s.angles_deg.clone()),
        None => (lengths.to_vec(), angles.to_vec()),
    }
}

/// Lengths 1..=16 and field angles 0..=180° in 22.5° steps.
pub fn default_alignment_axes() -> (Vec<usize>, Vec<f64>) {
    ((1..=16).collect(), (0..=8).map(|k| 22.5 * k as f64).collect())
}

/// Alignment study for a uniform-field scenario.
pub fn alignment_for_scenario(scenario: &Scenario) -> Result<AlignmentStudy> {
    let FieldMode::Uniform { magnitude } = scenario.field_mode else {
        return Err(Error::InvalidArgument("alignment study needs a uniform-field scenario".into()));
    };
    let (l, a) = default_alignment_axes();
    let (lengths, angles) = study_axes(scenario, &l, &a);
    run_alignment_study(&scenario.chain, &lengths, magnitude, &angles, &scenario.solver)
}

/// Workspace sweep with the first unit of a dipole-source scenario.
pub fn sweep_for_scenario(scenario: &Scenario) -> Result<WorkspaceSweep> {
    let unit = &scenario.units[0].unit;
    let angles: Vec<f64> = (0..=36).map(|k| 5.0 * k as f64).collect();
    let (lengths, angles) = study_axes(scenario, &[4, 9, 16], &angles);
    sweep_workspace(&scenario.chain, unit, &angles, &lengths, None, &scenario.solver)
}

/// Write rows as CSV with a header.
pub fn write_csv<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Flat row for the CSV form of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub angle_deg: f64,
    pub tip_t_mm: f64,
    pub tip_u_mm: f64,
}

impl WorkspaceSweep {
    pub fn rows(&self) -> Vec<SweepRow> {
        self.traces
            .iter()
            .flat_map(|t| {
                t.points.iter().map(move |p| SweepRow {
                    n: t.n,
                    angle_deg: p.angle_deg,
                    tip_t_mm: p.tip_mm.0,
                    tip_u_mm: p.tip_mm.1,
                })
            })
            .collect()
    }
}
