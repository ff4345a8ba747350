//! Full-scale actuation magnet sizing.
//!
//! A force `f_m` measured at distance `d_m` from a magnet of volume `V_m`
//! scales to a desired force `f_d` at distance `d_c + d_d/2` from a spherical
//! magnet of diameter `d_d` through the `d⁻⁴` force law:
//!
//! ```text
//! α f_m d_m⁴ |m_d| = f_d (d_c + d_d/2)⁴ |m_m|,   |m| = Br V / μ0
//! ```

use serde::{Deserialize, Serialize};

use crate::magnetics::{force_on_dipole, Dipole, Vec3};
use crate::units::{self, NDFEB_DENSITY, N52_REMANENCE};
use crate::{Error, Result};

/// Sizing inputs in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizingProblem {
    /// Force measured with the bench magnet (N).
    pub measured_force: f64,
    /// Force wanted from one full-scale magnet (N).
    pub desired_force: f64,
    /// Bench distance from magnet centre to chain (m).
    pub measurement_distance: f64,
    /// Distance from the patient surface to the target (m).
    pub patient_half_breadth: f64,
    /// Bench magnet volume (m³).
    pub measurement_volume: f64,
    /// Ratio of chain moments, full-scale over bench.
    pub ball_scale: f64,
    /// kg/m³
    pub density: f64,
    /// T
    pub remanence: f64,
    /// Search interval for `d_d` (m).
    pub bracket: (f64, f64),
}

impl Default for SizingProblem {
    /// The bench-to-clinic case: 132.6 gf measured at 16.51 cm with a
    /// 76.2 mm × 38.1 mm cylinder, 10 gf wanted across a 59.3 cm patient,
    /// with 2.17 mm balls replacing 3.175 mm ones.
    fn default() -> Self {
        Self {
            measured_force: units::gf_to_newton(132.6),
            desired_force: units::gf_to_newton(10.0),
            measurement_distance: 0.1651,
            patient_half_breadth: 0.5930 / 2.0,
            measurement_volume: units::cylinder_volume(0.0381, 0.0381),
            ball_scale: 0.32,
            density: NDFEB_DENSITY,
            remanence: N52_REMANENCE,
            bracket: (1e-3, 1.0),
        }
    }
}

impl SizingProblem {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let positive = [
            ("measured_force", self.measured_force),
            ("desired_force", self.desired_force),
            ("measurement_distance", self.measurement_distance),
            ("patient_half_breadth", self.patient_half_breadth),
            ("measurement_volume", self.measurement_volume),
            ("density", self.density),
            ("remanence", self.remanence),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                problems.push(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.ball_scale > 0.0 && self.ball_scale <= 1.0) {
            problems.push(format!("ball_scale must lie in (0, 1], got {}", self.ball_scale));
        }
        if !(self.bracket.0 > 0.0 && self.bracket.1 > self.bracket.0) {
            problems.push(format!("bracket must satisfy 0 < lo < hi, got {:?}", self.bracket));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Force balance residual at diameter `d_d` (N·m⁴·A·m²).
    pub fn residual(&self, d_d: f64) -> f64 {
        let m_bench = units::moment_from_remanence(self.remanence, self.measurement_volume);
        let m_full = units::moment_from_remanence(self.remanence, units::sphere_volume(d_d));
        let reach = self.patient_half_breadth + d_d / 2.0;
        self.ball_scale * self.measured_force * self.measurement_distance.powi(4) * m_full
            - self.desired_force * reach.powi(4) * m_bench
    }

    /// Magnitude of the right-hand side at `d_d`, used to normalise residuals.
    pub fn residual_scale(&self, d_d: f64) -> f64 {
        let m_bench = units::moment_from_remanence(self.remanence, self.measurement_volume);
        self.desired_force * (self.patient_half_breadth + d_d / 2.0).powi(4) * m_bench
    }
}

/// `(d_new / d_old)³`
pub fn ball_scale_factor(d_new: f64, d_old: f64) -> Result<f64> {
    if !(d_new > 0.0) || !(d_old > 0.0) {
        return Err(Error::InvalidArgument("ball diameters must be positive".into()));
    }
    Ok((d_new / d_old).powi(3))
}

const SCAN_POINTS: usize = 2000;

/// Smallest diameter in the bracket that balances the forces.
pub fn solve_magnet_diameter(p: &SizingProblem) -> Result<f64> {
    p.validate()?;
    let (lo, hi) = p.bracket;
    // log-spaced scan for the first sign change; the balance has a second
    // root at very large diameters where the quartic reach term wins
    let ratio = (hi / lo).powf(1.0 / SCAN_POINTS as f64);
    let mut a = lo;
    let mut fa = p.residual(a);
    for k in 1..=SCAN_POINTS {
        let b = if k == SCAN_POINTS { hi } else { lo * ratio.powi(k as i32) };
        let fb = p.residual(b);
        if fa == 0.0 {
            return Ok(a);
        }
        if fa.signum() != fb.signum() {
            return Ok(bisect(|x| p.residual(x), a, b, fa));
        }
        a = b;
        fa = fb;
    }
    Err(Error::NoRoot { lo, hi })
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Mass of a solid sphere.
pub fn magnet_mass(d_d: f64, density: f64) -> Result<f64> {
    if !(d_d >= 0.0) || !(density > 0.0) {
        return Err(Error::InvalidArgument("diameter must be non-negative and density positive".into()));
    }
    Ok(density * units::sphere_volume(d_d))
}

/// Worst-case attraction (N, positive = attractive) between two spheres of
/// diameter `d_d` on either side of the patient, moments coaxial and aligned.
pub fn inter_magnet_force(d_d: f64, d_c: f64, remanence: f64) -> Result<f64> {
    inter_magnet_force_oriented(d_d, d_c, remanence, true)
}

/// As [`inter_magnet_force`]; `aligned = false` flips the second moment,
/// giving repulsion with a negative sign.
pub fn inter_magnet_force_oriented(d_d: f64, d_c: f64, remanence: f64, aligned: bool) -> Result<f64> {
    let separation = 2.0 * (d_c + d_d / 2.0);
    if !(d_d > 0.0) || !(separation > d_d) {
        return Err(Error::InvalidArgument(format!(
            "magnets of diameter {d_d} m at separation {separation} m overlap"
        )));
    }
    let m = units::moment_from_remanence(remanence, units::sphere_volume(d_d));
    let source = Dipole::new(Vec3::zeros(), m * Vec3::x());
    let sign = if aligned { 1.0 } else { -1.0 };
    let target = Dipole::new(separation * Vec3::x(), sign * m * Vec3::x());
    // force on the target along −x pulls it towards the source
    Ok(-force_on_dipole(&target, &source)?.x)
}

/// Design summary in interface units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizingReport {
    pub d_d_mm: f64,
    pub mass_kg: f64,
    pub inter_magnet_force_gf: f64,
    /// Force balance residual at the root relative to its scale.
    pub residual: f64,
}

pub fn design(p: &SizingProblem) -> Result<SizingReport> {
    let d_d = solve_magnet_diameter(p)?;
    Ok(SizingReport {
        d_d_mm: d_d * 1e3,
        mass_kg: magnet_mass(d_d, p.density)?,
        inter_magnet_force_gf: units::newton_to_gf(inter_magnet_force(d_d, p.patient_half_breadth, p.remanence)?),
        residual: p.residual(d_d).abs() / p.residual_scale(d_d),
    })
}

/// JSON problem file with explicit units; absent fields take the bench
/// defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizingInput {
    pub measured_force_gf: Option<f64>,
    pub desired_force_gf: Option<f64>,
    pub measurement_distance_mm: Option<f64>,
    pub patient_breadth_mm: Option<f64>,
    /// Bench cylinder diameter and height.
    pub measurement_magnet_diameter_mm: Option<f64>,
    pub measurement_magnet_height_mm: Option<f64>,
    /// Explicit moment ratio; otherwise derived from the two ball diameters.
    pub ball_scale: Option<f64>,
    pub ball_diameter_mm: Option<f64>,
    pub bench_ball_diameter_mm: Option<f64>,
    pub density_kg_m3: Option<f64>,
    pub remanence_t: Option<f64>,
}

impl SizingInput {
    pub fn resolve(&self) -> Result<SizingProblem> {
        let base = SizingProblem::default();
        let ball_scale = match (self.ball_scale, self.ball_diameter_mm) {
            (Some(a), _) => a,
            (None, Some(d)) => ball_scale_factor(d, self.bench_ball_diameter_mm.unwrap_or(3.175))?,
            (None, None) => base.ball_scale,
        };
        let diameter = self.measurement_magnet_diameter_mm.map(units::mm).unwrap_or(0.0762);
        let height = self.measurement_magnet_height_mm.map(units::mm).unwrap_or(0.0381);
        let p = SizingProblem {
            measured_force: self.measured_force_gf.map(units::gf_to_newton).unwrap_or(base.measured_force),
            desired_force: self.desired_force_gf.map(units::gf_to_newton).unwrap_or(base.desired_force),
            measurement_distance: self.measurement_distance_mm.map(units::mm).unwrap_or(base.measurement_distance),
            patient_half_breadth: self
                .patient_breadth_mm
                .map(|b| units::mm(b) / 2.0)
                .unwrap_or(base.patient_half_breadth),
            measurement_volume: units::cylinder_volume(diameter / 2.0, height),
            ball_scale,
            density: self.density_kg_m3.unwrap_or(base.density),
            remanence: self.remanence_t.unwrap_or(base.remanence),
            bracket: base.bracket,
        };
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::MU0;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn ball_scale_examples() {
        assert_eq!(ball_scale_factor(3.0, 3.0).unwrap(), 1.0);
        assert_relative_eq!(ball_scale_factor(1.0, 2.0).unwrap(), 0.125);
        let a = ball_scale_factor(2.17, 3.175).unwrap();
        assert!((a - 0.32).abs() < 0.005, "{a}");
        assert!(ball_scale_factor(0.0, 1.0).is_err());
    }

    #[test]
    fn bench_case_diameter() {
        let p = SizingProblem::default();
        let d = solve_magnet_diameter(&p).unwrap();
        assert!((d - 0.119).abs() < 1e-3, "{d}");
        assert!(p.residual(d).abs() < 1e-9 * p.residual_scale(d));
    }

    #[test]
    fn vanishing_chain_has_no_root() {
        let p = SizingProblem { ball_scale: 1e-9, ..Default::default() };
        assert!(matches!(solve_magnet_diameter(&p), Err(Error::NoRoot { .. })));
    }

    #[test]
    fn mass_examples() {
        assert_eq!(magnet_mass(0.0, 7500.0).unwrap(), 0.0);
        let m = magnet_mass(0.119, 7500.0).unwrap();
        assert!((m - 6.6).abs() < 0.2, "{m}");
        assert_relative_eq!(magnet_mass(0.2, 7500.0).unwrap(), 8.0 * magnet_mass(0.1, 7500.0).unwrap(), max_relative = 1e-14);
    }

    #[test]
    fn inter_magnet_force_examples() {
        let d = 0.119;
        let f = inter_magnet_force(d, 0.2965, 1.45).unwrap();
        let gf = units::newton_to_gf(f);
        assert!(gf > 500.0 / 3.0 && gf < 1500.0, "{gf}");
        // coaxial closed form
        let m = units::moment_from_remanence(1.45, units::sphere_volume(d));
        let s = 2.0 * (0.2965 + d / 2.0);
        assert_relative_eq!(f, 3.0 * MU0 * m * m / (2.0 * PI * s.powi(4)), max_relative = 1e-12);
        // doubling the centre separation: d_c' = 2 d_c + d_d/2
        let far = inter_magnet_force(d, 2.0 * 0.2965 + d / 2.0, 1.45).unwrap();
        assert_relative_eq!(f / far, 16.0, max_relative = 1e-12);
        let repel = inter_magnet_force_oriented(d, 0.2965, 1.45, false).unwrap();
        assert_relative_eq!(repel, -f, max_relative = 1e-12);
        assert!(inter_magnet_force(0.5, 0.0, 1.45).is_err());
    }

    #[test]
    fn input_defaults_match_problem_defaults() {
        let p = SizingInput::default().resolve().unwrap();
        let q = SizingProblem::default();
        assert_relative_eq!(p.measurement_volume, q.measurement_volume, max_relative = 1e-15);
        assert_eq!(p.measured_force, q.measured_force);
        assert_relative_eq!(p.patient_half_breadth, q.patient_half_breadth, max_relative = 1e-15);
        let bad = SizingInput { desired_force_gf: Some(-1.0), ..Default::default() };
        assert!(matches!(bad.resolve(), Err(Error::Validation(_))));
    }
}
