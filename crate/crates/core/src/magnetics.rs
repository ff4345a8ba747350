//! Point-dipole magnetics.
//!
//! Every magnet in the system (chain balls and actuation magnets) is treated
//! as an ideal point dipole. The field of a dipole `m` at offset `r` is
//!
//! ```text
//! B(r, m) = μ0 |m| / (4π |r|³) · (3 r̂ r̂ᵀ − I) m̂
//! ```
//!
//! and the force on a second dipole is the gradient of `m·B`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::units::MU0;
use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// `μ0 / 4π`
const KM: f64 = MU0 / (4.0 * PI);

/// A point magnetic source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dipole {
    /// Centre of the magnet (m).
    pub position: Vec3,
    /// Magnetic moment (A·m²).
    pub moment: Vec3,
}

impl Dipole {
    pub fn new(position: Vec3, moment: Vec3) -> Self {
        Self { position, moment }
    }

    /// Field of this dipole at world point `p`.
    pub fn field_at(&self, p: &Vec3) -> Result<Vec3> {
        dipole_field(&(p - self.position), &self.moment)
    }
}

fn checked_offset(r: &Vec3) -> Result<f64> {
    let r2 = r.norm_squared();
    if !(r2 > 0.0) || !r2.is_finite() {
        return Err(Error::Singular("field evaluated at the dipole centre"));
    }
    Ok(r2)
}

/// Field (T) at offset `r` (m) from a dipole of moment `m` (A·m²).
pub fn dipole_field(r: &Vec3, m: &Vec3) -> Result<Vec3> {
    let r2 = checked_offset(r)?;
    let inv_r = 1.0 / r2.sqrt();
    let inv_r3 = inv_r * inv_r * inv_r;
    let rh = r * inv_r;
    Ok(KM * inv_r3 * (3.0 * m.dot(&rh) * rh - m))
}

/// Spatial derivative `∂B_a/∂r_b` of [`dipole_field`] (T/m).
///
/// Away from the source the matrix is symmetric and traceless.
pub fn dipole_field_jacobian(r: &Vec3, m: &Vec3) -> Result<Matrix3<f64>> {
    let r2 = checked_offset(r)?;
    let inv_r = 1.0 / r2.sqrt();
    let inv_r4 = inv_r * inv_r * inv_r * inv_r;
    let rh = r * inv_r;
    let mr = m.dot(&rh);
    let outer_mr = m * rh.transpose();
    let j = 3.0 * KM
        * inv_r4
        * (outer_mr + outer_mr.transpose() + mr * Matrix3::identity()
            - 5.0 * mr * rh * rh.transpose());
    Ok(j)
}

/// Force (N) exerted by `source` on `target`, `∇(m_target · B_source)`.
pub fn force_on_dipole(target: &Dipole, source: &Dipole) -> Result<Vec3> {
    let r = target.position - source.position;
    let jac = dipole_field_jacobian(&r, &source.moment)?;
    // jac is symmetric, so ∇(m·B) = Jᵀ m = J m.
    Ok(jac * target.moment)
}

/// Torque (N·m) on a dipole of moment `m` in field `b`.
pub fn torque_on_dipole(m: &Vec3, b: &Vec3) -> Vec3 {
    m.cross(b)
}

/// Total field of `sources` at world point `p`.
pub fn superpose_field(sources: &[Dipole], p: &Vec3) -> Result<Vec3> {
    sources
        .iter()
        .try_fold(Vec3::zeros(), |acc, s| Ok(acc + s.field_at(p)?))
}

/// Total field jacobian of `sources` at `p`.
pub fn superpose_jacobian(sources: &[Dipole], p: &Vec3) -> Result<Matrix3<f64>> {
    sources.iter().try_fold(Matrix3::zeros(), |acc, s| {
        Ok(acc + dipole_field_jacobian(&(p - s.position), &s.moment)?)
    })
}

/// Equatorial force-intensity law `3 μ0 |m_i| |m_a| / (4π d⁴)` (N).
///
/// This is the force between two parallel moments placed side by side; the
/// coaxial configuration gives twice this value.
pub fn force_intensity(m_i: f64, m_a: f64, d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "distance must be positive, got {d}"
        )));
    }
    Ok(3.0 * KM * m_i * m_a / d.powi(4))
}

/// Angle (rad) between two directions, in `[0, π]`.
pub fn alignment_angle(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}
