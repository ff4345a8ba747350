//! Omni-wheel drive of a spherical actuation magnet.
//!
//! Three omni wheels of radius `ρ_w` touch a magnet of radius `ρ_a`. With
//! wheel axes `â_i`, wheel rates map to the magnet's angular velocity as
//! `ω_a = η A ω_w` where the rows of `A` are `−â_iᵀ` and `η = ρ_a/ρ_w`.
//! Wheels can slip, so absolute orientation is recovered from a three-axis
//! field sensor under the magnet and the dipole is steered back to a neutral
//! direction by the cross-product law `ω_w = K η⁻¹ A⁻¹ (m̂_m × m̂_c)`.

use nalgebra::{Matrix3, Rotation3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::magnetics::{alignment_angle, dipole_field, Dipole, Vec3};
use crate::units::MU0;
use crate::{Error, Result};

/// Wheel geometry of one drive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WheelSet {
    pub wheel_radius: f64,
    pub magnet_radius: f64,
    /// Rows are `−â_iᵀ`.
    pub matrix: Matrix3<f64>,
    #[serde(skip)]
    inverse: Matrix3<f64>,
}

impl WheelSet {
    /// Build from the wheel axes.
    pub fn from_axes(wheel_radius: f64, magnet_radius: f64, axes: [Vec3; 3]) -> Result<Self> {
        let rows: Vec<_> = axes.iter().map(|a| -a.transpose()).collect();
        Self::from_matrix(wheel_radius, magnet_radius, Matrix3::from_rows(&rows))
    }

    pub fn from_matrix(wheel_radius: f64, magnet_radius: f64, matrix: Matrix3<f64>) -> Result<Self> {
        if !(wheel_radius > 0.0) || !(magnet_radius > 0.0) {
            return Err(Error::Config("wheel and magnet radii must be positive".into()));
        }
        let inverse = matrix
            .try_inverse()
            .filter(|_| matrix.determinant().abs() > 1e-9)
            .ok_or_else(|| Error::Config("wheel axis matrix is singular".into()))?;
        Ok(Self { wheel_radius, magnet_radius, matrix, inverse })
    }

    /// The bench drive: 48 mm wheels on a 43.5 mm effective magnet radius.
    pub fn reference() -> Self {
        Self::from_matrix(0.048, 0.0435, reference_matrix()).expect("reference matrix is invertible")
    }

    /// `ρ_a / ρ_w`
    pub fn eta(&self) -> f64 {
        self.magnet_radius / self.wheel_radius
    }

    pub fn inverse(&self) -> &Matrix3<f64> {
        &self.inverse
    }

    /// Restore the cached inverse after deserialisation.
    pub fn rebuilt(self) -> Result<Self> {
        Self::from_matrix(self.wheel_radius, self.magnet_radius, self.matrix)
    }
}

/// Wheel-axis matrix of the bench drive (two-decimal values).
pub fn reference_matrix() -> Matrix3<f64> {
    Matrix3::new(
        0.82, 0.0, -0.58, //
        -0.41, 0.71, -0.58, //
        -0.41, -0.71, -0.58,
    )
}

/// `ω_a = η A ω_w`
pub fn wheel_to_magnet(omega_w: &Vec3, wheels: &WheelSet) -> Vec3 {
    wheels.eta() * (wheels.matrix * omega_w)
}

/// `ω_w = η⁻¹ A⁻¹ ω_a`
pub fn magnet_to_wheel(omega_a: &Vec3, wheels: &WheelSet) -> Vec3 {
    (wheels.inverse * omega_a) / wheels.eta()
}

/// `R ← exp([ω dt]×) R`, re-orthonormalised.
pub fn integrate_rotation(r: &Rotation3<f64>, omega: &Vec3, dt: f64) -> Rotation3<f64> {
    let mut next = Rotation3::new(omega * dt) * r;
    next.renormalize();
    next
}

/// One rotating-magnet drive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuationUnit {
    pub wheels: WheelSet,
    /// Dipole moment magnitude of the actuation magnet (A·m²).
    pub moment: f64,
    /// Magnet centre in the world frame.
    pub position: Vec3,
    /// Magnet body frame to world; the dipole is the body z axis.
    pub rotation: Rotation3<f64>,
    /// Distance from magnet centre to the field sensor along world −z.
    pub sensor_distance: f64,
    /// Neutral dipole direction targeted by reconfiguration.
    pub neutral_dipole: Vec3,
    /// Multiplicative slip per wheel (1 = ideal rolling).
    pub slip: Vec3,
    /// Standard deviation of sensor noise per axis (T).
    pub sensor_noise: f64,
}

impl ActuationUnit {
    pub fn new(wheels: WheelSet, moment: f64, position: Vec3) -> Self {
        let sensor_distance = 1.2 * wheels.magnet_radius;
        Self {
            wheels,
            moment,
            position,
            rotation: Rotation3::identity(),
            sensor_distance,
            neutral_dipole: Vec3::z(),
            slip: Vec3::new(1.0, 1.0, 1.0),
            sensor_noise: 0.0,
        }
    }

    pub fn dipole_direction(&self) -> Vec3 {
        self.rotation * Vec3::z()
    }

    pub fn dipole(&self) -> Dipole {
        Dipole::new(self.position, self.moment * self.dipole_direction())
    }

    /// Advance the magnet orientation under wheel rates `omega_w` for `dt`,
    /// applying wheel slip.
    pub fn drive_wheels(&mut self, omega_w: &Vec3, dt: f64) {
        let effective = omega_w.component_mul(&self.slip);
        let omega_a = wheel_to_magnet(&effective, &self.wheels);
        self.rotation = integrate_rotation(&self.rotation, &omega_a, dt);
    }

    /// Advance under a commanded magnet angular velocity, routed through the
    /// wheels.
    pub fn drive_magnet(&mut self, omega_a: &Vec3, dt: f64) {
        let w = magnet_to_wheel(omega_a, &self.wheels);
        self.drive_wheels(&w, dt);
    }
}

/// Noise-free field at the sensor below the magnet.
pub fn sensor_reading(unit: &ActuationUnit) -> Result<Vec3> {
    if !(unit.sensor_distance > unit.wheels.magnet_radius) {
        return Err(Error::InvalidArgument(format!(
            "sensor distance {} m is inside the magnet (radius {} m)",
            unit.sensor_distance, unit.wheels.magnet_radius
        )));
    }
    let offset = -unit.sensor_distance * Vec3::z();
    dipole_field(&offset, &(unit.moment * unit.dipole_direction()))
}

/// Sensor reading with the unit's configured Gaussian noise.
pub fn sensor_reading_noisy<R: Rng + ?Sized>(unit: &ActuationUnit, rng: &mut R) -> Result<Vec3> {
    let clean = sensor_reading(unit)?;
    if unit.sensor_noise <= 0.0 {
        return Ok(clean);
    }
    let noise = Normal::new(0.0, unit.sensor_noise)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(clean + Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng)))
}

/// Smallest reading from which a direction is still estimated (T).
pub const SENSOR_FLOOR: f64 = 1e-9;

/// Invert the on-axis dipole model at the sensor: the sensor sits at `−D ẑ`
/// so `B = (μ0|m|/4πD³) (3 e3 e3ᵀ − I) m̂`, whose inverse is
/// `(3/2) e3 e3ᵀ − I`.
pub fn estimate_dipole_direction(b_m: &Vec3, sensor_distance: f64, moment: f64) -> Result<Vec3> {
    if !(b_m.norm() > SENSOR_FLOOR) {
        return Err(Error::Estimation("sensor reading below noise floor"));
    }
    let scale = 4.0 * PI * sensor_distance.powi(3) / (MU0 * moment);
    let inv = 1.5 * Vec3::z() * Vec3::z().transpose() - Matrix3::identity();
    Ok((scale * (inv * b_m)).normalize())
}

/// Wheel rates of the reconfiguration law.
pub fn reconfigure_step(measured: &Vec3, neutral: &Vec3, gain: f64, wheels: &WheelSet) -> Vec3 {
    gain * magnet_to_wheel(&measured.cross(neutral), wheels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconfigureOptions {
    /// Loop gain `K` (1/s).
    pub gain: f64,
    /// Control period (s).
    pub dt: f64,
    pub max_steps: usize,
    /// Convergence threshold on the alignment angle (rad).
    pub threshold: f64,
}

impl Default for ReconfigureOptions {
    fn default() -> Self {
        Self {
            gain: 2.0,
            dt: 0.05,
            max_steps: 300,
            threshold: 0.5_f64.to_radians(),
        }
    }
}

/// One control period of the reconfiguration loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconfigureSample {
    pub step: usize,
    /// Measured angle to the neutral direction before acting (rad).
    pub angle: f64,
    pub measured: Vec3,
    pub omega_w: Vec3,
    /// The antipodal escape fired on this step.
    pub escape: bool,
    /// The angle was below threshold; nothing was driven.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconfigureRun {
    pub samples: Vec<ReconfigureSample>,
    pub converged: bool,
    pub steps: usize,
    pub final_angle: f64,
}

/// Cross products below this are treated as the antipodal stall.
const STALL_CROSS: f64 = 1e-6;

/// Any unit vector perpendicular to `v`.
fn perpendicular(v: &Vec3) -> Vec3 {
    let helper = if v.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    v.cross(&helper).normalize()
}

impl ReconfigureOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0) || !(self.dt > 0.0) || self.gain * self.dt >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "reconfiguration needs K > 0 and 0 < K·dt < 1 (K = {}, dt = {})",
                self.gain, self.dt
            )));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::InvalidArgument("reconfiguration threshold must be positive".into()));
        }
        Ok(())
    }
}

/// One sense → estimate → control → drive period. When the measured angle
/// is already below threshold nothing is driven and the sample is marked
/// converged.
pub fn reconfigure_tick<R: Rng + ?Sized>(
    unit: &mut ActuationUnit,
    opts: &ReconfigureOptions,
    step: usize,
    rng: &mut R,
) -> Result<ReconfigureSample> {
    let neutral = unit.neutral_dipole.normalize();
    let reading = sensor_reading_noisy(unit, rng)?;
    let measured = estimate_dipole_direction(&reading, unit.sensor_distance, unit.moment)?;
    let angle = alignment_angle(&measured, &neutral);
    if angle < opts.threshold {
        return Ok(ReconfigureSample { step, angle, measured, omega_w: Vec3::zeros(), escape: false, converged: true });
    }
    let cross = measured.cross(&neutral);
    let escape = cross.norm() < STALL_CROSS && angle > PI / 2.0;
    let omega_w = if escape {
        magnet_to_wheel(&(0.01 * opts.gain * perpendicular(&measured)), &unit.wheels)
    } else {
        reconfigure_step(&measured, &neutral, opts.gain, &unit.wheels)
    };
    unit.drive_wheels(&omega_w, opts.dt);
    Ok(ReconfigureSample { step, angle, measured, omega_w, escape, converged: false })
}

/// Run [`reconfigure_tick`] until the dipole matches the neutral direction
/// or `max_steps` control periods have elapsed.
pub fn reconfigure_run<R: Rng + ?Sized>(
    unit: &mut ActuationUnit,
    opts: &ReconfigureOptions,
    rng: &mut R,
) -> Result<ReconfigureRun> {
    opts.validate()?;
    let mut samples = Vec::new();
    for step in 0..opts.max_steps {
        let sample = reconfigure_tick(unit, opts, step, rng)?;
        samples.push(sample);
        if sample.converged {
            return Ok(ReconfigureRun { samples, converged: true, steps: step, final_angle: sample.angle });
        }
    }
    // final reading after the last period, no further drive
    let reading = sensor_reading_noisy(unit, rng)?;
    let measured = estimate_dipole_direction(&reading, unit.sensor_distance, unit.moment)?;
    let angle = alignment_angle(&measured, &unit.neutral_dipole.normalize());
    let converged = angle < opts.threshold;
    samples.push(ReconfigureSample {
        step: opts.max_steps,
        angle,
        measured,
        omega_w: Vec3::zeros(),
        escape: false,
        converged,
    });
    Ok(ReconfigureRun { samples, converged, steps: opts.max_steps, final_angle: angle })
}
