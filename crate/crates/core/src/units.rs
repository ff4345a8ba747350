//! Physical constants and the unit conversions used at I/O boundaries.
//!
//! Everything inside the crate is SI. Millimetres, millitesla and gram-force
//! only appear in documents and on the command line.

use std::f64::consts::PI;

/// Vacuum permeability (T·m/A).
pub const MU0: f64 = 4.0e-7 * PI;

/// One gram-force in newtons.
pub const GRAM_FORCE: f64 = 9.806_65e-3;

/// Remanence of sintered N52 NdFeB (T).
pub const N52_REMANENCE: f64 = 1.45;

/// Density of sintered NdFeB (kg/m³).
pub const NDFEB_DENSITY: f64 = 7500.0;

pub fn gf_to_newton(gf: f64) -> f64 {
    gf * GRAM_FORCE
}

pub fn newton_to_gf(n: f64) -> f64 {
    n / GRAM_FORCE
}

pub fn mm(v: f64) -> f64 {
    v * 1e-3
}

pub fn mt(v: f64) -> f64 {
    v * 1e-3
}

pub fn sphere_volume(diameter: f64) -> f64 {
    PI * diameter.powi(3) / 6.0
}

pub fn cylinder_volume(radius: f64, height: f64) -> f64 {
    PI * radius * radius * height
}

/// Dipole moment magnitude of a uniformly magnetised body, `Br·V/μ0`.
pub fn moment_from_remanence(remanence: f64, volume: f64) -> f64 {
    remanence * volume / MU0
}
