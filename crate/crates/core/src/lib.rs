//! Quasi-static simulation of magnetic ball-chain catheters.
//!
//! A ball chain is a string of spherical permanent magnets held together by
//! their mutual attraction and optionally wrapped in a soft sleeve. External
//! permanent magnets, spun in place by omni-wheel drives, bend the chain; its
//! shape at every instant is the minimizer of the total potential energy.
//!
//! The crate is organised bottom-up:
//!
//! - [`magnetics`]: point-dipole field, gradient, force and torque.
//! - [`statics`]: chain energy, analytic gradient and the equilibrium solver.
//! - [`actuation`]: omni-wheel kinematics, field sensor and axis reconfiguration.
//! - [`sizing`]: force scaling and clinical magnet sizing.
//! - [`session`]: scenarios, the teleoperation loop, workspace sweeps and studies.

// `!(x > 0.0)` deliberately rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actuation;
pub mod error;
pub mod magnetics;
pub mod session;
pub mod sizing;
pub mod statics;
pub mod units;

pub use error::{Error, Result};
pub use magnetics::{Dipole, Vec3};
