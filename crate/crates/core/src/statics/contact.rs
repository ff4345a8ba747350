use serde::{Deserialize, Serialize};

use super::solver::solve_with_wall;
use super::{solve_equilibrium, ChainConfig, EnvField, Equilibrium, SolverConfig};
use crate::magnetics::Vec3;
use crate::{Error, Result};

/// Normal force between the chain tip and a planar wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactForce {
    /// Normal force on the wall (N), `≥ 0`.
    pub force: f64,
    /// False when the free equilibrium tip stays on the open side.
    pub in_contact: bool,
    pub equilibrium: Equilibrium,
}

/// Tip force against the plane through `wall_point` with unit normal
/// `wall_normal` pointing into the free half-space.
///
/// The tip is constrained to the free side and the force is the constraint
/// multiplier at the constrained minimum, i.e. the energy gradient along the
/// wall normal that the wall has to balance.
pub fn tip_contact_force(
    config: &ChainConfig,
    env: &EnvField,
    wall_point: Vec3,
    wall_normal: Vec3,
    solver: &SolverConfig,
) -> Result<ContactForce> {
    if !(wall_normal.norm() > 0.0) {
        return Err(Error::InvalidArgument("wall normal must be non-zero".into()));
    }
    let normal = wall_normal.normalize();
    let free = solve_equilibrium(config, env, solver)?;
    let gap = normal.dot(&(free.shape.tip_position() - wall_point));
    if gap > 0.0 {
        return Ok(ContactForce { force: 0.0, in_contact: false, equilibrium: free });
    }
    let warm = solver.clone().warm(Some(free.shape.clone()));
    let (equilibrium, force) = solve_with_wall(config, env, &warm, Some((wall_point, normal)))?;
    Ok(ContactForce { force: force.max(0.0), in_contact: true, equilibrium })
}
