use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::chart::ShapeChart;
use super::energy::{Constraints, EnergyParts, Objective, Wall};
use super::lbfgs::{minimize, MinimizerOptions, Status};
use super::{ChainConfig, ChainShape, EnvField, SolverConfig};
use crate::magnetics::Vec3;
use crate::units::MU0;
use crate::{Error, Result};

/// Re-centre the chart once any unit vector has moved this far (rad).
const RECENTRE_OFFSET: f64 = 1.0;
/// Allowed overlap of non-adjacent balls, relative to the diameter.
const OVERLAP_TOLERANCE: f64 = 1e-7;
const MAX_AL_ROUNDS: usize = 40;
const PROBE_SCALE: f64 = 1e-3;
const RESTART_SCALE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    /// Total potential energy (J), constraint terms excluded.
    pub energy: f64,
    pub parts: EnergyParts,
    /// Norm of the reduced gradient at the solution (J/rad).
    pub gradient_norm: f64,
    /// Worst relative overlap of non-adjacent balls, `max(0, d − r)/d`.
    pub constraint_violation: f64,
    pub restarts: usize,
    pub converged: bool,
    pub kinked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub shape: ChainShape,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    NotConverged,
    /// The sleeve kinked (bend angle at the cap).
    Infeasible,
}

/// A solve that failed; carries the best shape found.
#[derive(Debug, Clone, thiserror::Error)]
#[error("equilibrium solve failed ({reason:?}): gradient norm {:.3e} after {} iterations", .best.diagnostics.gradient_norm, .best.diagnostics.iterations)]
pub struct SolveFailure {
    pub reason: FailureReason,
    pub best: Equilibrium,
}

pub(crate) struct Outcome {
    pub shape: ChainShape,
    pub parts: EnergyParts,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kinked: bool,
    pub violation: f64,
    pub wall_multiplier: f64,
}

/// Equilibrium shape of `config` in `env`.
pub fn solve_equilibrium(config: &ChainConfig, env: &EnvField, solver: &SolverConfig) -> Result<Equilibrium> {
    solve_with_wall(config, env, solver, None).map(|(eq, _)| eq)
}

pub(crate) fn solve_with_wall(
    config: &ChainConfig,
    env: &EnvField,
    solver: &SolverConfig,
    wall: Option<(Vec3, Vec3)>,
) -> Result<(Equilibrium, f64)> {
    config.validate()?;
    solver.validate()?;
    if config.n == 1 && wall.is_none() {
        return Ok((single_ball(config, env, solver)?, 0.0));
    }

    let start = match &solver.warm_start {
        Some(w) => w.resized(config.n, config),
        None => config.straight_shape(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(solver.seed);

    let mut best = augmented_solve(config, env, solver, wall, &start)?;
    let mut restarts = 0;

    if solver.saddle_probe && best.converged {
        let probe_start = perturb(config, &best.shape, PROBE_SCALE, &mut rng);
        let probe = augmented_solve(config, env, solver, wall, &probe_start)?;
        let margin = 1e-9 * best.parts.total().abs().max(reference_energy(config));
        if probe.converged && !probe.kinked && probe.parts.total() < best.parts.total() - margin {
            best = probe;
        }
    }

    while (!best.converged || best.kinked) && restarts < solver.multistart_count {
        restarts += 1;
        let s = perturb(config, &best.shape, RESTART_SCALE, &mut rng);
        let candidate = augmented_solve(config, env, solver, wall, &s)?;
        let better = match (candidate.converged && !candidate.kinked, best.converged && !best.kinked) {
            (true, false) => true,
            (false, true) => false,
            _ => candidate.parts.total() < best.parts.total(),
        };
        if better {
            best = candidate;
        }
    }

    let wall_force = best.wall_multiplier;
    let eq = Equilibrium {
        diagnostics: Diagnostics {
            iterations: best.iterations,
            energy: best.parts.total(),
            parts: best.parts,
            gradient_norm: best.gradient_norm,
            constraint_violation: best.violation,
            restarts,
            converged: best.converged,
            kinked: best.kinked,
        },
        shape: best.shape,
    };
    if eq.diagnostics.kinked {
        return Err(Error::Solve(Box::new(SolveFailure { reason: FailureReason::Infeasible, best: eq })));
    }
    if !eq.diagnostics.converged {
        return Err(Error::Solve(Box::new(SolveFailure { reason: FailureReason::NotConverged, best: eq })));
    }
    Ok((eq, wall_force))
}

/// `μ0 m² / (4π d³)`, the natural energy unit of the chain.
pub(crate) fn reference_energy(config: &ChainConfig) -> f64 {
    let m = config.ball.moment.max(1e-12);
    MU0 / (4.0 * PI) * m * m / config.ball.diameter.powi(3)
}

fn single_ball(config: &ChainConfig, env: &EnvField, solver: &SolverConfig) -> Result<Equilibrium> {
    let b = env.field_at(&config.base_position)?;
    let dir = if b.norm() > 0.0 {
        b.normalize()
    } else {
        solver
            .warm_start
            .as_ref()
            .and_then(|w| w.dipole_dirs.first().copied())
            .unwrap_or(config.base_tangent)
    };
    let shape = ChainShape { positions: vec![config.base_position], dipole_dirs: vec![dir] };
    let parts = EnergyParts {
        external: -config.ball.moment * dir.dot(&b),
        gravity: config.ball.mass * config.gravity.dot(&config.base_position),
        ..Default::default()
    };
    Ok(Equilibrium {
        shape,
        diagnostics: Diagnostics {
            iterations: 0,
            energy: parts.total(),
            parts,
            gradient_norm: config.ball.moment * dir.cross(&b).norm(),
            constraint_violation: 0.0,
            restarts: 0,
            converged: true,
            kinked: false,
        },
    })
}

fn perturb(config: &ChainConfig, shape: &ChainShape, scale: f64, rng: &mut ChaCha8Rng) -> ChainShape {
    let chart = ShapeChart::centred_at(config, shape);
    let x: Vec<f64> = (0..chart.dim())
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    chart.shape(&x)
}

/// Augmented-Lagrangian loop around [`descend`].
fn augmented_solve(
    config: &ChainConfig,
    env: &EnvField,
    solver: &SolverConfig,
    wall: Option<(Vec3, Vec3)>,
    start: &ChainShape,
) -> Result<Outcome> {
    let n = config.n;
    let d = config.ball.diameter;
    let rho = solver.penalty_weight;
    let mut constraints = Constraints::new(n, rho);
    constraints.wall = wall.map(|(point, normal)| Wall { point, normal: normal.normalize(), multiplier: 0.0 });

    let mut shape = start.clone();
    let mut iterations = 0;
    for _ in 0..MAX_AL_ROUNDS {
        let mut out = descend(config, env, &constraints, &shape, solver, &mut iterations)?;
        shape = out.shape.clone();

        let mut settled = true;
        for i in 0..n {
            for j in i + 2..n {
                let c = d - (shape.positions[j] - shape.positions[i]).norm();
                let lam = constraints.multiplier_mut(i, j);
                if c > OVERLAP_TOLERANCE * d || (*lam > 0.0 && c < -1e-6 * d) {
                    settled = false;
                }
                *lam = (*lam + rho * c).max(0.0);
            }
        }
        if let Some(w) = constraints.wall.as_mut() {
            let c = -w.normal.dot(&(shape.tip_position() - w.point));
            if c > OVERLAP_TOLERANCE * d || (w.multiplier > 0.0 && c < -1e-6 * d) {
                settled = false;
            }
            w.multiplier = (w.multiplier + rho * c).max(0.0);
            out.wall_multiplier = w.multiplier;
        }
        out.iterations = iterations;
        if settled || !out.converged {
            return Ok(out);
        }
    }
    let mut out = descend(config, env, &constraints, &shape, solver, &mut iterations)?;
    out.iterations = iterations;
    out.converged = false;
    Ok(out)
}

/// Unconstrained minimisation of the penalised objective by L-BFGS on
/// re-centred charts.
fn descend(
    config: &ChainConfig,
    env: &EnvField,
    constraints: &Constraints,
    start: &ChainShape,
    solver: &SolverConfig,
    iterations: &mut usize,
) -> Result<Outcome> {
    let objective = Objective::new(config, env, constraints.clone());
    let scale = 1.0 / reference_energy(config);
    let d = config.ball.diameter;
    let opts = MinimizerOptions {
        max_iterations: solver.max_iterations,
        gradient_tolerance: solver.gradient_tolerance * scale,
        memory: 12,
        max_step: 0.5,
    };

    let mut shape = start.clone();
    let mut converged = false;
    let mut error = None;
    loop {
        let chart = ShapeChart::centred_at(config, &shape);
        let f = |x: &[f64]| -> (f64, Vec<f64>) {
            let (links, dipoles) = chart.unit_vectors(x);
            match objective.evaluate(&links, &dipoles) {
                Ok(e) if !e.collapsed => (
                    e.objective * scale,
                    chart.pullback(x, &e.grad_links, &e.grad_dipoles).iter().map(|g| g * scale).collect(),
                ),
                Ok(_) => (f64::INFINITY, vec![0.0; x.len()]),
                Err(e) => {
                    error.get_or_insert(e);
                    (f64::INFINITY, vec![0.0; x.len()])
                }
            }
        };
        let budget = MinimizerOptions {
            max_iterations: solver.max_iterations.saturating_sub(*iterations),
            ..opts
        };
        let m = minimize(vec![0.0; chart.dim()], f, &budget, |x| ShapeChart::max_offset(x) > RECENTRE_OFFSET);
        *iterations += m.iterations;
        shape = chart.shape(&m.x);
        match m.status {
            Status::Interrupted => continue,
            // a fresh chart has an orthonormal Jacobian at its origin, so
            // convergence is only trusted when reached without moving
            Status::Converged if m.iterations == 0 => {
                converged = true;
                break;
            }
            Status::Converged => continue,
            Status::MaxIterations => break,
            Status::Stalled if m.iterations > 0 => continue,
            Status::Stalled => break,
        }
    }
    if let Some(e) = error {
        if !converged {
            return Err(e);
        }
    }

    let chart = ShapeChart::centred_at(config, &shape);
    let zero = vec![0.0; chart.dim()];
    let (links, dipoles) = chart.unit_vectors(&zero);
    let eval = objective.evaluate(&links, &dipoles)?;
    let grad = chart.pullback(&zero, &eval.grad_links, &eval.grad_dipoles);
    let gradient_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let shape = ChainShape { positions: eval.positions, dipole_dirs: dipoles };
    let violation = max_overlap(&shape, d);
    Ok(Outcome {
        shape,
        parts: eval.parts,
        gradient_norm,
        iterations: *iterations,
        converged: converged && gradient_norm <= solver.gradient_tolerance,
        kinked: eval.kinked,
        violation,
        wall_multiplier: 0.0,
    })
}

fn max_overlap(shape: &ChainShape, d: f64) -> f64 {
    (d - shape.min_nonadjacent_distance()).max(0.0) / d
}
