use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::chart::{positions_from_links, ShapeChart};
use super::{ChainConfig, ChainShape, EnvField, SleeveSpec, BallSpec, KINK_ANGLE};
use crate::magnetics::{dipole_field, superpose_jacobian, Dipole, Vec3};
use crate::units::MU0;
use crate::{Error, Result};

const KM: f64 = MU0 / (4.0 * PI);

/// Breakdown of the chain's potential energy (J).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyParts {
    pub ballball: f64,
    pub external: f64,
    pub sleeve: f64,
    pub gravity: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.ballball + self.external + self.sleeve + self.gravity
    }
}

/// Bend at an interior ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bend {
    /// Angle between the incoming and outgoing links, in `[0, π]`.
    pub theta: f64,
    /// Radius of curvature of the sleeve arc; infinite when straight.
    pub radius: f64,
    pub kink: bool,
}

/// Ball–ball interaction `−Σ_{i<j} m_j · B(p_j − p_i, m_i)`.
pub fn energy_ballball(shape: &ChainShape, ball: &BallSpec) -> Result<f64> {
    let n = shape.len();
    let mut u = 0.0;
    for i in 0..n {
        let mi = ball.moment * shape.dipole_dirs[i];
        for j in i + 1..n {
            let b = dipole_field(&(shape.positions[j] - shape.positions[i]), &mi)?;
            u -= ball.moment * shape.dipole_dirs[j].dot(&b);
        }
    }
    Ok(u)
}

/// Interaction with the applied field, `−Σ m_i · B(p_i)`.
pub fn energy_external(shape: &ChainShape, ball: &BallSpec, env: &EnvField) -> Result<f64> {
    shape
        .positions
        .iter()
        .zip(&shape.dipole_dirs)
        .try_fold(0.0, |u, (p, m)| Ok(u - ball.moment * m.dot(&env.field_at(p)?)))
}

/// Bend angle and sleeve radius at every interior ball (`n − 2` entries).
pub fn bend_angles(shape: &ChainShape, diameter: f64) -> Result<Vec<Bend>> {
    let p = &shape.positions;
    if p.len() < 3 {
        return Ok(Vec::new());
    }
    p.windows(3)
        .map(|w| {
            let a = w[1] - w[0];
            let b = w[2] - w[1];
            if a.norm() == 0.0 || b.norm() == 0.0 {
                return Err(Error::InvalidArgument("degenerate chain segment".into()));
            }
            let theta = b.cross(&a).norm().atan2(b.dot(&a));
            let kink = theta >= KINK_ANGLE;
            let radius = if theta == 0.0 {
                f64::INFINITY
            } else if kink {
                0.0
            } else {
                0.5 * diameter / (0.5 * theta).tan()
            };
            Ok(Bend { theta, radius, kink })
        })
        .collect()
}

/// Sleeve bending energy `½ Σ E I θ_i / ρ_i = (1/d) Σ E I θ_i tan(θ_i/2)`.
pub fn energy_sleeve(shape: &ChainShape, sleeve: &SleeveSpec, diameter: f64) -> Result<f64> {
    if !sleeve.enabled {
        return Ok(0.0);
    }
    let ei = sleeve.bending_stiffness();
    let mut u = 0.0;
    for (k, bend) in bend_angles(shape, diameter)?.into_iter().enumerate() {
        if bend.kink {
            return Err(Error::Infeasible(format!("sleeve kinked at ball {}", k + 2)));
        }
        u += ei * bend.theta * (0.5 * bend.theta).tan() / diameter;
    }
    Ok(u)
}

/// Gravitational energy `Σ μ_i g·p_i`.
pub fn energy_gravity(shape: &ChainShape, ball: &BallSpec, gravity: &Vec3) -> f64 {
    shape.positions.iter().map(|p| ball.mass * gravity.dot(p)).sum()
}

/// All four contributions for a shape.
pub fn total_energy(shape: &ChainShape, config: &ChainConfig, env: &EnvField) -> Result<EnergyParts> {
    Ok(EnergyParts {
        ballball: energy_ballball(shape, &config.ball)?,
        external: energy_external(shape, &config.ball, env)?,
        sleeve: energy_sleeve(shape, &config.sleeve, config.ball.diameter)?,
        gravity: energy_gravity(shape, &config.ball, &config.gravity),
    })
}

/// Total energy and its exact gradient in the chart coordinates `x`.
pub fn energy_gradient(
    config: &ChainConfig,
    env: &EnvField,
    chart: &ShapeChart,
    x: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let objective = Objective::new(config, env, Constraints::inactive(config.n));
    let (links, dipoles) = chart.unit_vectors(x);
    let eval = objective.evaluate(&links, &dipoles)?;
    Ok((eval.parts.total(), chart.pullback(x, &eval.grad_links, &eval.grad_dipoles)))
}

/// Planar wall the tip may not cross: `normal · (p_tip − point) ≥ 0`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Wall {
    pub point: Vec3,
    pub normal: Vec3,
    pub multiplier: f64,
}

/// Augmented-Lagrangian state of the inequality constraints.
#[derive(Debug, Clone)]
pub(crate) struct Constraints {
    pub weight: f64,
    n: usize,
    /// Row-major `n × n`, used for `j ≥ i + 2`.
    pub pair_multipliers: Vec<f64>,
    pub wall: Option<Wall>,
}

impl Constraints {
    pub fn new(n: usize, weight: f64) -> Self {
        Self {
            weight,
            n,
            pair_multipliers: vec![0.0; n * n],
            wall: None,
        }
    }

    /// No penalty at all; used for pure energy evaluation.
    pub fn inactive(n: usize) -> Self {
        Self::new(n, 0.0)
    }

    pub fn multiplier(&self, i: usize, j: usize) -> f64 {
        self.pair_multipliers[i * self.n + j]
    }

    pub fn multiplier_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.pair_multipliers[i * self.n + j]
    }
}

/// `ρ/2 · max(0, c + λ/ρ)² − λ²/(2ρ)` and its derivative in `c`.
fn al_term(c: f64, lambda: f64, rho: f64) -> (f64, f64) {
    let s = c + lambda / rho;
    if s > 0.0 {
        (0.5 * rho * s * s - 0.5 * lambda * lambda / rho, rho * s)
    } else {
        (-0.5 * lambda * lambda / rho, 0.0)
    }
}

pub(crate) struct Evaluation {
    pub parts: EnergyParts,
    /// Energy plus constraint terms.
    pub objective: f64,
    pub grad_links: Vec<Vec3>,
    pub grad_dipoles: Vec<Vec3>,
    pub positions: Vec<Vec3>,
    pub kinked: bool,
    /// Non-adjacent centres closer than half a diameter.
    pub collapsed: bool,
}

/// Energy plus constraint penalties over link/dipole unit vectors.
pub(crate) struct Objective<'a> {
    pub config: &'a ChainConfig,
    env: &'a EnvField,
    pub constraints: Constraints,
}

impl<'a> Objective<'a> {
    pub fn new(config: &'a ChainConfig, env: &'a EnvField, constraints: Constraints) -> Self {
        Self { config, env, constraints }
    }

    /// `links` includes the clamped first link.
    pub fn evaluate(&self, links: &[Vec3], dipoles: &[Vec3]) -> Result<Evaluation> {
        let cfg = self.config;
        let n = dipoles.len();
        let d = cfg.ball.diameter;
        let m = cfg.ball.moment;
        let positions = positions_from_links(cfg.base_position, d, links);
        let mut gp = vec![Vec3::zeros(); n];
        let mut gm = vec![Vec3::zeros(); n];
        let mut gl = vec![Vec3::zeros(); links.len()];
        let mut parts = EnergyParts::default();
        let mut penalty = 0.0;
        let mut collapsed = false;
        let rho = self.constraints.weight;

        // ball–ball dipole interaction
        let k = KM * m * m;
        for i in 0..n {
            let a = dipoles[i];
            for j in i + 1..n {
                let b = dipoles[j];
                let r = positions[j] - positions[i];
                let rn = r.norm();
                if j >= i + 2 && rn < 0.5 * d {
                    collapsed = true;
                }
                if rn == 0.0 {
                    return Err(Error::Singular("coincident ball centres"));
                }
                let rh = r / rn;
                let inv_r3 = 1.0 / (rn * rn * rn);
                let ar = a.dot(&rh);
                let br = b.dot(&rh);
                let ab = a.dot(&b);
                parts.ballball -= k * inv_r3 * (3.0 * ar * br - ab);
                gm[i] -= k * inv_r3 * (3.0 * br * rh - b);
                gm[j] -= k * inv_r3 * (3.0 * ar * rh - a);
                let gr = -k * inv_r3 / rn
                    * (3.0 * (br * a + ar * b) + (3.0 * ab - 15.0 * ar * br) * rh);
                gp[j] += gr;
                gp[i] -= gr;

                if j >= i + 2 && rho > 0.0 {
                    let (val, dval) = al_term(d - rn, self.constraints.multiplier(i, j), rho);
                    penalty += val;
                    // ∂c/∂r = −r̂
                    gp[j] -= dval * rh;
                    gp[i] += dval * rh;
                }
            }
        }

        // applied field
        match self.env {
            EnvField::Uniform { field } => {
                for i in 0..n {
                    parts.external -= m * dipoles[i].dot(field);
                    gm[i] -= m * field;
                }
            }
            EnvField::DipoleSources { sources } => {
                for i in 0..n {
                    let b = superpose(sources, &positions[i])?;
                    parts.external -= m * dipoles[i].dot(&b);
                    gm[i] -= m * b;
                    let jac = superpose_jacobian(sources, &positions[i])?;
                    gp[i] -= m * (jac * dipoles[i]);
                }
            }
        }

        // gravity
        if cfg.ball.mass != 0.0 && cfg.gravity != Vec3::zeros() {
            for i in 0..n {
                parts.gravity += cfg.ball.mass * cfg.gravity.dot(&positions[i]);
                gp[i] += cfg.ball.mass * cfg.gravity;
            }
        }

        // wall contact on the tip
        if let (Some(wall), true) = (&self.constraints.wall, rho > 0.0) {
            let c = -wall.normal.dot(&(positions[n - 1] - wall.point));
            let (val, dval) = al_term(c, wall.multiplier, rho);
            penalty += val;
            gp[n - 1] -= dval * wall.normal;
        }

        // positions → links: p_j depends on every link before it
        let mut acc = Vec3::zeros();
        for j in (1..n).rev() {
            acc += gp[j];
            gl[j - 1] = d * acc;
        }

        // sleeve bending at interior balls
        let mut kinked = false;
        let ei = cfg.sleeve.bending_stiffness();
        if ei > 0.0 {
            for i in 1..links.len() {
                let (ta, tb) = (links[i - 1], links[i]);
                let cosv = ta.dot(&tb);
                let theta = tb.cross(&ta).norm().atan2(cosv);
                if theta >= KINK_ANGLE {
                    kinked = true;
                    parts.sleeve += ei * KINK_ANGLE * (0.5 * KINK_ANGLE).tan() / d;
                    continue;
                }
                parts.sleeve += ei * theta * (0.5 * theta).tan() / d;
                // dU/dθ / sin θ, finite as θ → 0
                let c = ei / d * sleeve_slope_over_sin(theta);
                gl[i - 1] -= c * (tb - cosv * ta);
                gl[i] -= c * (ta - cosv * tb);
            }
        }

        let objective = parts.total() + penalty;
        Ok(Evaluation {
            parts,
            objective,
            grad_links: gl,
            grad_dipoles: gm,
            positions,
            kinked,
            collapsed,
        })
    }
}

fn superpose(sources: &[Dipole], p: &Vec3) -> Result<Vec3> {
    crate::magnetics::superpose_field(sources, p)
}

/// `f'(θ)/sin θ` for `f(θ) = θ tan(θ/2)`.
fn sleeve_slope_over_sin(theta: f64) -> f64 {
    let h = 0.5 * theta;
    let c = h.cos();
    let first = 0.5 / (c * c);
    // θ / (4 sin(θ/2) cos³(θ/2)) = (h / sin h) / (2 cos³ h)
    let h_over_sin = if h < 1e-4 { 1.0 + h * h / 6.0 } else { h / h.sin() };
    first + h_over_sin / (2.0 * c * c * c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bent_shape(d: f64) -> ChainShape {
        ChainShape {
            positions: vec![Vec3::zeros(), d * Vec3::x(), d * Vec3::new(1.0, 1.0, 0.0)],
            dipole_dirs: vec![Vec3::x(), Vec3::x(), Vec3::y()],
        }
    }

    #[test]
    fn single_ball_has_no_interaction() {
        let cfg = ChainConfig::new(1);
        assert_eq!(energy_ballball(&cfg.straight_shape(), &cfg.ball).unwrap(), 0.0);
    }

    #[test]
    fn coaxial_pair_energy() {
        let cfg = ChainConfig::new(2);
        let u = energy_ballball(&cfg.straight_shape(), &cfg.ball).unwrap();
        let (m, d) = (cfg.ball.moment, cfg.ball.diameter);
        assert_relative_eq!(u, -MU0 * m * m / (2.0 * PI * d.powi(3)), max_relative = 1e-13);
    }

    #[test]
    fn uniform_field_aligned_minimum() {
        let cfg = ChainConfig::new(5);
        let b = Vec3::new(0.0, 0.0, 0.023);
        let mut shape = cfg.straight_shape();
        assert_eq!(energy_external(&shape, &cfg.ball, &EnvField::none()).unwrap(), 0.0);
        shape.dipole_dirs = vec![Vec3::z(); 5];
        let u = energy_external(&shape, &cfg.ball, &EnvField::uniform(b)).unwrap();
        assert_relative_eq!(u, -5.0 * cfg.ball.moment * 0.023, max_relative = 1e-14);
    }

    #[test]
    fn single_source_matches_dipole_field() {
        let cfg = ChainConfig::new(1);
        let shape = ChainShape {
            positions: vec![Vec3::new(0.01, 0.0, 0.0)],
            dipole_dirs: vec![Vec3::new(0.6, 0.8, 0.0)],
        };
        let src = Dipole::new(Vec3::new(0.0, 0.1, 0.0), Vec3::new(0.0, 50.0, 0.0));
        let env = EnvField::DipoleSources { sources: vec![src] };
        let expected = -(cfg.ball.moment * shape.dipole_dirs[0])
            .dot(&dipole_field(&(shape.positions[0] - src.position), &src.moment).unwrap());
        assert_eq!(energy_external(&shape, &cfg.ball, &env).unwrap(), expected);
    }

    #[test]
    fn bend_angle_cases() {
        let d = 3.175e-3;
        let straight = ChainConfig::new(4).straight_shape();
        for b in bend_angles(&straight, d).unwrap() {
            assert_eq!(b.theta, 0.0);
            assert!(b.radius.is_infinite());
        }
        let bent = bend_angles(&bent_shape(d), d).unwrap();
        assert_relative_eq!(bent[0].theta, PI / 2.0, max_relative = 1e-15);
        assert_relative_eq!(bent[0].radius, d / 2.0, max_relative = 1e-12);
        let mut scaled = bent_shape(d);
        scaled.positions.iter_mut().for_each(|p| *p *= 7.3);
        assert_relative_eq!(bend_angles(&scaled, d).unwrap()[0].theta, bent[0].theta, max_relative = 1e-15);
        let folded = ChainShape {
            positions: vec![Vec3::zeros(), d * Vec3::x(), Vec3::zeros() + 1e-9 * Vec3::y()],
            dipole_dirs: vec![Vec3::x(); 3],
        };
        let b = bend_angles(&folded, d).unwrap()[0];
        assert!(b.kink);
        assert_eq!(b.radius, 0.0);
    }

    #[test]
    fn sleeve_energy_right_angle() {
        let d = 3.175e-3;
        let sleeve = SleeveSpec { elastic_modulus: 1.0, second_moment: 1e-6, enabled: true };
        let u = energy_sleeve(&bent_shape(d), &sleeve, d).unwrap();
        assert_relative_eq!(u, 4.948e-4, max_relative = 1e-3);
        // the arc form ½ E I θ / ρ gives the same value
        assert_relative_eq!(u, 0.5 * 1e-6 * (PI / 2.0) / (d / 2.0), max_relative = 1e-12);
        let stiffer = SleeveSpec { elastic_modulus: 2.0, ..sleeve };
        assert_relative_eq!(energy_sleeve(&bent_shape(d), &stiffer, d).unwrap(), 2.0 * u, max_relative = 1e-14);
        assert_eq!(energy_sleeve(&ChainConfig::new(5).straight_shape(), &sleeve, d).unwrap(), 0.0);
    }

    #[test]
    fn kinked_sleeve_is_infeasible() {
        let d = 3.175e-3;
        let folded = ChainShape {
            positions: vec![Vec3::zeros(), d * Vec3::x(), 1e-7 * Vec3::y()],
            dipole_dirs: vec![Vec3::x(); 3],
        };
        assert!(matches!(
            energy_sleeve(&folded, &SleeveSpec::nominal(), d),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn gravity_energy_is_linear() {
        let cfg = ChainConfig::new(4);
        let g = Vec3::new(0.0, 0.0, 9.81);
        let shape = cfg.straight_shape();
        assert_eq!(energy_gravity(&shape, &cfg.ball, &Vec3::zeros()), 0.0);
        // chain lies in the xy-plane, so g ⊥ plane gives zero here
        assert_eq!(energy_gravity(&shape, &cfg.ball, &g), 0.0);
        let delta = Vec3::new(0.0, 0.0, 0.01);
        let mut moved = shape.clone();
        moved.positions.iter_mut().for_each(|p| *p += delta);
        let du = energy_gravity(&moved, &cfg.ball, &g) - energy_gravity(&shape, &cfg.ball, &g);
        assert_relative_eq!(du, 4.0 * cfg.ball.mass * g.dot(&delta), max_relative = 1e-12);
    }

    #[test]
    fn sleeve_slope_series_is_continuous() {
        let small = sleeve_slope_over_sin(1e-9);
        assert_relative_eq!(small, 1.0, max_relative = 1e-12);
        let a = sleeve_slope_over_sin(2e-4 - 1e-12);
        let b = sleeve_slope_over_sin(2e-4 + 1e-12);
        assert_relative_eq!(a, b, max_relative = 1e-10);
    }
}
