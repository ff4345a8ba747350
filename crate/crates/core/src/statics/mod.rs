//! Quasi-static equilibrium of a magnetic ball chain.
//!
//! The chain's shape minimises the sum of four potential energies:
//! ball–ball dipole interaction, interaction with the applied field, sleeve
//! bending and gravity. Ball contact is enforced by construction: the shape
//! is parameterised by unit link vectors `t_i` with `p_{i+1} = p_i + d·t_i`,
//! and by one unit dipole direction per ball. The first ball sits at the
//! sheath exit and the first link is clamped to the insertion direction.

mod chart;
mod contact;
mod energy;
mod lbfgs;
mod solver;

use serde::{Deserialize, Serialize};

use crate::magnetics::{Dipole, Vec3};
use crate::units::{moment_from_remanence, sphere_volume, N52_REMANENCE, NDFEB_DENSITY};
use crate::{Error, Result};

pub use chart::ShapeChart;
pub use contact::{tip_contact_force, ContactForce};
pub use energy::{
    bend_angles, energy_ballball, energy_external, energy_gradient, energy_gravity,
    energy_sleeve, total_energy, Bend, EnergyParts,
};
pub use lbfgs::{minimize, Minimum, MinimizerOptions, Status};
pub use solver::{solve_equilibrium, Diagnostics, Equilibrium, FailureReason, SolveFailure};

/// Largest bend angle evaluated by the sleeve energy; beyond it the
/// configuration counts as a kink.
pub const KINK_ANGLE: f64 = std::f64::consts::PI - 1e-3;

/// Physical description of one ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallSpec {
    /// Diameter (m); also the centre spacing of touching balls.
    pub diameter: f64,
    /// Dipole moment magnitude (A·m²).
    pub moment: f64,
    /// Mass (kg).
    pub mass: f64,
}

impl BallSpec {
    /// N52 sphere of the given diameter with sintered NdFeB density.
    pub fn n52(diameter: f64) -> Self {
        let volume = sphere_volume(diameter);
        Self {
            diameter,
            moment: moment_from_remanence(N52_REMANENCE, volume),
            mass: NDFEB_DENSITY * volume,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.diameter > 0.0) || !(self.moment >= 0.0) || !(self.mass >= 0.0) {
            return Err(Error::Config(format!("invalid ball parameters {self:?}")));
        }
        Ok(())
    }
}

impl Default for BallSpec {
    /// 1/8" N52 ball.
    fn default() -> Self {
        Self::n52(3.175e-3)
    }
}

/// Elastic sleeve around the chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SleeveSpec {
    /// Young's modulus (Pa).
    pub elastic_modulus: f64,
    /// Second moment of area of the tube cross-section (m⁴).
    pub second_moment: f64,
    pub enabled: bool,
}

impl SleeveSpec {
    /// Nominal soft-silicone tube, 3.0 mm ID and 3.5 mm OD.
    pub fn nominal() -> Self {
        Self {
            elastic_modulus: 340e3,
            second_moment: tube_second_moment(3.5e-3, 3.0e-3),
            enabled: true,
        }
    }

    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::nominal()
        }
    }

    pub fn bending_stiffness(&self) -> f64 {
        if self.enabled {
            self.elastic_modulus * self.second_moment
        } else {
            0.0
        }
    }
}

/// `π (OD⁴ − ID⁴) / 64`
pub fn tube_second_moment(outer: f64, inner: f64) -> f64 {
    std::f64::consts::PI * (outer.powi(4) - inner.powi(4)) / 64.0
}

/// Physical parameters of the exposed chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Number of exposed balls.
    pub n: usize,
    pub ball: BallSpec,
    pub sleeve: SleeveSpec,
    /// Centre of the first ball (sheath exit).
    pub base_position: Vec3,
    /// Insertion direction; the first link is clamped to it.
    pub base_tangent: Vec3,
    /// Enters the energy as `Σ μ_i g·p_i`.
    pub gravity: Vec3,
}

impl ChainConfig {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            ball: BallSpec::default(),
            sleeve: SleeveSpec::disabled(),
            base_position: Vec3::zeros(),
            base_tangent: Vec3::x(),
            gravity: Vec3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("chain needs at least one ball".into()));
        }
        self.ball.validate()?;
        if ((self.base_tangent.norm() - 1.0).abs() > 1e-9) || !self.base_position.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("base tangent must be a unit vector".into()));
        }
        let s = &self.sleeve;
        if !(s.elastic_modulus >= 0.0) || !(s.second_moment >= 0.0) {
            return Err(Error::Config("sleeve stiffness must be non-negative".into()));
        }
        Ok(())
    }

    /// Straight chain along the insertion direction with all dipoles aligned.
    pub fn straight_shape(&self) -> ChainShape {
        let d = self.ball.diameter;
        ChainShape {
            positions: (0..self.n)
                .map(|i| self.base_position + (i as f64 * d) * self.base_tangent)
                .collect(),
            dipole_dirs: vec![self.base_tangent; self.n],
        }
    }
}

/// Applied field acting on the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EnvField {
    /// Spatially uniform field (T).
    Uniform { field: Vec3 },
    /// Superposition of point-dipole sources.
    DipoleSources { sources: Vec<Dipole> },
}

impl EnvField {
    pub fn none() -> Self {
        EnvField::Uniform { field: Vec3::zeros() }
    }

    pub fn uniform(field: Vec3) -> Self {
        EnvField::Uniform { field }
    }

    pub fn field_at(&self, p: &Vec3) -> Result<Vec3> {
        match self {
            EnvField::Uniform { field } => Ok(*field),
            EnvField::DipoleSources { sources } => crate::magnetics::superpose_field(sources, p),
        }
    }
}

/// Solved configuration: ball centres and unit dipole directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainShape {
    pub positions: Vec<Vec3>,
    pub dipole_dirs: Vec<Vec3>,
}

impl ChainShape {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn tip_position(&self) -> Vec3 {
        *self.positions.last().expect("empty chain")
    }

    /// Approach direction as the last ball's dipole.
    pub fn tip_tangent(&self) -> Vec3 {
        *self.dipole_dirs.last().expect("empty chain")
    }

    /// Approach direction as the line through the two distal ball centres,
    /// the estimate available from camera tracking.
    pub fn tip_tangent_twoball(&self) -> Result<Vec3> {
        let n = self.len();
        if n < 2 {
            return Err(Error::InvalidArgument("two-ball tangent needs n >= 2".into()));
        }
        Ok((self.positions[n - 1] - self.positions[n - 2]).normalize())
    }

    /// Link unit vectors `(p_{i+1} − p_i)/|·|`.
    pub fn links(&self) -> Vec<Vec3> {
        self.positions
            .windows(2)
            .map(|w| (w[1] - w[0]).normalize())
            .collect()
    }

    /// Smallest distance between non-adjacent ball centres.
    pub fn min_nonadjacent_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.len() {
            for j in i + 2..self.len() {
                best = best.min((self.positions[j] - self.positions[i]).norm());
            }
        }
        best
    }

    /// Largest `| |p_{i+1} − p_i| − d |`.
    pub fn max_contact_error(&self, d: f64) -> f64 {
        self.positions
            .windows(2)
            .map(|w| ((w[1] - w[0]).norm() - d).abs())
            .fold(0.0, f64::max)
    }

    /// Adjust a warm start to `n` balls: extra balls continue straight along
    /// the last link, surplus balls are dropped.
    pub fn resized(&self, n: usize, config: &ChainConfig) -> ChainShape {
        let mut shape = self.clone();
        if n <= shape.len() {
            shape.positions.truncate(n);
            shape.dipole_dirs.truncate(n);
            return shape;
        }
        if shape.is_empty() {
            return config.straight_shape().resized(n, config);
        }
        let d = config.ball.diameter;
        while shape.len() < n {
            let k = shape.len();
            let dir = if k >= 2 {
                (shape.positions[k - 1] - shape.positions[k - 2]).normalize()
            } else {
                config.base_tangent
            };
            let next = shape.positions[k - 1] + d * dir;
            shape.positions.push(next);
            shape.dipole_dirs.push(dir);
        }
        shape
    }
}

/// Numerical settings of the equilibrium solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Convergence threshold on the projected gradient (J/rad).
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    /// Augmented-Lagrangian weight on non-adjacent overlap (J/m²).
    pub penalty_weight: f64,
    /// Perturbed restarts tried when a solve fails.
    pub multistart_count: usize,
    /// Seed of the restart perturbation sequence.
    pub seed: u64,
    /// Probe the converged point with a small perturbation and keep any
    /// lower-energy minimum found.
    pub saddle_probe: bool,
    pub warm_start: Option<ChainShape>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gradient_tolerance: 1e-12,
            max_iterations: 20_000,
            penalty_weight: 1e5,
            multistart_count: 4,
            seed: 0,
            saddle_probe: true,
            warm_start: None,
        }
    }
}

impl SolverConfig {
    pub fn warm(mut self, shape: Option<ChainShape>) -> Self {
        self.warm_start = shape;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > 0.0) || !(self.penalty_weight > 0.0) || self.max_iterations == 0 {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        Ok(())
    }
}

pub use crate::magnetics::alignment_angle;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_ball_is_eighth_inch_n52() {
        let b = BallSpec::default();
        assert!((b.moment - 0.0193).abs() < 1e-4);
        assert!((b.mass - 0.126e-3).abs() < 2e-6, "{}", b.mass);
    }

    #[test]
    fn nominal_sleeve_second_moment() {
        let s = SleeveSpec::nominal();
        assert!((s.second_moment - 3.3903e-12).abs() < 1e-15);
    }

    #[test]
    fn resize_extends_along_last_link() {
        let cfg = ChainConfig::new(3);
        let mut shape = cfg.straight_shape();
        shape.positions[2] = shape.positions[1] + cfg.ball.diameter * Vec3::y();
        let grown = shape.resized(5, &cfg);
        assert_eq!(grown.len(), 5);
        let d = cfg.ball.diameter;
        assert!((grown.positions[4] - (shape.positions[2] + 2.0 * d * Vec3::y())).norm() < 1e-15);
        assert_eq!(grown.resized(2, &cfg).len(), 2);
    }

    #[test]
    fn shape_json_layout() {
        let shape = ChainConfig::new(2).straight_shape();
        let json = serde_json::to_value(&shape).unwrap();
        assert_eq!(json["positions"][1][0].as_f64().unwrap(), 3.175e-3);
        assert_eq!(json["dipole_dirs"][0], serde_json::json!([1.0, 0.0, 0.0]));
    }

    #[test]
    fn env_field_tagging() {
        let env = EnvField::uniform(Vec3::new(0.0, 0.023, 0.0));
        let json = serde_json::to_string(&env).unwrap();
        assert!(json.contains("\"mode\":\"uniform\""));
        let back: EnvField = serde_json::from_str(&json).unwrap();
        assert_eq!(back, env);
    }
}
