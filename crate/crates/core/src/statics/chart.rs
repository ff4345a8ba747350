//! Local coordinates on the product of unit spheres.
//!
//! Every free unit vector `u` gets two coordinates `v = (a, b)` through the
//! exponential map around a centre `c` with tangent basis `(e1, e2)`:
//!
//! ```text
//! u(v) = cos|v| c + sinc|v| (a e1 + b e2)
//! ```
//!
//! The map is smooth for `|v| < π`; the solver re-centres long before that.

use super::{ChainConfig, ChainShape};
use crate::magnetics::Vec3;

#[derive(Debug, Clone, Copy)]
struct Frame {
    centre: Vec3,
    e1: Vec3,
    e2: Vec3,
}

impl Frame {
    fn at(centre: Vec3) -> Self {
        let c = centre.normalize();
        let helper = if c.x.abs() <= c.y.abs() && c.x.abs() <= c.z.abs() {
            Vec3::x()
        } else if c.y.abs() <= c.z.abs() {
            Vec3::y()
        } else {
            Vec3::z()
        };
        let e1 = c.cross(&helper).normalize();
        let e2 = c.cross(&e1);
        Self { centre: c, e1, e2 }
    }

    fn point(&self, a: f64, b: f64) -> Vec3 {
        let s = a.hypot(b);
        s.cos() * self.centre + sinc(s) * (a * self.e1 + b * self.e2)
    }

    /// `(∂u/∂a, ∂u/∂b)`
    fn tangents(&self, a: f64, b: f64) -> (Vec3, Vec3) {
        let s = a.hypot(b);
        let sc = sinc(s);
        let h = sinc_slope_over_s(s);
        let w = a * self.e1 + b * self.e2;
        let da = -sc * a * self.centre + sc * self.e1 + h * a * w;
        let db = -sc * b * self.centre + sc * self.e2 + h * b * w;
        (da, db)
    }
}

fn sinc(s: f64) -> f64 {
    if s < 1e-4 {
        1.0 - s * s / 6.0
    } else {
        s.sin() / s
    }
}

/// `sinc'(s) / s = (s cos s − sin s) / s³`
fn sinc_slope_over_s(s: f64) -> f64 {
    if s < 1e-2 {
        let s2 = s * s;
        -1.0 / 3.0 + s2 / 30.0 - s2 * s2 / 840.0
    } else {
        (s * s.cos() - s.sin()) / (s * s * s)
    }
}

/// Reduced coordinates of a chain: two per free link, two per dipole.
///
/// Layout: links `t_2 … t_{n−1}` (the first link is clamped), then dipoles
/// `m̂_1 … m̂_n`.
#[derive(Debug, Clone)]
pub struct ShapeChart {
    base_position: Vec3,
    base_tangent: Vec3,
    diameter: f64,
    links: Vec<Frame>,
    dipoles: Vec<Frame>,
}

impl ShapeChart {
    /// Chart centred on `shape`; `shape` sits at the origin of the
    /// coordinates. The first link is taken from `config`, not from `shape`.
    pub fn centred_at(config: &ChainConfig, shape: &ChainShape) -> Self {
        let links = shape.links();
        Self {
            base_position: config.base_position,
            base_tangent: config.base_tangent,
            diameter: config.ball.diameter,
            links: links.iter().skip(1).map(|t| Frame::at(*t)).collect(),
            dipoles: shape.dipole_dirs.iter().map(|m| Frame::at(*m)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        2 * (self.links.len() + self.dipoles.len())
    }

    pub fn balls(&self) -> usize {
        self.dipoles.len()
    }

    fn dipole_offset(&self) -> usize {
        2 * self.links.len()
    }

    /// Link unit vectors (first one clamped) and dipole directions at `x`.
    pub fn unit_vectors(&self, x: &[f64]) -> (Vec<Vec3>, Vec<Vec3>) {
        debug_assert_eq!(x.len(), self.dim());
        let mut links = Vec::with_capacity(self.links.len() + 1);
        if self.balls() >= 2 {
            links.push(self.base_tangent);
        }
        for (k, f) in self.links.iter().enumerate() {
            links.push(f.point(x[2 * k], x[2 * k + 1]));
        }
        let off = self.dipole_offset();
        let dipoles = self
            .dipoles
            .iter()
            .enumerate()
            .map(|(k, f)| f.point(x[off + 2 * k], x[off + 2 * k + 1]))
            .collect();
        (links, dipoles)
    }

    pub fn shape(&self, x: &[f64]) -> ChainShape {
        let (links, dipoles) = self.unit_vectors(x);
        ChainShape {
            positions: positions_from_links(self.base_position, self.diameter, &links),
            dipole_dirs: dipoles,
        }
    }

    /// Chain rule from ambient gradients (w.r.t. every link including the
    /// clamped one, and every dipole) to chart coordinates.
    pub fn pullback(&self, x: &[f64], grad_links: &[Vec3], grad_dipoles: &[Vec3]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        for (k, f) in self.links.iter().enumerate() {
            let (da, db) = f.tangents(x[2 * k], x[2 * k + 1]);
            let gl = &grad_links[k + 1];
            g[2 * k] = gl.dot(&da);
            g[2 * k + 1] = gl.dot(&db);
        }
        let off = self.dipole_offset();
        for (k, f) in self.dipoles.iter().enumerate() {
            let (da, db) = f.tangents(x[off + 2 * k], x[off + 2 * k + 1]);
            g[off + 2 * k] = grad_dipoles[k].dot(&da);
            g[off + 2 * k + 1] = grad_dipoles[k].dot(&db);
        }
        g
    }

    /// Largest geodesic offset of any unit vector from its chart centre.
    pub fn max_offset(x: &[f64]) -> f64 {
        x.chunks(2).map(|c| c[0].hypot(c[1])).fold(0.0, f64::max)
    }
}

pub(crate) fn positions_from_links(base: Vec3, d: f64, links: &[Vec3]) -> Vec<Vec3> {
    let mut p = Vec::with_capacity(links.len() + 1);
    p.push(base);
    for t in links {
        let last = *p.last().unwrap();
        p.push(last + d * t);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_reproduces_centre_shape() {
        let cfg = ChainConfig::new(4);
        let mut shape = cfg.straight_shape();
        shape.dipole_dirs[2] = Vec3::new(0.0, 1.0, 1.0).normalize();
        let chart = ShapeChart::centred_at(&cfg, &shape);
        assert_eq!(chart.dim(), 4 * 4 - 4);
        let back = chart.shape(&vec![0.0; chart.dim()]);
        for (a, b) in back.dipole_dirs.iter().zip(&shape.dipole_dirs) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn single_ball_has_only_a_dipole() {
        let cfg = ChainConfig::new(1);
        let chart = ShapeChart::centred_at(&cfg, &cfg.straight_shape());
        assert_eq!(chart.dim(), 2);
        let (links, dips) = chart.unit_vectors(&[0.3, 0.0]);
        assert!(links.is_empty());
        assert!((dips[0].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tangents_match_finite_differences() {
        let f = Frame::at(Vec3::new(0.2, -0.5, 0.8));
        for &(a, b) in &[(0.0, 0.0), (1e-3, -2e-3), (0.4, 0.9), (-1.2, 0.3)] {
            let (da, db) = f.tangents(a, b);
            let h = 1e-6;
            let fa = (f.point(a + h, b) - f.point(a - h, b)) / (2.0 * h);
            let fb = (f.point(a, b + h) - f.point(a, b - h)) / (2.0 * h);
            assert!((fa - da).norm() < 1e-8, "{a} {b}");
            assert!((fb - db).norm() < 1e-8, "{a} {b}");
            assert!((f.point(a, b).norm() - 1.0).abs() < 1e-14);
        }
    }
}
