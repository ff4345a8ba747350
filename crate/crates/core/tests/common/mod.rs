//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls the production solver; energies come from the public
//! component functions only.
#![allow(dead_code)]

use ballchain::statics::{total_energy, ChainConfig, ChainShape, EnvField, ShapeChart};
use ballchain::Vec3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        if v.norm() > 1e-3 {
            return v.normalize();
        }
    }
}

/// Unit vector at most `max_angle` from `axis`.
pub fn random_near<R: Rng>(rng: &mut R, axis: &Vec3, max_angle: f64) -> Vec3 {
    let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = axis.cross(&helper).normalize();
    let e2 = axis.cross(&e1);
    let theta = rng.random_range(0.0..max_angle);
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    theta.cos() * axis + theta.sin() * (phi.cos() * e1 + phi.sin() * e2)
}

pub fn shape_from_links(config: &ChainConfig, links: &[Vec3], dipoles: Vec<Vec3>) -> ChainShape {
    let mut positions = vec![config.base_position];
    for t in links {
        let last = *positions.last().unwrap();
        positions.push(last + config.ball.diameter * t);
    }
    ChainShape { positions, dipole_dirs: dipoles }
}

/// Random contact-respecting shape with bends below `max_bend` and no
/// non-adjacent overlap.
pub fn random_shape<R: Rng>(config: &ChainConfig, rng: &mut R, max_bend: f64) -> ChainShape {
    loop {
        let mut links = Vec::new();
        if config.n > 1 {
            links.push(config.base_tangent.normalize());
        }
        while links.len() + 1 < config.n {
            let prev = *links.last().unwrap();
            links.push(random_near(rng, &prev, max_bend));
        }
        let dipoles = (0..config.n).map(|_| random_unit(rng)).collect();
        let shape = shape_from_links(config, &links, dipoles);
        if config.n < 3 || shape.min_nonadjacent_distance() > 1.05 * config.ball.diameter {
            return shape;
        }
    }
}

pub fn energy(shape: &ChainShape, config: &ChainConfig, env: &EnvField) -> f64 {
    total_energy(shape, config, env).map(|p| p.total()).unwrap_or(f64::INFINITY)
}

/// Central differences of the energy through the chart.
pub fn fd_gradient(config: &ChainConfig, env: &EnvField, chart: &ShapeChart, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += h;
            xm[k] -= h;
            (energy(&chart.shape(&xp), config, env) - energy(&chart.shape(&xm), config, env)) / (2.0 * h)
        })
        .collect()
}

/// Plain Nelder–Mead with adaptive coefficients.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], step: f64, max_evals: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = f(&x);
        simplex.push((x, v));
    }
    let mut evals = n + 1;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        let size = simplex.iter().skip(1).map(|(x, _)| dist(x, &simplex[0].0)).fold(0.0, f64::max);
        if spread.abs() <= 1e-18 * simplex[0].1.abs().max(1e-30) && size < 1e-12 {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|k| simplex[..n].iter().map(|(x, _)| x[k]).sum::<f64>() / nf).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|k| centroid[k] + t * (simplex[n].0[k] - centroid[k])).collect() };
        let xr = along(-alpha);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(-alpha * gamma);
            let fe = f(&xe);
            evals += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(-alpha * rho);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(rho);
                let fc = f(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    s.0 = (0..n).map(|k| best[k] + sigma * (s.0[k] - best[k])).collect();
                    s.1 = f(&s.0);
                }
                evals += n;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Roughly uniform points on the sphere.
pub fn fibonacci_sphere(k: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..k)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / k as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Gnomonic chart around a set of unit vectors: `u = normalise(c + a e1 + b e2)`.
struct Gnomonic {
    frames: Vec<(Vec3, Vec3, Vec3)>,
}

impl Gnomonic {
    fn new(centres: &[Vec3]) -> Self {
        let frames = centres
            .iter()
            .map(|c| {
                let helper = if c.x.abs() < 0.6 { Vec3::x() } else { Vec3::z() };
                let e1 = c.cross(&helper).normalize();
                (*c, e1, c.cross(&e1))
            })
            .collect();
        Self { frames }
    }

    fn units(&self, x: &[f64]) -> Vec<Vec3> {
        self.frames
            .iter()
            .enumerate()
            .map(|(k, (c, e1, e2))| (c + x[2 * k] * e1 + x[2 * k + 1] * e2).normalize())
            .collect()
    }
}

/// Free unit vectors are interior links `t_2..t_{n−1}` followed by all
/// dipoles; rebuild the shape from them.
fn assemble(config: &ChainConfig, units: &[Vec3]) -> ChainShape {
    let n = config.n;
    let free_links = n.saturating_sub(2);
    let mut links = Vec::new();
    if n > 1 {
        links.push(config.base_tangent.normalize());
    }
    links.extend_from_slice(&units[..free_links]);
    shape_from_links(config, &links, units[free_links..].to_vec())
}

fn constrained_energy(config: &ChainConfig, env: &EnvField, units: &[Vec3]) -> f64 {
    let shape = assemble(config, units);
    if config.n >= 3 && shape.min_nonadjacent_distance() < config.ball.diameter {
        return f64::INFINITY;
    }
    energy(&shape, config, env)
}

/// Global minimum by exhaustive grid over every free unit vector followed by
/// repeated Nelder–Mead polishing of the best grid cells.
pub fn brute_force_minimum(config: &ChainConfig, env: &EnvField, grid: usize, seeds: usize) -> (f64, ChainShape) {
    let free = config.n.saturating_sub(2) + config.n;
    let points = fibonacci_sphere(grid);
    let mut idx = vec![0usize; free];
    let mut best: Vec<(f64, Vec<usize>)> = Vec::new();
    loop {
        let units: Vec<Vec3> = idx.iter().map(|&i| points[i]).collect();
        let e = constrained_energy(config, env, &units);
        if e.is_finite() && (best.len() < seeds || e < best.last().unwrap().0) {
            best.push((e, idx.clone()));
            best.sort_by(|a, b| a.0.total_cmp(&b.0));
            best.truncate(seeds);
        }
        let mut k = 0;
        loop {
            if k == free {
                break;
            }
            idx[k] += 1;
            if idx[k] < grid {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == free {
            break;
        }
    }

    let mut winner: Option<(f64, Vec<Vec3>)> = None;
    for (_, cell) in best {
        let mut centres: Vec<Vec3> = cell.iter().map(|&i| points[i]).collect();
        let mut value = constrained_energy(config, env, &centres);
        let mut step = 0.3;
        for _ in 0..60 {
            let chart = Gnomonic::new(&centres);
            let (x, v) = nelder_mead(
                |x| constrained_energy(config, env, &chart.units(x)),
                &vec![0.0; 2 * free],
                step,
                20_000,
            );
            let improved = value - v;
            centres = chart.units(&x);
            value = v;
            step = (step * 0.5).max(1e-5);
            if improved <= 1e-17 * value.abs() && step <= 1e-4 {
                break;
            }
        }
        if winner.as_ref().is_none_or(|w| value < w.0) {
            winner = Some((value, centres));
        }
    }
    let (value, units) = winner.expect("grid produced at least one feasible cell");
    (value, assemble(config, &units))
}
