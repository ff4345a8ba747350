//! Limited-memory BFGS with a backtracking line search.
//!
//! The objective may return `+∞` for points outside its domain; the line
//! search then backtracks.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct MinimizerOptions {
    pub max_iterations: usize,
    /// Stop once the Euclidean gradient norm falls below this.
    pub gradient_tolerance: f64,
    /// Number of correction pairs kept.
    pub memory: usize,
    /// Largest coordinate change allowed in a single step.
    pub max_step: f64,
}

impl Default for MinimizerOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            gradient_tolerance: 1e-10,
            memory: 12,
            max_step: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIterations,
    /// The caller's interrupt predicate fired.
    Interrupted,
    /// No acceptable step along a descent direction.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub status: Status,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimise `objective` from `x0`.
///
/// `interrupt` is consulted after every accepted step and may stop the
/// iteration early (the chart solver uses it to re-centre coordinates).
pub fn minimize<F, I>(x0: Vec<f64>, mut objective: F, opts: &MinimizerOptions, interrupt: I) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
    I: Fn(&[f64]) -> bool,
{
    let mut x = x0;
    let (mut f, mut g) = objective(&x);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;

    let finish = |x: Vec<f64>, f: f64, g: Vec<f64>, iterations, status| {
        let gradient_norm = norm(&g);
        Minimum { x, value: f, gradient: g, gradient_norm, iterations, status }
    };

    if !f.is_finite() {
        return finish(x, f, g, 0, Status::Stalled);
    }

    loop {
        if norm(&g) <= opts.gradient_tolerance {
            return finish(x, f, g, iterations, Status::Converged);
        }
        if iterations >= opts.max_iterations {
            return finish(x, f, g, iterations, Status::MaxIterations);
        }

        let mut p = two_loop(&g, &history);
        let mut slope = dot(&g, &p);
        if !(slope < 0.0) {
            history.clear();
            p = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let biggest = p.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut alpha = if biggest > opts.max_step { opts.max_step / biggest } else { 1.0 };
        let gnorm = norm(&g);
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| xi + alpha * pi).collect();
            let (ft, gt) = objective(&trial);
            if ft.is_finite() {
                let armijo = ft <= f + 1e-4 * alpha * slope;
                // decrease lost in rounding: accept if the gradient shrinks
                let flat = (alpha * slope).abs() < 1e-13 * f.abs().max(1e-300)
                    && ft <= f + 1e-14 * f.abs()
                    && norm(&gt) < gnorm;
                if armijo || flat {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            alpha *= 0.5;
        }

        let Some((xn, fnew, gn)) = accepted else {
            if !history.is_empty() {
                // retry from steepest descent before giving up
                history.clear();
                continue;
            }
            return finish(x, f, g, iterations, Status::Stalled);
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        f = fnew;
        g = gn;
        iterations += 1;

        if interrupt(&x) {
            return finish(x, f, g, iterations, Status::Interrupted);
        }
    }
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
