//! Limited-memory BFGS minimization with a strong-Wolfe line search.
//!
//! The objective callback returns the value and gradient at a point. A failed
//! evaluation or a non-finite value during the line search counts as `+inf`
//! so the search backtracks out of invalid regions.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the max-norm of the gradient falls to this level.
    pub tol_g: f64,
    pub max_line_search: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 10_000,
            tol_g: 1e-6,
            max_line_search: 30,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub message: Option<String>,
    /// (iteration, value, gradient max-norm) after each accepted step.
    pub trace: Vec<(usize, f64, f64)>,
}

pub fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone)]
struct Point {
    alpha: f64,
    f: f64,
    /// Directional derivative; NaN when the evaluation failed.
    d: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

struct LineSearch<'a, F> {
    obj: &'a mut F,
    x0: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    d0: f64,
    opts: &'a LbfgsOptions,
    evals: usize,
}

impl<F> LineSearch<'_, F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&mut self, alpha: f64) -> Point {
        self.evals += 1;
        let x: Vec<f64> = self
            .x0
            .iter()
            .zip(self.dir)
            .map(|(a, b)| a + alpha * b)
            .collect();
        match (self.obj)(&x) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => {
                let d = dot(&g, self.dir);
                Point { alpha, f, d, x, g }
            }
            _ => Point {
                alpha,
                f: f64::INFINITY,
                d: f64::NAN,
                x,
                g: Vec::new(),
            },
        }
    }

    fn armijo(&self, p: &Point) -> bool {
        p.f <= self.f0 + self.opts.c1 * p.alpha * self.d0
    }

    fn curvature(&self, p: &Point) -> bool {
        p.d.abs() <= -self.opts.c2 * self.d0
    }

    /// Returns an accepted point, or the best Armijo point if the strong
    /// conditions could not be met within the evaluation budget.
    fn run(&mut self, alpha0: f64) -> Option<Point> {
        let start = Point {
            alpha: 0.0,
            f: self.f0,
            d: self.d0,
            x: self.x0.to_vec(),
            g: Vec::new(),
        };
        let mut prev = start;
        let mut alpha = alpha0;
        let mut best: Option<Point> = None;
        for i in 0..self.opts.max_line_search {
            let cur = self.eval(alpha);
            if !self.armijo(&cur) || (i > 0 && cur.f >= prev.f) {
                return self.zoom(prev, cur, best);
            }
            if self.curvature(&cur) {
                return Some(cur);
            }
            best = Some(cur.clone());
            if cur.d >= 0.0 {
                return self.zoom(cur, prev, best);
            }
            prev = cur;
            alpha *= 2.0;
        }
        best
    }

    fn zoom(&mut self, mut lo: Point, mut hi: Point, mut best: Option<Point>) -> Option<Point> {
        while self.evals < self.opts.max_line_search {
            let width = hi.alpha - lo.alpha;
            if width.abs() < 1e-16 * lo.alpha.abs().max(1e-16) {
                break;
            }
            let trial = interpolate(&lo, &hi);
            let cur = self.eval(trial);
            if !self.armijo(&cur) || cur.f >= lo.f {
                hi = cur;
            } else {
                if self.curvature(&cur) {
                    return Some(cur);
                }
                if best.as_ref().is_none_or(|b| cur.f < b.f) {
                    best = Some(cur.clone());
                }
                if cur.d * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = cur;
            }
        }
        best.or_else(|| (lo.alpha > 0.0).then_some(lo))
    }
}

/// Safeguarded cubic interpolation between two bracket ends; bisection when
/// derivative information is missing or the cubic is ill-posed.
fn interpolate(lo: &Point, hi: &Point) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let mid = 0.5 * (a + b);
    let lower = a.min(b) + 0.1 * (a - b).abs();
    let upper = a.max(b) - 0.1 * (a - b).abs();
    if !hi.f.is_finite() || !hi.d.is_finite() || !lo.d.is_finite() {
        return mid;
    }
    let d1 = lo.d + hi.d - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.d * hi.d;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let denom = hi.d - lo.d + 2.0 * d2;
    if denom == 0.0 {
        return mid;
    }
    let c = b - (b - a) * (hi.d + d2 - d1) / denom;
    if c.is_finite() && c > lower && c < upper {
        c
    } else {
        mid
    }
}

/// Minimizes `obj` from `x0`. Errors only when the starting point itself
/// cannot be evaluated.
pub fn minimize<F>(mut obj: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (mut f, mut g) = obj(&x0)?;
    if !f.is_finite() {
        return Err(Error::NonFinite {
            context: "objective at starting point".into(),
        });
    }
    if let Some(index) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    let mut x = x0;
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut trace = vec![(0, f, max_norm(&g))];
    let mut iter = 0;
    let mut message = None;

    while max_norm(&g) > opts.tol_g {
        if iter >= opts.max_iter {
            message = Some(format!("reached max_iter = {}", opts.max_iter));
            break;
        }
        let mut accepted = None;
        for attempt in 0..2 {
            let steepest = attempt == 1 || memory.is_empty();
            if attempt == 1 {
                memory.clear();
            }
            let dir = if steepest {
                g.iter().map(|v| -v).collect()
            } else {
                two_loop(&g, &memory)
            };
            let mut d0 = dot(&g, &dir);
            let dir = if d0 >= 0.0 {
                // not a descent direction; fall back to steepest descent
                memory.clear();
                let sd: Vec<f64> = g.iter().map(|v| -v).collect();
                d0 = dot(&g, &sd);
                sd
            } else {
                dir
            };
            let alpha0 = if memory.is_empty() {
                (1.0 / dir.iter().map(|v| v * v).sum::<f64>().sqrt()).min(1.0)
            } else {
                1.0
            };
            let mut ls = LineSearch {
                obj: &mut obj,
                x0: &x,
                dir: &dir,
                f0: f,
                d0,
                opts,
                evals: 0,
            };
            if let Some(p) = ls.run(alpha0) {
                accepted = Some(p);
                break;
            }
            if steepest {
                break;
            }
        }
        let Some(p) = accepted else {
            message = Some(format!("line search failed at iteration {iter}"));
            break;
        };
        let s: Vec<f64> = p.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        let stalled = p.f >= f && max_norm(&p.g) >= max_norm(&g);
        x = p.x;
        f = p.f;
        g = p.g;
        iter += 1;
        trace.push((iter, f, max_norm(&g)));
        if stalled {
            message = Some(format!("no progress at iteration {iter}"));
            break;
        }
    }
    let converged = max_norm(&g) <= opts.tol_g;
    if converged {
        message = None;
    }
    Ok(LbfgsOutcome {
        x,
        f,
        g,
        iterations: iter,
        converged,
        message,
        trace,
    })
}

fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}
