//! Box-constrained quasi-Newton descent with finite-difference gradients.
//!
//! The objective is only ever evaluated at points inside the box. A further
//! feasibility map `fix` may move a point; the squared displacement is added
//! as a penalty so the merit function stays continuous.

use nalgebra::{DMatrix, DVector};

/// Relative central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Value assigned to failed evaluations.
pub const LARGE: f64 = 1e12;

const ARMIJO: f64 = 1e-4;
const MAX_STEP: f64 = 1.0;
const PENALTY: f64 = 1e3;
/// Relative decrease below which an iteration counts as stalled.
const FTOL: f64 = 1e-9;
/// Relative decrease over `WINDOW` iterations below which the search stops.
const FTOL_WINDOW: f64 = 1e-7;
const WINDOW: usize = 10;

pub(crate) struct Problem<'a> {
    pub f: &'a dyn Fn(&[f64]) -> f64,
    pub fix: &'a dyn Fn(&mut [f64]),
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub active: Vec<bool>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Limits {
    pub max_evals: usize,
    pub max_iter: usize,
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub n_evals: usize,
    pub iterations: usize,
    pub converged: bool,
    pub reason: &'static str,
}

struct Merit<'p, 'a> {
    p: &'p Problem<'a>,
    evals: usize,
}

impl Merit<'_, '_> {
    fn clip(&self, x: &mut [f64]) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.p.lo[i], self.p.hi[i]);
        }
    }

    /// Feasible version of `x` with its penalty.
    fn feasible(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let mut y = x.to_vec();
        self.clip(&mut y);
        let before = y.clone();
        (self.p.fix)(&mut y);
        let pen: f64 = before.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
        (y, PENALTY * pen)
    }

    fn eval(&mut self, x: &[f64]) -> f64 {
        let (y, pen) = self.feasible(x);
        self.evals += 1;
        let v = (self.p.f)(&y);
        if v.is_finite() {
            v + pen
        } else {
            LARGE + pen
        }
    }

    fn grad(&mut self, x: &[f64], fx: f64) -> DVector<f64> {
        let n = x.len();
        let mut g = DVector::zeros(n);
        let mut xp = x.to_vec();
        for i in 0..n {
            if !self.p.active[i] {
                continue;
            }
            let h = FD_STEP * x[i].abs().max(1.0);
            let up = x[i] + h <= self.p.hi[i];
            let down = x[i] - h >= self.p.lo[i];
            g[i] = match (up, down) {
                (true, true) => {
                    xp[i] = x[i] + h;
                    let a = self.eval(&xp);
                    xp[i] = x[i] - h;
                    let b = self.eval(&xp);
                    (a - b) / (2.0 * h)
                }
                (true, false) => {
                    xp[i] = x[i] + h;
                    (self.eval(&xp) - fx) / h
                }
                (false, true) => {
                    xp[i] = x[i] - h;
                    (fx - self.eval(&xp)) / h
                }
                (false, false) => 0.0,
            };
            xp[i] = x[i];
        }
        g
    }
}

/// Coordinates that are free to move: active and not pinned at a bound by
/// the gradient.
fn free_set(p: &Problem<'_>, x: &[f64], g: &DVector<f64>) -> Vec<bool> {
    (0..x.len())
        .map(|i| {
            p.active[i]
                && !(x[i] <= p.lo[i] && g[i] > 0.0)
                && !(x[i] >= p.hi[i] && g[i] < 0.0)
        })
        .collect()
}

fn projected_gradient_norm(p: &Problem<'_>, x: &[f64], g: &DVector<f64>) -> f64 {
    (0..x.len())
        .filter(|&i| p.active[i])
        .map(|i| ((x[i] - g[i]).clamp(p.lo[i], p.hi[i]) - x[i]).abs())
        .fold(0.0, f64::max)
}

pub(crate) fn minimize(p: &Problem<'_>, x0: &[f64], limits: Limits) -> Outcome {
    let n = x0.len();
    let mut m = Merit { p, evals: 0 };
    let (mut x, _) = m.feasible(x0);
    let mut fx = m.eval(&x);
    let initial_value = fx;
    let mut g = m.grad(&x, fx);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut stalls = 0;
    let mut history = vec![fx];
    let mut iterations = 0;
    let finish = |x: Vec<f64>, value, evals, iterations, converged, reason| Outcome {
        x,
        value,
        initial_value,
        n_evals: evals,
        iterations,
        converged,
        reason,
    };
    loop {
        if projected_gradient_norm(p, &x, &g) < limits.tol {
            return finish(x, fx, m.evals, iterations, true, "projected gradient below tolerance");
        }
        if m.evals >= limits.max_evals {
            return finish(x, fx, m.evals, iterations, false, "evaluation budget exhausted");
        }
        if iterations >= limits.max_iter {
            return finish(x, fx, m.evals, iterations, false, "iteration limit reached");
        }
        iterations += 1;
        let free = free_set(p, &x, &g);
        let mut d = DVector::zeros(n);
        for i in 0..n {
            if !free[i] {
                continue;
            }
            for j in 0..n {
                if free[j] {
                    d[i] -= h[(i, j)] * g[j];
                }
            }
        }
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            h = DMatrix::identity(n, n);
            fresh = true;
            d = DVector::from_iterator(n, (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }));
            slope = g.dot(&d);
            if !(slope < 0.0) {
                return finish(x, fx, m.evals, iterations, true, "no descent direction");
            }
        }
        let big = d.amax();
        if big > MAX_STEP {
            d *= MAX_STEP / big;
        }
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-10 && m.evals < limits.max_evals {
            let trial: Vec<f64> = (0..n).map(|i| x[i] + t * d[i]).collect();
            let (trial, _) = m.feasible(&trial);
            let ft = m.eval(&trial);
            let moved: f64 = (0..n).map(|i| g[i] * (trial[i] - x[i])).sum();
            if ft <= fx + ARMIJO * moved.min(0.0) && ft <= fx {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if !fresh {
                h = DMatrix::identity(n, n);
                fresh = true;
                continue;
            }
            return finish(x, fx, m.evals, iterations, true, "line search stalled");
        };
        let gn = m.grad(&xn, fnew);
        let s = DVector::from_iterator(n, (0..n).map(|i| xn[i] - x[i]));
        let y = DVector::from_iterator(n, (0..n).map(|i| if free[i] { gn[i] - g[i] } else { 0.0 }));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                h *= sy / y.norm_squared();
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
        let improvement = fx - fnew;
        x = xn;
        fx = fnew;
        g = gn;
        history.push(fx);
        if history.len() > WINDOW && history[history.len() - 1 - WINDOW] - fx <= FTOL_WINDOW * (1.0 + fx.abs()) {
            return finish(x, fx, m.evals, iterations, true, "objective stationary");
        }
        if improvement <= FTOL * (1.0 + fx.abs()) {
            stalls += 1;
            if stalls >= 3 {
                return finish(x, fx, m.evals, iterations, true, "objective stationary");
            }
        } else {
            stalls = 0;
        }
    }
}
