//! Augmented-Lagrangian solver for `min f(z)` s.t. `c(z) ≥ 0`, `lo ≤ z ≤ hi`,
//! with a projected L-BFGS inner solver for the bound-constrained subproblems.

use std::collections::VecDeque;

/// One evaluation of the objective, constraints and their first derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct NlpEval {
    pub f: f64,
    pub grad: Vec<f64>,
    pub c: Vec<f64>,
    /// Row `i` is `∇c_i`.
    pub jac: Vec<Vec<f64>>,
}

pub trait Nlp {
    fn dim(&self) -> usize;
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);
    /// An `Err` marks the point as not evaluable; the step is rejected.
    fn eval(&self, z: &[f64]) -> Result<NlpEval, String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    MaxIter,
    Infeasible,
    EvalFailure,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Optimal => "Optimal",
            Status::MaxIter => "MaxIter",
            Status::Infeasible => "Infeasible",
            Status::EvalFailure => "EvalFailure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlOptions {
    /// KKT tolerance on feasibility, complementarity and stationarity.
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub rho0: f64,
    pub rho_max: f64,
    pub memory: usize,
}

impl Default for AlOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_outer: 40, max_inner: 400, rho0: 10.0, rho_max: 1e12, memory: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlResult {
    pub z: Vec<f64>,
    pub status: Status,
    /// Outer iterations.
    pub iterations: usize,
    pub inner_iterations: usize,
    pub f: f64,
    pub c: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub violation: f64,
    /// Merit value at the end of each outer iteration, under that
    /// iteration's multipliers and penalty.
    pub merit_history: Vec<f64>,
}

fn project(z: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in z.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `|P(z − g) − z|∞`.
fn projected_gradient(z: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    z.iter().zip(g).zip(lo.iter().zip(hi)).fold(0.0, |m, ((&zi, &gi), (&l, &h))| m.max(((zi - gi).clamp(l, h) - zi).abs()))
}

fn violation(c: &[f64]) -> f64 {
    c.iter().fold(0.0, |m, &ci| m.max(-ci))
}

struct Merit {
    lambda: Vec<f64>,
    rho: f64,
}

impl Merit {
    fn value(&self, e: &NlpEval) -> f64 {
        let pen: f64 = e
            .c
            .iter()
            .zip(&self.lambda)
            .map(|(&c, &l)| {
                let s = (l - self.rho * c).max(0.0);
                (s * s - l * l) / (2.0 * self.rho)
            })
            .sum();
        e.f + pen
    }

    fn grad(&self, e: &NlpEval) -> Vec<f64> {
        let mut g = e.grad.clone();
        for ((&c, &l), row) in e.c.iter().zip(&self.lambda).zip(&e.jac) {
            let s = (l - self.rho * c).max(0.0);
            if s != 0.0 {
                for (gi, ri) in g.iter_mut().zip(row) {
                    *gi -= s * ri;
                }
            }
        }
        g
    }
}

struct Inner {
    z: Vec<f64>,
    eval: NlpEval,
    iterations: usize,
}

/// Projected L-BFGS with Armijo backtracking along the projected path.
fn lbfgs_box(
    nlp: &dyn Nlp,
    merit: &Merit,
    start: Inner,
    lo: &[f64],
    hi: &[f64],
    tol: f64,
    opts: &AlOptions,
) -> Inner {
    let Inner { mut z, mut eval, .. } = start;
    let mut phi = merit.value(&eval);
    let mut g = merit.grad(&eval);
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut it = 0;
    while it < opts.max_inner && projected_gradient(&z, &g, lo, hi) > tol {
        it += 1;
        // variables held at an active bound
        let fixed: Vec<bool> = (0..z.len()).map(|i| (z[i] <= lo[i] && g[i] > 0.0) || (z[i] >= hi[i] && g[i] < 0.0)).collect();
        let mask = |v: &mut Vec<f64>| {
            for (vi, &f) in v.iter_mut().zip(&fixed) {
                if f {
                    *vi = 0.0;
                }
            }
        };
        let mut q = g.clone();
        mask(&mut q);
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = mem.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        mask(&mut d);
        if dot(&d, &g) >= 0.0 {
            mem.clear();
            d = g.iter().map(|v| -v).collect();
            mask(&mut d);
        }
        if mem.is_empty() {
            // first step: at most a unit move in the largest component
            let dn = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if dn > 1.0 {
                d.iter_mut().for_each(|v| *v /= dn);
            }
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut zt: Vec<f64> = z.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            project(&mut zt, lo, hi);
            let dz: Vec<f64> = zt.iter().zip(&z).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &dz);
            if decrease >= 0.0 && dz.iter().all(|v| *v == 0.0) {
                break;
            }
            if let Ok(et) = nlp.eval(&zt) {
                let pt = merit.value(&et);
                if pt.is_finite() && pt <= phi + 1e-4 * decrease {
                    accepted = Some((zt, et, pt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((zt, et, pt)) = accepted else {
            if mem.is_empty() {
                break;
            }
            mem.clear();
            continue;
        };
        let gt = merit.grad(&et);
        let s: Vec<f64> = zt.iter().zip(&z).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            mem.push_back((s, y, 1.0 / sy));
            if mem.len() > opts.memory {
                mem.pop_front();
            }
        }
        z = zt;
        eval = et;
        phi = pt;
        g = gt;
    }
    Inner { z, eval, iterations: it }
}

/// Runs the augmented-Lagrangian method from `z0` (projected onto the bounds).
pub fn minimize(nlp: &dyn Nlp, z0: &[f64], opts: &AlOptions) -> AlResult {
    let (lo, hi) = nlp.bounds();
    let mut z = z0.to_vec();
    project(&mut z, &lo, &hi);
    let eval = match nlp.eval(&z) {
        Ok(e) => e,
        Err(_) => {
            return AlResult {
                z,
                status: Status::EvalFailure,
                iterations: 0,
                inner_iterations: 0,
                f: f64::NAN,
                c: Vec::new(),
                multipliers: Vec::new(),
                violation: f64::NAN,
                merit_history: Vec::new(),
            }
        }
    };
    let m = eval.c.len();
    let mut merit = Merit { lambda: vec![0.0; m], rho: opts.rho0 };
    let mut cur = Inner { z, eval, iterations: 0 };
    let mut prev_viol = violation(&cur.eval.c);
    let mut inner_total = 0;
    let mut history = Vec::new();
    let mut status = Status::MaxIter;
    let mut outer = 0;
    while outer < opts.max_outer {
        outer += 1;
        let inner_tol = (0.1f64.powi(outer as i32)).max(0.1 * opts.tol);
        cur = lbfgs_box(nlp, &merit, cur, &lo, &hi, inner_tol, opts);
        inner_total += cur.iterations;
        history.push(merit.value(&cur.eval));
        let e = &cur.eval;
        let viol = violation(&e.c);
        let lambda: Vec<f64> = e.c.iter().zip(&merit.lambda).map(|(&c, &l)| (l - merit.rho * c).max(0.0)).collect();
        let stat = projected_gradient(&cur.z, &Merit { lambda: lambda.clone(), rho: merit.rho }.grad(e), &lo, &hi);
        let compl = e.c.iter().zip(&lambda).fold(0.0f64, |a, (&c, &l)| a.max((l * c).abs()));
        merit.lambda = lambda;
        if viol <= opts.tol && stat <= opts.tol && compl <= opts.tol {
            status = Status::Optimal;
            break;
        }
        if viol > opts.tol && viol > 0.25 * prev_viol {
            if merit.rho >= opts.rho_max {
                status = Status::Infeasible;
                break;
            }
            merit.rho = (merit.rho * 10.0).min(opts.rho_max);
        }
        prev_viol = viol;
    }
    let violation = violation(&cur.eval.c);
    AlResult {
        f: cur.eval.f,
        c: cur.eval.c.clone(),
        z: cur.z,
        status,
        iterations: outer,
        inner_iterations: inner_total,
        multipliers: merit.lambda,
        violation,
        merit_history: history,
    }
}
