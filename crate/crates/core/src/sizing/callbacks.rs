//! Objective and constraint callbacks over the normalized design vector.

use std::f64::consts::LN_10;
use std::sync::Mutex;

use num_complex::Complex64;

use super::problem::{CornerCase, SizingProblem, TypicalCase};
use super::SizingError;
use crate::analysis::{adjoint_contract, dcac_gradient, solve_dc, AnalysisError, NewtonConfig};
use crate::circuit::{Circuit, Target};
use crate::compiler::eval_call;
use crate::elements::Analysis;
use crate::graph::Wanted;
use crate::optim::{Nlp, NlpEval};
use crate::sparse::SparseLu;
use crate::submodel::synth::Polarity;
use crate::GND;

/// Evaluates the sizing problem at normalized points `z ∈ [0, 1]ᵏ`, one
/// coordinate per tie group. DC solutions are warm-started from the last
/// successful evaluation.
pub struct NlpCallbacks<'a> {
    problem: &'a SizingProblem,
    pub newton: NewtonConfig,
    warm: Mutex<Vec<Option<Vec<f64>>>>,
    last_error: Mutex<Option<SizingError>>,
}

pub fn make_callbacks(problem: &SizingProblem) -> NlpCallbacks<'_> {
    let slots = problem.cases.len() + 3;
    NlpCallbacks { problem, newton: NewtonConfig::default(), warm: Mutex::new(vec![None; slots]), last_error: Mutex::new(None) }
}

/// Result of one job: its solution and rows with gradients over the variables.
struct Rows {
    x: Vec<f64>,
    c: Vec<f64>,
    jac: Vec<Vec<f64>>,
}

/// A constraint row `g(x, p)` with `∂g/∂x` (sparse) and `∂g/∂p` (dense, per variable).
struct Row {
    value: f64,
    dx: Vec<(usize, f64)>,
    dp: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Job {
    Corner(usize),
    Typical,
    SwingDown,
    SwingUp,
}

impl<'a> NlpCallbacks<'a> {
    pub fn problem(&self) -> &'a SizingProblem {
        self.problem
    }

    /// Normalized coordinates of the initial design.
    pub fn initial_point(&self) -> Vec<f64> {
        self.problem.groups.iter().map(|g| (g.init - g.lower) / (g.upper - g.lower)).collect()
    }

    /// Design-variable values at `z`; tied variables get the identical value.
    pub fn expand(&self, z: &[f64]) -> Vec<f64> {
        self.problem
            .vars
            .iter()
            .map(|v| {
                let g = &self.problem.groups[v.group];
                g.lower + z[v.group] * (g.upper - g.lower)
            })
            .collect()
    }

    /// Gradient over the variables pulled back to `z`.
    fn reduce(&self, dp: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.problem.groups.len()];
        for (v, d) in self.problem.vars.iter().zip(dp) {
            let g = &self.problem.groups[v.group];
            out[v.group] += d * (g.upper - g.lower);
        }
        out
    }

    pub fn last_error(&self) -> Option<SizingError> {
        self.last_error.lock().expect("error slot").clone()
    }

    fn targets(&self) -> Vec<Target> {
        self.problem.vars.iter().map(|v| Target::Global(v.global)).collect()
    }

    fn circuit_at(&self, case: &CornerCase, p: &[f64]) -> Circuit {
        let mut ckt = case.circuit.clone();
        for (v, &val) in self.problem.vars.iter().zip(p) {
            ckt.globals[v.global] = val;
        }
        ckt
    }

    fn solve(&self, ckt: &Circuit, slot: usize) -> Result<Vec<f64>, AnalysisError> {
        let mut cfg = self.newton.clone();
        cfg.initial_x = self.warm.lock().expect("warm starts")[slot].clone();
        let x = match solve_dc(ckt, &cfg) {
            Ok(s) => s.x,
            Err(e) if cfg.initial_x.is_none() => return Err(e),
            Err(_) => {
                cfg.initial_x = None;
                solve_dc(ckt, &cfg)?.x
            }
        };
        self.warm.lock().expect("warm starts")[slot] = Some(x.clone());
        Ok(x)
    }

    /// Adjoint-corrected gradients `dg/dp = ∂g/∂p − (∂F/∂p)ᵀ·J⁻ᵀ·∂g/∂x`.
    fn finish(&self, ckt: &Circuit, x: Vec<f64>, rows: Vec<Row>) -> Result<Rows, AnalysisError> {
        let targets = self.targets();
        let r = ckt.eval(&x, Analysis::Dc, Wanted { gv: true, ip: false })?;
        let lu = SparseLu::factor(&r.df_dx.to_csc()).map_err(|e| AnalysisError::singular(e, &ckt.names))?;
        let (_, df_dp) = ckt.target_jacobians(&r, &targets, &x, None, Analysis::Dc)?;
        let mut c = Vec::with_capacity(rows.len());
        let mut jac = Vec::with_capacity(rows.len());
        let mut a = vec![0.0; ckt.n];
        for row in rows {
            a.iter_mut().for_each(|v| *v = 0.0);
            for &(i, d) in &row.dx {
                if i != GND {
                    a[i] += d;
                }
            }
            let mut g = row.dp;
            if a.iter().any(|&v| v != 0.0) {
                let lambda = lu.solve_transpose(&a);
                for (gk, s) in g.iter_mut().zip(adjoint_contract(&lambda, &df_dp)) {
                    *gk -= s;
                }
            }
            c.push(row.value);
            jac.push(g);
        }
        Ok(Rows { x, c, jac })
    }

    fn corner_rows(&self, case: &CornerCase, slot: usize, p: &[f64]) -> Result<Rows, AnalysisError> {
        let problem = self.problem;
        let nv = problem.vars.len();
        let ckt = self.circuit_at(case, p);
        let x = self.solve(&ckt, slot)?;
        let read = |i: usize| if i == GND { 0.0 } else { x[i] };
        let mut rows = Vec::with_capacity(problem.n_corner_rows());
        for (d, call) in problem.devices.iter().zip(&case.calls) {
            let [g, s, dr, b] = d.ports;
            let sign = match d.polarity {
                Polarity::N => 1.0,
                Polarity::P => -1.0,
            };
            let diff = |a: usize, c: usize| Row {
                value: sign * (read(a) - read(c)),
                dx: vec![(a, sign), (c, -sign)],
                dp: vec![0.0; nv],
            };
            let lanes = eval_call(call, ckt.n, &x, &ckt.globals, Analysis::Dc)?;
            let (vth, dvth) = &lanes[d.vth];
            let mut ov = diff(g, s);
            ov.value -= vth;
            ov.dx.extend(dvth[..ckt.n].iter().enumerate().filter(|e| *e.1 != 0.0).map(|(i, &v)| (i, -v)));
            for (k, v) in problem.vars.iter().enumerate() {
                ov.dp[k] = -dvth[ckt.n + v.global];
            }
            rows.extend([diff(g, s), diff(dr, s), diff(s, b), ov]);
        }
        for &(i, lo, hi) in &problem.x_bounds {
            rows.push(Row { value: x[i] - lo, dx: vec![(i, 1.0)], dp: vec![0.0; nv] });
            rows.push(Row { value: hi - x[i], dx: vec![(i, -1.0)], dp: vec![0.0; nv] });
        }
        self.finish(&ckt, x, rows)
    }

    fn swing_rows(&self, case: &CornerCase, slot: usize, p: &[f64], up: bool) -> Result<Rows, AnalysisError> {
        let sw = self.problem.swing.as_ref().expect("swing case");
        let mut ckt = self.circuit_at(case, p);
        let (hi, lo) = (sw.common + sw.delta, sw.common - sw.delta);
        ckt.globals[sw.plus] = if up { hi } else { lo };
        ckt.globals[sw.minus] = if up { lo } else { hi };
        let x = self.solve(&ckt, slot)?;
        let nv = self.problem.vars.len();
        let row = if up {
            Row { value: x[sw.node] - sw.up, dx: vec![(sw.node, 1.0)], dp: vec![0.0; nv] }
        } else {
            Row { value: sw.down - x[sw.node], dx: vec![(sw.node, -1.0)], dp: vec![0.0; nv] }
        };
        self.finish(&ckt, x, vec![row])
    }

    fn run(&self, job: Job, p: &[f64]) -> Result<Rows, AnalysisError> {
        let problem = self.problem;
        let nc = problem.cases.len();
        let typical = || problem.typical().expect("typical case");
        match job {
            Job::Corner(k) => self.corner_rows(&problem.cases[k], k, p),
            Job::Typical => {
                let ckt = self.circuit_at(typical(), p);
                Ok(Rows { x: self.solve(&ckt, nc)?, c: Vec::new(), jac: Vec::new() })
            }
            Job::SwingDown => self.swing_rows(typical(), nc + 1, p, false),
            Job::SwingUp => self.swing_rows(typical(), nc + 2, p, true),
        }
    }

    /// Objective `max(T/20 − log₁₀|v|, 0)²` and its gradient over the variables.
    fn objective(&self, p: &[f64], x_typ: &[f64]) -> Result<(f64, Vec<f64>), AnalysisError> {
        let Some(gain) = &self.problem.gain else {
            return Ok((0.0, vec![0.0; p.len()]));
        };
        let ckt = self.circuit_at(self.problem.typical().expect("typical case"), p);
        let node = gain.node;
        let target = gain.target_db / 20.0;
        let loss = move |v: &[Complex64]| {
            let z = v[node];
            let m2 = z.norm_sqr();
            let m = target - 0.5 * m2.log10();
            let mut g = vec![Complex64::new(0.0, 0.0); v.len()];
            if m <= 0.0 {
                return (0.0, g);
            }
            g[node] = z * (-2.0 * m / LN_10 / m2);
            (m * m, g)
        };
        let (_, f, grad) = dcac_gradient(&ckt, x_typ, gain.omega, &loss, &self.targets())?;
        Ok((f, grad))
    }

    /// Objective, constraint rows and gradients at `z`.
    pub fn evaluate(&self, z: &[f64]) -> Result<NlpEval, SizingError> {
        assert_eq!(z.len(), self.problem.groups.len(), "design vector length");
        let p = self.expand(z);
        let problem = self.problem;
        let mut jobs: Vec<Job> = (0..problem.cases.len()).map(Job::Corner).collect();
        if matches!(problem.typical, Some(TypicalCase::Extra(_))) {
            jobs.push(Job::Typical);
        }
        if problem.swing.is_some() {
            jobs.extend([Job::SwingDown, Job::SwingUp]);
        }
        let results = problem.exec.map(&jobs, |&j| self.run(j, &p));
        let mut outs = Vec::with_capacity(results.len());
        for r in results {
            outs.push(r.map_err(SizingError::SolveFailedAtIterate)?);
        }

        let mut c = Vec::with_capacity(problem.n_rows());
        let mut jac = Vec::with_capacity(problem.n_rows());
        let mut x_typ = None;
        for (job, out) in jobs.iter().zip(outs) {
            match (job, &problem.typical) {
                (Job::Corner(k), Some(TypicalCase::Listed(t))) if k == t => x_typ = Some(out.x.clone()),
                (Job::Typical, _) => x_typ = Some(out.x.clone()),
                _ => {}
            }
            c.extend(out.c);
            jac.extend(out.jac.iter().map(|g| self.reduce(g)));
        }
        let (f, grad) = match &x_typ {
            Some(x) => self.objective(&p, x).map_err(SizingError::SolveFailedAtIterate)?,
            None => (0.0, vec![0.0; p.len()]),
        };
        Ok(NlpEval { f, grad: self.reduce(&grad), c, jac })
    }
}

impl Nlp for NlpCallbacks<'_> {
    fn dim(&self) -> usize {
        self.problem.groups.len()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0; self.dim()], vec![1.0; self.dim()])
    }

    fn eval(&self, z: &[f64]) -> Result<NlpEval, String> {
        self.evaluate(z).map_err(|e| {
            let msg = e.to_string();
            *self.last_error.lock().expect("error slot") = Some(e);
            msg
        })
    }
}
