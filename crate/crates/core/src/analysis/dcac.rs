//! DC solve, AC solve and the gradient of a real AC loss through both.
//!
//! The AC system `A(x_dc, p)·v = b(x_dc, p)` is differentiated through the
//! AC-build graph: evaluating it at the real probes `Re v` and `Im v` yields
//! `∂(A·v)/∂p` and `∂(A·v)/∂x_dc` as ordinary first-order Jacobians, so no
//! second derivatives of the DC equations are needed. The `x_dc` part is then
//! pulled back through the DC adjoint.

use std::f64::consts::LN_10;

use num_complex::Complex64;

use super::{ac_matrices, dc_sensitivity, solve_dc, AnalysisError, NewtonConfig};
use crate::circuit::{Circuit, Target};
use crate::elements::Analysis;
use crate::graph::Wanted;
use crate::sparse::SparseMat;

/// A real-valued loss of an AC solution. `eval` returns the value and
/// `∂l/∂Re vᵢ + i·∂l/∂Im vᵢ` per unknown.
pub trait AcLoss {
    fn eval(&self, v: &[Complex64]) -> (f64, Vec<Complex64>);
}

impl<F: Fn(&[Complex64]) -> (f64, Vec<Complex64>)> AcLoss for F {
    fn eval(&self, v: &[Complex64]) -> (f64, Vec<Complex64>) {
        self(v)
    }
}

/// `20·log₁₀|v[node]|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GainDb {
    pub node: usize,
}

impl AcLoss for GainDb {
    fn eval(&self, v: &[Complex64]) -> (f64, Vec<Complex64>) {
        let z = v[self.node];
        let m2 = z.norm_sqr();
        let mut g = vec![Complex64::new(0.0, 0.0); v.len()];
        g[self.node] = z * (20.0 / LN_10 / m2);
        (10.0 * m2.log10(), g)
    }
}

#[derive(Debug, Clone)]
pub struct DcacResult {
    pub x_dc: Vec<f64>,
    pub eps: Vec<Complex64>,
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Adds `Re(conj(w_r)·s·M[r,c])` into `out[c]`.
fn accumulate(out: &mut [f64], w: &[Complex64], m: &SparseMat, s: Complex64) {
    for &(r, c, v) in &m.entries {
        out[c] += (w[r].conj() * s * v).re;
    }
}

/// AC loss and its gradient over `targets` at a given converged bias.
pub fn dcac_gradient(
    ckt: &Circuit,
    x_dc: &[f64],
    omega: f64,
    loss: &dyn AcLoss,
    targets: &[Target],
) -> Result<(Vec<Complex64>, f64, Vec<f64>), AnalysisError> {
    let sys = ac_matrices(ckt, x_dc)?.solve(omega, &ckt.names)?;
    let (l, gl) = loss.eval(&sys.eps);
    let w = sys.lu.solve_adjoint(&gl);
    let vr: Vec<f64> = sys.eps.iter().map(|z| z.re).collect();
    let vi: Vec<f64> = sys.eps.iter().map(|z| z.im).collect();
    let wanted = Wanted { gv: targets.iter().any(|t| matches!(t, Target::Global(_))), ip: false };
    let zero = vec![0.0; ckt.n];
    let pr = ckt.eval_ac(&vr, x_dc, Analysis::AcBuild, wanted)?;
    let pi = ckt.eval_ac(&vi, x_dc, Analysis::AcBuild, wanted)?;
    let st = ckt.eval_ac(&zero, x_dc, Analysis::AcStimulus, wanted)?;

    let one = Complex64::new(1.0, 0.0);
    let iw = Complex64::new(0.0, omega);
    let im = Complex64::new(0.0, 1.0);
    let (dq_r, df_r) = ckt.target_jacobians(&pr, targets, &vr, Some(x_dc), Analysis::AcBuild)?;
    let (dq_i, df_i) = ckt.target_jacobians(&pi, targets, &vi, Some(x_dc), Analysis::AcBuild)?;
    let (_, db) = ckt.target_jacobians(&st, targets, &zero, Some(x_dc), Analysis::AcStimulus)?;

    // d l = Re(wᴴ·(db − dA·v)), with dA·v = d(A·Re v) + i·d(A·Im v)
    let mut grad = vec![0.0; targets.len()];
    accumulate(&mut grad, &w, &db, one);
    accumulate(&mut grad, &w, &df_r, -one);
    accumulate(&mut grad, &w, &dq_r, -iw);
    accumulate(&mut grad, &w, &df_i, -im);
    accumulate(&mut grad, &w, &dq_i, -im * iw);

    let mut gx = vec![0.0; ckt.n];
    accumulate(&mut gx, &w, &st.df_dbias, one);
    accumulate(&mut gx, &w, &pr.df_dbias, -one);
    accumulate(&mut gx, &w, &pr.dq_dbias, -iw);
    accumulate(&mut gx, &w, &pi.df_dbias, -im);
    accumulate(&mut gx, &w, &pi.dq_dbias, -im * iw);
    let via_bias = dc_sensitivity(ckt, x_dc, &gx, targets)?;
    for (g, b) in grad.iter_mut().zip(via_bias) {
        *g += b;
    }
    Ok((sys.eps, l, grad))
}

/// Chains the DC solve, the AC solve and both adjoints.
pub fn solve_dcac(
    ckt: &Circuit,
    omega: f64,
    loss: &dyn AcLoss,
    targets: &[Target],
    cfg: &NewtonConfig,
) -> Result<DcacResult, AnalysisError> {
    let x_dc = solve_dc(ckt, cfg)?.x;
    let (eps, loss, grad) = dcac_gradient(ckt, &x_dc, omega, loss, targets)?;
    Ok(DcacResult { x_dc, eps, loss, grad })
}
