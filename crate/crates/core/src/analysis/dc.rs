use super::{norm_inf, AnalysisError, NewtonConfig};
use crate::circuit::Circuit;
use crate::elements::Analysis;
use crate::graph::Wanted;
use crate::sparse::{SparseLu, SparseMat};

#[derive(Debug, Clone, PartialEq)]
pub struct DcSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Damped Newton iteration on `residual(x) = 0`, where `residual` returns the
/// dense residual and its Jacobian. Accepted steps never increase `|r|∞`.
pub(crate) fn newton(
    x0: Vec<f64>,
    cfg: &NewtonConfig,
    names: &[String],
    residual: impl Fn(&[f64]) -> Result<(Vec<f64>, SparseMat), AnalysisError>,
) -> Result<DcSolution, AnalysisError> {
    cfg.check()?;
    let mut x = x0;
    let (mut r, mut jac) = residual(&x)?;
    let mut rn = norm_inf(&r);
    for it in 0..=cfg.max_iter {
        let lu = SparseLu::factor(&jac.to_csc()).map_err(|e| AnalysisError::singular(e, names))?;
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let dx = lu.solve(&neg);
        if dx.iter().any(|v| !v.is_finite()) {
            return Err(AnalysisError::NoConvergence { iterations: it, residual: rn });
        }
        // converged when the residual is small and so is the Newton step from here
        if rn <= cfg.abstol && norm_inf(&dx) <= cfg.reltol * norm_inf(&x) + cfg.abstol {
            return Ok(DcSolution { x, iterations: it, residual: rn });
        }
        if it == cfg.max_iter {
            break;
        }
        let mut alpha = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + alpha * d).collect();
            if let Ok((rt, jt)) = residual(&trial) {
                let tn = norm_inf(&rt);
                if tn <= rn {
                    break Some((trial, rt, jt, tn));
                }
            }
            alpha *= 0.5;
            if alpha < cfg.min_damping {
                break None;
            }
        };
        match accepted {
            Some((xt, rt, jt, tn)) => {
                x = xt;
                r = rt;
                jac = jt;
                rn = tn;
            }
            None if rn <= cfg.abstol => return Ok(DcSolution { x, iterations: it + 1, residual: rn }),
            None => return Err(AnalysisError::NoConvergence { iterations: it + 1, residual: rn }),
        }
    }
    Err(AnalysisError::NoConvergence { iterations: cfg.max_iter, residual: rn })
}

/// Solves `F(x) = 0` for the DC operating point.
pub fn solve_dc(ckt: &Circuit, cfg: &NewtonConfig) -> Result<DcSolution, AnalysisError> {
    let x0 = match &cfg.initial_x {
        Some(x) if x.len() != ckt.n => {
            return Err(AnalysisError::Config(format!("initial guess has {} entries, circuit has {}", x.len(), ckt.n)))
        }
        Some(x) => x.clone(),
        None => ckt.initial_guess(),
    };
    newton(x0, cfg, &ckt.names, |x| {
        let r = ckt.eval(x, Analysis::Dc, Wanted::NONE)?;
        Ok((r.f.to_dense(), r.df_dx))
    })
}
