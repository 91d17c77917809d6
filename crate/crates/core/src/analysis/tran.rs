use super::dc::newton;
use super::{solve_dc, AnalysisError, NewtonConfig};
use crate::circuit::Circuit;
use crate::elements::Analysis;
use crate::graph::Wanted;
use crate::sparse::SparseMat;

#[derive(Debug, Clone, PartialEq)]
pub struct TranConfig {
    pub t_end: f64,
    pub dt: f64,
    /// 1 for backward Euler, ½ for trapezoidal.
    pub beta: f64,
    /// Initial state; the DC operating point when `None`.
    pub initial: Option<Vec<f64>>,
    pub newton: NewtonConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

/// Fixed-step integration of `dQ/dt + F = 0`. Each step solves
/// `Q(x)/(βΔt) + F(x) + b = 0` with `b = −Q_n/(βΔt) + ((1−β)/β)·F_n`.
pub fn solve_tran(ckt: &Circuit, cfg: &TranConfig) -> Result<Trajectory, AnalysisError> {
    if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
        return Err(AnalysisError::Config(format!("time step must be positive, got {}", cfg.dt)));
    }
    if cfg.beta != 1.0 && cfg.beta != 0.5 {
        return Err(AnalysisError::Config(format!("beta must be 1 or 0.5, got {}", cfg.beta)));
    }
    if !(cfg.t_end >= 0.0) {
        return Err(AnalysisError::Config(format!("end time must be non-negative, got {}", cfg.t_end)));
    }
    let x0 = match &cfg.initial {
        Some(x) if x.len() != ckt.n => {
            return Err(AnalysisError::Config(format!("initial state has {} entries, circuit has {}", x.len(), ckt.n)))
        }
        Some(x) => x.clone(),
        None => solve_dc(ckt, &cfg.newton)?.x,
    };
    let at = |t: f64| move |e: AnalysisError| AnalysisError::Transient { t, source: Box::new(e) };
    let scale = 1.0 / (cfg.beta * cfg.dt);
    let carry = (1.0 - cfg.beta) / cfg.beta;
    let steps = (cfg.t_end / cfg.dt - 1e-9).ceil().max(0.0) as usize;

    let mut times = vec![0.0];
    let mut states = vec![x0.clone()];
    let r0 = ckt.eval(&x0, Analysis::Tran, Wanted::NONE).map_err(|e| at(0.0)(e.into()))?;
    let (mut q, mut f) = (r0.q.to_dense(), r0.f.to_dense());
    let mut x = x0;
    for k in 1..=steps {
        let t = k as f64 * cfg.dt;
        let b: Vec<f64> = q.iter().zip(&f).map(|(qn, fn_)| -qn * scale + carry * fn_).collect();
        let sol = newton(x.clone(), &cfg.newton, &ckt.names, |xt| {
            let r = ckt.eval(xt, Analysis::Tran, Wanted::NONE)?;
            let mut res = r.f.to_dense();
            for &(i, v) in &r.q.entries {
                res[i] += scale * v;
            }
            for (ri, bi) in res.iter_mut().zip(&b) {
                *ri += bi;
            }
            let mut trip = r.df_dx.entries;
            trip.extend(r.dq_dx.entries.iter().map(|&(i, j, v)| (i, j, scale * v)));
            Ok((res, SparseMat::from_triplets(ckt.n, ckt.n, trip)))
        })
        .map_err(at(t))?;
        x = sol.x;
        let r = ckt.eval(&x, Analysis::Tran, Wanted::NONE).map_err(|e| at(t)(e.into()))?;
        q = r.q.to_dense();
        f = r.f.to_dense();
        times.push(t);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}
