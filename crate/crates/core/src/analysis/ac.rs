use num_complex::Complex64;

use super::AnalysisError;
use crate::circuit::Circuit;
use crate::elements::Analysis;
use crate::graph::Wanted;
use crate::sparse::{SparseLu, SparseMat};

/// Real parts of the small-signal system at a bias point:
/// `A(ω) = iω·jq + jf` and the excitation `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AcMatrices {
    pub jq: SparseMat,
    pub jf: SparseMat,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AcSystem {
    pub omega: f64,
    pub a: SparseMat<Complex64>,
    pub b: Vec<Complex64>,
    pub eps: Vec<Complex64>,
    pub lu: SparseLu<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcPoint {
    pub freq_hz: f64,
    pub eps: Vec<Complex64>,
}

/// Assembles the AC-build and stimulus passes at `x_dc`.
pub fn ac_matrices(ckt: &Circuit, x_dc: &[f64]) -> Result<AcMatrices, AnalysisError> {
    let probe = vec![0.0; ckt.n];
    let build = ckt.eval_ac(&probe, x_dc, Analysis::AcBuild, Wanted::NONE)?;
    let stim = ckt.eval_ac(&probe, x_dc, Analysis::AcStimulus, Wanted::NONE)?;
    Ok(AcMatrices { jq: build.dq_dx, jf: build.df_dx, b: stim.f.to_dense() })
}

impl AcMatrices {
    pub fn system(&self, omega: f64) -> SparseMat<Complex64> {
        let mut trip: Vec<(usize, usize, Complex64)> =
            self.jf.entries.iter().map(|&(i, j, v)| (i, j, Complex64::new(v, 0.0))).collect();
        trip.extend(self.jq.entries.iter().map(|&(i, j, v)| (i, j, Complex64::new(0.0, omega * v))));
        SparseMat::from_triplets(self.jf.nrows, self.jf.ncols, trip)
    }

    pub fn solve(&self, omega: f64, names: &[String]) -> Result<AcSystem, AnalysisError> {
        let a = self.system(omega);
        let lu = SparseLu::factor(&a.to_csc()).map_err(|e| AnalysisError::singular(e, names))?;
        let b: Vec<Complex64> = self.b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let eps = lu.solve(&b);
        Ok(AcSystem { omega, a, b, eps, lu })
    }
}

/// Solves `(iω·∇ₓQ + ∇ₓF)·ε = b` at the converged bias `x_dc`.
pub fn solve_ac(ckt: &Circuit, x_dc: &[f64], omega: f64) -> Result<AcSystem, AnalysisError> {
    if !omega.is_finite() || omega < 0.0 {
        return Err(AnalysisError::Config(format!("angular frequency must be finite and non-negative, got {omega}")));
    }
    ac_matrices(ckt, x_dc)?.solve(omega, &ckt.names)
}

/// Logarithmic frequency grid from `fstart` to `fstop` inclusive.
pub fn log_sweep(fstart: f64, fstop: f64, points_per_decade: usize) -> Result<Vec<f64>, AnalysisError> {
    if !(fstart > 0.0 && fstop >= fstart && fstop.is_finite()) || points_per_decade == 0 {
        return Err(AnalysisError::Config(format!(
            "bad sweep: fstart={fstart}, fstop={fstop}, points per decade={points_per_decade}"
        )));
    }
    let decades = (fstop / fstart).log10();
    let count = (decades * points_per_decade as f64 + 1e-9).floor() as usize;
    let ppd = points_per_decade as f64;
    Ok((0..=count).map(|k| fstart * 10f64.powf(k as f64 / ppd)).collect())
}

pub fn ac_sweep(ckt: &Circuit, x_dc: &[f64], freqs: &[f64]) -> Result<Vec<AcPoint>, AnalysisError> {
    let m = ac_matrices(ckt, x_dc)?;
    let solved = ckt.exec.map(freqs, |&f| m.solve(2.0 * std::f64::consts::PI * f, &ckt.names));
    freqs.iter().zip(solved).map(|(&freq_hz, s)| Ok(AcPoint { freq_hz, eps: s?.eps })).collect()
}
