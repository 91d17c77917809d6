//! Adjoint sensitivities of DC solutions and of linear-system solutions.

use super::AnalysisError;
use crate::circuit::{Circuit, Target};
use crate::elements::Analysis;
use crate::graph::Wanted;
use crate::sparse::{Scalar, SparseLu, SparseMat};

/// `Re(wᴴ·M[:,k])` for every column `k` of `m`.
pub fn adjoint_contract<T: Scalar>(w: &[T], m: &SparseMat<T>) -> Vec<f64> {
    let mut out = vec![0.0; m.ncols];
    for &(r, c, v) in &m.entries {
        out[c] += (w[r].conj() * v).re();
    }
    out
}

/// Gradient of a loss of the solution `v` of `A·v = b` with respect to
/// parameters `θ_k`, given `∂A/∂θ_k` (`da[k]`) and `∂b/∂θ_k` (column `k` of
/// `db`). Solves `Aᴴ·w = ∇ᵥl` once and returns `Re(wᴴ·(∂b/∂θ_k − ∂A/∂θ_k·v))`.
///
/// For complex systems `dldv[i] = ∂l/∂Re vᵢ + i·∂l/∂Im vᵢ`, the conjugate
/// Wirtinger derivative `2·∂l/∂v̄ᵢ` of the real loss.
pub fn linear_solution_backprop<T: Scalar>(
    lu: &SparseLu<T>,
    v: &[T],
    dldv: &[T],
    da: &[SparseMat<T>],
    db: &SparseMat<T>,
) -> Vec<f64> {
    assert_eq!(da.len(), db.ncols, "one dA per parameter");
    let w = lu.solve_adjoint(dldv);
    let mut out = adjoint_contract(&w, db);
    for (k, dak) in da.iter().enumerate() {
        let av = dak.mul_vec(v);
        out[k] -= w.iter().zip(&av).map(|(wi, ai)| (wi.conj() * *ai).re()).sum::<f64>();
    }
    out
}

/// `dl/dp = −(∂F/∂p)ᵀ·λ` with `λ = ∇ₓFᵀ \ ∇ₓl`, at a converged DC point.
pub fn dc_sensitivity(ckt: &Circuit, x: &[f64], loss_grad: &[f64], targets: &[Target]) -> Result<Vec<f64>, AnalysisError> {
    if loss_grad.len() != ckt.n {
        return Err(AnalysisError::Config(format!("loss gradient has {} entries, circuit has {}", loss_grad.len(), ckt.n)));
    }
    if loss_grad.iter().all(|&g| g == 0.0) {
        return Ok(vec![0.0; targets.len()]);
    }
    let wanted = Wanted { gv: targets.iter().any(|t| matches!(t, Target::Global(_))), ip: false };
    let r = ckt.eval(x, Analysis::Dc, wanted)?;
    let lu = SparseLu::factor(&r.df_dx.to_csc()).map_err(|e| AnalysisError::singular(e, &ckt.names))?;
    let lambda = lu.solve_transpose(loss_grad);
    let (_, df_dp) = ckt.target_jacobians(&r, targets, x, None, Analysis::Dc)?;
    Ok(adjoint_contract(&lambda, &df_dp).into_iter().map(|g| -g).collect())
}
