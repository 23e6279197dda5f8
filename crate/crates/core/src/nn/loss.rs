//! Loss heads: diagonal-Gaussian negative log-likelihood and helpers.

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453; // ln(2π)

/// Per-sample negative log-likelihood of `target` under a diagonal Gaussian
/// parameterized by `mean` and `log_var`.
///
/// Returns (loss, dLoss/dMean, dLoss/dLogVar) with
/// `loss = Σ_d [½·ln(2π) + ½·log_var_d + ½·(target_d − mean_d)²·exp(−log_var_d)]`.
pub fn gaussian_nll(mean: &[f64], log_var: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if mean.len() != log_var.len() || mean.len() != target.len() {
        return Err(Error::Shape(format!(
            "gaussian_nll lengths differ: mean {}, log_var {}, target {}",
            mean.len(),
            log_var.len(),
            target.len()
        )));
    }
    for (name, xs) in [("mean", mean), ("log_var", log_var), ("target", target)] {
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite {name} in gaussian_nll")));
        }
    }
    let mut loss = 0.0;
    let mut d_mean = Vec::with_capacity(mean.len());
    let mut d_log_var = Vec::with_capacity(mean.len());
    for d in 0..mean.len() {
        let inv_var = (-log_var[d]).exp();
        let resid = target[d] - mean[d];
        loss += 0.5 * LN_2PI + 0.5 * log_var[d] + 0.5 * resid * resid * inv_var;
        d_mean.push(-resid * inv_var);
        d_log_var.push(0.5 - 0.5 * resid * resid * inv_var);
    }
    Ok((loss, d_mean, d_log_var))
}

/// ½·Σ (y − t)² and its gradient w.r.t. y.
pub fn squared_error(output: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if output.len() != target.len() {
        return Err(Error::Shape("squared_error length mismatch".into()));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(output.len());
    for (y, t) in output.iter().zip(target) {
        let r = y - t;
        loss += 0.5 * r * r;
        grad.push(r);
    }
    Ok((loss, grad))
}

/// −ln p[target] for a probability vector, with gradient w.r.t. p.
pub fn nll_of_probs(probs: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= probs.len() {
        return Err(Error::Argument(format!(
            "target class {target} out of range for {} outputs",
            probs.len()
        )));
    }
    let p = probs[target];
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::Numeric(format!("degenerate probability {p} at target class")));
    }
    let mut grad = vec![0.0; probs.len()];
    grad[target] = -1.0 / p;
    Ok((-p.ln(), grad))
}
