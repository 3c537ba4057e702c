//! Central finite-difference gradient checking.
//!
//! The numerical side only evaluates the forward function on perturbed
//! constant inputs; it never touches the backward rules it is checking.

use super::Tensor;
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    /// Allowed `|a - n| / max(|a|, |n|)`.
    pub rel: f64,
    /// Allowed `|a - n|` when the analytic gradient is zero at the resolution of the check.
    pub abs: f64,
    /// Step for `(f(x+h) - f(x-h)) / 2h`.
    pub step: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rel: 1e-4,
            abs: 1e-6,
            step: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub failures: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares analytic gradients of `f(inputs)` against central differences,
/// element by element, for every input.
pub fn gradcheck<F>(f: F, inputs: &[Tensor], tol: Tolerance) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = inputs.iter().map(|t| t.with_requires_grad(true)).collect();
    let loss = f(&leaves)?;
    loss.backward()?;

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        failures: Vec::new(),
    };
    for (ii, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        for j in 0..leaf.numel() {
            let eval = |delta: f64| -> Result<f64> {
                let perturbed: Vec<Tensor> = inputs
                    .iter()
                    .enumerate()
                    .map(|(k, t)| {
                        if k != ii {
                            return t.detach();
                        }
                        let mut d = t.to_vec();
                        d[j] += delta;
                        Tensor::new(t.shape(), d).expect("same shape")
                    })
                    .collect();
                Ok(f(&perturbed)?.item())
            };
            let numeric = (eval(tol.step)? - eval(-tol.step)?) / (2.0 * tol.step);
            let a = analytic[j];
            let abs_err = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs_err);
            let ok = if a.abs() <= tol.abs {
                abs_err <= tol.abs
            } else {
                let rel = abs_err / scale;
                report.max_rel_err = report.max_rel_err.max(rel);
                rel <= tol.rel
            };
            if !ok {
                report
                    .failures
                    .push(format!("input {ii} element {j}: analytic {a:e}, numeric {numeric:e}"));
            }
        }
    }
    Ok(report)
}

/// Reduces any tensor to a scalar by a fixed pseudo-random weighting, so a
/// non-scalar op can be checked through one backward pass.
pub fn weighted_sum(t: &Tensor, seed: u64) -> Result<Tensor> {
    let mut s = seed ^ 0x9e37_79b9_7f4a_7c15;
    let w: Vec<f64> = (0..t.numel())
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect();
    let w = Tensor::new(t.shape(), w).or_else(|_| Tensor::new(&[1], vec![1.0]))?;
    t.mul(&w).map(|p| p.sum())
}
