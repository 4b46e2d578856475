//! Numerical gradient verification by central differences. The closure must
//! rebuild its graph from the given leaves on every call so perturbed data is
//! re-read each evaluation.

use super::{no_grad, Tensor};

const STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub checked: usize,
    pub pass: bool,
}

/// Compares analytic gradients of `f` (a scalar-valued graph over `inputs`,
/// which must be grad-requiring leaves) against central differences with
/// step 1e-5. Relative error uses max(1e-6, |analytic|, |numeric|) as the
/// denominator; `pass` holds when the worst relative error is within
/// `tolerance`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], tolerance: f64) -> GradCheckReport
where
    F: Fn(&[Tensor]) -> Tensor,
{
    assert!(!inputs.is_empty(), "grad_check needs at least one input");
    for t in inputs {
        assert!(
            t.is_leaf() && t.requires_grad(),
            "grad_check inputs must be grad-requiring leaves"
        );
        t.zero_grad();
    }
    let loss = f(inputs);
    loss.backward();
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut report = GradCheckReport {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        checked: 0,
        pass: true,
    };
    for (t, grads) in inputs.iter().zip(&analytic) {
        for i in 0..t.numel() {
            let orig = t.data()[i];
            t.data_mut()[i] = orig + STEP;
            let up = no_grad(|| f(inputs).item());
            t.data_mut()[i] = orig - STEP;
            let down = no_grad(|| f(inputs).item());
            t.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = grads[i];
            let abs = (a - numeric).abs();
            let rel = abs / 1e-6_f64.max(a.abs()).max(numeric.abs());
            report.max_abs_err = report.max_abs_err.max(abs);
            report.max_rel_err = report.max_rel_err.max(rel);
            report.checked += 1;
        }
    }
    for t in inputs {
        t.zero_grad();
    }
    report.pass = report.max_rel_err <= tolerance;
    report
}
