//! Central finite-difference verification of tape gradients.
//!
//! Used by the test suites; independent of the backward implementation by
//! construction (only forward evaluations are used for the numeric side).

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// (input index, element index) of the worst coordinate.
    pub worst: (usize, usize),
    pub coords_checked: usize,
}

/// Relative error with a floor so near-zero pairs compare absolutely.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

/// Check d(root)/d(inputs) against central differences with step `eps`.
///
/// `build` must construct the same scalar function of the leaves every call;
/// it is re-invoked 2x per coordinate for the numeric derivative.
pub fn check_gradients(
    inputs: &[Tensor],
    eps: f64,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<GradReport> {
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = build(&mut tape, &vars)?;
        Ok(tape.value(root).item())
    };

    // Analytic side.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = build(&mut tape, &vars)?;
    tape.backward(root)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("gradient populated").clone())
        .collect();

    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        coords_checked: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, tensor) in inputs.iter().enumerate() {
        for ei in 0..tensor.numel() {
            let orig = tensor.as_slice()[ei];
            work[ti].as_mut_slice()[ei] = orig + eps;
            let up = eval(&work)?;
            work[ti].as_mut_slice()[ei] = orig - eps;
            let down = eval(&work)?;
            work[ti].as_mut_slice()[ei] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = rel_err(analytic[ti].as_slice()[ei], numeric);
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (ti, ei);
            }
            report.coords_checked += 1;
        }
    }
    Ok(report)
}

/// Panicking wrapper for tests: asserts the worst relative error is in tolerance.
pub fn assert_gradients(
    inputs: &[Tensor],
    eps: f64,
    tol: f64,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> GradReport {
    let report = check_gradients(inputs, eps, build).expect("gradient check build failed");
    assert!(
        report.max_rel_err < tol,
        "gradient mismatch: rel err {} at input {} elem {} (checked {})",
        report.max_rel_err,
        report.worst.0,
        report.worst.1,
        report.coords_checked
    );
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_derivative_matches_finite_differences() {
        let x = Tensor::scalar(1.0);
        let report = assert_gradients(&[x], 1e-6, 1e-6, |tape, vars| {
            let y = tape.sigmoid(vars[0]);
            tape.sum(y)
        });
        assert_eq!(report.coords_checked, 1);
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        // sum(A x B): dA should be B-row-sums broadcast.
        let a = Tensor::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.5, 0.5, -2.0], vec![0.0, 3.0, 1.0]]).unwrap();
        assert_gradients(&[a, b], 1e-5, 1e-3, |tape, vars| {
            let c = tape.matmul(vars[0], vars[1])?;
            tape.sum(c)
        });
    }

    #[test]
    fn layer_norm_gradient_matches_finite_differences() {
        let x = Tensor::from_rows(&[vec![0.3, -0.8, 1.4], vec![2.0, 0.1, -0.5]]).unwrap();
        let g = Tensor::from_vec(vec![1.2, 0.8, 1.0]);
        let b = Tensor::from_vec(vec![0.1, -0.2, 0.0]);
        assert_gradients(&[x, g, b], 1e-5, 1e-4, |tape, vars| {
            let y = tape.layer_norm(vars[0], vars[1], vars[2])?;
            let sq = tape.mul(y, y)?;
            tape.sum(sq)
        });
    }

    #[test]
    fn batch_norm_train_gradient_matches_finite_differences() {
        let x = Tensor::from_rows(&[vec![0.3, -0.8], vec![2.0, 0.1], vec![-1.1, 0.9]]).unwrap();
        let g = Tensor::from_vec(vec![1.1, 0.9]);
        let b = Tensor::from_vec(vec![-0.3, 0.2]);
        assert_gradients(&[x, g, b], 1e-5, 1e-3, |tape, vars| {
            let (y, _, _) = tape.batch_norm_train(vars[0], vars[1], vars[2])?;
            let sq = tape.mul(y, y)?;
            tape.sum(sq)
        });
    }
}
