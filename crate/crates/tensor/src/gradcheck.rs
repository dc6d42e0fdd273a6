//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values, so it is an
//! independent check on every backward rule the function touches.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Gradients smaller than this in magnitude are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(input index, element index)` of the worst relative error.
    pub worst: (usize, usize),
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares backprop gradients of the scalar `f(inputs)` with central
/// differences of step `eps` for every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut work = inputs.to_vec();
    for (i, t) in inputs.iter().enumerate() {
        #[allow(clippy::needless_range_loop)]
        for k in 0..t.len() {
            let x0 = t.data()[k];
            work[i].data_mut()[k] = x0 + eps;
            let fp = eval(&work)?;
            work[i].data_mut()[k] = x0 - eps;
            let fm = eval(&work)?;
            work[i].data_mut()[k] = x0;
            let numeric = (fp - fm) / (2.0 * eps);
            if !numeric.is_finite() {
                return Err(TensorError::Numeric {
                    op: "gradcheck",
                    detail: format!("non-finite difference at input {i}, element {k}"),
                });
            }
            let a = analytic[i][k];
            let rel = relative_error(a, numeric);
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (i, k);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_passes() {
        let x = Tensor::vector(vec![0.7, -1.3]);
        let ok = check_gradients(std::slice::from_ref(&x), 1e-5, |g, v| {
            let y = g.mul(v[0], v[0])?;
            g.sum(y)
        })
        .unwrap();
        assert!(ok.passes(1e-8), "{ok:?}");
        assert_eq!(ok.checked, 2);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!(relative_error(1e-9, 0.0) < 1e-2);
    }
}
