//! Central finite-difference gradient checking.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor of the relative error, so that coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Check the gradient of a scalar function of one tensor.
pub fn grad_check<F>(f: F, theta: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tape, Var) -> Result<Var>,
{
    grad_check_all(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(theta),
        step,
        tol,
    )
}

/// Check the gradient of a scalar function of several tensors, comparing
/// every coordinate of every tensor.
pub fn grad_check_all<F>(f: F, params: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
        let loss = f(&tape, &vars)?;
        let g = tape.backward(loss)?;
        vars.iter().map(|&v| g.get(v)).collect()
    };
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p)).collect();
        let loss = f(&tape, &vars)?;
        let v = tape.value(loss).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("grad_check"))
        }
    };

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        tol,
    };
    for (pi, grad) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[pi].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(grad.data()[j], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((pi, j));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::ops::{CustomOp, OpKind};
    use std::sync::Arc;

    #[test]
    fn sum_is_exact() {
        let theta = Tensor::vector(vec![0.3, -1.2, 4.0]);
        let r = grad_check(|t, x| t.sum(x), &theta, 1e-5, 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-9);
        assert!(r.passed());
        assert_eq!(r.checked, 3);
    }

    /// sin with a deliberately wrong derivative.
    #[derive(Debug)]
    struct BrokenSin;

    impl CustomOp for BrokenSin {
        fn name(&self) -> &'static str {
            "broken_sin"
        }
        fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
            Ok(inputs[0].map(f64::sin))
        }
        fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor) -> Vec<Tensor> {
            // correct would be cos
            let d = inputs[0].map(|x| -x.sin());
            vec![Tensor::new(
                d.shape().to_vec(),
                d.data().iter().zip(grad.data()).map(|(a, b)| a * b).collect(),
            )
            .unwrap()]
        }
    }

    #[test]
    fn corrupted_backward_rule_fails() {
        let theta = Tensor::vector(vec![0.3, -1.2, 2.0]);
        let op = OpKind::Custom(Arc::new(BrokenSin));
        let r = grad_check(
            |t, x| {
                let y = t.apply(op.clone(), &[x])?;
                t.sum(y)
            },
            &theta,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!r.passed());
    }
}
