//! Differentiable-function contract and the finite-difference checker.
//!
//! Every analytic gradient in this crate (layers, losses, the full combined
//! objective) is validated against central finite differences through this
//! module. The contract is scalar-valued: vector-valued operations are
//! checked through a fixed linear probe `c · f(p)`, whose analytic gradient
//! is `Jᵀ c`. Inputs can be checked the same way by folding them into the
//! parameter vector.

use crate::error::{Error, Result};

/// A scalar-valued differentiable function of a flat parameter vector.
///
/// `grad` must return the exact analytic gradient of `eval` — agreement
/// with central finite differences is enforced by [`grad_check`].
pub trait DifferentiableFn {
    fn eval(&self, params: &[f64]) -> f64;
    fn grad(&self, params: &[f64]) -> Vec<f64>;
}

/// A `DifferentiableFn` built from closures.
pub struct ClosureFn<E, G>
where
    E: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    eval: E,
    grad: G,
}

impl<E, G> ClosureFn<E, G>
where
    E: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    pub fn new(eval: E, grad: G) -> Self {
        ClosureFn { eval, grad }
    }
}

impl<E, G> DifferentiableFn for ClosureFn<E, G>
where
    E: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    fn eval(&self, params: &[f64]) -> f64 {
        (self.eval)(params)
    }
    fn grad(&self, params: &[f64]) -> Vec<f64> {
        (self.grad)(params)
    }
}

/// Compares the analytic gradient of `f` at `point` against central finite
/// differences with step `epsilon`, returning the worst relative error
///
/// ```text
/// max_i |g_i − d_i| / max(1e-8, |g_i| + |d_i|),   d_i = (f(p+εe_i) − f(p−εe_i)) / 2ε
/// ```
///
/// Non-finite function values or gradient entries are reported as failures
/// carrying the offending coordinate.
pub fn grad_check(f: &dyn DifferentiableFn, point: &[f64], epsilon: f64) -> Result<f64> {
    if epsilon <= 0.0 {
        return Err(Error::Config(format!(
            "grad_check epsilon must be positive, got {epsilon}"
        )));
    }
    let base = f.eval(point);
    if !base.is_finite() {
        return Err(Error::NonFinite {
            coordinate: None,
            context: "grad_check: function value at base point".into(),
        });
    }
    let analytic = f.grad(point);
    if analytic.len() != point.len() {
        return Err(Error::Config(format!(
            "grad_check: gradient length {} does not match point length {}",
            analytic.len(),
            point.len()
        )));
    }

    let mut worst = 0.0_f64;
    let mut perturbed = point.to_vec();
    for i in 0..point.len() {
        if !analytic[i].is_finite() {
            return Err(Error::NonFinite {
                coordinate: Some(i),
                context: "grad_check: analytic gradient".into(),
            });
        }
        perturbed[i] = point[i] + epsilon;
        let plus = f.eval(&perturbed);
        perturbed[i] = point[i] - epsilon;
        let minus = f.eval(&perturbed);
        perturbed[i] = point[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                coordinate: Some(i),
                context: "grad_check: function value at perturbed point".into(),
            });
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let rel = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-8);
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_under_central_differences() {
        let f = ClosureFn::new(
            |p: &[f64]| p.iter().map(|x| x * x).sum(),
            |p: &[f64]| p.iter().map(|x| 2.0 * x).collect(),
        );
        let err = grad_check(&f, &[1.0, 2.0], 1e-5).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let f = ClosureFn::new(|_: &[f64]| 3.5, |p: &[f64]| vec![0.0; p.len()]);
        let err = grad_check(&f, &[0.3, -1.2, 7.0], 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let f = ClosureFn::new(
            |p: &[f64]| p.iter().map(|x| x * x).sum(),
            |p: &[f64]| p.iter().map(|x| 3.0 * x).collect(), // deliberately wrong
        );
        let err = grad_check(&f, &[1.0, 2.0], 1e-5).unwrap();
        assert!(err > 1e-2, "relative error {err} should be large");
    }

    #[test]
    fn non_finite_value_names_coordinate() {
        // 1/x blows up when the probe crosses zero at coordinate 1.
        let f = ClosureFn::new(
            |p: &[f64]| p[0] + (1.0 / p[1]).min(1e300),
            |p: &[f64]| vec![1.0, -1.0 / (p[1] * p[1])],
        );
        let err = grad_check(&f, &[1.0, f64::NAN], 1e-5);
        assert!(matches!(
            err,
            Err(Error::NonFinite { .. })
        ));
    }
}
