//! Gradients through a fixed point without unrolling the solver.
//!
//! At `H* = f(H*)` the loss gradient is `∂L/∂θ = aᵀ ∂f/∂θ` where the adjoint
//! `a` solves `a = ∂L/∂H* + J_f(H*)ᵀ a`. The adjoint is found by plain
//! fixed-point iteration using vector-Jacobian products of a single recorded
//! application of `f`, so memory does not grow with forward iteration count.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::deq::map::FixedPointMap;
use crate::error::{Error, Result};
use crate::numeric::{GradTargets, ParamId, Tape, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackwardConfig {
    pub max_iters: usize,
    /// Stop when `‖a_{k+1} − a_k‖ ≤ tolerance · ‖a_{k+1}‖`.
    pub tolerance: f64,
}

impl Default for BackwardConfig {
    fn default() -> Self {
        Self {
            max_iters: 32,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointReport {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct ImplicitGrads<T> {
    pub params: Vec<(ParamId, Tensor<T>)>,
    pub report: AdjointReport,
}

pub fn implicit_backward<T: Scalar, M: FixedPointMap<T>>(
    map: &M,
    h_star: &Tensor<T>,
    grad_out: &Tensor<T>,
    cfg: &BackwardConfig,
) -> Result<ImplicitGrads<T>> {
    if cfg.max_iters == 0 || !(cfg.tolerance > 0.0) {
        return Err(Error::Config("adjoint max_iters and tolerance must be positive".into()));
    }
    if grad_out.len() != h_star.len() {
        return Err(Error::shape(
            "implicit_backward",
            format!("cotangent {:?} for state {:?}", grad_out.shape(), h_star.shape()),
        ));
    }
    let mut tape = Tape::new();
    let h = tape.input(h_star.clone());
    let out = map.record(&mut tape, h)?;

    let mut a = grad_out.clone();
    let mut report = AdjointReport {
        iterations: 0,
        residual: f64::INFINITY,
        converged: false,
    };
    for it in 1..=cfg.max_iters {
        let jta = tape
            .vjp(out, a.clone(), GradTargets::InputsOnly)?
            .take(h)
            .unwrap_or_else(|| Tensor::zeros(h_star.shape()));
        let mut next = grad_out.clone();
        next.axpy(T::one(), &jta.reshape(h_star.shape().to_vec())?);
        if !next.is_finite() {
            return Err(Error::NonFinite(format!("adjoint diverged at iteration {it}")));
        }
        let diff = next.sub(&a)?.frobenius_norm().to_f64_lossy();
        let scale = next.frobenius_norm().to_f64_lossy();
        a = next;
        report.iterations = it;
        report.residual = diff;
        if diff <= cfg.tolerance * scale {
            report.converged = true;
            break;
        }
    }
    if !report.converged {
        warn!(
            "adjoint solve stopped after {} iterations with residual {:.3e}",
            report.iterations, report.residual
        );
    }
    let grads = tape.vjp(out, a, GradTargets::ParamsOnly)?;
    Ok(ImplicitGrads {
        params: tape.param_grads(&grads),
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deq::map::testing::ScalarAffine;
    use approx::assert_relative_eq;

    fn grads_for(map: &ScalarAffine) -> (f64, f64) {
        // z* = c / (1 − θ)
        let (t, c) = (map.store.get(map.theta).value.item(), map.store.get(map.c).value.item());
        let z = Tensor::matrix(1, 1, vec![c / (1.0 - t)]).unwrap();
        let g = implicit_backward(map, &z, &Tensor::matrix(1, 1, vec![1.0]).unwrap(), &BackwardConfig::default()).unwrap();
        assert!(g.report.converged);
        let find = |id| g.params.iter().filter(|(p, _)| *p == id).map(|(_, t)| t.item()).sum::<f64>();
        (find(map.theta), find(map.c))
    }

    #[test]
    fn scalar_affine_matches_closed_form() {
        let (dt, dc) = grads_for(&ScalarAffine::new(0.5, 1.0));
        assert_relative_eq!(dt, 4.0, max_relative = 1e-5);
        assert_relative_eq!(dc, 2.0, max_relative = 1e-5);
    }

    #[test]
    fn zero_feedback_reduces_to_one_step_gradient() {
        let (dt, dc) = grads_for(&ScalarAffine::new(0.0, 3.0));
        assert_relative_eq!(dt, 3.0, epsilon = 1e-12);
        assert_relative_eq!(dc, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_mismatched_cotangent() {
        let map = ScalarAffine::new(0.5, 1.0);
        let z = Tensor::matrix(2, 1, vec![2.0, 2.0]).unwrap();
        let err = implicit_backward(&map, &z, &Tensor::matrix(1, 1, vec![1.0]).unwrap(), &BackwardConfig::default());
        assert!(matches!(err, Err(Error::Shape { .. })));
    }
}
