//! Hutchinson estimate of the squared Frobenius norm of the update map's
//! Jacobian at the equilibrium, used as a training penalty.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::deq::map::FixedPointMap;
use crate::error::Result;
use crate::numeric::{ParamId, Tape, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JacRegConfig {
    pub enabled: bool,
    pub weight: f64,
    pub probes: usize,
}

impl Default for JacRegConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            weight: 1.0,
            probes: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct JacRegOutput<T> {
    /// Mean over probes of `‖J v‖² / dim`.
    pub estimate: f64,
    /// Parameter gradients of `weight · estimate`.
    pub params: Vec<(ParamId, Tensor<T>)>,
}

pub fn jacobian_reg<T: Scalar, M: FixedPointMap<T>, R: Rng + ?Sized>(
    map: &M,
    h_star: &Tensor<T>,
    cfg: &JacRegConfig,
    rng: &mut R,
) -> Result<JacRegOutput<T>> {
    if !cfg.enabled || cfg.probes == 0 {
        return Ok(JacRegOutput {
            estimate: 0.0,
            params: Vec::new(),
        });
    }
    let dim = h_star.len().max(1) as f64;
    let mut tape = Tape::new();
    let h = tape.constant(h_star.clone());
    let mut total = None;
    for _ in 0..cfg.probes {
        let probe: Vec<T> = (0..h_star.len())
            .map(|_| T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let v = tape.constant(Tensor::new(h_star.shape().to_vec(), probe)?);
        let jv = map.record_jvp(&mut tape, h, v)?;
        let sq = tape.sum_squares(jv);
        total = Some(match total {
            None => sq,
            Some(t) => tape.add(t, sq)?,
        });
    }
    let total = total.expect("at least one probe");
    let scale = 1.0 / (dim * cfg.probes as f64);
    let estimate = tape.value(total).item().to_f64_lossy() * scale;
    let mut params = Vec::new();
    if cfg.weight != 0.0 {
        let grads = tape.backward(total)?;
        params = tape.param_grads(&grads);
        let s = T::from_f64_lossy(cfg.weight * scale);
        for (_, g) in &mut params {
            *g = g.scale(s);
        }
    }
    Ok(JacRegOutput { estimate, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deq::map::testing::ScalarAffine;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(k: usize) -> Tensor<f64> {
        Tensor::matrix(k, 1, vec![0.3; k]).unwrap()
    }

    #[test]
    fn constant_map_has_zero_penalty() {
        let map = ScalarAffine::new(0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = jacobian_reg(&map, &state(4), &JacRegConfig::default(), &mut rng).unwrap();
        assert_eq!(out.estimate, 0.0);
    }

    #[test]
    fn doubling_map_estimates_four() {
        // ‖2v‖²/dim has mean 4 and variance 32/dim per probe
        let map = ScalarAffine::new(2.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = JacRegConfig {
            probes: 1000,
            ..JacRegConfig::default()
        };
        let dim = 4.0;
        let out = jacobian_reg(&map, &state(4), &cfg, &mut rng).unwrap();
        let sigma = (32.0f64 / dim / 1000.0).sqrt();
        assert!((out.estimate - 4.0).abs() <= 3.0 * sigma, "estimate {}", out.estimate);
        // d/dθ of θ²‖v‖²/dim is 2θ·estimate/θ² · θ = 2·estimate/θ
        let g = out.params.iter().find(|(p, _)| *p == map.theta).unwrap().1.item();
        approx::assert_relative_eq!(g, 2.0 * out.estimate / 2.0, max_relative = 1e-10);
    }

    #[test]
    fn zero_weight_gives_no_gradients() {
        let map = ScalarAffine::new(2.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = JacRegConfig {
            weight: 0.0,
            ..JacRegConfig::default()
        };
        let out = jacobian_reg(&map, &state(3), &cfg, &mut rng).unwrap();
        assert!(out.estimate > 0.0);
        assert!(out.params.is_empty());
    }

    #[test]
    fn disabled_is_free() {
        let map = ScalarAffine::new(2.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = JacRegConfig {
            enabled: false,
            ..JacRegConfig::default()
        };
        let out = jacobian_reg(&map, &state(3), &cfg, &mut rng).unwrap();
        assert_eq!(out.estimate, 0.0);
    }
}
