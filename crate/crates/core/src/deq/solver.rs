//! Black-box fixed-point solvers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    Picard,
    Anderson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMode {
    /// `‖f(H) − H‖_F ≤ ε`
    Absolute,
    /// `‖f(H) − H‖_F / (‖f(H)‖_F + 1e-12) ≤ ε`
    Relative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub max_iters: usize,
    pub stop_mode: StopMode,
    pub epsilon: f64,
    /// Number of past iterates mixed by Anderson acceleration.
    pub anderson_memory: usize,
    /// Ridge added to the Anderson normal equations, relative to the squared
    /// norm of the newest residual.
    pub anderson_ridge: f64,
    /// Weight of `f(x)` versus `x` in each update (1 = undamped).
    pub damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::absolute()
    }
}

impl SolverConfig {
    /// Anderson, absolute tolerance 1e-3.
    pub fn absolute() -> Self {
        Self {
            method: SolverMethod::Anderson,
            max_iters: 32,
            stop_mode: StopMode::Absolute,
            epsilon: 1e-3,
            anderson_memory: 5,
            anderson_ridge: 1e-4,
            damping: 1.0,
        }
    }

    /// Anderson, relative tolerance 0.1.
    pub fn relative() -> Self {
        Self {
            stop_mode: StopMode::Relative,
            epsilon: 0.1,
            ..Self::absolute()
        }
    }

    pub fn picard(self) -> Self {
        Self {
            method: SolverMethod::Picard,
            ..self
        }
    }

    pub fn with_tolerance(self, stop_mode: StopMode, epsilon: f64) -> Self {
        Self {
            stop_mode,
            epsilon,
            ..self
        }
    }

    pub fn with_max_iters(self, max_iters: usize) -> Self {
        Self { max_iters, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("solver epsilon must be positive".into()));
        }
        if self.max_iters == 0 || self.anderson_memory == 0 {
            return Err(Error::Config("max_iters and anderson_memory must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) || self.anderson_ridge < 0.0 {
            return Err(Error::Config("damping must lie in (0,1] and the ridge be non-negative".into()));
        }
        Ok(())
    }

    fn stop(&self, residual: f64, image_norm: f64) -> bool {
        match self.stop_mode {
            StopMode::Absolute => residual <= self.epsilon,
            StopMode::Relative => residual / (image_norm + 1e-12) <= self.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult<T> {
    /// The last iterate whose residual was measured.
    pub state: Tensor<T>,
    /// Number of map evaluations.
    pub iterations: usize,
    /// `‖f(state) − state‖_F`
    pub residual: f64,
    pub converged: bool,
}

/// Iterates `f` from `x0` until the configured stopping rule holds or
/// `max_iters` evaluations have been spent. Only the current iterate and the
/// Anderson history are kept.
pub fn solve_fixed_point<T, F>(mut f: F, x0: &Tensor<T>, cfg: &SolverConfig) -> Result<SolveResult<T>>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> Result<Tensor<T>>,
{
    cfg.validate()?;
    let mut x = x0.clone();
    let mut xs: Vec<Tensor<T>> = Vec::new();
    let mut fs: Vec<Tensor<T>> = Vec::new();
    let mut residual = f64::INFINITY;
    for it in 1..=cfg.max_iters {
        let fx = f(&x)?;
        if fx.len() != x.len() {
            return Err(Error::shape(
                "solve_fixed_point",
                format!("map changed the state size from {} to {}", x.len(), fx.len()),
            ));
        }
        if !fx.is_finite() {
            return Err(Error::NonFinite(format!(
                "fixed-point iterate diverged at iteration {it} (last residual {residual:.3e})"
            )));
        }
        residual = fx.sub(&x)?.frobenius_norm().to_f64_lossy();
        if cfg.stop(residual, fx.frobenius_norm().to_f64_lossy()) {
            return Ok(SolveResult {
                state: x,
                iterations: it,
                residual,
                converged: true,
            });
        }
        if it == cfg.max_iters {
            break;
        }
        let next = match cfg.method {
            SolverMethod::Picard => mix(&[x.clone()], &[fx], &[1.0], cfg.damping),
            SolverMethod::Anderson => {
                xs.push(x.clone());
                fs.push(fx);
                if xs.len() > cfg.anderson_memory {
                    xs.remove(0);
                    fs.remove(0);
                }
                let alpha = anderson_weights(&xs, &fs, cfg.anderson_ridge);
                mix(&xs, &fs, &alpha, cfg.damping)
            }
        };
        x = next;
    }
    Ok(SolveResult {
        state: x,
        iterations: cfg.max_iters,
        residual,
        converged: false,
    })
}

/// `Σ αᵢ (β fᵢ + (1 − β) xᵢ)`
fn mix<T: Scalar>(xs: &[Tensor<T>], fs: &[Tensor<T>], alpha: &[f64], beta: f64) -> Tensor<T> {
    let mut out = Tensor::zeros(xs[0].shape());
    for ((x, f), &a) in xs.iter().zip(fs).zip(alpha) {
        out.axpy(T::from_f64_lossy(a * beta), f);
        if beta < 1.0 {
            out.axpy(T::from_f64_lossy(a * (1.0 - beta)), x);
        }
    }
    out
}

/// Affine weights minimizing `‖Σ αᵢ gᵢ‖² + r‖α‖²` subject to `Σ αᵢ = 1`, where
/// `gᵢ = fᵢ − xᵢ`: `α ∝ (GGᵀ + rI)⁻¹ 1`.
fn anderson_weights<T: Scalar>(xs: &[Tensor<T>], fs: &[Tensor<T>], ridge: f64) -> Vec<f64> {
    let k = xs.len();
    if k == 1 {
        return vec![1.0];
    }
    let g: Vec<Tensor<T>> = xs.iter().zip(fs).map(|(x, f)| f.sub(x).expect("same shape")).collect();
    let mut gram = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let v = g[i].dot(&g[j]).to_f64_lossy();
            gram[i][j] = v;
            gram[j][i] = v;
        }
    }
    let scale = gram[k - 1][k - 1];
    let reg = ridge * scale.max(f64::MIN_POSITIVE);
    for (i, row) in gram.iter_mut().enumerate() {
        row[i] += reg;
    }
    match solve_dense(gram, vec![1.0; k]) {
        Some(y) => {
            let s: f64 = y.iter().sum();
            if s.abs() > 1e-300 && y.iter().all(|v| v.is_finite()) {
                y.iter().map(|v| v / s).collect()
            } else {
                last_only(k)
            }
        }
        None => last_only(k),
    }
}

fn last_only(k: usize) -> Vec<f64> {
    let mut a = vec![0.0; k];
    a[k - 1] = 1.0;
    a
}

/// Gaussian elimination with partial pivoting; `None` if singular.
pub(crate) fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let factor = a[r][col] / a[col][col];
            if factor != 0.0 {
                for c in col..n {
                    a[r][c] -= factor * a[col][c];
                }
                b[r] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::scalar(v)
    }

    #[test]
    fn picard_geometric_series() {
        let cfg = SolverConfig::absolute().picard();
        let r = solve_fixed_point(|z| Ok(scalar(z.item() / 2.0 + 1.0)), &scalar(0.0), &cfg).unwrap();
        assert!(r.converged);
        assert!((r.state.item() - 2.0).abs() <= 2e-3);
        assert!(r.iterations <= 12, "{} iterations", r.iterations);
        assert_eq!(r.iterations, 11);
    }

    #[test]
    fn fixed_point_start_stops_after_one_check() {
        for cfg in [SolverConfig::absolute(), SolverConfig::absolute().picard()] {
            let x0 = Tensor::vector(vec![2.0, -1.0]);
            let r = solve_fixed_point(|z| Ok(z.clone()), &x0, &cfg).unwrap();
            assert_eq!((r.iterations, r.converged, r.residual), (1, true, 0.0));
            assert_eq!(r.state, x0);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = SolverConfig::absolute().picard().with_max_iters(5000);
        let err = solve_fixed_point(|z| Ok(z.scale(1e10) .map(|v| v + 1.0)), &scalar(0.0), &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn non_convergence_is_flagged() {
        let cfg = SolverConfig::absolute().picard().with_max_iters(3);
        let r = solve_fixed_point(|z| Ok(scalar(-z.item() + 1.0)), &scalar(0.0), &cfg).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
        assert!(r.residual > 0.5);
    }

    #[test]
    fn relative_mode_uses_image_norm() {
        // f(z) = z/2 + 100: relative error 0.1 is reached long before 1e-3 absolute
        let f = |z: &Tensor<f64>| Ok(scalar(z.item() / 2.0 + 100.0));
        let rel = solve_fixed_point(f, &scalar(0.0), &SolverConfig::relative().picard()).unwrap();
        let abs = solve_fixed_point(f, &scalar(0.0), &SolverConfig::absolute().picard().with_max_iters(100)).unwrap();
        assert!(rel.converged && abs.converged);
        assert!(rel.iterations < abs.iterations);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SolverConfig {
            epsilon: 0.0,
            ..SolverConfig::absolute()
        };
        assert!(solve_fixed_point(|z| Ok(z.clone()), &scalar(0.0), &cfg).is_err());
    }

    #[test]
    fn dense_solve() {
        let x = solve_dense(vec![vec![2.0, 1.0], vec![1.0, 3.0]], vec![3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);
        assert!(solve_dense(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![1.0, 1.0]).is_none());
    }
}
