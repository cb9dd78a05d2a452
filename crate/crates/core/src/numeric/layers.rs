//! Linear layers and multilayer perceptrons backed by a [`ParamStore`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::params::{ParamId, ParamStore};
use crate::numeric::tape::{Tape, Var};
use crate::numeric::tensor::Tensor;
use crate::scalar::Scalar;

/// `y = W x + b` with `W` of shape `out×in`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    /// Registers `<name>.weight` and `<name>.bias`, drawn uniformly from
    /// `±1/sqrt(in_dim)`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let mut draw = |n: usize| -> Vec<T> {
            (0..n)
                .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
                .collect()
        };
        let w = Tensor::matrix(out_dim, in_dim, draw(out_dim * in_dim)).expect("weight shape");
        let b = Tensor::vector(draw(out_dim));
        Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), b),
            in_dim,
            out_dim,
        }
    }

    /// Records `x · Wᵀ + b` for a `rows × in_dim` input.
    pub fn forward<'a, T: Scalar>(
        &self,
        tape: &mut Tape<'a, T>,
        store: &'a ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul_t(x, w)?;
        tape.add_bias(xw, b)
    }

    /// Records `x · W[:, col_off..col_off + x.cols]ᵀ` without the bias: the
    /// contribution of one block of a concatenated input.
    pub fn forward_block<'a, T: Scalar>(
        &self,
        tape: &mut Tape<'a, T>,
        store: &'a ParamStore<T>,
        x: Var,
        col_off: usize,
    ) -> Result<Var> {
        let w = tape.param(store, self.weight);
        tape.matmul_t_cols(x, w, col_off)
    }

    pub fn bias_var<'a, T: Scalar>(&self, tape: &mut Tape<'a, T>, store: &'a ParamStore<T>) -> Var {
        tape.param(store, self.bias)
    }
}

/// Plain (untracked) `x · Wᵀ + b` for a layer.
pub fn linear_forward<T: Scalar>(layer: &LinearLayer, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.cols() != layer.in_dim {
        return Err(Error::shape(
            "linear_forward",
            format!("input width {} for layer expecting {}", x.cols(), layer.in_dim),
        ));
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = layer.forward(&mut tape, store, xv)?;
    Ok(tape.into_value(y))
}

/// Stack of linear layers with rectifiers between consecutive layers (none
/// after the last).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<LinearLayer>,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: &[usize],
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| LinearLayer::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward<'a, T: Scalar>(
        &self,
        tape: &mut Tape<'a, T>,
        store: &'a ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = tape.relu(h);
            }
            h = layer.forward(tape, store, h)?;
        }
        Ok(h)
    }

    /// Applies every layer after the first, starting from the first layer's
    /// pre-activation output.
    pub fn forward_tail<'a, T: Scalar>(
        &self,
        tape: &mut Tape<'a, T>,
        store: &'a ParamStore<T>,
        first_out: Var,
    ) -> Result<Var> {
        let mut h = first_out;
        for layer in &self.layers[1..] {
            h = tape.relu(h);
            h = layer.forward(tape, store, h)?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn layer_with(store: &mut ParamStore<f64>, w: Tensor<f64>, b: Vec<f64>) -> LinearLayer {
        let (out_dim, in_dim) = (w.rows(), w.cols());
        LinearLayer {
            weight: store.add("w", w),
            bias: store.add("b", Tensor::vector(b)),
            in_dim,
            out_dim,
        }
    }

    #[test]
    fn identity_layer() {
        let mut s = ParamStore::new();
        let l = layer_with(&mut s, Tensor::eye(2), vec![0.0, 0.0]);
        let y = linear_forward(&l, &s, &Tensor::matrix(1, 2, vec![3.0, -1.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[3.0, -1.0]);
    }

    #[test]
    fn hand_arithmetic() {
        let mut s = ParamStore::new();
        let l = layer_with(&mut s, Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap(), vec![0.5]);
        let y = linear_forward(&l, &s, &Tensor::matrix(1, 2, vec![2.0, 3.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[5.5]);
    }

    #[test]
    fn zero_map_returns_bias() {
        let mut s = ParamStore::new();
        let l = layer_with(&mut s, Tensor::zeros(&[3, 2]), vec![1.0, 2.0, 3.0]);
        let x = Tensor::matrix(2, 2, vec![7.0, -4.0, 0.3, 9.0]).unwrap();
        let y = linear_forward(&l, &s, &x).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut s = ParamStore::new();
        let l = layer_with(&mut s, Tensor::eye(2), vec![0.0, 0.0]);
        assert!(linear_forward(&l, &s, &Tensor::zeros(&[1, 3])).is_err());
    }

    #[test]
    fn mlp_dims_chain() {
        let mut s = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Mlp::new(&mut s, "m", &[5, 4, 4, 3], &mut rng);
        assert_eq!((m.in_dim(), m.out_dim()), (5, 3));
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 5]));
        let y = m.forward(&mut tape, &s, x).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 3]);
    }
}
