//! Reverse-mode automatic differentiation over rank-2 tensors.
//!
//! A [`Tape`] is built fresh for every forward computation that needs
//! gradients and dropped afterwards; nothing persists between calls. Leaves
//! are constants, differentiable inputs, or borrowed parameters from a
//! [`ParamStore`]. [`Tape::vjp`] can be called any number of times on the same
//! recording, which is what the implicit backward pass relies on.

use std::borrow::Cow;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numeric::params::{ParamId, ParamStore};
use crate::numeric::tensor::{logistic, Tensor};
use crate::scalar::Scalar;

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Constant,
    Input,
    Param,
    /// `x · w[:, off..off + x.cols]ᵀ`
    MatMulT { x: Var, w: Var, col_off: usize },
    AddBias { x: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: T },
    Relu(Var),
    Sigmoid(Var),
    ConcatCols(Var, Var),
    GatherRows { x: Var, idx: Arc<[usize]> },
    SegmentMax { x: Var, argmax: Arc<[usize]> },
    GatherArgmax { x: Var, argmax: Arc<[usize]> },
    Sum(Var),
    SumSquares(Var),
    MaskedXent { logits: Var, probs: Vec<T>, targets: Arc<[usize]> },
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    on_input_path: bool,
    on_param_path: bool,
}

/// Per-node cotangents produced by [`Tape::vjp`].
#[derive(Debug)]
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    /// Cotangent of `v`, or `None` when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Which leaf kinds receive cotangents during a backward sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTargets {
    InputsOnly,
    ParamsOnly,
    All,
}

pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    param_cache: Vec<(ParamId, Var)>,
}

impl<'a, T: Scalar> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_cache: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn into_value(mut self, v: Var) -> Tensor<T> {
        self.nodes.swap_remove(v.0).value.into_owned()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>, deps: &[Var]) -> Var {
        let (mut inp, mut par) = match op {
            Op::Input => (true, false),
            Op::Param => (false, true),
            _ => (false, false),
        };
        for d in deps {
            inp |= self.nodes[d.0].on_input_path;
            par |= self.nodes[d.0].on_param_path;
        }
        self.nodes.push(Node {
            value,
            op,
            on_input_path: inp,
            on_param_path: par,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Constant, &[])
    }

    pub fn constant_ref(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Constant, &[])
    }

    /// A differentiable non-parameter leaf (e.g. a latent state).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Input, &[])
    }

    /// Borrowed parameter leaf; repeated requests for the same id share a node.
    pub fn param(&mut self, store: &'a ParamStore<T>, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.param_cache.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.push(Cow::Borrowed(&store.get(id).value), Op::Param, &[]);
        self.param_cache.push((id, v));
        v
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var> {
        self.matmul_t_cols(x, w, 0)
    }

    /// `x · w[:, col_off..col_off + x.cols]ᵀ`: multiplies by a column block of
    /// `w`, which lets a layer acting on a concatenation be applied piecewise.
    pub fn matmul_t_cols(&mut self, x: Var, w: Var, col_off: usize) -> Result<Var> {
        let (m, k) = self.dims(x);
        let (n, wk) = self.dims(w);
        if col_off + k > wk {
            return Err(Error::shape(
                "matmul_t",
                format!("input width {k} at column offset {col_off} exceeds weight width {wk}"),
            ));
        }
        let mut out = Tensor::zeros(&[m, n]);
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(x).data(),
            k,
            1,
            &self.value(w).data()[col_off..],
            1,
            wk,
            T::zero(),
            out.data_mut(),
            n,
            1,
        );
        Ok(self.push(Cow::Owned(out), Op::MatMulT { x, w, col_off }, &[x, w]))
    }

    /// Adds a bias row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = self.value(x).cols();
        if self.value(b).len() != c {
            return Err(Error::shape(
                "add_bias",
                format!("bias of length {} for {} columns", self.value(b).len(), c),
            ));
        }
        let mut out = self.value(x).clone();
        let bias = self.value(b).data();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &bb) in row.iter_mut().zip(bias) {
                *o = *o + bb;
            }
        }
        Ok(self.push(Cow::Owned(out), Op::AddBias { x, b }, &[x, b]))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() || ta.cols() != tb.cols() {
            return Err(Error::shape(
                name,
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::matrix(ta.rows(), ta.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Cow::Owned(out), Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Cow::Owned(out), Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Cow::Owned(out), Op::Mul(a, b), &[a, b]))
    }

    /// `scale · x + shift`
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push(Cow::Owned(out), Op::Affine { x, scale }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(Cow::Owned(out), Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(logistic);
        self.push(Cow::Owned(out), Op::Sigmoid(x), &[x])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if ra != rb {
            return Err(Error::shape("concat_cols", format!("{ra} rows vs {rb} rows")));
        }
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            data.extend_from_slice(self.value(a).row(r));
            data.extend_from_slice(self.value(b).row(r));
        }
        let out = Tensor::matrix(ra, ca + cb, data)?;
        Ok(self.push(Cow::Owned(out), Op::ConcatCols(a, b), &[a, b]))
    }

    /// Row `r` of the result is row `idx[r]` of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var> {
        let (rows, c) = self.dims(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {rows}")));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            data.extend_from_slice(src.row(i));
        }
        let out = Tensor::matrix(idx.len(), c, data)?;
        Ok(self.push(Cow::Owned(out), Op::GatherRows { x, idx }, &[x]))
    }

    /// Per-group elementwise maximum of the rows of `x`; `groups[r]` names the
    /// group of row `r`. Gradients route to the winning row of each output
    /// coordinate (ties to the lowest row index). Also returns the winners so
    /// the same routing can be reused through [`Tape::gather_argmax`].
    pub fn segment_max(
        &mut self,
        x: Var,
        groups: &[usize],
        n_groups: usize,
    ) -> Result<(Var, Arc<[usize]>)> {
        if let Some(&bad) = groups.iter().find(|&&g| g >= n_groups) {
            return Err(Error::shape("segment_max", format!("group {bad} of {n_groups}")));
        }
        let ids: Vec<Option<usize>> = groups.iter().map(|&g| Some(g)).collect();
        let (out, arg) = crate::numeric::tensor::masked_max(self.value(x), &ids, n_groups)?;
        let argmax: Arc<[usize]> = arg.into();
        let v = self.push(
            Cow::Owned(out),
            Op::SegmentMax {
                x,
                argmax: argmax.clone(),
            },
            &[x],
        );
        Ok((v, argmax))
    }

    /// `out[g, c] = x[argmax[g·cols + c], c]`, the linearization of a
    /// [`Tape::segment_max`] with frozen winners.
    pub fn gather_argmax(&mut self, x: Var, argmax: Arc<[usize]>) -> Result<Var> {
        let (rows, c) = self.dims(x);
        if c == 0 || argmax.len() % c != 0 || argmax.iter().any(|&a| a >= rows) {
            return Err(Error::shape("gather_argmax", "winner table does not fit input"));
        }
        let src = self.value(x).data();
        let data = argmax
            .iter()
            .enumerate()
            .map(|(i, &r)| src[r * c + i % c])
            .collect();
        let out = Tensor::matrix(argmax.len() / c, c, data)?;
        Ok(self.push(Cow::Owned(out), Op::GatherArgmax { x, argmax }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Cow::Owned(Tensor::scalar(s)), Op::Sum(x), &[x])
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.dot(t);
        self.push(Cow::Owned(Tensor::scalar(s)), Op::SumSquares(x), &[x])
    }

    /// Summed softmax cross-entropy over rows of `logits`, each row restricted
    /// to the entries where `mask` is set. `targets[r]` must be unmasked.
    pub fn masked_xent(&mut self, logits: Var, mask: &[bool], targets: Arc<[usize]>) -> Result<Var> {
        let (r, c) = self.dims(logits);
        if mask.len() != r * c || targets.len() != r {
            return Err(Error::shape(
                "masked_xent",
                format!("logits {r}x{c}, mask {}, targets {}", mask.len(), targets.len()),
            ));
        }
        let (probs, loss) = masked_softmax_xent(self.value(logits).data(), mask, &targets, c)?;
        Ok(self.push(
            Cow::Owned(Tensor::scalar(loss)),
            Op::MaskedXent {
                logits,
                probs,
                targets,
            },
            &[logits],
        ))
    }

    /// Backpropagates a scalar output with unit seed to every leaf.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        self.vjp(loss, Tensor::scalar(T::one()), GradTargets::All)
    }

    /// Vector-Jacobian product: propagates `cotangent` (same shape as `out`)
    /// back through the recording. Only nodes on a path to the requested leaf
    /// kinds are visited.
    pub fn vjp(&self, out: Var, cotangent: Tensor<T>, targets: GradTargets) -> Result<Grads<T>> {
        let ov = self.value(out);
        if cotangent.len() != ov.len() {
            return Err(Error::shape(
                "vjp",
                format!("cotangent {:?} for output {:?}", cotangent.shape(), ov.shape()),
            ));
        }
        let cotangent = cotangent.reshape(ov.shape().to_vec())?;
        let wanted = |n: &Node<'a, T>| match targets {
            GradTargets::InputsOnly => n.on_input_path,
            GradTargets::ParamsOnly => n.on_param_path,
            GradTargets::All => n.on_input_path || n.on_param_path,
        };
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(cotangent);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !wanted(node) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let keep = matches!(node.op, Op::Input | Op::Param);
            self.backprop_node(node, &g, &mut grads, &wanted);
            if keep {
                grads[i] = Some(g);
            }
        }
        Ok(Grads { grads })
    }

    fn backprop_node(
        &self,
        node: &Node<'a, T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        wanted: &impl Fn(&Node<'a, T>) -> bool,
    ) {
        let want = |v: Var| wanted(&self.nodes[v.0]);
        let mut acc = |v: Var, delta: Tensor<T>| match &mut grads[v.0] {
            Some(existing) => existing.axpy(T::one(), &delta),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Constant | Op::Input | Op::Param => {}
            Op::MatMulT { x, w, col_off } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (m, k) = (xv.rows(), xv.cols());
                let (n, wk) = (wv.rows(), wv.cols());
                if want(*x) {
                    // dx = g · w[:, off..off+k]
                    let mut dx = Tensor::zeros(xv.shape());
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        g.data(),
                        n,
                        1,
                        &wv.data()[*col_off..],
                        wk,
                        1,
                        T::zero(),
                        dx.data_mut(),
                        k,
                        1,
                    );
                    acc(*x, dx);
                }
                if want(*w) {
                    // dw[:, off..off+k] = gᵀ · x
                    let mut dw = Tensor::zeros(wv.shape());
                    T::gemm(
                        n,
                        m,
                        k,
                        T::one(),
                        g.data(),
                        1,
                        n,
                        xv.data(),
                        k,
                        1,
                        T::zero(),
                        &mut dw.data_mut()[*col_off..],
                        wk,
                        1,
                    );
                    acc(*w, dw);
                }
            }
            Op::AddBias { x, b } => {
                if want(*x) {
                    acc(*x, g.clone());
                }
                if want(*b) {
                    let c = g.cols();
                    let mut db = vec![T::zero(); c];
                    for row in g.data().chunks(c) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d = *d + v;
                        }
                    }
                    let shape = self.value(*b).shape().to_vec();
                    acc(*b, Tensor::new(shape, db).expect("bias shape"));
                }
            }
            Op::Add(a, b) => {
                if want(*a) {
                    acc(*a, g.clone());
                }
                if want(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if want(*a) {
                    acc(*a, g.clone());
                }
                if want(*b) {
                    acc(*b, g.scale(-T::one()));
                }
            }
            Op::Mul(a, b) => {
                if want(*a) {
                    acc(*a, g.zip_map(self.value(*b), |x, y| x * y).expect("mul shape"));
                }
                if want(*b) {
                    acc(*b, g.zip_map(self.value(*a), |x, y| x * y).expect("mul shape"));
                }
            }
            Op::Affine { x, scale } => acc(*x, g.scale(*scale)),
            Op::Relu(x) => {
                let d = g
                    .zip_map(self.value(*x), |gv, xv| if xv > T::zero() { gv } else { T::zero() })
                    .expect("relu shape");
                acc(*x, d);
            }
            Op::Sigmoid(x) => {
                let d = g
                    .zip_map(&node.value, |gv, s| gv * s * (T::one() - s))
                    .expect("sigmoid shape");
                acc(*x, d);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let rows = g.rows();
                if want(*a) {
                    let mut da = Vec::with_capacity(rows * ca);
                    for r in 0..rows {
                        da.extend_from_slice(&g.row(r)[..ca]);
                    }
                    acc(*a, Tensor::matrix(rows, ca, da).expect("concat shape"));
                }
                if want(*b) {
                    let mut db = Vec::with_capacity(rows * cb);
                    for r in 0..rows {
                        db.extend_from_slice(&g.row(r)[ca..]);
                    }
                    acc(*b, Tensor::matrix(rows, cb, db).expect("concat shape"));
                }
            }
            Op::GatherRows { x, idx } => {
                let xv = self.value(*x);
                let mut dx = Tensor::zeros(&[xv.rows(), xv.cols()]);
                for (r, &i) in idx.iter().enumerate() {
                    for (d, &v) in dx.row_mut(i).iter_mut().zip(g.row(r)) {
                        *d = *d + v;
                    }
                }
                acc(*x, dx);
            }
            Op::SegmentMax { x, argmax } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut dx = Tensor::zeros(&[xv.rows(), c]);
                let d = dx.data_mut();
                for (i, (&r, &gv)) in argmax.iter().zip(g.data()).enumerate() {
                    d[r * c + i % c] = d[r * c + i % c] + gv;
                }
                acc(*x, dx);
            }
            Op::GatherArgmax { x, argmax } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut dx = Tensor::zeros(&[xv.rows(), c]);
                let d = dx.data_mut();
                for (i, (&r, &gv)) in argmax.iter().zip(g.data()).enumerate() {
                    d[r * c + i % c] = d[r * c + i % c] + gv;
                }
                acc(*x, dx);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                acc(*x, Tensor::full(&[xv.rows(), xv.cols()], g.item()));
            }
            Op::SumSquares(x) => {
                let two_g = g.item() + g.item();
                acc(*x, self.value(*x).scale(two_g).reshape_matrix());
            }
            Op::MaskedXent {
                logits,
                probs,
                targets,
            } => {
                let lv = self.value(*logits);
                let c = lv.cols();
                let gv = g.item();
                let mut d: Vec<T> = probs.iter().map(|&p| p * gv).collect();
                for (r, &t) in targets.iter().enumerate() {
                    d[r * c + t] = d[r * c + t] - gv;
                }
                acc(*logits, Tensor::matrix(lv.rows(), c, d).expect("xent shape"));
            }
        }
    }

    /// Adds `scale ·` the parameter cotangents in `grads` to the matching
    /// `Parameter::grad` entries of `store`.
    pub fn accumulate_param_grads(&self, grads: &Grads<T>, store: &mut ParamStore<T>, scale: T) {
        for &(id, v) in &self.param_cache {
            if let Some(g) = grads.wrt(v) {
                store.get_mut(id).grad.axpy(scale, g);
            }
        }
    }

    /// Parameter cotangents keyed by id, without touching a store.
    pub fn param_grads(&self, grads: &Grads<T>) -> Vec<(ParamId, Tensor<T>)> {
        self.param_cache
            .iter()
            .filter_map(|&(id, v)| grads.wrt(v).map(|g| (id, g.clone())))
            .collect()
    }
}

trait ReshapeMatrix {
    fn reshape_matrix(self) -> Self;
}

impl<T: Scalar> ReshapeMatrix for Tensor<T> {
    fn reshape_matrix(self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        self.reshape(vec![r, c]).expect("same element count")
    }
}

/// Row-wise masked softmax and summed negative log-likelihood of `targets`.
pub(crate) fn masked_softmax_xent<T: Scalar>(
    logits: &[T],
    mask: &[bool],
    targets: &[usize],
    cols: usize,
) -> Result<(Vec<T>, T)> {
    let mut probs = vec![T::zero(); logits.len()];
    let mut loss = T::zero();
    for (r, &t) in targets.iter().enumerate() {
        let row = &logits[r * cols..(r + 1) * cols];
        let m = &mask[r * cols..(r + 1) * cols];
        if t >= cols || !m[t] {
            return Err(Error::Data(format!(
                "pointer target {t} of slot {r} is outside its candidate set"
            )));
        }
        let max = row
            .iter()
            .zip(m)
            .filter(|(_, &ok)| ok)
            .fold(T::neg_infinity(), |a, (&v, _)| a.max(v));
        let mut z = T::zero();
        let p = &mut probs[r * cols..(r + 1) * cols];
        for j in 0..cols {
            if m[j] {
                p[j] = (row[j] - max).exp();
                z = z + p[j];
            }
        }
        for pj in p.iter_mut() {
            *pj = *pj / z;
        }
        loss = loss - (row[t] - max - z.ln());
    }
    Ok((probs, loss))
}
