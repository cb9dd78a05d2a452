//! The gated max-aggregation processor.
//!
//! One step maps a latent state `H` to
//!
//! ```text
//! z_i = u_i ∥ h_i
//! m_i = max_{j → i} P_m(z_i, z_j, e_ij)          (elementwise max)
//! ĥ_i = P_r(z_i, m_i)
//! g_i = σ(P_g(z_i, m_i))
//! h_i' = g_i ⊙ ĥ_i + (1 − g_i) ⊙ h_i
//! ```
//!
//! The first message layer acts on a concatenation, so it is applied blockwise:
//! the receiver and sender blocks are evaluated once per node and gathered,
//! and the pair-feature block is folded into [`StepInputs::pair`] because it
//! does not depend on `H`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::encode::{encode_on_tape, EncodedInstance, InstanceLayout};
use crate::model::Model;
use crate::numeric::{Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Per-instance constants of the update map.
#[derive(Debug, Clone, Copy)]
pub struct StepInputs {
    /// `U`, `n × d`.
    pub node: Var,
    /// `E · W_pairᵀ + b` for the first message layer, `pairs × hidden`.
    pub pair: Var,
}

/// Plain-valued counterpart of [`StepInputs`], computed once per solve.
#[derive(Debug, Clone)]
pub struct StepConstants<T> {
    pub node: Tensor<T>,
    pub pair: Tensor<T>,
}

/// Intermediate values of one step that its linearization needs.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub z: Var,
    /// Pre-activations of the hidden message layers (inputs to rectifiers).
    pub hidden_pre: Vec<Var>,
    pub messages: Var,
    pub argmax: Arc<[usize]>,
    pub candidate: Var,
    pub gate: Var,
    pub out: Var,
}

/// Records `E · W_pairᵀ + b` from encoded pair features.
pub fn pair_term<'a, T: Scalar>(tape: &mut Tape<'a, T>, model: &'a Model<T>, edge_features: Var) -> Result<Var> {
    let first = &model.layers.processor.message.layers[0];
    let d = model.latent_dim();
    let e = first.forward_block(tape, &model.params, edge_features, 4 * d)?;
    let b = first.bias_var(tape, &model.params);
    tape.add_bias(e, b)
}

/// Encodes and records the step constants, differentiably in the parameters.
pub fn step_inputs_on_tape<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    model: &'a Model<T>,
    layout: &'a InstanceLayout<T>,
) -> Result<StepInputs> {
    let (node, e) = encode_on_tape(tape, model, layout)?;
    let pair = pair_term(tape, model, e)?;
    Ok(StepInputs { node, pair })
}

pub fn step_constants<T: Scalar>(model: &Model<T>, enc: &EncodedInstance<T>) -> Result<StepConstants<T>> {
    let mut tape = Tape::new();
    let e = tape.constant_ref(&enc.edge_features);
    let pair = pair_term(&mut tape, model, e)?;
    Ok(StepConstants {
        node: enc.node_features.clone(),
        pair: tape.into_value(pair),
    })
}

pub fn processor_step<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    model: &'a Model<T>,
    layout: &InstanceLayout<T>,
    inputs: StepInputs,
    h: Var,
) -> Result<Var> {
    Ok(processor_step_traced(tape, model, layout, inputs, h)?.out)
}

pub fn processor_step_traced<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    model: &'a Model<T>,
    layout: &InstanceLayout<T>,
    inputs: StepInputs,
    h: Var,
) -> Result<StepTrace> {
    let d = model.latent_dim();
    let n = layout.n;
    let hv = tape.value(h);
    if hv.rows() != n || hv.cols() != d {
        return Err(Error::shape(
            "processor_step",
            format!("latent state {:?}, expected [{n}, {d}]", hv.shape()),
        ));
    }
    let store = &model.params;
    let proc = &model.layers.processor;
    let first = &proc.message.layers[0];

    let z = tape.concat_cols(inputs.node, h)?;
    let recv_part = first.forward_block(tape, store, z, 0)?;
    let send_part = first.forward_block(tape, store, z, 2 * d)?;
    let recv = tape.gather_rows(recv_part, layout.receivers.clone())?;
    let send = tape.gather_rows(send_part, layout.senders.clone())?;
    let rs = tape.add(recv, send)?;
    let mut pre = tape.add(rs, inputs.pair)?;
    let mut hidden_pre = Vec::with_capacity(proc.message.layers.len() - 1);
    for layer in &proc.message.layers[1..] {
        hidden_pre.push(pre);
        let act = tape.relu(pre);
        pre = layer.forward(tape, store, act)?;
    }
    let messages = pre;
    let (m, argmax) = tape.segment_max(messages, &layout.receivers, n)?;

    let zm = tape.concat_cols(z, m)?;
    let candidate = proc.readout.forward(tape, store, zm)?;
    let gate_pre = proc.gate.forward(tape, store, zm)?;
    let gate = tape.sigmoid(gate_pre);
    let delta = tape.sub(candidate, h)?;
    let gated = tape.mul(gate, delta)?;
    let out = tape.add(h, gated)?;
    Ok(StepTrace {
        z,
        hidden_pre,
        messages,
        argmax,
        candidate,
        gate,
        out,
    })
}

/// Applies one step to a plain latent state without keeping the recording.
pub fn apply_step<T: Scalar>(
    model: &Model<T>,
    layout: &InstanceLayout<T>,
    consts: &StepConstants<T>,
    h: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let inputs = StepInputs {
        node: tape.constant_ref(&consts.node),
        pair: tape.constant_ref(&consts.pair),
    };
    let hv = tape.constant(h.clone());
    let out = processor_step(&mut tape, model, layout, inputs, hv)?;
    Ok(tape.into_value(out))
}

/// Records `steps` processor applications from `H = 0`.
pub fn unroll<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    model: &'a Model<T>,
    layout: &InstanceLayout<T>,
    inputs: StepInputs,
    steps: usize,
) -> Result<Var> {
    let mut h = tape.constant(Tensor::zeros(&[layout.n, model.latent_dim()]));
    for _ in 0..steps {
        h = processor_step(tape, model, layout, inputs, h)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::graph_data::{gen_sample, Algorithm};
    use crate::model::{encode, ModelConfig};

    fn setup(alg: Algorithm, n: usize, seed: u64) -> (Model<f64>, InstanceLayout<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = gen_sample(alg, n, &[0.5], &mut rng);
        let m = Model::new(ModelConfig::new(alg, 6), seed).unwrap();
        let l = InstanceLayout::from_sample(&s).unwrap();
        (m, l)
    }

    fn random_state(n: usize, d: usize, seed: u64) -> Tensor<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn closed_gate_is_identity() {
        let (mut m, l) = setup(Algorithm::BellmanFord, 6, 1);
        let g = m.layers.processor.gate;
        m.params.get_mut(g.weight).value.fill(0.0);
        m.params.get_mut(g.bias).value.fill(-1e4);
        let c = step_constants(&m, &encode(&m, &l).unwrap()).unwrap();
        let h = random_state(6, 6, 3);
        assert_eq!(apply_step(&m, &l, &c, &h).unwrap(), h);
    }

    #[test]
    fn gate_interpolation_identity() {
        let (m, l) = setup(Algorithm::Scc, 5, 2);
        let h = random_state(5, 6, 4);
        let mut tape = Tape::new();
        let inputs = step_inputs_on_tape(&mut tape, &m, &l).unwrap();
        let hv = tape.constant(h.clone());
        let tr = processor_step_traced(&mut tape, &m, &l, inputs, hv).unwrap();
        let (out, g, cand) = (tape.value(tr.out), tape.value(tr.gate), tape.value(tr.candidate));
        for i in 0..out.len() {
            let lhs = out.data()[i] - h.data()[i];
            let rhs = g.data()[i] * (cand.data()[i] - h.data()[i]);
            assert!((lhs - rhs).abs() < 1e-14);
            assert!(g.data()[i] > 0.0 && g.data()[i] < 1.0);
        }
    }

    #[test]
    fn wrong_state_shape_rejected() {
        let (m, l) = setup(Algorithm::InsertionSort, 4, 0);
        let c = step_constants(&m, &encode(&m, &l).unwrap()).unwrap();
        assert!(apply_step(&m, &l, &c, &Tensor::zeros(&[4, 5])).is_err());
    }

    #[test]
    fn zero_state_depends_only_on_inputs() {
        let (m, l) = setup(Algorithm::BellmanFord, 5, 8);
        let c = step_constants(&m, &encode(&m, &l).unwrap()).unwrap();
        let zero = Tensor::zeros(&[5, 6]);
        let a = apply_step(&m, &l, &c, &zero).unwrap();
        let b = apply_step(&m, &l, &c, &zero).unwrap();
        assert_eq!(a, b);
        assert!(a.max_abs() > 0.0);
    }
}
