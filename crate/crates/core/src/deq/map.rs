//! Update maps whose fixed points the engine solves for.

use crate::error::Result;
use crate::model::encode::{encode, InstanceLayout};
use crate::model::processor::{
    apply_step, processor_step, processor_step_traced, step_constants, step_inputs_on_tape,
    StepConstants,
};
use crate::model::Model;
use crate::numeric::{Tape, Tensor, Var};
use crate::scalar::Scalar;

/// A parametrized map `H ↦ f(H)` that can be evaluated plainly, recorded on a
/// tape (differentiably in both `H` and its parameters), and linearized.
pub trait FixedPointMap<T: Scalar> {
    /// Plain evaluation, keeping nothing for differentiation.
    fn apply(&self, h: &Tensor<T>) -> Result<Tensor<T>>;

    /// Records `f(h)`, including any parameter-dependent preprocessing.
    fn record<'a>(&'a self, tape: &mut Tape<'a, T>, h: Var) -> Result<Var>;

    /// Records `J_f(h) · v` differentiably in the parameters, with `v` held
    /// constant.
    fn record_jvp<'a>(&'a self, tape: &mut Tape<'a, T>, h: Var, v: Var) -> Result<Var>;
}

/// One processor step with the instance's encoded inputs held fixed.
pub struct ProcessorMap<'m, T> {
    pub model: &'m Model<T>,
    pub layout: &'m InstanceLayout<T>,
    consts: StepConstants<T>,
}

impl<'m, T: Scalar> ProcessorMap<'m, T> {
    pub fn new(model: &'m Model<T>, layout: &'m InstanceLayout<T>) -> Result<Self> {
        let consts = step_constants(model, &encode(model, layout)?)?;
        Ok(Self { model, layout, consts })
    }
}

impl<'m, T: Scalar> FixedPointMap<T> for ProcessorMap<'m, T> {
    fn apply(&self, h: &Tensor<T>) -> Result<Tensor<T>> {
        apply_step(self.model, self.layout, &self.consts, h)
    }

    fn record<'a>(&'a self, tape: &mut Tape<'a, T>, h: Var) -> Result<Var> {
        let inputs = step_inputs_on_tape(tape, self.model, self.layout)?;
        processor_step(tape, self.model, self.layout, inputs, h)
    }

    fn record_jvp<'a>(&'a self, tape: &mut Tape<'a, T>, h: Var, v: Var) -> Result<Var> {
        let model = self.model;
        let store = &model.params;
        let proc = &model.layers.processor;
        let d = model.latent_dim();
        let n = self.layout.n;
        let inputs = step_inputs_on_tape(tape, model, self.layout)?;
        let tr = processor_step_traced(tape, model, self.layout, inputs, h)?;

        // tangent of z = u ∥ h is 0 ∥ v
        let zeros = tape.constant(Tensor::zeros(&[n, d]));
        let tz = tape.concat_cols(zeros, v)?;
        let first = &proc.message.layers[0];
        let t_recv = first.forward_block(tape, store, tz, 0)?;
        let t_send = first.forward_block(tape, store, tz, 2 * d)?;
        let t_recv = tape.gather_rows(t_recv, self.layout.receivers.clone())?;
        let t_send = tape.gather_rows(t_send, self.layout.senders.clone())?;
        let mut t = tape.add(t_recv, t_send)?;
        for (layer, &pre) in proc.message.layers[1..].iter().zip(&tr.hidden_pre) {
            let mask = tape.value(pre).map(|x| if x > T::zero() { T::one() } else { T::zero() });
            let mask = tape.constant(mask);
            let active = tape.mul(t, mask)?;
            t = layer.forward_block(tape, store, active, 0)?;
        }
        let t_m = tape.gather_argmax(t, tr.argmax.clone())?;
        let t_zm = tape.concat_cols(tz, t_m)?;
        let t_cand = proc.readout.forward_block(tape, store, t_zm, 0)?;
        let t_gate_pre = proc.gate.forward_block(tape, store, t_zm, 0)?;
        // σ' = g(1 − g)
        let one_minus_g = tape.affine(tr.gate, -T::one(), T::one());
        let slope = tape.mul(tr.gate, one_minus_g)?;
        let t_gate = tape.mul(slope, t_gate_pre)?;
        // d[h + g(ĥ − h)] = v + dg·(ĥ − h) + g·(dĥ − v)
        let gap = tape.sub(tr.candidate, h)?;
        let a = tape.mul(t_gate, gap)?;
        let t_gap = tape.sub(t_cand, v)?;
        let b = tape.mul(tr.gate, t_gap)?;
        let ab = tape.add(a, b)?;
        tape.add(v, ab)
    }
}
