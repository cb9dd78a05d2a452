//! Pointer decoders, loss and accuracy.
//!
//! Plain logit tensors mark non-candidates with `-∞`, so loss and accuracy
//! need only the logits and the targets.

use crate::error::{Error, Result};
use crate::model::encode::InstanceLayout;
use crate::model::{DecoderParams, Model};
use crate::numeric::tape::masked_softmax_xent;
use crate::numeric::{Tape, Tensor, Var};
use crate::scalar::Scalar;

/// `slots × n` pointer scores; `-∞` outside each slot's candidate set.
pub type PointerLogits<T> = Tensor<T>;

/// Records raw (unmasked) pointer scores for every slot and every node.
pub fn decode_on_tape<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    model: &'a Model<T>,
    layout: &InstanceLayout<T>,
    h: Var,
) -> Result<Var> {
    let store = &model.params;
    match &model.layers.decoder {
        DecoderParams::Node { source, target } => {
            let p = source.forward(tape, store, h)?;
            let q = target.forward(tape, store, h)?;
            tape.matmul_t(p, q)
        }
        DecoderParams::Edge { source, target } => {
            let (is, js): (Vec<usize>, Vec<usize>) = layout.slot_edges.iter().copied().unzip();
            let hi = tape.gather_rows(h, is.into())?;
            let hj = tape.gather_rows(h, js.into())?;
            let pair = tape.concat_cols(hi, hj)?;
            let p = source.forward(tape, store, pair)?;
            let q = target.forward(tape, store, h)?;
            tape.matmul_t(p, q)
        }
    }
}

/// Records the summed pointer cross-entropy of an instance.
pub fn loss_on_tape<T: Scalar>(tape: &mut Tape<'_, T>, layout: &InstanceLayout<T>, logits: Var) -> Result<Var> {
    tape.masked_xent(logits, &layout.candidate_mask, layout.targets.clone())
}

/// Pointer scores for a plain latent state.
pub fn decode_logits<T: Scalar>(model: &Model<T>, layout: &InstanceLayout<T>, h: &Tensor<T>) -> Result<PointerLogits<T>> {
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let l = decode_on_tape(&mut tape, model, layout, hv)?;
    let mut logits = tape.into_value(l);
    for (x, &ok) in logits.data_mut().iter_mut().zip(&layout.candidate_mask) {
        if !ok {
            *x = T::neg_infinity();
        }
    }
    Ok(logits)
}

fn candidate_mask<T: Scalar>(logits: &Tensor<T>) -> Vec<bool> {
    logits.data().iter().map(|&x| x > T::neg_infinity()).collect()
}

/// Mean softmax cross-entropy over pointer slots.
pub fn pointer_loss<T: Scalar>(logits: &PointerLogits<T>, targets: &[usize]) -> Result<T> {
    if targets.len() != logits.rows() {
        return Err(Error::shape(
            "pointer_loss",
            format!("{} targets for {} slots", targets.len(), logits.rows()),
        ));
    }
    if targets.is_empty() {
        return Ok(T::zero());
    }
    let mask = candidate_mask(logits);
    let (_, sum) = masked_softmax_xent(logits.data(), &mask, targets, logits.cols())?;
    Ok(sum / T::from_usize(targets.len()).expect("slot count fits"))
}

/// Argmax per slot; ties go to the lowest index.
pub fn predictions<T: Scalar>(logits: &PointerLogits<T>) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fraction of slots whose argmax equals the target.
pub fn pointer_accuracy<T: Scalar>(logits: &PointerLogits<T>, targets: &[usize]) -> f64 {
    if targets.is_empty() {
        return 1.0;
    }
    let hits = predictions(logits)
        .iter()
        .zip(targets)
        .filter(|(p, t)| p == t)
        .count();
    hits as f64 / targets.len() as f64
}
