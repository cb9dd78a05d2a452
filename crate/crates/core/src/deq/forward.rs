use crate::deq::map::{FixedPointMap, ProcessorMap};
use crate::deq::solver::{solve_fixed_point, SolveResult, SolverConfig};
use crate::error::Result;
use crate::model::decode::{decode_logits, PointerLogits};
use crate::model::encode::InstanceLayout;
use crate::model::Model;
use crate::numeric::Tensor;
use crate::scalar::Scalar;

/// Solves for the processor equilibrium from `H = 0` (one processor call per
/// solver iteration) and decodes pointers from it.
pub fn deq_forward<T: Scalar>(
    model: &Model<T>,
    layout: &InstanceLayout<T>,
    cfg: &SolverConfig,
) -> Result<(PointerLogits<T>, SolveResult<T>)> {
    let map = ProcessorMap::new(model, layout)?;
    let h0 = Tensor::zeros(&[layout.n, model.latent_dim()]);
    let solved = solve_fixed_point(|h| map.apply(h), &h0, cfg)?;
    let logits = decode_logits(model, layout, &solved.state)?;
    Ok((logits, solved))
}
