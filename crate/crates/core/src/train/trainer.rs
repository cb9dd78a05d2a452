//! Minibatch training for both the equilibrium model and the unrolled baseline.

use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deq::{implicit_backward, jacobian_reg, solve_fixed_point, FixedPointMap, ProcessorMap};
use crate::error::{Error, Result};
use crate::graph_data::Sample;
use crate::model::decode::{decode_on_tape, loss_on_tape};
use crate::model::encode::InstanceLayout;
use crate::model::processor::{step_inputs_on_tape, unroll};
use crate::model::{Model, ModelConfig};
use crate::numeric::{AdamState, GradTargets, ParamId, Tape, Tensor};
use crate::train::config::{Inference, Mode, TrainConfig};
use crate::train::eval::{evaluate_layouts, layouts};

/// Gradient contributions of a single instance, before batch normalization.
#[derive(Debug, Clone)]
pub struct SampleGrads {
    /// Summed cross-entropy over the instance's slots.
    pub loss: f64,
    pub slots: usize,
    /// Gradients of `loss`.
    pub loss_grads: Vec<(ParamId, Tensor<f64>)>,
    /// Jacobian penalty estimate for this instance.
    pub jac: f64,
    /// Gradients of `weight · jac`.
    pub jac_grads: Vec<(ParamId, Tensor<f64>)>,
    pub forward_iterations: usize,
    pub adjoint_converged: bool,
}

/// Loss and parameter gradients for one instance under the configured mode.
/// `probe_seed` drives the Hutchinson probes.
pub fn sample_gradients(
    model: &Model<f64>,
    layout: &InstanceLayout<f64>,
    cfg: &TrainConfig,
    probe_seed: u64,
) -> Result<SampleGrads> {
    match cfg.mode {
        Mode::Dear => {
            let map = ProcessorMap::new(model, layout)?;
            let h0 = Tensor::zeros(&[layout.n, model.latent_dim()]);
            let solved = solve_fixed_point(|h| map.apply(h), &h0, &cfg.solver)?;

            let mut tape = Tape::new();
            let h = tape.input(solved.state.clone());
            let logits = decode_on_tape(&mut tape, model, layout, h)?;
            let loss = loss_on_tape(&mut tape, layout, logits)?;
            let loss_value = tape.value(loss).item();
            let mut grads = tape.vjp(loss, Tensor::scalar(1.0), GradTargets::All)?;
            let mut loss_grads = tape.param_grads(&grads);
            let grad_h = grads.take(h).unwrap_or_else(|| Tensor::zeros(solved.state.shape()));

            let implicit = implicit_backward(&map, &solved.state, &grad_h, &cfg.backward)?;
            loss_grads.extend(implicit.params);

            let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
            let reg = jacobian_reg(&map, &solved.state, &cfg.jac_reg, &mut rng)?;
            Ok(SampleGrads {
                loss: loss_value,
                slots: layout.num_slots(),
                loss_grads,
                jac: reg.estimate,
                jac_grads: reg.params,
                forward_iterations: solved.iterations,
                adjoint_converged: implicit.report.converged,
            })
        }
        Mode::NarBaseline => {
            let mut tape = Tape::new();
            let inputs = step_inputs_on_tape(&mut tape, model, layout)?;
            let h = unroll(&mut tape, model, layout, inputs, layout.n)?;
            let logits = decode_on_tape(&mut tape, model, layout, h)?;
            let loss = loss_on_tape(&mut tape, layout, logits)?;
            let loss_value = tape.value(loss).item();
            let grads = tape.vjp(loss, Tensor::scalar(1.0), GradTargets::ParamsOnly)?;
            Ok(SampleGrads {
                loss: loss_value,
                slots: layout.num_slots(),
                loss_grads: tape.param_grads(&grads),
                jac: 0.0,
                jac_grads: Vec::new(),
                forward_iterations: layout.n,
                adjoint_converged: true,
            })
        }
    }
}

/// One row of the per-epoch metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_jac: f64,
    pub train_mean_iterations: f64,
    pub adjoint_unconverged: usize,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_mean_iterations: f64,
    pub seconds: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_jac,train_mean_iterations,adjoint_unconverged,val_loss,val_accuracy,val_mean_iterations,seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.train_jac,
            self.train_mean_iterations,
            self.adjoint_unconverged,
            self.val_loss,
            self.val_accuracy,
            self.val_mean_iterations,
            self.seconds
        )
    }
}

pub struct TrainOutcome {
    /// Weights from the epoch with the lowest validation loss.
    pub model: Model<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs: Vec<EpochMetrics>,
}

fn stream_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((a << 32) ^ b);
    rand::Rng::random(&mut rng)
}

/// Trains a fresh model. Per-sample gradients may be computed in parallel,
/// but are reduced in sample order so results do not depend on thread count.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    let mut model = Model::<f64>::new(model_cfg.clone(), cfg.seed)?;
    let train_layouts = layouts(train_set)?;
    let val_layouts = layouts(val_set)?;
    let inference = Inference::for_mode(cfg.mode, &cfg.solver);
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(usize, f64, Model<f64>)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut shuffle = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 1, epoch as u64));
        order.shuffle(&mut shuffle);

        let mut loss_total = 0.0;
        let mut slot_total = 0usize;
        let mut jac_total = 0.0;
        let mut iter_total = 0usize;
        let mut unconverged = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let per: Vec<SampleGrads> = batch
                .par_iter()
                .map(|&i| {
                    let probe = stream_seed(cfg.seed, 2, ((epoch as u64) << 32) | i as u64);
                    sample_gradients(&model, &train_layouts[i], cfg, probe)
                })
                .collect::<Result<_>>()
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {b}: {e}")))?;
            let slots: usize = per.iter().map(|g| g.slots).sum();
            let batch_loss: f64 = per.iter().map(|g| g.loss).sum();
            let batch_jac: f64 = per.iter().map(|g| g.jac).sum();
            if !batch_loss.is_finite() || !batch_jac.is_finite() {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch}, batch {b}: loss {batch_loss}, jacobian penalty {batch_jac}"
                )));
            }
            model.params.zero_grad();
            let loss_scale = 1.0 / slots.max(1) as f64;
            let jac_scale = 1.0 / per.len() as f64;
            for g in &per {
                model.params.accumulate(&g.loss_grads, loss_scale);
                model.params.accumulate(&g.jac_grads, jac_scale);
            }
            if model.params.iter().any(|p| !p.grad.is_finite()) {
                return Err(Error::NonFinite(format!("epoch {epoch}, batch {b}: gradient")));
            }
            adam.step(&mut model.params);

            loss_total += batch_loss;
            slot_total += slots;
            jac_total += batch_jac;
            iter_total += per.iter().map(|g| g.forward_iterations).sum::<usize>();
            unconverged += per.iter().filter(|g| !g.adjoint_converged).count();
        }
        if unconverged > 0 {
            warn!("epoch {epoch}: adjoint iteration did not converge for {unconverged} samples");
        }

        let val = evaluate_layouts(&model, val_set, &val_layouts, &inference)?;
        if !val.loss.is_finite() {
            return Err(Error::NonFinite(format!("epoch {epoch}: validation loss {}", val.loss)));
        }
        let row = EpochMetrics {
            epoch,
            train_loss: loss_total / slot_total.max(1) as f64,
            train_jac: jac_total / train_set.len() as f64,
            train_mean_iterations: iter_total as f64 / train_set.len() as f64,
            adjoint_unconverged: unconverged,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
            val_mean_iterations: val.mean_iterations,
            seconds: start.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: train loss {:.4}, val loss {:.4}, val acc {:.4}, iters {:.1}",
            row.train_loss, row.val_loss, row.val_accuracy, row.train_mean_iterations
        );
        on_epoch(&row);
        if best.as_ref().map_or(true, |(_, l, _)| row.val_loss < *l) {
            best = Some((epoch, row.val_loss, model.clone()));
        }
        history.push(row);
    }
    let (best_epoch, best_val_loss, model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_val_loss,
        epochs: history,
    })
}
