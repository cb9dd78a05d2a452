//! Evaluation, inference timing and the stopping-rule ablation.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deq::{deq_forward, SolverConfig};
use crate::error::{Error, Result};
use crate::graph_data::Sample;
use crate::model::decode::{decode_logits, pointer_loss, predictions};
use crate::model::encode::InstanceLayout;
use crate::model::processor::{step_inputs_on_tape, unroll};
use crate::model::{Model, PointerLogits};
use crate::numeric::Tape;
use crate::train::config::Inference;

/// Per-sample evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub index: usize,
    pub n: usize,
    pub slots: usize,
    pub correct: usize,
    pub loss: f64,
    /// Processor applications used (solver iterations or unroll length).
    pub iterations: usize,
    pub residual: Option<f64>,
    pub converged: Option<bool>,
    pub tau: usize,
    pub diameter: usize,
    pub seconds: f64,
    pub predictions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Correct slots over all slots.
    pub accuracy: f64,
    /// Mean cross-entropy per slot.
    pub loss: f64,
    pub chance_accuracy: f64,
    pub mean_iterations: f64,
    pub max_iterations: usize,
    pub converged_fraction: f64,
    pub seconds_per_sample: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<SampleEval>,
}

impl EvalMetrics {
    /// The aggregate figures without the per-sample records.
    pub fn summary(&self) -> EvalMetrics {
        EvalMetrics {
            samples: Vec::new(),
            ..self.clone()
        }
    }
}

/// Latent rollout and decode for one instance; returns logits and the number
/// of processor applications, plus solver diagnostics when solving.
pub fn infer(
    model: &Model<f64>,
    layout: &InstanceLayout<f64>,
    inference: &Inference,
) -> Result<(PointerLogits<f64>, usize, Option<(f64, bool)>)> {
    match inference {
        Inference::Equilibrium(cfg) => {
            let (logits, r) = deq_forward(model, layout, cfg)?;
            Ok((logits, r.iterations, Some((r.residual, r.converged))))
        }
        Inference::Unroll(steps) => {
            let steps = steps.unwrap_or(layout.n);
            let mut tape = Tape::new();
            let inputs = step_inputs_on_tape(&mut tape, model, layout)?;
            let h = unroll(&mut tape, model, layout, inputs, steps)?;
            let h = tape.into_value(h);
            Ok((decode_logits(model, layout, &h)?, steps, None))
        }
    }
}

pub fn layouts(samples: &[Sample]) -> Result<Vec<InstanceLayout<f64>>> {
    samples.par_iter().map(InstanceLayout::from_sample).collect()
}

fn eval_one(
    model: &Model<f64>,
    sample: &Sample,
    layout: &InstanceLayout<f64>,
    index: usize,
    inference: &Inference,
) -> Result<SampleEval> {
    let start = Instant::now();
    let (logits, iterations, diag) = infer(model, layout, inference)?;
    let seconds = start.elapsed().as_secs_f64();
    let preds = predictions(&logits);
    let correct = preds.iter().zip(layout.targets.iter()).filter(|(p, t)| p == t).count();
    let slots = layout.num_slots();
    let loss = pointer_loss(&logits, &layout.targets)? * slots as f64;
    Ok(SampleEval {
        index,
        n: layout.n,
        slots,
        correct,
        loss,
        iterations,
        residual: diag.map(|d| d.0),
        converged: diag.map(|d| d.1),
        tau: sample.tau,
        diameter: sample.graph.hop_diameter(),
        seconds,
        predictions: preds,
    })
}

/// Pointer accuracy and diagnostics over a dataset. Parameters are only read.
pub fn evaluate(model: &Model<f64>, samples: &[Sample], inference: &Inference) -> Result<EvalMetrics> {
    let layouts = layouts(samples)?;
    evaluate_layouts(model, samples, &layouts, inference)
}

pub fn evaluate_layouts(
    model: &Model<f64>,
    samples: &[Sample],
    layouts: &[InstanceLayout<f64>],
    inference: &Inference,
) -> Result<EvalMetrics> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let per: Vec<SampleEval> = samples
        .par_iter()
        .zip(layouts)
        .enumerate()
        .map(|(i, (s, l))| eval_one(model, s, l, i, inference))
        .collect::<Result<_>>()?;
    Ok(summarize(per, layouts))
}

fn summarize(per: Vec<SampleEval>, layouts: &[InstanceLayout<f64>]) -> EvalMetrics {
    let slots: usize = per.iter().map(|s| s.slots).sum();
    let correct: usize = per.iter().map(|s| s.correct).sum();
    let loss: f64 = per.iter().map(|s| s.loss).sum();
    let chance: f64 = layouts
        .iter()
        .map(|l| l.chance_accuracy() * l.num_slots() as f64)
        .sum::<f64>();
    let count = per.len() as f64;
    let converged = per.iter().filter(|s| s.converged.unwrap_or(true)).count();
    EvalMetrics {
        accuracy: if slots == 0 { 1.0 } else { correct as f64 / slots as f64 },
        loss: if slots == 0 { 0.0 } else { loss / slots as f64 },
        chance_accuracy: if slots == 0 { 1.0 } else { chance / slots as f64 },
        mean_iterations: per.iter().map(|s| s.iterations as f64).sum::<f64>() / count,
        max_iterations: per.iter().map(|s| s.iterations).max().unwrap_or(0),
        converged_fraction: converged as f64 / count,
        seconds_per_sample: per.iter().map(|s| s.seconds).sum::<f64>() / count,
        samples: per,
    }
}

/// Recomputes pointer accuracy from dumped predictions.
pub fn accuracy_from_predictions(samples: &[Sample], predictions: &[Vec<usize>]) -> f64 {
    let mut slots = 0;
    let mut correct = 0;
    for (s, p) in samples.iter().zip(predictions) {
        let t = s.target.pointees();
        slots += t.len();
        correct += t.iter().zip(p).filter(|(a, b)| a == b).count();
    }
    if slots == 0 {
        1.0
    } else {
        correct as f64 / slots as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchStats {
    pub repetitions: usize,
    pub samples: usize,
    /// Mean over repetitions of the mean per-sample forward time.
    pub mean_seconds_per_sample: f64,
    /// Sample standard deviation across repetitions; 0 when undefined.
    pub std_seconds_per_sample: f64,
    pub std_defined: bool,
    pub mean_iterations: f64,
    pub end_to_end: bool,
}

/// Times per-sample inference after one untimed warm-up pass. With
/// `end_to_end` the layout construction and encoding are included.
pub fn benchmark_inference(
    model: &Model<f64>,
    samples: &[Sample],
    inference: &Inference,
    repetitions: usize,
    end_to_end: bool,
) -> Result<BenchStats> {
    if repetitions == 0 || samples.is_empty() {
        return Err(Error::Config("benchmark needs at least one repetition and one sample".into()));
    }
    let layouts = layouts(samples)?;
    let mut iterations = 0usize;
    for l in &layouts {
        iterations += infer(model, l, inference)?.1;
    }
    let mut rep_means = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let mut total = 0.0;
        for (s, l) in samples.iter().zip(&layouts) {
            let start = Instant::now();
            if end_to_end {
                let fresh = InstanceLayout::from_sample(s)?;
                std::hint::black_box(infer(model, &fresh, inference)?);
            } else {
                std::hint::black_box(infer(model, l, inference)?);
            }
            total += start.elapsed().as_secs_f64();
        }
        rep_means.push(total / samples.len() as f64);
    }
    let mean = rep_means.iter().sum::<f64>() / repetitions as f64;
    let (std, defined) = if repetitions > 1 {
        let var = rep_means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (repetitions - 1) as f64;
        (var.sqrt(), true)
    } else {
        (0.0, false)
    };
    Ok(BenchStats {
        repetitions,
        samples: samples.len(),
        mean_seconds_per_sample: mean,
        std_seconds_per_sample: std,
        std_defined: defined,
        mean_iterations: iterations as f64 / samples.len() as f64,
        end_to_end,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub absolute: EvalMetrics,
    pub relative: EvalMetrics,
    /// `relative.accuracy − absolute.accuracy`
    pub accuracy_delta: f64,
    /// `relative.mean_iterations − absolute.mean_iterations`
    pub iteration_delta: f64,
    /// Samples where the relative rule used more iterations than the absolute one.
    pub relative_exceeds_absolute: Vec<usize>,
}

/// Evaluates the same weights under two stopping rules.
pub fn ablation_relative_tolerance(
    model: &Model<f64>,
    samples: &[Sample],
    absolute: &SolverConfig,
    relative: &SolverConfig,
) -> Result<AblationReport> {
    let layouts = layouts(samples)?;
    let abs = evaluate_layouts(model, samples, &layouts, &Inference::Equilibrium(absolute.clone()))?;
    let rel = evaluate_layouts(model, samples, &layouts, &Inference::Equilibrium(relative.clone()))?;
    let exceeds = abs
        .samples
        .iter()
        .zip(&rel.samples)
        .filter(|(a, r)| r.iterations > a.iterations)
        .map(|(a, _)| a.index)
        .collect();
    Ok(AblationReport {
        accuracy_delta: rel.accuracy - abs.accuracy,
        iteration_delta: rel.mean_iterations - abs.mean_iterations,
        relative_exceeds_absolute: exceeds,
        absolute: abs,
        relative: rel,
    })
}
