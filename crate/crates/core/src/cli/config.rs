//! Run configuration files: a JSON document with optional sections that
//! override a scale preset.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::deq::{BackwardConfig, JacRegConfig, SolverConfig, StopMode};
use crate::error::{Error, Result};
use crate::graph_data::{Algorithm, DatasetSpec, Split, SplitCounts};
use crate::model::ModelConfig;
use crate::train::{Mode, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 5000 training samples, d = 64, 20 epochs.
    #[default]
    Desk,
    /// 100000 training samples, d = 128, 100 epochs.
    Paper,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub algorithm: Option<Algorithm>,
    /// Directory holding (or receiving) the JSONL splits. Without it the
    /// splits are generated in memory from the spec.
    pub dir: Option<PathBuf>,
    pub train: Option<usize>,
    pub val: Option<usize>,
    pub test: Option<usize>,
    pub train_sizes: Option<(usize, usize)>,
    pub val_size: Option<usize>,
    pub test_size: Option<usize>,
    pub edge_probabilities: Option<Vec<f64>>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub latent_dim: Option<usize>,
    pub message_hidden_layers: Option<usize>,
    pub message_hidden_width: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub mode: Option<Mode>,
    pub backward: Option<BackwardConfig>,
    pub jac_reg: Option<JacRegConfig>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub checkpoint: Option<PathBuf>,
    pub split: Split,
    /// Write per-sample predictions next to the report.
    pub dump_predictions: bool,
    /// Use a fixed unroll instead of the solver; `unroll_steps` defaults to `n`.
    pub unroll: bool,
    pub unroll_steps: Option<usize>,
    pub repetitions: usize,
    /// Include layout construction and encoding in timings.
    pub end_to_end: bool,
    pub absolute_epsilon: f64,
    pub relative_epsilon: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            split: Split::Test,
            dump_predictions: false,
            unroll: false,
            unroll_steps: None,
            repetitions: 5,
            end_to_end: false,
            absolute_epsilon: 1e-3,
            relative_epsilon: 0.1,
        }
    }
}

/// The document as written by the user. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub solver: Option<SolverConfig>,
    pub train: TrainSection,
    pub eval: EvalSection,
}

/// A parsed configuration plus the JSON it came from, kept for provenance.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub file: RunConfigFile,
    pub raw: Value,
}

impl LoadedConfig {
    pub fn empty() -> Self {
        Self {
            file: RunConfigFile::default(),
            raw: Value::Object(Default::default()),
        }
    }

    pub fn from_str(text: &str) -> Result<Self> {
        let raw: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        let file = serde_json::from_value(raw.clone()).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self { file, raw })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Everything a command needs, after applying preset, file and flags.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub preset: Preset,
    pub dataset: DatasetSpec,
    pub dataset_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub algorithm: Option<Algorithm>,
}

pub fn resolve(cfg: &RunConfigFile, flags: &Overrides) -> Result<Resolved> {
    let preset = flags.preset.unwrap_or_default();
    let ds = &cfg.dataset;
    let algorithm = flags
        .algorithm
        .or(ds.algorithm)
        .ok_or_else(|| Error::Config("no algorithm given (use --algorithm or dataset.algorithm)".into()))?;
    if let (Some(a), Some(b)) = (flags.algorithm, ds.algorithm) {
        if a != b {
            return Err(Error::Config(format!("--algorithm {a} conflicts with dataset.algorithm {b}")));
        }
    }
    let seed = flags.seed.or(ds.seed).unwrap_or(0);
    let mut dataset = match preset {
        Preset::Desk => DatasetSpec::desk(algorithm, seed),
        Preset::Paper => DatasetSpec::paper(algorithm, seed),
    };
    let counts = SplitCounts {
        train: ds.train.unwrap_or(dataset.counts.train),
        val: ds.val.unwrap_or(dataset.counts.val),
        test: ds.test.unwrap_or(dataset.counts.test),
    };
    dataset.counts = counts;
    if let Some(s) = ds.train_sizes {
        dataset.train_sizes = s;
    }
    if let Some(s) = ds.val_size {
        dataset.val_size = s;
    }
    if let Some(s) = ds.test_size {
        dataset.test_size = s;
    }
    if let Some(p) = &ds.edge_probabilities {
        dataset.edge_probabilities = p.clone();
    }
    dataset.validate()?;

    let mut model = ModelConfig::new(
        algorithm,
        match preset {
            Preset::Desk => 64,
            Preset::Paper => 128,
        },
    );
    let m = &cfg.model;
    if let Some(d) = m.latent_dim {
        model.latent_dim = d;
    }
    if let Some(l) = m.message_hidden_layers {
        model.message_hidden_layers = l;
    }
    if let Some(w) = m.message_hidden_width {
        model.message_hidden_width = w;
    }
    model.validate()?;

    let mut train = match preset {
        Preset::Desk => TrainConfig::desk(),
        Preset::Paper => TrainConfig::default(),
    };
    let t = &cfg.train;
    train.epochs = t.epochs.unwrap_or(train.epochs);
    train.batch_size = t.batch_size.unwrap_or(train.batch_size);
    train.learning_rate = t.learning_rate.unwrap_or(train.learning_rate);
    train.mode = t.mode.unwrap_or(train.mode);
    if let Some(b) = &t.backward {
        train.backward = b.clone();
    }
    if let Some(j) = &t.jac_reg {
        train.jac_reg = j.clone();
    }
    if let Some(s) = &cfg.solver {
        train.solver = s.clone();
    }
    train.seed = flags.seed.or(t.seed).unwrap_or(seed);
    train.validate()?;

    let eval = cfg.eval.clone();
    if eval.repetitions == 0 {
        return Err(Error::Config("eval.repetitions must be at least 1".into()));
    }
    if !(eval.absolute_epsilon > 0.0 && eval.relative_epsilon > 0.0) {
        return Err(Error::Config("ablation tolerances must be positive".into()));
    }
    Ok(Resolved {
        preset,
        dataset,
        dataset_dir: ds.dir.clone(),
        model,
        train,
        eval,
    })
}

impl Resolved {
    /// Solver used for the absolute side of the ablation.
    pub fn absolute_solver(&self) -> SolverConfig {
        self.train
            .solver
            .clone()
            .with_tolerance(StopMode::Absolute, self.eval.absolute_epsilon)
    }

    pub fn relative_solver(&self) -> SolverConfig {
        self.train
            .solver
            .clone()
            .with_tolerance(StopMode::Relative, self.eval.relative_epsilon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(alg: Algorithm) -> Overrides {
        Overrides {
            algorithm: Some(alg),
            ..Overrides::default()
        }
    }

    #[test]
    fn empty_document_gives_desk_defaults() {
        let c = LoadedConfig::from_str("{}").unwrap();
        let r = resolve(&c.file, &flags(Algorithm::BellmanFord)).unwrap();
        assert_eq!(r.dataset.counts.train, 5000);
        assert_eq!(r.model.latent_dim, 64);
        assert_eq!(r.train.epochs, 20);
        assert_eq!(r.train.batch_size, 32);
        assert_eq!(r.train.learning_rate, 3e-4);
        assert_eq!(r.train.solver, SolverConfig::absolute());
    }

    #[test]
    fn paper_preset_scales() {
        let r = resolve(
            &RunConfigFile::default(),
            &Overrides {
                preset: Some(Preset::Paper),
                ..flags(Algorithm::Scc)
            },
        )
        .unwrap();
        assert_eq!(
            (r.dataset.counts.train, r.dataset.counts.val, r.dataset.counts.test),
            (100_000, 100, 100)
        );
        assert_eq!(r.model.latent_dim, 128);
        assert_eq!(r.train.epochs, 100);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(LoadedConfig::from_str(r#"{"datset": {}}"#).is_err());
        assert!(LoadedConfig::from_str(r#"{"train": {"epoch": 3}}"#).is_err());
        assert!(LoadedConfig::from_str(r#"{"solver": {"tolerance": 3}}"#).is_err());
    }

    #[test]
    fn sections_override_preset() {
        let c = LoadedConfig::from_str(
            r#"{"dataset": {"algorithm": "insertion_sort", "train": 10, "test_size": 32},
                "model": {"latent_dim": 8},
                "solver": {"stop_mode": "relative", "epsilon": 0.1},
                "train": {"epochs": 2, "mode": "nar_baseline"}}"#,
        )
        .unwrap();
        let r = resolve(&c.file, &Overrides::default()).unwrap();
        assert_eq!(r.dataset.algorithm, Algorithm::InsertionSort);
        assert_eq!(r.dataset.counts.train, 10);
        assert_eq!(r.dataset.test_size, 32);
        assert_eq!(r.model.latent_dim, 8);
        assert_eq!(r.train.solver.stop_mode, StopMode::Relative);
        assert_eq!(r.train.solver.max_iters, 32);
        assert_eq!(r.train.mode, Mode::NarBaseline);
        assert_eq!(r.train.epochs, 2);
    }

    #[test]
    fn seed_flag_wins() {
        let c = LoadedConfig::from_str(r#"{"dataset": {"seed": 4}, "train": {"seed": 5}}"#).unwrap();
        let r = resolve(
            &c.file,
            &Overrides {
                seed: Some(9),
                ..flags(Algorithm::Scc)
            },
        )
        .unwrap();
        assert_eq!((r.dataset.seed, r.train.seed), (9, 9));
    }

    #[test]
    fn missing_or_conflicting_algorithm() {
        assert!(resolve(&RunConfigFile::default(), &Overrides::default()).is_err());
        let c = LoadedConfig::from_str(r#"{"dataset": {"algorithm": "scc"}}"#).unwrap();
        assert!(resolve(&c.file, &flags(Algorithm::BellmanFord)).is_err());
    }

    #[test]
    fn raw_document_is_kept() {
        let text = r#"{"train": {"epochs": 3}, "eval": {"repetitions": 2}}"#;
        let c = LoadedConfig::from_str(text).unwrap();
        assert_eq!(c.raw, serde_json::from_str::<Value>(text).unwrap());
    }
}
