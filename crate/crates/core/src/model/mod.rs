//! Encode-process-decode pointer model.
//!
//! Raw node and pair features are linearly encoded once per instance
//! ([`encode`]), the gated max-aggregation processor ([`processor`]) updates a
//! latent state per node, and pointer decoders ([`decode`]) score candidate
//! targets with a bilinear form.

pub mod decode;
pub mod encode;
pub mod processor;

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_data::Algorithm;
use crate::numeric::{LinearLayer, Mlp, ParamStore, ParamsRecord};
use crate::scalar::Scalar;

pub use decode::{decode_logits, pointer_accuracy, pointer_loss, predictions, PointerLogits};
pub use encode::{encode, EncodedInstance, InstanceLayout};
pub use processor::{processor_step, unroll, StepInputs};

pub const CHECKPOINT_FORMAT: &str = "dear-model";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub algorithm: Algorithm,
    pub latent_dim: usize,
    /// Hidden layers of the message MLP.
    pub message_hidden_layers: usize,
    /// Width of each message hidden layer; `0` means "same as latent_dim".
    pub message_hidden_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::BellmanFord,
            latent_dim: 128,
            message_hidden_layers: 2,
            message_hidden_width: 0,
        }
    }
}

impl ModelConfig {
    pub fn new(algorithm: Algorithm, latent_dim: usize) -> Self {
        Self {
            algorithm,
            latent_dim,
            ..Self::default()
        }
    }

    pub fn hidden_width(&self) -> usize {
        if self.message_hidden_width == 0 {
            self.latent_dim
        } else {
            self.message_hidden_width
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be at least 1".into()));
        }
        if self.message_hidden_layers == 0 {
            return Err(Error::Config("the message MLP needs at least one hidden layer".into()));
        }
        Ok(())
    }
}

/// Message, readout and gate functions of the processor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessorParams {
    /// Input `[z_i, z_j, e_ij]` of width `2·2d + d`.
    pub message: Mlp,
    /// Input `[z_i, m_i]` of width `2d + d`.
    pub readout: LinearLayer,
    pub gate: LinearLayer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecoderParams {
    /// `score(u→v) = ⟨φ(h_u), ψ(h_v)⟩`
    Node { source: LinearLayer, target: LinearLayer },
    /// `score((i,j)→k) = ⟨φₑ(h_i ∥ h_j), ψₑ(h_k)⟩`
    Edge { source: LinearLayer, target: LinearLayer },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelLayers {
    pub node_encoder: LinearLayer,
    pub edge_encoder: LinearLayer,
    pub processor: ProcessorParams,
    pub decoder: DecoderParams,
}

/// Model weights together with their layer map.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub layers: ModelLayers,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.latent_dim;
        let alg = config.algorithm;
        let node_encoder = LinearLayer::new(&mut store, "node_encoder", alg.node_raw_dim(), d, &mut rng);
        let edge_encoder = LinearLayer::new(&mut store, "edge_encoder", alg.edge_raw_dim(), d, &mut rng);
        let mut dims = vec![5 * d];
        dims.extend(std::iter::repeat_n(config.hidden_width(), config.message_hidden_layers));
        dims.push(d);
        let message = Mlp::new(&mut store, "processor.message", &dims, &mut rng);
        let readout = LinearLayer::new(&mut store, "processor.readout", 3 * d, d, &mut rng);
        let gate = LinearLayer::new(&mut store, "processor.gate", 3 * d, d, &mut rng);
        let decoder = if alg.uses_edge_pointers() {
            DecoderParams::Edge {
                source: LinearLayer::new(&mut store, "decoder.edge_source", 2 * d, d, &mut rng),
                target: LinearLayer::new(&mut store, "decoder.edge_target", d, d, &mut rng),
            }
        } else {
            DecoderParams::Node {
                source: LinearLayer::new(&mut store, "decoder.node_source", d, d, &mut rng),
                target: LinearLayer::new(&mut store, "decoder.node_target", d, d, &mut rng),
            }
        };
        Ok(Self {
            config,
            params: store,
            layers: ModelLayers {
                node_encoder,
                edge_encoder,
                processor: ProcessorParams {
                    message,
                    readout,
                    gate,
                },
                decoder,
            },
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params: self.params.to_record(),
        }
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let mut model = Self::new(ckpt.config.clone(), 0)?;
        model.params.load_record(&ckpt.params)?;
        Ok(model)
    }
}

/// Serialized model: configuration header plus the parameter map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCheckpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub params: ParamsRecord,
}

impl ModelCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_shapes() {
        let m = Model::<f64>::new(ModelConfig::new(Algorithm::BellmanFord, 8), 0).unwrap();
        let shape = |name: &str| m.params.get(m.params.find(name).unwrap()).value.shape().to_vec();
        assert_eq!(shape("node_encoder.weight"), vec![8, 2]);
        assert_eq!(shape("processor.message.0.weight"), vec![8, 40]);
        assert_eq!(shape("processor.message.2.weight"), vec![8, 8]);
        assert_eq!(shape("processor.readout.weight"), vec![8, 24]);
        assert_eq!(shape("processor.gate.weight"), vec![8, 24]);
        assert!(m.params.find("decoder.node_source.weight").is_some());
        let fw = Model::<f64>::new(ModelConfig::new(Algorithm::FloydWarshall, 8), 0).unwrap();
        let w = fw.params.find("decoder.edge_source.weight").unwrap();
        assert_eq!(fw.params.get(w).value.shape(), &[8, 16]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = Model::<f64>::new(ModelConfig::new(Algorithm::Scc, 4), 9).unwrap();
        let json = serde_json::to_string(&m.to_checkpoint()).unwrap();
        let back = Model::<f64>::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.params.fingerprint(), m.params.fingerprint());
        assert_eq!(back.config, m.config);
    }

    #[test]
    fn zero_latent_dim_rejected() {
        assert!(Model::<f64>::new(ModelConfig::new(Algorithm::Scc, 0), 0).is_err());
    }
}
