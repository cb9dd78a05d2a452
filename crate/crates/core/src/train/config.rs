use serde::{Deserialize, Serialize};

use crate::deq::{BackwardConfig, JacRegConfig, SolverConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Equilibrium solving with implicit gradients.
    Dear,
    /// Fixed unroll of the processor with ordinary backprop.
    NarBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mode: Mode,
    pub solver: SolverConfig,
    pub backward: BackwardConfig,
    pub jac_reg: JacRegConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 3e-4,
            mode: Mode::Dear,
            solver: SolverConfig::absolute(),
            backward: BackwardConfig::default(),
            jac_reg: JacRegConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Laptop-scale schedule: 20 epochs, otherwise the defaults.
    pub fn desk() -> Self {
        Self {
            epochs: 20,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.jac_reg.weight < 0.0 {
            return Err(Error::Config("Jacobian regularization weight must be non-negative".into()));
        }
        self.solver.validate()
    }
}

/// How latent states are produced at inference time.
#[derive(Debug, Clone, PartialEq)]
pub enum Inference {
    /// Solve for the equilibrium.
    Equilibrium(SolverConfig),
    /// Run the processor a fixed number of steps from zero; `None` means `n`.
    Unroll(Option<usize>),
}

impl Inference {
    pub fn for_mode(mode: Mode, solver: &SolverConfig) -> Self {
        match mode {
            Mode::Dear => Inference::Equilibrium(solver.clone()),
            Mode::NarBaseline => Inference::Unroll(None),
        }
    }
}
