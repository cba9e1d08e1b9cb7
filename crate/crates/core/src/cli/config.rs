//! Run configuration. Values resolve as command-line flag, then config file,
//! then built-in default, and the effective result is echoed into every
//! manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow_match::FlowMatchConfig;
use crate::integrate::{IntegratorConfig, SampleVariant};
use crate::likelihood::LikelihoodConfig;
use crate::payoff::{Architecture, Context};

/// Payoff network shape; `n` and `c` come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub time_dim: usize,
    pub context: Context,
    pub node_id: bool,
    pub embed_dim: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: 32, time_dim: 16, context: Context::Concat, node_id: true, embed_dim: None }
    }
}

impl ModelConfig {
    pub fn architecture(&self, n: usize, c: usize) -> Architecture {
        Architecture {
            n,
            c,
            hidden: self.hidden,
            time_dim: self.time_dim,
            context: self.context,
            node_id: self.node_id,
            embed_dim: self.embed_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub count: usize,
    pub variant: SampleVariant,
    /// Also write the final chart states (`chart_states.afgx`).
    pub chart_states: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { count: 1000, variant: SampleVariant::Categorical, chart_states: false }
    }
}

/// Sweep over the number of classes with random factorizing targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassScalingConfig {
    pub n: usize,
    pub classes: Vec<usize>,
    /// Concentration of the per-node Dirichlet marginals.
    pub dirichlet_alpha: f64,
    pub train_size: usize,
    /// Model samples per entry of `classes`; a single value applies to all.
    pub sample_counts: Vec<usize>,
}

impl Default for ClassScalingConfig {
    fn default() -> Self {
        Self {
            n: 4,
            classes: vec![4, 16, 64],
            dirichlet_alpha: 1.0,
            train_size: 10_000,
            sample_counts: vec![512_000],
        }
    }
}

impl ClassScalingConfig {
    pub fn sample_count(&self, index: usize) -> usize {
        match self.sample_counts.as_slice() {
            [one] => *one,
            many => many[index],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.classes.is_empty() || self.classes.iter().any(|&c| c < 2) {
            return Err(Error::Config("class_scaling needs n ≥ 1 and classes ≥ 2".into()));
        }
        if self.sample_counts.len() != 1 && self.sample_counts.len() != self.classes.len() {
            return Err(Error::Config("sample_counts must have one entry or one per class count".into()));
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return Err(Error::Config("dirichlet_alpha must be positive".into()));
        }
        if self.train_size == 0 {
            return Err(Error::Config("train_size must be positive".into()));
        }
        Ok(())
    }
}

/// Everything a command may need. The top-level `seed` drives model
/// initialisation and sampling; `--seed` on the command line overrides it
/// together with `train.seed` and `likelihood.seed`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: FlowMatchConfig,
    pub integrator: IntegratorConfig,
    pub sample: SampleConfig,
    pub likelihood: LikelihoodConfig,
    pub class_scaling: ClassScalingConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Built-in defaults, overlaid by `path` when given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.likelihood.seed = seed;
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn seeds(&self) -> serde_json::Value {
        serde_json::json!({
            "seed": self.seed,
            "train": self.train.seed,
            "likelihood": self.likelihood.seed,
        })
    }
}
