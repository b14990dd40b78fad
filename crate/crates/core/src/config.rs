//! Run configuration. Every field has a default; a config file only lists
//! overrides, and unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::host::{HostInput, NnpnnConfig};
use crate::networks::{Connectivity, MetaConfig, NetTemplate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Learn `F(G(x), G)` with `G(F(G(x), G)) = G(x)`.
    #[default]
    Inverse,
    /// Learn a short code `F1(G)` and a decoder with `F2(x, F1(G)) = G(x)`.
    Compress,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Inverse => "inverse",
            Experiment::Compress => "compress",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HostSettings {
    pub phases: usize,
    pub queries: usize,
    pub width1: usize,
    pub width2: usize,
    pub append_phase_input: bool,
    /// Length of the trainable seed vector used when the host has no numeric input.
    pub seed_dim: usize,
}

impl Default for HostSettings {
    fn default() -> Self {
        Self {
            phases: 2,
            queries: 4,
            width1: 32,
            width2: 32,
            append_phase_input: false,
            seed_dim: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaSettings {
    pub meta_dim: usize,
    pub hidden: Vec<usize>,
    pub connectivity: Connectivity,
}

impl Default for MetaSettings {
    fn default() -> Self {
        Self {
            meta_dim: 16,
            hidden: vec![32, 32],
            connectivity: Connectivity::Dense,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub iterations: u64,
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    /// Independent (G, input) draws averaged per step.
    pub batch_size: usize,
    pub target: NetTemplate,
    pub host: HostSettings,
    /// Decoder settings; used by the compression experiment only.
    pub meta: MetaSettings,
    pub eval_every: u64,
    pub eval_trials: usize,
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Inverse,
            seed: 0,
            iterations: 100_000,
            lr: 2e-5,
            rho: 0.9,
            eps: 1e-8,
            batch_size: 1,
            target: NetTemplate::default(),
            host: HostSettings::default(),
            meta: MetaSettings::default(),
            eval_every: 1_000,
            eval_trials: 1_000,
            checkpoint_every: 10_000,
        }
    }
}

impl RunConfig {
    pub fn for_experiment(experiment: Experiment) -> Self {
        Self {
            experiment,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.eval_trials == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config(
                "batch_size, eval_every, eval_trials and checkpoint_every must be >= 1".into(),
            ));
        }
        self.target.validate()?;
        match self.experiment {
            Experiment::Inverse => self.host_config().validate(),
            Experiment::Compress => {
                let limit = self.target.min_param_count();
                if self.meta.meta_dim == 0 || self.meta.meta_dim >= limit {
                    return Err(Error::Config(format!(
                        "meta_dim {} must be >= 1 and smaller than the parameter count of every \
                         target network (minimum {limit})",
                        self.meta.meta_dim
                    )));
                }
                self.host_config().validate()?;
                self.meta_config().validate()
            }
        }
    }

    /// Host layout implied by the experiment and target template.
    pub fn host_config(&self) -> NnpnnConfig {
        let (input, output_dim) = match self.experiment {
            Experiment::Inverse => (
                HostInput::Numeric {
                    dim: self.target.output_dim,
                },
                self.target.input_dim,
            ),
            Experiment::Compress => (
                HostInput::Seed {
                    dim: self.host.seed_dim,
                },
                self.meta.meta_dim,
            ),
        };
        NnpnnConfig {
            input,
            phases: self.host.phases,
            queries: self.host.queries,
            width1: self.host.width1,
            width2: self.host.width2,
            query_dim: self.target.input_dim,
            read_dim: self.target.output_dim,
            output_dim,
            append_phase_input: self.host.append_phase_input,
        }
    }

    pub fn meta_config(&self) -> MetaConfig {
        MetaConfig {
            meta_dim: self.meta.meta_dim,
            input_dim: self.target.input_dim,
            output_dim: self.target.output_dim,
            hidden: self.meta.hidden.clone(),
            connectivity: self.meta.connectivity,
        }
    }
}
