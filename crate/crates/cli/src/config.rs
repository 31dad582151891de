//! The experiment configuration: one flat, typed key-value file.
//!
//! Defaults reproduce the desk-scale experiment (ten two-dimensional
//! subsystems in three clusters, 21 epochs of batch 100). CLI flags override
//! file values; the effective config is echoed into every output directory
//! and its SHA-256 hash is embedded in every artifact, so a run is
//! reproducible from the config file and seed alone.

use grnnctl_core::activation::{parse_activation, ActivationRef};
use grnnctl_core::graph::{
    generate_random_partition_graph, metropolis_hastings_weights, shift_operator, ConsensusMatrix,
    ShiftKind, ShiftOperator, Topology,
};
use grnnctl_core::stability::SearchBudget;
use grnnctl_core::system::{generate_system, NetworkedSystem};
use grnnctl_core::training::{
    GradientMode, LossConfig, RolloutMode, Schedule, TrainConfig,
};
use grnnctl_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream in a run derives from it.
    pub seed: u64,
    // -- topology --
    pub nodes: usize,
    pub clusters: usize,
    pub p_in: f64,
    pub p_out: f64,
    // -- plant --
    pub state_dim: usize,
    pub input_dim: usize,
    pub scale: f64,
    pub noise_std: f64,
    // -- controller --
    pub hidden_dim: usize,
    pub activation: String,
    pub shift: String,
    // -- training --
    pub epochs: usize,
    pub batch: usize,
    pub test_samples: usize,
    pub window: usize,
    pub eta0: f64,
    pub tau: f64,
    pub rollout: String,
    pub gradients: String,
    /// `matrix` (monolithic) or `message` (mailbox harness).
    pub engine: String,
    pub init_mean: f64,
    pub init_std: f64,
    /// Initial controller weights are U[0,1) entries scaled by this.
    pub init_weight_scale: f64,
    // -- evaluation --
    pub eval_horizon: usize,
    pub eval_samples: usize,
    // -- stability --
    /// Certified state box: every plant coordinate in [-state_box, state_box].
    pub state_box: f64,
    /// Strict-decrease margin of the certificate.
    pub epsilon: f64,
    pub refine_steps: usize,
    // -- scaling --
    pub scaling_epochs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            nodes: 10,
            clusters: 3,
            p_in: 0.8,
            p_out: 0.1,
            state_dim: 2,
            input_dim: 2,
            scale: 0.995,
            noise_std: 0.1,
            hidden_dim: 2,
            activation: "tanh".to_string(),
            shift: "normalized_adjacency".to_string(),
            epochs: 21,
            batch: 100,
            test_samples: 20,
            window: 10,
            eta0: 0.01,
            tau: 50.0,
            rollout: "continuing".to_string(),
            gradients: "truncated".to_string(),
            engine: "matrix".to_string(),
            init_mean: 2.0,
            init_std: 1.0,
            init_weight_scale: 0.1,
            eval_horizon: 50,
            eval_samples: 20,
            state_box: 3.0,
            epsilon: 1e-6,
            refine_steps: 40,
            scaling_epochs: 5,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::invalid(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("flat config serializes")
    }

    /// SHA-256 of the effective config text, hex-encoded.
    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.state_dim == 0 || self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::invalid("nodes and all dimensions must be positive"));
        }
        for (label, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{label} must be in [0, 1], got {p}")));
            }
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::invalid("scale must be positive"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be nonnegative"));
        }
        if self.window == 0 || self.batch == 0 {
            return Err(Error::invalid("window and batch must be positive"));
        }
        if !(self.state_box > 0.0 && self.state_box.is_finite()) {
            return Err(Error::invalid("state_box must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if !matches!(self.engine.as_str(), "matrix" | "message") {
            return Err(Error::invalid(format!(
                "engine must be 'matrix' or 'message', got '{}'",
                self.engine
            )));
        }
        // Parse-only checks so bad names die before any work happens.
        parse_activation(&self.activation)?;
        ShiftKind::parse(&self.shift)?;
        RolloutMode::parse(&self.rollout)?;
        GradientMode::parse(&self.gradients)?;
        Schedule::new(self.eta0, self.tau)?;
        Ok(())
    }

    pub fn build_topology(&self) -> Result<Topology> {
        generate_random_partition_graph(self.nodes, self.clusters, self.p_in, self.p_out, self.seed)
    }

    pub fn build_system(&self, topology: &Topology) -> Result<NetworkedSystem> {
        generate_system(
            topology,
            self.state_dim,
            self.input_dim,
            self.scale,
            self.noise_std,
            self.seed,
        )
    }

    pub fn activation(&self) -> Result<ActivationRef> {
        parse_activation(&self.activation)
    }

    pub fn shift_operator(&self, topology: &Topology) -> Result<ShiftOperator> {
        Ok(shift_operator(topology, ShiftKind::parse(&self.shift)?))
    }

    pub fn consensus(&self, topology: &Topology) -> Result<ConsensusMatrix> {
        metropolis_hastings_weights(topology)
    }

    pub fn loss(&self, nodes: usize) -> LossConfig {
        LossConfig::uniform_identity(nodes, self.state_dim, self.input_dim, self.window, self.batch)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.epochs,
            test_samples: self.test_samples,
            schedule: Schedule::new(self.eta0, self.tau)?,
            rollout: RolloutMode::parse(&self.rollout)?,
            gradients: GradientMode::parse(&self.gradients)?,
            init_mean: self.init_mean,
            init_std: self.init_std,
        })
    }

    pub fn search_budget(&self) -> SearchBudget {
        SearchBudget {
            refine_steps: self.refine_steps,
            ..SearchBudget::default()
        }
    }
}
