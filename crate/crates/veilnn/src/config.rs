//! Run configuration: one JSON document describing the model, the training
//! plan, the masking knobs, the worker pool, the dataset, and where outputs
//! go. Every artifact a run writes is a deterministic function of (config,
//! seed), so the fully-resolved config saved as `run.json` replays the run
//! byte-for-byte.
//!
//! The seed and the arithmetic width live at the top level rather than
//! inside a section: they are the two fields command-line flags override,
//! and everything that consumes them (weight init, data order, schemes,
//! noise, fault draws, quantization) must agree on a single value.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coding::DEFAULT_C_MIN;
use crate::dataset::{load_dataset, DataSource, Dataset, DatasetSpec};
use crate::engine::IntegrityPolicy;
use crate::error::{Error, Result};
use crate::nn::layer::LayerSpec;
use crate::nn::model::Model;
use crate::nn::train::TrainConfig;
use crate::protocol::worker::WorkerProfile;
use crate::protocol::{default_tau, Assignment, SessionConfig};
use crate::tensor::Precision;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub layers: Vec<LayerSpec>,
    pub in_shape: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            layers: vec![
                LayerSpec::Dense { in_dim: 8, out_dim: 16 },
                LayerSpec::Relu,
                LayerSpec::Dense { in_dim: 16, out_dim: 2 },
            ],
            in_shape: vec![8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Optional hard cap on SGD steps across all epochs.
    pub max_steps: Option<usize>,
    /// Snapshot all parameters after every step (tiny models only).
    pub track_trajectory: bool,
    /// What to do when an integrity check fails mid-run.
    pub integrity_policy: IntegrityPolicy,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 8,
            epochs: 3,
            max_steps: None,
            track_trajectory: false,
            integrity_policy: IntegrityPolicy::Abort,
        }
    }
}

/// Masking and verification knobs (the session-level privacy posture).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacySection {
    /// Real samples per virtual batch.
    pub k: usize,
    /// Noise tensors mixed into each virtual batch.
    pub m: usize,
    /// Redundant masked tensors per group (0 disables integrity checks).
    pub ext: usize,
    /// Masking-noise variance.
    pub sigma2: f64,
    /// Masking-noise mean.
    pub noise_mean: f64,
    /// Verification tolerance; `None` picks the per-precision default.
    pub tau: Option<f64>,
    /// Noise-coefficient floor for scheme generation.
    pub c_min: f64,
    /// Ship raw per-sample gradients plus combination rows to workers
    /// instead of combining on the coordinator (weaker secrecy boundary).
    pub offload_grad_combine: bool,
    /// Identity mixing, debug baseline only: workers see raw sources.
    pub identity_scheme: bool,
    /// How masked tensors map onto workers.
    pub assignment: Assignment,
}

impl Default for PrivacySection {
    fn default() -> Self {
        Self {
            k: 2,
            m: 1,
            ext: 1,
            sigma2: 1e8,
            noise_mean: 0.0,
            tau: None,
            c_min: DEFAULT_C_MIN,
            offload_grad_combine: false,
            identity_scheme: false,
            assignment: Assignment::Identity,
        }
    }
}

/// Worker pool description: honest workers by default, explicit profiles
/// for fault and collusion experiments.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkersSection {
    /// Pool size; `None` means exactly as many as the session needs.
    pub count: Option<usize>,
    /// Explicit per-worker behaviors; wins over `count` when present.
    pub profiles: Option<Vec<WorkerProfile>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Output directory; `None` means the current directory.
    pub dir: Option<String>,
    /// Write the full message transcript (JSONL) next to the metrics.
    pub transcript: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: None, transcript: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// The run seed: weight init, data order, schemes, noise, fault draws.
    pub seed: u64,
    /// Arithmetic width for every quantization point in the run.
    pub precision: Precision,
    pub model: ModelSection,
    pub train: TrainSection,
    pub privacy: PrivacySection,
    pub workers: WorkersSection,
    pub dataset: DatasetSpec,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F64,
            model: ModelSection::default(),
            train: TrainSection::default(),
            privacy: PrivacySection::default(),
            workers: WorkersSection::default(),
            dataset: DatasetSpec {
                source: DataSource::SyntheticBlobs {
                    classes: 2,
                    dim: 8,
                    per_class: 64,
                    separation: 4.0,
                    seed: 7,
                },
                val_fraction: 0.25,
                split_seed: 1,
            },
            output: OutputSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Parse and validate a config document. Unknown section keys are
    /// rejected — a typo should fail loudly, not silently fall back to a
    /// default.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.layers.is_empty() {
            return Err(Error::Config("model.layers must not be empty".into()));
        }
        if self.model.in_shape.is_empty() {
            return Err(Error::Config("model.in_shape must not be empty".into()));
        }
        self.train_config().validate()?;
        self.session_config().validate()?;
        if let Some(profiles) = &self.workers.profiles {
            for p in profiles {
                p.validate()?;
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            max_steps: self.train.max_steps,
            precision: self.precision,
            seed: self.seed,
            track_trajectory: self.train.track_trajectory,
        }
    }

    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            k: self.privacy.k,
            m: self.privacy.m,
            ext: self.privacy.ext,
            sigma2: self.privacy.sigma2,
            noise_mean: self.privacy.noise_mean,
            tau: self.privacy.tau.unwrap_or_else(|| default_tau(self.precision)),
            precision: self.precision,
            seed: self.seed,
            c_min: self.privacy.c_min,
            offload_grad_combine: self.privacy.offload_grad_combine,
            identity_scheme: self.privacy.identity_scheme,
            assignment: self.privacy.assignment,
        }
    }

    pub fn worker_profiles(&self) -> Vec<WorkerProfile> {
        match &self.workers.profiles {
            Some(p) => p.clone(),
            None => {
                let n = self
                    .workers
                    .count
                    .unwrap_or_else(|| self.session_config().workers_needed());
                (0..n).map(WorkerProfile::honest).collect()
            }
        }
    }

    pub fn build_model(&self) -> Result<Model> {
        Model::init(self.model.layers.clone(), &self.model.in_shape, self.seed)
    }

    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        load_dataset(&self.dataset)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.output.dir.as_deref().unwrap_or(".").into()
    }

    /// The replay capture (`run.json`): the fully-resolved config with every
    /// default expanded and every override already applied.
    pub fn to_run_json(&self) -> Result<String> {
        crate::jsonfmt::to_string(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_resolves_to_the_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let s = cfg.session_config();
        assert_eq!((s.k, s.m, s.ext), (2, 1, 1));
        assert_eq!(s.sigma2, 1e8);
        assert_eq!(s.tau, 1e-6);
        assert_eq!(cfg.worker_profiles().len(), 4);
    }

    #[test]
    fn resolved_config_round_trips_through_run_json() {
        let mut cfg = RunConfig { seed: 99, ..RunConfig::default() };
        cfg.privacy.sigma2 = 2.5e7;
        cfg.train.max_steps = Some(12);
        let text = cfg.to_run_json().unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        // And the rendering itself is stable.
        assert_eq!(back.to_run_json().unwrap(), text);
    }

    #[test]
    fn seed_and_precision_flow_into_every_section() {
        let cfg = RunConfig::from_json(r#"{"seed": 41, "precision": "f32"}"#).unwrap();
        assert_eq!(cfg.train_config().seed, 41);
        assert_eq!(cfg.session_config().seed, 41);
        assert_eq!(cfg.session_config().precision, Precision::F32);
        // f32 runs get the looser default tolerance automatically.
        assert_eq!(cfg.session_config().tau, 1e-2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"trian": {}}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err:?}");
        let err =
            RunConfig::from_json(r#"{"train": {"learning_rte": 0.1}}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err:?}");
    }

    #[test]
    fn invalid_section_values_fail_validation() {
        let err = RunConfig::from_json(r#"{"train": {"batch_size": 0}}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err:?}");
        let err = RunConfig::from_json(r#"{"privacy": {"m": 0}}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err:?}");
    }

    #[test]
    fn explicit_profiles_win_over_count() {
        let cfg = RunConfig::from_json(
            r#"{"workers": {"count": 9, "profiles": [
                {"worker_id": 0, "behavior": {"kind": "honest"}},
                {"worker_id": 1, "behavior": {"kind": "faulty",
                    "perturbation_scale": 0.01, "fault_probability": 0.5}}
            ]}}"#,
        )
        .unwrap();
        let profiles = cfg.worker_profiles();
        assert_eq!(profiles.len(), 2);
        assert_eq!(profiles[0], WorkerProfile::honest(0));
    }

    #[test]
    fn dataset_section_parses_each_source_kind() {
        let cfg = RunConfig::from_json(
            r#"{"dataset": {"kind": "csv", "path": "data.csv", "val_fraction": 0.2}}"#,
        )
        .unwrap();
        assert!(matches!(cfg.dataset.source, DataSource::Csv { .. }));
        let cfg = RunConfig::from_json(
            r#"{"dataset": {"kind": "idx", "images": "i.idx", "labels": "l.idx"}}"#,
        )
        .unwrap();
        assert!(matches!(cfg.dataset.source, DataSource::Idx { .. }));
    }
}
