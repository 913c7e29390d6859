//! Run configuration: strict JSON, unknown keys rejected.
//!
//! ```json
//! {
//!   "seed": 7,
//!   "task": "hand_hygiene",
//!   "dims": [224, 56, 14],
//!   "dcscn_dims": [56, 14],
//!   "privacy_policy": "strong",
//!   "data": { "instances": 2200, "train_fraction": 0.9090909, "mixture": "reference" },
//!   "sr": { "steps": 2000, "batch": 16, "lr": 0.001, "patches": 16000, "corpus_instances": 500 },
//!   "cls": { "steps": 400, "batch": 16, "lr": 0.002, "augment": true, "blocks": [16, 32, 64], "groups": 4 },
//!   "paths": { "work_dir": "run" }
//! }
//! ```
//! Every section and field is optional.

use std::fs;
use std::path::{Path, PathBuf};

use privis_core::synth::{GenMode, GenSpec, Mixture, Task, ViewMix};
use privis_core::PrivacyLevel;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub instances: usize,
    pub frames_per_instance: usize,
    pub mixture: Mixture,
    pub train_fraction: f64,
    pub view: ViewMix,
    pub noise_sigma_mm: f64,
    pub dropout: f64,
    pub side: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            instances: 2200,
            frames_per_instance: 1,
            mixture: Mixture::Reference,
            train_fraction: 0.9,
            view: ViewMix::Side,
            noise_sigma_mm: 4.0,
            dropout: 0.002,
            side: 224,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SrStageConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Training patch pairs drawn from the corpus.
    pub patches: usize,
    /// Frames in the generated super-resolution corpus.
    pub corpus_instances: usize,
}

impl Default for SrStageConfig {
    fn default() -> Self {
        SrStageConfig {
            steps: 2000,
            batch: 16,
            lr: 1e-3,
            patches: 16000,
            corpus_instances: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClsStageConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub augment: bool,
    pub blocks: Vec<usize>,
    pub groups: usize,
}

impl Default for ClsStageConfig {
    fn default() -> Self {
        ClsStageConfig {
            steps: 400,
            batch: 16,
            lr: 2e-3,
            augment: true,
            blocks: vec![16, 32, 64],
            groups: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub work_dir: Option<PathBuf>,
    /// Existing labeled manifest to use instead of generating one.
    pub manifest: Option<PathBuf>,
    /// Existing super-resolution corpus manifest.
    pub sr_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub task: Task,
    pub dims: Vec<usize>,
    /// Dims that also get an enhanced (DCSCN) cell.
    pub dcscn_dims: Vec<usize>,
    pub privacy_policy: PrivacyLevel,
    pub data: DataConfig,
    pub sr: SrStageConfig,
    pub cls: ClsStageConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            task: Task::HandHygiene,
            dims: vec![224, 56, 14],
            dcscn_dims: vec![56, 14],
            privacy_policy: PrivacyLevel::Strong,
            data: DataConfig::default(),
            sr: SrStageConfig::default(),
            cls: ClsStageConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let side = self.data.side;
        if self.dims.is_empty() {
            return Err(Error::Config("dims: at least one dimension is required".into()));
        }
        for &d in &self.dims {
            if d == 0 || d > side || side % d != 0 {
                return Err(Error::Config(format!("dims: {d} does not divide the frame side {side}")));
            }
        }
        for &d in &self.dcscn_dims {
            if !self.dims.contains(&d) {
                return Err(Error::Config(format!("dcscn_dims: {d} is not listed in dims")));
            }
            if d == side || !matches!(side / d, 4 | 16) {
                return Err(Error::Config(format!(
                    "dcscn_dims: {d} needs a x4 or x16 enhancement to reach {side}"
                )));
            }
        }
        if self.cls.batch == 0 || self.sr.batch == 0 {
            return Err(Error::Config("batch: must be positive".into()));
        }
        self.labeled_spec(0).validate()?;
        for p in [&self.paths.manifest, &self.paths.sr_manifest].into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Config(format!("paths: {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn labeled_spec(&self, seed: u64) -> GenSpec {
        let d = &self.data;
        GenSpec {
            task: self.task,
            instances: d.instances,
            frames_per_instance: d.frames_per_instance,
            mixture: d.mixture.clone(),
            train_fraction: d.train_fraction,
            seed,
            view: d.view,
            noise_sigma_mm: d.noise_sigma_mm,
            dropout: d.dropout,
            side: d.side,
            mode: GenMode::Labeled,
        }
    }

    pub fn sr_corpus_spec(&self, seed: u64) -> GenSpec {
        GenSpec {
            instances: self.sr.corpus_instances,
            mixture: Mixture::Uniform,
            view: ViewMix::Mixed,
            mode: GenMode::SrCorpus,
            ..self.labeled_spec(seed)
        }
    }
}
