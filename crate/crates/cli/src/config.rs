//! Per-command TOML configs. Every field has a default; unknown fields are
//! rejected with their path.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use dualcam_core::synth::{MotionLabel, SceneConfig};
use dualcam_model::sampler::ConditionMotion;
use dualcam_model::train::TrainConfig;

use crate::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub count: usize,
    pub seed: u64,
    pub scene: SceneConfig,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            count: 8,
            seed: 0,
            scene: SceneConfig::default(),
        }
    }
}

impl GenDataConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.scene.validate().map_err(|e| format!("scene: {e}"))
    }
}

/// Strokes drawn over the first frame of an existing sample, which supplies
/// the image, depth, object masks and camera path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserCondition {
    /// Sample directory providing the scene.
    pub scene: PathBuf,
    /// One position per frame for each stroke, in pixels.
    pub strokes: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    pub label: Option<MotionLabel>,
    #[serde(default)]
    pub max_tracks: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub steps: usize,
    pub seed: u64,
    /// Dataset whose samples are regenerated under their own conditions.
    pub dataset: Option<PathBuf>,
    /// Sample indices to regenerate; empty means all.
    pub samples: Vec<usize>,
    /// Which ground-truth tracks condition the canonical stream.
    pub motion: ConditionMotion,
    /// User strokes instead of dataset regeneration.
    pub user: Option<UserCondition>,
    /// Also write PNG frames next to the raw tensors.
    pub export_png: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            steps: 20,
            seed: 0,
            dataset: None,
            samples: Vec::new(),
            motion: ConditionMotion::Active,
            user: None,
            export_png: false,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.steps == 0 {
            return Err("steps: must be positive".into());
        }
        if self.dataset.is_none() && self.user.is_none() {
            return Err("dataset: required unless a [user] condition is given".into());
        }
        Ok(())
    }
}

/// Reads `path` as TOML into `T`, or returns `T::default()` without a path.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| CliError::Invalid(format!("invalid config {}: {e}", path.display())))
}

/// Parses TOML text, naming the offending field path on failure.
pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    let de = toml::de::Deserializer::parse(text).map_err(|e| e.message().to_string())?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let msg = e.inner().message().to_string();
        if path == "." {
            msg
        } else {
            format!("{path}: {msg}")
        }
    })
}

/// Prefixes a validation message with the config file it came from.
pub fn invalid(path: Option<&Path>, msg: String) -> CliError {
    match path {
        Some(p) => CliError::Invalid(format!("invalid config {}: {msg}", p.display())),
        None => CliError::Invalid(format!("invalid config: {msg}")),
    }
}

/// Validates a training config, naming the section of the failing field.
pub fn validate_train(tc: &TrainConfig) -> Result<(), String> {
    if let Err(e) = tc.model.validate() {
        return Err(format!("model: {e}"));
    }
    tc.validate()
}
