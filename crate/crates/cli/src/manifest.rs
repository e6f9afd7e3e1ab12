//! Run manifests: one `manifest.json` per command output directory.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

pub const RUN_MANIFEST: &str = "manifest.json";
pub const RUN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    /// The fully defaulted config the command ran with.
    pub config: serde_json::Value,
    pub seed: u64,
    pub code_version: String,
    pub started: String,
    pub finished: String,
    /// Input artifacts the command read (datasets, checkpoints).
    pub inputs: Vec<String>,
    /// Output paths relative to the manifest's directory.
    pub artifacts: Vec<String>,
}

pub fn code_version() -> String {
    format!("dualcam {}", env!("CARGO_PKG_VERSION"))
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: u64, started: String) -> Self {
        Self {
            schema_version: RUN_SCHEMA_VERSION,
            command: command.into(),
            config: serde_json::to_value(config).expect("configs serialize"),
            seed,
            code_version: code_version(),
            started,
            finished: String::new(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    /// Stamps the finish time and writes `dir/manifest.json`.
    pub fn finish(mut self, dir: &Path) -> CliResult<Self> {
        self.finished = now();
        let path = dir.join(RUN_MANIFEST);
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(self)
    }

    /// Decodes the config snapshot back into its typed form.
    pub fn config_as<C: for<'de> Deserialize<'de>>(&self) -> Result<C, serde_json::Error> {
        serde_json::from_value(self.config.clone())
    }
}

pub fn read_run_manifest(dir: &Path) -> CliResult<RunManifest> {
    let path = dir.join(RUN_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let m: RunManifest =
        serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: not a run manifest: {e}", path.display())))?;
    if m.schema_version != RUN_SCHEMA_VERSION {
        return Err(CliError::Invalid(format!(
            "{}: unsupported schema version {} (this build reads {RUN_SCHEMA_VERSION})",
            path.display(),
            m.schema_version
        )));
    }
    Ok(m)
}
