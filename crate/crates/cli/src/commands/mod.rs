//! One module per subcommand.

pub mod eval;
pub mod gen_data;
pub mod inspect;
pub mod sample;
pub mod train;

use std::fs;
use std::path::Path;

use dualcam_core::io::IoError;

use crate::{CliError, CliResult};

/// Creates `out`, refusing a non-empty existing directory so that stale
/// artifacts never mix with a new run.
pub(crate) fn prepare_out_dir(out: &Path) -> CliResult<()> {
    if out.exists() {
        let mut entries = fs::read_dir(out).map_err(|e| CliError::Invalid(format!("{}: {e}", out.display())))?;
        if entries.next().is_some() {
            return Err(CliError::Invalid(format!("output directory {} is not empty", out.display())));
        }
    }
    fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))
}

/// Read-side I/O problems are invalid input.
pub(crate) fn input_error(e: IoError) -> CliError {
    CliError::Invalid(e.to_string())
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}
