//! `dualcam gen-data`: render a synthetic dataset.

use std::path::Path;

use dualcam_core::io::{sample_dir_name, write_sample};
use dualcam_core::rng::derive_seed;
use dualcam_core::synth::{make_sample, random_scene};

use super::prepare_out_dir;
use crate::config::{invalid, load, GenDataConfig};
use crate::manifest::{now, RunManifest};
use crate::{CliError, CliResult};

pub fn run(config: Option<&Path>, out: &Path, seed: Option<u64>, count: Option<usize>) -> CliResult<String> {
    let started = now();
    let mut cfg: GenDataConfig = load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(c) = count {
        cfg.count = c;
    }
    cfg.validate().map_err(|e| invalid(config, e))?;
    prepare_out_dir(out)?;
    let mut manifest = RunManifest::new("gen-data", &cfg, cfg.seed, started);
    for i in 0..cfg.count {
        let spec = random_scene(&cfg.scene, derive_seed(cfg.seed, i as u64));
        let sample = make_sample(&spec).map_err(|e| CliError::Runtime(format!("sample {i}: {e}")))?;
        let name = sample_dir_name(i);
        write_sample(&out.join(&name), &sample).map_err(|e| CliError::Runtime(e.to_string()))?;
        manifest.artifacts.push(name);
    }
    manifest.finish(out)?;
    Ok(format!("wrote {} samples to {}\n", cfg.count, out.display()))
}
