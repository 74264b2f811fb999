//! Labeled dataset export: one directory per episode holding the trace as
//! JSON and one observation buffer per step.
//!
//! ```text
//! <root>/manifest.toml
//! <root>/episode_0000/trace.json
//! <root>/episode_0000/step_00.bagb
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::{EpisodeTrace, OBSERVATION_CHANNELS};
use crate::config::BenchConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEpisode {
    pub dir: String,
    pub seed: u64,
    pub n_rigid: usize,
    pub n_cloth: usize,
    pub steps: usize,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub observation_channels: usize,
    pub config: BenchConfig,
    pub episodes: Vec<ManifestEpisode>,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `traces` under `root`. Every trace must carry one observation per
/// step (see `EpisodeOptions::keep_observations`).
pub fn export_dataset(root: &Path, traces: &[EpisodeTrace], config: &BenchConfig) -> Result<Manifest> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut episodes = Vec::with_capacity(traces.len());
    for (k, trace) in traces.iter().enumerate() {
        if trace.observations.len() != trace.steps.len() {
            return Err(Error::InvalidArgument(format!(
                "episode {k} has {} observations for {} steps",
                trace.observations.len(),
                trace.steps.len()
            )));
        }
        let name = format!("episode_{k:04}");
        let dir = root.join(&name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let json = serde_json::to_vec_pretty(trace).map_err(|e| Error::Format(e.to_string()))?;
        write(&dir.join("trace.json"), &json)?;
        for (i, obs) in trace.observations.iter().enumerate() {
            write(&dir.join(format!("step_{i:02}.bagb")), &obs.to_bytes())?;
        }
        episodes.push(ManifestEpisode {
            dir: name,
            seed: trace.task.seed,
            n_rigid: trace.task.n_rigid,
            n_cloth: trace.task.n_cloth,
            steps: trace.steps.len(),
            success: trace.success,
        });
    }
    let manifest = Manifest {
        format_version: DATASET_VERSION,
        observation_channels: OBSERVATION_CHANNELS,
        config: config.clone(),
        episodes,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    write(&root.join("manifest.toml"), text.as_bytes())?;
    Ok(manifest)
}

/// Reads a dataset written by [`export_dataset`], observations included.
pub fn read_dataset(root: &Path) -> Result<(Manifest, Vec<EpisodeTrace>)> {
    let path = root.join("manifest.toml");
    let text = String::from_utf8(read(&path)?).map_err(|e| Error::Format(e.to_string()))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if manifest.format_version != DATASET_VERSION {
        return Err(Error::Format(format!(
            "dataset version {} is not supported (expected {DATASET_VERSION})",
            manifest.format_version
        )));
    }
    let mut traces = Vec::with_capacity(manifest.episodes.len());
    for entry in &manifest.episodes {
        let dir = root.join(&entry.dir);
        let mut trace: EpisodeTrace =
            serde_json::from_slice(&read(&dir.join("trace.json"))?).map_err(|e| Error::Format(e.to_string()))?;
        if trace.steps.len() != entry.steps {
            return Err(Error::Format(format!(
                "{}: manifest lists {} steps, trace has {}",
                entry.dir,
                entry.steps,
                trace.steps.len()
            )));
        }
        trace.observations = (0..entry.steps)
            .map(|i| Tensor::from_bytes(&read(&dir.join(format!("step_{i:02}.bagb")))?))
            .collect::<Result<_>>()?;
        traces.push(trace);
    }
    Ok((manifest, traces))
}
