//! Batch pipeline behind the CLI: JSON manifests in, file artifacts out.
//!
//! Each stage of the filtering scheme (simulate, changemask, dataset, train,
//! despeckle, evaluate) is one command driven by a single JSON manifest.
//! Manifests are schema-checked before any work starts — unknown keys are
//! rejected and errors carry the JSON path of the offending field. Every
//! command writes a reproducibility record next to its primary output
//! (`<output>.run.json`) holding the command name, the manifest digest, the
//! seed and the list of files written; records carry no timestamps, so a
//! re-run with the same manifest is byte-identical end to end.
//!
//! Path resolution: paths inside a command manifest are resolved against the
//! process working directory, like any CLI argument. Paths inside a stack
//! index (`stack.json`) are resolved against the index's own directory, so a
//! simulated stack can be moved as a unit.

mod commands;
mod manifests;

pub use commands::{
    cmd_changemask, cmd_dataset, cmd_despeckle, cmd_evaluate, cmd_quicklook, cmd_simulate,
    cmd_train,
};
pub use manifests::{
    ChangemaskManifest, DatasetManifest, DespeckleManifest, EvaluateManifest, SimulateManifest,
    StackManifest, TrainManifest,
};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::TemporalStack;
use crate::util::fnv1a64_hex;

/// Parses a JSON manifest with unknown-key rejection, reporting schema
/// violations with the JSON path of the offending field. Also returns the
/// FNV-1a digest of the raw bytes for provenance records.
pub fn load_manifest<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(T, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = fnv1a64_hex(&bytes);
    let mut de = serde_json::Deserializer::from_slice(&bytes);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        detail: format!("at `{}`: {}", e.path(), e.inner()),
    })?;
    Ok((value, digest))
}

/// Reproducibility record written next to each command's primary output.
/// Deliberately timestamp-free: identical runs must produce identical bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    /// FNV-1a digest of the manifest file driving the run.
    pub manifest_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub version: String,
    pub threads: usize,
    /// Every file the command wrote, as given (or derived) path strings.
    pub outputs: Vec<String>,
}

impl RunRecord {
    fn new(command: &str, manifest_digest: String, seed: Option<u64>, threads: usize) -> Self {
        RunRecord {
            command: command.to_string(),
            manifest_digest,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            threads,
            outputs: Vec::new(),
        }
    }

    /// Writes the record as `<primary>.run.json`.
    fn write_next_to(&self, primary: &Path) -> Result<PathBuf> {
        let mut name = primary.as_os_str().to_os_string();
        name.push(".run.json");
        let path = PathBuf::from(name);
        let body = serde_json::to_string_pretty(self).expect("record serialization cannot fail");
        fs::write(&path, body + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Creates the parent directory of an output path if needed.
fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

/// Loads the epochs named by a stack index into a validated temporal stack.
pub fn load_stack(path: &Path) -> Result<TemporalStack> {
    let (man, _): (StackManifest, _) = load_manifest(path)?;
    if man.epochs.is_empty() {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            detail: "stack lists no epochs".into(),
        });
    }
    if man.epochs.len() != man.dates.len() {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            detail: format!(
                "{} epochs but {} dates",
                man.epochs.len(),
                man.dates.len()
            ),
        });
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let epochs = man
        .epochs
        .iter()
        .map(|p| crate::raster::io::read_c2(base.join(p)))
        .collect::<Result<Vec<_>>>()?;
    TemporalStack::new(epochs, man.dates)
}
