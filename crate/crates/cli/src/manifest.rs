use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.toml";

/// What produced an output directory: command, configuration, seeds and versions.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub cli_version: String,
    pub core_version: String,
    pub seeds: BTreeMap<String, u64>,
    pub config: toml::Table,
}

impl Manifest {
    pub fn new(command: &str, config: &impl Serialize) -> CliResult<Self> {
        let config = toml::Table::try_from(config)
            .map_err(|e| CliError::Internal(format!("cannot record configuration: {e}")))?;
        Ok(Self {
            command: command.to_string(),
            cli_version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: mpirecon_core::VERSION.to_string(),
            seeds: BTreeMap::new(),
            config,
        })
    }

    pub fn seed(mut self, name: &str, seed: u64) -> Self {
        self.seeds.insert(name.to_string(), seed);
        self
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let text = toml::to_string(self).map_err(|e| CliError::Internal(format!("cannot serialize manifest: {e}")))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| io_error(&path, e))
    }
}

pub fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(mpirecon_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Creates `dir` (and parents) and drops the manifest into it.
pub fn create_output_dir(dir: &Path, manifest: &Manifest) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    manifest.write(dir)
}

/// Puts a manifest into every directory below `root` that lacks one, so
/// directories written by library routines are covered too.
pub fn fill_manifests(root: &Path, manifest: &Manifest) -> CliResult<()> {
    if !root.join(MANIFEST_FILE).exists() {
        manifest.write(root)?;
    }
    let entries = fs::read_dir(root).map_err(|e| io_error(root, e))?;
    let mut dirs: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for d in dirs {
        fill_manifests(&d, manifest)?;
    }
    Ok(())
}
