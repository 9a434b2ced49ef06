use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sparse_cert::training::TrainingConfig;

use crate::error::CliError;
use crate::DataArgs;

pub const THREADS_ENV: &str = "SPARSE_CERT_THREADS";

/// Caps the worker pool at `SPARSE_CERT_THREADS` when set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Keep only the first `limit` samples.
    pub limit: Option<usize>,
}

/// Contents of a `train` config file. Every field has a default, so an
/// empty file trains the 1024-500-150-10 network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub widths: Vec<usize>,
    pub data: DataConfig,
    pub out: PathBuf,
    pub training: TrainingConfig,
}

impl Default for TrainFile {
    fn default() -> Self {
        TrainFile {
            widths: vec![1024, 500, 150, 10],
            data: DataConfig::default(),
            out: PathBuf::from("."),
            training: TrainingConfig::default(),
        }
    }
}

impl TrainFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Paths in the file are relative to the file's directory.
    pub fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.data.images.as_mut().map(fix);
        self.data.labels.as_mut().map(fix);
        fix(&mut self.out);
    }

    pub fn apply_flags(&mut self, data: &DataArgs, seed: Option<u64>, out: Option<&Path>) {
        if let Some(p) = &data.data_images {
            self.data.images = Some(p.clone());
        }
        if let Some(p) = &data.data_labels {
            self.data.labels = Some(p.clone());
        }
        if let Some(s) = seed {
            self.training.seed = s;
        }
        if let Some(o) = out {
            self.out = o.to_path_buf();
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(CliError::Config(format!("invalid widths {:?}", self.widths)));
        }
        if self.data.limit == Some(0) {
            return Err(CliError::Config("data.limit must be >= 1".into()));
        }
        self.training
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))
    }
}
