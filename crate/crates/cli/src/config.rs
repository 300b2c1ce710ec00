use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use visemeflow::datasets::Profile;
use visemeflow::optim::OptimConfig;
use visemeflow::{Error, Result};

/// Every setting a subcommand may read. Each option can also be given as a
/// key of the `--config` TOML file; command-line values win.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// TOML file with defaults for any option below (a `run.meta` also works).
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Seed of every random choice; required.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset geometry: bbc, miracl, grid or desk.
    #[arg(long)]
    pub profile: Option<String>,
    /// Architecture preset: paper, desk or tiny.
    #[arg(long)]
    pub arch: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Feature extractor checkpoint (autoencoder or patch classifier).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub lstm_checkpoint: Option<PathBuf>,
    /// Expected extractor kind: cae or cnn.
    #[arg(long)]
    pub extractor: Option<String>,
    /// Cascade JSON file; the bundled mouth cascade by default.
    #[arg(long)]
    pub cascade: Option<PathBuf>,

    #[arg(long)]
    pub words: Option<usize>,
    #[arg(long)]
    pub speakers: Option<u32>,
    #[arg(long)]
    pub occurrences: Option<u32>,

    /// Detect the mouth once per video instead of tracking it per frame.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub fixed_roi: Option<bool>,

    /// Shorthand for `--split msd`.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub msd: Option<bool>,
    /// Split protocol: msd, msi, per-class, speaker-dependent or per-speaker-fraction.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub train_count: Option<usize>,
    #[arg(long)]
    pub val_count: Option<usize>,
    #[arg(long)]
    pub test_count: Option<usize>,
    #[arg(long)]
    pub test_speaker: Option<u32>,
    #[arg(long)]
    pub val_speaker: Option<u32>,
    /// Train, validation and test fractions, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,

    #[arg(long)]
    pub cae_lr: Option<f64>,
    #[arg(long)]
    pub cae_epochs: Option<usize>,
    #[arg(long)]
    pub cae_batch_size: Option<usize>,
    #[arg(long)]
    pub cae_patience: Option<usize>,
    #[arg(long)]
    pub cae_max_steps: Option<usize>,
    #[arg(long)]
    pub cnn_lr: Option<f64>,
    #[arg(long)]
    pub cnn_epochs: Option<usize>,
    #[arg(long)]
    pub cnn_batch_size: Option<usize>,
    #[arg(long)]
    pub cnn_patience: Option<usize>,
    #[arg(long)]
    pub cnn_max_steps: Option<usize>,
    #[arg(long)]
    pub lstm_lr: Option<f64>,
    #[arg(long)]
    pub lstm_epochs: Option<usize>,
    #[arg(long)]
    pub lstm_batch_size: Option<usize>,
    #[arg(long)]
    pub lstm_patience: Option<usize>,
    #[arg(long)]
    pub lstm_max_steps: Option<usize>,
    #[arg(long)]
    pub lstm_clip_norm: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,

    /// Cap on autoencoder training frames.
    #[arg(long)]
    pub max_train_frames: Option<usize>,
    #[arg(long)]
    pub max_val_frames: Option<usize>,
    /// Lip / non-lip patches for the baseline classifier.
    #[arg(long)]
    pub patches_train: Option<usize>,
    #[arg(long)]
    pub patches_val: Option<usize>,
    /// Videos per split that patches are cut from.
    #[arg(long)]
    pub patch_videos: Option<usize>,

    /// Number of held-out-speaker folds to run (all speakers by default).
    #[arg(long)]
    pub folds: Option<usize>,

    /// Record and frame index shown by `visualize`.
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long)]
    pub frame: Option<usize>,
    /// Stddev below which a feature map counts as empty.
    #[arg(long)]
    pub empty_threshold: Option<f64>,
}

/// A resolved configuration with its reproducibility stamp.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub values: Map<String, Value>,
    pub hash: String,
}

fn config_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

fn file_values(path: &Path) -> Result<Map<String, Value>> {
    let text = fs::read_to_string(path).map_err(|e| config_error(path, e))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| config_error(path, e.message()))?;
    let mut value = serde_json::to_value(table)?;
    if let Some(inner) = value.get("config").filter(|v| v.is_object()) {
        value = inner.clone();
    }
    match value {
        Value::Object(map) => Ok(map),
        _ => Err(config_error(path, "expected a table")),
    }
}

/// Merges the `--config` file under the command-line values and hashes the
/// result, minus the output directory, together with the command name.
pub fn resolve(command: &str, cli: &RunConfig) -> Result<Resolved> {
    let mut values = match &cli.config {
        Some(path) => file_values(path)?,
        None => Map::new(),
    };
    if let Value::Object(given) = serde_json::to_value(cli)? {
        values.extend(given.into_iter().filter(|(_, v)| !v.is_null()));
    }
    let config: RunConfig = serde_json::from_value(Value::Object(values.clone()))
        .map_err(|e| Error::Config(e.to_string()))?;
    // Where outputs go does not change them, so reruns into another directory
    // share the stamp.
    values.remove("out");
    let mut hasher = Sha256::new();
    hasher.update(command.as_bytes());
    hasher.update([0]);
    hasher.update(serde_json::to_string(&values)?.as_bytes());
    let hash = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok(Resolved { config, values, hash })
}

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    seed: u64,
    config_hash: &'a str,
    config: &'a Map<String, Value>,
}

impl Resolved {
    /// Writes `run.meta` into `dir`.
    pub fn write_meta(&self, command: &str, dir: &Path) -> Result<()> {
        let meta = RunMeta {
            command,
            seed: self.config.seed()?,
            config_hash: &self.hash,
            config: &self.values,
        };
        let text = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
        let path = dir.join("run.meta");
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }
}

fn missing(key: &str) -> Error {
    Error::Config(format!("`--{}` is required", key.replace('_', "-")))
}

macro_rules! phase {
    ($cfg:expr, $base:expr, $lr:ident, $epochs:ident, $batch:ident, $patience:ident, $steps:ident) => {{
        let mut o: OptimConfig = $base;
        if let Some(v) = $cfg.$lr {
            o.learning_rate = v;
        }
        if let Some(v) = $cfg.$epochs {
            o.max_epochs = v;
        }
        if let Some(v) = $cfg.$batch {
            o.batch_size = v;
        }
        if let Some(v) = $cfg.$patience {
            o.patience = v;
        }
        if let Some(v) = $cfg.$steps {
            o.max_steps = Some(v);
        }
        if let Some(v) = $cfg.momentum {
            o.momentum = v;
        }
        o.validate().map(|()| o)
    }};
}

impl RunConfig {
    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| missing("seed"))
    }

    pub fn out(&self) -> Result<PathBuf> {
        let dir = self.out.clone().ok_or_else(|| missing("out"))?;
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    pub fn path(&self, value: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        value.clone().ok_or_else(|| missing(key))
    }

    pub fn profile(&self) -> Result<Profile> {
        Profile::named(self.profile.as_deref().unwrap_or("desk"))
    }

    pub fn arch(&self) -> &str {
        self.arch.as_deref().unwrap_or("desk")
    }

    pub fn cae_optim(&self) -> Result<OptimConfig> {
        phase!(self, OptimConfig::cae(), cae_lr, cae_epochs, cae_batch_size, cae_patience, cae_max_steps)
    }

    pub fn cnn_optim(&self) -> Result<OptimConfig> {
        phase!(
            self,
            OptimConfig::patch_classifier(),
            cnn_lr,
            cnn_epochs,
            cnn_batch_size,
            cnn_patience,
            cnn_max_steps
        )
    }

    pub fn lstm_optim(&self) -> Result<OptimConfig> {
        let mut o: OptimConfig = phase!(
            self,
            OptimConfig::lstm(),
            lstm_lr,
            lstm_epochs,
            lstm_batch_size,
            lstm_patience,
            lstm_max_steps
        )?;
        if let Some(v) = self.lstm_clip_norm {
            o.clip_norm = Some(v);
        }
        Ok(o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_line_wins_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 3\ncae_lr = 0.5\nprofile = \"miracl\"\n").unwrap();
        let cli = RunConfig {
            config: Some(path),
            seed: Some(9),
            ..Default::default()
        };
        let r = resolve("train-cae", &cli).unwrap();
        assert_eq!(r.config.seed, Some(9));
        assert_eq!(r.config.cae_optim().unwrap().learning_rate, 0.5);
        assert_eq!(r.config.profile().unwrap(), Profile::miracl());
    }

    #[test]
    fn unknown_file_key_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "sed = 3\n").unwrap();
        let cli = RunConfig {
            config: Some(path),
            ..Default::default()
        };
        assert!(matches!(resolve("synth", &cli), Err(Error::Config(_))));
    }

    #[test]
    fn meta_reloads_to_the_same_hash() {
        let dir = tempfile::tempdir().unwrap();
        let cli = RunConfig {
            seed: Some(4),
            words: Some(3),
            ..Default::default()
        };
        let r = resolve("synth", &cli).unwrap();
        r.write_meta("synth", dir.path()).unwrap();
        let again = resolve(
            "synth",
            &RunConfig {
                config: Some(dir.path().join("run.meta")),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(again.hash, r.hash);
        assert_ne!(resolve("split", &cli).unwrap().hash, r.hash);
    }
}
