//! Experiment configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use softlif::data::{load_cifar10_bin, load_mnist_idx, mnist_paths, Dataset, Split};
use softlif::efficiency::{EnergyModel, SweepRow};
use softlif::network::Architecture;
use softlif::sim::SimConfig;
use softlif::trainer::TrainConfig;

use crate::CliError;

/// Overrides `data.root` when set.
pub const DATA_ROOT_ENV: &str = "SOFTLIF_DATA_ROOT";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<Architecture>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    /// Synaptic time constant used by `convert`, seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
    #[serde(default)]
    pub energy: EnergyModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<CurveConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<StatsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// `train-images-idx3-ubyte[.gz]` etc. under `root`.
    Mnist,
    /// `data_batch_{1..5}.bin` and `test_batch.bin` under `root`.
    Cifar10,
}

impl DataFormat {
    /// CIFAR-10 if `root` holds CIFAR batch files, otherwise MNIST.
    pub fn infer(root: &Path) -> Self {
        if root.join("test_batch.bin").exists() || root.join("data_batch_1.bin").exists() {
            DataFormat::Cifar10
        } else {
            DataFormat::Mnist
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub format: DataFormat,
    pub root: PathBuf,
    /// Use only the first `n` training images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveConfig {
    pub c0_list: Vec<f64>,
    pub c1_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsConfig {
    pub tau_s: f64,
    pub currents: Vec<f64>,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_duration() -> f64 {
    10.0
}

fn default_dt() -> f64 {
    1e-3
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            tau_s: 0.003,
            currents: vec![1.1, 1.25, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0],
            duration: default_duration(),
            dt: default_dt(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }

    pub fn load_opt(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// The data section with the root resolved against the environment
    /// override and `flag_root` (which wins).
    /// Dataset settings with the root resolved from `--data-root`, then
    /// `$SOFTLIF_DATA_ROOT`, then `data.root`. Without a `data` section the
    /// format is inferred from the directory contents.
    pub fn data(&self, flag_root: Option<&Path>) -> Result<DataConfig, CliError> {
        let override_root = flag_root
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from));
        let data = match (&self.data, override_root) {
            (Some(d), root) => DataConfig {
                root: root.unwrap_or_else(|| d.root.clone()),
                ..d.clone()
            },
            (None, Some(root)) => DataConfig {
                format: DataFormat::infer(&root),
                root,
                train_limit: None,
                test_limit: None,
            },
            (None, None) => {
                return Err(CliError::Config(format!(
                    "missing field `data.root` (set it in the config, with --data-root or ${DATA_ROOT_ENV})"
                )))
            }
        };
        if !data.root.is_dir() {
            return Err(CliError::Config(format!(
                "field `data.root`: {} is not a directory",
                data.root.display()
            )));
        }
        Ok(data)
    }

    pub fn sim(&self) -> Result<SimConfig, CliError> {
        self.sim
            .clone()
            .ok_or_else(|| CliError::Config("missing field `sim` (dt, c0, c1)".into()))
    }

    /// SHA-256 over the canonical JSON of `value`.
    pub fn hash_of(value: &impl Serialize) -> String {
        let bytes = serde_json::to_vec(value).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

impl DataConfig {
    pub fn load(&self, split: Split) -> Result<Dataset, CliError> {
        let dataset = match self.format {
            DataFormat::Mnist => {
                let (images, labels) = mnist_paths(&self.root, split);
                load_mnist_idx(images, labels)
            }
            DataFormat::Cifar10 => {
                let files: Vec<PathBuf> = match split {
                    Split::Train => (1..=5).map(|k| self.root.join(format!("data_batch_{k}.bin"))).collect(),
                    Split::Test => vec![self.root.join("test_batch.bin")],
                };
                load_cifar10_bin(&files)
            }
        }
        .map_err(CliError::Runtime)?
        .with_split(split);
        let limit = match split {
            Split::Train => self.train_limit,
            Split::Test => self.test_limit,
        };
        Ok(match limit {
            Some(n) => dataset.take(n),
            None => dataset,
        })
    }
}
