//! Model persistence: a JSON manifest describing the layer chain plus a
//! little-endian `f32` weight blob next to it.
//!
//! The manifest records, per parameter tensor, its byte offset and element
//! count inside the blob, and the SHA-256 of the whole blob. A spiking model
//! carries a `spiking` section with the synaptic time constant.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::{AvgPool, Conv2d, Dense, Layer, NetworkSpec, Nonlinearity};
use crate::neuron::LifParams;

pub const MODEL_FORMAT: &str = "softlif-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub provenance: String,
    pub input_shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spiking: Option<SpikingSection>,
    pub layers: Vec<ManifestLayer>,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikingSection {
    pub tau_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Payload {
    /// Blob file name, relative to the manifest's directory.
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Location of one parameter tensor inside the blob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Span {
    /// Byte offset.
    pub offset: u64,
    /// Number of `f32` elements.
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifestLayer {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weights: Span,
        bias: Span,
    },
    Dense {
        in_features: usize,
        out_features: usize,
        weights: Span,
        bias: Span,
    },
    AvgPool {
        window: usize,
        stride: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    LocalResponseNorm {
        size: usize,
    },
    Relu,
    SoftLif {
        params: LifParams,
    },
    LifRate {
        params: LifParams,
    },
    SpikingLif {
        params: LifParams,
    },
}

fn push_tensor(blob: &mut Vec<u8>, values: &[f32]) -> Span {
    let span = Span {
        offset: blob.len() as u64,
        count: values.len() as u64,
    };
    for v in values {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    span
}

fn read_tensor(blob: &[u8], span: Span, what: &str) -> Result<Vec<f32>> {
    let start = span.offset as usize;
    let end = start + 4 * span.count as usize;
    let bytes = blob.get(start..end).ok_or_else(|| {
        Error::ModelFormat(format!(
            "{what}: span {}..{end} lies outside the {}-byte payload",
            span.offset,
            blob.len()
        ))
    })?;
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn blob_path_for(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

/// Builds the manifest and blob for `net` without touching the filesystem.
pub fn encode(net: &NetworkSpec, tau_s: Option<f64>, blob_file: &str) -> (Manifest, Vec<u8>) {
    let mut blob = Vec::new();
    let layers = net
        .layers()
        .iter()
        .map(|layer| match layer {
            Layer::Conv2d(c) => ManifestLayer::Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
                weights: push_tensor(&mut blob, &c.weights),
                bias: push_tensor(&mut blob, &c.bias),
            },
            Layer::Dense(d) => ManifestLayer::Dense {
                in_features: d.in_features,
                out_features: d.out_features,
                weights: push_tensor(&mut blob, &d.weights),
                bias: push_tensor(&mut blob, &d.bias),
            },
            Layer::AvgPool(p) => ManifestLayer::AvgPool {
                window: p.window,
                stride: p.stride,
            },
            Layer::MaxPool { window, stride } => ManifestLayer::MaxPool {
                window: *window,
                stride: *stride,
            },
            Layer::LocalResponseNorm { size } => ManifestLayer::LocalResponseNorm { size: *size },
            Layer::Nonlinearity(n) => match *n {
                Nonlinearity::Relu => ManifestLayer::Relu,
                Nonlinearity::SoftLif(params) => ManifestLayer::SoftLif { params },
                Nonlinearity::LifRate(params) => ManifestLayer::LifRate { params },
                Nonlinearity::SpikingLif(params) => ManifestLayer::SpikingLif { params },
            },
        })
        .collect();
    let manifest = Manifest {
        format: MODEL_FORMAT.into(),
        version: MODEL_FORMAT_VERSION,
        name: net.name().into(),
        provenance: net.provenance().into(),
        input_shape: net.input_shape().to_vec(),
        spiking: tau_s.map(|tau_s| SpikingSection { tau_s }),
        layers,
        payload: Payload {
            file: blob_file.into(),
            bytes: blob.len() as u64,
            sha256: sha256_hex(&blob),
        },
    };
    (manifest, blob)
}

/// Rebuilds the network from a manifest and its blob, verifying the checksum.
pub fn decode(manifest: &Manifest, blob: &[u8]) -> Result<(NetworkSpec, Option<f64>)> {
    if manifest.format != MODEL_FORMAT {
        return Err(Error::ModelFormat(format!(
            "unknown format `{}`, expected `{MODEL_FORMAT}`",
            manifest.format
        )));
    }
    if manifest.version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported version {}, this build reads version {MODEL_FORMAT_VERSION}",
            manifest.version
        )));
    }
    if blob.len() as u64 != manifest.payload.bytes {
        return Err(Error::ModelFormat(format!(
            "payload is {} bytes, manifest records {}",
            blob.len(),
            manifest.payload.bytes
        )));
    }
    let actual = sha256_hex(blob);
    if actual != manifest.payload.sha256 {
        return Err(Error::Checksum {
            expected: manifest.payload.sha256.clone(),
            actual,
        });
    }
    let layers = manifest
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            Ok(match *l {
                ManifestLayer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    weights,
                    bias,
                } => Layer::Conv2d(Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    weights: read_tensor(blob, weights, &format!("layer {i} weights"))?,
                    bias: read_tensor(blob, bias, &format!("layer {i} bias"))?,
                }),
                ManifestLayer::Dense {
                    in_features,
                    out_features,
                    weights,
                    bias,
                } => Layer::Dense(Dense {
                    in_features,
                    out_features,
                    weights: read_tensor(blob, weights, &format!("layer {i} weights"))?,
                    bias: read_tensor(blob, bias, &format!("layer {i} bias"))?,
                }),
                ManifestLayer::AvgPool { window, stride } => Layer::AvgPool(AvgPool { window, stride }),
                ManifestLayer::MaxPool { window, stride } => Layer::MaxPool { window, stride },
                ManifestLayer::LocalResponseNorm { size } => Layer::LocalResponseNorm { size },
                ManifestLayer::Relu => Layer::Nonlinearity(Nonlinearity::Relu),
                ManifestLayer::SoftLif { params } => Layer::Nonlinearity(Nonlinearity::SoftLif(params)),
                ManifestLayer::LifRate { params } => Layer::Nonlinearity(Nonlinearity::LifRate(params)),
                ManifestLayer::SpikingLif { params } => Layer::Nonlinearity(Nonlinearity::SpikingLif(params)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let net = NetworkSpec::new(manifest.name.clone(), manifest.input_shape.clone(), layers)?
        .with_provenance(manifest.provenance.clone());
    Ok((net, manifest.spiking.map(|s| s.tau_s)))
}

/// Writes `path` (manifest) and `path` with a `.bin` extension (weights).
pub fn write_model(net: &NetworkSpec, tau_s: Option<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let blob_path = blob_path_for(path);
    let blob_file = blob_path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .ok_or_else(|| Error::ModelFormat(format!("invalid model path {}", path.display())))?;
    let (manifest, blob) = encode(net, tau_s, &blob_file);
    std::fs::write(&blob_path, &blob).map_err(|e| Error::io(format!("writing {}", blob_path.display()), e))?;
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    std::fs::write(path, json).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Reads a manifest and its blob. Returns the network and, for spiking
/// models, the synaptic time constant.
pub fn read_model(path: impl AsRef<Path>) -> Result<(NetworkSpec, Option<f64>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::ModelFormat(format!("{}: {e}", path.display())))?;
    let blob_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.payload.file);
    let blob = std::fs::read(&blob_path).map_err(|e| Error::io(format!("reading {}", blob_path.display()), e))?;
    decode(&manifest, &blob)
}

pub fn save_model(net: &NetworkSpec, path: impl AsRef<Path>) -> Result<()> {
    write_model(net, None, path)
}

/// Loads a non-spiking model.
pub fn load_model(path: impl AsRef<Path>) -> Result<NetworkSpec> {
    match read_model(&path)? {
        (net, None) => Ok(net),
        (_, Some(_)) => Err(Error::ModelFormat(format!(
            "{} is a spiking model",
            path.as_ref().display()
        ))),
    }
}
