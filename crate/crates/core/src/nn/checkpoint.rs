//! Checkpoint format: a JSON manifest (layer shapes, activations, observation
//! normalization statistics) next to a binary blob of little-endian `f64`
//! parameters. Blob order is encoder, trunk, head (per layer: weights
//! row-major, then bias), then the policy's log standard deviations.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Layer, Mlp};
use super::networks::{GaussianPolicy, ValueNet, ACTION_DIM};
use super::normalizer::Normalizer;
use super::tower::Tower;
use crate::error::{Error, Result};

pub const FORMAT: &str = "fwp-mlp-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Policy,
    Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerShape {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetShape {
    pub name: String,
    pub layers: Vec<LayerShape>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub kind: NetKind,
    pub window: usize,
    pub vehicle: Option<String>,
    /// blob file name, relative to the manifest
    pub blob: String,
    pub param_count: usize,
    pub networks: Vec<NetShape>,
    pub log_std_len: usize,
    pub normalizer: Normalizer,
}

fn shape_of(name: &str, mlp: &Mlp) -> NetShape {
    NetShape {
        name: name.to_string(),
        layers: mlp
            .layers()
            .iter()
            .map(|l| LayerShape {
                in_dim: l.in_dim,
                out_dim: l.out_dim,
                activation: l.activation,
            })
            .collect(),
    }
}

fn tower_shapes(t: &Tower) -> Vec<NetShape> {
    vec![
        shape_of("encoder", &t.encoder),
        shape_of("trunk", &t.trunk),
        shape_of("head", &t.head),
    ]
}

fn tower_from_shapes(shapes: &[NetShape], src: &mut &[f64]) -> Result<Tower> {
    let names = ["encoder", "trunk", "head"];
    if shapes.len() != 3 || shapes.iter().zip(names).any(|(s, n)| s.name != n) {
        return Err(Error::Checkpoint("expected networks [encoder, trunk, head]".into()));
    }
    let mut nets = shapes.iter().map(|s| {
        let mut mlp = Mlp::new(
            s.layers
                .iter()
                .map(|l| Layer::zeros(l.in_dim, l.out_dim, l.activation))
                .collect(),
        )?;
        mlp.read_params(src)?;
        Ok::<_, Error>(mlp)
    });
    let encoder = nets.next().expect("three networks")?;
    let trunk = nets.next().expect("three networks")?;
    let head = nets.next().expect("three networks")?;
    Tower::from_parts(encoder, trunk, head)
}

fn to_bytes(params: &[f64]) -> Vec<u8> {
    params.iter().flat_map(|p| p.to_le_bytes()).collect()
}

fn from_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Checkpoint(format!(
            "blob length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn blob_name(manifest_path: &Path) -> String {
    manifest_path
        .with_extension("bin")
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "params.bin".into())
}

pub fn encode_policy(policy: &GaussianPolicy, vehicle: Option<&str>, blob: &str) -> (Manifest, Vec<u8>) {
    let params = policy.params_flat();
    let manifest = Manifest {
        format: FORMAT.into(),
        kind: NetKind::Policy,
        window: policy.window(),
        vehicle: vehicle.map(str::to_string),
        blob: blob.into(),
        param_count: params.len(),
        networks: tower_shapes(&policy.tower),
        log_std_len: ACTION_DIM,
        normalizer: policy.normalizer.clone(),
    };
    (manifest, to_bytes(&params))
}

pub fn encode_value(value: &ValueNet, vehicle: Option<&str>, blob: &str) -> (Manifest, Vec<u8>) {
    let params = value.params_flat();
    let manifest = Manifest {
        format: FORMAT.into(),
        kind: NetKind::Value,
        window: value.window(),
        vehicle: vehicle.map(str::to_string),
        blob: blob.into(),
        param_count: params.len(),
        networks: tower_shapes(&value.tower),
        log_std_len: 0,
        normalizer: value.normalizer.clone(),
    };
    (manifest, to_bytes(&params))
}

fn check_manifest(m: &Manifest, kind: NetKind, params: &[f64]) -> Result<()> {
    if m.format != FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format `{}`", m.format)));
    }
    if m.kind != kind {
        return Err(Error::Checkpoint(format!(
            "expected a {kind:?} checkpoint, found {:?}",
            m.kind
        )));
    }
    if params.len() != m.param_count {
        return Err(Error::Checkpoint(format!(
            "manifest declares {} parameters, blob holds {}",
            m.param_count,
            params.len()
        )));
    }
    if m.normalizer.dim() != 3 * (m.window + 1) {
        return Err(Error::Checkpoint("normalizer dimension does not match 3(H+1)".into()));
    }
    Ok(())
}

pub fn decode_policy(m: &Manifest, bytes: &[u8]) -> Result<GaussianPolicy> {
    let params = from_bytes(bytes)?;
    check_manifest(m, NetKind::Policy, &params)?;
    let mut src = params.as_slice();
    let tower = tower_from_shapes(&m.networks, &mut src)?;
    if src.len() != ACTION_DIM || m.log_std_len != ACTION_DIM || tower.window() != m.window {
        return Err(Error::Checkpoint("policy layout does not match manifest".into()));
    }
    Ok(GaussianPolicy::from_parts(
        tower,
        [src[0], src[1]],
        m.normalizer.clone(),
    ))
}

pub fn decode_value(m: &Manifest, bytes: &[u8]) -> Result<ValueNet> {
    let params = from_bytes(bytes)?;
    check_manifest(m, NetKind::Value, &params)?;
    let mut src = params.as_slice();
    let tower = tower_from_shapes(&m.networks, &mut src)?;
    if !src.is_empty() || tower.output_dim() != 1 || tower.window() != m.window {
        return Err(Error::Checkpoint("value layout does not match manifest".into()));
    }
    Ok(ValueNet {
        tower,
        normalizer: m.normalizer.clone(),
    })
}

fn write_pair(path: &Path, manifest: &Manifest, bytes: &[u8]) -> Result<()> {
    std::fs::write(path.with_file_name(&manifest.blob), bytes)?;
    std::fs::write(path, serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}

fn read_pair(path: &Path) -> Result<(Manifest, Vec<u8>)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let blob: PathBuf = path.with_file_name(&manifest.blob);
    if !blob.exists() {
        return Err(Error::MissingArtifact(blob));
    }
    let bytes = std::fs::read(blob)?;
    Ok((manifest, bytes))
}

/// Write `<path>` (manifest) and `<path>.bin` (parameters).
pub fn save_policy(policy: &GaussianPolicy, vehicle: Option<&str>, path: &Path) -> Result<()> {
    let (m, bytes) = encode_policy(policy, vehicle, &blob_name(path));
    write_pair(path, &m, &bytes)
}

pub fn save_value(value: &ValueNet, vehicle: Option<&str>, path: &Path) -> Result<()> {
    let (m, bytes) = encode_value(value, vehicle, &blob_name(path));
    write_pair(path, &m, &bytes)
}

pub fn load_policy(path: &Path) -> Result<(GaussianPolicy, Manifest)> {
    let (m, bytes) = read_pair(path)?;
    Ok((decode_policy(&m, &bytes)?, m))
}

pub fn load_value(path: &Path) -> Result<(ValueNet, Manifest)> {
    let (m, bytes) = read_pair(path)?;
    Ok((decode_value(&m, &bytes)?, m))
}
