//! Weight container: magic `CSEG1`, a little-endian `u32` header length, a
//! JSON header (model config plus ordered layer shapes), then every tensor as
//! little-endian `f32` in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{layer_plan, LayerKind, UNetConfig, UNetParams};
use crate::error::{Error, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 5] = b"CSEG1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsHeader {
    pub config: UNetConfig,
    pub layers: Vec<TensorEntry>,
}

fn expected_entries(cfg: &UNetConfig) -> Vec<TensorEntry> {
    let mut out = Vec::new();
    for (name, kind, shape) in layer_plan(cfg) {
        let bias = match kind {
            LayerKind::UpConv2x2 => shape[1],
            _ => shape[0],
        };
        out.push(TensorEntry {
            name: format!("{name}.weight"),
            shape: shape.to_vec(),
        });
        out.push(TensorEntry {
            name: format!("{name}.bias"),
            shape: vec![bias],
        });
    }
    out
}

pub fn save_params(p: &UNetParams<f32>) -> Result<Vec<u8>> {
    let header = WeightsHeader {
        config: p.config.clone(),
        layers: p
            .layers
            .iter()
            .flat_map(|l| {
                [
                    TensorEntry {
                        name: format!("{}.weight", l.name),
                        shape: l.kernel.shape().to_vec(),
                    },
                    TensorEntry {
                        name: format!("{}.bias", l.name),
                        shape: vec![l.bias.len()],
                    },
                ]
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::json("weights header", e))?;
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + json.len() + 4 * p.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for l in &p.layers {
        for v in l.kernel.data().iter().chain(&l.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load_params(bytes: &[u8]) -> Result<UNetParams<f32>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Weights("bad magic, not a CSEG1 file".into()));
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 4 {
        return Err(Error::Weights("truncated before header length".into()));
    }
    let hlen = u32::from_le_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
    let rest = &rest[4..];
    if rest.len() < hlen {
        return Err(Error::Weights(format!(
            "header declares {hlen} bytes but only {} remain",
            rest.len()
        )));
    }
    let header: WeightsHeader =
        serde_json::from_slice(&rest[..hlen]).map_err(|e| Error::json("weights header", e))?;
    header.config.validate()?;
    let expect = expected_entries(&header.config);
    if header.layers != expect {
        return Err(Error::Weights(
            "layer list in header does not match the shapes implied by its config".into(),
        ));
    }
    let payload = &rest[hlen..];
    let expected: usize = header.layers.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if payload.len() % 4 != 0 || payload.len() / 4 != expected {
        return Err(Error::FloatCount {
            expected,
            actual: payload.len() / 4,
        });
    }
    let mut floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let mut params = UNetParams::<f32>::init(&header.config)?;
    for l in &mut params.layers {
        for v in l.kernel.data_mut().iter_mut().chain(l.bias.iter_mut()) {
            *v = floats.next().expect("count checked");
        }
    }
    Ok(params)
}

pub fn save_params_file(p: &UNetParams<f32>, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &save_params(p)?)
}

pub fn load_params_file(path: &Path) -> Result<UNetParams<f32>> {
    load_params(&fsutil::read(path)?)
}
