//! Versioned single-file model bundle.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "rpmnet-bundle/1\n"
//! u32                      section count
//! repeated:
//!   u16, [u8]              section name (UTF-8)
//!   u64, [u8]              payload
//! u32                      CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! The `manifest` section is TOML text (vocabulary, feature schema, config,
//! threshold). Every other section is one tensor: `u8` rank, `u64` per
//! dimension, then `f64` values. Sections are written in a fixed order, so
//! saving a loaded bundle reproduces the file byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Scaler;
use crate::error::{Error, Result};
use crate::model::{Dense, ModelParams};
use crate::numgrad::Tensor;
use crate::openset::Threshold;
use crate::train::TrainConfig;

pub const BUNDLE_VERSION: &str = "rpmnet-bundle/1";

/// How the known classes were split, so later commands can rebuild it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratio: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub params: ModelParams,
    pub scaler: Scaler,
    pub threshold: Option<Threshold>,
    pub config: TrainConfig,
    pub split: SplitSpec,
    pub label_column: String,
    pub feature_names: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    labels: Vec<String>,
    label_column: String,
    feature_names: Vec<String>,
    input_dim: usize,
    hidden_dims: Vec<usize>,
    embed_dim: usize,
    gamma: f64,
    split: SplitSpec,
    config: TrainConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<Threshold>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn section(&mut self, name: &str, payload: &[u8]) {
        self.0.extend_from_slice(&(name.len() as u16).to_le_bytes());
        self.0.extend_from_slice(name.as_bytes());
        self.0.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        self.0.extend_from_slice(payload);
    }
}

fn tensor_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(1 + 8 * t.rank() + 8 * t.numel());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn section_names(layers: usize) -> Vec<String> {
    let mut names = vec!["manifest".to_string(), "scaler.mean".into(), "scaler.std".into()];
    for i in 0..layers {
        names.push(format!("layer.{i}.weight"));
        names.push(format!("layer.{i}.bias"));
    }
    names.push("reciprocal_points".into());
    names.push("raw_margins".into());
    names
}

/// Serialize a bundle to bytes.
pub fn write_bundle(bundle: &Bundle) -> Result<Vec<u8>> {
    let p = &bundle.params;
    p.validate()?;
    if bundle.scaler.dim() != p.input_dim() || bundle.feature_names.len() != p.input_dim() {
        return Err(Error::contract(
            "scaler, feature schema and model disagree on input width",
        ));
    }
    let manifest = Manifest {
        format: BUNDLE_VERSION.into(),
        labels: p.labels.clone(),
        label_column: bundle.label_column.clone(),
        feature_names: bundle.feature_names.clone(),
        input_dim: p.input_dim(),
        hidden_dims: p.hidden_dims(),
        embed_dim: p.embed_dim(),
        gamma: p.gamma,
        split: bundle.split,
        config: bundle.config.clone(),
        threshold: bundle.threshold.clone(),
    };
    let names = section_names(p.layers.len());
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(BUNDLE_VERSION.as_bytes());
    w.0.push(b'\n');
    w.0.extend_from_slice(&(names.len() as u32).to_le_bytes());
    w.section("manifest", toml::to_string(&manifest)?.as_bytes());
    w.section("scaler.mean", &tensor_bytes(&Tensor::vector(bundle.scaler.mean.clone())));
    w.section("scaler.std", &tensor_bytes(&Tensor::vector(bundle.scaler.std.clone())));
    for (i, layer) in p.layers.iter().enumerate() {
        w.section(&format!("layer.{i}.weight"), &tensor_bytes(&layer.weight));
        w.section(&format!("layer.{i}.bias"), &tensor_bytes(&layer.bias));
    }
    w.section("reciprocal_points", &tensor_bytes(&p.reciprocal_points));
    w.section("raw_margins", &tensor_bytes(&p.raw_margins));
    let crc = crc32fast::hash(&w.0);
    w.0.extend_from_slice(&crc.to_le_bytes());
    Ok(w.0)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Integrity("unexpected end of data".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Integrity("length overflow".into()))
    }
}

fn parse_tensor(payload: &[u8]) -> Result<Tensor> {
    let mut r = Reader {
        bytes: payload,
        pos: 0,
    };
    let rank = r.u8()? as usize;
    let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Integrity("tensor size overflow".into()))?;
    let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::Integrity("tensor size overflow".into()))?)?;
    if r.pos != payload.len() {
        return Err(Error::Integrity("trailing bytes in tensor section".into()));
    }
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data).map_err(|e| Error::Integrity(e.to_string()))
}

/// Parse bundle bytes, checking version then checksum.
pub fn read_bundle(bytes: &[u8]) -> Result<Bundle> {
    let header_end = bytes
        .iter()
        .take(64)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Integrity("missing format header".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::Integrity("format header is not UTF-8".into()))?;
    if header != BUNDLE_VERSION {
        if header.starts_with("rpmnet-bundle/") {
            return Err(Error::Version {
                found: header.to_string(),
                expected: BUNDLE_VERSION.into(),
            });
        }
        return Err(Error::Integrity(format!("not a model bundle (header `{header}`)")));
    }
    if bytes.len() < header_end + 1 + 4 + 4 {
        return Err(Error::Integrity("file is truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Integrity(format!(
            "checksum mismatch (stored {stored:08x}, computed {actual:08x}); file is truncated or modified"
        )));
    }

    let mut r = Reader {
        bytes: body,
        pos: header_end + 1,
    };
    let count = r.u32()? as usize;
    let mut sections: Vec<(String, &[u8])> = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Integrity("section name is not UTF-8".into()))?
            .to_string();
        let len = r.len()?;
        sections.push((name, r.take(len)?));
    }
    if r.pos != body.len() {
        return Err(Error::Integrity("trailing bytes after sections".into()));
    }
    let mut it = sections.into_iter();
    let mut next = |expected: &str| -> Result<&[u8]> {
        match it.next() {
            Some((name, payload)) if name == expected => Ok(payload),
            Some((name, _)) => Err(Error::Integrity(format!(
                "expected section `{expected}`, found `{name}`"
            ))),
            None => Err(Error::Integrity(format!("missing section `{expected}`"))),
        }
    };

    let manifest_text = std::str::from_utf8(next("manifest")?)
        .map_err(|_| Error::Integrity("manifest is not UTF-8".into()))?;
    let manifest: Manifest =
        toml::from_str(manifest_text).map_err(|e| Error::Integrity(format!("manifest: {e}")))?;
    if manifest.format != BUNDLE_VERSION {
        return Err(Error::Version {
            found: manifest.format,
            expected: BUNDLE_VERSION.into(),
        });
    }
    let scaler = Scaler {
        mean: parse_tensor(next("scaler.mean")?)?.into_data(),
        std: parse_tensor(next("scaler.std")?)?.into_data(),
    };
    let mut layers = Vec::with_capacity(manifest.hidden_dims.len() + 1);
    for i in 0..=manifest.hidden_dims.len() {
        let weight = parse_tensor(next(&format!("layer.{i}.weight"))?)?;
        let bias = parse_tensor(next(&format!("layer.{i}.bias"))?)?;
        layers.push(Dense { weight, bias });
    }
    let params = ModelParams {
        layers,
        reciprocal_points: parse_tensor(next("reciprocal_points")?)?,
        raw_margins: parse_tensor(next("raw_margins")?)?,
        gamma: manifest.gamma,
        labels: manifest.labels,
    };
    if it.next().is_some() {
        return Err(Error::Integrity("unexpected extra sections".into()));
    }
    params
        .validate()
        .map_err(|e| Error::Integrity(e.to_string()))?;
    if params.input_dim() != manifest.input_dim
        || params.embed_dim() != manifest.embed_dim
        || scaler.dim() != manifest.input_dim
        || manifest.feature_names.len() != manifest.input_dim
    {
        return Err(Error::Integrity("manifest dimensions disagree with tensors".into()));
    }
    Ok(Bundle {
        params,
        scaler,
        threshold: manifest.threshold,
        config: manifest.config,
        split: manifest.split,
        label_column: manifest.label_column,
        feature_names: manifest.feature_names,
    })
}

pub fn save_bundle(bundle: &Bundle, path: &Path) -> Result<()> {
    std::fs::write(path, write_bundle(bundle)?)?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<Bundle> {
    read_bundle(&std::fs::read(path)?)
}
