//! Binary checkpoint container.
//!
//! Layout: the magic `STAIRCKP`, a little-endian `u32` format version, a
//! little-endian `u64` header length, a JSON header describing sections and
//! tensor shapes, then every tensor's values little-endian in header order.
//! Identical parameters always produce identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, BankKind, Mlp, ParamBank};
use crate::error::{Result, StairError};
use crate::param::{Linear, Param};
use crate::real::Real;
use crate::residual::{ResidualConfig, ResidualParams};
use crate::tensor::Tensor3;

pub const MAGIC: &[u8; 8] = b"STAIRCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SectionHeader {
    name: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: String,
    sections: Vec<SectionHeader>,
}

struct Section<T> {
    name: String,
    meta: serde_json::Value,
    tensors: Vec<(String, Vec<usize>, Vec<T>)>,
}

fn encode<T: Real>(sections: &[Section<T>]) -> Result<Vec<u8>> {
    let header = Header {
        format_version: FORMAT_VERSION,
        dtype: T::DTYPE.to_string(),
        sections: sections
            .iter()
            .map(|s| SectionHeader {
                name: s.name.clone(),
                meta: s.meta.clone(),
                tensors: s
                    .tensors
                    .iter()
                    .map(|(n, shape, _)| TensorEntry { name: n.clone(), shape: shape.clone() })
                    .collect(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for s in sections {
        for (_, _, values) in &s.tensors {
            for v in values {
                v.write_le(&mut out);
            }
        }
    }
    Ok(out)
}

fn decode<T: Real>(bytes: &[u8]) -> Result<Vec<Section<T>>> {
    let err = |m: &str| StairError::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(err("missing STAIRCKP magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(StairError::Checkpoint(format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| err("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    if header.dtype != T::DTYPE {
        return Err(StairError::Checkpoint(format!(
            "checkpoint stores {}, requested {}",
            header.dtype,
            T::DTYPE
        )));
    }
    let mut pos = 20 + hlen;
    let mut sections = Vec::new();
    for sh in header.sections {
        let mut tensors = Vec::new();
        for te in sh.tensors {
            let n: usize = te.shape.iter().product();
            let end = pos + n * T::BYTES;
            let raw = bytes.get(pos..end).ok_or_else(|| err("truncated tensor data"))?;
            let values = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
            pos = end;
            tensors.push((te.name, te.shape, values));
        }
        sections.push(Section { name: sh.name, meta: sh.meta, tensors });
    }
    if pos != bytes.len() {
        return Err(err("trailing bytes after tensor data"));
    }
    Ok(sections)
}

fn param_tensor<T: Real>(p: &Param<T>, prefix: &str) -> (String, Vec<usize>, Vec<T>) {
    (format!("{prefix}{}", p.name), p.shape.clone(), p.value.clone())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BackboneMeta {
    config: BackboneConfig,
    kind: BankKind,
    sets: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ResidualMeta {
    channels: usize,
    lookback: usize,
    horizon: usize,
    hidden: usize,
    rank: usize,
    scale: f64,
}

fn backbone_section<T: Real>(bank: &ParamBank<T>) -> Result<Section<T>> {
    let meta = BackboneMeta {
        config: bank.config,
        kind: bank.kind,
        sets: bank.sets.len(),
    };
    let mut tensors = Vec::new();
    for (i, set) in bank.sets.iter().enumerate() {
        let prefix = format!("set{i}.");
        for l in &set.layers {
            tensors.push(param_tensor(&l.weight, &prefix));
            tensors.push(param_tensor(&l.bias, &prefix));
        }
    }
    Ok(Section {
        name: "backbone".into(),
        meta: serde_json::to_value(meta)?,
        tensors,
    })
}

fn residual_section<T: Real>(r: &ResidualParams<T>) -> Result<Section<T>> {
    let meta = ResidualMeta {
        channels: r.channels,
        lookback: r.lookback,
        horizon: r.horizon,
        hidden: r.config.hidden,
        rank: r.config.rank,
        scale: r.config.scale,
    };
    let tensors = [
        &r.encoder.weight,
        &r.encoder.bias,
        &r.u,
        &r.v,
        &r.decoder.weight,
        &r.decoder.bias,
    ]
    .into_iter()
    .map(|p| param_tensor(p, ""))
    .collect();
    Ok(Section {
        name: "residual".into(),
        meta: serde_json::to_value(meta)?,
        tensors,
    })
}

/// A stage's trained state: the backbone and, for the last stage, the adapter.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub backbone: ParamBank<T>,
    pub residual: Option<ResidualParams<T>>,
}

impl<T: Real> PartialEq for Checkpoint<T> {
    fn eq(&self, other: &Self) -> bool {
        self.backbone == other.backbone && self.residual == other.residual
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut sections = vec![backbone_section(&self.backbone)?];
        if let Some(r) = &self.residual {
            sections.push(residual_section(r)?);
        }
        encode(&sections)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let sections = decode::<T>(bytes)?;
        let mut backbone = None;
        let mut residual = None;
        for s in sections {
            match s.name.as_str() {
                "backbone" => backbone = Some(read_backbone(s)?),
                "residual" => residual = Some(read_residual(s)?),
                other => {
                    return Err(StairError::Checkpoint(format!("unknown section `{other}`")));
                }
            }
        }
        Ok(Self {
            backbone: backbone.ok_or_else(|| StairError::Checkpoint("no backbone section".into()))?,
            residual,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| StairError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| StairError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn take_param<T: Real>(
    it: &mut impl Iterator<Item = (String, Vec<usize>, Vec<T>)>,
    name: &str,
    shape: &[usize],
) -> Result<Param<T>> {
    let (n, s, v) = it
        .next()
        .ok_or_else(|| StairError::Checkpoint(format!("missing tensor {name}")))?;
    if s != shape {
        return Err(StairError::Checkpoint(format!("tensor {n} has shape {s:?}, expected {shape:?}")));
    }
    let short = n.split_once('.').filter(|_| n.starts_with("set")).map_or(n.as_str(), |(_, r)| r);
    Ok(Param::new(short.to_string(), s, v))
}

fn read_backbone<T: Real>(s: Section<T>) -> Result<ParamBank<T>> {
    let meta: BackboneMeta = serde_json::from_value(s.meta)?;
    let dims = meta.config.layer_dims();
    let mut it = s.tensors.into_iter();
    let mut sets = Vec::with_capacity(meta.sets);
    for i in 0..meta.sets {
        let mut layers = Vec::with_capacity(dims.len());
        for (li, (fan_in, fan_out)) in dims.iter().enumerate() {
            let weight = take_param(&mut it, &format!("set{i}.layer{li}.weight"), &[*fan_out, *fan_in])?;
            let bias = take_param(&mut it, &format!("set{i}.layer{li}.bias"), &[*fan_out])?;
            layers.push(Linear { weight, bias });
        }
        sets.push(Mlp { layers });
    }
    ParamBank::from_sets(meta.config, meta.kind, sets)
}

fn read_residual<T: Real>(s: Section<T>) -> Result<ResidualParams<T>> {
    let m: ResidualMeta = serde_json::from_value(s.meta)?;
    let mut it = s.tensors.into_iter();
    let enc_w = take_param(&mut it, "residual.encoder.weight", &[m.hidden, m.lookback])?;
    let enc_b = take_param(&mut it, "residual.encoder.bias", &[m.hidden])?;
    let u = take_param(&mut it, "residual.u", &[m.channels, m.rank])?;
    let v = take_param(&mut it, "residual.v", &[m.channels, m.rank])?;
    let dec_w = take_param(&mut it, "residual.decoder.weight", &[m.horizon, m.hidden])?;
    let dec_b = take_param(&mut it, "residual.decoder.bias", &[m.horizon])?;
    ResidualParams::from_parts(
        m.channels,
        m.lookback,
        m.horizon,
        ResidualConfig { hidden: m.hidden, rank: m.rank, scale: m.scale },
        Linear { weight: enc_w, bias: enc_b },
        u,
        v,
        Linear { weight: dec_w, bias: dec_b },
    )
}

/// Stores a `N × H × C` prediction tensor in the same container format.
pub fn save_predictions<T: Real>(path: impl AsRef<Path>, preds: &Tensor3<T>) -> Result<()> {
    let path = path.as_ref();
    let section = Section {
        name: "predictions".into(),
        meta: serde_json::json!({ "layout": "windows×horizon×channels" }),
        tensors: vec![(
            "predictions".into(),
            vec![preds.batch, preds.time, preds.channels],
            preds.data.clone(),
        )],
    };
    fs::write(path, encode(&[section])?).map_err(|e| StairError::io(path, e))
}

pub fn load_predictions<T: Real>(path: impl AsRef<Path>) -> Result<Tensor3<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| StairError::io(path, e))?;
    let mut sections = decode::<T>(&bytes)?;
    let (_, shape, data) = sections
        .pop()
        .and_then(|mut s| s.tensors.pop())
        .ok_or_else(|| StairError::Checkpoint("empty prediction file".into()))?;
    if shape.len() != 3 {
        return Err(StairError::Checkpoint(format!("prediction shape {shape:?} is not rank 3")));
    }
    Tensor3::from_vec(shape[0], shape[1], shape[2], data)
}
