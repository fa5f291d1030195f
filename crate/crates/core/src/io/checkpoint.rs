//! Named tensor tables and their binary container.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "QTFM" | version u32 | count u32
//! count × { name (u32 len + UTF-8) | dtype u8 | rank u32 | dims u32… | payload }
//!   dtype 0: f32 × numel
//!   dtype 1: u8 codes × numel | a f64 | Δ f64 | K u32
//! metadata: step u64
//!           constituents: u32 count, strings
//!           sites: u32 count, { name | enabled u8 | flags u8
//!                               | [tracker: min f64, max f64, momentum f64, observations u64]
//!                               | [params: a f64, Δ f64, K u32] }
//!           attrs: u32 count, { key | value }
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::binary::{Reader, Writer};
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::quant::{QuantParams, QuantizedTensor, RangeTracker};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"QTFM";
pub const CHECKPOINT_VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_Q8: u8 = 1;
const HAS_TRACKER: u8 = 1;
const HAS_PARAMS: u8 = 2;

/// One stored tensor.
#[derive(Clone, Debug, PartialEq)]
pub enum StoredTensor {
    F32 { shape: Vec<usize>, data: Vec<f32> },
    Q8(QuantizedTensor),
}

impl StoredTensor {
    pub fn from_tensor(t: &Tensor) -> Self {
        StoredTensor::F32 {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32 { shape, .. } => shape,
            StoredTensor::Q8(q) => &q.shape,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self, StoredTensor::Q8(_))
    }

    /// Real values; quantized tensors are dequantized.
    pub fn to_tensor(&self) -> Tensor {
        match self {
            StoredTensor::F32 { shape, data } => {
                Tensor::new(shape.clone(), data.iter().map(|&v| v as f64).collect())
                    .expect("shape checked on construction")
            }
            StoredTensor::Q8(q) => q.dequantize(),
        }
    }

    /// Bytes the payload occupies on disk, excluding name and shape.
    pub fn payload_bytes(&self) -> usize {
        match self {
            StoredTensor::F32 { data, .. } => 4 * data.len(),
            StoredTensor::Q8(q) => q.len() + 8 + 8 + 4,
        }
    }
}

/// Quantization state of one activation or weight site.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteRecord {
    pub enabled: bool,
    pub tracker: Option<RangeTracker>,
    pub params: Option<QuantParams>,
}

impl Default for SiteRecord {
    fn default() -> Self {
        Self {
            enabled: true,
            tracker: None,
            params: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckpointMeta {
    pub step: u64,
    /// Checkpoints this one was averaged from.
    pub constituents: Vec<String>,
    pub sites: BTreeMap<String, SiteRecord>,
    pub attrs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, StoredTensor>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Result<&StoredTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::contract(format!("checkpoint has no tensor `{name}`")))
    }

    pub fn attr(&self, key: &str) -> Option<&str> {
        self.meta.attrs.get(key).map(String::as_str)
    }

    pub fn set_attr(&mut self, key: &str, value: impl Into<String>) {
        self.meta.attrs.insert(key.to_string(), value.into());
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.buf.extend_from_slice(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.len_u32(self.tensors.len())?;
        for (name, t) in &self.tensors {
            w.string(name)?;
            match t {
                StoredTensor::F32 { shape, data } => {
                    w.u8(DTYPE_F32);
                    write_shape(&mut w, shape)?;
                    w.f32s(data);
                }
                StoredTensor::Q8(q) => {
                    w.u8(DTYPE_Q8);
                    write_shape(&mut w, &q.shape)?;
                    w.buf.extend_from_slice(&q.codes);
                    write_params(&mut w, &q.params);
                }
            }
        }
        let m = &self.meta;
        w.u64(m.step);
        w.len_u32(m.constituents.len())?;
        for c in &m.constituents {
            w.string(c)?;
        }
        w.len_u32(m.sites.len())?;
        for (name, s) in &m.sites {
            w.string(name)?;
            w.u8(s.enabled as u8);
            let flags = if s.tracker.is_some() { HAS_TRACKER } else { 0 }
                | if s.params.is_some() { HAS_PARAMS } else { 0 };
            w.u8(flags);
            if let Some(t) = &s.tracker {
                w.f64(t.running_min);
                w.f64(t.running_max);
                w.f64(t.momentum);
                w.u64(t.observations);
            }
            if let Some(p) = &s.params {
                write_params(&mut w, p);
            }
        }
        w.len_u32(m.attrs.len())?;
        for (k, v) in &m.attrs {
            w.string(k)?;
            w.string(v)?;
        }
        Ok(w.buf)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        r.magic(CHECKPOINT_MAGIC)?;
        let at = r.offset();
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                at,
                format!("checkpoint format version {version}; this build reads version {CHECKPOINT_VERSION}"),
            ));
        }
        let count = r.u32("tensor count")?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_at = r.offset();
            let name = r.string("tensor name")?;
            let dtype_at = r.offset();
            let dtype = r.u8("dtype")?;
            let shape = read_shape(&mut r)?;
            let n = numel(&shape, r.offset())?;
            let t = match dtype {
                DTYPE_F32 => StoredTensor::F32 {
                    data: r.f32s(n, "fp32 payload")?,
                    shape,
                },
                DTYPE_Q8 => {
                    let codes = r.bytes(n, "q8 codes")?.to_vec();
                    let p_at = r.offset();
                    let params = read_params(&mut r)?;
                    let q = QuantizedTensor::new(shape, codes, params)
                        .map_err(|e| Error::format(p_at, e.to_string()))?;
                    StoredTensor::Q8(q)
                }
                other => {
                    return Err(Error::format(
                        dtype_at,
                        format!(
                            "unknown dtype tag {other} for `{name}`; version {CHECKPOINT_VERSION} \
                             knows 0 (fp32) and 1 (q8), the file may come from a newer build"
                        ),
                    ))
                }
            };
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::format(name_at, format!("duplicate tensor `{name}`")));
            }
        }
        let step = r.u64("step")?;
        let nc = r.u32("constituent count")?;
        let constituents = (0..nc)
            .map(|_| r.string("constituent"))
            .collect::<Result<Vec<_>>>()?;
        let ns = r.u32("site count")?;
        let mut sites = BTreeMap::new();
        for _ in 0..ns {
            let name = r.string("site name")?;
            let enabled = r.u8("site enabled")? != 0;
            let flags_at = r.offset();
            let flags = r.u8("site flags")?;
            if flags & !(HAS_TRACKER | HAS_PARAMS) != 0 {
                return Err(Error::format(flags_at, format!("unknown site flags {flags:#x}")));
            }
            let tracker = if flags & HAS_TRACKER != 0 {
                Some(RangeTracker {
                    running_min: r.f64("tracker min")?,
                    running_max: r.f64("tracker max")?,
                    momentum: r.f64("tracker momentum")?,
                    observations: r.u64("tracker observations")?,
                })
            } else {
                None
            };
            let params = if flags & HAS_PARAMS != 0 {
                Some(read_params(&mut r)?)
            } else {
                None
            };
            sites.insert(name, SiteRecord { enabled, tracker, params });
        }
        let na = r.u32("attr count")?;
        let mut attrs = BTreeMap::new();
        for _ in 0..na {
            let k = r.string("attr key")?;
            let v = r.string("attr value")?;
            attrs.insert(k, v);
        }
        r.finish()?;
        Ok(Self {
            tensors,
            meta: CheckpointMeta {
                step,
                constituents,
                sites,
                attrs,
            },
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn write_shape(w: &mut Writer, shape: &[usize]) -> Result<()> {
    w.len_u32(shape.len())?;
    for &d in shape {
        w.len_u32(d)?;
    }
    Ok(())
}

fn read_shape(r: &mut Reader) -> Result<Vec<usize>> {
    let rank = r.u32("rank")?;
    (0..rank).map(|_| Ok(r.u32("dimension")? as usize)).collect()
}

fn numel(shape: &[usize], at: u64) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(at, format!("shape {shape:?} overflows")))
}

fn write_params(w: &mut Writer, p: &QuantParams) {
    w.f64(p.a());
    w.f64(p.delta());
    w.u32(p.bits());
}

fn read_params(r: &mut Reader) -> Result<QuantParams> {
    let at = r.offset();
    let a = r.f64("range a")?;
    let delta = r.f64("step Δ")?;
    let bits = r.u32("bit-width")?;
    QuantParams::from_parts(a, delta, bits).map_err(|e| Error::format(at, e.to_string()))
}
