use crate::error::{Error, Result};
use crate::io::{Checkpoint, Record};

#[derive(Clone, Debug, PartialEq)]
pub struct TensorBytes {
    pub name: String,
    pub numel: usize,
    pub fp32_bytes: usize,
    pub quantized_bytes: usize,
}

/// Payload bytes of two checkpoints with the same tensor table. An 8-bit
/// tensor costs one byte per element plus its grid (`a`, `Δ`, `K`).
#[derive(Clone, Debug, PartialEq)]
pub struct CompressionReport {
    pub fp32_bytes: usize,
    pub quantized_bytes: usize,
    pub ratio: f64,
    pub tensors: Vec<TensorBytes>,
}

pub fn compression_report(fp32: &Checkpoint, quantized: &Checkpoint) -> Result<CompressionReport> {
    if !fp32.tensors.keys().eq(quantized.tensors.keys()) {
        return Err(Error::contract("checkpoints have different tensor tables"));
    }
    let mut tensors = Vec::with_capacity(fp32.tensors.len());
    for (name, f) in &fp32.tensors {
        let q = &quantized.tensors[name];
        if f.shape() != q.shape() {
            return Err(Error::contract(format!("`{name}` has shape {:?} vs {:?}", f.shape(), q.shape())));
        }
        tensors.push(TensorBytes {
            name: name.clone(),
            numel: f.numel(),
            fp32_bytes: f.payload_bytes(),
            quantized_bytes: q.payload_bytes(),
        });
    }
    let fp32_bytes: usize = tensors.iter().map(|t| t.fp32_bytes).sum();
    let quantized_bytes: usize = tensors.iter().map(|t| t.quantized_bytes).sum();
    Ok(CompressionReport {
        fp32_bytes,
        quantized_bytes,
        ratio: fp32_bytes as f64 / quantized_bytes as f64,
        tensors,
    })
}

impl CompressionReport {
    pub fn to_records(&self) -> Vec<Record> {
        let mut out = vec![Record::new("compression")
            .with("fp32_bytes", self.fp32_bytes)
            .with("quantized_bytes", self.quantized_bytes)
            .with("ratio", format!("{:.6}", self.ratio))
            .with("softmax_layernorm", "real interior, quantized inputs and outputs")];
        out.extend(self.tensors.iter().map(|t| {
            Record::new("tensor")
                .with("name", &t.name)
                .with("numel", t.numel)
                .with("fp32_bytes", t.fp32_bytes)
                .with("quantized_bytes", t.quantized_bytes)
        }));
        out
    }
}
