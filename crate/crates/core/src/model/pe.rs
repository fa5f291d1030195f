use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Sinusoidal position features `[length, d]`: even columns
/// `sin(p / 10000^(2i/d))`, odd columns the matching cosine.
pub fn sinusoidal_pe(length: usize, d: usize) -> Result<Tensor> {
    if length == 0 || d == 0 {
        return Err(Error::contract(format!("positional encoding of size {length}×{d}")));
    }
    let mut data = Vec::with_capacity(length * d);
    for p in 0..length {
        for c in 0..d {
            let i = (c / 2) as f64;
            let angle = p as f64 / 10000f64.powf(2.0 * i / d as f64);
            data.push(if c % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(vec![length, d], data)
}
