//! Uniform quantization: grids, quantize/dequantize, fake quantization and
//! activation range tracking.

mod params;
mod tracker;

pub use params::{clamp, QuantParams, DEFAULT_BITS, DEGENERATE_HALF_WIDTH};
pub use tracker::{RangeTracker, DEFAULT_MOMENTUM};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Integer codes on a shared grid.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub codes: Vec<u8>,
    pub params: QuantParams,
}

impl QuantizedTensor {
    pub fn new(shape: Vec<usize>, codes: Vec<u8>, params: QuantParams) -> Result<Self> {
        if shape.iter().product::<usize>() != codes.len() {
            return Err(Error::shape("quantized tensor", format!("{shape:?} vs {} codes", codes.len())));
        }
        if let Some(bad) = codes.iter().find(|&&c| c as u32 > params.max_code()) {
            return Err(Error::contract(format!("code {bad} exceeds {}", params.max_code())));
        }
        Ok(Self { shape, codes, params })
    }

    pub fn quantize(t: &Tensor, params: QuantParams) -> Self {
        Self {
            shape: t.shape().to_vec(),
            codes: t.data().iter().map(|&v| params.quantize(v)).collect(),
            params,
        }
    }

    pub fn dequantize(&self) -> Tensor {
        let data = self.codes.iter().map(|&c| self.params.value(c)).collect();
        Tensor::new(self.shape.clone(), data).expect("shape checked at construction")
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// Per-tensor grid spanning `[min W, max W]`.
pub fn weight_range(w: &Tensor) -> Result<QuantParams> {
    weight_range_bits(w, DEFAULT_BITS)
}

pub fn weight_range_bits(w: &Tensor, bits: u32) -> Result<QuantParams> {
    let (lo, hi) = w
        .min_max()
        .ok_or_else(|| Error::contract("weight_range of an empty tensor"))?;
    QuantParams::from_range(lo, hi, bits)
}

/// Elementwise `dequantize(quantize(x))`.
pub fn fake_quant(x: &Tensor, p: &QuantParams) -> Tensor {
    let data = x.data().iter().map(|&v| p.fake(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Graph;

    #[test]
    fn weight_range_spans_extremes() {
        let w = Tensor::from_vec(vec![-2.0, 0.0, 3.0]);
        let p = weight_range(&w).unwrap();
        assert_eq!(p.a(), -2.0);
        assert!((p.b() - 3.0).abs() < 1e-12);
        assert!(weight_range(&Tensor::from_vec(vec![])).is_err());
    }

    #[test]
    fn constant_weights_get_a_widened_grid() {
        let w = Tensor::full(&[4], 0.25);
        let p = weight_range(&w).unwrap();
        assert!(p.delta() > 0.0);
        let q = fake_quant(&w, &p);
        assert!(q.max_abs_diff(&w) <= p.delta() / 2.0);
    }

    #[test]
    fn quantized_tensor_rejects_bad_codes() {
        let p = QuantParams::from_range(0.0, 1.0, 4).unwrap();
        assert!(QuantizedTensor::new(vec![2], vec![3, 16], p).is_err());
        assert!(QuantizedTensor::new(vec![3], vec![3, 15], p).is_err());
        assert!(QuantizedTensor::new(vec![2], vec![3, 15], p).is_ok());
    }

    #[test]
    fn ste_gradient_is_one_inside_zero_outside() {
        let p = QuantParams::from_range(-1.0, 1.0, 8).unwrap();
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![-2.0, -0.5, 0.0, 0.99, 1.0, 1.5]).with_grad(true));
        let y = g.fake_quant(x, &p);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn dequantized_values_stay_within_half_step_of_range() {
        let p = QuantParams::from_range(-0.7, 0.4, 8).unwrap();
        let t = Tensor::from_vec((0..100).map(|i| -2.0 + i as f64 * 0.04).collect());
        let q = QuantizedTensor::quantize(&t, p).dequantize();
        for v in q.data() {
            assert!(*v >= p.a() - p.delta() / 2.0 && *v <= p.b() + p.delta() / 2.0);
        }
    }
}
