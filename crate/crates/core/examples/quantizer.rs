//! The 8-bit uniform quantizer and the activation range tracker.
//!
//! `cargo run --release --example quantizer`

use qtfm::numcore::Tensor;
use qtfm::quant::{fake_quant, weight_range, QuantParams, QuantizedTensor, RangeTracker};

fn main() -> qtfm::Result<()> {
    let p = QuantParams::from_range(-1.0, 1.0, 8)?;
    println!("[a, b] = [{}, {}], delta = {:.6}", p.a(), p.b(), p.delta());
    for x in [-2.0, -1.0, -0.3, 0.0, 0.5, 0.999, 3.0] {
        let c = p.quantize(x);
        println!("  x = {x:+.3} -> code {c:>3} -> {:+.6}", p.value(c));
    }

    let w = Tensor::from_rows(&[vec![0.12, -0.4, 0.33], vec![0.9, -0.05, 0.0]])?;
    let q = QuantizedTensor::quantize(&w, weight_range(&w)?);
    println!("weight codes {:?}", q.codes);
    println!("dequantized  {:?}", q.dequantize().data());
    println!("fake-quant   {:?}", fake_quant(&w, &q.params).data());

    let mut t = RangeTracker::new(0.9);
    for (lo, hi) in [(0.0, 1.0), (0.0, 2.0), (-0.5, 2.0), (-0.5, 2.0)] {
        t.update(lo, hi)?;
        println!("batch [{lo}, {hi}] -> running [{:.4}, {:.4}]", t.running_min, t.running_max);
    }
    Ok(())
}
