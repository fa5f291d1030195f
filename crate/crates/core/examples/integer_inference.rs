//! Runs a randomly initialised, calibrated model on integer arithmetic and
//! compares every quantization site with the fake-quant simulation.
//!
//! `cargo run --release --example integer_inference`

use qtfm::io::{generate_synthetic, SynthTaskSpec};
use qtfm::model::{FrontendSpec, Model, ModelConfig, QuantHooks, Session, Variant, BOS_ID};
use qtfm::pipeline::{integer_linear, ptq_calibrate, simulation_parts, CalibrationOptions, QuantizedModel};
use qtfm::quant::{weight_range, QuantParams, QuantizedTensor};
use qtfm::numcore::{kernels, Tensor};

fn main() -> qtfm::Result<()> {
    // A single requantized product.
    let x = Tensor::from_rows(&[vec![0.5, -1.0, 0.25], vec![1.5, 0.0, -0.75]])?;
    let w = Tensor::from_rows(&[vec![0.2, -0.1], vec![0.4, 0.3], vec![-0.6, 0.05]])?;
    let xq = QuantizedTensor::quantize(&x, weight_range(&x)?);
    let wq = QuantizedTensor::quantize(&w, weight_range(&w)?);
    let y = integer_linear(&xq, &wq, QuantParams::from_range(-1.0, 1.0, 8)?)?;
    println!("integer product  {:?}", y.dequantize().data());
    println!("float reference  {:?}", kernels::matmul(x.data(), w.data(), 2, 3, 2));

    // A whole model.
    let config = ModelConfig {
        enc_layers: 2,
        dec_layers: 2,
        d_model: 16,
        heads: 2,
        d_ff: 32,
        vocab_size: 12,
        feature_dim: 8,
        frontend: FrontendSpec { channels: 4, ..FrontendSpec::default() },
        ..ModelConfig::toy(Variant::Proposed)
    };
    let spec = SynthTaskSpec { vocab_size: 12, feature_dim: 8, ..SynthTaskSpec::default() };
    let data = generate_synthetic(&spec, 16)?;
    let fp = Model::new(config, 1)?.to_checkpoint("fp32", 0)?;
    let opts = CalibrationOptions { batch_frames: 100, ..CalibrationOptions::default() };
    let q = ptq_calibrate(&fp, &data, 20, &opts)?;

    let integer = QuantizedModel::from_checkpoint(&q)?;
    let (model, map) = simulation_parts(&q)?;
    let u = &data.utterances[0];
    let mut input = vec![BOS_ID];
    input.extend_from_slice(&u.tokens);
    let mut s = Session::inference(&model, QuantHooks::simulate(&map)).capture_sites();
    s.forward(&u.features, &input)?;
    let reference = s.take_trace();
    let replayed = integer.replay(&u.features, &input, &reference)?;
    let (mut worst, mut differing) = (0.0f64, 0);
    for ((name, a), (_, b)) in replayed.iter().zip(&reference) {
        let steps = a.max_abs_diff(b) / integer.site_params(name).expect("calibrated").delta();
        worst = worst.max(steps);
        differing += usize::from(steps > 0.0);
    }
    println!(
        "{} sites compared, {differing} differ from the simulation, worst gap {worst:.3} steps",
        replayed.len()
    );

    let (logits, _) = integer.forward_traced(&u.features, &input)?;
    println!("integer logits {:?}, first row {:?}", logits.shape(), &logits.row(0)[..4]);
    Ok(())
}
