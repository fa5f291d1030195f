//! Byte accounting of full-precision vs 8-bit checkpoints for the toy model
//! and the paper-scale model (random weights; sizes do not depend on them).
//!
//! `cargo run --release --example compression`

use qtfm::io::{generate_synthetic, Checkpoint, SynthTaskSpec};
use qtfm::model::{Model, ModelConfig, Variant};
use qtfm::pipeline::{compression_report, ptq_calibrate, CalibrationOptions};

fn report(name: &str, config: ModelConfig) -> qtfm::Result<()> {
    let spec = SynthTaskSpec { feature_dim: config.feature_dim, ..SynthTaskSpec::default() };
    let fp: Checkpoint = Model::new(config, 0)?.to_checkpoint("fp32", 0)?;
    let data = generate_synthetic(&spec, 1)?;
    let q = ptq_calibrate(&fp, &data, 1, &CalibrationOptions::default())?;
    let r = compression_report(&fp, &q)?;
    let (f, b) = (fp.to_bytes()?.len(), q.to_bytes()?.len());
    println!(
        "{name:<6} payload {:>11} -> {:>10} bytes ({:.3}x); files {f:>11} -> {b:>10} bytes ({:.3}x)",
        r.fp32_bytes,
        r.quantized_bytes,
        r.ratio,
        f as f64 / b as f64
    );
    let smallest = r
        .tensors
        .iter()
        .filter(|t| q.tensors[&t.name].is_quantized())
        .min_by_key(|t| t.numel)
        .expect("some weights are quantized");
    println!(
        "       smallest quantized tensor {} ({} values): {} -> {} bytes",
        smallest.name, smallest.numel, smallest.fp32_bytes, smallest.quantized_bytes
    );
    Ok(())
}

fn main() -> qtfm::Result<()> {
    report("toy", ModelConfig::toy(Variant::Proposed))?;
    report("paper", ModelConfig::paper(Variant::Proposed))
}
