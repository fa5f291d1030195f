//! Quantizes a trained toy model both ways and compares held-out WER:
//! post-training calibration of the float model, and a short
//! quantization-aware fine-tune followed by finalization.
//!
//! `cargo run --release --example quantize_toy -- --checkpoint fp32.qtfm`
//! (train one with the `train_toy` example).

use std::path::PathBuf;
use std::time::Instant;

use clap::Parser;
use qtfm::eval::{evaluate, EvalSummary};
use qtfm::io::{generate_synthetic, Checkpoint, ExperimentConfig};
use qtfm::model::{Model, Variant};
use qtfm::pipeline::{load_quantized, ptq_calibrate, qat_finalize, CalibrationOptions};
use qtfm::train::{train_loop, QuantMode, TrainOptions};

#[derive(Parser)]
struct Args {
    /// Averaged full-precision checkpoint of the toy model.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Epochs of quantization-aware fine-tuning.
    #[arg(long, default_value_t = 6)]
    qat_epochs: usize,
    /// Calibration / range-adjustment batches.
    #[arg(long)]
    steps: Option<usize>,
}

fn report(name: &str, s: &EvalSummary, t: Instant) {
    println!(
        "{name:>10}: WER {:.4}, token accuracy {:.4} ({:.1}s)",
        s.wer(),
        s.token_accuracy(),
        t.elapsed().as_secs_f64()
    );
}

fn main() -> qtfm::Result<()> {
    let args = Args::parse();
    let cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::toy(Variant::Proposed),
    };
    let data = generate_synthetic(&cfg.data.task, cfg.data.train_utterances + cfg.data.test_utterances)?;
    let (train, test) = data.split_at(cfg.data.train_utterances);
    let fp = Checkpoint::read(&args.checkpoint)?;
    let steps = args.steps.unwrap_or(cfg.quant.calibration_steps);
    let opts = CalibrationOptions::from_config(&cfg.quant, cfg.seed);

    let t = Instant::now();
    report("fp32", &evaluate(&Model::from_checkpoint(&fp)?, &test, cfg.eval.max_len)?, t);

    let t = Instant::now();
    let ptq = ptq_calibrate(&fp, &train, steps, &opts)?;
    println!("calibrated over {steps} batches in {:.1}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    report("ptq", &evaluate(&load_quantized(&ptq, false)?, &test, cfg.eval.max_len)?, t);

    let t = Instant::now();
    let mut model = Model::from_checkpoint(&fp)?;
    let mut schedule = cfg.train.clone();
    schedule.max_epochs = args.qat_epochs;
    let run = train_loop(
        &mut model,
        &train,
        &schedule,
        QuantMode::Qat,
        TrainOptions { verbose: true, ..Default::default() },
    )?;
    let fin = qat_finalize(&run.checkpoints, &train, steps, &opts)?;
    println!("fine-tuned and finalized in {:.1}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    report("qat-final", &evaluate(&load_quantized(&fin, false)?, &test, cfg.eval.max_len)?, t);
    Ok(())
}
