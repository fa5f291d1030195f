//! Trains the toy proposed model on the synthetic task and scores the last
//! model and the checkpoint average on the held-out split.
//!
//! `cargo run --release --example train_toy -- [--config toy.toml] [--save fp32.qtfm]`

use std::path::PathBuf;
use std::time::Instant;

use clap::Parser;
use qtfm::eval::evaluate;
use qtfm::io::{generate_synthetic, ExperimentConfig};
use qtfm::model::{Model, Variant};
use qtfm::train::{checkpoint_average, train_loop, QuantMode, TrainOptions};

#[derive(Parser)]
struct Args {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write the averaged checkpoint.
    #[arg(long)]
    save: Option<PathBuf>,
}

fn main() -> qtfm::Result<()> {
    let args = Args::parse();
    let cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::toy(Variant::Proposed),
    };
    let data = generate_synthetic(&cfg.data.task, cfg.data.train_utterances + cfg.data.test_utterances)?;
    let (train, test) = data.split_at(cfg.data.train_utterances);
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    println!("{} parameters, {} train frames", model.num_params(), train.total_frames());
    let t0 = Instant::now();
    let run = train_loop(
        &mut model,
        &train,
        &cfg.train,
        QuantMode::Off,
        TrainOptions { verbose: true, ..Default::default() },
    )?;
    println!("{} steps in {:.1}s", run.steps.len(), t0.elapsed().as_secs_f64());
    let s = evaluate(&model, &test, cfg.eval.max_len)?;
    println!("last: token accuracy {:.4}, WER {:.4}", s.token_accuracy(), s.wer());
    let avg = checkpoint_average(&run.checkpoints)?;
    let s = evaluate(&Model::from_checkpoint(&avg)?, &test, cfg.eval.max_len)?;
    println!(
        "average of {}: token accuracy {:.4}, WER {:.4}",
        run.checkpoints.len(),
        s.token_accuracy(),
        s.wer()
    );
    if let Some(path) = &args.save {
        avg.write(path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
