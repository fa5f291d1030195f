//! Decoder-encoder attention of one utterance, as exported for plotting.
//! Uses a checkpoint when given, otherwise a random toy model.
//!
//! `cargo run --release --example attention_export -- [model.qtfm]`

use qtfm::eval::export_attention;
use qtfm::io::{generate_synthetic, Checkpoint, ExperimentConfig};
use qtfm::model::{Model, Variant};

fn main() -> qtfm::Result<()> {
    let cfg = ExperimentConfig::toy(Variant::Proposed);
    let model = match std::env::args().nth(1) {
        Some(p) => Model::from_checkpoint(&Checkpoint::read(p)?)?,
        None => Model::new(cfg.model.clone(), 0)?,
    };
    let data = generate_synthetic(&cfg.data.task, 1)?;
    let u = &data.utterances[0];
    let dump = export_attention(&model, &u.features, &u.tokens)?;
    println!("tokens {:?}, {} frames, worst row-sum error {:.1e}", u.tokens, u.frames(), dump.max_row_error());

    let last = dump.layers.last().expect("decoder has layers");
    let (rows, cols) = last.mean.dims2()?;
    println!("layer {} head mean, {rows} decoder steps x {cols} encoder steps:", last.layer);
    for r in 0..rows {
        let shade: String = last
            .mean
            .row(r)
            .iter()
            .map(|&p| [' ', '.', ':', '*', '#'][((p * cols as f64).min(4.99)) as usize])
            .collect();
        println!("  |{shade}|");
    }
    let ck = dump.to_checkpoint();
    println!("{} tensors in the exported container", ck.tensors.len());
    Ok(())
}
