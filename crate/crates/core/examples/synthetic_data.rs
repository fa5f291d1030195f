//! Generates the synthetic spectrogram-to-token corpus and writes it to disk.
//!
//! `cargo run --release --example synthetic_data -- [out-dir]`

use qtfm::io::{generate_synthetic, has_repeated_bigram, read_dataset, write_dataset, SynthTaskSpec};

fn main() -> qtfm::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "out/synthetic".into());
    let spec = SynthTaskSpec::default();
    let data = generate_synthetic(&spec, 500)?;

    let lengths: Vec<usize> = data.utterances.iter().map(|u| u.tokens.len()).collect();
    let repeated = data.utterances.iter().filter(|u| has_repeated_bigram(&u.tokens)).count();
    println!(
        "{} utterances, {} frames, {}-{} tokens, {} with a repeated bigram",
        data.len(),
        data.total_frames(),
        lengths.iter().min().unwrap(),
        lengths.iter().max().unwrap(),
        repeated
    );
    let u = &data.utterances[0];
    println!("{}: tokens {:?}, {} frames x {} dims", u.id, u.tokens, u.frames(), u.features.shape()[1]);
    for t in 0..u.frames().min(6) {
        let row: Vec<String> = u.features.row(t).iter().take(8).map(|v| format!("{v:+.2}")).collect();
        println!("  frame {t}: {} ...", row.join(" "));
    }

    write_dataset(&dir, &data)?;
    assert_eq!(read_dataset(&dir)?, data);
    println!("wrote and re-read {dir}");
    Ok(())
}
