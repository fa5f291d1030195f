//! Word error rate with the error breakdown and the alignment itself.
//!
//! `cargo run --release --example wer_scoring`

use qtfm::eval::{length_deletion_report, wer, CorpusWer, Edit};

fn show(reference: &str, hypothesis: &str) -> qtfm::eval::AlignmentResult<String> {
    let r: Vec<String> = reference.split_whitespace().map(String::from).collect();
    let h: Vec<String> = hypothesis.split_whitespace().map(String::from).collect();
    let a = wer(&r, &h);
    let cols: Vec<String> = a
        .alignment
        .iter()
        .map(|e| match e {
            Edit::Hit(x) => x.clone(),
            Edit::Sub { reference, hypothesis } => format!("{reference}->{hypothesis}"),
            Edit::Ins(x) => format!("+{x}"),
            Edit::Del(x) => format!("-{x}"),
        })
        .collect();
    println!(
        "WER {:>6.2}%  S {} I {} D {}  | {}",
        a.wer * 100.0,
        a.substitutions,
        a.insertions,
        a.deletions,
        cols.join(" ")
    );
    a
}

fn main() -> qtfm::Result<()> {
    let pairs = [
        ("the cat sat on the mat", "the cat sat on the mat"),
        ("a b c d", "a c d"),
        ("speech recognition is fun", "speech wreck a nition is fun"),
        ("go go go now", "go now"),
    ];
    let mut corpus = CorpusWer::default();
    for (r, h) in pairs {
        corpus.add(&show(r, h));
    }
    println!("corpus WER {:.2}% over {} utterances", corpus.wer() * 100.0, corpus.utterances);

    let refs: Vec<Vec<u32>> = vec![vec![3, 4], vec![3, 4, 5, 6, 7, 8], vec![5, 5, 5, 5, 5, 5, 5, 5]];
    let hyps: Vec<Vec<u32>> = vec![vec![3, 4], vec![3, 4, 5, 6], vec![5, 5, 5]];
    let report = length_deletion_report(&refs, &hyps, &[2, 3, 4, 6])?;
    for row in &report.rows {
        println!("utterance {} length {} deletions {}", row.utterance, row.ref_len, row.deletions);
    }
    Ok(())
}
