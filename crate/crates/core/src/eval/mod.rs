//! Decoding, WER scoring, deletion analysis and attention export.

mod analysis;
mod attention;
mod decode;
mod wer;

pub use analysis::{length_deletion_report, LengthDeletionReport, LengthDeletionRow};
pub use attention::{export_attention, AttentionDump, LayerAttention};
pub use decode::{greedy_decode, Decoded, Simulated, Transcriber};
pub use wer::{wer, AlignmentResult, CorpusWer, Edit};

use crate::error::Result;
use crate::io::Dataset;

/// Corpus scores from greedy decoding.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalSummary {
    pub corpus: CorpusWer,
    pub truncated: usize,
    pub hypotheses: Vec<Vec<u32>>,
}

impl EvalSummary {
    pub fn wer(&self) -> f64 {
        self.corpus.wer()
    }

    pub fn token_accuracy(&self) -> f64 {
        self.corpus.token_accuracy()
    }
}

/// Greedy-decodes every utterance and pools the alignments.
pub fn evaluate<T: Transcriber + ?Sized>(model: &T, data: &Dataset, max_len: usize) -> Result<EvalSummary> {
    let mut out = EvalSummary::default();
    for u in &data.utterances {
        let d = greedy_decode(model, &u.features, max_len)?;
        out.corpus.add(&wer(&u.tokens, &d.tokens));
        out.truncated += d.truncated as usize;
        out.hypotheses.push(d.tokens);
    }
    Ok(out)
}
