use std::collections::BTreeMap;

use super::wer::wer;
use crate::error::{Error, Result};
use crate::io::Record;

#[derive(Clone, Debug, PartialEq)]
pub struct LengthDeletionRow {
    pub utterance: usize,
    pub ref_len: usize,
    pub deletions: usize,
}

/// Deletions per utterance against reference length, plus the distribution
/// of training transcript lengths for comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct LengthDeletionReport {
    pub rows: Vec<LengthDeletionRow>,
    pub train_length_histogram: BTreeMap<usize, usize>,
}

pub fn length_deletion_report(
    refs: &[Vec<u32>],
    hyps: &[Vec<u32>],
    train_lengths: &[usize],
) -> Result<LengthDeletionReport> {
    if refs.len() != hyps.len() {
        return Err(Error::contract(format!("{} references but {} hypotheses", refs.len(), hyps.len())));
    }
    let rows = refs
        .iter()
        .zip(hyps)
        .enumerate()
        .map(|(i, (r, h))| LengthDeletionRow {
            utterance: i,
            ref_len: r.len(),
            deletions: wer(r, h).deletions,
        })
        .collect();
    let mut hist = BTreeMap::new();
    for &l in train_lengths {
        *hist.entry(l).or_insert(0) += 1;
    }
    Ok(LengthDeletionReport {
        rows,
        train_length_histogram: hist,
    })
}

impl LengthDeletionReport {
    pub fn to_records(&self) -> Vec<Record> {
        let mut out: Vec<Record> = self
            .rows
            .iter()
            .map(|r| {
                Record::new("length_deletion")
                    .with("utterance", r.utterance)
                    .with("ref_len", r.ref_len)
                    .with("deletions", r.deletions)
            })
            .collect();
        out.extend(
            self.train_length_histogram
                .iter()
                .map(|(l, c)| Record::new("train_length").with("length", l).with("count", c)),
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_missing_span() {
        let refs = vec![vec![3, 4, 5], (3..13).collect::<Vec<u32>>()];
        let mut skipped = refs[1].clone();
        skipped.drain(2..7);
        let r = length_deletion_report(&refs, &[refs[0].clone(), skipped], &[3, 3, 10]).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.rows[0].deletions, 0);
        assert_eq!((r.rows[1].ref_len, r.rows[1].deletions), (10, 5));
        assert_eq!(r.train_length_histogram[&3], 2);
        assert!(length_deletion_report(&refs, &[], &[]).is_err());
    }
}
