//! On-disk corpus: `manifest.tsv` plus one `QFBK` file per utterance under
//! `features/`.

use std::fs;
use std::path::Path;

use super::features::{read_features, write_features};
use super::report::{read_records, write_records, Record};
use super::synth::{Dataset, Utterance};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.tsv";

fn join_tokens(tokens: &[u32]) -> String {
    tokens.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

pub fn parse_tokens(s: &str) -> Result<Vec<u32>> {
    s.split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::contract(format!("bad token id `{t}`"))))
        .collect()
}

pub fn write_dataset(dir: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("features"))?;
    let mut records = Vec::with_capacity(data.len());
    for u in &data.utterances {
        let rel = format!("features/{}.qfbk", u.id);
        write_features(dir.join(&rel), &u.features)?;
        records.push(
            Record::new("utt")
                .with("id", &u.id)
                .with("features", rel)
                .with("tokens", join_tokens(&u.tokens))
                .with("repeated", u.repeated as u8),
        );
    }
    write_records(dir.join(MANIFEST), &records)
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut utterances = Vec::new();
    for r in read_records(dir.join(MANIFEST))? {
        if r.kind != "utt" {
            continue;
        }
        let id = r.parse_field::<String>("id")?;
        let rel = r.parse_field::<String>("features")?;
        utterances.push(Utterance {
            id,
            features: read_features(dir.join(rel))?,
            tokens: parse_tokens(r.get("tokens").unwrap_or_default())?,
            repeated: r.get("repeated") == Some("1"),
        });
    }
    Ok(Dataset { utterances })
}
