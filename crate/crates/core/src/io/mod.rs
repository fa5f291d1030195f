//! File formats, synthetic data and configuration.

mod binary;
mod checkpoint;
pub mod config;
mod dataset;
mod features;
pub mod report;
mod synth;

pub use checkpoint::{
    Checkpoint, CheckpointMeta, SiteRecord, StoredTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::ExperimentConfig;
pub use dataset::{parse_tokens, read_dataset, write_dataset, MANIFEST};
pub use features::{features_from_bytes, features_to_bytes, read_features, write_features, FEATURE_MAGIC};
pub use report::Record;
pub use synth::{generate_synthetic, has_repeated_bigram, Dataset, SynthTaskSpec, Utterance};
