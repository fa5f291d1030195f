//! Command-line surface. Every command writes machine-readable output under
//! `--out` and a short summary to standard output.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::eval::{evaluate, export_attention, length_deletion_report, wer, CorpusWer, EvalSummary, Simulated};
use crate::io::report::{read_records, write_records};
use crate::io::{generate_synthetic, parse_tokens, read_dataset, write_dataset, Checkpoint, Dataset, ExperimentConfig, Record};
use crate::model::{count_params, Model, Variant};
use crate::pipeline::{
    compression_report, load_quantized, ptq_calibrate, qat_finalize, simulation_parts, CalibrationOptions,
};
use crate::train::{checkpoint_average, train_loop, QuantMode, TrainOptions, ATTR_NAME};

#[derive(Parser, Debug)]
#[command(name = "qtfm", version, about = "Speech-Transformer training with 8-bit quantization")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Experiment configuration (TOML). Defaults to the toy setup.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    #[arg(long = "quant", global = true)]
    pub quant: Option<QuantMode>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Engine {
    /// Fake-quant simulation in floating point.
    Simulate,
    /// Integer products on 8-bit codes.
    Integer,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic train/test corpus.
    GenData,
    /// Train a model; writes one checkpoint per epoch and their average.
    Train {
        /// Corpus directory from gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Start from these weights instead of a random init.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Overrides `train.max_epochs`.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Post-training quantization of a full-precision checkpoint.
    QuantizePtq {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Calibration batches (overrides the config).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Average QAT checkpoints and their ranges, then adjust the ranges.
    QuantizeQatFinalize {
        #[arg(long, num_args = 1.., required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Element-wise average of checkpoints.
    Average {
        #[arg(long, num_args = 1.., required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Greedy-decode a corpus and score it, or score transcript files.
    Eval {
        #[arg(long, required_unless_present = "reference")]
        checkpoint: Option<PathBuf>,
        #[arg(long, requires = "checkpoint")]
        data: Option<PathBuf>,
        /// How to run a quantized checkpoint.
        #[arg(long, value_enum, default_value = "integer")]
        engine: Engine,
        /// Evaluate a checkpoint flagged uncalibrated anyway.
        #[arg(long)]
        allow_uncalibrated: bool,
        /// Reference transcripts (records with `id` and `tokens`).
        #[arg(long = "ref", requires = "hypothesis", conflicts_with = "checkpoint")]
        reference: Option<PathBuf>,
        /// Hypothesis transcripts in the same format.
        #[arg(long = "hyp")]
        hypothesis: Option<PathBuf>,
    },
    /// Byte accounting of a full-precision vs a quantized checkpoint.
    ReportCompression {
        #[arg(long)]
        fp32: PathBuf,
        #[arg(long)]
        quantized: PathBuf,
    },
    /// Decoder-encoder attention of one utterance.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Utterance id; defaults to the first one.
        #[arg(long)]
        utterance: Option<String>,
    },
    /// Parameter count of the configured model.
    CountParams,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

/// Parses arguments and runs the command. Clap handles `--help` and usage
/// errors itself (printing usage and exiting nonzero).
pub fn main_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run(Cli::parse_from(args))
}

pub fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut c = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::toy(Variant::Proposed),
    };
    if let Some(v) = g.variant {
        c.model = c.model.with_variant(v);
    }
    if let Some(s) = g.seed {
        c.seed = s;
        c.train.seed = s;
        c.data.task.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn create(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let out = cli.global.out.clone();
    match cli.command {
        Command::GenData => {
            let n = cfg.data.train_utterances + cfg.data.test_utterances;
            let (train, test) = generate_synthetic(&cfg.data.task, n)?.split_at(cfg.data.train_utterances);
            write_dataset(out.join("train"), &train)?;
            write_dataset(out.join("test"), &test)?;
            println!(
                "wrote {} train / {} test utterances to {}",
                train.len(),
                test.len(),
                out.display()
            );
        }
        Command::Train { data, init, epochs } => {
            let mut schedule = cfg.train.clone();
            if let Some(e) = epochs {
                schedule.max_epochs = e;
            }
            let mode = cli.global.quant.unwrap_or(QuantMode::Off);
            let train = read_split(&data, "train")?;
            let mut model = match init {
                Some(p) => {
                    let m = Model::from_checkpoint(&Checkpoint::read(p)?)?;
                    if m.config != cfg.model {
                        return Err(Error::Config("--init checkpoint does not match the configured model".into()));
                    }
                    m
                }
                None => Model::new(cfg.model.clone(), cfg.seed)?,
            };
            let opts = TrainOptions {
                out_dir: Some(out.clone()),
                verbose: true,
                site_map: None,
            };
            let run = train_loop(&mut model, &train, &schedule, mode, opts)?;
            let mut avg = checkpoint_average(&run.checkpoints)?;
            avg.set_attr(ATTR_NAME, "average");
            avg.write(out.join("average.qtfm"))?;
            let last = run.metrics.last().expect("at least one epoch");
            println!(
                "{} steps, final loss {}, frame accuracy {}; averaged {} checkpoints into {}",
                run.steps.len(),
                last.get("loss").unwrap_or("?"),
                last.get("frame_accuracy").unwrap_or("?"),
                run.checkpoints.len(),
                out.join("average.qtfm").display()
            );
        }
        Command::QuantizePtq { checkpoint, data, steps } => {
            let ck = Checkpoint::read(checkpoint)?;
            let train = read_split(&data, "train")?;
            let steps = steps.unwrap_or(cfg.quant.calibration_steps);
            let q = ptq_calibrate(&ck, &train, steps, &CalibrationOptions::from_config(&cfg.quant, cfg.seed))?;
            create(&out)?;
            q.write(out.join("ptq.qtfm"))?;
            println!("calibrated over {steps} batches -> {}", out.join("ptq.qtfm").display());
        }
        Command::QuantizeQatFinalize { checkpoints, data, steps } => {
            let cks = checkpoints.iter().map(Checkpoint::read).collect::<Result<Vec<_>>>()?;
            let train = read_split(&data, "train")?;
            let steps = steps.unwrap_or(cfg.quant.calibration_steps);
            let q = qat_finalize(&cks, &train, steps, &CalibrationOptions::from_config(&cfg.quant, cfg.seed))?;
            create(&out)?;
            q.write(out.join("qat-final.qtfm"))?;
            println!(
                "finalized {} checkpoints, ranges adjusted over {steps} batches -> {}",
                cks.len(),
                out.join("qat-final.qtfm").display()
            );
        }
        Command::Average { checkpoints } => {
            let cks = checkpoints.iter().map(Checkpoint::read).collect::<Result<Vec<_>>>()?;
            let avg = checkpoint_average(&cks)?;
            create(&out)?;
            avg.write(out.join("average.qtfm"))?;
            println!("averaged {} checkpoints -> {}", cks.len(), out.join("average.qtfm").display());
        }
        Command::Eval {
            checkpoint,
            data,
            engine,
            allow_uncalibrated,
            reference,
            hypothesis,
        } => {
            create(&out)?;
            if let (Some(r), Some(h)) = (reference, hypothesis) {
                let corpus = score_files(&r, &h)?;
                write_records(out.join("eval.tsv"), &[summary_record(&corpus, 0)])?;
                println!("WER {:.4} over {} utterances", corpus.wer(), corpus.utterances);
                return Ok(());
            }
            let ck = Checkpoint::read(checkpoint.expect("clap enforces --checkpoint"))?;
            let dir = data.ok_or_else(|| Error::Config("eval needs --data with a checkpoint".into()))?;
            let test = read_split(&dir, "test")?;
            let s = evaluate_checkpoint(&ck, &test, cfg.eval.max_len, engine, allow_uncalibrated)?;
            let mut records = vec![summary_record(&s.corpus, s.truncated)];
            records.extend(test.utterances.iter().zip(&s.hypotheses).map(|(u, h)| {
                Record::new("hyp").with("id", &u.id).with("tokens", join(h))
            }));
            write_records(out.join("eval.tsv"), &records)?;
            let refs: Vec<Vec<u32>> = test.utterances.iter().map(|u| u.tokens.clone()).collect();
            let train_lengths = match read_split(&dir, "train") {
                Ok(t) => t.utterances.iter().map(|u| u.tokens.len()).collect(),
                Err(_) => Vec::new(),
            };
            let report = length_deletion_report(&refs, &s.hypotheses, &train_lengths)?;
            write_records(out.join("length_deletion.tsv"), &report.to_records())?;
            println!(
                "WER {:.4}, token accuracy {:.4} (S {} I {} D {}) over {} utterances",
                s.wer(),
                s.token_accuracy(),
                s.corpus.substitutions,
                s.corpus.insertions,
                s.corpus.deletions,
                s.corpus.utterances
            );
        }
        Command::ReportCompression { fp32, quantized } => {
            let (f, q) = (Checkpoint::read(&fp32)?, Checkpoint::read(&quantized)?);
            let r = compression_report(&f, &q)?;
            create(&out)?;
            write_records(out.join("compression.tsv"), &r.to_records())?;
            let (fb, qb) = (std::fs::metadata(&fp32)?.len(), std::fs::metadata(&quantized)?.len());
            println!(
                "payload {} -> {} bytes, ratio {:.3}; files {fb} -> {qb} bytes, ratio {:.3}",
                r.fp32_bytes,
                r.quantized_bytes,
                r.ratio,
                fb as f64 / qb as f64
            );
        }
        Command::ExportAttention { checkpoint, data, utterance } => {
            let model = Model::from_checkpoint(&Checkpoint::read(checkpoint)?)?;
            let set = read_split(&data, "test")?;
            let u = match &utterance {
                Some(id) => set
                    .utterances
                    .iter()
                    .find(|u| &u.id == id)
                    .ok_or_else(|| Error::Config(format!("no utterance `{id}`")))?,
                None => set
                    .utterances
                    .first()
                    .ok_or_else(|| Error::Config("corpus is empty".into()))?,
            };
            let dump = export_attention(&model, &u.features, &u.tokens)?;
            create(&out)?;
            let path = out.join(format!("attention-{}.qtfm", u.id));
            dump.to_checkpoint().write(&path)?;
            println!(
                "{} decoder layers, worst row-sum error {:.2e} -> {}",
                dump.layers.len(),
                dump.max_row_error(),
                path.display()
            );
        }
        Command::CountParams => {
            let n = count_params(&cfg.model)?;
            let name = cfg.model.variant().map_or("custom", Variant::name);
            println!("{name}: {n} parameters ({:.2}M)", n as f64 / 1e6);
        }
        Command::ShowConfig => print!("{}", cfg.to_toml()?),
    }
    Ok(())
}

/// `dir/split` when it exists, else `dir` itself.
fn read_split(dir: &Path, split: &str) -> Result<Dataset> {
    let sub = dir.join(split);
    if sub.join(crate::io::MANIFEST).exists() {
        read_dataset(sub)
    } else {
        read_dataset(dir)
    }
}

fn join(tokens: &[u32]) -> String {
    tokens.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

fn summary_record(c: &CorpusWer, truncated: usize) -> Record {
    Record::new("summary")
        .with("utterances", c.utterances)
        .with("wer", format!("{:.6}", c.wer()))
        .with("token_accuracy", format!("{:.6}", c.token_accuracy()))
        .with("hits", c.hits)
        .with("substitutions", c.substitutions)
        .with("insertions", c.insertions)
        .with("deletions", c.deletions)
        .with("truncated", truncated)
}

/// Runs a checkpoint of any kind: float weights directly, quantized ones
/// through the chosen engine after the calibration guard.
pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    data: &Dataset,
    max_len: usize,
    engine: Engine,
    allow_uncalibrated: bool,
) -> Result<EvalSummary> {
    if !ck.tensors.values().any(|t| t.is_quantized()) {
        return evaluate(&Model::from_checkpoint(ck)?, data, max_len);
    }
    match engine {
        Engine::Integer => evaluate(&load_quantized(ck, allow_uncalibrated)?, data, max_len),
        Engine::Simulate => {
            crate::pipeline::check_calibrated(ck, allow_uncalibrated)?;
            let (model, map) = simulation_parts(ck)?;
            evaluate(&Simulated { model: &model, source: &map }, data, max_len)
        }
    }
}

fn transcripts(path: &Path) -> Result<Vec<(String, Vec<u32>)>> {
    read_records(path)?
        .into_iter()
        .filter(|r| r.get("tokens").is_some())
        .map(|r| Ok((r.parse_field::<String>("id")?, parse_tokens(r.get("tokens").unwrap_or_default())?)))
        .collect()
}

/// Pairs hypotheses with references by id.
pub fn score_files(reference: &Path, hypothesis: &Path) -> Result<CorpusWer> {
    let refs = transcripts(reference)?;
    let hyps: std::collections::HashMap<String, Vec<u32>> = transcripts(hypothesis)?.into_iter().collect();
    let mut c = CorpusWer::default();
    for (id, r) in &refs {
        let h = hyps
            .get(id)
            .ok_or_else(|| Error::contract(format!("no hypothesis for `{id}`")))?;
        c.add(&wer(r, h));
    }
    Ok(c)
}
