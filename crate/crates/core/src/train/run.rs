use std::collections::VecDeque;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::average::ATTR_NAME;
use super::metrics::frame_hits;
use super::optim::{adadelta_step, clip_gradients, AdaDeltaConfig, GradMap, OptimizerState};
use crate::error::{Error, Result};
use crate::io::report::{write_records, Record};
use crate::io::{Checkpoint, Dataset};
use crate::model::{Model, QuantHooks, Session, BOS_ID, EOS_ID, PAD_ID};
use crate::pipeline::{build_site_map, QuantSiteMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantMode {
    Off,
    Qat,
}

impl fmt::Display for QuantMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuantMode::Off => "off",
            QuantMode::Qat => "qat",
        })
    }
}

impl FromStr for QuantMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(QuantMode::Off),
            "qat" => Ok(QuantMode::Qat),
            _ => Err(Error::Config(format!("unknown quant mode `{s}` (expected off or qat)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<u64>,
    pub grad_clip: f64,
    /// Frame budget per batch.
    pub batch_frames: usize,
    pub checkpoint_average_last: usize,
    /// QAT step at which activation fake-quantization starts.
    pub activation_quant_start_step: u64,
    pub rho: f64,
    pub eps: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 80,
            max_steps: None,
            grad_clip: 10.0,
            batch_frames: 80_000,
            checkpoint_average_last: 30,
            activation_quant_start_step: 3000,
            rho: 0.95,
            eps: 1e-6,
            learning_rate: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale schedule for the synthetic task.
    pub fn toy() -> Self {
        Self {
            max_epochs: 22,
            batch_frames: 1000,
            checkpoint_average_last: 5,
            activation_quant_start_step: 300,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.max_epochs > 0
            && self.grad_clip > 0.0
            && self.batch_frames > 0
            && self.checkpoint_average_last > 0
            && self.max_steps != Some(0)
            && (0.0..1.0).contains(&self.rho)
            && self.eps > 0.0
            && self.learning_rate > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid training configuration {self:?}")));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdaDeltaConfig {
        AdaDeltaConfig {
            rho: self.rho,
            eps: self.eps,
            learning_rate: self.learning_rate,
        }
    }
}

/// Side channels of a training run.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Directory for per-epoch checkpoints and `metrics.tsv`.
    pub out_dir: Option<PathBuf>,
    /// Progress lines on standard error.
    pub verbose: bool,
    /// Starting site map for QAT (e.g. resumed trackers).
    pub site_map: Option<QuantSiteMap>,
}

/// Instrumentation for one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub weight_fake_quant: usize,
    pub activation_fake_quant: usize,
}

pub struct TrainRun {
    pub metrics: Vec<Record>,
    /// The most recent `checkpoint_average_last` epoch checkpoints, oldest first.
    pub checkpoints: Vec<Checkpoint>,
    pub steps: Vec<StepInfo>,
    pub site_map: Option<QuantSiteMap>,
}

/// Utterance indices grouped so that each batch holds at most `budget`
/// frames (a longer utterance gets a batch of its own).
pub fn make_batches(data: &Dataset, budget: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    let mut cur = Vec::new();
    let mut frames = 0;
    for i in order {
        let f = data.utterances[i].frames();
        if !cur.is_empty() && frames + f > budget {
            batches.push(std::mem::take(&mut cur));
            frames = 0;
        }
        cur.push(i);
        frames += f;
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches
}

fn step_seed(seed: u64, step: u64) -> u64 {
    seed ^ step.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Teacher-forced training. One graph is recorded per batch; one checkpoint
/// is taken per epoch.
pub fn train_loop(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    mode: QuantMode,
    opts: TrainOptions,
) -> Result<TrainRun> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut sites = match (mode, opts.site_map) {
        (QuantMode::Qat, Some(m)) => Some(m),
        (QuantMode::Qat, None) => Some(build_site_map(&model.config)?),
        (QuantMode::Off, _) => None,
    };
    let mut state = OptimizerState::new(cfg.optimizer());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut step: u64 = 0;
    let mut metrics = Vec::new();
    let mut steps = Vec::new();
    let mut kept: VecDeque<Checkpoint> = VecDeque::new();
    let kind = match mode {
        QuantMode::Off => "fp32",
        QuantMode::Qat => "qat",
    };

    for epoch in 1..=cfg.max_epochs {
        let mut stop = false;
        let batches = make_batches(data, cfg.batch_frames, &mut rng);
        let (mut loss_sum, mut hits, mut total) = (0.0, 0usize, 0usize);
        let (mut wfq, mut afq) = (0usize, 0usize);
        for batch in batches {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                stop = true;
                break;
            }
            let act_on = mode == QuantMode::Qat && step >= cfg.activation_quant_start_step;
            let hooks = match &sites {
                Some(m) => QuantHooks {
                    weights: true,
                    observe: true,
                    activations: if act_on { Some(m as &dyn crate::model::QuantSource) } else { None },
                    weight_source: None,
                },
                None => QuantHooks::off(),
            };

            let (graph, bound, stats, loss, batch_hits, batch_total) = {
                let mut s = Session::train(model, hooks).with_dropout(step_seed(cfg.seed, step));
                let mut rows = Vec::with_capacity(batch.len());
                let mut targets = Vec::new();
                for &i in &batch {
                    let u = &data.utterances[i];
                    let mut input = Vec::with_capacity(u.tokens.len() + 1);
                    input.push(BOS_ID);
                    input.extend_from_slice(&u.tokens);
                    rows.push(s.forward(&u.features, &input)?);
                    targets.extend_from_slice(&u.tokens);
                    targets.push(EOS_ID);
                }
                let logits = s.graph_mut().concat(&rows, 0)?;
                let (h, n) = frame_hits(s.value(logits), &targets, PAD_ID);
                let t: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
                let loss = s.graph_mut().cross_entropy(logits, &t, PAD_ID as usize)?;
                let (graph, bound, stats) = s.into_parts();
                (graph, bound, stats, loss, h, n)
            };
            let loss_value = graph.value(loss).data()[0];
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!("loss {loss_value} at epoch {epoch}, step {step}")));
            }
            let mut g = graph.backward(loss)?;
            let mut grads = GradMap::new();
            for (name, v) in &bound {
                if let Some(gr) = g.take(*v) {
                    grads.insert(name.clone(), gr);
                }
            }
            drop(graph);
            let norm = clip_gradients(&mut grads, cfg.grad_clip)?;
            if !norm.is_finite() {
                return Err(Error::NonFinite(format!("gradient norm {norm} at epoch {epoch}, step {step}")));
            }
            adadelta_step(&mut model.params, &grads, &mut state)?;
            if let Some(m) = sites.as_mut() {
                m.observe(&stats)?;
            }

            loss_sum += loss_value * batch_total as f64;
            hits += batch_hits;
            total += batch_total;
            wfq += stats.weight_fake_quant;
            afq += stats.activation_fake_quant;
            steps.push(StepInfo {
                step,
                loss: loss_value,
                grad_norm: norm,
                weight_fake_quant: stats.weight_fake_quant,
                activation_fake_quant: stats.activation_fake_quant,
            });
            step += 1;
        }
        if total == 0 {
            break;
        }

        let loss = loss_sum / total as f64;
        let acc = hits as f64 / total as f64;
        let rec = Record::new("epoch")
            .with("epoch", epoch)
            .with("step", step)
            .with("loss", format!("{loss:.6}"))
            .with("frame_accuracy", format!("{acc:.6}"))
            .with("quant", mode)
            .with("weight_fake_quant", wfq)
            .with("activation_fake_quant", afq);
        if opts.verbose {
            eprintln!("{rec}");
        }
        metrics.push(rec);

        let name = format!("epoch-{epoch:03}");
        let mut ck = model.to_checkpoint(kind, step)?;
        ck.set_attr(ATTR_NAME, name.clone());
        if let Some(m) = &sites {
            ck.meta.sites = m.to_records();
        }
        if let Some(dir) = &opts.out_dir {
            ck.write(dir.join(format!("{name}.qtfm")))?;
            write_records(dir.join("metrics.tsv"), &metrics)?;
        }
        kept.push_back(ck);
        while kept.len() > cfg.checkpoint_average_last {
            kept.pop_front();
        }
        if stop {
            break;
        }
    }

    Ok(TrainRun {
        metrics,
        checkpoints: kept.into(),
        steps,
        site_map: sites,
    })
}
