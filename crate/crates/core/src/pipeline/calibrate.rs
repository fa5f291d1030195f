//! Post-training calibration and QAT finalization.

use std::collections::BTreeMap;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sites::{build_site_map_with, QuantSiteMap, SiteKind};
use crate::error::{Error, Result};
use crate::io::config::QuantConfig;
use crate::io::{Checkpoint, Dataset, StoredTensor};
use crate::model::{Model, QuantHooks, QuantSource, Session, ATTR_KIND, BOS_ID};
use crate::quant::{weight_range_bits, QuantizedTensor, DEFAULT_BITS, DEFAULT_MOMENTUM};
use crate::train::{checkpoint_average, make_batches};

/// `"true"` once activation ranges have been fitted to data.
pub const ATTR_CALIBRATED: &str = "calibrated";
pub const ATTR_CALIBRATION_STEPS: &str = "calibration_steps";

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationOptions {
    /// Frame budget of one calibration batch.
    pub batch_frames: usize,
    pub bits: u32,
    pub momentum: f64,
    /// Batch order.
    pub seed: u64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            batch_frames: 1000,
            bits: DEFAULT_BITS,
            momentum: DEFAULT_MOMENTUM,
            seed: 0,
        }
    }
}

impl CalibrationOptions {
    pub fn from_config(q: &QuantConfig, seed: u64) -> Self {
        Self {
            batch_frames: q.calibration_batch_frames,
            bits: q.bits,
            momentum: q.momentum,
            seed,
        }
    }
}

/// Per-site (min, max) of one batch.
pub(crate) type BatchRanges = BTreeMap<String, (f64, f64)>;

/// Runs `steps` forward passes and folds every batch's site ranges into
/// `map`. Weights are never touched. Returns the batch ranges.
pub(crate) fn observe_steps(
    model: &Model,
    map: &mut QuantSiteMap,
    data: &Dataset,
    steps: usize,
    opts: &CalibrationOptions,
    simulate: bool,
) -> Result<Vec<BatchRanges>> {
    let mut seen = Vec::with_capacity(steps);
    if steps == 0 {
        return Ok(seen);
    }
    if data.is_empty() {
        return Err(Error::contract("calibration needs at least one batch, the data set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut done = 0;
    while done < steps {
        for batch in make_batches(data, opts.batch_frames, &mut rng) {
            if done == steps {
                break;
            }
            let stats = {
                let hooks = QuantHooks {
                    weights: true,
                    observe: true,
                    activations: simulate.then_some(&*map as &dyn QuantSource),
                    weight_source: None,
                };
                let mut s = Session::inference(model, hooks);
                for &i in &batch {
                    let u = &data.utterances[i];
                    let mut input = vec![BOS_ID];
                    input.extend_from_slice(&u.tokens);
                    s.forward(&u.features, &input)?;
                }
                s.into_parts().2
            };
            map.observe(&stats)?;
            seen.push(stats.observed);
            done += 1;
        }
    }
    Ok(seen)
}

/// Freezes the activation grids and writes 8-bit weights next to the
/// untouched full-precision biases and norms.
fn quantized_checkpoint(source: &Checkpoint, map: &mut QuantSiteMap, bits: u32) -> Result<Checkpoint> {
    map.freeze_activations()?;
    let mut out = source.clone();
    let weights: Vec<String> = map
        .iter()
        .filter(|(_, s)| s.kind == SiteKind::Weight)
        .map(|(n, _)| n.to_string())
        .collect();
    for name in weights {
        let t = source.get(&name)?.to_tensor();
        let p = weight_range_bits(&t, bits)?;
        out.tensors
            .insert(name.clone(), StoredTensor::Q8(QuantizedTensor::quantize(&t, p)));
        if let Some(site) = map.get_mut(&name) {
            site.params = Some(p);
        }
    }
    out.meta.sites = map.to_records();
    Ok(out)
}

/// Post-training quantization of a full-precision checkpoint: activation
/// ranges are tracked over `steps` calibration batches with weights held
/// fixed. With `steps == 0` the result is flagged uncalibrated.
pub fn ptq_calibrate(ck: &Checkpoint, data: &Dataset, steps: usize, opts: &CalibrationOptions) -> Result<Checkpoint> {
    if let Some((name, _)) = ck.tensors.iter().find(|(_, t)| t.is_quantized()) {
        return Err(Error::contract(format!("`{name}` is already quantized; calibrate a full-precision checkpoint")));
    }
    let model = Model::from_checkpoint(ck)?;
    let mut map = build_site_map_with(&model.config, opts.bits, opts.momentum)?;
    observe_steps(&model, &mut map, data, steps, opts, false)?;
    let mut out = quantized_checkpoint(ck, &mut map, opts.bits)?;
    out.set_attr(ATTR_KIND, "ptq");
    out.set_attr(ATTR_CALIBRATED, (steps > 0).to_string());
    out.set_attr(ATTR_CALIBRATION_STEPS, steps.to_string());
    Ok(out)
}

/// Averages QAT checkpoints (weights and stored activation trackers), then
/// keeps adjusting the averaged trackers over `steps` batches without
/// updating any weight.
pub fn qat_finalize(checkpoints: &[Checkpoint], data: &Dataset, steps: usize, opts: &CalibrationOptions) -> Result<Checkpoint> {
    let avg = checkpoint_average(checkpoints)?;
    let model = Model::from_checkpoint(&avg)?;
    let mut map = build_site_map_with(&model.config, opts.bits, opts.momentum)?;
    for (name, _) in map.iter().filter(|(_, s)| s.kind == SiteKind::Activation && s.enabled) {
        let stored = avg.meta.sites.get(name).and_then(|r| r.tracker);
        if !stored.is_some_and(|t| t.is_observed()) {
            return Err(Error::contract(format!(
                "activation site `{name}` has no stored range tracker; finalize needs QAT checkpoints"
            )));
        }
    }
    map.load_records(&avg.meta.sites)?;
    observe_steps(&model, &mut map, data, steps, opts, true)?;
    let mut out = quantized_checkpoint(&avg, &mut map, opts.bits)?;
    out.set_attr(ATTR_KIND, "qat-final");
    out.set_attr(ATTR_CALIBRATED, "true");
    out.set_attr(ATTR_CALIBRATION_STEPS, steps.to_string());
    Ok(out)
}

pub fn is_calibrated(ck: &Checkpoint) -> bool {
    ck.attr(ATTR_CALIBRATED) == Some("true")
}

/// Refuses uncalibrated quantized checkpoints unless overridden.
pub fn check_calibrated(ck: &Checkpoint, allow_uncalibrated: bool) -> Result<()> {
    if allow_uncalibrated || is_calibrated(ck) {
        return Ok(());
    }
    let why = match ck.attr(ATTR_CALIBRATION_STEPS) {
        Some(s) => format!("{s} calibration steps"),
        None => "no calibration record".to_string(),
    };
    Err(Error::Uncalibrated(why))
}

/// The float model and frozen site map that simulate a quantized
/// checkpoint by fake quantization.
pub fn simulation_parts(ck: &Checkpoint) -> Result<(Model, QuantSiteMap)> {
    let model = Model::from_checkpoint(ck)?;
    let mut map = build_site_map_with(&model.config, DEFAULT_BITS, DEFAULT_MOMENTUM)?;
    map.load_records(&ck.meta.sites)?;
    if let Some((name, _)) = map.iter().find(|(_, s)| s.enabled && s.params.is_none()) {
        return Err(Error::contract(format!("site `{name}` has no frozen grid")));
    }
    Ok((model, map))
}
