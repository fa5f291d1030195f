use super::QuantParams;
use crate::error::{Error, Result};

/// Default EMA smoothing for activation ranges.
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Exponential moving average of per-batch activation minima and maxima.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeTracker {
    pub running_min: f64,
    pub running_max: f64,
    pub momentum: f64,
    pub observations: u64,
}

impl Default for RangeTracker {
    fn default() -> Self {
        Self::new(DEFAULT_MOMENTUM)
    }
}

impl RangeTracker {
    pub fn new(momentum: f64) -> Self {
        Self {
            running_min: 0.0,
            running_max: 0.0,
            momentum,
            observations: 0,
        }
    }

    pub fn is_observed(&self) -> bool {
        self.observations > 0
    }

    /// Folds one mini-batch range into the average. The first observation is
    /// taken as-is; later ones move the running value a `(1 − momentum)`
    /// fraction of the way towards the batch value, so a constant stream is
    /// an exact fixed point.
    pub fn update(&mut self, batch_min: f64, batch_max: f64) -> Result<()> {
        if !batch_min.is_finite() || !batch_max.is_finite() || batch_min > batch_max {
            return Err(Error::contract(format!(
                "batch range [{batch_min}, {batch_max}] is invalid"
            )));
        }
        if self.observations == 0 {
            self.running_min = batch_min;
            self.running_max = batch_max;
        } else {
            let w = 1.0 - self.momentum;
            self.running_min += w * (batch_min - self.running_min);
            self.running_max += w * (batch_max - self.running_max);
        }
        self.observations += 1;
        Ok(())
    }

    /// Grid over the running range, or `None` before the first observation.
    pub fn params(&self, bits: u32) -> Option<QuantParams> {
        if !self.is_observed() {
            return None;
        }
        QuantParams::from_range(self.running_min, self.running_max, bits).ok()
    }

    /// Elementwise mean of several trackers. Inputs are summed in sorted order
    /// so the result does not depend on their order.
    pub fn average(trackers: &[RangeTracker]) -> Result<RangeTracker> {
        let first = trackers
            .first()
            .ok_or_else(|| Error::contract("cannot average zero trackers"))?;
        let mean = |f: fn(&RangeTracker) -> f64| {
            let mut v: Vec<f64> = trackers.iter().map(f).collect();
            v.sort_by(f64::total_cmp);
            v.iter().sum::<f64>() / v.len() as f64
        };
        Ok(RangeTracker {
            running_min: mean(|t| t.running_min),
            running_max: mean(|t| t.running_max),
            momentum: first.momentum,
            observations: trackers.iter().map(|t| t.observations).min().unwrap_or(0),
        })
    }
}
