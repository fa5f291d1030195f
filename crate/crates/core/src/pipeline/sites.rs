//! Enumeration of every quantized tensor in the network.
//!
//! Weight sites are the 2D/4D parameters; activation sites are the named
//! points a forward pass routes through [`Session::site`]. Residual additions
//! never appear: their operands are already on grids and the sum feeds a
//! layer norm whose output is a site of its own.
//!
//! [`Session::site`]: crate::model::Session::site

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::io::SiteRecord;
use crate::model::{param_specs, MatmulAudit, ModelConfig, QuantSource, SessionStats};
use crate::quant::{QuantParams, RangeTracker, DEFAULT_BITS, DEFAULT_MOMENTUM};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiteKind {
    Weight,
    Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Site {
    pub kind: SiteKind,
    pub enabled: bool,
    pub tracker: RangeTracker,
    /// Frozen grid; when absent, activations use the tracker.
    pub params: Option<QuantParams>,
}

/// A matrix product and the sites feeding it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatmulSite {
    /// Activation site the product is written to.
    pub output: String,
    pub lhs: String,
    pub rhs: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantSiteMap {
    pub bits: u32,
    sites: BTreeMap<String, Site>,
    matmuls: Vec<MatmulSite>,
}

struct Builder {
    sites: BTreeMap<String, Site>,
    matmuls: Vec<MatmulSite>,
    momentum: f64,
}

impl Builder {
    fn act(&mut self, name: String) -> String {
        self.sites.insert(
            name.clone(),
            Site {
                kind: SiteKind::Activation,
                enabled: true,
                tracker: RangeTracker::new(self.momentum),
                params: None,
            },
        );
        name
    }

    fn matmul(&mut self, output: &str, lhs: &str, rhs: &str) {
        self.matmuls.push(MatmulSite {
            output: output.into(),
            lhs: lhs.into(),
            rhs: rhs.into(),
        });
    }

    fn linear(&mut self, x: &str, prefix: &str, out: String) -> String {
        let out = self.act(out);
        self.matmul(&out, x, &format!("{prefix}.weight"));
        out
    }

    fn attention(&mut self, xq: &str, xkv: &str, p: &str) -> String {
        let q = self.linear(xq, &format!("{p}.q_proj"), format!("{p}.query"));
        let k = self.linear(xkv, &format!("{p}.k_proj"), format!("{p}.key"));
        let v = self.linear(xkv, &format!("{p}.v_proj"), format!("{p}.value"));
        let s = self.act(format!("{p}.scores"));
        self.matmul(&s, &q, &k);
        let pr = self.act(format!("{p}.probs"));
        let c = self.act(format!("{p}.context"));
        self.matmul(&c, &pr, &v);
        self.linear(&c, &format!("{p}.out_proj"), format!("{p}.output"))
    }

    fn ffn(&mut self, x: &str, p: &str) -> String {
        let h = self.linear(x, &format!("{p}.w1"), format!("{p}.hidden"));
        self.linear(&h, &format!("{p}.w2"), format!("{p}.output"))
    }
}

/// Deterministic, exhaustive site map for `config`.
pub fn build_site_map(config: &ModelConfig) -> Result<QuantSiteMap> {
    build_site_map_with(config, DEFAULT_BITS, DEFAULT_MOMENTUM)
}

pub fn build_site_map_with(config: &ModelConfig, bits: u32, momentum: f64) -> Result<QuantSiteMap> {
    config.validate()?;
    QuantParams::from_range(0.0, 1.0, bits)?;
    let mut b = Builder {
        sites: BTreeMap::new(),
        matmuls: Vec::new(),
        momentum,
    };
    for spec in param_specs(config).into_iter().filter(|s| s.is_weight()) {
        b.sites.insert(
            spec.name,
            Site {
                kind: SiteKind::Weight,
                enabled: true,
                tracker: RangeTracker::new(momentum),
                params: None,
            },
        );
    }

    let mut x = b.act("frontend.input".into());
    for i in 1..=config.frontend.blocks {
        let out = b.act(format!("frontend.conv{i}.output"));
        b.matmul(&out, &x, &format!("frontend.conv{i}.weight"));
        x = out;
    }
    x = b.linear(&x, "frontend.proj", "frontend.output".into());
    for l in 0..config.enc_layers {
        let p = format!("encoder.{l}");
        b.attention(&x, &x, &format!("{p}.self_attn"));
        let n1 = b.act(format!("{p}.norm1.output"));
        b.ffn(&n1, &format!("{p}.ffn"));
        x = b.act(format!("{p}.norm2.output"));
    }
    let memory = x;

    let mut y = b.act("decoder.input".into());
    if config.use_decoder_conv1d {
        for i in 1..=config.decoder_conv.blocks {
            let out = b.act(format!("decoder.conv{i}.output"));
            b.matmul(&out, &y, &format!("decoder.conv{i}.weight"));
            y = out;
        }
    }
    for l in 0..config.dec_layers {
        let p = format!("decoder.{l}");
        b.attention(&y, &y, &format!("{p}.self_attn"));
        let n1 = b.act(format!("{p}.norm1.output"));
        b.attention(&n1, &memory, &format!("{p}.cross_attn"));
        let n2 = b.act(format!("{p}.norm2.output"));
        b.ffn(&n2, &format!("{p}.ffn"));
        y = b.act(format!("{p}.norm3.output"));
    }
    b.linear(&y, "output.proj", "output.logits".into());

    Ok(QuantSiteMap {
        bits,
        sites: b.sites,
        matmuls: b.matmuls,
    })
}

impl QuantSiteMap {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Site> {
        self.sites.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Site> {
        self.sites.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Site)> {
        self.sites.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn count(&self, kind: SiteKind) -> usize {
        self.sites.values().filter(|s| s.kind == kind).count()
    }

    pub fn matmuls(&self) -> &[MatmulSite] {
        &self.matmuls
    }

    pub fn set_enabled(&mut self, name: &str, enabled: bool) -> Result<()> {
        self.sites
            .get_mut(name)
            .map(|s| s.enabled = enabled)
            .ok_or_else(|| Error::contract(format!("no quantization site `{name}`")))
    }

    /// Folds one forward pass's per-site ranges into the trackers.
    pub fn observe(&mut self, stats: &SessionStats) -> Result<()> {
        for (name, &(lo, hi)) in &stats.observed {
            let site = self
                .sites
                .get_mut(name)
                .ok_or_else(|| Error::Audit(format!("activation site `{name}` is not in the site map")))?;
            if site.enabled {
                site.tracker.update(lo, hi)?;
            }
        }
        Ok(())
    }

    /// Freezes activation grids from the trackers. Sites never observed get
    /// the degenerate grid around zero.
    pub fn freeze_activations(&mut self) -> Result<()> {
        for s in self.sites.values_mut().filter(|s| s.kind == SiteKind::Activation) {
            s.params = Some(match s.tracker.params(self.bits) {
                Some(p) => p,
                None => QuantParams::from_range(0.0, 0.0, self.bits)?,
            });
        }
        Ok(())
    }

    /// Whether every enabled activation site has seen data.
    pub fn all_observed(&self) -> bool {
        self.sites
            .values()
            .filter(|s| s.kind == SiteKind::Activation && s.enabled)
            .all(|s| s.tracker.is_observed())
    }

    /// Checks a runtime audit against the map: every product must be a
    /// mapped matmul whose operands were both quantized, and every mapped
    /// matmul must have run.
    pub fn check_audit(&self, audit: &[MatmulAudit], stats: &SessionStats) -> Result<()> {
        let mapped: HashSet<&str> = self.matmuls.iter().map(|m| m.output.as_str()).collect();
        let mut seen = HashSet::new();
        for a in audit {
            if !mapped.contains(a.site.as_str()) {
                return Err(Error::Audit(format!("unmapped multiplication writing `{}`", a.site)));
            }
            let enabled = self.sites.get(&a.site).is_some_and(|s| s.enabled);
            if enabled && !(a.lhs_quantized && a.rhs_quantized) {
                return Err(Error::Audit(format!(
                    "multiplication into `{}` consumed an unquantized operand (lhs {}, rhs {})",
                    a.site, a.lhs_quantized, a.rhs_quantized
                )));
            }
            seen.insert(a.site.as_str());
        }
        if let Some(m) = self.matmuls.iter().find(|m| !seen.contains(m.output.as_str())) {
            return Err(Error::Audit(format!("mapped multiplication `{}` never ran", m.output)));
        }
        if let Some(v) = stats.visited.iter().find(|v| !self.sites.contains_key(*v)) {
            return Err(Error::Audit(format!("activation site `{v}` is not in the site map")));
        }
        Ok(())
    }

    pub fn to_records(&self) -> BTreeMap<String, SiteRecord> {
        self.sites
            .iter()
            .map(|(name, s)| {
                let rec = SiteRecord {
                    enabled: s.enabled,
                    tracker: (s.kind == SiteKind::Activation).then_some(s.tracker),
                    params: s.params,
                };
                (name.clone(), rec)
            })
            .collect()
    }

    /// Restores trackers, flags and frozen grids from stored records.
    pub fn load_records(&mut self, records: &BTreeMap<String, SiteRecord>) -> Result<()> {
        for (name, rec) in records {
            let site = self
                .sites
                .get_mut(name)
                .ok_or_else(|| Error::contract(format!("stored site `{name}` does not exist in this model")))?;
            site.enabled = rec.enabled;
            if let Some(t) = rec.tracker {
                site.tracker = t;
            }
            site.params = rec.params;
        }
        Ok(())
    }
}

impl QuantSource for QuantSiteMap {
    fn activation(&self, site: &str) -> Option<QuantParams> {
        let s = self.sites.get(site)?;
        if s.kind != SiteKind::Activation || !s.enabled {
            return None;
        }
        s.params.or_else(|| s.tracker.params(self.bits))
    }

    fn weight(&self, name: &str) -> Option<QuantParams> {
        self.sites.get(name).and_then(|s| s.params)
    }

    fn weight_enabled(&self, name: &str) -> bool {
        self.sites.get(name).is_none_or(|s| s.enabled)
    }
}
