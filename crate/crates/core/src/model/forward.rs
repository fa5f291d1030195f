//! Recording forward pass with quantization hooks.
//!
//! A [`Session`] owns one [`Graph`]. Parameters are bound lazily as shared
//! leaves; every named activation site passes through [`Session::site`],
//! which observes its range and optionally fake-quantizes it.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::pe::sinusoidal_pe;
use super::Model;
use crate::error::{Error, Result};
use crate::numcore::{Graph, Tensor, Var};
use crate::quant::{weight_range, QuantParams};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Where a session gets quantization grids from.
pub trait QuantSource {
    /// Grid for an activation site, or `None` to let it through unchanged.
    fn activation(&self, site: &str) -> Option<QuantParams>;

    /// Frozen grid for a weight. `None` means "derive from the current
    /// values", which is what QAT does.
    fn weight(&self, _name: &str) -> Option<QuantParams> {
        None
    }

    fn weight_enabled(&self, _name: &str) -> bool {
        true
    }
}

/// Which quantization effects a session applies.
#[derive(Clone, Copy, Default)]
pub struct QuantHooks<'a> {
    /// Fake-quantize weights on use.
    pub weights: bool,
    /// Record per-site activation ranges.
    pub observe: bool,
    /// Fake-quantize activations with grids from this source.
    pub activations: Option<&'a dyn QuantSource>,
    /// Source consulted for weight grids and enable flags.
    pub weight_source: Option<&'a dyn QuantSource>,
}

impl<'a> QuantHooks<'a> {
    pub fn off() -> Self {
        Self::default()
    }

    /// Fake-quantize everything with frozen grids from `source`.
    pub fn simulate(source: &'a dyn QuantSource) -> Self {
        Self {
            weights: true,
            observe: false,
            activations: Some(source),
            weight_source: Some(source),
        }
    }
}

/// Counters for instrumentation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SessionStats {
    pub weight_fake_quant: usize,
    pub activation_fake_quant: usize,
    /// Min/max of every activation site seen in this session.
    pub observed: BTreeMap<String, (f64, f64)>,
    /// Activation sites in first-visit order.
    pub visited: Vec<String>,
}

/// One matrix product and whether both operands were on a quantization grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatmulAudit {
    pub site: String,
    pub lhs_quantized: bool,
    pub rhs_quantized: bool,
}

/// Cross-attention probabilities of one head: `[target, encoder]`.
#[derive(Clone, Debug)]
pub struct CapturedAttention {
    pub layer: usize,
    pub head: usize,
    pub probs: Tensor,
}

pub struct Session<'a> {
    model: &'a Model,
    graph: Graph,
    bound: BTreeMap<String, Var>,
    weights: HashMap<String, Var>,
    hooks: QuantHooks<'a>,
    dropout: Option<(f64, ChaCha8Rng)>,
    quantized: HashSet<Var>,
    seen: HashSet<String>,
    stats: SessionStats,
    attention: Option<Vec<CapturedAttention>>,
    audit: Option<Vec<MatmulAudit>>,
    trace: Option<Vec<(String, Tensor)>>,
}

impl<'a> Session<'a> {
    /// A session that records gradients.
    pub fn train(model: &'a Model, hooks: QuantHooks<'a>) -> Self {
        Self::with_graph(model, Graph::new(), hooks)
    }

    /// A session that records nothing.
    pub fn inference(model: &'a Model, hooks: QuantHooks<'a>) -> Self {
        Self::with_graph(model, Graph::inference(), hooks)
    }

    fn with_graph(model: &'a Model, graph: Graph, hooks: QuantHooks<'a>) -> Self {
        Self {
            model,
            graph,
            bound: BTreeMap::new(),
            weights: HashMap::new(),
            hooks,
            dropout: None,
            quantized: HashSet::new(),
            seen: HashSet::new(),
            stats: SessionStats::default(),
            attention: None,
            audit: None,
            trace: None,
        }
    }

    /// Enables inverted dropout at the configured rate.
    pub fn with_dropout(mut self, seed: u64) -> Self {
        let p = self.model.config.dropout;
        if p > 0.0 {
            self.dropout = Some((p, ChaCha8Rng::seed_from_u64(seed)));
        }
        self
    }

    pub fn capture_attention(mut self) -> Self {
        self.attention = Some(Vec::new());
        self
    }

    pub fn with_audit(mut self) -> Self {
        self.audit = Some(Vec::new());
        self
    }

    /// Records every activation site's output value in visit order.
    pub fn capture_sites(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn take_trace(&mut self) -> Vec<(String, Tensor)> {
        self.trace.take().unwrap_or_default()
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    pub fn stats(&self) -> &SessionStats {
        &self.stats
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.graph.value(v)
    }

    /// Parameter leaves bound so far, by name.
    pub fn bound_params(&self) -> &BTreeMap<String, Var> {
        &self.bound
    }

    pub fn take_attention(&mut self) -> Vec<CapturedAttention> {
        self.attention.take().unwrap_or_default()
    }

    pub fn take_audit(&mut self) -> Vec<MatmulAudit> {
        self.audit.take().unwrap_or_default()
    }

    pub fn into_parts(self) -> (Graph, BTreeMap<String, Var>, SessionStats) {
        (self.graph, self.bound, self.stats)
    }

    /// Raw parameter leaf.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self.model.params.get(name)?.clone();
        let v = self.graph.param(t);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Parameter as consumed by the network: fake-quantized when weight
    /// quantization is on.
    pub fn weight(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.weights.get(name) {
            return Ok(v);
        }
        let raw = self.param(name)?;
        let enabled = self
            .hooks
            .weight_source
            .is_none_or(|s| s.weight_enabled(name));
        let v = if self.hooks.weights && enabled {
            let frozen = self.hooks.weight_source.and_then(|s| s.weight(name));
            let p = match frozen {
                Some(p) => p,
                None => weight_range(self.graph.value(raw))?,
            };
            self.stats.weight_fake_quant += 1;
            let q = self.graph.fake_quant(raw, &p);
            self.quantized.insert(q);
            q
        } else {
            raw
        };
        self.weights.insert(name.to_string(), v);
        Ok(v)
    }

    /// Passes `x` through the activation site `name`.
    pub fn site(&mut self, name: &str, x: Var) -> Result<Var> {
        if self.seen.insert(name.to_string()) {
            self.stats.visited.push(name.to_string());
        }
        if self.hooks.observe {
            let t = self.graph.value(x);
            t.check_finite(name)?;
            if let Some((lo, hi)) = t.min_max() {
                let e = self.stats.observed.entry(name.to_string()).or_insert((lo, hi));
                e.0 = e.0.min(lo);
                e.1 = e.1.max(hi);
            }
        }
        let mut out = x;
        if let Some(src) = self.hooks.activations {
            if let Some(p) = src.activation(name) {
                self.stats.activation_fake_quant += 1;
                out = self.graph.fake_quant(x, &p);
                self.quantized.insert(out);
            }
        }
        if let Some(trace) = self.trace.as_mut() {
            trace.push((name.to_string(), self.graph.value(out).clone()));
        }
        Ok(out)
    }

    fn keep_grid(&mut self, from: Var, to: Var) {
        if self.quantized.contains(&from) {
            self.quantized.insert(to);
        }
    }

    fn record_matmul(&mut self, site: &str, a: Var, b: Var) {
        let (lq, rq) = (self.quantized.contains(&a), self.quantized.contains(&b));
        if let Some(audit) = self.audit.as_mut() {
            audit.push(MatmulAudit {
                site: site.to_string(),
                lhs_quantized: lq,
                rhs_quantized: rq,
            });
        }
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        let Some((p, rng)) = self.dropout.as_mut() else {
            return Ok(x);
        };
        let keep = 1.0 / (1.0 - *p);
        let n = self.graph.value(x).len();
        let mask = (0..n)
            .map(|_| if rng.gen::<f64>() < *p { 0.0 } else { keep })
            .collect();
        self.graph.mul_const(x, mask)
    }

    /// `x·W + b` for the parameters under `prefix`, optionally ReLU'd, then
    /// passed through `out_site`.
    pub fn linear(&mut self, x: Var, prefix: &str, out_site: &str, relu: bool) -> Result<Var> {
        let w = self.weight(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        self.record_matmul(out_site, x, w);
        let y = self.graph.matmul(x, w)?;
        let mut y = self.graph.add_bias(y, b)?;
        if relu {
            y = self.graph.relu(y);
        }
        self.site(out_site, y)
    }

    fn layer_norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let g = self.param(&format!("{prefix}.gamma"))?;
        let b = self.param(&format!("{prefix}.beta"))?;
        let y = self.graph.layer_norm(x, g, b, LAYER_NORM_EPS)?;
        self.site(&format!("{prefix}.output"), y)
    }

    /// Multi-head attention of `xq[Tq, d]` over `xkv[Tk, d]`. With `causal`,
    /// query i sees keys ≤ i only.
    pub fn attention(
        &mut self,
        xq: Var,
        xkv: Var,
        prefix: &str,
        causal: bool,
        capture_layer: Option<usize>,
    ) -> Result<Var> {
        let heads = self.model.config.heads;
        let dk = self.model.config.head_dim();
        let q = self.linear(xq, &format!("{prefix}.q_proj"), &format!("{prefix}.query"), false)?;
        let k = self.linear(xkv, &format!("{prefix}.k_proj"), &format!("{prefix}.key"), false)?;
        let v = self.linear(xkv, &format!("{prefix}.v_proj"), &format!("{prefix}.value"), false)?;
        let tq = self.graph.shape(q)[0];
        let tk = self.graph.shape(k)[0];
        let mask: Option<Vec<bool>> =
            causal.then(|| (0..tq * tk).map(|i| i % tk > i / tk).collect());
        let scale = 1.0 / (dk as f64).sqrt();
        let scores_site = format!("{prefix}.scores");
        let probs_site = format!("{prefix}.probs");
        let context_site = format!("{prefix}.context");

        let mut parts = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.graph.slice_cols(q, h * dk, dk)?;
            self.keep_grid(q, qh);
            let kh = self.graph.slice_cols(k, h * dk, dk)?;
            let kt = self.graph.transpose(kh)?;
            self.keep_grid(k, kt);
            let vh = self.graph.slice_cols(v, h * dk, dk)?;
            self.keep_grid(v, vh);

            self.record_matmul(&scores_site, qh, kt);
            let s = self.graph.matmul(qh, kt)?;
            let s = self.graph.scale(s, scale);
            let s = self.site(&scores_site, s)?;
            let p = self.graph.softmax_masked(s, 1, mask.as_deref())?;
            let p = self.site(&probs_site, p)?;
            if let (Some(layer), Some(out)) = (capture_layer, self.attention.as_mut()) {
                out.push(CapturedAttention {
                    layer,
                    head: h,
                    probs: self.graph.value(p).clone(),
                });
            }
            self.record_matmul(&context_site, p, vh);
            parts.push(self.graph.matmul(p, vh)?);
        }
        let ctx = self.graph.concat(&parts, 1)?;
        let ctx = self.site(&context_site, ctx)?;
        self.linear(ctx, &format!("{prefix}.out_proj"), &format!("{prefix}.output"), false)
    }

    fn ffn(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let h = self.linear(x, &format!("{prefix}.w1"), &format!("{prefix}.hidden"), true)?;
        self.linear(h, &format!("{prefix}.w2"), &format!("{prefix}.output"), false)
    }

    /// Residual + post-norm around a sublayer output.
    fn add_norm(&mut self, x: Var, sub: Var, norm: &str) -> Result<Var> {
        let sub = self.dropout(sub)?;
        let s = self.graph.add(x, sub)?;
        self.layer_norm(s, norm)
    }

    /// Convolutional down-sampling of `features[T, F]` to `[T', d_model]`.
    pub fn frontend(&mut self, features: &Tensor) -> Result<Var> {
        let cfg = self.model.config.clone();
        let fe = &cfg.frontend;
        let (t, f) = features
            .dims2()
            .map_err(|_| Error::shape("frontend", format!("features must be [T, F], got {:?}", features.shape())))?;
        if f != cfg.feature_dim {
            return Err(Error::shape("frontend", format!("feature dim {f}, model expects {}", cfg.feature_dim)));
        }
        if t < cfg.min_frames() {
            return Err(Error::contract(format!(
                "input too short: {t} frames, the front-end needs at least {}",
                cfg.min_frames()
            )));
        }
        features.check_finite("features")?;
        let x = self.graph.constant(features.clone());
        let x = self.site("frontend.input", x)?;
        // [T, F] -> [1, F, T]
        let xt = self.graph.transpose(x)?;
        let mut y = self.graph.reshape(xt, vec![1, f, t])?;
        self.keep_grid(x, y);
        for i in 1..=fe.blocks {
            let w = self.weight(&format!("frontend.conv{i}.weight"))?;
            let b = self.param(&format!("frontend.conv{i}.bias"))?;
            let site = format!("frontend.conv{i}.output");
            self.record_matmul(&site, y, w);
            let c = self.graph.conv2d(y, w, b, 1, fe.pad())?;
            let c = self.graph.relu(c);
            let c = self.site(&site, c)?;
            y = self.graph.max_pool2d(c, fe.pool, fe.pool)?;
            self.keep_grid(c, y);
        }
        // [C, F', T'] -> [T', C·F']
        let shape = self.graph.shape(y).to_vec();
        let p = self.graph.permute(y, &[2, 0, 1])?;
        let flat = self.graph.reshape(p, vec![shape[2], shape[0] * shape[1]])?;
        self.keep_grid(y, flat);
        self.linear(flat, "frontend.proj", "frontend.output", false)
    }

    /// Encoder states `[T', d_model]`.
    pub fn encode(&mut self, features: &Tensor) -> Result<Var> {
        let mut x = self.frontend(features)?;
        for l in 0..self.model.config.enc_layers {
            let p = format!("encoder.{l}");
            let a = self.attention(x, x, &format!("{p}.self_attn"), false, None)?;
            let n1 = self.add_norm(x, a, &format!("{p}.norm1"))?;
            let f = self.ffn(n1, &format!("{p}.ffn"))?;
            x = self.add_norm(n1, f, &format!("{p}.norm2"))?;
        }
        Ok(x)
    }

    /// Decoder logits `[L, vocab]` for the input prefix `tokens`
    /// (BOS first) attending over `memory`.
    pub fn decode(&mut self, memory: Var, tokens: &[u32]) -> Result<Var> {
        let cfg = self.model.config.clone();
        if tokens.is_empty() {
            return Err(Error::contract("decoder input is empty"));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::contract(format!("token id {bad} outside vocabulary of {}", cfg.vocab_size)));
        }
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let table = self.weight("decoder.embed.weight")?;
        let mut x = self.graph.embedding(table, &ids)?;
        if cfg.use_positional_encoding {
            let pe = self.graph.constant(sinusoidal_pe(ids.len(), cfg.d_model)?);
            x = self.graph.add(x, pe)?;
        } else {
            self.keep_grid(table, x);
        }
        let mut x = self.site("decoder.input", x)?;
        if cfg.use_decoder_conv1d {
            for i in 1..=cfg.decoder_conv.blocks {
                let w = self.weight(&format!("decoder.conv{i}.weight"))?;
                let b = self.param(&format!("decoder.conv{i}.bias"))?;
                let site = format!("decoder.conv{i}.output");
                self.record_matmul(&site, x, w);
                let y = self.graph.causal_conv1d(x, w, b)?;
                let y = self.graph.relu(y);
                x = self.site(&site, y)?;
            }
        }
        for l in 0..cfg.dec_layers {
            let p = format!("decoder.{l}");
            let a = self.attention(x, x, &format!("{p}.self_attn"), true, None)?;
            let n1 = self.add_norm(x, a, &format!("{p}.norm1"))?;
            let c = self.attention(n1, memory, &format!("{p}.cross_attn"), false, Some(l))?;
            let n2 = self.add_norm(n1, c, &format!("{p}.norm2"))?;
            let f = self.ffn(n2, &format!("{p}.ffn"))?;
            x = self.add_norm(n2, f, &format!("{p}.norm3"))?;
        }
        self.linear(x, "output.proj", "output.logits", false)
    }

    /// Teacher-forced logits for one utterance.
    pub fn forward(&mut self, features: &Tensor, decoder_input: &[u32]) -> Result<Var> {
        let memory = self.encode(features)?;
        self.decode(memory, decoder_input)
    }
}

/// `softmax(Q·Kᵀ/√d_k)·V` with masked entries (`true`) given zero weight.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    let (tk, _) = k.dims2()?;
    let (tv, _) = v.dims2()?;
    if tk != tv {
        return Err(Error::shape("attention", format!("{tk} keys but {tv} values")));
    }
    let dk = q.dims2()?.1;
    let mut g = Graph::inference();
    let (q, k, v) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let kt = g.transpose(k)?;
    let s = g.matmul(q, kt)?;
    let s = g.scale(s, 1.0 / (dk as f64).sqrt());
    let p = g.softmax_masked(s, 1, mask)?;
    let out = g.matmul(p, v)?;
    Ok(g.value(out).clone())
}
