//! Inference on 8-bit codes.
//!
//! Matrix products and convolutions run through [`Requantizer`]. Softmax,
//! layer norm, residual additions, positional encodings and the embedding
//! lookup work in real arithmetic on dequantized codes, and their results
//! are quantized onto the next site's grid. This is the same boundary the
//! fake-quant simulation draws, so the two paths differ only by the
//! requantization rounding of each product.

use std::collections::BTreeMap;

use super::integer::Requantizer;
use super::sites::{build_site_map_with, QuantSiteMap, SiteKind};
use crate::error::{Error, Result};
use crate::io::{Checkpoint, StoredTensor};
use crate::model::{checkpoint_config, sinusoidal_pe, ModelConfig, LAYER_NORM_EPS};
use crate::numcore::kernels::{self, Conv2dGeometry};
use crate::numcore::Tensor;
use crate::quant::{QuantParams, QuantizedTensor, DEFAULT_MOMENTUM};

/// Site outputs in visit order. Repeated names (one entry per head) appear
/// once per visit.
pub type Trace = Vec<(String, Tensor)>;

/// A fully quantized network built from a quantized checkpoint.
#[derive(Clone, Debug)]
pub struct QuantizedModel {
    pub config: ModelConfig,
    weights: BTreeMap<String, QuantizedTensor>,
    floats: BTreeMap<String, Vec<f64>>,
    acts: BTreeMap<String, QuantParams>,
    /// Per product output site.
    requant: BTreeMap<String, Requantizer>,
}

struct Pass<'a> {
    model: &'a QuantizedModel,
    trace: Option<Trace>,
    teacher: Option<(&'a [(String, Tensor)], usize)>,
}

fn qt(shape: Vec<usize>, codes: Vec<u8>, params: QuantParams) -> QuantizedTensor {
    QuantizedTensor { shape, codes, params }
}

fn gather(x: &QuantizedTensor, idx: &[Option<usize>], shape: Vec<usize>) -> QuantizedTensor {
    qt(shape, kernels::gather(&x.codes, idx, 0), x.params)
}

fn dims2(x: &QuantizedTensor) -> (usize, usize) {
    (x.shape[0], x.shape[1])
}

impl QuantizedModel {
    /// Reads weight codes and site grids from `ck`. Every quantization
    /// site must carry frozen parameters.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = checkpoint_config(ck)?;
        let mut map = build_site_map_with(&config, crate::quant::DEFAULT_BITS, DEFAULT_MOMENTUM)?;
        map.load_records(&ck.meta.sites)?;
        Self::from_parts(config, ck, &map)
    }

    fn from_parts(config: ModelConfig, ck: &Checkpoint, map: &QuantSiteMap) -> Result<Self> {
        let mut weights = BTreeMap::new();
        let mut floats = BTreeMap::new();
        for (name, t) in &ck.tensors {
            match (map.get(name).map(|s| s.kind), t) {
                (Some(SiteKind::Weight), StoredTensor::Q8(q)) => {
                    weights.insert(name.clone(), q.clone());
                }
                (Some(SiteKind::Weight), StoredTensor::F32 { .. }) => {
                    return Err(Error::contract(format!("weight `{name}` is not quantized in this checkpoint")));
                }
                (_, t) => {
                    floats.insert(name.clone(), t.to_tensor().into_data());
                }
            }
        }
        let mut acts = BTreeMap::new();
        for (name, site) in map.iter() {
            match (site.kind, site.params) {
                (SiteKind::Activation, Some(p)) if site.enabled => {
                    acts.insert(name.to_string(), p);
                }
                (SiteKind::Activation, _) => {
                    return Err(Error::contract(format!("activation site `{name}` is disabled or has no quantization parameters")));
                }
                (SiteKind::Weight, _) if !weights.contains_key(name) => {
                    return Err(Error::contract(format!("missing quantized weight `{name}`")));
                }
                _ => {}
            }
        }
        let mut m = Self {
            config,
            weights,
            floats,
            acts,
            requant: BTreeMap::new(),
        };
        let scale = 1.0 / (m.config.head_dim() as f64).sqrt();
        for mm in map.matmuls() {
            let lhs = m.grid(&mm.lhs)?;
            let rhs = m.grid(&mm.rhs)?;
            let out = m.grid(&mm.output)?;
            let (s, bias, relu) = if mm.output.ends_with(".scores") {
                (scale, None, false)
            } else if mm.output.ends_with(".context") {
                (1.0, None, false)
            } else {
                let prefix = mm.rhs.trim_end_matches(".weight");
                let bias = m.float(&format!("{prefix}.bias"))?.to_vec();
                let relu = mm.output.ends_with(".hidden") || mm.output.contains(".conv");
                (1.0, Some(bias), relu)
            };
            let r = Requantizer::new(lhs, rhs, out, s, bias.as_deref(), relu)?;
            m.requant.insert(mm.output.clone(), r);
        }
        Ok(m)
    }

    fn grid(&self, site: &str) -> Result<QuantParams> {
        self.acts
            .get(site)
            .copied()
            .or_else(|| self.weights.get(site).map(|w| w.params))
            .ok_or_else(|| Error::contract(format!("missing quantization parameters for `{site}`")))
    }

    fn float(&self, name: &str) -> Result<&[f64]> {
        self.floats
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::contract(format!("missing tensor `{name}`")))
    }

    fn weight(&self, name: &str) -> Result<&QuantizedTensor> {
        self.weights
            .get(name)
            .ok_or_else(|| Error::contract(format!("missing quantized weight `{name}`")))
    }

    fn requantizer(&self, site: &str) -> Result<&Requantizer> {
        self.requant
            .get(site)
            .ok_or_else(|| Error::contract(format!("no integer product for `{site}`")))
    }

    /// Logits `[L, vocab]` for `decoder_input` (BOS first).
    pub fn forward(&self, features: &Tensor, decoder_input: &[u32]) -> Result<Tensor> {
        let mut p = Pass::new(self, false, None);
        let mem = p.encode(features)?;
        Ok(p.decode(&mem, decoder_input)?.dequantize())
    }

    /// Forward pass recording every site output.
    pub fn forward_traced(&self, features: &Tensor, decoder_input: &[u32]) -> Result<(Tensor, Trace)> {
        let mut p = Pass::new(self, true, None);
        let mem = p.encode(features)?;
        let y = p.decode(&mem, decoder_input)?.dequantize();
        Ok((y, p.trace.unwrap_or_default()))
    }

    /// Per-site check against a reference trace: each site is computed from
    /// the reference values of its inputs rather than from this path's own,
    /// so rounding differences do not compound. Returns this path's trace.
    pub fn replay(&self, features: &Tensor, decoder_input: &[u32], reference: &[(String, Tensor)]) -> Result<Trace> {
        let mut p = Pass::new(self, true, Some(reference));
        let mem = p.encode(features)?;
        p.decode(&mem, decoder_input)?;
        Ok(p.trace.unwrap_or_default())
    }

    /// Encoder output codes `[T', d_model]`.
    pub fn encode(&self, features: &Tensor) -> Result<QuantizedTensor> {
        Pass::new(self, false, None).encode(features)
    }

    pub fn decode(&self, memory: &QuantizedTensor, decoder_input: &[u32]) -> Result<Tensor> {
        Ok(Pass::new(self, false, None).decode(memory, decoder_input)?.dequantize())
    }

    /// Grid of an activation site.
    pub fn site_params(&self, site: &str) -> Option<QuantParams> {
        self.acts.get(site).copied()
    }
}

impl<'a> Pass<'a> {
    fn new(model: &'a QuantizedModel, trace: bool, teacher: Option<&'a [(String, Tensor)]>) -> Self {
        Self {
            model,
            trace: trace.then(Vec::new),
            teacher: teacher.map(|t| (t, 0)),
        }
    }

    /// Records a site output and, when replaying, swaps in the reference.
    fn site(&mut self, name: &str, q: QuantizedTensor) -> Result<QuantizedTensor> {
        if let Some(t) = self.trace.as_mut() {
            t.push((name.to_string(), q.dequantize()));
        }
        let Some((reference, pos)) = self.teacher.as_mut() else {
            return Ok(q);
        };
        let (ref_name, value) = reference
            .get(*pos)
            .ok_or_else(|| Error::Audit(format!("reference trace ends before site `{name}`")))?;
        if ref_name != name || value.shape() != q.shape.as_slice() {
            return Err(Error::Audit(format!(
                "reference trace has `{ref_name}` {:?} where the integer path visits `{name}` {:?}",
                value.shape(),
                q.shape
            )));
        }
        *pos += 1;
        Ok(QuantizedTensor::quantize(value, q.params))
    }

    /// Quantizes a real-valued result onto `site` and records it.
    fn real_site(&mut self, site: &str, t: &Tensor) -> Result<QuantizedTensor> {
        let p = self.model.grid(site)?;
        self.site(site, QuantizedTensor::quantize(t, p))
    }

    fn product(
        &mut self,
        site: &str,
        x: &QuantizedTensor,
        w: &QuantizedTensor,
        valid: Option<&[bool]>,
    ) -> Result<QuantizedTensor> {
        let r = self.model.requantizer(site)?;
        let (m, k) = dims2(x);
        let n = w.shape[1];
        if x.params != r.lhs || w.params != r.rhs {
            return Err(Error::Audit(format!("operand grids of `{site}` do not match its requantizer")));
        }
        Ok(qt(vec![m, n], r.apply(&x.codes, m, k, &w.codes, n, valid)?, r.out))
    }

    fn linear(&mut self, x: &QuantizedTensor, prefix: &str, out_site: &str) -> Result<QuantizedTensor> {
        let w = self.model.weight(&format!("{prefix}.weight"))?;
        let y = self.product(out_site, x, w, None)?;
        self.site(out_site, y)
    }

    fn add_norm(&mut self, x: &QuantizedTensor, sub: &QuantizedTensor, norm: &str) -> Result<QuantizedTensor> {
        let (rows, cols) = dims2(x);
        let s: Vec<f64> = x
            .codes
            .iter()
            .zip(&sub.codes)
            .map(|(&a, &b)| x.params.value(a) + sub.params.value(b))
            .collect();
        let g = self.model.float(&format!("{norm}.gamma"))?;
        let b = self.model.float(&format!("{norm}.beta"))?;
        let (y, _, _) = kernels::layer_norm(&s, cols, g, b, LAYER_NORM_EPS);
        self.real_site(&format!("{norm}.output"), &Tensor::new(vec![rows, cols], y)?)
    }

    fn attention(&mut self, xq: &QuantizedTensor, xkv: &QuantizedTensor, prefix: &str, causal: bool) -> Result<QuantizedTensor> {
        let cfg = &self.model.config;
        let (heads, dk) = (cfg.heads, cfg.head_dim());
        let q = self.linear(xq, &format!("{prefix}.q_proj"), &format!("{prefix}.query"))?;
        let k = self.linear(xkv, &format!("{prefix}.k_proj"), &format!("{prefix}.key"))?;
        let v = self.linear(xkv, &format!("{prefix}.v_proj"), &format!("{prefix}.value"))?;
        let (tq, d) = dims2(&q);
        let tk = k.shape[0];
        let mask: Option<Vec<bool>> = causal.then(|| (0..tq * tk).map(|i| i % tk > i / tk).collect());
        let scores_site = format!("{prefix}.scores");
        let probs_site = format!("{prefix}.probs");
        let context_site = format!("{prefix}.context");

        let mut parts = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = gather(&q, &kernels::slice_cols_index(tq, d, h * dk, dk), vec![tq, dk]);
            let kh = gather(&k, &kernels::slice_cols_index(tk, d, h * dk, dk), vec![tk, dk]);
            let kt = gather(&kh, &kernels::transpose_index(tk, dk), vec![dk, tk]);
            let vh = gather(&v, &kernels::slice_cols_index(tk, d, h * dk, dk), vec![tk, dk]);
            let s = self.product(&scores_site, &qh, &kt, None)?;
            let s = self.site(&scores_site, s)?;
            let p = kernels::softmax(s.dequantize().data(), tq, tk, 1, mask.as_deref());
            let p = Tensor::new(vec![tq, tk], p)?;
            let p = self.real_site(&probs_site, &p)?;
            parts.push(self.product(&context_site, &p, &vh, None)?);
        }
        let cp = parts[0].params;
        let mut codes = Vec::with_capacity(tq * d);
        for r in 0..tq {
            for part in &parts {
                codes.extend_from_slice(&part.codes[r * dk..(r + 1) * dk]);
            }
        }
        let ctx = self.site(&context_site, qt(vec![tq, d], codes, cp))?;
        self.linear(&ctx, &format!("{prefix}.out_proj"), &format!("{prefix}.output"))
    }

    fn ffn(&mut self, x: &QuantizedTensor, prefix: &str) -> Result<QuantizedTensor> {
        let h = self.linear(x, &format!("{prefix}.w1"), &format!("{prefix}.hidden"))?;
        self.linear(&h, &format!("{prefix}.w2"), &format!("{prefix}.output"))
    }

    fn frontend(&mut self, features: &Tensor) -> Result<QuantizedTensor> {
        let cfg = self.model.config.clone();
        let fe = &cfg.frontend;
        let (t, f) = features.dims2()?;
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
        let x = self.real_site("frontend.input", features)?;
        let mut y = gather(&x, &kernels::transpose_index(t, f), vec![1, f, t]);
        for i in 1..=fe.blocks {
            let (c, h, w) = (y.shape[0], y.shape[1], y.shape[2]);
            let geo = Conv2dGeometry {
                in_channels: c,
                height: h,
                width: w,
                kernel: fe.kernel,
                stride: 1,
                pad: fe.pad(),
            };
            let (ho, wo) = geo
                .out_hw()
                .ok_or_else(|| Error::shape("frontend", format!("kernel {} on {h}×{w}", fe.kernel)))?;
            let idx = geo.im2col_index().expect("geometry checked");
            let valid: Vec<bool> = idx.iter().map(Option::is_some).collect();
            let cols = gather(&y, &idx, vec![ho * wo, geo.patch_len()]);
            let site = format!("frontend.conv{i}.output");
            let kernel = self.conv_kernel(&format!("frontend.conv{i}.weight"))?;
            let out = self.product(&site, &cols, &kernel, Some(&valid))?;
            let c_out = kernel.shape[1];
            let out = gather(&out, &kernels::transpose_index(ho * wo, c_out), vec![c_out, ho, wo]);
            let out = self.site(&site, out)?;
            let (codes, _, ph, pw) = kernels::max_pool2d(&out.codes, c_out, ho, wo, fe.pool, fe.pool)
                .ok_or_else(|| Error::shape("max_pool2d", format!("window {} on {ho}×{wo}", fe.pool)))?;
            y = qt(vec![c_out, ph, pw], codes, out.params);
        }
        let (perm_shape, idx) = kernels::permute_index(&y.shape, &[2, 0, 1]);
        let flat = gather(&y, &idx, vec![perm_shape[0], perm_shape[1] * perm_shape[2]]);
        self.linear(&flat, "frontend.proj", "frontend.output")
    }

    /// `[Cout, Cin, k, k]` codes laid out as the `[Cin·k·k, Cout]` rhs.
    fn conv_kernel(&self, name: &str) -> Result<QuantizedTensor> {
        let w = self.model.weight(name)?;
        let c_out = w.shape[0];
        let patch = w.len() / c_out;
        Ok(gather(w, &kernels::transpose_index(c_out, patch), vec![patch, c_out]))
    }

    fn encode(&mut self, features: &Tensor) -> Result<QuantizedTensor> {
        let mut x = self.frontend(features)?;
        for l in 0..self.model.config.enc_layers {
            let p = format!("encoder.{l}");
            let a = self.attention(&x, &x, &format!("{p}.self_attn"), false)?;
            let n1 = self.add_norm(&x, &a, &format!("{p}.norm1"))?;
            let f = self.ffn(&n1, &format!("{p}.ffn"))?;
            x = self.add_norm(&n1, &f, &format!("{p}.norm2"))?;
        }
        Ok(x)
    }

    fn decode(&mut self, memory: &QuantizedTensor, tokens: &[u32]) -> Result<QuantizedTensor> {
        let cfg = self.model.config.clone();
        if tokens.is_empty() {
            return Err(Error::contract("decoder input is empty"));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::contract(format!("token id {bad} outside vocabulary of {}", cfg.vocab_size)));
        }
        let table = self.model.weight("decoder.embed.weight")?;
        let d = cfg.d_model;
        let mut x = Vec::with_capacity(tokens.len() * d);
        for &t in tokens {
            let row = &table.codes[t as usize * d..(t as usize + 1) * d];
            x.extend(row.iter().map(|&c| table.params.value(c)));
        }
        if cfg.use_positional_encoding {
            let pe = sinusoidal_pe(tokens.len(), d)?;
            for (v, p) in x.iter_mut().zip(pe.data()) {
                *v += p;
            }
        }
        let mut x = self.real_site("decoder.input", &Tensor::new(vec![tokens.len(), d], x)?)?;
        if cfg.use_decoder_conv1d {
            for i in 1..=cfg.decoder_conv.blocks {
                let w = self.model.weight(&format!("decoder.conv{i}.weight"))?;
                let (width, d_in, d_out) = (w.shape[0], w.shape[1], w.shape[2]);
                let rhs = qt(vec![width * d_in, d_out], w.codes.clone(), w.params);
                let steps = x.shape[0];
                let idx = kernels::causal_index(steps, d_in, width);
                let valid: Vec<bool> = idx.iter().map(Option::is_some).collect();
                let cols = gather(&x, &idx, vec![steps, width * d_in]);
                let site = format!("decoder.conv{i}.output");
                let y = self.product(&site, &cols, &rhs, Some(&valid))?;
                x = self.site(&site, y)?;
            }
        }
        for l in 0..cfg.dec_layers {
            let p = format!("decoder.{l}");
            let a = self.attention(&x, &x, &format!("{p}.self_attn"), true)?;
            let n1 = self.add_norm(&x, &a, &format!("{p}.norm1"))?;
            let c = self.attention(&n1, memory, &format!("{p}.cross_attn"), false)?;
            let n2 = self.add_norm(&n1, &c, &format!("{p}.norm2"))?;
            let f = self.ffn(&n2, &format!("{p}.ffn"))?;
            x = self.add_norm(&n2, &f, &format!("{p}.norm3"))?;
        }
        self.linear(&x, "output.proj", "output.logits")
    }
}
