use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// How a parameter is initialised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Weights are quantized; biases and norm gains stay in fp32.
    pub fn is_weight(&self) -> bool {
        matches!(self.init, Init::Xavier { .. })
    }
}

fn xavier(name: String, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> ParamSpec {
    ParamSpec {
        name,
        shape,
        init: Init::Xavier { fan_in, fan_out },
    }
}

fn fill(name: String, len: usize, init: Init) -> ParamSpec {
    ParamSpec {
        name,
        shape: vec![len],
        init,
    }
}

fn linear(out: &mut Vec<ParamSpec>, prefix: &str, d_in: usize, d_out: usize) {
    out.push(xavier(format!("{prefix}.weight"), vec![d_in, d_out], d_in, d_out));
    out.push(fill(format!("{prefix}.bias"), d_out, Init::Zeros));
}

fn norm(out: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    out.push(fill(format!("{prefix}.gamma"), d, Init::Ones));
    out.push(fill(format!("{prefix}.beta"), d, Init::Zeros));
}

fn attention(out: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    for proj in ["q_proj", "k_proj", "v_proj", "out_proj"] {
        linear(out, &format!("{prefix}.{proj}"), d, d);
    }
}

fn ffn(out: &mut Vec<ParamSpec>, prefix: &str, d: usize, d_ff: usize) {
    linear(out, &format!("{prefix}.w1"), d, d_ff);
    linear(out, &format!("{prefix}.w2"), d_ff, d);
}

/// Every trainable tensor of a model, in initialisation order.
pub fn param_specs(c: &ModelConfig) -> Vec<ParamSpec> {
    let d = c.d_model;
    let mut out = Vec::new();

    let fe = &c.frontend;
    let mut c_in = 1;
    for i in 1..=fe.blocks {
        let k2 = fe.kernel * fe.kernel;
        out.push(xavier(
            format!("frontend.conv{i}.weight"),
            vec![fe.channels, c_in, fe.kernel, fe.kernel],
            c_in * k2,
            fe.channels * k2,
        ));
        out.push(fill(format!("frontend.conv{i}.bias"), fe.channels, Init::Zeros));
        c_in = fe.channels;
    }
    linear(&mut out, "frontend.proj", c.frontend_proj_in(), d);

    for l in 0..c.enc_layers {
        let p = format!("encoder.{l}");
        attention(&mut out, &format!("{p}.self_attn"), d);
        norm(&mut out, &format!("{p}.norm1"), d);
        ffn(&mut out, &format!("{p}.ffn"), d, c.d_ff);
        norm(&mut out, &format!("{p}.norm2"), d);
    }

    out.push(xavier("decoder.embed.weight".into(), vec![c.vocab_size, d], c.vocab_size, d));
    if c.use_decoder_conv1d {
        let w = c.decoder_conv.width;
        for i in 1..=c.decoder_conv.blocks {
            out.push(xavier(format!("decoder.conv{i}.weight"), vec![w, d, d], w * d, w * d));
            out.push(fill(format!("decoder.conv{i}.bias"), d, Init::Zeros));
        }
    }
    for l in 0..c.dec_layers {
        let p = format!("decoder.{l}");
        attention(&mut out, &format!("{p}.self_attn"), d);
        norm(&mut out, &format!("{p}.norm1"), d);
        attention(&mut out, &format!("{p}.cross_attn"), d);
        norm(&mut out, &format!("{p}.norm2"), d);
        ffn(&mut out, &format!("{p}.ffn"), d, c.d_ff);
        norm(&mut out, &format!("{p}.norm3"), d);
    }
    linear(&mut out, "output.proj", d, c.vocab_size);
    out
}

/// Exact number of trainable scalars.
pub fn count_params(c: &ModelConfig) -> Result<usize> {
    c.check_shapes()?;
    Ok(param_specs(c).iter().map(ParamSpec::numel).sum())
}

/// Named parameter table. Tensors are shared so a forward pass can borrow
/// them without copying.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Arc<Tensor>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fresh parameters for `config`, deterministic in `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = Self::new();
        for spec in param_specs(config) {
            let n = spec.numel();
            let data = match spec.init {
                Init::Xavier { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-limit..=limit)).collect()
                }
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
            };
            let t = Tensor::new(spec.shape, data).expect("spec shape").with_grad(true);
            store.tensors.insert(spec.name, Arc::new(t));
        }
        store
    }

    pub fn get(&self, name: &str) -> Result<&Arc<Tensor>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::contract(format!("no parameter named `{name}`")))
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), Arc::new(t.with_grad(true)));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Arc<Tensor>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Mutable access for optimizers. Clones the tensor if a forward pass
    /// still holds a reference to it.
    pub fn data_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let t = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("no parameter named `{name}`")))?;
        Ok(Arc::make_mut(t).data_mut())
    }

    /// Checks names and shapes against what `config` expects.
    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let specs = param_specs(config);
        if specs.len() != self.tensors.len() {
            return Err(Error::contract(format!(
                "expected {} parameters, found {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for s in specs {
            let t = self.get(&s.name)?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::shape(
                    "parameter",
                    format!("`{}` is {:?}, config wants {:?}", s.name, t.shape(), s.shape),
                ));
            }
        }
        Ok(())
    }
}
