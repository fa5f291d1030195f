use crate::error::{Error, Result};
use crate::io::{Checkpoint, StoredTensor};
use crate::model::{Model, QuantHooks, Session, BOS_ID};
use crate::numcore::Tensor;

/// Cross-attention of one decoder layer, `[target, encoder]` per head.
#[derive(Clone, Debug)]
pub struct LayerAttention {
    pub layer: usize,
    pub heads: Vec<Tensor>,
    pub mean: Tensor,
}

#[derive(Clone, Debug)]
pub struct AttentionDump {
    pub layers: Vec<LayerAttention>,
}

/// Teacher-forced pass over `[BOS] + tokens` capturing every decoder
/// layer's cross-attention.
pub fn export_attention(model: &Model, features: &Tensor, tokens: &[u32]) -> Result<AttentionDump> {
    let mut input = vec![BOS_ID];
    input.extend_from_slice(tokens);
    let mut s = Session::inference(model, QuantHooks::off()).capture_attention();
    s.forward(features, &input)?;
    let caps = s.take_attention();
    let mut layers: Vec<LayerAttention> = Vec::new();
    for c in caps {
        if layers.last().is_none_or(|l| l.layer != c.layer) {
            layers.push(LayerAttention {
                layer: c.layer,
                heads: Vec::new(),
                mean: Tensor::zeros(c.probs.shape()),
            });
        }
        layers.last_mut().expect("pushed above").heads.push(c.probs);
    }
    for l in &mut layers {
        let k = l.heads.len() as f64;
        let mut mean = Tensor::zeros(l.heads[0].shape());
        for h in &l.heads {
            for (m, v) in mean.data_mut().iter_mut().zip(h.data()) {
                *m += v / k;
            }
        }
        l.mean = mean;
    }
    Ok(AttentionDump { layers })
}

impl AttentionDump {
    /// Largest deviation of any row sum from 1.
    pub fn max_row_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for l in &self.layers {
            for t in l.heads.iter().chain(std::iter::once(&l.mean)) {
                let cols = t.shape()[1];
                for row in t.data().chunks(cols) {
                    worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
                }
            }
        }
        worst
    }

    /// Packs the dump into the tensor container used for checkpoints.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::default();
        for l in &self.layers {
            for (h, t) in l.heads.iter().enumerate() {
                c.tensors.insert(
                    format!("decoder.{}.cross_attn.head{h}", l.layer),
                    StoredTensor::from_tensor(t),
                );
            }
            c.tensors.insert(
                format!("decoder.{}.cross_attn.mean", l.layer),
                StoredTensor::from_tensor(&l.mean),
            );
        }
        c.set_attr("kind", "attention");
        c
    }

    pub fn layer(&self, layer: usize) -> Result<&LayerAttention> {
        self.layers
            .iter()
            .find(|l| l.layer == layer)
            .ok_or_else(|| Error::contract(format!("no decoder layer {layer} in the dump")))
    }
}
