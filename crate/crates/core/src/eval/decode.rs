use crate::error::{Error, Result};
use crate::model::{Model, QuantHooks, QuantSource, Session, BOS_ID, EOS_ID};
use crate::numcore::Tensor;
use crate::pipeline::QuantizedModel;
use crate::quant::QuantizedTensor;

/// Anything that can encode features once and score decoder prefixes.
pub trait Transcriber {
    type Memory;

    fn encode(&self, features: &Tensor) -> Result<Self::Memory>;

    /// Logits for the token following `prefix` (which starts with BOS).
    fn next_logits(&self, memory: &Self::Memory, prefix: &[u32]) -> Result<Vec<f64>>;
}

fn last_row(t: &Tensor) -> Vec<f64> {
    let rows = t.shape()[0];
    t.row(rows - 1).to_vec()
}

impl Transcriber for Model {
    type Memory = Tensor;

    fn encode(&self, features: &Tensor) -> Result<Tensor> {
        Model::encode(self, features)
    }

    fn next_logits(&self, memory: &Tensor, prefix: &[u32]) -> Result<Vec<f64>> {
        let mut s = Session::inference(self, QuantHooks::off());
        let m = s.graph_mut().constant(memory.clone());
        let y = s.decode(m, prefix)?;
        Ok(last_row(s.value(y)))
    }
}

/// A float model run with every quantization site simulated.
pub struct Simulated<'a> {
    pub model: &'a Model,
    pub source: &'a dyn QuantSource,
}

impl Transcriber for Simulated<'_> {
    type Memory = Tensor;

    fn encode(&self, features: &Tensor) -> Result<Tensor> {
        let mut s = Session::inference(self.model, QuantHooks::simulate(self.source));
        let y = s.encode(features)?;
        Ok(s.value(y).clone())
    }

    fn next_logits(&self, memory: &Tensor, prefix: &[u32]) -> Result<Vec<f64>> {
        let mut s = Session::inference(self.model, QuantHooks::simulate(self.source));
        let m = s.graph_mut().constant(memory.clone());
        let y = s.decode(m, prefix)?;
        Ok(last_row(s.value(y)))
    }
}

impl Transcriber for QuantizedModel {
    type Memory = QuantizedTensor;

    fn encode(&self, features: &Tensor) -> Result<QuantizedTensor> {
        QuantizedModel::encode(self, features)
    }

    fn next_logits(&self, memory: &QuantizedTensor, prefix: &[u32]) -> Result<Vec<f64>> {
        Ok(last_row(&self.decode(memory, prefix)?))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoded {
    /// Emitted tokens, without BOS and EOS.
    pub tokens: Vec<u32>,
    /// Stopped at `max_len` before EOS.
    pub truncated: bool,
}

/// Argmax decoding from BOS until EOS or `max_len` tokens.
pub fn greedy_decode<T: Transcriber + ?Sized>(model: &T, features: &Tensor, max_len: usize) -> Result<Decoded> {
    if max_len == 0 {
        return Err(Error::contract("max_len must be at least 1"));
    }
    let memory = model.encode(features)?;
    let mut prefix = vec![BOS_ID];
    while prefix.len() <= max_len {
        let logits = model.next_logits(&memory, &prefix)?;
        let next = crate::numcore::argmax(&logits) as u32;
        if next == EOS_ID {
            prefix.remove(0);
            return Ok(Decoded {
                tokens: prefix,
                truncated: false,
            });
        }
        prefix.push(next);
    }
    prefix.remove(0);
    Ok(Decoded {
        tokens: prefix,
        truncated: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Always prefers one fixed token.
    struct Fixed(u32);

    impl Transcriber for Fixed {
        type Memory = ();

        fn encode(&self, _: &Tensor) -> Result<()> {
            Ok(())
        }

        fn next_logits(&self, _: &(), _: &[u32]) -> Result<Vec<f64>> {
            let mut v = vec![0.0; 8];
            v[self.0 as usize] = 1.0;
            Ok(v)
        }
    }

    #[test]
    fn eos_first_gives_empty_transcript() {
        let d = greedy_decode(&Fixed(EOS_ID), &Tensor::zeros(&[4, 2]), 5).unwrap();
        assert_eq!(d, Decoded { tokens: vec![], truncated: false });
    }

    #[test]
    fn never_exceeds_max_len() {
        let d = greedy_decode(&Fixed(5), &Tensor::zeros(&[4, 2]), 3).unwrap();
        assert_eq!(d, Decoded { tokens: vec![5, 5, 5], truncated: true });
        assert!(greedy_decode(&Fixed(5), &Tensor::zeros(&[4, 2]), 0).is_err());
    }
}
