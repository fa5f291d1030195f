use super::{Model, ModelConfig, ParamStore};
use crate::error::{Error, Result};
use crate::io::{Checkpoint, StoredTensor};

pub const ATTR_CONFIG: &str = "model_config";
pub const ATTR_KIND: &str = "kind";

impl ModelConfig {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

impl Model {
    /// Full-precision checkpoint of the current parameters.
    pub fn to_checkpoint(&self, kind: &str, step: u64) -> Result<Checkpoint> {
        let mut c = Checkpoint::default();
        for (name, t) in self.params.iter() {
            c.tensors.insert(name.to_string(), StoredTensor::from_tensor(t));
        }
        c.meta.step = step;
        c.set_attr(ATTR_CONFIG, self.config.to_toml()?);
        c.set_attr(ATTR_KIND, kind);
        Ok(c)
    }

    /// Model from a checkpoint; quantized tensors are dequantized.
    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let config = checkpoint_config(c)?;
        let mut params = ParamStore::new();
        for (name, t) in &c.tensors {
            params.insert(name.clone(), t.to_tensor());
        }
        Model::from_params(config, params)
    }
}

pub fn checkpoint_config(c: &Checkpoint) -> Result<ModelConfig> {
    let text = c
        .attr(ATTR_CONFIG)
        .ok_or_else(|| Error::contract("checkpoint carries no model configuration"))?;
    ModelConfig::from_toml(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn config_toml_round_trip() {
        for v in Variant::ALL {
            let c = ModelConfig::paper(v);
            assert_eq!(ModelConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        }
        assert!(ModelConfig::from_toml("d_model = 4\nbogus = 1").is_err());
    }

    #[test]
    fn checkpoint_round_trip_through_f32() {
        let m = Model::new(ModelConfig::toy(Variant::ConvContext), 3).unwrap();
        let c = m.to_checkpoint("fp32", 9).unwrap();
        let back = Model::from_checkpoint(&Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back.config, m.config);
        for (name, t) in m.params.iter() {
            let b = back.params.get(name).unwrap();
            assert!(t.max_abs_diff(b) <= 1e-7 * t.data().iter().fold(1.0f64, |a, v| a.max(v.abs())));
        }
    }
}
