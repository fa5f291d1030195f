use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;

/// Gradients by parameter name.
pub type GradMap = BTreeMap<String, Vec<f64>>;

/// Global L2 norm over all gradients.
pub fn global_norm(grads: &GradMap) -> f64 {
    grads
        .values()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients by `threshold / norm` when the global norm exceeds
/// `threshold`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut GradMap, threshold: f64) -> Result<f64> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::contract(format!("clip threshold {threshold} must be positive")));
    }
    let norm = global_norm(grads);
    if norm > threshold {
        let s = threshold / norm;
        for v in grads.values_mut().flat_map(|g| g.iter_mut()) {
            *v *= s;
        }
    }
    Ok(norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaDeltaConfig {
    pub rho: f64,
    pub eps: f64,
    pub learning_rate: f64,
}

impl Default for AdaDeltaConfig {
    fn default() -> Self {
        Self {
            rho: 0.95,
            eps: 1e-6,
            learning_rate: 1.0,
        }
    }
}

/// Running averages of squared gradients and squared updates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub config: AdaDeltaConfig,
    pub sq_grad: BTreeMap<String, Vec<f64>>,
    pub sq_update: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: AdaDeltaConfig) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }
}

/// One AdaDelta update of every parameter that has a gradient:
///
/// ```text
/// E[g²]  ← ρ·E[g²] + (1−ρ)·g²
/// Δx     ← −sqrt(E[Δx²] + ε) / sqrt(E[g²] + ε) · g
/// E[Δx²] ← ρ·E[Δx²] + (1−ρ)·Δx²
/// x      ← x + lr·Δx
/// ```
pub fn adadelta_step(params: &mut ParamStore, grads: &GradMap, state: &mut OptimizerState) -> Result<()> {
    let AdaDeltaConfig { rho, eps, learning_rate } = state.config;
    for (name, g) in grads {
        let x = params.data_mut(name)?;
        if x.len() != g.len() {
            return Err(Error::shape("adadelta", format!("`{name}`: {} params, {} grads", x.len(), g.len())));
        }
        let eg = state.sq_grad.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let ex = state.sq_update.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        if eg.len() != g.len() || ex.len() != g.len() {
            return Err(Error::shape("adadelta", format!("state for `{name}` has the wrong size")));
        }
        for i in 0..g.len() {
            eg[i] = rho * eg[i] + (1.0 - rho) * g[i] * g[i];
            let dx = -((ex[i] + eps).sqrt() / (eg[i] + eps).sqrt()) * g[i];
            ex[i] = rho * ex[i] + (1.0 - rho) * dx * dx;
            x[i] += learning_rate * dx;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    fn grads(v: &[(&str, Vec<f64>)]) -> GradMap {
        v.iter().map(|(k, g)| (k.to_string(), g.clone())).collect()
    }

    #[test]
    fn clipping_cases() {
        let mut g = grads(&[("a", vec![3.0, 4.0])]);
        assert_eq!(clip_gradients(&mut g, 10.0).unwrap(), 5.0);
        assert_eq!(g["a"], vec![3.0, 4.0]);
        let mut g = grads(&[("a", vec![30.0, 40.0])]);
        clip_gradients(&mut g, 10.0).unwrap();
        assert!((g["a"][0] - 6.0).abs() < 1e-12 && (g["a"][1] - 8.0).abs() < 1e-12);
        assert!(clip_gradients(&mut g, 0.0).is_err());
    }

    fn store(names: &[&str]) -> ParamStore {
        let mut p = ParamStore::new();
        for n in names {
            p.insert(*n, Tensor::from_vec(vec![0.5]));
        }
        p
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        let mut p = store(&["w"]);
        let mut s = OptimizerState::new(AdaDeltaConfig::default());
        adadelta_step(&mut p, &grads(&[("w", vec![1.0])]), &mut s).unwrap();
        let want = -(1e-6f64).sqrt() / (0.05f64 + 1e-6).sqrt();
        assert!((p.get("w").unwrap().data()[0] - (0.5 + want)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_zero_update_and_symmetry() {
        let mut p = store(&["a", "b", "z"]);
        let mut s = OptimizerState::new(AdaDeltaConfig::default());
        let g = grads(&[("a", vec![0.3]), ("b", vec![0.3]), ("z", vec![0.0])]);
        for _ in 0..5 {
            adadelta_step(&mut p, &g, &mut s).unwrap();
        }
        assert_eq!(p.get("z").unwrap().data(), &[0.5]);
        assert_eq!(p.get("a").unwrap().data(), p.get("b").unwrap().data());
        assert!(s.sq_grad.values().chain(s.sq_update.values()).flatten().all(|&v| v >= 0.0));
    }
}
