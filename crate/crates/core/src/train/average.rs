use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::io::{Checkpoint, SiteRecord, StoredTensor};
use crate::quant::RangeTracker;

pub const ATTR_NAME: &str = "name";

/// Elementwise mean of full-precision checkpoints with identical tables.
/// Stored range trackers are averaged as well. Values are summed in sorted
/// order, so the result does not depend on the input order.
pub fn checkpoint_average(checkpoints: &[Checkpoint]) -> Result<Checkpoint> {
    let first = checkpoints
        .first()
        .ok_or_else(|| Error::contract("checkpoint_average needs at least one checkpoint"))?;
    for (i, c) in checkpoints.iter().enumerate() {
        if !c.tensors.keys().eq(first.tensors.keys()) {
            return Err(Error::contract(format!("checkpoint {i} has a different tensor table")));
        }
        if !c.meta.sites.keys().eq(first.meta.sites.keys()) {
            return Err(Error::contract(format!("checkpoint {i} has a different site table")));
        }
        if c.attr(crate::model::ATTR_CONFIG) != first.attr(crate::model::ATTR_CONFIG) {
            return Err(Error::contract(format!("checkpoint {i} has a different model configuration")));
        }
    }

    let k = checkpoints.len();
    let mut tensors = BTreeMap::new();
    let mut column = Vec::with_capacity(k);
    for (name, t0) in &first.tensors {
        let mut parts = Vec::with_capacity(k);
        for c in checkpoints {
            match &c.tensors[name] {
                StoredTensor::F32 { shape, data } if shape.as_slice() == t0.shape() => parts.push(data),
                StoredTensor::F32 { shape, .. } => {
                    return Err(Error::contract(format!("`{name}` has shape {shape:?} vs {:?}", t0.shape())))
                }
                StoredTensor::Q8(_) => {
                    return Err(Error::contract(format!("`{name}` is quantized; average full-precision checkpoints")))
                }
            }
        }
        let n = parts[0].len();
        let mut mean = Vec::with_capacity(n);
        for i in 0..n {
            column.clear();
            column.extend(parts.iter().map(|p| p[i] as f64));
            column.sort_by(f64::total_cmp);
            mean.push((column.iter().sum::<f64>() / k as f64) as f32);
        }
        tensors.insert(
            name.clone(),
            StoredTensor::F32 {
                shape: t0.shape().to_vec(),
                data: mean,
            },
        );
    }

    let mut sites = BTreeMap::new();
    for (name, s0) in &first.meta.sites {
        let recs: Vec<&SiteRecord> = checkpoints.iter().map(|c| &c.meta.sites[name]).collect();
        let tracker = if recs.iter().all(|r| r.tracker.is_some()) {
            let ts: Vec<RangeTracker> = recs.iter().map(|r| r.tracker.unwrap()).collect();
            Some(RangeTracker::average(&ts)?)
        } else {
            None
        };
        sites.insert(
            name.clone(),
            SiteRecord {
                enabled: recs.iter().all(|r| r.enabled),
                tracker,
                params: s0.params.filter(|p| recs.iter().all(|r| r.params == Some(*p))),
            },
        );
    }

    let mut constituents: Vec<String> = checkpoints
        .iter()
        .map(|c| match c.attr(ATTR_NAME) {
            Some(n) => n.to_string(),
            None => format!("step-{}", c.meta.step),
        })
        .collect();
    constituents.sort();

    let mut out = Checkpoint {
        tensors,
        meta: first.meta.clone(),
    };
    out.meta.step = checkpoints.iter().map(|c| c.meta.step).max().unwrap_or(0);
    out.meta.constituents = constituents;
    out.meta.sites = sites;
    out.meta.attrs.remove(ATTR_NAME);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ck(v: f32, name: &str, t: Option<(f64, f64)>) -> Checkpoint {
        let mut c = Checkpoint::default();
        c.tensors.insert("w".into(), StoredTensor::F32 { shape: vec![2], data: vec![v, -v] });
        c.set_attr(ATTR_NAME, name);
        c.meta.sites.insert(
            "s".into(),
            SiteRecord {
                tracker: t.map(|(lo, hi)| RangeTracker {
                    running_min: lo,
                    running_max: hi,
                    momentum: 0.9,
                    observations: 1,
                }),
                ..SiteRecord::default()
            },
        );
        c
    }

    #[test]
    fn mean_of_two() {
        let a = checkpoint_average(&[ck(0.0, "a", Some((-1.0, 1.0))), ck(2.0, "b", Some((-3.0, 2.0)))]).unwrap();
        assert_eq!(a.tensors["w"], StoredTensor::F32 { shape: vec![2], data: vec![1.0, -1.0] });
        let t = a.meta.sites["s"].tracker.unwrap();
        assert_eq!((t.running_min, t.running_max), (-2.0, 1.5));
        assert_eq!(a.meta.constituents, vec!["a", "b"]);
    }

    #[test]
    fn single_and_identical() {
        let c = ck(0.3, "x", None);
        let one = checkpoint_average(std::slice::from_ref(&c)).unwrap();
        assert_eq!(one.tensors, c.tensors);
        let three = checkpoint_average(&[c.clone(), c.clone(), c.clone()]).unwrap();
        assert_eq!(three.tensors, c.tensors);
    }

    #[test]
    fn permutation_invariant_and_rejects_mismatch() {
        let (a, b, c) = (ck(0.1, "a", None), ck(0.7, "b", None), ck(-0.35, "c", None));
        let x = checkpoint_average(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let y = checkpoint_average(&[c.clone(), a.clone(), b.clone()]).unwrap();
        assert_eq!(x, y);
        let mut bad = c;
        bad.tensors.insert("extra".into(), StoredTensor::F32 { shape: vec![1], data: vec![0.0] });
        assert!(checkpoint_average(&[a, bad]).is_err());
        assert!(checkpoint_average(&[]).is_err());
    }
}
