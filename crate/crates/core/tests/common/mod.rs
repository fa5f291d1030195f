//! Shared oracles for the integration tests.
#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};

use qtfm::model::{Model, QuantHooks, Session, BOS_ID, EOS_ID, PAD_ID};
use qtfm::numcore::{Graph, Tensor, Var};
use qtfm::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Worst elementwise relative error between two gradients, with a floor on
/// the denominator so that entries near zero are judged absolutely.
pub fn rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-6;

/// Central finite differences against the tape for a scalar function of
/// several leaves. Returns the worst relative error over all inputs.
pub fn grad_check<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone().with_grad(true))).collect();
    let loss = f(&mut g, &vars).unwrap();
    assert_eq!(g.value(loss).len(), 1, "grad_check needs a scalar");
    let grads = g.backward(loss).unwrap();

    let eval = |inputs: &[Tensor]| -> f64 {
        let mut g = Graph::inference();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let v = f(&mut g, &vars).unwrap();
        g.value(v).data()[0]
    };

    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let mut numeric = vec![0.0; inputs[k].len()];
        let mut probe = inputs.to_vec();
        for i in 0..inputs[k].len() {
            let x = inputs[k].data()[i];
            probe[k].data_mut()[i] = x + FD_STEP;
            let up = eval(&probe);
            probe[k].data_mut()[i] = x - FD_STEP;
            let down = eval(&probe);
            probe[k].data_mut()[i] = x;
            numeric[i] = (up - down) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_error(&analytic, &numeric, FD_FLOOR));
    }
    worst
}

/// Teacher-forced cross-entropy of one utterance, quantization off and no
/// dropout.
pub fn model_loss(model: &Model, features: &Tensor, tokens: &[u32], train: bool) -> (Graph, Var, Vec<(String, Var)>) {
    let mut s = if train {
        Session::train(model, QuantHooks::off())
    } else {
        Session::inference(model, QuantHooks::off())
    };
    let mut input = vec![BOS_ID];
    input.extend_from_slice(tokens);
    let logits = s.forward(features, &input).unwrap();
    let mut targets: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    targets.push(EOS_ID as usize);
    let loss = s.graph_mut().cross_entropy(logits, &targets, PAD_ID as usize).unwrap();
    let bound: Vec<(String, Var)> = s.bound_params().iter().map(|(n, v)| (n.clone(), *v)).collect();
    let (graph, _, _) = s.into_parts();
    (graph, loss, bound)
}

/// Finite-difference check of every parameter tensor of a model, probing
/// up to `per_tensor` evenly spread coordinates of each. Returns the worst
/// relative error, the tensor it occurred in and that tensor's size.
pub fn model_grad_check(model: &Model, features: &Tensor, tokens: &[u32], per_tensor: usize) -> (f64, String, usize) {
    let (graph, loss, bound) = model_loss(model, features, tokens, true);
    let grads = graph.backward(loss).unwrap();
    let mut probe = Model::from_params(model.config.clone(), model.params.clone()).unwrap();
    let value = |m: &Model| {
        let (g, l, _) = model_loss(m, features, tokens, false);
        g.value(l).data()[0]
    };
    let mut worst = (0.0, String::new(), 0);
    for (name, v) in &bound {
        let n = model.params.get(name).unwrap().len();
        let analytic = grads.get(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        let stride = (n / per_tensor).max(1);
        let (mut a, mut num) = (Vec::new(), Vec::new());
        for i in (0..n).step_by(stride).take(per_tensor) {
            let x = probe.params.get(name).unwrap().data()[i];
            probe.params.data_mut(name).unwrap()[i] = x + FD_STEP;
            let up = value(&probe);
            probe.params.data_mut(name).unwrap()[i] = x - FD_STEP;
            let down = value(&probe);
            probe.params.data_mut(name).unwrap()[i] = x;
            a.push(analytic[i]);
            num.push((up - down) / (2.0 * FD_STEP));
        }
        let e = rel_error(&a, &num, FD_FLOOR);
        if e > worst.0 {
            worst = (e, name.clone(), n);
        }
    }
    worst
}

/// Minimal number of single-token insertions, deletions and substitutions
/// between strings, by breadth-first search over the graph of all strings
/// on `alphabet` no longer than `max_len`. Independent of any alignment
/// table.
pub struct EditOracle {
    strings: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
    adjacent: Vec<Vec<usize>>,
}

impl EditOracle {
    pub fn new(alphabet: &[u32], max_len: usize) -> Self {
        let mut strings = vec![Vec::new()];
        let mut frontier: Vec<Vec<u32>> = vec![Vec::new()];
        for _ in 0..max_len {
            let next: Vec<Vec<u32>> = frontier
                .iter()
                .flat_map(|s| {
                    alphabet.iter().map(move |&c| {
                        let mut t = s.clone();
                        t.push(c);
                        t
                    })
                })
                .collect();
            strings.extend(next.iter().cloned());
            frontier = next;
        }
        let index: HashMap<Vec<u32>, usize> = strings.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let adjacent = strings
            .iter()
            .map(|s| {
                let mut out = Vec::new();
                let mut push = |t: Vec<u32>| {
                    if let Some(&i) = index.get(&t) {
                        out.push(i);
                    }
                };
                for i in 0..s.len() {
                    let mut t = s.clone();
                    t.remove(i);
                    push(t);
                    for &c in alphabet.iter().filter(|&&c| c != s[i]) {
                        let mut t = s.clone();
                        t[i] = c;
                        push(t);
                    }
                }
                for i in 0..=s.len() {
                    for &c in alphabet {
                        let mut t = s.clone();
                        t.insert(i, c);
                        push(t);
                    }
                }
                out
            })
            .collect();
        Self {
            strings,
            index,
            adjacent,
        }
    }

    pub fn strings(&self) -> &[Vec<u32>] {
        &self.strings
    }

    /// Distances from `source` to every string, indexed like `strings()`.
    pub fn distances_from(&self, source: &[u32]) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.strings.len()];
        let start = self.index[source];
        dist[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for &j in &self.adjacent[i] {
                if dist[j] == usize::MAX {
                    dist[j] = dist[i] + 1;
                    queue.push_back(j);
                }
            }
        }
        dist
    }
}

/// Weighted sum `Σ r·y` with a fixed random `r`, so that every output
/// element reaches the loss with a distinct coefficient.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let r = random_tensor(g.shape(y), seed);
    let r = g.constant(r);
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

/// Moves values away from zero so that relu kinks are not straddled.
fn off_zero(mut t: Tensor) -> Tensor {
    for v in t.data_mut() {
        *v += 0.1f64.copysign(*v);
    }
    t
}

/// Every differentiable graph op, each checked on random inputs. Returns
/// `(op, worst relative error)`.
pub fn op_gradient_errors() -> Vec<(&'static str, f64)> {
    let r = random_tensor;
    let mut out = Vec::new();
    let mut case = |name: &'static str, inputs: Vec<Tensor>, f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>| {
        out.push((name, grad_check(&inputs, |g, v| f(g, v))));
    };
    case("matmul", vec![r(&[3, 4], 1), r(&[4, 5], 2)], &|g, v| {
        let y = g.matmul(v[0], v[1])?;
        project(g, y, 3)
    });
    case("add", vec![r(&[3, 4], 4), r(&[3, 4], 5)], &|g, v| {
        let y = g.add(v[0], v[1])?;
        project(g, y, 6)
    });
    case("add_bias", vec![r(&[3, 4], 7), r(&[4], 8)], &|g, v| {
        let y = g.add_bias(v[0], v[1])?;
        project(g, y, 9)
    });
    case("mul", vec![r(&[2, 5], 10), r(&[2, 5], 11)], &|g, v| {
        let y = g.mul(v[0], v[1])?;
        project(g, y, 12)
    });
    case("scale", vec![r(&[6], 13)], &|g, v| {
        let y = g.scale(v[0], -1.7);
        project(g, y, 14)
    });
    case("relu", vec![off_zero(r(&[3, 5], 15))], &|g, v| {
        let y = g.relu(v[0]);
        project(g, y, 16)
    });
    case("softmax axis 1", vec![r(&[3, 5], 17)], &|g, v| {
        let y = g.softmax(v[0], 1)?;
        project(g, y, 18)
    });
    case("softmax axis 0", vec![r(&[4, 3], 19)], &|g, v| {
        let y = g.softmax(v[0], 0)?;
        project(g, y, 20)
    });
    case("softmax masked", vec![r(&[3, 4], 21)], &|g, v| {
        let mask = [false, true, false, false, false, false, true, true, false, false, false, true];
        let y = g.softmax_masked(v[0], 1, Some(&mask))?;
        project(g, y, 22)
    });
    case("layer_norm", vec![r(&[3, 6], 23), r(&[6], 24), r(&[6], 25)], &|g, v| {
        let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
        project(g, y, 26)
    });
    case("transpose", vec![r(&[3, 5], 27)], &|g, v| {
        let y = g.transpose(v[0])?;
        project(g, y, 28)
    });
    case("permute", vec![r(&[2, 3, 4], 29)], &|g, v| {
        let y = g.permute(v[0], &[2, 0, 1])?;
        project(g, y, 30)
    });
    case("slice_cols", vec![r(&[3, 6], 31)], &|g, v| {
        let y = g.slice_cols(v[0], 2, 3)?;
        project(g, y, 32)
    });
    case("reshape", vec![r(&[3, 4], 33)], &|g, v| {
        let y = g.reshape(v[0], vec![2, 6])?;
        project(g, y, 34)
    });
    case("concat", vec![r(&[2, 3], 35), r(&[1, 3], 36), r(&[2, 2], 37)], &|g, v| {
        let rows = g.concat(&[v[0], v[1]], 0)?;
        let cols = g.concat(&[v[0], v[2]], 1)?;
        let a = project(g, rows, 38)?;
        let b = project(g, cols, 39)?;
        g.add(a, b)
    });
    case("embedding", vec![r(&[5, 3], 40)], &|g, v| {
        let y = g.embedding(v[0], &[4, 0, 4, 2])?;
        project(g, y, 41)
    });
    case("gather", vec![r(&[6], 42)], &|g, v| {
        let idx: std::rc::Rc<[Option<usize>]> = vec![Some(5), None, Some(1), Some(1)].into();
        let y = g.gather(v[0], idx, vec![2, 2])?;
        project(g, y, 43)
    });
    case("sum", vec![r(&[4, 2], 44)], &|g, v| Ok(g.sum(v[0])));
    case("conv2d", vec![r(&[2, 5, 6], 45), r(&[3, 2, 3, 3], 46), r(&[3], 47)], &|g, v| {
        let y = g.conv2d(v[0], v[1], v[2], 1, 1)?;
        project(g, y, 48)
    });
    case("conv2d strided", vec![r(&[2, 7, 6], 49), r(&[2, 2, 3, 3], 50), r(&[2], 51)], &|g, v| {
        let y = g.conv2d(v[0], v[1], v[2], 2, 0)?;
        project(g, y, 52)
    });
    case("causal_conv1d", vec![r(&[5, 3], 53), r(&[3, 3, 4], 54), r(&[4], 55)], &|g, v| {
        let y = g.causal_conv1d(v[0], v[1], v[2])?;
        project(g, y, 56)
    });
    case("max_pool2d", vec![r(&[2, 4, 6], 57)], &|g, v| {
        let y = g.max_pool2d(v[0], 2, 2)?;
        project(g, y, 58)
    });
    case("mul_const", vec![r(&[2, 3], 59)], &|g, v| {
        let y = g.mul_const(v[0], vec![2.0, 0.0, 1.0, 2.0, 2.0, 0.0])?;
        project(g, y, 60)
    });
    case("cross_entropy", vec![r(&[4, 5], 61)], &|g, v| g.cross_entropy(v[0], &[1, 0, 3, 4], 0));
    out
}
