use crate::error::Result;
use crate::numcore::{Graph, Tensor};

/// Mean NLL of `targets` under `logits[L, V]`, skipping `pad_id` rows.
pub fn cross_entropy(logits: &Tensor, targets: &[u32], pad_id: u32) -> Result<f64> {
    let mut g = Graph::inference();
    let x = g.constant(logits.clone());
    let t: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
    let l = g.cross_entropy(x, &t, pad_id as usize)?;
    Ok(g.value(l).data()[0])
}

/// Number of non-pad rows whose argmax equals the target, and the number
/// of non-pad rows.
pub fn frame_hits(logits: &Tensor, targets: &[u32], pad_id: u32) -> (usize, usize) {
    let pred = logits.argmax_rows();
    let mut hits = 0;
    let mut total = 0;
    for (p, &t) in pred.iter().zip(targets) {
        if t == pad_id {
            continue;
        }
        total += 1;
        hits += (*p == t as usize) as usize;
    }
    (hits, total)
}

/// Fraction of non-pad positions predicted correctly; 0 when all are pad.
pub fn frame_accuracy(logits: &Tensor, targets: &[u32], pad_id: u32) -> f64 {
    let (h, n) = frame_hits(logits, targets, pad_id);
    if n == 0 {
        0.0
    } else {
        h as f64 / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onehot(rows: &[usize], v: usize) -> Tensor {
        let data = rows
            .iter()
            .flat_map(|&r| (0..v).map(move |c| if c == r { 10.0 } else { 0.0 }))
            .collect();
        Tensor::new(vec![rows.len(), v], data).unwrap()
    }

    #[test]
    fn accuracy_cases() {
        let l = onehot(&[1, 2, 3, 1, 0], 4);
        assert_eq!(frame_accuracy(&l, &[1, 2, 3, 1, 3], 0), 0.8);
        assert_eq!(frame_accuracy(&l, &[2, 3, 1, 2, 1], 0), 0.0);
        // three of four right, one pad ignored
        assert_eq!(frame_accuracy(&l, &[1, 2, 3, 2, 0], 0), 0.75);
    }

    #[test]
    fn loss_cases() {
        let u = Tensor::zeros(&[1, 4]);
        assert!((cross_entropy(&u, &[2], 0).unwrap() - 4f64.ln()).abs() < 1e-12);
        let l = Tensor::from_rows(&[vec![2.0, 0.0]]).unwrap();
        assert!((cross_entropy(&l, &[0], 9).unwrap() - 0.126_928_011).abs() < 1e-8);
        assert!(cross_entropy(&u, &[0], 0).is_err());
    }
}
