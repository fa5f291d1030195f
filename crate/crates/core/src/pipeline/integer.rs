//! Fixed-point matrix products on 8-bit codes.
//!
//! With `x = a_x + Δ_x·c_x` and `w = a_w + Δ_w·c_w`, a dot product over `K`
//! terms expands to
//!
//! ```text
//! Δ_x Δ_w Σ c_x c_w + a_w Δ_x Σ c_x + a_x Δ_w Σ c_w + K a_x a_w
//! ```
//!
//! The code sums are exact integers. The four real coefficients (divided by
//! the output step) are turned into fixed-point integers once, when the
//! [`Requantizer`] is built; the inner loop and the requantization are
//! integer-only.

use crate::error::{Error, Result};
use crate::quant::{QuantParams, QuantizedTensor};

/// Largest inner dimension whose `Σ c_x·c_w` is guaranteed to fit an `i32`
/// (`255² · 33025 < 2³¹`).
pub const MAX_INNER: usize = 33_025;

/// Fractional bits of the fixed-point coefficients.
const SHIFT: u32 = 48;
/// Coefficients beyond this magnitude are rejected so that the `i128`
/// combination can never overflow.
const COEFF_LIMIT: f64 = 1.0e27;

fn fixed(x: f64, what: &str) -> Result<i128> {
    let v = x * (1u64 << SHIFT) as f64;
    if !v.is_finite() || v.abs() > COEFF_LIMIT {
        return Err(Error::contract(format!("requantization coefficient {what} = {x} is out of range")));
    }
    Ok(v.round() as i128)
}

/// Output-grid coefficients for one product `lhs · rhs (· scale) + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct Requantizer {
    pub lhs: QuantParams,
    pub rhs: QuantParams,
    pub out: QuantParams,
    relu: bool,
    m_prod: i128,
    m_lhs: i128,
    m_rhs: i128,
    m_count: i128,
    /// `(b_j − a_out)/Δ_out` per output column; a single entry when there is
    /// no bias.
    bias: Vec<i128>,
}

impl Requantizer {
    pub fn new(
        lhs: QuantParams,
        rhs: QuantParams,
        out: QuantParams,
        scale: f64,
        bias: Option<&[f64]>,
        relu: bool,
    ) -> Result<Self> {
        let d = out.delta();
        let k = scale / d;
        let bias = match bias {
            Some(b) => b
                .iter()
                .map(|&v| fixed((v - out.a()) / d, "bias"))
                .collect::<Result<Vec<_>>>()?,
            None => vec![fixed(-out.a() / d, "offset")?],
        };
        Ok(Self {
            lhs,
            rhs,
            out,
            relu,
            m_prod: fixed(lhs.delta() * rhs.delta() * k, "product")?,
            m_lhs: fixed(rhs.a() * lhs.delta() * k, "lhs sum")?,
            m_rhs: fixed(lhs.a() * rhs.delta() * k, "rhs sum")?,
            m_count: fixed(lhs.a() * rhs.a() * k, "count")?,
            bias,
        })
    }

    fn code(&self, v: i128) -> u8 {
        let half = 1i128 << (SHIFT - 1);
        let c = ((v + half) >> SHIFT).clamp(0, self.out.max_code() as i128) as u8;
        if self.relu {
            c.max(self.out.quantize(0.0))
        } else {
            c
        }
    }

    /// `[m, k] · [k, n]` on codes. `valid` (length `m·k`) marks which lhs
    /// entries are real inputs; the others are zero padding and contribute
    /// nothing, not `a_x`.
    pub fn apply(&self, x: &[u8], m: usize, k: usize, w: &[u8], n: usize, valid: Option<&[bool]>) -> Result<Vec<u8>> {
        if k > MAX_INNER {
            return Err(Error::contract(format!(
                "inner dimension {k} exceeds {MAX_INNER}; the i32 accumulator could overflow"
            )));
        }
        if x.len() != m * k || w.len() != k * n || valid.is_some_and(|v| v.len() != m * k) {
            return Err(Error::shape("integer_linear", format!("[{m}, {k}] · [{k}, {n}]")));
        }
        if self.bias.len() != 1 && self.bias.len() != n {
            return Err(Error::shape("integer_linear", format!("{} bias entries for {n} columns", self.bias.len())));
        }
        let col_sums: Vec<i32> = (0..n).map(|j| (0..k).map(|t| w[t * n + j] as i32).sum()).collect();
        let mut out = Vec::with_capacity(m * n);
        let mut acc = vec![0i32; n];
        let mut wsum = vec![0i32; n];
        for i in 0..m {
            acc.iter_mut().for_each(|a| *a = 0);
            let row = &x[i * k..(i + 1) * k];
            for (t, &c) in row.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let c = c as i32;
                for (a, &wv) in acc.iter_mut().zip(&w[t * n..(t + 1) * n]) {
                    *a += c * wv as i32;
                }
            }
            let xsum: i32 = row.iter().map(|&c| c as i32).sum();
            let count = match valid {
                None => {
                    wsum.copy_from_slice(&col_sums);
                    k
                }
                Some(v) => {
                    let mask = &v[i * k..(i + 1) * k];
                    wsum.iter_mut().for_each(|s| *s = 0);
                    for (t, _) in mask.iter().enumerate().filter(|(_, &ok)| ok) {
                        for (s, &wv) in wsum.iter_mut().zip(&w[t * n..(t + 1) * n]) {
                            *s += wv as i32;
                        }
                    }
                    mask.iter().filter(|&&ok| ok).count()
                }
            };
            for j in 0..n {
                let b = self.bias[if self.bias.len() == 1 { 0 } else { j }];
                let v = self.m_prod * acc[j] as i128
                    + self.m_lhs * xsum as i128
                    + self.m_rhs * wsum[j] as i128
                    + self.m_count * count as i128
                    + b;
                out.push(self.code(v));
            }
        }
        Ok(out)
    }
}

/// `x · w` requantized onto `out`, both operands 2D.
pub fn integer_linear(x: &QuantizedTensor, w: &QuantizedTensor, out: QuantParams) -> Result<QuantizedTensor> {
    let (m, k) = match x.shape[..] {
        [m, k] => (m, k),
        _ => return Err(Error::shape("integer_linear", format!("lhs must be 2D, got {:?}", x.shape))),
    };
    let n = match w.shape[..] {
        [kw, n] if kw == k => n,
        _ => return Err(Error::shape("integer_linear", format!("{:?} · {:?}", x.shape, w.shape))),
    };
    let r = Requantizer::new(x.params, w.params, out, 1.0, None, false)?;
    QuantizedTensor::new(vec![m, n], r.apply(&x.codes, m, k, &w.codes, n, None)?, out)
}
