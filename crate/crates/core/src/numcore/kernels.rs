//! Slice-level kernels shared by the autodiff graph, the plain tensor ops and
//! the integer inference path.

/// `C[m×n] = A[m×k] · B[k×n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let brow = &b[t * n..(t + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `C[k×n] = Aᵀ · B` with `A[m×k]`, `B[m×n]`.
pub fn matmul_at_b(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[t * n..(t + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `C[m×k] = A · Bᵀ` with `A[m×n]`, `B[k×n]`.
pub fn matmul_a_bt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for t in 0..k {
            let brow = &b[t * n..(t + 1) * n];
            c[i * k + t] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// Splits a shape around `axis` into (outer, extent, inner) strides.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Softmax along the middle extent of an (outer, n, inner) layout.
///
/// Masked entries (`mask[i] == true`) get probability zero and take no part in
/// the max or the normaliser. A fully masked lane is all zeros.
pub fn softmax(
    x: &[f64],
    outer: usize,
    n: usize,
    inner: usize,
    mask: Option<&[bool]>,
) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    let live = |i: usize| mask.is_none_or(|m| !m[i]);
    for o in 0..outer {
        for q in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + q;
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                if live(idx(j)) {
                    max = max.max(x[idx(j)]);
                }
            }
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut sum = 0.0;
            for j in 0..n {
                let i = idx(j);
                if live(i) {
                    let e = (x[i] - max).exp();
                    y[i] = e;
                    sum += e;
                }
            }
            for j in 0..n {
                y[idx(j)] /= sum;
            }
        }
    }
    y
}

/// Row-wise layer normalisation. Returns (output, normalised input, 1/σ per row).
pub fn layer_norm(
    x: &[f64],
    cols: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = if cols == 0 { 0 } else { x.len() / cols };
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let rs = 1.0 / (var + eps).sqrt();
        rstd[r] = rs;
        for c in 0..cols {
            let h = (row[c] - mean) * rs;
            xhat[r * cols + c] = h;
            y[r * cols + c] = gamma[c] * h + beta[c];
        }
    }
    (y, xhat, rstd)
}

/// Output extent of a sliding window.
pub fn window_out(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if kernel == 0 || stride == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Geometry of a 2D cross-correlation over a `[C, H, W]` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dGeometry {
    pub fn out_hw(&self) -> Option<(usize, usize)> {
        Some((
            window_out(self.height, self.kernel, self.stride, self.pad)?,
            window_out(self.width, self.kernel, self.stride, self.pad)?,
        ))
    }

    /// Columns of the unrolled patch matrix: `C · k · k`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Source index for every entry of the `[Ho·Wo, C·k·k]` patch matrix;
    /// `None` marks zero padding.
    pub fn im2col_index(&self) -> Option<Vec<Option<usize>>> {
        let (ho, wo) = self.out_hw()?;
        let (c_in, h, w, k) = (self.in_channels, self.height, self.width, self.kernel);
        let mut idx = Vec::with_capacity(ho * wo * self.patch_len());
        for oy in 0..ho {
            for ox in 0..wo {
                for c in 0..c_in {
                    for ky in 0..k {
                        for kx in 0..k {
                            let y = (oy * self.stride + ky) as isize - self.pad as isize;
                            let x = (ox * self.stride + kx) as isize - self.pad as isize;
                            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                                idx.push(None);
                            } else {
                                idx.push(Some((c * h + y as usize) * w + x as usize));
                            }
                        }
                    }
                }
            }
        }
        Some(idx)
    }
}

/// Source index for every entry of the `[T, width·d]` window matrix of a
/// causal 1D convolution over `[T, d]`. Block `j` of row `t` reads step
/// `t − (width − 1) + j`; steps before 0 are zero padding.
pub fn causal_index(steps: usize, dim: usize, width: usize) -> Vec<Option<usize>> {
    let mut idx = Vec::with_capacity(steps * width * dim);
    for t in 0..steps {
        for j in 0..width {
            let src = t as isize - (width as isize - 1) + j as isize;
            for c in 0..dim {
                idx.push(if src < 0 {
                    None
                } else {
                    Some(src as usize * dim + c)
                });
            }
        }
    }
    idx
}

/// Gathers `x` through an index map, writing `zero` for padding.
pub fn gather<T: Copy>(x: &[T], index: &[Option<usize>], zero: T) -> Vec<T> {
    index.iter().map(|i| i.map_or(zero, |j| x[j])).collect()
}

/// Max pooling over `[C, H, W]`. Returns output and the flat argmax source of
/// each output (first occurrence on ties).
pub fn max_pool2d<T: Copy + PartialOrd>(
    x: &[T],
    channels: usize,
    height: usize,
    width: usize,
    window: usize,
    stride: usize,
) -> Option<(Vec<T>, Vec<usize>, usize, usize)> {
    let ho = window_out(height, window, stride, 0)?;
    let wo = window_out(width, window, stride, 0)?;
    let mut out = Vec::with_capacity(channels * ho * wo);
    let mut arg = Vec::with_capacity(channels * ho * wo);
    for c in 0..channels {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = (c * height + oy * stride) * width + ox * stride;
                for ky in 0..window {
                    for kx in 0..window {
                        let i = (c * height + oy * stride + ky) * width + ox * stride + kx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Some((out, arg, ho, wo))
}

/// Index map that transposes a `[rows, cols]` matrix.
pub fn transpose_index(rows: usize, cols: usize) -> Vec<Option<usize>> {
    let mut idx = Vec::with_capacity(rows * cols);
    for c in 0..cols {
        for r in 0..rows {
            idx.push(Some(r * cols + c));
        }
    }
    idx
}

/// Index map for an axis permutation: output axis `i` is input axis `perm[i]`.
pub fn permute_index(shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<Option<usize>>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let total: usize = shape.iter().product();
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    for _ in 0..total {
        let src: usize = (0..rank).map(|i| counter[i] * in_strides[perm[i]]).sum();
        idx.push(Some(src));
        for i in (0..rank).rev() {
            counter[i] += 1;
            if counter[i] < out_shape[i] {
                break;
            }
            counter[i] = 0;
        }
    }
    (out_shape, idx)
}

/// Index map selecting columns `[start, start + len)` of a `[rows, cols]` matrix.
pub fn slice_cols_index(rows: usize, cols: usize, start: usize, len: usize) -> Vec<Option<usize>> {
    let mut idx = Vec::with_capacity(rows * len);
    for r in 0..rows {
        for c in start..start + len {
            idx.push(Some(r * cols + c));
        }
    }
    idx
}
