//! Dense row-major tensor over f64.
//!
//! This is deliberately minimal: contiguous storage, explicit shapes, and the
//! handful of ops the model code needs. Activations use the (batch, channel,
//! time) layout throughout; attention code transposes to (batch, time,
//! channel) at its boundary and back.

use crate::error::{Error, Result};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::shape(
                "from_vec",
                format!(
                    "shape {:?} wants {} elements, got {}",
                    shape,
                    expect,
                    data.len()
                ),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Uniform values in [lo, hi), deterministic under the given rng.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape, shape),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "zip_map",
                format!("shapes {:?} and {:?} differ", self.shape, other.shape),
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    /// self += s * other, shapes must match.
    pub fn add_scaled(&mut self, other: &Tensor, s: f64) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "add_scaled",
                format!("shapes {:?} and {:?} differ", self.shape, other.shape),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Error if any element is NaN or infinite. `op` names the producer.
    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        for (i, &v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::non_finite(
                    op,
                    format!("{} at flat index {} (shape {:?})", v, i, self.shape),
                ));
            }
        }
        Ok(())
    }

    /// Matrix product, batched over leading extents.
    ///
    /// `self` is (..., m, k) and `rhs` is (..., k, n) with identical leading
    /// extents, or rank-2 (k, n) which broadcasts over the batch. Output is
    /// (..., m, n).
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let ar = self.rank();
        let br = rhs.rank();
        if ar < 2 || br < 2 {
            return Err(Error::shape(
                "matmul",
                format!("ranks must be >= 2, got {:?} x {:?}", self.shape, rhs.shape),
            ));
        }
        let (m, k) = (self.shape[ar - 2], self.shape[ar - 1]);
        let (k2, n) = (rhs.shape[br - 2], rhs.shape[br - 1]);
        let lead_a = &self.shape[..ar - 2];
        let lead_b = &rhs.shape[..br - 2];
        let broadcast = br == 2;
        if k != k2 || (!broadcast && lead_a != lead_b) {
            return Err(Error::shape(
                "matmul",
                format!("incompatible shapes {:?} x {:?}", self.shape, rhs.shape),
            ));
        }
        let batches: usize = lead_a.iter().product();
        let mut out_shape = lead_a.to_vec();
        out_shape.push(m);
        out_shape.push(n);
        let mut out = vec![0.0; batches * m * n];
        for b in 0..batches {
            let a = &self.data[b * m * k..(b + 1) * m * k];
            let bb = if broadcast {
                &rhs.data[..]
            } else {
                &rhs.data[b * k * n..(b + 1) * k * n]
            };
            let c = &mut out[b * m * n..(b + 1) * m * n];
            matmul_2d(a, bb, c, m, k, n);
        }
        Ok(Tensor {
            shape: out_shape,
            data: out,
        })
    }

    /// Swap axes 1 and 2 of a rank-3 tensor: (a, b, c) -> (a, c, b).
    pub fn transpose_12(&self) -> Result<Tensor> {
        if self.rank() != 3 {
            return Err(Error::shape(
                "transpose_12",
                format!("want rank 3, got {:?}", self.shape),
            ));
        }
        let (d0, d1, d2) = (self.shape[0], self.shape[1], self.shape[2]);
        let mut out = vec![0.0; self.data.len()];
        for i in 0..d0 {
            for j in 0..d1 {
                let row = &self.data[(i * d1 + j) * d2..(i * d1 + j + 1) * d2];
                for (t, &v) in row.iter().enumerate() {
                    out[(i * d2 + t) * d1 + j] = v;
                }
            }
        }
        Ok(Tensor {
            shape: vec![d0, d2, d1],
            data: out,
        })
    }

    /// Plain 2-D transpose.
    pub fn transpose_2d(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::shape(
                "transpose_2d",
                format!("want rank 2, got {:?}", self.shape),
            ));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; self.data.len()];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    /// Concatenate along `axis`. All other extents must agree. Inputs with a
    /// zero extent along `axis` contribute nothing but still shape-check.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no tensors given".to_string()))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::shape(
                "concat",
                format!("axis {} out of range for rank {}", axis, rank),
            ));
        }
        let mut cat_dim = 0;
        for p in parts {
            if p.rank() != rank {
                return Err(Error::shape(
                    "concat",
                    format!("rank mismatch: {:?} vs {:?}", first.shape, p.shape),
                ));
            }
            for d in 0..rank {
                if d != axis && p.shape[d] != first.shape[d] {
                    return Err(Error::shape(
                        "concat",
                        format!(
                            "extent mismatch on axis {}: {:?} vs {:?}",
                            d, first.shape, p.shape
                        ),
                    ));
                }
            }
            cat_dim += p.shape[axis];
        }
        let mut out_shape = first.shape.clone();
        out_shape[axis] = cat_dim;

        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * cat_dim * inner];
        let mut offset = 0;
        for p in parts {
            let d = p.shape[axis];
            for o in 0..outer {
                let src = &p.data[o * d * inner..(o + 1) * d * inner];
                let dst_start = (o * cat_dim + offset) * inner;
                out[dst_start..dst_start + d * inner].copy_from_slice(src);
            }
            offset += d;
        }
        Ok(Tensor {
            shape: out_shape,
            data: out,
        })
    }

    /// Slice along `axis`, returning a contiguous copy of [start, start+len).
    pub fn slice_axis(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let rank = self.rank();
        if axis >= rank || start + len > self.shape[axis] {
            return Err(Error::shape(
                "slice_axis",
                format!(
                    "slice [{}, {}) on axis {} out of range for {:?}",
                    start,
                    start + len,
                    axis,
                    self.shape
                ),
            ));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let d = self.shape[axis];
        let mut out_shape = self.shape.clone();
        out_shape[axis] = len;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * d + start) * inner;
            out.extend_from_slice(&self.data[base..base + len * inner]);
        }
        Ok(Tensor {
            shape: out_shape,
            data: out,
        })
    }

    /// Largest absolute elementwise difference. Shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.zip_map(other, |a, b| (a - b).abs())
            .map(|d| d.data.iter().cloned().fold(0.0, f64::max))
    }
}

/// c += nothing; c is assumed zeroed. Row-major (m,k) x (k,n) -> (m,n).
/// The k-loop is outermost of the inner pair so rows of b stream linearly.
fn matmul_2d(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// Row-wise softmax over the last axis, with the usual max subtraction so
/// large logits do not overflow. Rows sum to 1 exactly up to rounding.
pub fn softmax_last_axis(x: &Tensor) -> Tensor {
    let rank = x.rank();
    assert!(rank >= 1, "softmax needs at least rank 1");
    let n = x.shape()[rank - 1];
    let rows = x.numel() / n.max(1);
    let mut out = vec![0.0; x.numel()];
    for r in 0..rows {
        let row = &x.data()[r * n..(r + 1) * n];
        let o = &mut out[r * n..(r + 1) * n];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (ov, &v) in o.iter_mut().zip(row) {
            let e = (v - m).exp();
            *ov = e;
            z += e;
        }
        for ov in o.iter_mut() {
            *ov /= z;
        }
    }
    Tensor {
        shape: x.shape().to_vec(),
        data: out,
    }
}

/// Backward of `softmax_last_axis`: given probabilities p and upstream grad
/// dp, returns dlogits = p * (dp - sum(dp * p)) per row.
pub fn softmax_backward(probs: &Tensor, grad: &Tensor) -> Result<Tensor> {
    if probs.shape() != grad.shape() {
        return Err(Error::shape(
            "softmax_backward",
            format!("shapes {:?} and {:?} differ", probs.shape(), grad.shape()),
        ));
    }
    let rank = probs.rank();
    let n = probs.shape()[rank - 1];
    let rows = probs.numel() / n.max(1);
    let mut out = vec![0.0; probs.numel()];
    for r in 0..rows {
        let p = &probs.data()[r * n..(r + 1) * n];
        let g = &grad.data()[r * n..(r + 1) * n];
        let dot: f64 = p.iter().zip(g).map(|(&pv, &gv)| pv * gv).sum();
        let o = &mut out[r * n..(r + 1) * n];
        for ((ov, &pv), &gv) in o.iter_mut().zip(p).zip(g) {
            *ov = pv * (gv - dot);
        }
    }
    Ok(Tensor {
        shape: probs.shape().to_vec(),
        data: out,
    })
}
