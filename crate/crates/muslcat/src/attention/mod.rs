//! Multi-head self-attention over (batch, length, channels) sequences, with
//! optional relative position logits, plus the attention-augmented
//! convolution block built from it.
//!
//! Reductions over the key axis (softmax normalizer and the value mix) run
//! in a canonical order sorted by logit value, so attention without the
//! positional term commutes with time permutations bit-for-bit, not just
//! approximately. Ties between equal logits with different values would make
//! that order ambiguous; continuous inputs never produce them.

pub mod aac;
pub mod relative;

pub use aac::{aac_param_estimate, AacBlock};
pub use relative::{
    embed_alloc_floats, relative_logits_explicit, relative_logits_skewed,
    reset_embed_alloc_counter,
};

use crate::error::{Error, Result};
use crate::layers::{join, HasParams, Param};
use crate::tensor::{softmax_backward, Tensor};
use rand::Rng;

/// Widest relative distance with its own embedding row; larger offsets share
/// the boundary rows.
pub const DEFAULT_D_MAX: usize = 512;

/// Projections and embeddings for multi-head attention. All projections are
/// bias-free; relative embeddings start at zero so a fresh layer has no
/// positional preference.
#[derive(Debug, Clone)]
pub struct MhaParams {
    pub n_h: usize,
    pub d_max: usize,
    pub w_q: Param, // (c_in, d_k)
    pub w_k: Param, // (c_in, d_k)
    pub w_v: Param, // (c_in, d_v)
    pub w_o: Param, // (d_v, d_v)
    pub rel: Param, // (n_h, 2*d_max+1, d_k/n_h)
}

impl MhaParams {
    pub fn new(
        c_in: usize,
        d_k: usize,
        d_v: usize,
        n_h: usize,
        d_max: usize,
        rng: &mut impl Rng,
    ) -> Result<MhaParams> {
        if c_in == 0 || d_k == 0 || d_v == 0 || n_h == 0 {
            return Err(Error::Config(format!(
                "mha: zero extent in (c_in {c_in}, d_k {d_k}, d_v {d_v}, heads {n_h})"
            )));
        }
        if !d_k.is_multiple_of(n_h) || !d_v.is_multiple_of(n_h) {
            return Err(Error::Config(format!(
                "mha: d_k {d_k} and d_v {d_v} must both be divisible by {n_h} heads"
            )));
        }
        let lim_in = (6.0 / c_in as f64).sqrt();
        let lim_o = (6.0 / d_v as f64).sqrt();
        Ok(MhaParams {
            n_h,
            d_max,
            w_q: Param::new(Tensor::uniform(&[c_in, d_k], -lim_in, lim_in, rng)),
            w_k: Param::new(Tensor::uniform(&[c_in, d_k], -lim_in, lim_in, rng)),
            w_v: Param::new(Tensor::uniform(&[c_in, d_v], -lim_in, lim_in, rng)),
            w_o: Param::new(Tensor::uniform(&[d_v, d_v], -lim_o, lim_o, rng)),
            rel: Param::new(Tensor::zeros(&[n_h, 2 * d_max + 1, d_k / n_h])),
        })
    }

    pub fn c_in(&self) -> usize {
        self.w_q.value.dim(0)
    }

    pub fn d_k(&self) -> usize {
        self.w_q.value.dim(1)
    }

    pub fn d_v(&self) -> usize {
        self.w_v.value.dim(1)
    }

    /// Per-head query/key depth, the d in the 1/sqrt(d) logit scaling.
    pub fn d_head(&self) -> usize {
        self.d_k() / self.n_h
    }
}

impl HasParams for MhaParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "w_q"), &self.w_q);
        f(&join(prefix, "w_k"), &self.w_k);
        f(&join(prefix, "w_v"), &self.w_v);
        f(&join(prefix, "w_o"), &self.w_o);
        f(&join(prefix, "rel"), &self.rel);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "w_q"), &mut self.w_q);
        f(&join(prefix, "w_k"), &mut self.w_k);
        f(&join(prefix, "w_v"), &mut self.w_v);
        f(&join(prefix, "w_o"), &mut self.w_o);
        f(&join(prefix, "rel"), &mut self.rel);
    }
}

/// (B, L, N_h*d) -> (B, N_h, L, d)
fn split_heads(x: &Tensor, n_h: usize) -> Result<Tensor> {
    let (b, l, depth) = (x.dim(0), x.dim(1), x.dim(2));
    if depth % n_h != 0 {
        return Err(Error::shape(
            "split heads",
            format!("depth {depth} not divisible by {n_h} heads"),
        ));
    }
    let d = depth / n_h;
    let mut y = Tensor::zeros(&[b, n_h, l, d]);
    let xd = x.data();
    let yd = y.data_mut();
    for bi in 0..b {
        for li in 0..l {
            for h in 0..n_h {
                let src = (bi * l + li) * depth + h * d;
                let dst = ((bi * n_h + h) * l + li) * d;
                yd[dst..dst + d].copy_from_slice(&xd[src..src + d]);
            }
        }
    }
    Ok(y)
}

/// (B, N_h, L, d) -> (B, L, N_h*d)
fn merge_heads(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(Error::shape("merge heads", format!("got {:?}", x.shape())));
    }
    let (b, n_h, l, d) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let mut y = Tensor::zeros(&[b, l, n_h * d]);
    let xd = x.data();
    let yd = y.data_mut();
    for bi in 0..b {
        for h in 0..n_h {
            for li in 0..l {
                let src = ((bi * n_h + h) * l + li) * d;
                let dst = (bi * l + li) * (n_h * d) + h * d;
                yd[dst..dst + d].copy_from_slice(&xd[src..src + d]);
            }
        }
    }
    Ok(y)
}

/// Softmax over the key axis and the attention-weighted value mix, both
/// reduced in logit-sorted order (see module docs).
fn softmax_mix_canonical(logits: &Tensor, v: &Tensor) -> (Tensor, Tensor) {
    let (bh, l) = (logits.dim(0), logits.dim(1));
    let d_vh = v.dim(2);
    let mut attn = Tensor::zeros(&[bh, l, l]);
    let mut out = Tensor::zeros(&[bh, l, d_vh]);
    let ld = logits.data();
    let vd = v.data();
    let ad = attn.data_mut();
    let od = out.data_mut();
    let mut order: Vec<u32> = Vec::with_capacity(l);
    for g in 0..bh {
        let v_block = &vd[g * l * d_vh..(g + 1) * l * d_vh];
        for i in 0..l {
            let row = &ld[(g * l + i) * l..][..l];
            order.clear();
            order.extend(0..l as u32);
            order.sort_by(|&a, &b| row[a as usize].total_cmp(&row[b as usize]));
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let p_row = &mut ad[(g * l + i) * l..(g * l + i) * l + l];
            for (pv, &lv) in p_row.iter_mut().zip(row) {
                *pv = (lv - m).exp();
            }
            let mut denom = 0.0;
            for &j in &order {
                denom += p_row[j as usize];
            }
            for pv in p_row.iter_mut() {
                *pv /= denom;
            }
            let out_row = &mut od[(g * l + i) * d_vh..(g * l + i + 1) * d_vh];
            for (d, ov) in out_row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for &j in &order {
                    acc += p_row[j as usize] * v_block[j as usize * d_vh + d];
                }
                *ov = acc;
            }
        }
    }
    (attn, out)
}

struct MhaCache {
    x2d: Tensor,     // (B*L, C_in)
    q_h: Tensor,     // (B, N_h, L, d_h)
    k3: Tensor,      // (B*N_h, L, d_h)
    v3: Tensor,      // (B*N_h, L, d_vh)
    attn: Tensor,    // (B*N_h, L, L)
    merged2d: Tensor, // (B*L, d_v), pre-output-mix
    b: usize,
    l: usize,
}

fn forward_core(
    x: &Tensor,
    p: &MhaParams,
    relative: bool,
    want_cache: bool,
) -> Result<(Tensor, Option<MhaCache>)> {
    if x.rank() != 3 || x.dim(2) != p.c_in() {
        return Err(Error::shape(
            "mha",
            format!("want (batch, length, {}), got {:?}", p.c_in(), x.shape()),
        ));
    }
    let (b, l) = (x.dim(0), x.dim(1));
    if b == 0 || l == 0 {
        return Err(Error::shape("mha", format!("empty input {:?}", x.shape())));
    }
    let (n_h, d_k, d_v) = (p.n_h, p.d_k(), p.d_v());
    let (d_h, d_vh) = (d_k / n_h, d_v / n_h);

    let x2d = x.reshape(&[b * l, p.c_in()])?;
    let q = x2d.matmul(&p.w_q.value)?;
    let k = x2d.matmul(&p.w_k.value)?;
    let v = x2d.matmul(&p.w_v.value)?;
    let q_h = split_heads(&q.reshape(&[b, l, d_k])?, n_h)?;
    let k_h = split_heads(&k.reshape(&[b, l, d_k])?, n_h)?;
    let v_h = split_heads(&v.reshape(&[b, l, d_v])?, n_h)?;
    let q3 = q_h.reshape(&[b * n_h, l, d_h])?;
    let k3 = k_h.reshape(&[b * n_h, l, d_h])?;
    let v3 = v_h.reshape(&[b * n_h, l, d_vh])?;

    let mut logits = q3.matmul(&k3.transpose_12()?)?;
    if relative {
        let s = relative_logits_skewed(&q_h, &p.rel.value)?;
        logits.add_scaled(&s.reshape(&[b * n_h, l, l])?, 1.0)?;
    }
    let logits = logits.scale(1.0 / (d_h as f64).sqrt());
    logits.check_finite("mha logits")?;

    let (attn, mixed) = softmax_mix_canonical(&logits, &v3);
    let merged2d = merge_heads(&mixed.reshape(&[b, n_h, l, d_vh])?)?.reshape(&[b * l, d_v])?;
    let y = merged2d.matmul(&p.w_o.value)?.reshape(&[b, l, d_v])?;

    let cache = if want_cache {
        Some(MhaCache { x2d, q_h, k3, v3, attn, merged2d, b, l })
    } else {
        None
    };
    Ok((y, cache))
}

/// Attention with no positional term: per head softmax(QK^T/sqrt(d)) V,
/// heads concatenated, then the output mix.
pub fn mha_absolute_free(x: &Tensor, p: &MhaParams) -> Result<Tensor> {
    forward_core(x, p, false, false).map(|(y, _)| y)
}

/// Attention with relative position logits added before the softmax, via the
/// memory-efficient skewed path.
pub fn mha_relative(x: &Tensor, p: &MhaParams) -> Result<Tensor> {
    forward_core(x, p, true, false).map(|(y, _)| y)
}

/// Trainable attention layer wrapping [`MhaParams`] with cached activations
/// for the backward pass.
pub struct Mha {
    pub p: MhaParams,
    pub relative: bool,
    cache: Option<MhaCache>,
}

impl Clone for Mha {
    fn clone(&self) -> Mha {
        Mha { p: self.p.clone(), relative: self.relative, cache: None }
    }
}

impl std::fmt::Debug for Mha {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mha")
            .field("n_h", &self.p.n_h)
            .field("d_k", &self.p.d_k())
            .field("d_v", &self.p.d_v())
            .field("relative", &self.relative)
            .finish()
    }
}

impl Mha {
    pub fn new(
        c_in: usize,
        d_k: usize,
        d_v: usize,
        n_h: usize,
        d_max: usize,
        relative: bool,
        rng: &mut impl Rng,
    ) -> Result<Mha> {
        Ok(Mha { p: MhaParams::new(c_in, d_k, d_v, n_h, d_max, rng)?, relative, cache: None })
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        forward_core(x, &self.p, self.relative, false).map(|(y, _)| y)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, cache) = forward_core(x, &self.p, self.relative, true)?;
        self.cache = cache;
        Ok(y)
    }

    /// Softmax weights from the last forward_train, shaped (B*N_h, L, L).
    pub fn attention_weights(&self) -> Option<&Tensor> {
        self.cache.as_ref().map(|c| &c.attn)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Train("mha backward without forward_train".into()))?;
        let p = &mut self.p;
        let (b, l) = (cache.b, cache.l);
        let (n_h, d_k, d_v) = (p.n_h, p.d_k(), p.d_v());
        let (d_h, d_vh) = (d_k / n_h, d_v / n_h);
        if grad_out.shape() != [b, l, d_v] {
            return Err(Error::shape(
                "mha backward",
                format!("grad shape {:?} vs ({b}, {l}, {d_v})", grad_out.shape()),
            ));
        }

        let dy2d = grad_out.reshape(&[b * l, d_v])?;
        p.w_o
            .grad
            .add_scaled(&cache.merged2d.transpose_2d()?.matmul(&dy2d)?, 1.0)?;
        let dmerged = dy2d.matmul(&p.w_o.value.transpose_2d()?)?;
        let do3 = split_heads(&dmerged.reshape(&[b, l, d_v])?, n_h)?
            .reshape(&[b * n_h, l, d_vh])?;

        let dattn = do3.matmul(&cache.v3.transpose_12()?)?;
        let dv3 = cache.attn.transpose_12()?.matmul(&do3)?;
        let dlogits = softmax_backward(&cache.attn, &dattn)?;
        let draw = dlogits.scale(1.0 / (d_h as f64).sqrt());

        let q3 = cache.q_h.reshape(&[b * n_h, l, d_h])?;
        let mut dq3 = draw.matmul(&cache.k3)?;
        let dk3 = draw.transpose_12()?.matmul(&q3)?;
        if self.relative {
            let (dq_rel, de) = relative::relative_logits_skewed_backward(
                &cache.q_h,
                &p.rel.value,
                &draw.reshape(&[b, n_h, l, l])?,
            )?;
            p.rel.grad.add_scaled(&de, 1.0)?;
            dq3.add_scaled(&dq_rel.reshape(&[b * n_h, l, d_h])?, 1.0)?;
        }

        let dq2d = merge_heads(&dq3.reshape(&[b, n_h, l, d_h])?)?.reshape(&[b * l, d_k])?;
        let dk2d = merge_heads(&dk3.reshape(&[b, n_h, l, d_h])?)?.reshape(&[b * l, d_k])?;
        let dv2d = merge_heads(&dv3.reshape(&[b, n_h, l, d_vh])?)?.reshape(&[b * l, d_v])?;

        let x2dt = cache.x2d.transpose_2d()?;
        p.w_q.grad.add_scaled(&x2dt.matmul(&dq2d)?, 1.0)?;
        p.w_k.grad.add_scaled(&x2dt.matmul(&dk2d)?, 1.0)?;
        p.w_v.grad.add_scaled(&x2dt.matmul(&dv2d)?, 1.0)?;

        let mut dx2d = dq2d.matmul(&p.w_q.value.transpose_2d()?)?;
        dx2d.add_scaled(&dk2d.matmul(&p.w_k.value.transpose_2d()?)?, 1.0)?;
        dx2d.add_scaled(&dv2d.matmul(&p.w_v.value.transpose_2d()?)?, 1.0)?;
        dx2d.reshape(&[b, l, p.c_in()])
    }
}

impl HasParams for Mha {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.p.visit(prefix, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.p.visit_mut(prefix, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_check, FnOp, DEFAULT_EPS, DEFAULT_TOL};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn length_one_reduces_to_value_path() {
        let mut r = rng();
        let p = MhaParams::new(3, 3, 3, 1, 4, &mut r).unwrap();
        let x = Tensor::uniform(&[2, 1, 3], -1.0, 1.0, &mut r);
        let y = mha_absolute_free(&x, &p).unwrap();
        let want = x
            .reshape(&[2, 3])
            .unwrap()
            .matmul(&p.w_v.value)
            .unwrap()
            .matmul(&p.w_o.value)
            .unwrap();
        assert_eq!(y.data(), want.data());
    }

    #[test]
    fn two_token_single_head_matches_scalar_computation() {
        let mut r = rng();
        let mut p = MhaParams::new(1, 1, 1, 1, 2, &mut r).unwrap();
        let (wq, wk, wv, wo) = (0.7, -1.3, 0.9, 1.1);
        p.w_q.value = Tensor::from_vec(&[1, 1], vec![wq]).unwrap();
        p.w_k.value = Tensor::from_vec(&[1, 1], vec![wk]).unwrap();
        p.w_v.value = Tensor::from_vec(&[1, 1], vec![wv]).unwrap();
        p.w_o.value = Tensor::from_vec(&[1, 1], vec![wo]).unwrap();
        let (a, b) = (0.4, -0.8);
        let x = Tensor::from_vec(&[1, 2, 1], vec![a, b]).unwrap();
        let y = mha_absolute_free(&x, &p).unwrap();

        let scalar = |q: f64| {
            let (la, lb) = (q * a * wk, q * b * wk);
            let m = la.max(lb);
            let (ea, eb) = ((la - m).exp(), (lb - m).exp());
            let z = ea + eb;
            ((ea / z) * a * wv + (eb / z) * b * wv) * wo
        };
        assert!((y.data()[0] - scalar(a * wq)).abs() < 1e-12);
        assert!((y.data()[1] - scalar(b * wq)).abs() < 1e-12);
    }

    #[test]
    fn absolute_attention_commutes_with_permutations_exactly() {
        let mut r = rng();
        let p = MhaParams::new(5, 6, 4, 2, 8, &mut r).unwrap();
        let (b, l, c) = (2, 9, 5);
        let x = Tensor::uniform(&[b, l, c], -1.0, 1.0, &mut r);
        let y = mha_absolute_free(&x, &p).unwrap();
        for _ in 0..20 {
            let mut perm: Vec<usize> = (0..l).collect();
            for i in (1..l).rev() {
                let j = rand::Rng::random_range(&mut r, 0..=i);
                perm.swap(i, j);
            }
            let mut px = Tensor::zeros(&[b, l, c]);
            for bi in 0..b {
                for (li, &src_row) in perm.iter().enumerate() {
                    let src = (bi * l + src_row) * c;
                    let dst = (bi * l + li) * c;
                    px.data_mut()[dst..dst + c]
                        .copy_from_slice(&x.data()[src..src + c]);
                }
            }
            let py = mha_absolute_free(&px, &p).unwrap();
            let d_v = p.d_v();
            for bi in 0..b {
                for (li, &src_row) in perm.iter().enumerate() {
                    let got = &py.data()[(bi * l + li) * d_v..][..d_v];
                    let want = &y.data()[(bi * l + src_row) * d_v..][..d_v];
                    assert_eq!(got, want, "row {li} under permutation");
                }
            }
        }
    }

    #[test]
    fn zero_embeddings_bit_equal_absolute() {
        let mut r = rng();
        // rel starts at zeros, so a fresh layer's relative path must match.
        let p = MhaParams::new(4, 6, 6, 3, 5, &mut r).unwrap();
        let x = Tensor::uniform(&[2, 7, 4], -1.0, 1.0, &mut r);
        let rel = mha_relative(&x, &p).unwrap();
        let abs = mha_absolute_free(&x, &p).unwrap();
        assert_eq!(rel.data(), abs.data());
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut r = rng();
        let mut mha = Mha::new(4, 8, 8, 2, 6, true, &mut r).unwrap();
        mha.p.rel.value = Tensor::uniform(&[2, 13, 4], -0.5, 0.5, &mut r);
        let x = Tensor::uniform(&[3, 7, 4], -1.0, 1.0, &mut r);
        mha.forward_train(&x).unwrap();
        let attn = mha.attention_weights().unwrap();
        for row in attn.data().chunks(7) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-10, "row sum {s}");
        }
    }

    #[test]
    fn toeplitz_odds_ratios_shift_along_diagonals() {
        // With the key projection zeroed and all input rows equal, logits are
        // exactly Toeplitz, so odds ratios between columns at a fixed offset
        // repeat one row down. This survives the softmax normalizer even
        // though the rows themselves differ near the edges.
        let mut r = rng();
        let mut mha = Mha::new(3, 4, 4, 2, 3, true, &mut r).unwrap();
        mha.p.w_k.value.fill(0.0);
        mha.p.rel.value = Tensor::uniform(&[2, 7, 2], -1.0, 1.0, &mut r);
        let l = 8;
        let row = Tensor::uniform(&[3], -1.0, 1.0, &mut r);
        let mut x = Tensor::zeros(&[1, l, 3]);
        for li in 0..l {
            x.data_mut()[li * 3..(li + 1) * 3].copy_from_slice(row.data());
        }
        mha.forward_train(&x).unwrap();
        let attn = mha.attention_weights().unwrap();
        for h in 0..2 {
            for i in 0..l - 1 {
                for j in 0..l - 1 {
                    for j2 in 0..l - 1 {
                        let a = attn.data()[(h * l + i) * l + j];
                        let b = attn.data()[(h * l + i) * l + j2];
                        let a2 = attn.data()[(h * l + i + 1) * l + j + 1];
                        let b2 = attn.data()[(h * l + i + 1) * l + j2 + 1];
                        let (r1, r2) = (a / b, a2 / b2);
                        assert!(
                            ((r1 - r2) / r1.abs().max(1e-8)).abs() < 1e-12,
                            "odds ratio drift at h{h} i{i} j{j} j'{j2}: {r1} vs {r2}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn full_mha_relative_gradcheck() {
        let mut r = rng();
        let mut p0 = MhaParams::new(4, 4, 4, 2, 3, &mut r).unwrap();
        p0.rel.value = Tensor::uniform(&[2, 7, 2], -0.5, 0.5, &mut r);
        let x0 = Tensor::uniform(&[2, 6, 4], -1.0, 1.0, &mut r);

        // Input gradient.
        let mut op = FnOp::new(
            "mha.input",
            {
                let p = p0.clone();
                move |x: &Tensor| mha_relative(x, &p)
            },
            {
                let p = p0.clone();
                move |x: &Tensor, g: &Tensor| {
                    let mut m = Mha { p: p.clone(), relative: true, cache: None };
                    m.forward_train(x)?;
                    m.backward(g)
                }
            },
        );
        let rep = finite_diff_check(&mut op, &x0, DEFAULT_EPS, DEFAULT_TOL);
        assert!(rep.passed, "{rep}");

        // Every parameter tensor, via a value-swapping wrapper.
        let names = ["w_q", "w_k", "w_v", "w_o", "rel"];
        for name in names {
            let set = |p: &mut MhaParams, t: &Tensor| match name {
                "w_q" => p.w_q.value = t.clone(),
                "w_k" => p.w_k.value = t.clone(),
                "w_v" => p.w_v.value = t.clone(),
                "w_o" => p.w_o.value = t.clone(),
                _ => p.rel.value = t.clone(),
            };
            let get_grad = |p: &MhaParams| match name {
                "w_q" => p.w_q.grad.clone(),
                "w_k" => p.w_k.grad.clone(),
                "w_v" => p.w_v.grad.clone(),
                "w_o" => p.w_o.grad.clone(),
                _ => p.rel.grad.clone(),
            };
            let start = {
                let p = p0.clone();
                match name {
                    "w_q" => p.w_q.value,
                    "w_k" => p.w_k.value,
                    "w_v" => p.w_v.value,
                    "w_o" => p.w_o.value,
                    _ => p.rel.value,
                }
            };
            let mut op = FnOp::new(
                "mha.param",
                {
                    let p_base = p0.clone();
                    let x = x0.clone();
                    move |w: &Tensor| {
                        let mut p = p_base.clone();
                        set(&mut p, w);
                        mha_relative(&x, &p)
                    }
                },
                {
                    let p_base = p0.clone();
                    let x = x0.clone();
                    move |w: &Tensor, g: &Tensor| {
                        let mut p = p_base.clone();
                        set(&mut p, w);
                        let mut m = Mha { p, relative: true, cache: None };
                        m.forward_train(&x)?;
                        m.zero_grads();
                        m.backward(g)?;
                        Ok(get_grad(&m.p))
                    }
                },
            );
            let rep = finite_diff_check(&mut op, &start, DEFAULT_EPS, DEFAULT_TOL);
            assert!(rep.passed, "param {name}: {rep}");
        }
    }

    #[test]
    fn rejects_bad_configs_and_shapes() {
        let mut r = rng();
        assert!(MhaParams::new(4, 5, 4, 2, 3, &mut r).is_err()); // d_k % n_h
        assert!(MhaParams::new(4, 4, 6, 4, 3, &mut r).is_err()); // d_v % n_h
        assert!(MhaParams::new(0, 4, 4, 2, 3, &mut r).is_err());
        let p = MhaParams::new(4, 4, 4, 2, 3, &mut r).unwrap();
        let x = Tensor::zeros(&[1, 5, 3]);
        assert!(mha_absolute_free(&x, &p).is_err());
    }
}
