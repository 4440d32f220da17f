//! Relative position logits, explicit and memory-efficient.
//!
//! Both functions compute S[b,h,i,j] = Q[b,h,i,:] . r_{j-i}, where r_d is a
//! learned embedding per pairwise distance, clipped to +-D_max. The explicit
//! form materializes the full (L,L,d_h) gather per head and serves as the
//! reference oracle. The skewed form gathers only the 2L-1 distance rows a
//! length-L sequence can use, multiplies Q against that table once, and
//! reindexes the product along diagonals, so its auxiliary embedding storage
//! is linear in L instead of quadratic.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::cell::Cell;

thread_local! {
    static EMBED_FLOATS: Cell<u64> = const { Cell::new(0) };
}

/// Zero the thread-local count of f64 values allocated to hold gathered
/// relative-embedding data.
pub fn reset_embed_alloc_counter() {
    EMBED_FLOATS.with(|c| c.set(0));
}

/// f64 values allocated for gathered relative-embedding data on this thread
/// since the last reset.
pub fn embed_alloc_floats() -> u64 {
    EMBED_FLOATS.with(|c| c.get())
}

fn count_embed_floats(n: usize) {
    EMBED_FLOATS.with(|c| c.set(c.get() + n as u64));
}

struct RelShape {
    b: usize,
    n_h: usize,
    l: usize,
    d_h: usize,
    d_max: usize,
}

fn validate(q: &Tensor, e: &Tensor) -> Result<RelShape> {
    if q.rank() != 4 {
        return Err(Error::shape(
            "relative logits",
            format!("query must be (batch, heads, length, depth), got {:?}", q.shape()),
        ));
    }
    if e.rank() != 3 {
        return Err(Error::shape(
            "relative logits",
            format!("table must be (heads, 2*D_max+1, depth), got {:?}", e.shape()),
        ));
    }
    let (b, n_h, l, d_h) = (q.dim(0), q.dim(1), q.dim(2), q.dim(3));
    if e.dim(0) != n_h || e.dim(2) != d_h {
        return Err(Error::shape(
            "relative logits",
            format!("table {:?} does not match query {:?}", e.shape(), q.shape()),
        ));
    }
    if e.dim(1).is_multiple_of(2) {
        return Err(Error::shape(
            "relative logits",
            format!("table row count {} must be odd (2*D_max+1)", e.dim(1)),
        ));
    }
    if l == 0 {
        return Err(Error::shape("relative logits", "zero-length sequence"));
    }
    let d_max = (e.dim(1) - 1) / 2;
    Ok(RelShape { b, n_h, l, d_h, d_max })
}

fn table_row(dist: isize, d_max: usize) -> usize {
    let clipped = dist.clamp(-(d_max as isize), d_max as isize);
    (clipped + d_max as isize) as usize
}

/// Reference path: builds R[i,j,:] = r_{j-i} per head (the full quadratic
/// gather) and dots it against Q row by row.
pub fn relative_logits_explicit(q: &Tensor, e: &Tensor) -> Result<Tensor> {
    let RelShape { b, n_h, l, d_h, d_max } = validate(q, e)?;
    let mut s = Tensor::zeros(&[b, n_h, l, l]);
    let qd = q.data();
    let ed = e.data();
    let sd = s.data_mut();
    for h in 0..n_h {
        let mut r = vec![0.0; l * l * d_h];
        count_embed_floats(r.len());
        for i in 0..l {
            for j in 0..l {
                let row = table_row(j as isize - i as isize, d_max);
                let src = &ed[(h * (2 * d_max + 1) + row) * d_h..][..d_h];
                r[(i * l + j) * d_h..][..d_h].copy_from_slice(src);
            }
        }
        for bi in 0..b {
            for i in 0..l {
                let q_row = &qd[((bi * n_h + h) * l + i) * d_h..][..d_h];
                for j in 0..l {
                    let r_row = &r[(i * l + j) * d_h..][..d_h];
                    let mut acc = 0.0;
                    for (qv, rv) in q_row.iter().zip(r_row) {
                        acc += qv * rv;
                    }
                    sd[((bi * n_h + h) * l + i) * l + j] = acc;
                }
            }
        }
    }
    Ok(s)
}

/// Memory-efficient path: gathers the 2L-1 usable distance rows (clipping
/// applied during the gather), forms QE = Q . E_used^T once, and reads
/// S[i,j] = QE[i, j-i+L-1]. Output matches the explicit path.
pub fn relative_logits_skewed(q: &Tensor, e: &Tensor) -> Result<Tensor> {
    let RelShape { b, n_h, l, d_h, d_max } = validate(q, e)?;
    let n_used = 2 * l - 1;
    let mut s = Tensor::zeros(&[b, n_h, l, l]);
    let qd = q.data();
    let ed = e.data();
    let sd = s.data_mut();
    for h in 0..n_h {
        let mut e_used = vec![0.0; n_used * d_h];
        count_embed_floats(e_used.len());
        for m in 0..n_used {
            let row = table_row(m as isize - (l as isize - 1), d_max);
            let src = &ed[(h * (2 * d_max + 1) + row) * d_h..][..d_h];
            e_used[m * d_h..][..d_h].copy_from_slice(src);
        }
        let mut qe = vec![0.0; l * n_used];
        for bi in 0..b {
            for i in 0..l {
                let q_row = &qd[((bi * n_h + h) * l + i) * d_h..][..d_h];
                for m in 0..n_used {
                    let e_row = &e_used[m * d_h..][..d_h];
                    let mut acc = 0.0;
                    for (qv, ev) in q_row.iter().zip(e_row) {
                        acc += qv * ev;
                    }
                    qe[i * n_used + m] = acc;
                }
            }
            for i in 0..l {
                for j in 0..l {
                    let m = j + l - 1 - i;
                    sd[((bi * n_h + h) * l + i) * l + j] = qe[i * n_used + m];
                }
            }
        }
    }
    Ok(s)
}

/// Gradients of the skewed logits with respect to the query and the table.
/// `grad_s` has the output shape (B, N_h, L, L).
pub fn relative_logits_skewed_backward(
    q: &Tensor,
    e: &Tensor,
    grad_s: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let RelShape { b, n_h, l, d_h, d_max } = validate(q, e)?;
    if grad_s.shape() != [b, n_h, l, l] {
        return Err(Error::shape(
            "relative logits backward",
            format!("grad shape {:?} vs ({b}, {n_h}, {l}, {l})", grad_s.shape()),
        ));
    }
    let mut dq = Tensor::zeros(q.shape());
    let mut de = Tensor::zeros(e.shape());
    let qd = q.data();
    let ed = e.data();
    let gd = grad_s.data();
    let dqd = dq.data_mut();
    let ded = de.data_mut();
    for bi in 0..b {
        for h in 0..n_h {
            for i in 0..l {
                let q_off = ((bi * n_h + h) * l + i) * d_h;
                for j in 0..l {
                    let g = gd[((bi * n_h + h) * l + i) * l + j];
                    if g == 0.0 {
                        continue;
                    }
                    let row = table_row(j as isize - i as isize, d_max);
                    let e_off = (h * (2 * d_max + 1) + row) * d_h;
                    for d in 0..d_h {
                        dqd[q_off + d] += g * ed[e_off + d];
                        ded[e_off + d] += g * qd[q_off + d];
                    }
                }
            }
        }
    }
    Ok((dq, de))
}
