//! Finite-difference verification of hand-derived backward passes.
//!
//! Every layer in this crate implements its own backward; none of it is
//! taped or generated. The checker compares the analytic input gradient of
//! a scalar projection loss against central differences in f64:
//!
//!   loss(x) = sum(forward(x) * R)
//!
//! with R a fixed random projection derived from the op name, so the whole
//! procedure is deterministic. Relative error uses the symmetric
//! denominator max(|analytic|, |numeric|, 1e-8).

use crate::error::Result;
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

/// A differentiable mapping with an analytic backward, as seen by the
/// checker. `backward` receives the same input plus the upstream gradient
/// and returns dloss/dinput.
pub trait DifferentiableOp {
    fn name(&self) -> &str;
    fn forward(&mut self, x: &Tensor) -> Result<Tensor>;
    fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor>;
}

/// Closure adapter so call sites do not need a named type per op.
pub struct FnOp<F, B> {
    name: String,
    forward: F,
    backward: B,
}

impl<F, B> FnOp<F, B>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
    B: FnMut(&Tensor, &Tensor) -> Result<Tensor>,
{
    pub fn new(name: impl Into<String>, forward: F, backward: B) -> Self {
        FnOp {
            name: name.into(),
            forward,
            backward,
        }
    }
}

impl<F, B> DifferentiableOp for FnOp<F, B>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
    B: FnMut(&Tensor, &Tensor) -> Result<Tensor>,
{
    fn name(&self) -> &str {
        &self.name
    }
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        (self.forward)(x)
    }
    fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        (self.backward)(x, grad_out)
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub op: String,
    pub shape: Vec<usize>,
    /// Largest relative error over the checked coordinates.
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Flat index of the worst coordinate, or a failure description when the
    /// analytic gradient was unusable (non-finite values and the like).
    pub note: String,
    /// How many coordinates were perturbed (all of them unless sampled).
    pub coords_checked: usize,
}

impl GradCheckReport {
    fn failure(op: &str, shape: &[usize], tol: f64, note: String) -> GradCheckReport {
        GradCheckReport {
            op: op.to_string(),
            shape: shape.to_vec(),
            max_rel_err: f64::INFINITY,
            tolerance: tol,
            passed: false,
            note,
            coords_checked: 0,
        }
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<34} {:>16} max_rel_err {:.3e} tol {:.1e} [{}]{}",
            self.op,
            format!("{:?}", self.shape),
            self.max_rel_err,
            self.tolerance,
            if self.passed { "pass" } else { "FAIL" },
            if self.note.is_empty() {
                String::new()
            } else {
                format!(" {}", self.note)
            }
        )
    }
}

fn projection_for(name: &str, shape: &[usize]) -> Tensor {
    // Stable seed from the op name so reports are reproducible run to run.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    for &d in shape {
        h ^= d as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    Tensor::uniform(shape, -1.0, 1.0, &mut rng)
}

/// Check every coordinate of `x`.
pub fn finite_diff_check(
    op: &mut dyn DifferentiableOp,
    x: &Tensor,
    eps: f64,
    tol: f64,
) -> GradCheckReport {
    check_impl(op, x, eps, tol, None)
}

/// Check a deterministic random subset of coordinates. Intended for
/// end-to-end model checks where the parameter count makes a full sweep
/// pointless.
pub fn finite_diff_check_sampled(
    op: &mut dyn DifferentiableOp,
    x: &Tensor,
    eps: f64,
    tol: f64,
    max_coords: usize,
) -> GradCheckReport {
    check_impl(op, x, eps, tol, Some(max_coords))
}

fn check_impl(
    op: &mut dyn DifferentiableOp,
    x: &Tensor,
    eps: f64,
    tol: f64,
    max_coords: Option<usize>,
) -> GradCheckReport {
    let name = op.name().to_string();
    let y = match op.forward(x) {
        Ok(y) => y,
        Err(e) => {
            return GradCheckReport::failure(&name, x.shape(), tol, format!("forward failed: {e}"))
        }
    };
    let r = projection_for(&name, y.shape());
    let analytic = match op.backward(x, &r) {
        Ok(g) => g,
        Err(e) => {
            return GradCheckReport::failure(&name, x.shape(), tol, format!("backward failed: {e}"))
        }
    };
    if analytic.shape() != x.shape() {
        return GradCheckReport::failure(
            &name,
            x.shape(),
            tol,
            format!(
                "backward returned shape {:?} for input {:?}",
                analytic.shape(),
                x.shape()
            ),
        );
    }
    if let Err(e) = analytic.check_finite("gradcheck.analytic") {
        return GradCheckReport::failure(&name, x.shape(), tol, e.to_string());
    }

    let coords: Vec<usize> = match max_coords {
        Some(m) if x.numel() > m => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ x.numel() as u64);
            let mut picks = Vec::with_capacity(m);
            for _ in 0..m {
                picks.push(rand::Rng::random_range(&mut rng, 0..x.numel()));
            }
            picks.sort_unstable();
            picks.dedup();
            picks
        }
        _ => (0..x.numel()).collect(),
    };

    let mut loss_at = |xp: &Tensor| -> Result<f64> {
        let yp = op.forward(xp)?;
        Ok(yp
            .data()
            .iter()
            .zip(r.data())
            .map(|(&a, &b)| a * b)
            .sum())
    };

    let mut max_rel = 0.0f64;
    let mut worst = 0usize;
    let mut xp = x.clone();
    for &i in &coords {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + eps;
        let lp = match loss_at(&xp) {
            Ok(v) => v,
            Err(e) => {
                return GradCheckReport::failure(&name, x.shape(), tol, format!("forward: {e}"))
            }
        };
        xp.data_mut()[i] = orig - eps;
        let lm = match loss_at(&xp) {
            Ok(v) => v,
            Err(e) => {
                return GradCheckReport::failure(&name, x.shape(), tol, format!("forward: {e}"))
            }
        };
        xp.data_mut()[i] = orig;
        let numeric = (lp - lm) / (2.0 * eps);
        let a = analytic.data()[i];
        if !numeric.is_finite() {
            return GradCheckReport::failure(
                &name,
                x.shape(),
                tol,
                format!("non-finite numeric gradient at flat index {i}"),
            );
        }
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }

    GradCheckReport {
        op: name,
        shape: x.shape().to_vec(),
        max_rel_err: max_rel,
        tolerance: tol,
        passed: max_rel <= tol,
        note: if max_rel <= tol {
            String::new()
        } else {
            format!("worst at flat index {worst}")
        },
        coords_checked: coords.len(),
    }
}

/// Families covered by [`layer_suite`], in report order.
pub const SUITE_FAMILIES: [&str; 8] = [
    "conv1d",
    "batchnorm1d",
    "layernorm",
    "dense",
    "gelu",
    "se_block",
    "mha_relative",
    "aac_block",
];

/// The crate-wide gradient suite: every differentiable layer family is
/// finite-difference checked on three random shapes through its input, and
/// the parametered families once more through a weight tensor. `filter`
/// keeps only families whose name starts with it.
pub fn layer_suite(filter: Option<&str>, seed: u64) -> Result<Vec<GradCheckReport>> {
    use crate::attention::{AacBlock, Mha};
    use crate::error::Error;
    use crate::layers::{BatchNorm1d, Conv1d, Dense, Gelu, HasParams, LayerNorm, SeBlock};

    if let Some(f) = filter {
        if !SUITE_FAMILIES.iter().any(|fam| fam.starts_with(f)) {
            return Err(Error::Config(format!(
                "no gradcheck family matches '{f}', expected a prefix of one of: {}",
                SUITE_FAMILIES.join(", ")
            )));
        }
    }
    let wants = |family: &str| filter.is_none_or(|f| family.starts_with(f));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    if wants("conv1d") {
        for (b, ci, l, co, k, s, p) in
            [(2, 2, 9, 3, 3, 2, 1), (1, 3, 14, 2, 5, 3, 2), (3, 1, 7, 4, 1, 1, 0)]
        {
            let conv = Conv1d::new(ci, co, k, s, p, &mut rng)?;
            let x = Tensor::uniform(&[b, ci, l], -1.0, 1.0, &mut rng);
            let mut op = FnOp::new(
                format!("conv1d.input f{k} s{s} p{p}"),
                {
                    let mut c = conv.clone();
                    move |x: &Tensor| c.forward_train(x)
                },
                {
                    let mut c = conv.clone();
                    move |x: &Tensor, g: &Tensor| {
                        c.forward_train(x)?;
                        c.zero_grads();
                        c.backward(g)
                    }
                },
            );
            reports.push(finite_diff_check(&mut op, &x, DEFAULT_EPS, DEFAULT_TOL));
        }
        let conv = Conv1d::new(2, 3, 3, 1, 1, &mut rng)?;
        let x = Tensor::uniform(&[2, 2, 8], -1.0, 1.0, &mut rng);
        let w0 = conv.w.value.clone();
        let mut op = FnOp::new(
            "conv1d.weight",
            {
                let mut c = conv.clone();
                let x = x.clone();
                move |w: &Tensor| {
                    c.w.value = w.clone();
                    c.forward_train(&x)
                }
            },
            {
                let mut c = conv.clone();
                move |w: &Tensor, g: &Tensor| {
                    c.w.value = w.clone();
                    c.forward_train(&x)?;
                    c.zero_grads();
                    c.backward(g)?;
                    Ok(c.w.grad.clone())
                }
            },
        );
        reports.push(finite_diff_check(&mut op, &w0, DEFAULT_EPS, DEFAULT_TOL));
    }

    if wants("batchnorm1d") {
        for (b, c, l) in [(2, 3, 5), (4, 2, 6), (3, 4, 3)] {
            let bn = BatchNorm1d::new(c);
            let x = Tensor::uniform(&[b, c, l], -1.0, 1.0, &mut rng);
            let mut op = FnOp::new(
                format!("batchnorm1d.input c{c}"),
                {
                    let mut n = bn.clone();
                    move |x: &Tensor| n.forward_train(x)
                },
                {
                    let mut n = bn.clone();
                    move |x: &Tensor, g: &Tensor| {
                        n.forward_train(x)?;
                        n.zero_grads();
                        n.backward(g)
                    }
                },
            );
            reports.push(finite_diff_check(&mut op, &x, DEFAULT_EPS, DEFAULT_TOL));
        }
    }

    if wants("layernorm") {
        for (b, c, l) in [(2, 3, 5), (1, 4, 6), (3, 2, 2)] {
            let ln = LayerNorm::new(c);
            let x = Tensor::uniform(&[b, c, l], -1.0, 1.0, &mut rng);
            let mut op = FnOp::new(
                format!("layernorm.input c{c}"),
                {
                    let mut n = ln.clone();
                    move |x: &Tensor| n.forward_train(x)
                },
                {
                    let mut n = ln.clone();
                    move |x: &Tensor, g: &Tensor| {
                        n.forward_train(x)?;
                        n.zero_grads();
                        n.backward(g)
                    }
                },
            );
            reports.push(finite_diff_check(&mut op, &x, DEFAULT_EPS, DEFAULT_TOL));
        }
    }

    if wants("dense") {
        for (b, din, dout) in [(2, 5, 3), (4, 3, 2), (1, 6, 6)] {
            let fc = Dense::new(din, dout, &mut rng);
            let x = Tensor::uniform(&[b, din], -1.0, 1.0, &mut rng);
            let mut op = FnOp::new(
                format!("dense.input {din}to{dout}"),
                {
                    let mut d = fc.clone();
                    move |x: &Tensor| d.forward_train(x)
                },
                {
                    let mut d = fc.clone();
                    move |x: &Tensor, g: &Tensor| {
                        d.forward_train(x)?;
                        d.zero_grads();
                        d.backward(g)
                    }
                },
            );
            reports.push(finite_diff_check(&mut op, &x, DEFAULT_EPS, DEFAULT_TOL));
        }
        let fc = Dense::new(4, 3, &mut rng);
        let x = Tensor::uniform(&[2, 4], -1.0, 1.0, &mut rng);
        let w0 = fc.w.value.clone();
        let mut op = FnOp::new(
            "dense.weight",
            {
                let mut d = fc.clone();
                let x = x.clone();
                move |w: &Tensor| {
                    d.w.value = w.clone();
                    d.forward_train(&x)
                }
            },
            {
                let mut d = fc.clone();
                move |w: &Tensor, g: &Tensor| {
                    d.w.value = w.clone();
                    d.forward_train(&x)?;
                    d.zero_grads();
                    d.backward(g)?;
                    Ok(d.w.grad.clone())
                }
            },
        );
        reports.push(finite_diff_check(&mut op, &w0, DEFAULT_EPS, DEFAULT_TOL));
    }

    if wants("gelu") {
        for shape in [vec![2, 5], vec![3, 2, 4], vec![7]] {
            let x = Tensor::uniform(&shape, -2.0, 2.0, &mut rng);
            let mut op = FnOp::new(
                format!("gelu rank{}", shape.len()),
                {
                    let mut g = Gelu::new();
                    move |x: &Tensor| Ok(g.forward_train(x))
                },
                {
                    let mut gl = Gelu::new();
                    move |x: &Tensor, g: &Tensor| {
                        gl.forward_train(x);
                        gl.backward(g)
                    }
                },
            );
            reports.push(finite_diff_check(&mut op, &x, DEFAULT_EPS, DEFAULT_TOL));
        }
    }

    if wants("se_block") {
        for (b, c, l, ratio) in [(2, 4, 6, 2), (1, 6, 5, 3), (3, 2, 8, 2)] {
            let se = SeBlock::new(c, ratio, &mut rng)?;
            let x = Tensor::uniform(&[b, c, l], -1.0, 1.0, &mut rng);
            let mut op = FnOp::new(
                format!("se_block.input c{c} r{ratio}"),
                {
                    let mut s = se.clone();
                    move |x: &Tensor| s.forward_train(x)
                },
                {
                    let mut s = se.clone();
                    move |x: &Tensor, g: &Tensor| {
                        s.forward_train(x)?;
                        s.zero_grads();
                        s.backward(g)
                    }
                },
            );
            reports.push(finite_diff_check(&mut op, &x, DEFAULT_EPS, DEFAULT_TOL));
        }
    }

    if wants("mha_relative") {
        for (b, l, c, n_h, d_max) in [(1, 5, 4, 2, 3), (2, 4, 6, 3, 8), (1, 7, 8, 4, 2)] {
            let mha = Mha::new(c, c, c, n_h, d_max, true, &mut rng)?;
            let x = Tensor::uniform(&[b, l, c], -1.0, 1.0, &mut rng);
            let mut op = FnOp::new(
                format!("mha_relative.input h{n_h} dmax{d_max}"),
                {
                    let mut m = mha.clone();
                    move |x: &Tensor| m.forward_train(x)
                },
                {
                    let mut m = mha.clone();
                    move |x: &Tensor, g: &Tensor| {
                        m.forward_train(x)?;
                        m.zero_grads();
                        m.backward(g)
                    }
                },
            );
            reports.push(finite_diff_check(&mut op, &x, DEFAULT_EPS, DEFAULT_TOL));
        }
        let mha = Mha::new(4, 4, 4, 2, 3, true, &mut rng)?;
        let x = Tensor::uniform(&[2, 5, 4], -1.0, 1.0, &mut rng);
        let rel0 = mha.p.rel.value.clone();
        let mut op = FnOp::new(
            "mha_relative.embeddings",
            {
                let mut m = mha.clone();
                let x = x.clone();
                move |rel: &Tensor| {
                    m.p.rel.value = rel.clone();
                    m.forward_train(&x)
                }
            },
            {
                let mut m = mha.clone();
                move |rel: &Tensor, g: &Tensor| {
                    m.p.rel.value = rel.clone();
                    m.forward_train(&x)?;
                    m.zero_grads();
                    m.backward(g)?;
                    Ok(m.p.rel.grad.clone())
                }
            },
        );
        reports.push(finite_diff_check(&mut op, &rel0, DEFAULT_EPS, DEFAULT_TOL));
    }

    if wants("aac_block") {
        for (b, ci, l, co, n_h) in [(2, 4, 6, 4, 2), (1, 6, 5, 8, 2), (2, 8, 4, 8, 4)] {
            let aac = AacBlock::new(ci, co, 0.5, 0.5, 3, n_h, 4, true, &mut rng)?;
            let x = Tensor::uniform(&[b, ci, l], -1.0, 1.0, &mut rng);
            let mut op = FnOp::new(
                format!("aac_block.input {ci}to{co} h{n_h}"),
                {
                    let mut a = aac.clone();
                    move |x: &Tensor| a.forward_train(x)
                },
                {
                    let mut a = aac.clone();
                    move |x: &Tensor, g: &Tensor| {
                        a.forward_train(x)?;
                        a.zero_grads();
                        a.backward(g)
                    }
                },
            );
            reports.push(finite_diff_check(&mut op, &x, DEFAULT_EPS, DEFAULT_TOL));
        }
    }

    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn linear_map_passes() {
        // y = x * W for a fixed W; analytic dx = R * W^T.
        let w = Tensor::from_vec(&[3, 2], vec![0.5, -1.0, 2.0, 0.25, -0.75, 1.5]).unwrap();
        let wt = w.transpose_2d().unwrap();
        let mut op = FnOp::new(
            "unit.linear",
            |x: &Tensor| x.matmul(&w),
            |_x: &Tensor, g: &Tensor| g.matmul(&wt),
        );
        let x = Tensor::from_vec(&[2, 3], vec![0.1, -0.4, 0.9, 1.3, -2.0, 0.0]).unwrap();
        let rep = finite_diff_check(&mut op, &x, DEFAULT_EPS, DEFAULT_TOL);
        assert!(rep.passed, "{rep}");
    }

    #[test]
    fn relu_passes_away_from_kink() {
        let mut op = FnOp::new(
            "unit.relu",
            |x: &Tensor| Ok(x.map(|v| v.max(0.0))),
            |x: &Tensor, g: &Tensor| x.zip_map(g, |xv, gv| if xv > 0.0 { gv } else { 0.0 }),
        );
        // Inputs bounded away from zero so central differences do not
        // straddle the kink.
        let x = Tensor::from_vec(&[5], vec![1.0, -1.0, 0.5, -0.25, 2.0]).unwrap();
        let rep = finite_diff_check(&mut op, &x, DEFAULT_EPS, DEFAULT_TOL);
        assert!(rep.passed, "{rep}");
    }

    #[test]
    fn constant_op_reports_zero_error() {
        let mut op = FnOp::new(
            "unit.constant",
            |x: &Tensor| Ok(Tensor::filled(&[2], 7.0).map(|v| v + 0.0 * x.data()[0])),
            |x: &Tensor, _g: &Tensor| Ok(Tensor::zeros(x.shape())),
        );
        let x = Tensor::from_vec(&[3], vec![0.3, -0.2, 0.8]).unwrap();
        let rep = finite_diff_check(&mut op, &x, DEFAULT_EPS, DEFAULT_TOL);
        assert!(rep.passed);
        assert_eq!(rep.max_rel_err, 0.0);
    }

    #[test]
    fn non_finite_analytic_gradient_fails_with_location() {
        let mut op = FnOp::new(
            "unit.nan",
            |x: &Tensor| Ok(x.clone()),
            |x: &Tensor, _g: &Tensor| {
                let mut g = Tensor::zeros(x.shape());
                g.data_mut()[1] = f64::NAN;
                Ok(g)
            },
        );
        let x = Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap();
        let rep = finite_diff_check(&mut op, &x, DEFAULT_EPS, DEFAULT_TOL);
        assert!(!rep.passed);
        assert!(rep.note.contains("index 1"), "{}", rep.note);
    }

    #[test]
    fn failing_forward_is_reported_not_panicked() {
        let mut op = FnOp::new(
            "unit.err",
            |_x: &Tensor| Err(Error::Config("boom".into())),
            |x: &Tensor, _g: &Tensor| Ok(Tensor::zeros(x.shape())),
        );
        let x = Tensor::zeros(&[2]);
        let rep = finite_diff_check(&mut op, &x, DEFAULT_EPS, DEFAULT_TOL);
        assert!(!rep.passed);
        assert!(rep.note.contains("boom"));
    }

    #[test]
    fn full_layer_suite_passes() {
        let reports = layer_suite(None, 0).unwrap();
        // 3 input shapes per family, plus weight paths for conv1d, dense
        // and the relative embedding table.
        assert_eq!(reports.len(), 8 * 3 + 3);
        for rep in &reports {
            assert!(rep.passed, "{rep}");
        }
        for family in SUITE_FAMILIES {
            assert!(
                reports.iter().any(|r| r.op.starts_with(family)),
                "no report for {family}"
            );
        }
    }

    #[test]
    fn suite_filter_selects_and_rejects() {
        let reports = layer_suite(Some("mha"), 0).unwrap();
        assert_eq!(reports.len(), 4);
        assert!(reports.iter().all(|r| r.op.starts_with("mha_relative")));

        let err = layer_suite(Some("softmax"), 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("softmax") && msg.contains("aac_block"), "{msg}");
    }
}
