//! Attention-augmented convolution: a length-preserving conv branch and a
//! self-attention branch concatenated along channels, then layer-normalized.
//! The attention branch supplies d_v = v*C_out channels and the conv branch
//! the remaining C_out - d_v, so the block is a drop-in replacement for a
//! C_in -> C_out convolution.

use super::{Mha, MhaParams};
use crate::error::{Error, Result};
use crate::layers::{join, HasParams, LayerNorm, Param};
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct AacBlock {
    pub conv: crate::layers::Conv1d,
    pub mha: Mha,
    pub norm: LayerNorm,
}

fn ratio_channels(name: &str, ratio: f64, c_out: usize) -> Result<usize> {
    let exact = ratio * c_out as f64;
    let rounded = exact.round();
    if (exact - rounded).abs() > 1e-9 || rounded < 1.0 {
        return Err(Error::Config(format!(
            "aac: ratio {name}={ratio} gives {exact} channels of {c_out}; need a positive whole number"
        )));
    }
    Ok(rounded as usize)
}

impl AacBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        c_in: usize,
        c_out: usize,
        k_ratio: f64,
        v_ratio: f64,
        filter: usize,
        n_h: usize,
        d_max: usize,
        relative: bool,
        rng: &mut impl Rng,
    ) -> Result<AacBlock> {
        if !(v_ratio > 0.0 && v_ratio < 1.0) {
            return Err(Error::Config(format!(
                "aac: attention channel ratio v must be in (0,1), got {v_ratio}"
            )));
        }
        if k_ratio <= 0.0 {
            return Err(Error::Config(format!(
                "aac: key ratio k must be positive, got {k_ratio}"
            )));
        }
        if filter.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "aac: length-preserving padding needs an odd filter, got {filter}"
            )));
        }
        let d_v = ratio_channels("v", v_ratio, c_out)?;
        let d_k = ratio_channels("k", k_ratio, c_out)?;
        let conv = crate::layers::Conv1d::new(c_in, c_out - d_v, filter, 1, (filter - 1) / 2, rng)?;
        let mha = Mha { p: MhaParams::new(c_in, d_k, d_v, n_h, d_max, rng)?, relative, cache: None };
        Ok(AacBlock { conv, mha, norm: LayerNorm::new(c_out) })
    }

    pub fn c_out(&self) -> usize {
        self.norm.channels()
    }

    pub fn d_v(&self) -> usize {
        self.mha.p.d_v()
    }

    fn check_lengths(&self, conv_len: usize, att_len: usize) -> Result<()> {
        if conv_len != att_len {
            return Err(Error::shape(
                "aac",
                format!("conv branch length {conv_len} vs attention branch length {att_len}"),
            ));
        }
        Ok(())
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let conv_y = self.conv.forward_eval(x)?;
        let att = self.mha.forward_eval(&x.transpose_12()?)?;
        let att_t = att.transpose_12()?;
        self.check_lengths(conv_y.dim(2), att_t.dim(2))?;
        let cat = Tensor::concat(&[&conv_y, &att_t], 1)?;
        self.norm.forward_eval(&cat)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let conv_y = self.conv.forward_train(x)?;
        let att = self.mha.forward_train(&x.transpose_12()?)?;
        let att_t = att.transpose_12()?;
        self.check_lengths(conv_y.dim(2), att_t.dim(2))?;
        let cat = Tensor::concat(&[&conv_y, &att_t], 1)?;
        self.norm.forward_train(&cat)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let dcat = self.norm.backward(grad_out)?;
        let conv_ch = self.c_out() - self.d_v();
        let dconv = dcat.slice_axis(1, 0, conv_ch)?;
        let datt_t = dcat.slice_axis(1, conv_ch, self.d_v())?;
        let mut dx = self.conv.backward(&dconv)?;
        let dxt = self.mha.backward(&datt_t.transpose_12()?)?;
        dx.add_scaled(&dxt.transpose_12()?, 1.0)?;
        Ok(dx)
    }
}

impl HasParams for AacBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.mha.visit(&join(prefix, "mha"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.mha.visit_mut(&join(prefix, "mha"), f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
    }
}

/// Closed-form parameter estimate for an AAC block, as printed:
/// C_in*C_out*(2k + (1-r^2)*v + (C_out/C_in)*v^2). The (1-r^2) term goes
/// negative for any filter wider than 1, so treat this as a diagnostic to
/// report next to an exact enumeration, not as a count.
pub fn aac_param_estimate(c_in: usize, c_out: usize, k: f64, v: f64, r: usize) -> f64 {
    let (ci, co, rf) = (c_in as f64, c_out as f64, r as f64);
    ci * co * (2.0 * k + (1.0 - rf * rf) * v + (co / ci) * v * v)
}
