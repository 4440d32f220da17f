//! Transformer encoder backend. Fused frontend features are projected to
//! the encoder width token by token, a learned [CLS] vector is prepended,
//! and a stack of post-norm encoder layers (relative-position attention,
//! then a GELU feed-forward, each behind dropout + residual + layer norm)
//! digests the sequence. The classifier reads the top-layer [CLS]
//! activation.
//!
//! Activations stay (batch, width, time) end to end; attention transposes
//! to token-major internally. The feed-forward pair is stored as width-1
//! convolutions, which act per token exactly like dense layers.

use rand::Rng;

use crate::attention::Mha;
use crate::error::{Error, Result};
use crate::layers::{join, Conv1d, Dropout, Gelu, HasParams, LayerNorm, Param};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub mha: Mha,
    drop_att: Dropout,
    pub ln_att: LayerNorm,
    pub ffn_in: Conv1d,
    gelu: Gelu,
    pub ffn_out: Conv1d,
    drop_ffn: Dropout,
    pub ln_ffn: LayerNorm,
}

impl EncoderLayer {
    pub fn new(
        width: usize,
        heads: usize,
        ffn_width: usize,
        dropout: f64,
        d_max: usize,
        rng: &mut impl Rng,
    ) -> Result<EncoderLayer> {
        Ok(EncoderLayer {
            mha: Mha::new(width, width, width, heads, d_max, true, rng)?,
            drop_att: Dropout::new(dropout)?,
            ln_att: LayerNorm::new(width),
            ffn_in: Conv1d::new(width, ffn_width, 1, 1, 0, rng)?,
            gelu: Gelu::new(),
            ffn_out: Conv1d::new(ffn_width, width, 1, 1, 0, rng)?,
            drop_ffn: Dropout::new(dropout)?,
            ln_ffn: LayerNorm::new(width),
        })
    }

    fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let att = self.mha.forward_eval(&x.transpose_12()?)?.transpose_12()?;
        let h1 = self.ln_att.forward_eval(&x.add(&att)?)?;
        let f = self.ffn_in.forward_eval(&h1)?;
        let f = self.gelu.forward_eval(&f);
        let f = self.ffn_out.forward_eval(&f)?;
        self.ln_ffn.forward_eval(&h1.add(&f)?)
    }

    fn forward_train(&mut self, x: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
        let att = self.mha.forward_train(&x.transpose_12()?)?.transpose_12()?;
        let att = self.drop_att.forward_train(&att, rng);
        let h1 = self.ln_att.forward_train(&x.add(&att)?)?;
        let f = self.ffn_in.forward_train(&h1)?;
        let f = self.gelu.forward_train(&f);
        let f = self.ffn_out.forward_train(&f)?;
        let f = self.drop_ffn.forward_train(&f, rng);
        self.ln_ffn.forward_train(&h1.add(&f)?)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let dsum2 = self.ln_ffn.backward(grad)?;
        let df = self.drop_ffn.backward(&dsum2)?;
        let df = self.ffn_out.backward(&df)?;
        let df = self.gelu.backward(&df)?;
        let df = self.ffn_in.backward(&df)?;
        let mut dh1 = dsum2;
        dh1.add_scaled(&df, 1.0)?;
        let dsum1 = self.ln_att.backward(&dh1)?;
        let datt = self.drop_att.backward(&dsum1)?;
        let datt = self.mha.backward(&datt.transpose_12()?)?.transpose_12()?;
        let mut dx = dsum1;
        dx.add_scaled(&datt, 1.0)?;
        Ok(dx)
    }
}

impl HasParams for EncoderLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.mha.visit(&join(prefix, "mha"), f);
        self.ln_att.visit(&join(prefix, "ln_att"), f);
        self.ffn_in.visit(&join(prefix, "ffn_in"), f);
        self.ffn_out.visit(&join(prefix, "ffn_out"), f);
        self.ln_ffn.visit(&join(prefix, "ln_ffn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.mha.visit_mut(&join(prefix, "mha"), f);
        self.ln_att.visit_mut(&join(prefix, "ln_att"), f);
        self.ffn_in.visit_mut(&join(prefix, "ffn_in"), f);
        self.ffn_out.visit_mut(&join(prefix, "ffn_out"), f);
        self.ln_ffn.visit_mut(&join(prefix, "ln_ffn"), f);
    }
}

#[derive(Debug, Clone)]
pub struct BertBackend {
    pub proj: Conv1d,
    pub cls: Param,
    pub layers: Vec<EncoderLayer>,
    cache: Option<(usize, usize)>, // (batch, token count before [CLS])
}

impl BertBackend {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        c_in: usize,
        width: usize,
        heads: usize,
        n_layers: usize,
        ffn_width: usize,
        dropout: f64,
        d_max: usize,
        rng: &mut impl Rng,
    ) -> Result<BertBackend> {
        let proj = Conv1d::new(c_in, width, 1, 1, 0, rng)?;
        let lim = (6.0 / width as f64).sqrt();
        let cls = Param::new(Tensor::uniform(&[width], -lim, lim, rng));
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            layers.push(EncoderLayer::new(width, heads, ffn_width, dropout, d_max, rng)?);
        }
        Ok(BertBackend { proj, cls, layers, cache: None })
    }

    pub fn width(&self) -> usize {
        self.cls.value.dim(0)
    }

    fn check_tokens(&self, tokens: &Tensor) -> Result<(usize, usize)> {
        if tokens.rank() != 3 {
            return Err(Error::shape(
                "bert backend",
                format!("want (batch, channels, time), got {:?}", tokens.shape()),
            ));
        }
        let (b, t) = (tokens.dim(0), tokens.dim(2));
        if t == 0 {
            return Err(Error::shape("bert backend", "empty token sequence"));
        }
        Ok((b, t))
    }

    /// Broadcast the [CLS] vector to (B, width, 1) and prepend it in time.
    fn with_cls(&self, proj: &Tensor) -> Result<Tensor> {
        let (b, w) = (proj.dim(0), proj.dim(1));
        let mut cls_col = Tensor::zeros(&[b, w, 1]);
        for bi in 0..b {
            cls_col.data_mut()[bi * w..(bi + 1) * w].copy_from_slice(self.cls.value.data());
        }
        Tensor::concat(&[&cls_col, proj], 2)
    }

    /// Top-layer [CLS] activation, (B, width).
    pub fn forward_eval(&self, tokens: &Tensor) -> Result<Tensor> {
        let (b, _) = self.check_tokens(tokens)?;
        let w = self.width();
        let mut h = self.with_cls(&self.proj.forward_eval(tokens)?)?;
        for layer in &self.layers {
            h = layer.forward_eval(&h)?;
        }
        h.slice_axis(2, 0, 1)?.reshape(&[b, w])
    }

    pub fn forward_train(&mut self, tokens: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
        let (b, t) = self.check_tokens(tokens)?;
        let w = self.width();
        let proj = self.proj.forward_train(tokens)?;
        let mut h = self.with_cls(&proj)?;
        for layer in &mut self.layers {
            h = layer.forward_train(&h, rng)?;
        }
        self.cache = Some((b, t));
        h.slice_axis(2, 0, 1)?.reshape(&[b, w])
    }

    /// Takes the [CLS] gradient (B, width), returns the token gradient.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (b, t) = self
            .cache
            .take()
            .ok_or_else(|| Error::Train("bert backward without forward_train".into()))?;
        let w = self.width();
        if grad.shape() != [b, w] {
            return Err(Error::shape(
                "bert backward",
                format!("grad shape {:?} vs ({b}, {w})", grad.shape()),
            ));
        }
        // Only the [CLS] slot receives upstream gradient.
        let mut dh = Tensor::zeros(&[b, w, t + 1]);
        for bi in 0..b {
            for wi in 0..w {
                dh.data_mut()[(bi * w + wi) * (t + 1)] = grad.data()[bi * w + wi];
            }
        }
        for layer in self.layers.iter_mut().rev() {
            dh = layer.backward(&dh)?;
        }
        let dcls_col = dh.slice_axis(2, 0, 1)?;
        for bi in 0..b {
            self.cls
                .grad
                .add_scaled(&dcls_col.slice_axis(0, bi, 1)?.reshape(&[w])?, 1.0)?;
        }
        let dproj = dh.slice_axis(2, 1, t)?;
        self.proj.backward(&dproj)
    }
}

impl HasParams for BertBackend {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.proj.visit(&join(prefix, "proj"), f);
        f(&join(prefix, "cls"), &self.cls);
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&join(prefix, &format!("layer{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.proj.visit_mut(&join(prefix, "proj"), f);
        f(&join(prefix, "cls"), &mut self.cls);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&join(prefix, &format!("layer{i}")), f);
        }
    }
}
