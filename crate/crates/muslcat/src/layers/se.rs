use super::dense::{Dense, Relu, Sigmoid};
use super::{HasParams, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;

/// Squeeze-and-excitation gate for (batch, channels, length) activations.
///
/// Mean-pools each channel over time, runs the pooled vector through a
/// two-layer bottleneck (channels -> channels/ratio -> channels) with a
/// sigmoid at the end, and scales every channel by its gate.
#[derive(Debug, Clone)]
pub struct SeBlock {
    pub squeeze: Dense,
    pub excite: Dense,
    relu: Relu,
    sigmoid: Sigmoid,
    cache: Option<SeCache>,
}

#[derive(Debug, Clone)]
struct SeCache {
    x: Tensor,    // (B, C, L) input
    gate: Tensor, // (B, C) sigmoid output
}

impl SeBlock {
    pub fn new(channels: usize, ratio: usize, rng: &mut impl Rng) -> Result<SeBlock> {
        if ratio == 0 || !channels.is_multiple_of(ratio) {
            return Err(Error::Config(format!(
                "se ratio {ratio} must divide channel count {channels}"
            )));
        }
        Ok(SeBlock {
            squeeze: Dense::new(channels, channels / ratio, rng),
            excite: Dense::new(channels / ratio, channels, rng),
            relu: Relu::new(),
            sigmoid: Sigmoid::new(),
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.squeeze.d_in()
    }

    fn pooled(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 3 || x.dim(1) != self.channels() {
            return Err(Error::shape(
                "se",
                format!(
                    "want (batch, {}, length), got {:?}",
                    self.channels(),
                    x.shape()
                ),
            ));
        }
        let (b, c, l) = (x.dim(0), x.dim(1), x.dim(2));
        if l == 0 {
            return Err(Error::shape("se", "zero-length input"));
        }
        let mut m = Tensor::zeros(&[b, c]);
        for bi in 0..b {
            for ci in 0..c {
                let row = &x.data()[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                m.data_mut()[bi * c + ci] = row.iter().sum::<f64>() / l as f64;
            }
        }
        Ok(m)
    }

    fn apply_gate(x: &Tensor, gate: &Tensor) -> Tensor {
        let (b, c, l) = (x.dim(0), x.dim(1), x.dim(2));
        let mut y = x.clone();
        for bi in 0..b {
            for ci in 0..c {
                let g = gate.data()[bi * c + ci];
                for v in &mut y.data_mut()[(bi * c + ci) * l..(bi * c + ci + 1) * l] {
                    *v *= g;
                }
            }
        }
        y
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let m = self.pooled(x)?;
        let h = self.relu.forward_eval(&self.squeeze.forward_eval(&m)?);
        let gate = self.sigmoid.forward_eval(&self.excite.forward_eval(&h)?);
        Ok(Self::apply_gate(x, &gate))
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let m = self.pooled(x)?;
        let h = self.relu.forward_train(&self.squeeze.forward_train(&m)?);
        let gate = self
            .sigmoid
            .forward_train(&self.excite.forward_train(&h)?);
        let y = Self::apply_gate(x, &gate);
        self.cache = Some(SeCache { x: x.clone(), gate });
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let SeCache { x, gate } = self
            .cache
            .take()
            .ok_or_else(|| Error::Train("se backward without forward_train".into()))?;
        let (b, c, l) = (x.dim(0), x.dim(1), x.dim(2));
        if grad_out.shape() != x.shape() {
            return Err(Error::shape(
                "se backward",
                format!("grad shape {:?} vs {:?}", grad_out.shape(), x.shape()),
            ));
        }

        // y = x * gate (gate broadcast over time).
        // dx gets the broadcast term now; the pooled path adds more below.
        let mut dx = Self::apply_gate(grad_out, &gate);

        // d(gate)[b,c] = sum_t grad_out[b,c,t] * x[b,c,t]
        let mut d_gate = Tensor::zeros(&[b, c]);
        for bi in 0..b {
            for ci in 0..c {
                let go = &grad_out.data()[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                let xr = &x.data()[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                d_gate.data_mut()[bi * c + ci] =
                    go.iter().zip(xr).map(|(&g, &v)| g * v).sum::<f64>();
            }
        }

        let d_h = self.excite.backward(&self.sigmoid.backward(&d_gate)?)?;
        let d_m = self.squeeze.backward(&self.relu.backward(&d_h)?)?;

        // Mean pool spreads d_m/L uniformly over time.
        for bi in 0..b {
            for ci in 0..c {
                let dmv = d_m.data()[bi * c + ci] / l as f64;
                for v in &mut dx.data_mut()[(bi * c + ci) * l..(bi * c + ci + 1) * l] {
                    *v += dmv;
                }
            }
        }
        Ok(dx)
    }
}

impl HasParams for SeBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.squeeze.visit(&super::join(prefix, "squeeze"), f);
        self.excite.visit(&super::join(prefix, "excite"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.squeeze.visit_mut(&super::join(prefix, "squeeze"), f);
        self.excite.visit_mut(&super::join(prefix, "excite"), f);
    }
}
