use super::{join, HasParams, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const LN_EPS: f64 = 1e-5;

/// Batch normalization over (batch, channel, time): statistics per channel
/// across batch and time. Training mode uses batch statistics and updates
/// running estimates; evaluation uses the running estimates. A training
/// batch of one item is rejected since its variance is not meaningful.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
}

impl BatchNorm1d {
    pub fn new(channels: usize) -> BatchNorm1d {
        BatchNorm1d {
            gamma: Param::new(Tensor::filled(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.dim(0)
    }

    fn check_input(&self, x: &Tensor, op: &'static str) -> Result<()> {
        if x.rank() != 3 || x.dim(1) != self.channels() {
            return Err(Error::shape(
                op,
                format!("want (batch, {}, time), got {:?}", self.channels(), x.shape()),
            ));
        }
        Ok(())
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x, "batchnorm1d")?;
        let (batch, c, l) = (x.dim(0), x.dim(1), x.dim(2));
        if batch < 2 {
            return Err(Error::Train(
                "batchnorm1d: training batch of one item has undefined variance".into(),
            ));
        }
        let n = (batch * l) as f64;
        let mut y = Tensor::zeros(x.shape());
        let mut x_hat = Tensor::zeros(x.shape());
        let mut inv_std = vec![0.0; c];
        for (ch, inv) in inv_std.iter_mut().enumerate() {
            let mut mean = 0.0;
            for b in 0..batch {
                let row = &x.data()[(b * c + ch) * l..(b * c + ch + 1) * l];
                mean += row.iter().sum::<f64>();
            }
            mean /= n;
            let mut var = 0.0;
            for b in 0..batch {
                let row = &x.data()[(b * c + ch) * l..(b * c + ch + 1) * l];
                var += row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>();
            }
            var /= n;
            let istd = 1.0 / (var + BN_EPS).sqrt();
            *inv = istd;
            let g = self.gamma.value.data()[ch];
            let be = self.beta.value.data()[ch];
            for b in 0..batch {
                let base = (b * c + ch) * l;
                for t in 0..l {
                    let xh = (x.data()[base + t] - mean) * istd;
                    x_hat.data_mut()[base + t] = xh;
                    y.data_mut()[base + t] = g * xh + be;
                }
            }
            // Running stats follow the usual convention: biased variance for
            // normalization, unbiased for the running estimate.
            let var_unbiased = var * n / (n - 1.0);
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean;
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * var_unbiased;
        }
        self.cache = Some(BnCache { x_hat, inv_std });
        Ok(y)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x, "batchnorm1d")?;
        let (batch, c, l) = (x.dim(0), x.dim(1), x.dim(2));
        let mut y = Tensor::zeros(x.shape());
        for ch in 0..c {
            let mean = self.running_mean.data()[ch];
            let istd = 1.0 / (self.running_var.data()[ch] + BN_EPS).sqrt();
            let g = self.gamma.value.data()[ch];
            let be = self.beta.value.data()[ch];
            for b in 0..batch {
                let base = (b * c + ch) * l;
                for t in 0..l {
                    y.data_mut()[base + t] = g * (x.data()[base + t] - mean) * istd + be;
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let BnCache { x_hat, inv_std } = self
            .cache
            .take()
            .ok_or_else(|| Error::Train("batchnorm1d backward without forward_train".into()))?;
        if grad_out.shape() != x_hat.shape() {
            return Err(Error::shape(
                "batchnorm1d backward",
                format!("grad shape {:?} vs cached {:?}", grad_out.shape(), x_hat.shape()),
            ));
        }
        let (batch, c, l) = (x_hat.dim(0), x_hat.dim(1), x_hat.dim(2));
        let n = (batch * l) as f64;
        let mut dx = Tensor::zeros(x_hat.shape());
        for (ch, &istd) in inv_std.iter().enumerate() {
            let g = self.gamma.value.data()[ch];
            let mut sum_g = 0.0; // sum of dy
            let mut sum_gx = 0.0; // sum of dy * x_hat
            for b in 0..batch {
                let base = (b * c + ch) * l;
                for t in 0..l {
                    let dy = grad_out.data()[base + t];
                    sum_g += dy;
                    sum_gx += dy * x_hat.data()[base + t];
                }
            }
            self.gamma.grad.data_mut()[ch] += sum_gx;
            self.beta.grad.data_mut()[ch] += sum_g;
            for b in 0..batch {
                let base = (b * c + ch) * l;
                for t in 0..l {
                    let dy = grad_out.data()[base + t];
                    let xh = x_hat.data()[base + t];
                    dx.data_mut()[base + t] =
                        g * istd * (dy - sum_g / n - xh * sum_gx / n);
                }
            }
        }
        Ok(dx)
    }
}

impl HasParams for BatchNorm1d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }
    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

/// Layer normalization over the channel axis, independently at every
/// (batch, time) position. Identical in training and evaluation.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    cache: Option<(Tensor, Vec<f64>)>, // (x_hat, inv_std per position)
}

impl LayerNorm {
    pub fn new(channels: usize) -> LayerNorm {
        LayerNorm {
            gamma: Param::new(Tensor::filled(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.dim(0)
    }

    fn compute(&self, x: &Tensor) -> Result<(Tensor, Tensor, Vec<f64>)> {
        if x.rank() != 3 || x.dim(1) != self.channels() {
            return Err(Error::shape(
                "layernorm",
                format!("want (batch, {}, time), got {:?}", self.channels(), x.shape()),
            ));
        }
        let (batch, c, l) = (x.dim(0), x.dim(1), x.dim(2));
        let cf = c as f64;
        let mut y = Tensor::zeros(x.shape());
        let mut x_hat = Tensor::zeros(x.shape());
        let mut inv_std = vec![0.0; batch * l];
        for b in 0..batch {
            for t in 0..l {
                let mut mean = 0.0;
                for ch in 0..c {
                    mean += x.data()[(b * c + ch) * l + t];
                }
                mean /= cf;
                let mut var = 0.0;
                for ch in 0..c {
                    let d = x.data()[(b * c + ch) * l + t] - mean;
                    var += d * d;
                }
                var /= cf;
                let istd = 1.0 / (var + LN_EPS).sqrt();
                inv_std[b * l + t] = istd;
                for ch in 0..c {
                    let idx = (b * c + ch) * l + t;
                    let xh = (x.data()[idx] - mean) * istd;
                    x_hat.data_mut()[idx] = xh;
                    y.data_mut()[idx] =
                        self.gamma.value.data()[ch] * xh + self.beta.value.data()[ch];
                }
            }
        }
        Ok((y, x_hat, inv_std))
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.compute(x)?.0)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, x_hat, inv_std) = self.compute(x)?;
        self.cache = Some((x_hat, inv_std));
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (x_hat, inv_std) = self
            .cache
            .take()
            .ok_or_else(|| Error::Train("layernorm backward without forward_train".into()))?;
        if grad_out.shape() != x_hat.shape() {
            return Err(Error::shape(
                "layernorm backward",
                format!("grad shape {:?} vs cached {:?}", grad_out.shape(), x_hat.shape()),
            ));
        }
        let (batch, c, l) = (x_hat.dim(0), x_hat.dim(1), x_hat.dim(2));
        let cf = c as f64;
        let mut dx = Tensor::zeros(x_hat.shape());
        for b in 0..batch {
            for t in 0..l {
                let istd = inv_std[b * l + t];
                let mut sum_g = 0.0;
                let mut sum_gx = 0.0;
                for ch in 0..c {
                    let idx = (b * c + ch) * l + t;
                    let g = grad_out.data()[idx] * self.gamma.value.data()[ch];
                    sum_g += g;
                    sum_gx += g * x_hat.data()[idx];
                }
                for ch in 0..c {
                    let idx = (b * c + ch) * l + t;
                    let dy = grad_out.data()[idx];
                    let xh = x_hat.data()[idx];
                    self.gamma.grad.data_mut()[ch] += dy * xh;
                    self.beta.grad.data_mut()[ch] += dy;
                    let g = dy * self.gamma.value.data()[ch];
                    dx.data_mut()[idx] = istd * (g - sum_g / cf - xh * sum_gx / cf);
                }
            }
        }
        Ok(dx)
    }
}

impl HasParams for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_check, FnOp, DEFAULT_EPS, DEFAULT_TOL};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn bn_train_normalizes_batch() {
        let mut bn = BatchNorm1d::new(2);
        let x = Tensor::uniform(&[4, 2, 5], -3.0, 3.0, &mut rng());
        let y = bn.forward_train(&x).unwrap();
        // gamma=1, beta=0 at init: per-channel mean ~0, var ~1.
        for ch in 0..2 {
            let mut vals = Vec::new();
            for b in 0..4 {
                vals.extend_from_slice(&y.data()[(b * 2 + ch) * 5..(b * 2 + ch + 1) * 5]);
            }
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / vals.len() as f64;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-4); // off by eps only
        }
    }

    #[test]
    fn bn_rejects_batch_of_one_in_training() {
        let mut bn = BatchNorm1d::new(2);
        let x = Tensor::zeros(&[1, 2, 5]);
        assert!(bn.forward_train(&x).is_err());
        // but evaluation mode is fine
        assert!(bn.forward_eval(&x).is_ok());
    }

    #[test]
    fn bn_eval_uses_running_stats() {
        let mut bn = BatchNorm1d::new(1);
        bn.running_mean.data_mut()[0] = 2.0;
        bn.running_var.data_mut()[0] = 4.0;
        let x = Tensor::from_vec(&[1, 1, 2], vec![2.0, 4.0]).unwrap();
        let y = bn.forward_eval(&x).unwrap();
        assert!((y.data()[0] - 0.0).abs() < 1e-6);
        assert!((y.data()[1] - 1.0).abs() < 1e-3); // 2/sqrt(4+eps)
    }

    #[test]
    fn bn_gradcheck() {
        let mut r = rng();
        let bn0 = BatchNorm1d::new(3);
        let x = Tensor::uniform(&[3, 3, 4], -2.0, 2.0, &mut r);
        let mut op = FnOp::new(
            "batchnorm.input",
            {
                let mut bn = bn0.clone();
                move |x: &Tensor| bn.forward_train(x)
            },
            {
                let mut bn = bn0.clone();
                move |x: &Tensor, g: &Tensor| {
                    bn.forward_train(x)?;
                    bn.zero_grads();
                    bn.backward(g)
                }
            },
        );
        let rep = finite_diff_check(&mut op, &x, DEFAULT_EPS, DEFAULT_TOL);
        assert!(rep.passed, "{rep}");
    }

    #[test]
    fn ln_normalizes_each_position() {
        let mut r = rng();
        let ln = LayerNorm::new(6);
        let x = Tensor::uniform(&[2, 6, 3], -5.0, 5.0, &mut r);
        let y = ln.forward_eval(&x).unwrap();
        for b in 0..2 {
            for t in 0..3 {
                let vals: Vec<f64> = (0..6).map(|ch| y.data()[(b * 6 + ch) * 3 + t]).collect();
                let mean: f64 = vals.iter().sum::<f64>() / 6.0;
                let var: f64 =
                    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 6.0;
                assert!(mean.abs() < 1e-12);
                assert!((var - 1.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn ln_constant_position_maps_to_beta() {
        let ln = LayerNorm::new(4);
        let x = Tensor::filled(&[1, 4, 2], 7.0);
        let y = ln.forward_eval(&x).unwrap();
        for &v in y.data() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn ln_gradcheck() {
        let mut r = rng();
        let ln0 = LayerNorm::new(5);
        let x = Tensor::uniform(&[2, 5, 3], -2.0, 2.0, &mut r);
        let mut op = FnOp::new(
            "layernorm.input",
            {
                let ln = ln0.clone();
                move |x: &Tensor| ln.forward_eval(x)
            },
            {
                let mut ln = ln0.clone();
                move |x: &Tensor, g: &Tensor| {
                    ln.forward_train(x)?;
                    ln.zero_grads();
                    ln.backward(g)
                }
            },
        );
        let rep = finite_diff_check(&mut op, &x, DEFAULT_EPS, DEFAULT_TOL);
        assert!(rep.passed, "{rep}");
    }
}
