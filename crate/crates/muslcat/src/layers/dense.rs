use super::{join, HasParams, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;

/// Fully connected layer on (batch, features).
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Param, // (out, in)
    pub b: Param, // (out)
    cache_x: Option<Tensor>,
}

impl Dense {
    pub fn new(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Dense {
        let limit = (6.0 / d_in as f64).sqrt();
        Dense {
            w: Param::new(Tensor::uniform(&[d_out, d_in], -limit, limit, rng)),
            b: Param::new(Tensor::zeros(&[d_out])),
            cache_x: None,
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.value.dim(1)
    }

    pub fn d_out(&self) -> usize {
        self.w.value.dim(0)
    }

    fn compute(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.dim(1) != self.d_in() {
            return Err(Error::shape(
                "dense",
                format!("want (batch, {}), got {:?}", self.d_in(), x.shape()),
            ));
        }
        let (batch, d_in, d_out) = (x.dim(0), self.d_in(), self.d_out());
        let mut y = Tensor::zeros(&[batch, d_out]);
        let w = self.w.value.data();
        let bias = self.b.value.data();
        for bi in 0..batch {
            let x_row = &x.data()[bi * d_in..(bi + 1) * d_in];
            let y_row = &mut y.data_mut()[bi * d_out..(bi + 1) * d_out];
            for (o, yv) in y_row.iter_mut().enumerate() {
                let w_row = &w[o * d_in..(o + 1) * d_in];
                let mut acc = bias[o];
                for (xv, wv) in x_row.iter().zip(w_row) {
                    acc += xv * wv;
                }
                *yv = acc;
            }
        }
        Ok(y)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.compute(x)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.compute(x)?;
        self.cache_x = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self
            .cache_x
            .take()
            .ok_or_else(|| Error::Train("dense backward without forward_train".into()))?;
        let (batch, d_in, d_out) = (x.dim(0), self.d_in(), self.d_out());
        if grad_out.shape() != [batch, d_out] {
            return Err(Error::shape(
                "dense backward",
                format!("grad shape {:?} vs ({batch}, {d_out})", grad_out.shape()),
            ));
        }
        let mut dx = Tensor::zeros(&[batch, d_in]);
        for bi in 0..batch {
            let g_row = &grad_out.data()[bi * d_out..(bi + 1) * d_out];
            let x_row = &x.data()[bi * d_in..(bi + 1) * d_in];
            for (o, &gv) in g_row.iter().enumerate() {
                self.b.grad.data_mut()[o] += gv;
                let dw_row = &mut self.w.grad.data_mut()[o * d_in..(o + 1) * d_in];
                for (dwv, &xv) in dw_row.iter_mut().zip(x_row) {
                    *dwv += gv * xv;
                }
            }
            let dx_row = &mut dx.data_mut()[bi * d_in..(bi + 1) * d_in];
            let w = self.w.value.data();
            for (o, &gv) in g_row.iter().enumerate() {
                let w_row = &w[o * d_in..(o + 1) * d_in];
                for (dxv, &wv) in dx_row.iter_mut().zip(w_row) {
                    *dxv += gv * wv;
                }
            }
        }
        Ok(dx)
    }
}

impl HasParams for Dense {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "w"), &self.w);
        f(&join(prefix, "b"), &self.b);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

/// Elementwise max(0, x). Works on any shape.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Relu {
        Relu::default()
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        x.map(|v| v.max(0.0))
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        self.mask = Some(x.data().iter().map(|&v| v > 0.0).collect());
        x.map(|v| v.max(0.0))
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .take()
            .ok_or_else(|| Error::Train("relu backward without forward_train".into()))?;
        let mut dx = grad_out.clone();
        for (v, &keep) in dx.data_mut().iter_mut().zip(&mask) {
            if !keep {
                *v = 0.0;
            }
        }
        Ok(dx)
    }
}

/// Gaussian error linear unit, tanh form.
#[derive(Debug, Clone, Default)]
pub struct Gelu {
    cache_x: Option<Tensor>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu_val(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Gelu {
    pub fn new() -> Gelu {
        Gelu::default()
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        x.map(gelu_val)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        self.cache_x = Some(x.clone());
        x.map(gelu_val)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self
            .cache_x
            .take()
            .ok_or_else(|| Error::Train("gelu backward without forward_train".into()))?;
        x.zip_map(grad_out, |xv, gv| gv * gelu_grad(xv))
    }
}

/// Inverted dropout: in training each element is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate); evaluation is the
/// identity. Rate 0 is the exact identity in both modes.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Dropout> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        Ok(Dropout { rate, mask: None })
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        x.clone()
    }

    pub fn forward_train(&mut self, x: &Tensor, rng: &mut impl Rng) -> Tensor {
        if self.rate == 0.0 {
            self.mask = Some(vec![1.0; x.numel()]);
            return x.clone();
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..x.numel())
            .map(|_| {
                if rng.random::<f64>() < self.rate {
                    0.0
                } else {
                    scale
                }
            })
            .collect();
        let mut y = x.clone();
        for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.mask = Some(mask);
        y
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .take()
            .ok_or_else(|| Error::Train("dropout backward without forward_train".into()))?;
        let mut dx = grad_out.clone();
        for (v, &m) in dx.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        Ok(dx)
    }
}

/// Elementwise logistic function.
#[derive(Debug, Clone, Default)]
pub struct Sigmoid {
    cache_y: Option<Tensor>,
}

impl Sigmoid {
    pub fn new() -> Sigmoid {
        Sigmoid::default()
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        x.map(|v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let y = self.forward_eval(x);
        self.cache_y = Some(y.clone());
        y
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let y = self
            .cache_y
            .take()
            .ok_or_else(|| Error::Train("sigmoid backward without forward_train".into()))?;
        y.zip_map(grad_out, |yv, gv| gv * yv * (1.0 - yv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_check, FnOp, DEFAULT_EPS, DEFAULT_TOL};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(21)
    }

    #[test]
    fn dense_hand_example() {
        let mut d = Dense::new(2, 2, &mut rng());
        d.w.value = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        d.b.value = Tensor::from_vec(&[2], vec![0.5, -0.5]).unwrap();
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
        let y = d.forward_eval(&x).unwrap();
        assert_eq!(y.data(), &[3.5, 6.5]);
    }

    #[test]
    fn dense_param_count() {
        let d = Dense::new(512, 50, &mut rng());
        assert_eq!(d.param_count(), 512 * 50 + 50);
    }

    #[test]
    fn dense_gradcheck_input_and_weights() {
        let mut r = rng();
        let d0 = Dense::new(4, 3, &mut r);
        let x = Tensor::uniform(&[2, 4], -1.0, 1.0, &mut r);
        let mut op = FnOp::new(
            "dense.input",
            {
                let d = d0.clone();
                move |x: &Tensor| d.forward_eval(x)
            },
            {
                let mut d = d0.clone();
                move |x: &Tensor, g: &Tensor| {
                    d.forward_train(x)?;
                    d.zero_grads();
                    d.backward(g)
                }
            },
        );
        let rep = finite_diff_check(&mut op, &x, DEFAULT_EPS, DEFAULT_TOL);
        assert!(rep.passed, "{rep}");

        let x2 = x.clone();
        let mut op_w = FnOp::new(
            "dense.weights",
            {
                let mut d = d0.clone();
                let x2 = x2.clone();
                move |w: &Tensor| {
                    d.w.value = w.clone();
                    d.forward_eval(&x2)
                }
            },
            {
                let mut d = d0.clone();
                move |w: &Tensor, g: &Tensor| {
                    d.w.value = w.clone();
                    d.forward_train(&x2)?;
                    d.zero_grads();
                    d.backward(g)?;
                    Ok(d.w.grad.clone())
                }
            },
        );
        let w0 = d0.w.value.clone();
        let rep = finite_diff_check(&mut op_w, &w0, DEFAULT_EPS, DEFAULT_TOL);
        assert!(rep.passed, "{rep}");
    }

    #[test]
    fn dropout_zero_rate_is_exact_identity() {
        let mut d = Dropout::new(0.0).unwrap();
        let x = Tensor::uniform(&[3, 7], -2.0, 2.0, &mut rng());
        let y = d.forward_train(&x, &mut rng());
        assert_eq!(x.data(), y.data());
        assert_eq!(x.data(), d.forward_eval(&x).data());
    }

    #[test]
    fn dropout_rejects_bad_rates() {
        assert!(Dropout::new(1.0).is_err());
        assert!(Dropout::new(-0.1).is_err());
        assert!(Dropout::new(0.999).is_ok());
    }

    #[test]
    fn dropout_train_zeroes_and_rescales() {
        let mut d = Dropout::new(0.5).unwrap();
        let x = Tensor::filled(&[1, 10000], 1.0);
        let y = d.forward_train(&x, &mut rng());
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count();
        let kept = y.data().iter().filter(|&&v| v != 0.0).count();
        assert!(zeros > 4500 && zeros < 5500, "zeros {zeros}");
        for &v in y.data() {
            assert!(v == 0.0 || (v - 2.0).abs() < 1e-12);
        }
        // Expectation preserved roughly
        let mean: f64 = y.data().iter().sum::<f64>() / y.numel() as f64;
        assert!((mean - 1.0).abs() < 0.1, "mean {mean} kept {kept}");
    }

    #[test]
    fn gelu_matches_known_points_and_gradchecks() {
        assert_eq!(gelu_val(0.0), 0.0);
        assert!((gelu_val(10.0) - 10.0).abs() < 1e-6); // saturates to identity
        assert!(gelu_val(-10.0).abs() < 1e-6);
        let x = Tensor::from_vec(&[5], vec![-2.0, -0.5, 0.1, 0.7, 1.9]).unwrap();
        let mut op = FnOp::new(
            "gelu",
            |x: &Tensor| Ok(Gelu::new().forward_eval(x)),
            |x: &Tensor, g: &Tensor| {
                let mut gl = Gelu::new();
                gl.forward_train(x);
                gl.backward(g)
            },
        );
        let rep = finite_diff_check(&mut op, &x, DEFAULT_EPS, DEFAULT_TOL);
        assert!(rep.passed, "{rep}");
    }

    #[test]
    fn sigmoid_range_and_gradcheck() {
        let x = Tensor::from_vec(&[4], vec![-30.0, -1.0, 1.0, 30.0]).unwrap();
        let y = Sigmoid::new().forward_eval(&x);
        for &v in y.data() {
            assert!(v > 0.0 && v < 1.0);
        }
        let mut op = FnOp::new(
            "sigmoid",
            |x: &Tensor| Ok(Sigmoid::new().forward_eval(x)),
            |x: &Tensor, g: &Tensor| {
                let mut s = Sigmoid::new();
                s.forward_train(x);
                s.backward(g)
            },
        );
        let xs = Tensor::from_vec(&[3], vec![-1.2, 0.3, 2.0]).unwrap();
        let rep = finite_diff_check(&mut op, &xs, DEFAULT_EPS, DEFAULT_TOL);
        assert!(rep.passed, "{rep}");
    }
}
