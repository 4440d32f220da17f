use super::{join, HasParams, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rayon::prelude::*;

/// 1-D convolution over (batch, channel, time).
///
/// Output length is (L + 2*padding - filter) / stride + 1. Weights use
/// He-style fan-in scaled uniform init, biases start at zero.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: Param, // (c_out, c_in, filter)
    pub b: Param, // (c_out)
    pub stride: usize,
    pub padding: usize,
    cache_x: Option<Tensor>,
}

impl Conv1d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        filter: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Result<Conv1d> {
        if c_in == 0 || c_out == 0 || filter == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "conv1d: zero extent in (c_in {c_in}, c_out {c_out}, filter {filter}, stride {stride})"
            )));
        }
        let fan_in = (c_in * filter) as f64;
        let limit = (6.0 / fan_in).sqrt();
        Ok(Conv1d {
            w: Param::new(Tensor::uniform(&[c_out, c_in, filter], -limit, limit, rng)),
            b: Param::new(Tensor::zeros(&[c_out])),
            stride,
            padding,
            cache_x: None,
        })
    }

    pub fn c_in(&self) -> usize {
        self.w.value.dim(1)
    }

    pub fn c_out(&self) -> usize {
        self.w.value.dim(0)
    }

    pub fn filter(&self) -> usize {
        self.w.value.dim(2)
    }

    pub fn out_len(&self, l_in: usize) -> Result<usize> {
        let f = self.filter();
        if l_in + 2 * self.padding < f {
            return Err(Error::shape(
                "conv1d",
                format!(
                    "input length {} with padding {} is shorter than filter {}",
                    l_in, self.padding, f
                ),
            ));
        }
        Ok((l_in + 2 * self.padding - f) / self.stride + 1)
    }

    fn compute(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 3 || x.dim(1) != self.c_in() {
            return Err(Error::shape(
                "conv1d",
                format!(
                    "want (batch, {}, time), got {:?}",
                    self.c_in(),
                    x.shape()
                ),
            ));
        }
        let (batch, c_in, l_in) = (x.dim(0), x.dim(1), x.dim(2));
        let l_out = self.out_len(l_in)?;
        let (c_out, f, s, p) = (self.c_out(), self.filter(), self.stride, self.padding);
        let mut y = Tensor::zeros(&[batch, c_out, l_out]);
        let w = self.w.value.data();
        let bias = self.b.value.data();
        let xd = x.data();

        // One parallel task per output row (batch item x output channel).
        y.data_mut()
            .par_chunks_mut(l_out)
            .enumerate()
            .for_each(|(row, y_row)| {
                let bi = row / c_out;
                let co = row % c_out;
                y_row.fill(bias[co]);
                for ci in 0..c_in {
                    let x_row = &xd[(bi * c_in + ci) * l_in..(bi * c_in + ci + 1) * l_in];
                    let w_row = &w[(co * c_in + ci) * f..(co * c_in + ci + 1) * f];
                    for (k, &wv) in w_row.iter().enumerate() {
                        // valid t satisfy 0 <= t*s + k - p < l_in
                        let t_lo = p.saturating_sub(k).div_ceil(s).min(l_out);
                        let t_hi = if l_in + p > k {
                            (((l_in + p - k - 1) / s) + 1).min(l_out)
                        } else {
                            0
                        };
                        let mut j = t_lo * s + k - p;
                        for yv in &mut y_row[t_lo..t_hi] {
                            *yv += wv * x_row[j];
                            j += s;
                        }
                    }
                }
            });
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
            .ok_or_else(|| Error::Train("conv1d backward without forward_train".into()))?;
        let (batch, c_in, l_in) = (x.dim(0), x.dim(1), x.dim(2));
        let (c_out, f, s, p) = (self.c_out(), self.filter(), self.stride, self.padding);
        let l_out = grad_out.dim(2);
        if grad_out.shape() != [batch, c_out, l_out] || l_out != self.out_len(l_in)? {
            return Err(Error::shape(
                "conv1d backward",
                format!("grad shape {:?} does not match input {:?}", grad_out.shape(), x.shape()),
            ));
        }
        let xd = x.data();
        let gd = grad_out.data();

        // dw[co,ci,k] += sum_{b,t} g[b,co,t] * x[b,ci,t*s+k-p]; db likewise.
        let dw = self.w.grad.data_mut();
        let db = self.b.grad.data_mut();
        dw.par_chunks_mut(c_in * f)
            .zip(db.par_iter_mut())
            .enumerate()
            .for_each(|(co, (dw_co, db_co))| {
                for bi in 0..batch {
                    let g_row = &gd[(bi * c_out + co) * l_out..(bi * c_out + co + 1) * l_out];
                    *db_co += g_row.iter().sum::<f64>();
                    for ci in 0..c_in {
                        let x_row = &xd[(bi * c_in + ci) * l_in..(bi * c_in + ci + 1) * l_in];
                        let dw_row = &mut dw_co[ci * f..(ci + 1) * f];
                        for (k, dwv) in dw_row.iter_mut().enumerate() {
                            let t_lo = p.saturating_sub(k).div_ceil(s).min(l_out);
                            let t_hi = if l_in + p > k {
                                (((l_in + p - k - 1) / s) + 1).min(l_out)
                            } else {
                                0
                            };
                            let mut j = t_lo * s + k - p;
                            let mut acc = 0.0;
                            for &gv in &g_row[t_lo..t_hi] {
                                acc += gv * x_row[j];
                                j += s;
                            }
                            *dwv += acc;
                        }
                    }
                }
            });

        // dx[b,ci,j] = sum_{co,k,t: t*s+k-p=j} w[co,ci,k] * g[b,co,t]
        let w = self.w.value.data();
        let mut dx = Tensor::zeros(&[batch, c_in, l_in]);
        dx.data_mut()
            .par_chunks_mut(l_in)
            .enumerate()
            .for_each(|(row, dx_row)| {
                let bi = row / c_in;
                let ci = row % c_in;
                for co in 0..c_out {
                    let g_row = &gd[(bi * c_out + co) * l_out..(bi * c_out + co + 1) * l_out];
                    let w_row = &w[(co * c_in + ci) * f..(co * c_in + ci + 1) * f];
                    for (k, &wv) in w_row.iter().enumerate() {
                        let t_lo = p.saturating_sub(k).div_ceil(s).min(l_out);
                        let t_hi = if l_in + p > k {
                            (((l_in + p - k - 1) / s) + 1).min(l_out)
                        } else {
                            0
                        };
                        let mut j = t_lo * s + k - p;
                        for &gv in &g_row[t_lo..t_hi] {
                            dx_row[j] += wv * gv;
                            j += s;
                        }
                    }
                }
            });
        Ok(dx)
    }
}

impl HasParams for Conv1d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "w"), &self.w);
        f(&join(prefix, "b"), &self.b);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

/// Max pooling over time. Ties resolve to the leftmost position, which the
/// backward scatter relies on.
#[derive(Debug, Clone)]
pub struct MaxPool1d {
    pub filter: usize,
    pub stride: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>, // (argmax flat indices, input shape)
}

impl MaxPool1d {
    pub fn new(filter: usize, stride: usize) -> MaxPool1d {
        MaxPool1d {
            filter,
            stride,
            cache: None,
        }
    }

    pub fn out_len(&self, l_in: usize) -> Result<usize> {
        if l_in < self.filter {
            return Err(Error::shape(
                "maxpool1d",
                format!("window {} larger than input length {}", self.filter, l_in),
            ));
        }
        Ok((l_in - self.filter) / self.stride + 1)
    }

    fn compute(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        if x.rank() != 3 {
            return Err(Error::shape(
                "maxpool1d",
                format!("want rank 3, got {:?}", x.shape()),
            ));
        }
        let (batch, c, l_in) = (x.dim(0), x.dim(1), x.dim(2));
        let l_out = self.out_len(l_in)?;
        let mut y = Tensor::zeros(&[batch, c, l_out]);
        let mut arg = vec![0usize; batch * c * l_out];
        let xd = x.data();
        for row in 0..batch * c {
            let x_row = &xd[row * l_in..(row + 1) * l_in];
            for t in 0..l_out {
                let start = t * self.stride;
                let window = &x_row[start..start + self.filter];
                let mut best = 0;
                let mut best_v = window[0];
                for (j, &v) in window.iter().enumerate().skip(1) {
                    if v > best_v {
                        best_v = v;
                        best = j;
                    }
                }
                y.data_mut()[row * l_out + t] = best_v;
                arg[row * l_out + t] = row * l_in + start + best;
            }
        }
        Ok((y, arg))
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.compute(x)?.0)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, arg) = self.compute(x)?;
        self.cache = Some((arg, x.shape().to_vec()));
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (arg, in_shape) = self
            .cache
            .take()
            .ok_or_else(|| Error::Train("maxpool1d backward without forward_train".into()))?;
        let mut dx = Tensor::zeros(&in_shape);
        for (i, &src) in arg.iter().enumerate() {
            dx.data_mut()[src] += grad_out.data()[i];
        }
        Ok(dx)
    }
}
