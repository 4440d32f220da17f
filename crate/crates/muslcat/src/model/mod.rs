//! Model assembly: two multi-scale CAN branches fused along time, a
//! configurable backend (transformer encoder, single AAC block, or bare
//! mean pool), and a two-layer sigmoid classifier.

pub mod audit;
pub mod bert;
pub mod can;
pub mod checkpoint;
pub mod config;

pub use audit::{audit_params, reference_report, ParamAudit};
pub use bert::BertBackend;
pub use can::{build_can, can_forward_multilevel, Can};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{AacSettings, BackendConfig, BlockKind, CanConfig, ModelConfig};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::aac::AacBlock;
use crate::error::{Error, Result};
use crate::layers::{join, Dense, HasParams, Param, Relu, Sigmoid};
use crate::tensor::Tensor;

/// Joins the two branch outputs along time, low scale first. Channel widths
/// must match; either side may be empty in time, in which case the other
/// passes through unchanged.
pub fn fuse_multiscale(low: &Tensor, high: &Tensor) -> Result<Tensor> {
    if low.rank() != 3 || high.rank() != 3 {
        return Err(Error::shape(
            "fuse",
            format!("want rank-3 features, got {:?} and {:?}", low.shape(), high.shape()),
        ));
    }
    if low.dim(0) != high.dim(0) || low.dim(1) != high.dim(1) {
        return Err(Error::shape(
            "fuse",
            format!("branch shapes {:?} and {:?} do not align", low.shape(), high.shape()),
        ));
    }
    Tensor::concat(&[low, high], 2)
}

/// Temporal mean with a hand backward; the ablated backend and the pooling
/// stage after the backend AAC.
#[derive(Debug, Clone, Default)]
struct MeanPool {
    cache_len: Option<usize>,
}

impl MeanPool {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 3 || x.dim(2) == 0 {
            return Err(Error::shape(
                "mean pool",
                format!("want (batch, channels, time>0), got {:?}", x.shape()),
            ));
        }
        let (b, c, l) = (x.dim(0), x.dim(1), x.dim(2));
        let mut y = Tensor::zeros(&[b, c]);
        for bc in 0..b * c {
            let row = &x.data()[bc * l..(bc + 1) * l];
            y.data_mut()[bc] = row.iter().sum::<f64>() / l as f64;
        }
        Ok(y)
    }

    fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.forward(x)?;
        self.cache_len = Some(x.dim(2));
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let l = self
            .cache_len
            .take()
            .ok_or_else(|| Error::Train("mean pool backward without forward_train".into()))?;
        let (b, c) = (grad.dim(0), grad.dim(1));
        let mut dx = Tensor::zeros(&[b, c, l]);
        for bc in 0..b * c {
            let g = grad.data()[bc] / l as f64;
            for v in &mut dx.data_mut()[bc * l..(bc + 1) * l] {
                *v = g;
            }
        }
        Ok(dx)
    }
}

// One per model, so the size spread between a full encoder stack and a bare
// pooling slot costs nothing; boxing would only add indirection.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
pub enum Backend {
    Bert(BertBackend),
    Aac { aac: AacBlock, pool: MeanPoolSlot },
    Pool(MeanPoolSlot),
}

/// Public wrapper so the enum stays constructible only in this module while
/// the variants remain matchable.
#[derive(Debug, Clone, Default)]
pub struct MeanPoolSlot(MeanPool);

impl Backend {
    fn forward_eval(&self, fused: &Tensor) -> Result<Tensor> {
        match self {
            Backend::Bert(b) => b.forward_eval(fused),
            Backend::Aac { aac, pool } => pool.0.forward(&aac.forward_eval(fused)?),
            Backend::Pool(pool) => pool.0.forward(fused),
        }
    }

    fn forward_train(&mut self, fused: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
        match self {
            Backend::Bert(b) => b.forward_train(fused, rng),
            Backend::Aac { aac, pool } => pool.0.forward_train(&aac.forward_train(fused)?),
            Backend::Pool(pool) => pool.0.forward_train(fused),
        }
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        match self {
            Backend::Bert(b) => b.backward(grad),
            Backend::Aac { aac, pool } => aac.backward(&pool.0.backward(grad)?),
            Backend::Pool(pool) => pool.0.backward(grad),
        }
    }
}

impl HasParams for Backend {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        match self {
            Backend::Bert(b) => b.visit(prefix, f),
            Backend::Aac { aac, .. } => aac.visit(&join(prefix, "aac"), f),
            Backend::Pool(_) => {}
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        match self {
            Backend::Bert(b) => b.visit_mut(prefix, f),
            Backend::Aac { aac, .. } => aac.visit_mut(&join(prefix, "aac"), f),
            Backend::Pool(_) => {}
        }
    }
}

#[derive(Debug, Clone)]
pub struct Classifier {
    pub fc1: Dense,
    relu: Relu,
    pub fc2: Dense,
    sigmoid: Sigmoid,
}

impl Classifier {
    fn new(d_in: usize, hidden: usize, n_tags: usize, rng: &mut impl Rng) -> Classifier {
        Classifier {
            fc1: Dense::new(d_in, hidden, rng),
            relu: Relu::new(),
            fc2: Dense::new(hidden, n_tags, rng),
            sigmoid: Sigmoid::new(),
        }
    }

    fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.relu.forward_eval(&self.fc1.forward_eval(x)?);
        Ok(self.sigmoid.forward_eval(&self.fc2.forward_eval(&h)?))
    }

    fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let h = self.relu.forward_train(&self.fc1.forward_train(x)?);
        Ok(self.sigmoid.forward_train(&self.fc2.forward_train(&h)?))
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let g = self.sigmoid.backward(grad)?;
        let g = self.fc2.backward(&g)?;
        let g = self.relu.backward(&g)?;
        self.fc1.backward(&g)
    }
}

impl HasParams for Classifier {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub low: Option<Can>,
    pub high: Option<Can>,
    pub backend: Backend,
    pub classifier: Classifier,
    /// Time extents of the fused halves, cached by forward_train.
    fuse_lens: Option<(usize, usize)>,
}

/// Deterministic construction: one seeded stream initializes every
/// component in declaration order.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let low = match &cfg.low {
        Some(c) => Some(build_can(c, &cfg.aac, cfg.d_max, cfg.sample_len, &mut rng)?),
        None => None,
    };
    let high = match &cfg.high {
        Some(c) => Some(build_can(c, &cfg.aac, cfg.d_max, cfg.sample_len, &mut rng)?),
        None => None,
    };
    let frontend_width = cfg.frontend_width()?;
    let backend = match &cfg.backend {
        BackendConfig::Bert { layers, width, heads, dropout, ffn_width } => {
            Backend::Bert(BertBackend::new(
                frontend_width,
                *width,
                *heads,
                *layers,
                *ffn_width,
                *dropout,
                cfg.d_max,
                &mut rng,
            )?)
        }
        BackendConfig::Aac { width } => Backend::Aac {
            aac: AacBlock::new(
                frontend_width,
                *width,
                cfg.aac.k_ratio,
                cfg.aac.v_ratio,
                cfg.aac.filter,
                cfg.aac.n_h,
                cfg.d_max,
                cfg.aac.relative,
                &mut rng,
            )?,
            pool: MeanPoolSlot::default(),
        },
        BackendConfig::Pool => Backend::Pool(MeanPoolSlot::default()),
    };
    let classifier =
        Classifier::new(cfg.classifier_input()?, cfg.classifier_hidden, cfg.n_tags, &mut rng);
    Ok(Model { cfg: cfg.clone(), low, high, backend, classifier, fuse_lens: None })
}

impl Model {
    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 3 || x.dim(1) != 1 {
            return Err(Error::shape(
                "model",
                format!("want (batch, 1, {}), got {:?}", self.cfg.sample_len, x.shape()),
            ));
        }
        if x.dim(2) != self.cfg.sample_len {
            return Err(Error::shape(
                "model",
                format!("expected input length {}, got {}", self.cfg.sample_len, x.dim(2)),
            ));
        }
        if x.dim(0) == 0 {
            return Err(Error::shape("model", "empty batch"));
        }
        Ok(())
    }

    fn fuse_eval(&self, x: &Tensor) -> Result<Tensor> {
        match (&self.low, &self.high) {
            (Some(l), Some(h)) => {
                fuse_multiscale(&l.forward_multilevel_eval(x)?, &h.forward_multilevel_eval(x)?)
            }
            (Some(l), None) => l.forward_multilevel_eval(x),
            (None, Some(h)) => h.forward_multilevel_eval(x),
            (None, None) => Err(Error::Config("model has no frontend branch".into())),
        }
    }

    /// Tag probabilities, (B, n_tags).
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let fused = self.fuse_eval(x)?;
        let feat = self.backend.forward_eval(&fused)?;
        self.classifier.forward_eval(&feat)
    }

    pub fn forward_train(&mut self, x: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
        self.check_input(x)?;
        let fused = match (&mut self.low, &mut self.high) {
            (Some(l), Some(h)) => {
                let lo = l.forward_multilevel_train(x)?;
                let hi = h.forward_multilevel_train(x)?;
                self.fuse_lens = Some((lo.dim(2), hi.dim(2)));
                fuse_multiscale(&lo, &hi)?
            }
            (Some(l), None) => {
                let lo = l.forward_multilevel_train(x)?;
                self.fuse_lens = Some((lo.dim(2), 0));
                lo
            }
            (None, Some(h)) => {
                let hi = h.forward_multilevel_train(x)?;
                self.fuse_lens = Some((0, hi.dim(2)));
                hi
            }
            (None, None) => return Err(Error::Config("model has no frontend branch".into())),
        };
        let feat = self.backend.forward_train(&fused, rng)?;
        self.classifier.forward_train(&feat)
    }

    /// Takes dLoss/dProbabilities, accumulates parameter gradients, and
    /// returns the waveform gradient.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (l_low, l_high) = self
            .fuse_lens
            .take()
            .ok_or_else(|| Error::Train("model backward without forward_train".into()))?;
        let g = self.classifier.backward(grad)?;
        let dfused = self.backend.backward(&g)?;
        match (&mut self.low, &mut self.high) {
            (Some(l), Some(h)) => {
                let mut dx = l.backward(&dfused.slice_axis(2, 0, l_low)?)?;
                dx.add_scaled(&h.backward(&dfused.slice_axis(2, l_low, l_high)?)?, 1.0)?;
                Ok(dx)
            }
            (Some(l), None) => l.backward(&dfused),
            (None, Some(h)) => h.backward(&dfused),
            (None, None) => unreachable!("checked in forward"),
        }
    }
}

impl HasParams for Model {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        if let Some(l) = &self.low {
            l.visit(&join(prefix, "low"), f);
        }
        if let Some(h) = &self.high {
            h.visit(&join(prefix, "high"), f);
        }
        self.backend.visit(&join(prefix, "backend"), f);
        self.classifier.visit(&join(prefix, "classifier"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        if let Some(l) = &mut self.low {
            l.visit_mut(&join(prefix, "low"), f);
        }
        if let Some(h) = &mut self.high {
            h.visit_mut(&join(prefix, "high"), f);
        }
        self.backend.visit_mut(&join(prefix, "backend"), f);
        self.classifier.visit_mut(&join(prefix, "classifier"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        if let Some(l) = &self.low {
            l.visit_buffers(&join(prefix, "low"), f);
        }
        if let Some(h) = &self.high {
            h.visit_buffers(&join(prefix, "high"), f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let Some(l) = &mut self.low {
            l.visit_buffers_mut(&join(prefix, "low"), f);
        }
        if let Some(h) = &mut self.high {
            h.visit_buffers_mut(&join(prefix, "high"), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_check_sampled, FnOp, DEFAULT_EPS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fuse_concatenates_low_then_high() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let low = Tensor::uniform(&[2, 3, 4], -1.0, 1.0, &mut rng);
        let high = Tensor::uniform(&[2, 3, 6], -1.0, 1.0, &mut rng);
        let fused = fuse_multiscale(&low, &high).unwrap();
        assert_eq!(fused.shape(), &[2, 3, 10]);
        let head = fused.slice_axis(2, 0, 4).unwrap();
        assert_eq!(head.data(), low.data());
        let tail = fused.slice_axis(2, 4, 6).unwrap();
        assert_eq!(tail.data(), high.data());
    }

    #[test]
    fn fuse_with_empty_side_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::uniform(&[2, 3, 5], -1.0, 1.0, &mut rng);
        let empty = Tensor::zeros(&[2, 3, 0]);
        let fused = fuse_multiscale(&x, &empty).unwrap();
        assert_eq!(fused.shape(), x.shape());
        assert_eq!(fused.data(), x.data());
        let fused = fuse_multiscale(&empty, &x).unwrap();
        assert_eq!(fused.data(), x.data());
    }

    #[test]
    fn fuse_rejects_mismatched_channels() {
        let a = Tensor::zeros(&[2, 3, 4]);
        let b = Tensor::zeros(&[2, 4, 4]);
        assert!(fuse_multiscale(&a, &b).is_err());
    }

    #[test]
    fn wrong_input_length_names_expectation() {
        let cfg = ModelConfig::tiny_muslcan(4);
        let model = build_model(&cfg, 0).unwrap();
        let x = Tensor::zeros(&[1, 1, 1000]);
        let err = model.forward_eval(&x).unwrap_err().to_string();
        assert!(err.contains("expected input length 2048"), "{err}");
    }

    #[test]
    fn forward_shapes_for_all_backends() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::uniform(&[2, 1, 2048], -1.0, 1.0, &mut rng);
        for cfg in [
            ModelConfig::tiny_muslcan(4),
            ModelConfig::tiny_muslcat(4),
            ModelConfig { backend: BackendConfig::Pool, ..ModelConfig::tiny_muslcan(4) },
        ] {
            let model = build_model(&cfg, 3).unwrap();
            let y = model.forward_eval(&x).unwrap();
            assert_eq!(y.shape(), &[2, 4]);
            for &p in y.data() {
                assert!(p > 0.0 && p < 1.0, "probability {p} outside (0,1)");
            }
        }
    }

    #[test]
    fn seeded_build_is_reproducible() {
        let cfg = ModelConfig::tiny_muslcat(4);
        let a = build_model(&cfg, 77).unwrap();
        let b = build_model(&cfg, 77).unwrap();
        let mut same = true;
        a.visit("", &mut |name, p| {
            let mut other = None;
            b.visit("", &mut |n2, p2| {
                if n2 == name {
                    other = Some(p2.value.clone());
                }
            });
            if other.map(|o| o.data() != p.value.data()).unwrap_or(true) {
                same = false;
            }
        });
        assert!(same);
        let c = build_model(&cfg, 78).unwrap();
        let mut first_w = Vec::new();
        a.visit("", &mut |_, p| {
            if first_w.is_empty() {
                first_w = p.value.data().to_vec();
            }
        });
        let mut first_w_c = Vec::new();
        c.visit("", &mut |_, p| {
            if first_w_c.is_empty() {
                first_w_c = p.value.data().to_vec();
            }
        });
        assert_ne!(first_w, first_w_c);
    }

    #[test]
    fn end_to_end_gradcheck_tiny_muslcan() {
        let cfg = ModelConfig::tiny_muslcan(4);
        let model = build_model(&cfg, 5).unwrap();
        assert!(model.param_count() <= 40_000, "tiny model grew: {}", model.param_count());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::uniform(&[2, 1, 2048], -0.9, 0.9, &mut rng);
        let mut op = FnOp::new(
            "model.muslcan.input",
            |x: &Tensor| {
                let mut m = model.clone();
                let mut r = ChaCha8Rng::seed_from_u64(0);
                m.forward_train(x, &mut r)
            },
            |x: &Tensor, g: &Tensor| {
                let mut m = model.clone();
                let mut r = ChaCha8Rng::seed_from_u64(0);
                m.forward_train(x, &mut r)?;
                m.backward(g)
            },
        );
        let rep = finite_diff_check_sampled(&mut op, &x, DEFAULT_EPS, 1e-3, 50);
        assert!(rep.passed, "{rep}");
    }

    #[test]
    fn backend_param_prefixes() {
        let model = build_model(&ModelConfig::tiny_muslcat(4), 1).unwrap();
        let mut names = Vec::new();
        model.visit("", &mut |n, _| names.push(n.to_string()));
        assert!(names.iter().any(|n| n == "backend/cls"));
        assert!(names.iter().any(|n| n == "backend/layer1/mha/rel"));
        assert!(names.iter().any(|n| n == "classifier/fc2/b"));
        assert!(names.iter().any(|n| n.starts_with("low/block0")));
        assert!(names.iter().any(|n| n.starts_with("high/block10")));
    }
}
