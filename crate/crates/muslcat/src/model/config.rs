//! Declarative model descriptions. Every layer of both CAN branches, the
//! fusion stages, the backend, and the classifier is built from these
//! structs, so architecture variants (reference scale, desk scale, ablations)
//! are config values rather than code paths.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// What a CAN layer slot holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    /// conv + batch norm + ReLU
    Conv,
    /// conv + batch norm + ReLU + squeeze-excitation gate
    Se,
    /// attention-augmented convolution
    Aac,
}

/// Ratios and head count shared by every AAC block in a model, plus the
/// toggle for relative position logits inside their attention branches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AacSettings {
    pub k_ratio: f64,
    pub v_ratio: f64,
    pub n_h: usize,
    pub filter: usize,
    pub relative: bool,
}

impl Default for AacSettings {
    fn default() -> AacSettings {
        AacSettings { k_ratio: 0.25, v_ratio: 0.25, n_h: 8, filter: 3, relative: true }
    }
}

/// One frontend branch. The first layer is a strided filterbank over the raw
/// waveform; later layers are length-preserving blocks with max pools
/// (window 3, stride 3) after the layers listed in `pools`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CanConfig {
    pub name: String,
    pub first_filter: usize,
    pub first_stride: usize,
    /// Output channels per layer; the length sets the branch depth.
    pub widths: Vec<usize>,
    pub kinds: Vec<BlockKind>,
    /// 0-based layer indices followed by a max pool.
    pub pools: Vec<usize>,
    pub se_ratio: usize,
    /// How many of the deepest layers feed the multi-level concat.
    pub multilevel_span: usize,
}

impl CanConfig {
    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    /// Channel width of the multi-level output (shared by the top layers).
    pub fn top_width(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.depth();
        if d == 0 {
            return Err(Error::Config(format!("branch {}: no layers", self.name)));
        }
        if self.kinds.len() != d {
            return Err(Error::Config(format!(
                "branch {}: {} kinds for {} layers",
                self.name,
                self.kinds.len(),
                d
            )));
        }
        if self.kinds[0] != BlockKind::Conv {
            return Err(Error::Config(format!(
                "branch {}: the waveform layer must be a plain conv block",
                self.name
            )));
        }
        if self.multilevel_span == 0 || self.multilevel_span > d {
            return Err(Error::Config(format!(
                "branch {}: multilevel span {} outside 1..={d}",
                self.name, self.multilevel_span
            )));
        }
        let top = self.top_width();
        for i in d - self.multilevel_span..d {
            if self.widths[i] != top {
                return Err(Error::Config(format!(
                    "branch {}: top {} layers must share one width, layer {i} has {} vs {top}",
                    self.name, self.multilevel_span, self.widths[i]
                )));
            }
        }
        for &p in &self.pools {
            if p >= d {
                return Err(Error::Config(format!(
                    "branch {}: pool after layer {p} but depth is {d}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Sequence length after each layer (pool included) for a given input
    /// length, or an error naming the layer where a window no longer fits.
    pub fn length_schedule(&self, sample_len: usize) -> Result<Vec<usize>> {
        let mut lens = Vec::with_capacity(self.depth());
        let mut l = sample_len;
        for i in 0..self.depth() {
            if i == 0 {
                if l < self.first_filter {
                    return Err(Error::Config(format!(
                        "branch {}: input length {l} shorter than first filter {}",
                        self.name, self.first_filter
                    )));
                }
                l = (l - self.first_filter) / self.first_stride + 1;
            }
            if self.pools.contains(&i) {
                if l < 3 {
                    return Err(Error::Config(format!(
                        "branch {}: pool after layer {i} needs length >= 3, have {l}",
                        self.name
                    )));
                }
                l = (l - 3) / 3 + 1;
            }
            lens.push(l);
        }
        Ok(lens)
    }

    /// Total time extent of the multi-level concat.
    pub fn multilevel_len(&self, sample_len: usize) -> Result<usize> {
        let lens = self.length_schedule(sample_len)?;
        Ok(lens[lens.len() - self.multilevel_span..].iter().sum())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    /// Transformer encoder over the fused tokens with a learned [CLS]
    /// prefix; the classifier reads the top-layer [CLS] activation.
    Bert { layers: usize, width: usize, heads: usize, dropout: f64, ffn_width: usize },
    /// One AAC block recalibrates the fused features, then temporal mean
    /// pooling produces the classifier input.
    Aac { width: usize },
    /// Temporal mean pooling only (the backend-ablated comparison row).
    Pool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_tags: usize,
    pub sample_len: usize,
    /// Relative-distance clip shared by every attention table in the model.
    pub d_max: usize,
    pub aac: AacSettings,
    pub low: Option<CanConfig>,
    pub high: Option<CanConfig>,
    pub backend: BackendConfig,
    pub classifier_hidden: usize,
}

impl ModelConfig {
    /// Channel width presented to the backend by the frontend.
    pub fn frontend_width(&self) -> Result<usize> {
        match (&self.low, &self.high) {
            (Some(l), Some(h)) => {
                if l.top_width() != h.top_width() {
                    return Err(Error::Config(format!(
                        "branch widths differ at the fuse point: {} vs {}",
                        l.top_width(),
                        h.top_width()
                    )));
                }
                Ok(l.top_width())
            }
            (Some(l), None) => Ok(l.top_width()),
            (None, Some(h)) => Ok(h.top_width()),
            (None, None) => Err(Error::Config("model has no frontend branch".into())),
        }
    }

    /// Feature width handed to the classifier.
    pub fn classifier_input(&self) -> Result<usize> {
        Ok(match &self.backend {
            BackendConfig::Bert { width, .. } | BackendConfig::Aac { width } => *width,
            BackendConfig::Pool => self.frontend_width()?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tags == 0 {
            return Err(Error::Config("n_tags must be positive".into()));
        }
        if self.classifier_hidden == 0 {
            return Err(Error::Config("classifier_hidden must be positive".into()));
        }
        for cfg in [&self.low, &self.high].into_iter().flatten() {
            cfg.validate()?;
            cfg.length_schedule(self.sample_len)?;
        }
        self.frontend_width()?;
        if let BackendConfig::Bert { layers, width, heads, dropout, ffn_width } = &self.backend {
            if *layers == 0 || *width == 0 || *ffn_width == 0 {
                return Err(Error::Config("bert backend: zero extent".into()));
            }
            if width % heads != 0 {
                return Err(Error::Config(format!(
                    "bert backend: width {width} not divisible by {heads} heads"
                )));
            }
            if !(0.0..1.0).contains(dropout) {
                return Err(Error::Config(format!(
                    "bert backend: dropout {dropout} outside [0, 1)"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<ModelConfig> {
        let cfg: ModelConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn reference_low() -> CanConfig {
    use BlockKind::*;
    CanConfig {
        name: "low".into(),
        first_filter: 27,
        first_stride: 9,
        widths: vec![128, 128, 128, 128, 160, 192, 224, 224, 224, 224],
        kinds: vec![Conv, Se, Se, Se, Se, Se, Se, Se, Aac, Aac],
        pools: vec![1, 2, 3, 4, 5, 6],
        se_ratio: 16,
        multilevel_span: 4,
    }
}

fn reference_high() -> CanConfig {
    use BlockKind::*;
    CanConfig {
        name: "high".into(),
        first_filter: 3,
        first_stride: 3,
        widths: vec![128, 128, 128, 128, 128, 160, 192, 224, 224, 224, 224],
        kinds: vec![Conv, Se, Se, Se, Se, Se, Se, Se, Se, Aac, Aac],
        pools: vec![1, 2, 3, 4, 5, 6, 7],
        se_ratio: 16,
        multilevel_span: 4,
    }
}

fn reference_bert() -> BackendConfig {
    BackendConfig::Bert { layers: 6, width: 512, heads: 8, dropout: 0.2, ffn_width: 1024 }
}

impl ModelConfig {
    /// Full-scale two-branch model with the transformer backend.
    pub fn reference_muslcat(n_tags: usize) -> ModelConfig {
        ModelConfig {
            n_tags,
            sample_len: 48000,
            d_max: 64,
            aac: AacSettings::default(),
            low: Some(reference_low()),
            high: Some(reference_high()),
            backend: reference_bert(),
            classifier_hidden: 512,
        }
    }

    /// Full-scale two-branch model with the single-AAC backend.
    pub fn reference_muslcan(n_tags: usize) -> ModelConfig {
        ModelConfig { backend: BackendConfig::Aac { width: 512 }, ..Self::reference_muslcat(n_tags) }
    }

    /// Both branches, mean-pool backend: the backend-ablated comparison row.
    pub fn reference_cnn_pair(n_tags: usize) -> ModelConfig {
        ModelConfig { backend: BackendConfig::Pool, ..Self::reference_muslcat(n_tags) }
    }

    /// One branch alone over a mean pool and the classifier.
    pub fn reference_standalone(low_branch: bool, n_tags: usize) -> ModelConfig {
        let mut cfg = Self::reference_cnn_pair(n_tags);
        if low_branch {
            cfg.high = None;
        } else {
            cfg.low = None;
        }
        cfg
    }

    /// One branch driving the transformer backend.
    pub fn reference_single_bert(low_branch: bool, n_tags: usize) -> ModelConfig {
        let mut cfg = Self::reference_muslcat(n_tags);
        if low_branch {
            cfg.high = None;
        } else {
            cfg.low = None;
        }
        cfg
    }

    /// Width-reduced two-branch model with the AAC backend, sized for
    /// CPU-minute training runs on the synthetic corpus.
    pub fn desk_muslcan(n_tags: usize) -> ModelConfig {
        use BlockKind::*;
        ModelConfig {
            n_tags,
            sample_len: 48000,
            d_max: 64,
            aac: AacSettings { n_h: 4, ..AacSettings::default() },
            low: Some(CanConfig {
                name: "low".into(),
                first_filter: 27,
                first_stride: 9,
                widths: vec![16, 16, 16, 16, 24, 32, 48, 48, 48, 48],
                kinds: vec![Conv, Se, Se, Se, Se, Se, Se, Se, Aac, Aac],
                pools: vec![1, 2, 3, 4, 5, 6],
                se_ratio: 8,
                multilevel_span: 4,
            }),
            high: Some(CanConfig {
                name: "high".into(),
                first_filter: 3,
                first_stride: 3,
                widths: vec![16, 16, 16, 16, 16, 24, 32, 48, 48, 48, 48],
                kinds: vec![Conv, Se, Se, Se, Se, Se, Se, Se, Se, Aac, Aac],
                pools: vec![1, 2, 3, 4, 5, 6, 7],
                se_ratio: 8,
                multilevel_span: 4,
            }),
            backend: BackendConfig::Aac { width: 64 },
            classifier_hidden: 64,
        }
    }

    /// Width-reduced two-branch model with the transformer backend. Dropout
    /// is off: this config exists for short sanity runs where regularization
    /// only obscures the signal.
    pub fn desk_muslcat(n_tags: usize) -> ModelConfig {
        ModelConfig {
            backend: BackendConfig::Bert {
                layers: 6,
                width: 64,
                heads: 8,
                dropout: 0.0,
                ffn_width: 128,
            },
            ..Self::desk_muslcan(n_tags)
        }
    }

    /// Near-minimal model for finite-difference checks: every structural
    /// element present, a few thousand parameters, 2048-sample input.
    pub fn tiny_muslcan(n_tags: usize) -> ModelConfig {
        use BlockKind::*;
        ModelConfig {
            n_tags,
            sample_len: 2048,
            d_max: 16,
            aac: AacSettings { n_h: 2, ..AacSettings::default() },
            low: Some(CanConfig {
                name: "low".into(),
                first_filter: 27,
                first_stride: 9,
                widths: vec![4, 4, 4, 4, 4, 4, 8, 8, 8, 8],
                kinds: vec![Conv, Se, Se, Se, Se, Se, Se, Se, Aac, Aac],
                pools: vec![1, 2, 3, 4],
                se_ratio: 2,
                multilevel_span: 4,
            }),
            high: Some(CanConfig {
                name: "high".into(),
                first_filter: 3,
                first_stride: 3,
                widths: vec![4, 4, 4, 4, 4, 4, 4, 8, 8, 8, 8],
                kinds: vec![Conv, Se, Se, Se, Se, Se, Se, Se, Se, Aac, Aac],
                pools: vec![1, 2, 3, 4],
                se_ratio: 2,
                multilevel_span: 4,
            }),
            backend: BackendConfig::Aac { width: 8 },
            classifier_hidden: 8,
        }
    }

    /// Tiny variant with the transformer backend, for end-to-end checks
    /// through the fusion and encoder stack.
    pub fn tiny_muslcat(n_tags: usize) -> ModelConfig {
        ModelConfig {
            backend: BackendConfig::Bert {
                layers: 2,
                width: 8,
                heads: 2,
                dropout: 0.0,
                ffn_width: 16,
            },
            ..Self::tiny_muslcan(n_tags)
        }
    }
}
