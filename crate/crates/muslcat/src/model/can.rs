//! One CAN branch: a strided waveform layer, a stack of length-preserving
//! blocks with scheduled max pools, and the multi-level head that
//! concatenates the deepest feature maps along time and recalibrates them
//! with a single AAC block.

use rand::Rng;

use crate::attention::aac::AacBlock;
use crate::error::{Error, Result};
use crate::layers::{join, BatchNorm1d, Conv1d, HasParams, MaxPool1d, Param, Relu, SeBlock};
use crate::model::config::{AacSettings, BlockKind, CanConfig};
use crate::tensor::Tensor;

/// conv + BN + ReLU with an optional squeeze-excitation gate.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv1d,
    pub bn: BatchNorm1d,
    relu: Relu,
    pub se: Option<SeBlock>,
}

impl ConvBlock {
    fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv.forward_eval(x)?;
        let h = self.bn.forward_eval(&h)?;
        let h = self.relu.forward_eval(&h);
        match &self.se {
            Some(se) => se.forward_eval(&h),
            None => Ok(h),
        }
    }

    fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv.forward_train(x)?;
        let h = self.bn.forward_train(&h)?;
        let h = self.relu.forward_train(&h);
        match &mut self.se {
            Some(se) => se.forward_train(&h),
            None => Ok(h),
        }
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let g = match &mut self.se {
            Some(se) => se.backward(grad)?,
            None => grad.clone(),
        };
        let g = self.relu.backward(&g)?;
        let g = self.bn.backward(&g)?;
        self.conv.backward(&g)
    }
}

impl HasParams for ConvBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.bn.visit(&join(prefix, "bn"), f);
        if let Some(se) = &self.se {
            se.visit(&join(prefix, "se"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
        if let Some(se) = &mut self.se {
            se.visit_mut(&join(prefix, "se"), f);
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.bn.visit_buffers(&join(prefix, "bn"), f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.bn.visit_buffers_mut(&join(prefix, "bn"), f);
    }
}

#[derive(Debug, Clone)]
pub enum Block {
    Conv(ConvBlock),
    Aac(AacBlock),
}

impl Block {
    fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Block::Conv(b) => b.forward_eval(x),
            Block::Aac(b) => b.forward_eval(x),
        }
    }

    fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        match self {
            Block::Conv(b) => b.forward_train(x),
            Block::Aac(b) => b.forward_train(x),
        }
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        match self {
            Block::Conv(b) => b.backward(grad),
            Block::Aac(b) => b.backward(grad),
        }
    }
}

impl HasParams for Block {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        match self {
            Block::Conv(b) => b.visit(prefix, f),
            Block::Aac(b) => b.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        match self {
            Block::Conv(b) => b.visit_mut(prefix, f),
            Block::Aac(b) => b.visit_mut(prefix, f),
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        if let Block::Conv(b) = self {
            b.visit_buffers(prefix, f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let Block::Conv(b) = self {
            b.visit_buffers_mut(prefix, f);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Can {
    pub cfg: CanConfig,
    pub blocks: Vec<Block>,
    pub pools: Vec<Option<MaxPool1d>>,
    pub ml_aac: AacBlock,
    /// Time extents of the multi-level segments, cached by forward_train.
    level_lens: Option<Vec<usize>>,
}

/// Builds the branch and rejects configs whose pool schedule does not fit
/// the given input length.
pub fn build_can(
    cfg: &CanConfig,
    aac: &AacSettings,
    d_max: usize,
    sample_len: usize,
    rng: &mut impl Rng,
) -> Result<Can> {
    cfg.validate()?;
    cfg.length_schedule(sample_len)?;
    let mut blocks = Vec::with_capacity(cfg.depth());
    let mut pools = Vec::with_capacity(cfg.depth());
    let mut c_in = 1;
    for i in 0..cfg.depth() {
        let c_out = cfg.widths[i];
        let block = match cfg.kinds[i] {
            BlockKind::Conv | BlockKind::Se => {
                let conv = if i == 0 {
                    Conv1d::new(c_in, c_out, cfg.first_filter, cfg.first_stride, 0, rng)?
                } else {
                    Conv1d::new(c_in, c_out, 3, 1, 1, rng)?
                };
                let se = match cfg.kinds[i] {
                    BlockKind::Se => Some(SeBlock::new(c_out, cfg.se_ratio, rng)?),
                    _ => None,
                };
                Block::Conv(ConvBlock { conv, bn: BatchNorm1d::new(c_out), relu: Relu::new(), se })
            }
            BlockKind::Aac => Block::Aac(AacBlock::new(
                c_in,
                c_out,
                aac.k_ratio,
                aac.v_ratio,
                aac.filter,
                aac.n_h,
                d_max,
                aac.relative,
                rng,
            )?),
        };
        blocks.push(block);
        pools.push(if cfg.pools.contains(&i) { Some(MaxPool1d::new(3, 3)) } else { None });
        c_in = c_out;
    }
    let top = cfg.top_width();
    let ml_aac = AacBlock::new(
        top,
        top,
        aac.k_ratio,
        aac.v_ratio,
        aac.filter,
        aac.n_h,
        d_max,
        aac.relative,
        rng,
    )?;
    Ok(Can { cfg: cfg.clone(), blocks, pools, ml_aac, level_lens: None })
}

impl Can {
    pub fn top_width(&self) -> usize {
        self.cfg.top_width()
    }

    /// Runs the branch and returns the recalibrated multi-level features
    /// (B, top_width, sum of the deepest feature-map lengths).
    pub fn forward_multilevel_eval(&self, x: &Tensor) -> Result<Tensor> {
        let n = self.blocks.len();
        let span = self.cfg.multilevel_span;
        let mut h = x.clone();
        let mut tops: Vec<Tensor> = Vec::with_capacity(span);
        for i in 0..n {
            h = self.blocks[i].forward_eval(&h)?;
            if let Some(pool) = &self.pools[i] {
                h = pool.forward_eval(&h)?;
            }
            if i + span >= n {
                tops.push(h.clone());
            }
        }
        let refs: Vec<&Tensor> = tops.iter().collect();
        let cat = Tensor::concat(&refs, 2)?;
        self.ml_aac.forward_eval(&cat)
    }

    pub fn forward_multilevel_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let n = self.blocks.len();
        let span = self.cfg.multilevel_span;
        let mut h = x.clone();
        let mut tops: Vec<Tensor> = Vec::with_capacity(span);
        for i in 0..n {
            h = self.blocks[i].forward_train(&h)?;
            if let Some(pool) = &mut self.pools[i] {
                h = pool.forward_train(&h)?;
            }
            if i + span >= n {
                tops.push(h.clone());
            }
        }
        self.level_lens = Some(tops.iter().map(|t| t.dim(2)).collect());
        let refs: Vec<&Tensor> = tops.iter().collect();
        let cat = Tensor::concat(&refs, 2)?;
        self.ml_aac.forward_train(&cat)
    }

    /// Backward through the multi-level head and the full block stack;
    /// returns the waveform gradient.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let lens = self
            .level_lens
            .take()
            .ok_or_else(|| Error::Train("can backward without forward_train".into()))?;
        let dcat = self.ml_aac.backward(grad)?;
        let n = self.blocks.len();
        let span = self.cfg.multilevel_span;
        let mut segs: Vec<Option<Tensor>> = vec![None; n];
        let mut off = 0;
        for (k, &l) in lens.iter().enumerate() {
            segs[n - span + k] = Some(dcat.slice_axis(2, off, l)?);
            off += l;
        }
        let mut g = segs[n - 1].take().expect("last layer feeds the concat");
        for i in (0..n).rev() {
            if let Some(pool) = &mut self.pools[i] {
                g = pool.backward(&g)?;
            }
            g = self.blocks[i].backward(&g)?;
            if i > 0 {
                if let Some(seg) = segs[i - 1].take() {
                    g.add_scaled(&seg, 1.0)?;
                }
            }
        }
        Ok(g)
    }
}

impl HasParams for Can {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
        self.ml_aac.visit(&join(prefix, "ml_aac"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{i}")), f);
        }
        self.ml_aac.visit_mut(&join(prefix, "ml_aac"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_buffers(&join(prefix, &format!("block{i}")), f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_buffers_mut(&join(prefix, &format!("block{i}")), f);
        }
    }
}

/// Evaluation-mode multi-level forward, the branch's public entry point.
pub fn can_forward_multilevel(can: &Can, x: &Tensor) -> Result<Tensor> {
    can.forward_multilevel_eval(x)
}
