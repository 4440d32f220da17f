//! Loss, optimizer, and learning-rate schedule.
//!
//! The learning rate is stored as (base, reduction count) and computed as
//! base / 5^n on demand: repeated in-place division drifts away from the
//! decimal values after a few steps, while the closed form reproduces them
//! bit for bit.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::layers::HasParams;
use crate::tensor::Tensor;

const BCE_CLAMP: f64 = 1e-7;

fn check_bce_inputs(probs: &Tensor, targets: &Tensor) -> Result<()> {
    if probs.shape() != targets.shape() {
        return Err(Error::shape(
            "bce",
            format!("probs {:?} vs targets {:?}", probs.shape(), targets.shape()),
        ));
    }
    if probs.numel() == 0 {
        return Err(Error::shape("bce", "empty input"));
    }
    for (i, &y) in targets.data().iter().enumerate() {
        if y != 0.0 && y != 1.0 {
            return Err(Error::Train(format!(
                "bce: target at flat index {i} is {y}, labels must be exactly 0 or 1"
            )));
        }
    }
    Ok(())
}

/// Mean binary cross-entropy over every (clip, tag) cell. Probabilities are
/// clamped to [1e-7, 1 - 1e-7] inside the logs so saturated sigmoids cannot
/// produce infinities.
pub fn bce_loss(probs: &Tensor, targets: &Tensor) -> Result<f64> {
    check_bce_inputs(probs, targets)?;
    let n = probs.numel() as f64;
    let mut acc = 0.0;
    for (&p, &y) in probs.data().iter().zip(targets.data()) {
        let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        acc -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    let loss = acc / n;
    if !loss.is_finite() {
        return Err(Error::non_finite("bce", "loss is not finite"));
    }
    Ok(loss)
}

/// dLoss/dProbabilities for [bce_loss], evaluated at the clamped
/// probability so saturated predictions keep a finite, bounded gradient.
pub fn bce_grad(probs: &Tensor, targets: &Tensor) -> Result<Tensor> {
    check_bce_inputs(probs, targets)?;
    let n = probs.numel() as f64;
    let mut g = Tensor::zeros(probs.shape());
    for (i, (&p, &y)) in probs.data().iter().zip(targets.data()).enumerate() {
        let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        g.data_mut()[i] = (p - y) / (p * (1.0 - p)) / n;
    }
    Ok(g)
}

/// Stochastic gradient descent with Nesterov momentum:
///
///   v <- m*v - lr*g
///   theta <- theta + m*v - lr*g
///
/// With m = 0 this is plain SGD. Velocities are keyed by parameter name,
/// so the optimizer state survives independently of model layout changes
/// that preserve names.
#[derive(Debug, Clone)]
pub struct NesterovSgd {
    pub momentum: f64,
    vel: HashMap<String, Tensor>,
}

impl NesterovSgd {
    pub fn new(momentum: f64) -> Result<NesterovSgd> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        Ok(NesterovSgd { momentum, vel: HashMap::new() })
    }

    /// Applies one update from the gradients accumulated in `model`.
    /// Aborts without touching any parameter if a gradient is non-finite.
    pub fn step(&mut self, model: &mut impl HasParams, lr: f64) -> Result<()> {
        let mut bad: Option<String> = None;
        model.visit("", &mut |name, p| {
            if bad.is_none() && p.grad.data().iter().any(|v| !v.is_finite()) {
                bad = Some(name.to_string());
            }
        });
        if let Some(name) = bad {
            return Err(Error::non_finite(
                "sgd step",
                format!("non-finite gradient in '{name}'"),
            ));
        }
        let m = self.momentum;
        let vel = &mut self.vel;
        model.visit_mut("", &mut |name, p| {
            let v = vel
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.value.shape()));
            for ((vv, th), &g) in v
                .data_mut()
                .iter_mut()
                .zip(p.value.data_mut())
                .zip(p.grad.data())
            {
                *vv = m * *vv - lr * g;
                *th += m * *vv - lr * g;
            }
        });
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchedulerDecision {
    Continue,
    /// Learning rate was divided by 5; carries the new value.
    Reduced(f64),
    /// The reduction took the rate below the floor; training should end.
    /// Carries the sub-floor value for the trace.
    Stop(f64),
}

/// Reduce-on-plateau: after `patience` consecutive epochs without a strict
/// improvement in validation loss, divide the learning rate by 5; once a
/// reduction lands strictly below `stop_below`, signal stop.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    base_lr: f64,
    patience: usize,
    stop_below: f64,
    reductions: i32,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(base_lr: f64, patience: usize, stop_below: f64) -> Result<PlateauScheduler> {
        if base_lr <= 0.0 || stop_below <= 0.0 || patience == 0 {
            return Err(Error::Config(format!(
                "scheduler needs positive base lr, floor, and patience; got {base_lr}, {stop_below}, {patience}"
            )));
        }
        Ok(PlateauScheduler {
            base_lr,
            patience,
            stop_below,
            reductions: 0,
            best: f64::INFINITY,
            bad_epochs: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.base_lr / 5f64.powi(self.reductions)
    }

    /// Feed one epoch's validation loss. A NaN loss counts as
    /// non-improving.
    pub fn observe(&mut self, val_loss: f64) -> SchedulerDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.bad_epochs = 0;
            return SchedulerDecision::Continue;
        }
        self.bad_epochs += 1;
        if self.bad_epochs < self.patience {
            return SchedulerDecision::Continue;
        }
        self.bad_epochs = 0;
        self.reductions += 1;
        let lr = self.lr();
        // The floor compare tolerates the one rounding step in base/5^n:
        // a value equal to the floor up to 1e-9 relative error continues.
        if lr < self.stop_below * (1.0 - 1e-9) {
            SchedulerDecision::Stop(lr)
        } else {
            SchedulerDecision::Reduced(lr)
        }
    }
}
