//! First-order optimizers over flat parameter vectors.

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum OptimizerKind {
    #[default]
    Adam,
    /// SGD with momentum.
    Sgdm,
    Rmsprop,
}

impl OptimizerKind {
    pub fn code(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgdm => "sgdm",
            OptimizerKind::Rmsprop => "rmsprop",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgdm" => Ok(OptimizerKind::Sgdm),
            "rmsprop" => Ok(OptimizerKind::Rmsprop),
            other => Err(Error::param(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Optimizer state plus hyperparameters.
///
/// * Adam: `m ← β1 m + (1−β1) g`, `v ← β2 v + (1−β2) g²`,
///   `p ← p − lr · m̂ / (√v̂ + ε)` with bias-corrected `m̂`, `v̂`.
/// * SGDM: `v ← μ v − lr g`, `p ← p + v`.
/// * RMSprop: `s ← ρ s + (1−ρ) g²`, `p ← p − lr g / (√s + ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub momentum: f64,
    pub rho: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            momentum: 0.9,
            rho: 0.9,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", self.m.len()),
                actual: format!("{} parameters, {} gradients", params.len(), grads.len()),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *p -= self.lr * mh / (vh.sqrt() + self.eps);
                }
            }
            OptimizerKind::Sgdm => {
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.m) {
                    *v = self.momentum * *v - self.lr * g;
                    *p += *v;
                }
            }
            OptimizerKind::Rmsprop => {
                for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut self.v) {
                    *s = self.rho * *s + (1.0 - self.rho) * g * g;
                    *p -= self.lr * g / (s.sqrt() + self.eps);
                }
            }
        }
        Ok(())
    }
}

/// Scale `grads` so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}
