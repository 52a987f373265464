//! Parameter update rules and the multi-step learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Multiplies the base rate by `gamma` at each milestone passed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    milestones: Vec<usize>,
    gamma: f64,
}

impl LrSchedule {
    pub fn constant() -> Self {
        Self {
            milestones: Vec::new(),
            gamma: 1.0,
        }
    }

    pub fn multi_step(milestones: Vec<usize>, gamma: f64) -> Result<Self> {
        if milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("milestones must be strictly increasing".into()));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::Config(format!("schedule factor must be positive, got {gamma}")));
        }
        Ok(Self { milestones, gamma })
    }

    pub fn milestones(&self) -> &[usize] {
        &self.milestones
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Rate in effect at zero-based `iteration`.
    pub fn lr_at(&self, base: f64, iteration: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| iteration >= m).count();
        base * self.gamma.powi(passed as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
enum Kind {
    Sgd,
    Adam {
        cfg: AdamConfig,
        m: Vec<Tensor>,
        v: Vec<Tensor>,
    },
}

/// SGD or Adam over an ordered list of parameter tensors.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: Kind,
    lr: f64,
    step: u64,
    clip_norm: Option<f64>,
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: Kind::Sgd,
            lr,
            step: 0,
            clip_norm: None,
        }
    }

    /// Adam with zeroed moments shaped like `params`.
    pub fn adam(params: &[Tensor], lr: f64, cfg: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self {
            kind: Kind::Adam {
                cfg,
                m: zeros(),
                v: zeros(),
            },
            lr,
            step: 0,
            clip_norm: None,
        }
    }

    /// Rescales gradients whose global L2 norm exceeds `max_norm`.
    pub fn with_clip_norm(mut self, max_norm: Option<f64>) -> Self {
        self.clip_norm = max_norm;
        self
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(shape_err("optimizer", (params.len(), 1), (grads.len(), 1)));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(shape_err("optimizer", p.shape(), g.shape()));
            }
        }
        let scale = match self.clip_norm {
            Some(max) => {
                let norm = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let lr = self.lr;
        match &mut self.kind {
            Kind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    p.axpy_in_place(-lr * scale, g);
                }
            }
            Kind::Adam { cfg, m, v } => {
                if m.len() != params.len() {
                    return Err(shape_err("adam state", (m.len(), 1), (params.len(), 1)));
                }
                let t = self.step as i32;
                let c1 = 1.0 - cfg.beta1.powi(t);
                let c2 = 1.0 - cfg.beta2.powi(t);
                for i in 0..params.len() {
                    if m[i].shape() != params[i].shape() {
                        return Err(shape_err("adam state", m[i].shape(), params[i].shape()));
                    }
                    let p = params[i].data_mut();
                    let mi = m[i].data_mut();
                    let vi = v[i].data_mut();
                    for (k, &graw) in grads[i].data().iter().enumerate() {
                        let g = graw * scale;
                        mi[k] = cfg.beta1 * mi[k] + (1.0 - cfg.beta1) * g;
                        vi[k] = cfg.beta2 * vi[k] + (1.0 - cfg.beta2) * g * g;
                        let mhat = mi[k] / c1;
                        let vhat = vi[k] / c2;
                        p[k] -= lr * mhat / (vhat.sqrt() + cfg.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
