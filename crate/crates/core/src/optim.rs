//! Adam with bias correction and per-subnetwork freezing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DstcModel, ModelGrads, Subnet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the trainable gradient to this global ℓ2 norm when exceeded.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

/// First and second moment buffers for one flat parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One bias-corrected Adam update at step `t` (1-based). `scale`
    /// multiplies the gradient first (used by clipping).
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64], lr: f64, t: u64, cfg: &AdamConfig, scale: f64) {
        let bc1 = 1.0 - cfg.beta1.powf(t as f64);
        let bc2 = 1.0 - cfg.beta2.powf(t as f64);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let g = g * scale;
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// Which subnetworks an optimizer step may modify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainMask {
    flags: [bool; 6],
}

impl TrainMask {
    pub fn all() -> Self {
        Self { flags: [true; 6] }
    }

    pub fn none() -> Self {
        Self { flags: [false; 6] }
    }

    pub fn only(subnets: &[Subnet]) -> Self {
        let mut m = Self::none();
        for &s in subnets {
            m.flags[s.index()] = true;
        }
        m
    }

    /// Encoders and classifiers.
    pub fn classification_stage() -> Self {
        Self::only(&[Subnet::EncoderX, Subnet::EncoderY, Subnet::ClassifierX, Subnet::ClassifierY])
    }

    /// Encoders and translators; classifiers frozen.
    pub fn translation_stage() -> Self {
        Self::only(&[Subnet::EncoderX, Subnet::EncoderY, Subnet::TranslatorXY, Subnet::TranslatorYX])
    }

    pub fn is_trainable(&self, s: Subnet) -> bool {
        self.flags[s.index()]
    }

    pub fn set(&mut self, s: Subnet, trainable: bool) {
        self.flags[s.index()] = trainable;
    }
}

/// Adam state for all six subnetworks of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    t: u64,
    moments: Vec<Vec<Moments>>,
}

impl AdamState {
    pub fn new(model: &DstcModel, config: AdamConfig) -> Self {
        let moments = Subnet::ALL
            .iter()
            .map(|&s| model.net(s).param_slices().iter().map(|p| Moments::zeros(p.len())).collect())
            .collect();
        Self { config, t: 0, moments }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self, s: Subnet) -> &[Moments] {
        &self.moments[s.index()]
    }

    /// Applies one Adam step to the trainable subnetworks. Frozen subnetworks
    /// and their moment buffers are left untouched. Gradients are checked for
    /// finiteness before anything is modified.
    pub fn step(&mut self, model: &mut DstcModel, grads: &ModelGrads, lr: f64, mask: &TrainMask) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        let mut sq_norm = 0.0;
        for s in Subnet::ALL {
            if !mask.is_trainable(s) {
                continue;
            }
            let params = model.net(s).param_slices();
            let g = grads.get(s).slices();
            let shapes_agree = params.len() == g.len()
                && params.len() == self.moments[s.index()].len()
                && params.iter().zip(&g).zip(&self.moments[s.index()]).all(|((p, g), m)| p.len() == g.len() && p.len() == m.m.len());
            if !shapes_agree {
                return Err(Error::Shape(format!("{}: parameter, gradient and optimizer state shapes disagree", s.name())));
            }
            if !grads.get(s).is_finite() {
                return Err(Error::NonFiniteGradient { subnet: s.name() });
            }
            sq_norm += grads.get(s).squared_norm();
        }
        let scale = match self.config.clip_norm {
            Some(max) if sq_norm.sqrt() > max => max / sq_norm.sqrt(),
            _ => 1.0,
        };
        self.t += 1;
        for s in Subnet::ALL {
            if !mask.is_trainable(s) {
                continue;
            }
            let g = grads.get(s).slices();
            let moments = &mut self.moments[s.index()];
            for ((p, g), m) in model.net_mut(s).param_slices_mut().into_iter().zip(g).zip(moments.iter_mut()) {
                m.apply(p, g, lr, self.t, &self.config, scale);
            }
        }
        Ok(())
    }
}
