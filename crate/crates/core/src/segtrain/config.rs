use serde::{Deserialize, Serialize};

use crate::digest::hash_json;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd { momentum: f64, weight_decay: f64 },
    AdamW {
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
}

impl OptimizerKind {
    pub fn sgd() -> Self {
        OptimizerKind::Sgd {
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }

    pub fn adamw() -> Self {
        OptimizerKind::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// How the teacher follows the student after each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmaMode {
    /// `teacher ← α·teacher + (1−α)·student`.
    #[default]
    TeacherHistory,
    /// `teacher ← α·previous_student + (1−α)·student`.
    PreviousStudent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub base_lr: f64,
    pub warmup_iters: usize,
    pub poly_power: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    /// Random training crop `(width, height)`; `None` trains on full images.
    #[serde(default)]
    pub crop: Option<(u32, u32)>,
    pub ema_alpha: f64,
    #[serde(default)]
    pub ema_mode: EmaMode,
    /// Softmax confidence a teacher prediction must exceed to become a
    /// pseudo-label.
    #[serde(default = "default_threshold")]
    pub pseudo_threshold: f64,
    pub seed: u64,
    /// Rescales the gradient to at most this global L2 norm.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Gradients are always reduced in batch order; the flag is recorded so
    /// a run's reproducibility contract is explicit in its manifest.
    #[serde(default = "default_true")]
    pub bit_reproducible: bool,
}

fn default_threshold() -> f64 {
    0.9
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    /// Full-scale category-model settings: SGD, η = 2e-3, 1k warmup, 90k steps.
    pub fn category_full_scale() -> Self {
        Self {
            iterations: 90_000,
            base_lr: 2e-3,
            warmup_iters: 1_000,
            poly_power: 0.9,
            optimizer: OptimizerKind::sgd(),
            batch_size: 8,
            crop: Some((1024, 512)),
            ema_alpha: 0.999,
            ema_mode: EmaMode::TeacherHistory,
            pseudo_threshold: 0.9,
            seed: 0,
            grad_clip: None,
            bit_reproducible: true,
        }
    }

    /// Full-scale ensemble settings: AdamW, η = 5e-4, 8k warmup, α = 0.9999.
    pub fn ensemble_full_scale() -> Self {
        Self {
            iterations: 90_000,
            base_lr: 5e-4,
            warmup_iters: 8_000,
            poly_power: 0.9,
            optimizer: OptimizerKind::adamw(),
            batch_size: 8,
            crop: None,
            ema_alpha: 0.9999,
            ema_mode: EmaMode::TeacherHistory,
            pseudo_threshold: 0.9,
            seed: 0,
            grad_clip: None,
            bit_reproducible: true,
        }
    }

    /// Toy-scale category settings for `iterations` steps.
    pub fn category_desk(iterations: usize) -> Self {
        Self {
            iterations,
            base_lr: 4e-3,
            warmup_iters: iterations / 20,
            poly_power: 0.9,
            optimizer: OptimizerKind::adamw(),
            batch_size: 4,
            crop: None,
            ema_alpha: 0.99,
            ema_mode: EmaMode::TeacherHistory,
            pseudo_threshold: 0.9,
            seed: 0,
            grad_clip: None,
            bit_reproducible: true,
        }
    }

    /// Toy-scale ensemble settings: the full-scale warmup and EMA horizon are
    /// kept as the same fraction of training.
    pub fn ensemble_desk(iterations: usize) -> Self {
        let full = Self::ensemble_full_scale();
        let ratio = iterations as f64 / full.iterations as f64;
        let alpha = 1.0 - (1.0 - full.ema_alpha) / ratio.max(1e-9);
        Self {
            iterations,
            base_lr: 2e-2,
            warmup_iters: (full.warmup_iters as f64 * ratio).round() as usize,
            poly_power: 0.9,
            optimizer: OptimizerKind::adamw(),
            batch_size: 4,
            crop: None,
            ema_alpha: alpha.clamp(0.0, full.ema_alpha),
            ema_mode: EmaMode::TeacherHistory,
            pseudo_threshold: 0.9,
            seed: 0,
            grad_clip: Some(1.0),
            bit_reproducible: true,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_iters > self.iterations {
            return Err(Error::Contract(format!(
                "warmup ({}) exceeds iterations ({})",
                self.warmup_iters, self.iterations
            )));
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::Contract("base learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ema_alpha) {
            return Err(Error::Contract("EMA coefficient must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Contract("batch size must be at least 1".into()));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::Contract("gradient clip must be positive".into()));
        }
        if !(self.poly_power >= 0.0) {
            return Err(Error::Contract("poly power must be non-negative".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

/// Learning rate at step `t`: linear warmup to `base_lr`, then polynomial
/// decay reaching zero at `t = iterations`.
pub fn lr_schedule(t: usize, config: &TrainConfig) -> Result<f64> {
    let n = config.iterations;
    if t > n {
        return Err(Error::Range {
            what: "schedule step",
            value: t,
            bound: n + 1,
        });
    }
    if t == n {
        return Ok(0.0);
    }
    let eta = config.base_lr;
    let warm = config.warmup_iters;
    if t < warm {
        return Ok(eta * (t + 1) as f64 / warm as f64);
    }
    let progress = (t - warm) as f64 / (n - warm) as f64;
    Ok(eta * (1.0 - progress).powf(config.poly_power))
}
