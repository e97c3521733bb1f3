use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::models::Preset;

/// What one unit of `iterations` means.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IterationUnit {
    /// One pass through the blocks, each on a fresh mini-batch.
    #[default]
    Pass,
    /// As many passes as it takes to draw one training split's worth of examples.
    Epoch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmupConfig {
    pub lr: f64,
    pub iterations: usize,
    pub batch: usize,
    /// KL weight during warm-up; `None` uses the main β.
    #[serde(default)]
    pub beta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub preset: Preset,
    pub beta: f64,
    pub d_z: usize,
    pub batch: usize,
    pub iterations: usize,
    /// Learning rate of blocks (2) to (5).
    pub lr: f64,
    /// Learning rate of block (1).
    pub block1_lr: f64,
    pub warmup: WarmupConfig,
    #[serde(default)]
    pub iteration_unit: IterationUnit,
    pub seed: u64,
    /// Keep batch-norm layers of the preset; `false` strips them.
    pub batch_norm: bool,
    /// Evaluations without a validation-accuracy gain before stopping.
    pub patience: usize,
    /// Iterations between evaluations.
    pub eval_every: usize,
    /// Temperature of the relaxed categorical sample fed to `D_ω`.
    pub gumbel_temperature: f64,
}

impl TrainConfig {
    /// Colored-MNIST reference settings with the convolutional preset.
    pub fn colored_mnist_ref(beta: f64, d_z: usize, seed: u64) -> Self {
        Self {
            preset: Preset::MnistRef,
            beta,
            d_z,
            batch: 2048,
            iterations: 500,
            lr: 1e-4,
            block1_lr: 5e-4,
            warmup: WarmupConfig { lr: 0.005, iterations: 50, batch: 1024, beta: None },
            iteration_unit: IterationUnit::Pass,
            seed,
            batch_norm: true,
            patience: 20,
            eval_every: 10,
            gumbel_temperature: 0.5,
        }
    }

    /// CelebA reference settings with the convolutional preset.
    pub fn celeba_ref(beta: f64, d_z: usize, seed: u64) -> Self {
        Self {
            preset: Preset::CelebaRef,
            batch: 1024,
            lr: 1e-5,
            block1_lr: 5e-5,
            warmup: WarmupConfig { lr: 0.0005, iterations: 100, batch: 512, beta: None },
            ..Self::colored_mnist_ref(beta, d_z, seed)
        }
    }

    /// CPU-scale settings for the affine preset on a 10k-digit subset.
    pub fn mnist_desk(beta: f64, d_z: usize, seed: u64) -> Self {
        Self {
            preset: Preset::DeskMlp,
            beta,
            d_z,
            batch: 256,
            iterations: 300,
            lr: 1e-3,
            block1_lr: 5e-3,
            warmup: WarmupConfig { lr: 0.005, iterations: 100, batch: 256, beta: None },
            iteration_unit: IterationUnit::Pass,
            seed,
            batch_norm: false,
            patience: 20,
            eval_every: 10,
            gumbel_temperature: 0.5,
        }
    }

    /// Named presets: `mnist-ref`, `celeba-ref`, `mnist-desk`.
    pub fn preset(name: &str, beta: f64, d_z: usize, seed: u64) -> Result<Self> {
        match name {
            "mnist-ref" => Ok(Self::colored_mnist_ref(beta, d_z, seed)),
            "celeba-ref" => Ok(Self::celeba_ref(beta, d_z, seed)),
            "mnist-desk" => Ok(Self::mnist_desk(beta, d_z, seed)),
            _ => Err(invalid(format!("unknown training preset `{name}`"))),
        }
    }

    pub fn warmup_beta(&self) -> f64 {
        self.warmup.beta.unwrap_or(self.beta)
    }

    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..=1.0).contains(&b);
        if !beta_ok(self.beta) || !self.warmup.beta.map_or(true, beta_ok) {
            return Err(invalid(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if self.d_z == 0 {
            return Err(invalid("d_z must be at least 1"));
        }
        if self.batch == 0 || self.warmup.batch == 0 {
            return Err(invalid("batch sizes must be at least 1"));
        }
        for (what, lr) in [("lr", self.lr), ("block1_lr", self.block1_lr), ("warmup.lr", self.warmup.lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(invalid(format!("{what} must be positive, got {lr}")));
            }
        }
        if self.eval_every == 0 {
            return Err(invalid("eval_every must be at least 1"));
        }
        if !(self.gumbel_temperature > 0.0) {
            return Err(invalid("gumbel_temperature must be positive"));
        }
        Ok(())
    }
}
