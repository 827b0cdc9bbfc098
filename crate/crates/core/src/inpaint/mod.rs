//! Stage-II conditional inpainter: a small U-Net generator and convolutional
//! discriminator trained with head-masked L1 plus adversarial loss, where the
//! generator output is pasted back into the conditioning image so only the
//! head region receives gradient.

mod checkpoint;
pub mod layers;
mod loss;
mod nets;
pub mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use loss::{
    bce, loss_d, loss_g, masked_l1_backward, masked_l1_mean, paste_head, paste_head_backward,
};
pub use nets::{Discriminator, GenTrace, Generator, Grads};
pub use tensor::Tensor;
pub use train::{train, Adam, TrainItem, TrainStats};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Generator architecture knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Square input resolution; must be divisible by 2^depth.
    pub resolution: usize,
    /// Conditioning channels: obfuscated image RGB plus rendered face RGB.
    pub input_channels: usize,
    /// Number of down/up levels.
    pub depth: usize,
    pub base_width: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            input_channels: 6,
            depth: 4,
            base_width: 16,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_width == 0 || self.input_channels == 0 {
            return Err(Error::invalid(
                "generator depth/width/channels must be positive",
            ));
        }
        if !self.resolution.is_power_of_two() {
            return Err(Error::invalid("resolution must be a power of two"));
        }
        if !self.resolution.is_multiple_of(1 << self.depth) || self.resolution >> self.depth == 0 {
            return Err(Error::invalid(format!(
                "resolution {} not divisible by 2^{}",
                self.resolution, self.depth
            )));
        }
        Ok(())
    }
}

/// Discriminator architecture knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscConfig {
    pub resolution: usize,
    /// Number of stride-2 conv blocks.
    pub depth: usize,
    pub base_width: usize,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            depth: 4,
            base_width: 16,
        }
    }
}

impl DiscConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_width == 0 {
            return Err(Error::invalid("discriminator depth/width must be positive"));
        }
        if self.resolution >> self.depth == 0 {
            return Err(Error::invalid(
                "discriminator depth too large for resolution",
            ));
        }
        Ok(())
    }
}

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the head-masked L1 term.
    pub lambda_l1: f64,
    pub learning_rate: f64,
    /// Learning rate halves every this many outer iterations.
    pub decay_every: usize,
    pub batch_size: usize,
    /// Generator updates per outer iteration.
    pub gen_updates: usize,
    /// Discriminator updates per outer iteration.
    pub disc_updates: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_l1: 1000.0,
            learning_rate: 2e-5,
            decay_every: 5000,
            batch_size: 6,
            gen_updates: 5,
            disc_updates: 1,
            iterations: 10_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_l1.is_nan()
            || self.lambda_l1 <= 0.0
            || self.learning_rate.is_nan()
            || self.learning_rate <= 0.0
        {
            return Err(Error::invalid("lambda and learning rate must be positive"));
        }
        if self.batch_size == 0 || self.gen_updates == 0 || self.disc_updates == 0 {
            return Err(Error::invalid(
                "batch size and update ratios must be positive",
            ));
        }
        Ok(())
    }
}

/// Forward pass of the generator on an (obfuscated, rendered) pair.
pub fn generator_forward(
    gen: &Generator,
    obfuscated: &Tensor,
    rendered: &Tensor,
) -> Result<Tensor> {
    let r = gen.cfg.resolution;
    for (name, t) in [("obfuscated", obfuscated), ("rendered", rendered)] {
        if t.c != 3 || t.h != r || t.w != r {
            return Err(Error::invalid(format!(
                "{name} input must be 3x{r}x{r}, got {}x{}x{}",
                t.c, t.h, t.w
            )));
        }
    }
    let input = Tensor::concat(obfuscated, rendered);
    Ok(gen.forward(&input)?.output().clone())
}
