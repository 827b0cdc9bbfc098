//! Network checkpoints in the FM3D tensor container: a config block plus one
//! tensor per parameter slot, in visitor order.

use super::nets::{Discriminator, Generator};
use super::{DiscConfig, TrainConfig, UNetConfig};
use crate::container::Container;
use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::path::Path;

/// A trained generator/discriminator pair with the training settings that
/// produced it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub train_config: TrainConfig,
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let mut c = Container::new();
    let g_cfg = &ckpt.generator.cfg;
    let d_cfg = &ckpt.discriminator.cfg;
    let t = &ckpt.train_config;
    c.put_f64(
        "config",
        vec![14],
        &[
            g_cfg.resolution as f64,
            g_cfg.input_channels as f64,
            g_cfg.depth as f64,
            g_cfg.base_width as f64,
            d_cfg.resolution as f64,
            d_cfg.depth as f64,
            d_cfg.base_width as f64,
            t.lambda_l1,
            t.learning_rate,
            t.decay_every as f64,
            t.batch_size as f64,
            t.gen_updates as f64,
            t.disc_updates as f64,
            t.seed as f64,
        ],
    );
    let mut slot = 0usize;
    ckpt.generator.visit_params(&mut |p| {
        c.put_f64(&format!("g.p{slot:03}"), vec![p.len()], p);
        slot += 1;
    });
    slot = 0;
    ckpt.discriminator.visit_params(&mut |p| {
        c.put_f64(&format!("d.p{slot:03}"), vec![p.len()], p);
        slot += 1;
    });
    c.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let c = Container::load(path)?;
    let (dims, cfg) = c.f64_tensor("config")?;
    if dims != vec![14] {
        return Err(Error::format(
            "checkpoint config block must have 14 entries",
        ));
    }
    let g_cfg = UNetConfig {
        resolution: cfg[0] as usize,
        input_channels: cfg[1] as usize,
        depth: cfg[2] as usize,
        base_width: cfg[3] as usize,
    };
    let d_cfg = DiscConfig {
        resolution: cfg[4] as usize,
        depth: cfg[5] as usize,
        base_width: cfg[6] as usize,
    };
    let train_config = TrainConfig {
        lambda_l1: cfg[7],
        learning_rate: cfg[8],
        decay_every: cfg[9] as usize,
        batch_size: cfg[10] as usize,
        gen_updates: cfg[11] as usize,
        disc_updates: cfg[12] as usize,
        iterations: 0,
        seed: cfg[13] as u64,
    };
    // Architecture comes from the config; weights overwrite the fresh init.
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let mut generator =
        Generator::init(&g_cfg, &mut rng).map_err(|e| Error::format(e.to_string()))?;
    let mut discriminator =
        Discriminator::init(&d_cfg, &mut rng).map_err(|e| Error::format(e.to_string()))?;

    let mut err = None;
    let mut slot = 0usize;
    generator.visit_params_mut(&mut |p| {
        match c.f64_tensor(&format!("g.p{slot:03}")) {
            Ok((dims, data)) if dims == vec![p.len()] => p.copy_from_slice(&data),
            Ok((dims, _)) => {
                err.get_or_insert(Error::format(format!(
                    "generator slot {slot} has dims {dims:?}, expected [{}]",
                    p.len()
                )));
            }
            Err(e) => {
                err.get_or_insert(e);
            }
        }
        slot += 1;
    });
    slot = 0;
    discriminator.visit_params_mut(&mut |p| {
        match c.f64_tensor(&format!("d.p{slot:03}")) {
            Ok((dims, data)) if dims == vec![p.len()] => p.copy_from_slice(&data),
            Ok((dims, _)) => {
                err.get_or_insert(Error::format(format!(
                    "discriminator slot {slot} has dims {dims:?}, expected [{}]",
                    p.len()
                )));
            }
            Err(e) => {
                err.get_or_insert(e);
            }
        }
        slot += 1;
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(Checkpoint {
        generator,
        discriminator,
        train_config,
    })
}
