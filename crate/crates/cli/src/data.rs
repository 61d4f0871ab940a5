//! Dataset generation from `data.*` config keys.

use std::path::PathBuf;

use mutn_core::config::Config;
use mutn_core::rng::SeedTree;
use mutn_core::synthdata::{
    gen_deblur_dataset, gen_fog_dataset, gen_seismic_dataset, Dataset, DeblurConfig, FogConfig, ImageSource,
    SeismicConfig, Task,
};

use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

pub fn task(cfg: &Config) -> Result<Task> {
    Ok(Task::parse(&cfg.get_or("data.task", "deconv".to_string())?)?)
}

/// Seed of a split's generator, derived from the run seed.
pub fn split_seed(cfg: &Config, split: Split) -> Result<u64> {
    let seed: u64 = cfg.get_or("seed", 0)?;
    Ok(SeedTree::new(seed).child(split as u64).seed())
}

/// The subset of `cfg` that determines the generated data.
pub fn data_keys(cfg: &Config) -> Config {
    let mut out = Config::new();
    for key in cfg.keys().filter(|k| k.starts_with("data.") || *k == "seed") {
        out.set(key, cfg.raw(key).unwrap_or_default());
    }
    out
}

/// Generates one split. Keys: `data.train_count`, `data.test_count`,
/// `data.noise_sigma`, and per task
/// - deconv: `data.n`, `data.f0`, `data.delta`, `data.dt`, `data.half_len`,
///   `data.spike_prob`, `data.amplitude_std`;
/// - deblur: `data.height`, `data.width`, `data.kernel_size`,
///   `data.true_variance`, `data.a0_variance`, `data.image_dir`;
/// - defog: `data.height`, `data.width`, `data.beta`, `data.airlight`.
pub fn generate(cfg: &Config, split: Split) -> Result<Dataset> {
    let seed = split_seed(cfg, split)?;
    let count_key = format!("data.{}_count", split.name());
    let mut ds = match task(cfg)? {
        Task::Deconv => {
            let d = SeismicConfig::default();
            gen_seismic_dataset(&SeismicConfig {
                count: cfg.get_or(&count_key, d.count)?,
                n: cfg.get_or("data.n", d.n)?,
                f0_range: cfg.get_range_or("data.f0", d.f0_range)?,
                delta: cfg.get_or("data.delta", d.delta)?,
                noise_sigma: cfg.get_or("data.noise_sigma", d.noise_sigma)?,
                dt: cfg.get_or("data.dt", d.dt)?,
                half_len: cfg.get_or("data.half_len", d.half_len)?,
                spike_prob: cfg.get_or("data.spike_prob", d.spike_prob)?,
                amplitude_std: cfg.get_or("data.amplitude_std", d.amplitude_std)?,
                seed,
            })?
        }
        Task::Deblur => {
            let d = DeblurConfig::default();
            let source = match cfg.raw("data.image_dir") {
                Some(dir) => ImageSource::Folder(PathBuf::from(dir)),
                None => ImageSource::Synthetic,
            };
            gen_deblur_dataset(&DeblurConfig {
                count: cfg.get_or(&count_key, d.count)?,
                height: cfg.get_or("data.height", d.height)?,
                width: cfg.get_or("data.width", d.width)?,
                kernel_size: cfg.get_or("data.kernel_size", d.kernel_size)?,
                true_variance: cfg.get_range_or("data.true_variance", d.true_variance)?,
                a0_variance: cfg.get_range_or("data.a0_variance", d.a0_variance)?,
                noise_sigma: cfg.get_or("data.noise_sigma", d.noise_sigma)?,
                source,
                seed,
            })?
        }
        Task::Defog => {
            let d = FogConfig::default();
            gen_fog_dataset(&FogConfig {
                count: cfg.get_or(&count_key, d.count)?,
                height: cfg.get_or("data.height", d.height)?,
                width: cfg.get_or("data.width", d.width)?,
                beta_range: cfg.get_range_or("data.beta", d.beta_range)?,
                airlight_range: cfg.get_range_or("data.airlight", d.airlight_range)?,
                noise_sigma: cfg.get_or("data.noise_sigma", d.noise_sigma)?,
                seed,
            })?
        }
    };
    ds.header = format!("{}# split {}\n", crate::output::header(cfg), split.name());
    Ok(ds)
}
