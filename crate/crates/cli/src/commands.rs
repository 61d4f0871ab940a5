//! The `gen-data`, `train` and `eval` commands.

use std::fs;
use std::path::{Path, PathBuf};

use mutn_core::config::Config;
use mutn_core::solvers::TRACE_CSV_HEADER;
use mutn_core::synthdata::Dataset;
use mutn_core::training::{self, Checkpoint, EvalOptions, EvalOutput, ThetaSource, TrainConfig};

use crate::data::{self, Split};
use crate::output::{self, write_csv};
use crate::{Failure, Result};

pub const SEED_ENV: &str = "MUTN_SEED";

/// The seed from `MUTN_SEED`, if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Config(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

/// Reads a config file and applies the `MUTN_SEED` override.
pub fn load_config(path: &Path) -> Result<Config> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = Config::parse(&text)?;
    if let Some(seed) = env_seed()? {
        cfg.set("seed", seed);
    }
    Ok(cfg)
}

/// Writes `train.mutn` and `test.mutn` under `out`.
pub fn gen_data(cfg: &Config, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for split in [Split::Train, Split::Test] {
        let path = out.join(format!("{}.mutn", split.name()));
        data::generate(cfg, split)?.save(&path)?;
        written.push(path);
    }
    Ok(written)
}

/// A dataset file, or `<dir>/<split>.mutn` when `path` is a directory.
pub fn resolve_dataset(path: &Path, split: Split) -> Result<Dataset> {
    let file = if path.is_dir() { path.join(format!("{}.mutn", split.name())) } else { path.to_path_buf() };
    if !file.exists() {
        return Err(Failure::Config(format!("dataset {} not found", file.display())));
    }
    Ok(Dataset::load(&file)?)
}

pub fn curves_csv(ckpt: &Checkpoint) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for c in &ckpt.curves {
        s.push_str(&format!("{},{},{}\n", c.epoch, c.train_loss, c.val_loss));
    }
    s
}

/// Trains on the train split and writes `model.mutn` and `curves.csv`.
pub fn train(cfg: &Config, data: &Path, out: &Path, verbose: bool) -> Result<Checkpoint> {
    let tc = TrainConfig::from_config(cfg)?;
    let ds = resolve_dataset(data, Split::Train)?;
    let mut log = |r: &training::EpochRecord| {
        if verbose {
            eprintln!("epoch {} train {:.6e} val {:.6e}", r.epoch, r.train_loss, r.val_loss);
        }
    };
    let ckpt = training::train(&ds, &tc, Some(&mut log))?;
    fs::create_dir_all(out)?;
    ckpt.save(out.join("model.mutn"), &output::header(cfg))?;
    write_csv(&out.join("curves.csv"), cfg, &curves_csv(&ckpt))?;
    Ok(ckpt)
}

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub theta: ThetaSource,
    pub iters: Option<usize>,
}

/// The config echoed into evaluation outputs: the checkpoint's training
/// config plus the evaluation overrides.
pub fn eval_config(ckpt: &Checkpoint, args: &EvalArgs) -> Config {
    let mut cfg = ckpt.train.to_config();
    cfg.set("eval.theta_init", args.theta.name());
    if let Some(k) = args.iters {
        cfg.set("eval.iters", k);
    }
    cfg
}

/// Evaluates a checkpoint on the test split and writes `metrics.csv`,
/// `traces.csv` and `summary.txt`.
pub fn eval(ckpt_path: &Path, data: &Path, args: &EvalArgs, out: &Path) -> Result<EvalOutput> {
    if !ckpt_path.exists() {
        return Err(Failure::Config(format!("checkpoint {} not found", ckpt_path.display())));
    }
    let ckpt = Checkpoint::load(ckpt_path)?;
    let ds = resolve_dataset(data, Split::Test)?;
    let opts = EvalOptions { theta: args.theta, iterations: args.iters, tol: None, seed: ckpt.train.seed };
    let ev = training::evaluate(&ckpt, &ds, &opts)?;
    let cfg = eval_config(&ckpt, args);
    write_csv(&out.join("metrics.csv"), &cfg, &ev.report.to_csv())?;
    let mut traces = String::from(TRACE_CSV_HEADER);
    for (i, t) in ev.traces.iter().enumerate() {
        traces.push_str(&t.csv_rows(i));
    }
    write_csv(&out.join("traces.csv"), &cfg, &traces)?;
    fs::write(out.join("summary.txt"), format!("{}{}", output::header(&cfg), ev.report.summary_text()))?;
    Ok(ev)
}
