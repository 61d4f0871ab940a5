//! Desk-scale reproductions of the comparison table, the θ-initialisation
//! table, the iterate-MSE figures and the `A₀` sensitivity sweep.
//!
//! Datasets and checkpoints are cached under `<out>/cache`, keyed by the
//! config hash, so experiments sharing a setup train each model once.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mutn_core::config::Config;
use mutn_core::networks::InitScheme;
use mutn_core::rng::SeedTree;
use mutn_core::synthdata::Dataset;
use mutn_core::training::{self, Checkpoint, EvalOptions, EvalOutput, ModelKind, ThetaSource, TrainConfig};

use crate::commands::curves_csv;
use crate::data::{self, Split};
use crate::desk::Scale;
use crate::output::{self, write_csv};
use crate::plot::{line_chart, Series};
use crate::{Failure, Result};

pub const EXPERIMENTS: [&str; 6] = ["table1", "table2", "fig6", "fig7", "fig8", "appendixB"];

/// Equilibrium iteration budget of the extended evaluation.
pub const FIG7_ITERS: usize = 100;
/// Unrolled depth of the extended evaluation.
pub const FIG8_ITERS: usize = 10;
/// Variances of the approximate blur kernel in the sensitivity sweep.
pub const SWEEP_VARIANCES: [f64; 4] = [1.0, 3.0, 5.0, 7.0];

pub struct Runner {
    out: PathBuf,
    scale: Scale,
    seed: Option<u64>,
    pub verbose: bool,
}

impl Runner {
    pub fn new(out: impl Into<PathBuf>, scale: Scale, seed: Option<u64>) -> Self {
        Self { out: out.into(), scale, seed, verbose: false }
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    /// The deconvolution config of this scale, seed override applied.
    pub fn deconv_config(&self) -> Config {
        self.with_seed(self.scale.deconv())
    }

    pub fn deblur_config(&self) -> Config {
        self.with_seed(self.scale.deblur())
    }

    fn with_seed(&self, mut cfg: Config) -> Config {
        if let Some(s) = self.seed {
            cfg.set("seed", s);
        }
        cfg
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn cache_path(&self, stem: &str, cfg: &Config) -> PathBuf {
        self.out.join("cache").join(format!("{stem}-{}.mutn", cfg.hash()))
    }

    pub fn dataset(&self, cfg: &Config, split: Split) -> Result<Dataset> {
        let path = self.cache_path(split.name(), &data::data_keys(cfg));
        if path.exists() {
            return Ok(Dataset::load(&path)?);
        }
        let t = Instant::now();
        let ds = data::generate(cfg, split)?;
        fs::create_dir_all(path.parent().expect("cache dir"))?;
        ds.save(&path)?;
        self.log(format!("generated {} {} samples [{:.1?}]", ds.len(), split.name(), t.elapsed()));
        Ok(ds)
    }

    /// Trains (or loads) `kind` on the train split of `cfg`.
    pub fn checkpoint(&self, cfg: &Config, kind: ModelKind) -> Result<Checkpoint> {
        let mut cfg = cfg.clone();
        cfg.set("model.kind", kind.name());
        let path = self.cache_path(&format!("model-{}", kind.name()), &cfg);
        if path.exists() {
            return Ok(Checkpoint::load(&path)?);
        }
        let tc = TrainConfig::from_config(&cfg)?;
        let ds = self.dataset(&cfg, Split::Train)?;
        let t = Instant::now();
        let mut hook = |r: &training::EpochRecord| {
            self.log(format!(
                "  {} epoch {} train {:.5e} val {:.5e} [{:.1?}]",
                kind.name(),
                r.epoch,
                r.train_loss,
                r.val_loss,
                t.elapsed()
            ))
        };
        let ckpt = training::train(&ds, &tc, Some(&mut hook))?;
        ckpt.save(&path, &output::header(&cfg))?;
        self.log(format!("trained {} [{:.1?}]", kind.name(), t.elapsed()));
        Ok(ckpt)
    }

    fn evaluate(&self, ckpt: &Checkpoint, data: &Dataset, theta: ThetaSource, iterations: Option<usize>) -> Result<EvalOutput> {
        let seed = SeedTree::new(ckpt.train.seed).child(2).seed();
        let t = Instant::now();
        let ev = training::evaluate(ckpt, data, &EvalOptions { theta, iterations, tol: None, seed })?;
        self.log(format!(
            "evaluated {} (θ {}, iterations {:?}): psnr {:.3} ssim {:.4} [{:.1?}]",
            ckpt.model().kind.name(),
            theta.name(),
            iterations,
            ev.report.psnr().mean,
            ev.report.ssim().mean,
            t.elapsed()
        ));
        Ok(ev)
    }

    /// Runs one experiment and returns the files written.
    pub fn run(&self, name: &str) -> Result<Vec<PathBuf>> {
        let dir = self.out.join(name);
        fs::create_dir_all(&dir)?;
        match name {
            "table1" => self.table1(&dir),
            "table2" => self.table2(&dir),
            "fig6" => self.iterate_curves(&dir, "fig6", None),
            "fig7" => self.fig7(&dir),
            "fig8" => self.iterate_curves(&dir, "fig8", Some(FIG8_ITERS)),
            "appendixB" => self.appendix_b(&dir),
            other => Err(Failure::Config(format!(
                "unknown experiment `{other}` (expected one of {})",
                EXPERIMENTS.join(", ")
            ))),
        }
    }

    fn table1(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let cfg = self.deconv_config();
        let test = self.dataset(&cfg, Split::Test)?;
        let mut written = Vec::new();
        let mut body = String::from("model,psnr_mean,psnr_std,ssim_mean,ssim_std,mse_mean,mse_std\n");
        for kind in ModelKind::ALL {
            let ckpt = self.checkpoint(&cfg, kind)?;
            let ev = self.evaluate(&ckpt, &test, ThetaSource::Saved, None)?;
            let (p, s, m) = (ev.report.psnr(), ev.report.ssim(), ev.report.mse());
            body.push_str(&format!("{},{},{},{},{},{},{}\n", kind.name(), p.mean, p.std, s.mean, s.std, m.mean, m.std));
            let metrics = dir.join(format!("metrics_{}.csv", kind.name()));
            write_csv(&metrics, &cfg, &ev.report.to_csv())?;
            let curves = dir.join(format!("curves_{}.csv", kind.name()));
            write_csv(&curves, &cfg, &curves_csv(&ckpt))?;
            written.extend([metrics, curves]);
        }
        let table = dir.join("table1.csv");
        write_csv(&table, &cfg, &body)?;
        written.insert(0, table);
        Ok(written)
    }

    fn table2(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let cfg = self.deconv_config();
        let test = self.dataset(&cfg, Split::Test)?;
        let mut body = String::from("model,theta_init,psnr_mean,psnr_std,ssim_mean,ssim_std\n");
        for kind in [ModelKind::AaLu, ModelKind::AaDeq] {
            let ckpt = self.checkpoint(&cfg, kind)?;
            for theta in [ThetaSource::Saved, ThetaSource::Fresh(InitScheme::KaimingUniform), ThetaSource::Fresh(InitScheme::Xavier)] {
                let ev = self.evaluate(&ckpt, &test, theta, None)?;
                let (p, s) = (ev.report.psnr(), ev.report.ssim());
                body.push_str(&format!("{},{},{},{},{},{}\n", kind.name(), theta.name(), p.mean, p.std, s.mean, s.std));
            }
        }
        let table = dir.join("table2.csv");
        write_csv(&table, &cfg, &body)?;
        Ok(vec![table])
    }

    /// Mean test MSE of each iterate for robust LU and A-adaptive LU, at the
    /// trained depth or at `iterations`.
    fn iterate_curves(&self, dir: &Path, name: &str, iterations: Option<usize>) -> Result<Vec<PathBuf>> {
        let cfg = self.deconv_config();
        let test = self.dataset(&cfg, Split::Test)?;
        let mut body = String::from("model,k,mse\n");
        let mut series = Vec::new();
        for kind in [ModelKind::RobustLu, ModelKind::AaLu] {
            let ckpt = self.checkpoint(&cfg, kind)?;
            let ev = self.evaluate(&ckpt, &test, ThetaSource::Saved, iterations)?;
            let depth = iterations.unwrap_or(ckpt.model().iterations);
            let points = mse_curve(&ev, depth)?;
            for &(k, m) in &points {
                body.push_str(&format!("{},{},{}\n", kind.name(), k, m));
            }
            series.push(Series { name: kind.name().into(), points });
        }
        self.emit_figure(dir, name, &cfg, &body, &series)
    }

    fn fig7(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let cfg = self.deconv_config();
        let test = self.dataset(&cfg, Split::Test)?;
        let ckpt = self.checkpoint(&cfg, ModelKind::AaDeq)?;
        let ev = self.evaluate(&ckpt, &test, ThetaSource::Saved, Some(FIG7_ITERS))?;
        let points = mse_curve(&ev, FIG7_ITERS)?;
        let mut body = String::from("model,k,mse\n");
        for &(k, m) in &points {
            body.push_str(&format!("aa_deq,{k},{m}\n"));
        }
        let converged = ev.traces.iter().filter(|t| t.converged).count();
        self.log(format!("fig7: {converged}/{} instances converged", ev.traces.len()));
        self.emit_figure(dir, "fig7", &cfg, &body, &[Series { name: "aa_deq".into(), points }])
    }

    fn emit_figure(&self, dir: &Path, name: &str, cfg: &Config, body: &str, series: &[Series]) -> Result<Vec<PathBuf>> {
        let csv = dir.join(format!("{name}.csv"));
        write_csv(&csv, cfg, body)?;
        let svg = dir.join(format!("{name}.svg"));
        fs::write(&svg, line_chart(&format!("{name}: mean test MSE per iterate"), "iteration k", "MSE", series))?;
        Ok(vec![csv, svg])
    }

    fn appendix_b(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let cfg = self.deblur_config();
        let kinds = [ModelKind::RobustLu, ModelKind::AaLu, ModelKind::AaDeq];
        let ckpts = kinds.iter().map(|&k| self.checkpoint(&cfg, k)).collect::<Result<Vec<_>>>()?;
        let mut body = String::from("sigma0,model,psnr_mean,psnr_std,ssim_mean,ssim_std\n");
        for v in SWEEP_VARIANCES {
            let mut test_cfg = cfg.clone();
            test_cfg.set("data.a0_variance", v);
            let test = self.dataset(&test_cfg, Split::Test)?;
            for (kind, ckpt) in kinds.iter().zip(&ckpts) {
                let ev = self.evaluate(ckpt, &test, ThetaSource::Saved, None)?;
                let (p, s) = (ev.report.psnr(), ev.report.ssim());
                body.push_str(&format!("{v},{},{},{},{},{}\n", kind.name(), p.mean, p.std, s.mean, s.std));
            }
        }
        let table = dir.join("appendixB.csv");
        write_csv(&table, &cfg, &body)?;
        Ok(vec![table])
    }
}

/// `(k, mean MSE of x_k)` for `k = 0..=depth`.
fn mse_curve(ev: &EvalOutput, depth: usize) -> Result<Vec<(f64, f64)>> {
    (0..=depth)
        .map(|k| {
            ev.mean_mse_at(k)
                .map(|m| (k as f64, m))
                .ok_or_else(|| Failure::Config("evaluation produced no iterate MSE".into()))
        })
        .collect()
}
