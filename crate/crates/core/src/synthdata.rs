//! Synthetic datasets for the three tasks. Each sample pairs a ground truth
//! with a measurement produced by the true forward model, and the features
//! of a deliberately inexact approximation `A₀`.
//!
//! Sample `i` draws everything from stream `i` of the dataset seed, so the
//! output is independent of generation order and thread count. All stored
//! tensors are rounded to `f32` so that a saved dataset reloads exactly.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::container::{DType, TensorFile};
use crate::error::{Error, Result};
use crate::operators::{gaussian_kernel2d, ricker_wavelet, FogModel, LinearOperator};
use crate::rng::{SeedTree, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Deconv,
    Deblur,
    Defog,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Deconv => "deconv",
            Task::Deblur => "deblur",
            Task::Defog => "defog",
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        match s {
            "deconv" => Ok(Task::Deconv),
            "deblur" => Ok(Task::Deblur),
            "defog" => Ok(Task::Defog),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }

    /// Whether `x₀` is `A₀ᵀy` (measurement and signal spaces differ in
    /// character) or simply `y`.
    pub fn init_from_adjoint(self) -> bool {
        matches!(self, Task::Deconv)
    }

    /// PSNR peak for a ground truth: `max|x|` for signed traces, 1 for images.
    pub fn peak(self, truth: &Tensor) -> f64 {
        match self {
            Task::Deconv => truth.max_abs(),
            Task::Deblur | Task::Defog => 1.0,
        }
    }
}

/// Additive white Gaussian noise with standard deviation `sigma · RMS(y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

pub fn add_noise(y: &Tensor, spec: &NoiseSpec) -> Result<Tensor> {
    if !(spec.sigma >= 0.0) {
        return Err(Error::invalid(format!("noise sigma must be non-negative, got {}", spec.sigma)));
    }
    if spec.sigma == 0.0 {
        return Ok(y.clone());
    }
    let rms = (y.sq_norm() / y.len() as f64).sqrt();
    let mut s = SeedTree::new(spec.seed).stream(0);
    let data = y.data().iter().map(|v| v + spec.sigma * rms * s.normal()).collect();
    Tensor::new(y.shape().to_vec(), data)
}

/// Holds the true-model features. Every read is counted so tests can prove
/// the solve path never touches them.
#[derive(Debug)]
pub struct Sealed {
    value: Tensor,
    reads: AtomicUsize,
}

impl Sealed {
    pub fn new(value: Tensor) -> Self {
        Self { value, reads: AtomicUsize::new(0) }
    }

    pub fn reveal(&self) -> &Tensor {
        self.reads.fetch_add(1, Ordering::Relaxed);
        &self.value
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }
}

impl Clone for Sealed {
    fn clone(&self) -> Self {
        Sealed::new(self.value.clone())
    }
}

impl PartialEq for Sealed {
    fn eq(&self, other: &Self) -> bool {
        self.value == other.value
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleTriple {
    pub x: Tensor,
    pub y: Tensor,
    pub a0_features: Tensor,
    pub true_features: Sealed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    /// Free-form provenance text stored in the file header.
    pub header: String,
    pub samples: Vec<SampleTriple>,
}

impl Dataset {
    pub fn new(task: Task, samples: Vec<SampleTriple>) -> Self {
        Self { task, header: String::new(), samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The approximate operator `A₀` of sample `i`, built from `a0_features` only.
    pub fn operator(&self, i: usize) -> Result<LinearOperator> {
        let s = &self.samples[i];
        operator_for(self.task, &s.a0_features, s.y.shape())
    }

    /// The true operator of sample `i` (linear tasks), for diagnostics.
    pub fn true_operator(&self, i: usize) -> Result<LinearOperator> {
        let s = &self.samples[i];
        match self.task {
            Task::Defog => Err(Error::invalid("the fog model is not linear")),
            _ => operator_for(self.task, s.true_features.reveal(), s.y.shape()),
        }
    }

    /// Splits off the last `round(frac · len)` samples.
    pub fn split(&self, frac: f64) -> (Dataset, Dataset) {
        let n_tail = ((self.len() as f64) * frac).round() as usize;
        let cut = self.len() - n_tail.min(self.len());
        let head = Dataset { task: self.task, header: self.header.clone(), samples: self.samples[..cut].to_vec() };
        let tail = Dataset { task: self.task, header: self.header.clone(), samples: self.samples[cut..].to_vec() };
        (head, tail)
    }

    pub fn subset(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset { task: self.task, header: self.header.clone(), samples: self.samples[range].to_vec() }
    }

    pub fn to_file(&self) -> Result<TensorFile> {
        let mut f = TensorFile::new();
        f.push_text("header", &self.header)?;
        f.push_text("task", self.task.name())?;
        f.push_tensor("count", &Tensor::scalar(self.len() as f64), DType::F64)?;
        for (i, s) in self.samples.iter().enumerate() {
            f.push_tensor(&format!("x.{i}"), &s.x, DType::F32)?;
            f.push_tensor(&format!("y.{i}"), &s.y, DType::F32)?;
            f.push_tensor(&format!("a0.{i}"), &s.a0_features, DType::F32)?;
            f.push_tensor(&format!("true.{i}"), &s.true_features.value, DType::F32)?;
        }
        Ok(f)
    }

    pub fn from_file(f: &TensorFile) -> Result<Dataset> {
        let task = Task::parse(&f.text("task")?)?;
        let count = f.tensor("count")?.item()? as usize;
        let samples = (0..count)
            .map(|i| {
                Ok(SampleTriple {
                    x: f.tensor(&format!("x.{i}"))?,
                    y: f.tensor(&format!("y.{i}"))?,
                    a0_features: f.tensor(&format!("a0.{i}"))?,
                    true_features: Sealed::new(f.tensor(&format!("true.{i}"))?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { task, header: f.text("header")?, samples })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_file()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        Dataset::from_file(&TensorFile::load(path)?)
    }
}

/// Builds the operator a solver sees for a task from its features.
pub fn operator_for(task: Task, features: &Tensor, signal_shape: &[usize]) -> Result<LinearOperator> {
    match task {
        Task::Deconv => {
            let n = match signal_shape {
                [1, n] => *n,
                s => return Err(Error::invalid(format!("deconvolution signals are [1, n], got {s:?}"))),
            };
            LinearOperator::toeplitz(features.clone(), n)
        }
        Task::Deblur => LinearOperator::blur(features.clone(), signal_shape),
        Task::Defog => Ok(LinearOperator::identity(signal_shape, features.clone())),
    }
}

/// `10·log10(max(k_true)² / mse)`; identical kernels give `f64::INFINITY`.
pub fn kernel_psnr(k_true: &Tensor, k_approx: &Tensor) -> Result<f64> {
    let m = crate::metrics::mse(k_true, k_approx)?;
    Ok(crate::metrics::psnr_from_mse(m, k_true.max()))
}

/// Adds Gaussian noise to `kernel`, scaled so that `kernel_psnr` of the
/// result equals `target_db`.
pub fn perturb_kernel(kernel: &Tensor, target_db: f64, stream: &mut Stream) -> Tensor {
    let noise: Vec<f64> = (0..kernel.len()).map(|_| stream.normal()).collect();
    let noise_ms = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    let target_mse = kernel.max().powi(2) / 10f64.powf(target_db / 10.0);
    let s = (target_mse / noise_ms).sqrt();
    let mut out = kernel.clone();
    out.data_mut().iter_mut().zip(noise).for_each(|(k, n)| *k += s * n);
    out
}

/// Bernoulli(`p`)–Gaussian spike train of length `n`.
pub fn gen_reflectivity(stream: &mut Stream, n: usize, spike_prob: f64, amplitude_std: f64) -> Result<Tensor> {
    if !(spike_prob > 0.0 && spike_prob < 1.0) {
        return Err(Error::invalid(format!("spike probability must lie in (0, 1), got {spike_prob}")));
    }
    let data = (0..n)
        .map(|_| {
            let spike = stream.bernoulli(spike_prob);
            let amp = stream.normal();
            if spike {
                amplitude_std * amp
            } else {
                0.0
            }
        })
        .collect();
    Ok(Tensor::vector(data))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeismicConfig {
    pub count: usize,
    pub n: usize,
    pub f0_range: (f64, f64),
    /// Relative frequency error of the inexact wavelet: `f0·(1 + u)`, `u ~ U(−δ, δ)`.
    pub delta: f64,
    pub noise_sigma: f64,
    pub dt: f64,
    pub half_len: usize,
    pub spike_prob: f64,
    pub amplitude_std: f64,
    pub seed: u64,
}

impl Default for SeismicConfig {
    fn default() -> Self {
        Self {
            count: 2000,
            n: 128,
            f0_range: (20.0, 40.0),
            delta: 0.1,
            noise_sigma: 0.01,
            dt: 0.004,
            half_len: 15,
            spike_prob: 0.1,
            amplitude_std: 1.0,
            seed: 0,
        }
    }
}

/// Ricker wavelet rescaled so the peak of its amplitude spectrum is one.
/// The convolution then has operator norm one (up to boundary effects) and
/// a unit gradient step is the classical `1/L` step.
pub fn unit_wavelet(f0: f64, dt: f64, half_len: usize) -> Result<Tensor> {
    let w = ricker_wavelet(f0, dt, half_len)?;
    Ok(w.scale(1.0 / spectral_peak(w.data())))
}

/// `max_ω |Σ_k w_k e^{−iωk}|` sampled on 2048 frequencies in `[0, π]`.
pub fn spectral_peak(w: &[f64]) -> f64 {
    const GRID: usize = 2048;
    (0..=GRID)
        .map(|j| {
            let omega = std::f64::consts::PI * j as f64 / GRID as f64;
            let (re, im) = w.iter().enumerate().fold((0.0, 0.0), |(re, im), (k, &v)| {
                let a = omega * k as f64;
                (re + v * a.cos(), im - v * a.sin())
            });
            (re * re + im * im).sqrt()
        })
        .fold(0.0, f64::max)
}

pub fn gen_seismic_dataset(cfg: &SeismicConfig) -> Result<Dataset> {
    if !(cfg.delta >= 0.0) {
        return Err(Error::invalid(format!("mismatch delta must be non-negative, got {}", cfg.delta)));
    }
    if !(cfg.f0_range.0 > 0.0 && cfg.f0_range.0 <= cfg.f0_range.1) {
        return Err(Error::invalid("f0 range must be positive and ordered"));
    }
    let tree = SeedTree::new(cfg.seed);
    let samples = (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let mut s = tree.stream(i as u64);
            let mut x = gen_reflectivity(&mut s, cfg.n, cfg.spike_prob, cfg.amplitude_std)?;
            // An all-zero trace has no defined PSNR peak; redraw.
            while cfg.amplitude_std > 0.0 && x.max_abs() == 0.0 {
                x = gen_reflectivity(&mut s, cfg.n, cfg.spike_prob, cfg.amplitude_std)?;
            }
            let x = x.reshape(vec![1, cfg.n])?.quantize_f32();
            let f0 = s.uniform_in(cfg.f0_range.0, cfg.f0_range.1);
            let u = s.uniform_in(-cfg.delta, cfg.delta);
            let w_true = unit_wavelet(f0, cfg.dt, cfg.half_len)?.quantize_f32();
            let w_a0 = if cfg.delta == 0.0 {
                w_true.clone()
            } else {
                unit_wavelet(f0 * (1.0 + u), cfg.dt, cfg.half_len)?.quantize_f32()
            };
            let clean = LinearOperator::toeplitz(w_true.clone(), cfg.n)?.apply(&x)?;
            let noise = NoiseSpec { sigma: cfg.noise_sigma, seed: s.next_u64() };
            let y = add_noise(&clean, &noise)?.quantize_f32();
            Ok(SampleTriple { x, y, a0_features: w_a0, true_features: Sealed::new(w_true) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(Task::Deconv, samples))
}

/// Where deblurring ground truths come from.
#[derive(Clone, Debug, PartialEq)]
pub enum ImageSource {
    Synthetic,
    /// PNG/JPEG files, sorted by name, centre-cropped to the target aspect
    /// ratio and resized. Sample `i` uses file `i mod len`.
    Folder(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeblurConfig {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_size: usize,
    /// Variance (σ²) range of the true kernel; equal bounds fix it.
    pub true_variance: (f64, f64),
    /// Variance range of the approximate kernel handed to the solver.
    pub a0_variance: (f64, f64),
    pub noise_sigma: f64,
    pub source: ImageSource,
    pub seed: u64,
}

impl Default for DeblurConfig {
    fn default() -> Self {
        Self {
            count: 600,
            height: 24,
            width: 24,
            kernel_size: 5,
            true_variance: (7.0, 7.0),
            a0_variance: (4.0, 10.0),
            noise_sigma: 0.01,
            source: ImageSource::Synthetic,
            seed: 0,
        }
    }
}

fn smooth_field(s: &mut Stream, h: usize, w: usize, terms: usize, amp: f64) -> Vec<f64> {
    let mut field = vec![0.0; h * w];
    for _ in 0..terms {
        let a = s.uniform_in(0.0, amp);
        let fy = s.uniform_in(0.0, 3.0);
        let fx = s.uniform_in(0.0, 3.0);
        let phase = s.uniform_in(0.0, std::f64::consts::TAU);
        for r in 0..h {
            for c in 0..w {
                let t = std::f64::consts::TAU * (fy * r as f64 / h as f64 + fx * c as f64 / w as f64) + phase;
                field[r * w + c] += a * t.cos();
            }
        }
    }
    field
}

/// A `3 × h × w` image in `[0, 1]`: smooth colour fields overlaid with a
/// few random rectangles.
pub fn gen_synthetic_image(s: &mut Stream, h: usize, w: usize) -> Tensor {
    let mut img = Vec::with_capacity(3 * h * w);
    for _ in 0..3 {
        let base = s.uniform_in(0.2, 0.8);
        img.extend(smooth_field(s, h, w, 3, 0.15).into_iter().map(|v| base + v));
    }
    let rects = 2 + s.below(3) as usize;
    for _ in 0..rects {
        let rh = 2 + s.below((h / 2).max(1) as u64) as usize;
        let rw = 2 + s.below((w / 2).max(1) as u64) as usize;
        let r0 = s.below(h as u64) as usize;
        let c0 = s.below(w as u64) as usize;
        let color = [s.uniform(), s.uniform(), s.uniform()];
        let alpha = s.uniform_in(0.5, 1.0);
        for (ch, col) in color.iter().enumerate() {
            for r in r0..(r0 + rh).min(h) {
                for c in c0..(c0 + rw).min(w) {
                    let p = &mut img[ch * h * w + r * w + c];
                    *p = (1.0 - alpha) * *p + alpha * col;
                }
            }
        }
    }
    Tensor::from_parts(vec![3, h, w], img.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!("no png or jpeg images in {}", dir.display())));
    }
    Ok(files)
}

/// Loads an image as `[3, h, w]` in `[0, 1]`, centre-cropped to the target
/// aspect ratio and resized with a triangle filter.
pub fn load_image(path: &Path, h: usize, w: usize) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?
        .to_rgb8();
    let (iw, ih) = img.dimensions();
    let target = w as f64 / h as f64;
    let (cw, ch) = if iw as f64 / ih as f64 > target {
        (((ih as f64) * target).round() as u32, ih)
    } else {
        (iw, ((iw as f64) / target).round() as u32)
    };
    let (cw, ch) = (cw.clamp(1, iw), ch.clamp(1, ih));
    let cropped = image::imageops::crop_imm(&img, (iw - cw) / 2, (ih - ch) / 2, cw, ch).to_image();
    let resized = image::imageops::resize(&cropped, w as u32, h as u32, image::imageops::FilterType::Triangle);
    let mut data = vec![0.0; 3 * h * w];
    for (c, r, px) in resized.enumerate_pixels() {
        for ch in 0..3 {
            data[ch * h * w + r as usize * w + c as usize] = px[ch] as f64 / 255.0;
        }
    }
    Ok(Tensor::from_parts(vec![3, h, w], data))
}

pub fn gen_deblur_dataset(cfg: &DeblurConfig) -> Result<Dataset> {
    let ranges_ok = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi;
    if !ranges_ok(cfg.true_variance) || !ranges_ok(cfg.a0_variance) {
        return Err(Error::invalid("kernel variance ranges must be positive and ordered"));
    }
    if cfg.kernel_size % 2 == 0 {
        return Err(Error::invalid(format!("kernel size must be odd, got {}", cfg.kernel_size)));
    }
    let files = match &cfg.source {
        ImageSource::Synthetic => Vec::new(),
        ImageSource::Folder(dir) => list_images(dir)?,
    };
    let tree = SeedTree::new(cfg.seed);
    let shape = [3, cfg.height, cfg.width];
    let samples = (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let mut s = tree.stream(i as u64);
            let x = match &cfg.source {
                ImageSource::Synthetic => gen_synthetic_image(&mut s, cfg.height, cfg.width),
                ImageSource::Folder(_) => load_image(&files[i % files.len()], cfg.height, cfg.width)?,
            }
            .quantize_f32();
            let v_true = s.uniform_in(cfg.true_variance.0, cfg.true_variance.1);
            let v_a0 = s.uniform_in(cfg.a0_variance.0, cfg.a0_variance.1);
            let k_true = gaussian_kernel2d(cfg.kernel_size, v_true)?.quantize_f32();
            let k_a0 = gaussian_kernel2d(cfg.kernel_size, v_a0)?.quantize_f32();
            let clean = LinearOperator::blur(k_true.clone(), &shape)?.apply(&x)?;
            let noise = NoiseSpec { sigma: cfg.noise_sigma, seed: s.next_u64() };
            let y = add_noise(&clean, &noise)?.quantize_f32();
            Ok(SampleTriple { x, y, a0_features: k_a0, true_features: Sealed::new(k_true) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(Task::Deblur, samples))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FogConfig {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    /// Attenuation `β` range; `T = exp(−β·d)`.
    pub beta_range: (f64, f64),
    pub airlight_range: (f64, f64),
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for FogConfig {
    fn default() -> Self {
        Self {
            count: 400,
            height: 24,
            width: 24,
            beta_range: (0.5, 1.5),
            airlight_range: (0.7, 1.0),
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

/// A landscape-like depth map in `[0, 1]`: a vertical ramp (far at the top)
/// plus smooth undulations, min-max normalised.
pub fn gen_depth_map(s: &mut Stream, h: usize, w: usize) -> Tensor {
    let mut d = smooth_field(s, h, w, 3, 0.3);
    for r in 0..h {
        let ramp = 1.0 - r as f64 / (h.max(2) - 1) as f64;
        for c in 0..w {
            d[r * w + c] += ramp;
        }
    }
    let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    Tensor::from_parts(vec![h, w], d.into_iter().map(|v| (v - lo) / span).collect())
}

pub fn gen_fog_dataset(cfg: &FogConfig) -> Result<Dataset> {
    if !(cfg.beta_range.0 > 0.0 && cfg.beta_range.0 <= cfg.beta_range.1) {
        return Err(Error::invalid("fog beta range must be positive and ordered"));
    }
    let (h, w) = (cfg.height, cfg.width);
    let tree = SeedTree::new(cfg.seed);
    let samples = (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let mut s = tree.stream(i as u64);
            let x = gen_synthetic_image(&mut s, h, w).quantize_f32();
            let depth = gen_depth_map(&mut s, h, w).quantize_f32();
            let beta = s.uniform_in(cfg.beta_range.0, cfg.beta_range.1);
            let air: Vec<f64> = (0..3).map(|_| s.uniform_in(cfg.airlight_range.0, cfg.airlight_range.1)).collect();
            let t_plane: Vec<f64> = depth.data().iter().map(|d| (-beta * d).exp()).collect();
            let transmission = Tensor::from_parts(vec![3, h, w], t_plane.repeat(3)).quantize_f32();
            let airlight =
                Tensor::from_parts(vec![3, h, w], air.iter().flat_map(|&l| std::iter::repeat_n(l, h * w)).collect())
                    .quantize_f32();
            let model = FogModel { transmission, airlight };
            let clean = model.apply(&x)?;
            let noise = NoiseSpec { sigma: cfg.noise_sigma, seed: s.next_u64() };
            let y = add_noise(&clean, &noise)?.quantize_f32();
            let mut truth = model.transmission.into_data();
            truth.extend(model.airlight.into_data());
            Ok(SampleTriple {
                x,
                y,
                a0_features: depth,
                true_features: Sealed::new(Tensor::from_parts(vec![6, h, w], truth)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(Task::Defog, samples))
}
