//! Reconstruction quality: MSE, PSNR, SSIM and mean ± std aggregation.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mse", a.shape(), b.shape()));
    }
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.len() as f64)
}

/// `10·log10(peak² / mse)`; identical inputs give `f64::INFINITY`.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("psnr peak must be positive, got {peak}")));
    }
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

fn gaussian_window() -> Vec<f64> {
    let c = (WINDOW / 2) as f64;
    let w: Vec<f64> = (0..WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of a `rows × cols` plane (rows = 1 for signals).
fn filter_valid(plane: &[f64], rows: usize, cols: usize, win: &[f64], two_d: bool) -> (Vec<f64>, usize, usize) {
    let k = win.len();
    let oc = cols - k + 1;
    let mut horiz = vec![0.0; rows * oc];
    for r in 0..rows {
        for c in 0..oc {
            horiz[r * oc + c] = (0..k).map(|j| win[j] * plane[r * cols + c + j]).sum();
        }
    }
    if !two_d {
        return (horiz, rows, oc);
    }
    let or = rows - k + 1;
    let mut out = vec![0.0; or * oc];
    for r in 0..or {
        for c in 0..oc {
            out[r * oc + c] = (0..k).map(|i| win[i] * horiz[(r + i) * oc + c]).sum();
        }
    }
    (out, or, oc)
}

/// Mean SSIM over a Gaussian window of length 11 (σ = 1.5), using valid
/// positions only. Accepts `[c, n]` signals (1D window) and `[c, h, w]`
/// images (2D window); the result is averaged over channels.
pub fn ssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim", a.shape(), b.shape()));
    }
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("ssim dynamic range must be positive, got {peak}")));
    }
    let (channels, rows, cols, two_d) = match a.shape() {
        [c, n] => (*c, 1, *n, false),
        [c, h, w] => (*c, *h, *w, true),
        s => return Err(Error::invalid(format!("ssim expects [c, n] or [c, h, w], got {s:?}"))),
    };
    if cols < WINDOW || (two_d && rows < WINDOW) {
        return Err(Error::invalid(format!("ssim needs extents of at least {WINDOW}, got {:?}", a.shape())));
    }
    let win = gaussian_window();
    let c1 = (K1 * peak).powi(2);
    let c2 = (K2 * peak).powi(2);
    let plane = rows * cols;
    let mut total = 0.0;
    for ch in 0..channels {
        let pa = &a.data()[ch * plane..(ch + 1) * plane];
        let pb = &b.data()[ch * plane..(ch + 1) * plane];
        let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { pa.iter().zip(pb).map(|(&x, &y)| f(x, y)).collect() };
        let (mu_a, ..) = filter_valid(pa, rows, cols, &win, two_d);
        let (mu_b, ..) = filter_valid(pb, rows, cols, &win, two_d);
        let (saa, ..) = filter_valid(&prod(&|x, _| x * x), rows, cols, &win, two_d);
        let (sbb, ..) = filter_valid(&prod(&|_, y| y * y), rows, cols, &win, two_d);
        let (sab, ..) = filter_valid(&prod(&|x, y| x * y), rows, cols, &win, two_d);
        let mut acc = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = saa[i] - ma * ma;
            let vb = sbb[i] - mb * mb;
            let cov = sab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / mu_a.len() as f64;
    }
    Ok(total / channels as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub instance_id: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub mse: f64,
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Summary {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Summary { mean: f64::NAN, std: f64::NAN };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Summary { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    pub fn psnr(&self) -> Summary {
        Summary::of(self.rows.iter().map(|r| r.psnr_db))
    }

    pub fn ssim(&self) -> Summary {
        Summary::of(self.rows.iter().map(|r| r.ssim))
    }

    pub fn mse(&self) -> Summary {
        Summary::of(self.rows.iter().map(|r| r.mse))
    }

    /// `instance_id,psnr_db,ssim,mse` lines, with the column header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("instance_id,psnr_db,ssim,mse\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.instance_id, r.psnr_db, r.ssim, r.mse));
        }
        s
    }

    pub fn summary_text(&self) -> String {
        let (p, s, m) = (self.psnr(), self.ssim(), self.mse());
        format!(
            "samples {}\npsnr_db {:.4} ± {:.4}\nssim {:.5} ± {:.5}\nmse {:.6e} ± {:.6e}\n",
            self.rows.len(),
            p.mean,
            p.std,
            s.mean,
            s.std,
            m.mean,
            m.std
        )
    }
}
