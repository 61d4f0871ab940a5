//! "Same" convolution kernels with zero padding.
//!
//! All kernels compute true convolution (the kernel is flipped) with the
//! kernel centre aligned to the output sample:
//! `y[i] = Σ_j w[j] · x[i − j + c]` with `c = (len(w) − 1) / 2`.
//! The adjoint of convolution is correlation with the same kernel, which is
//! what the `*_input_grad` functions compute.

/// Valid output range `[lo, hi)` for an index shift `s` over length `n`,
/// i.e. all `i` with `0 <= i + s < n`.
#[inline]
fn valid_range(n: usize, s: isize) -> (usize, usize) {
    let lo = (-s).max(0) as usize;
    let hi = (n as isize - s).clamp(0, n as isize) as usize;
    (lo, hi.max(lo))
}

#[inline]
fn axpy_shifted(y: &mut [f64], x: &[f64], w: f64, s: isize) {
    let (lo, hi) = valid_range(y.len(), s);
    let xs = (lo as isize + s) as usize;
    for (yv, xv) in y[lo..hi].iter_mut().zip(&x[xs..xs + (hi - lo)]) {
        *yv += w * xv;
    }
}

#[inline]
fn dot_shifted(g: &[f64], x: &[f64], s: isize) -> f64 {
    let (lo, hi) = valid_range(g.len(), s);
    let xs = (lo as isize + s) as usize;
    g[lo..hi]
        .iter()
        .zip(&x[xs..xs + (hi - lo)])
        .map(|(a, b)| a * b)
        .sum()
}

/// Same as [`axpy_shifted`] but scatters into `x` (the transpose direction).
#[inline]
fn axpy_unshifted(x: &mut [f64], g: &[f64], w: f64, s: isize) {
    let (lo, hi) = valid_range(g.len(), s);
    let xs = (lo as isize + s) as usize;
    for (xv, gv) in x[xs..xs + (hi - lo)].iter_mut().zip(&g[lo..hi]) {
        *xv += w * gv;
    }
}

/// Multi-channel 1D convolution. `x: [cin, n]`, `w: [cout, cin, k]`, `y: [cout, n]`.
pub(crate) fn conv1d(x: &[f64], cin: usize, n: usize, w: &[f64], cout: usize, k: usize) -> Vec<f64> {
    let c0 = ((k - 1) / 2) as isize;
    let mut y = vec![0.0; cout * n];
    for o in 0..cout {
        let yo = &mut y[o * n..(o + 1) * n];
        for c in 0..cin {
            let xc = &x[c * n..(c + 1) * n];
            for j in 0..k {
                let wv = w[(o * cin + c) * k + j];
                axpy_shifted(yo, xc, wv, c0 - j as isize);
            }
        }
    }
    y
}

pub(crate) fn conv1d_input_grad(
    g: &[f64],
    cin: usize,
    n: usize,
    w: &[f64],
    cout: usize,
    k: usize,
) -> Vec<f64> {
    let c0 = ((k - 1) / 2) as isize;
    let mut dx = vec![0.0; cin * n];
    for o in 0..cout {
        let go = &g[o * n..(o + 1) * n];
        for c in 0..cin {
            let dxc = &mut dx[c * n..(c + 1) * n];
            for j in 0..k {
                let wv = w[(o * cin + c) * k + j];
                axpy_unshifted(dxc, go, wv, c0 - j as isize);
            }
        }
    }
    dx
}

pub(crate) fn conv1d_weight_grad(
    g: &[f64],
    x: &[f64],
    cin: usize,
    n: usize,
    cout: usize,
    k: usize,
) -> Vec<f64> {
    let c0 = ((k - 1) / 2) as isize;
    let mut dw = vec![0.0; cout * cin * k];
    for o in 0..cout {
        let go = &g[o * n..(o + 1) * n];
        for c in 0..cin {
            let xc = &x[c * n..(c + 1) * n];
            for j in 0..k {
                dw[(o * cin + c) * k + j] = dot_shifted(go, xc, c0 - j as isize);
            }
        }
    }
    dw
}

/// Geometry of a 2D convolution: `x: [cin, h, w]`, kernel `[cout, cin, kh, kw]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Geom2 {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
}

impl Geom2 {
    #[inline]
    fn shifts(&self, a: usize, b: usize) -> (isize, isize) {
        let ch = ((self.kh - 1) / 2) as isize;
        let cw = ((self.kw - 1) / 2) as isize;
        (ch - a as isize, cw - b as isize)
    }
}

pub(crate) fn conv2d(x: &[f64], kernel: &[f64], g: Geom2) -> Vec<f64> {
    let plane = g.h * g.w;
    let mut y = vec![0.0; g.cout * plane];
    for o in 0..g.cout {
        for c in 0..g.cin {
            let xc = &x[c * plane..(c + 1) * plane];
            for a in 0..g.kh {
                for b in 0..g.kw {
                    let wv = kernel[((o * g.cin + c) * g.kh + a) * g.kw + b];
                    let (sr, sc) = g.shifts(a, b);
                    let (r0, r1) = valid_range(g.h, sr);
                    for r in r0..r1 {
                        let src = (r as isize + sr) as usize;
                        let yrow = &mut y[o * plane + r * g.w..o * plane + (r + 1) * g.w];
                        axpy_shifted(yrow, &xc[src * g.w..(src + 1) * g.w], wv, sc);
                    }
                }
            }
        }
    }
    y
}

pub(crate) fn conv2d_input_grad(grad: &[f64], kernel: &[f64], g: Geom2) -> Vec<f64> {
    let plane = g.h * g.w;
    let mut dx = vec![0.0; g.cin * plane];
    for o in 0..g.cout {
        let go = &grad[o * plane..(o + 1) * plane];
        for c in 0..g.cin {
            for a in 0..g.kh {
                for b in 0..g.kw {
                    let wv = kernel[((o * g.cin + c) * g.kh + a) * g.kw + b];
                    let (sr, sc) = g.shifts(a, b);
                    let (r0, r1) = valid_range(g.h, sr);
                    for r in r0..r1 {
                        let dst = (r as isize + sr) as usize;
                        let dxrow = &mut dx[c * plane + dst * g.w..c * plane + (dst + 1) * g.w];
                        axpy_unshifted(dxrow, &go[r * g.w..(r + 1) * g.w], wv, sc);
                    }
                }
            }
        }
    }
    dx
}

pub(crate) fn conv2d_weight_grad(grad: &[f64], x: &[f64], g: Geom2) -> Vec<f64> {
    let plane = g.h * g.w;
    let mut dw = vec![0.0; g.cout * g.cin * g.kh * g.kw];
    for o in 0..g.cout {
        let go = &grad[o * plane..(o + 1) * plane];
        for c in 0..g.cin {
            let xc = &x[c * plane..(c + 1) * plane];
            for a in 0..g.kh {
                for b in 0..g.kw {
                    let (sr, sc) = g.shifts(a, b);
                    let (r0, r1) = valid_range(g.h, sr);
                    let mut acc = 0.0;
                    for r in r0..r1 {
                        let src = (r as isize + sr) as usize;
                        acc += dot_shifted(&go[r * g.w..(r + 1) * g.w], &xc[src * g.w..(src + 1) * g.w], sc);
                    }
                    dw[((o * g.cin + c) * g.kh + a) * g.kw + b] = acc;
                }
            }
        }
    }
    dw
}
