//! Convolution operators against dense matrices and the adjoint identity.

use mutn_core::operators::{gaussian_kernel2d, LinearOperator};
use mutn_core::rng::SeedTree;
use mutn_core::synthdata::unit_wavelet;
use mutn_core::tensor::Tensor;

use super::{random_tensor, rel_err, Outcome};

pub const PROBES: u64 = 10;
pub const ADJOINT_TOL: f64 = 1e-10;
pub const DENSE_TOL: f64 = 1e-12;

/// Dense `n × n` matrix of zero-padded "same" convolution with `w`.
pub fn dense_toeplitz(w: &[f64], n: usize) -> Vec<Vec<f64>> {
    let c = (w.len() / 2) as isize;
    (0..n)
        .map(|i| {
            (0..n)
                .map(|m| {
                    let j = i as isize - m as isize + c;
                    if j >= 0 && (j as usize) < w.len() {
                        w[j as usize]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

pub fn dense_apply(m: &[Vec<f64>], x: &[f64], transpose: bool) -> Vec<f64> {
    let n = m.len();
    (0..n)
        .map(|i| (0..n).map(|j| if transpose { m[j][i] } else { m[i][j] } * x[j]).sum())
        .collect()
}

/// Direct summation of channel-wise 2D "same" convolution.
pub fn naive_blur(x: &Tensor, k: &Tensor) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw) = (k.shape()[0], k.shape()[1]);
    let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = Tensor::zeros(vec![c, h, w]);
    for ci in 0..c {
        for i in 0..h as isize {
            for j in 0..w as isize {
                let mut acc = 0.0;
                for p in 0..kh as isize {
                    for q in 0..kw as isize {
                        let (si, sj) = (i - p + ch, j - q + cw);
                        if si >= 0 && sj >= 0 && si < h as isize && sj < w as isize {
                            acc += k.data()[(p * kw as isize + q) as usize]
                                * x.data()[ci * h * w + (si * w as isize + sj) as usize];
                        }
                    }
                }
                out.data_mut()[ci * h * w + (i * w as isize + j) as usize] = acc;
            }
        }
    }
    out
}

fn adjoint_gap(op: &LinearOperator, tree: SeedTree) -> f64 {
    let mut worst: f64 = 0.0;
    for p in 0..PROBES {
        let mut s = tree.stream(p);
        let x = random_tensor(&mut s, op.shape());
        let y = random_tensor(&mut s, op.shape());
        let lhs = op.apply(&x).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&op.adjoint(&y).unwrap()).unwrap();
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    worst
}

pub fn run() -> Outcome {
    let tree = SeedTree::new(11);
    let n = 32;
    let wavelet = unit_wavelet(27.0, 0.004, 15).map_err(|e| e.to_string())?;
    let toe = LinearOperator::toeplitz(wavelet.clone(), n).map_err(|e| e.to_string())?;
    let dense = dense_toeplitz(wavelet.data(), n);
    let mut worst_dense: f64 = 0.0;
    for p in 0..PROBES {
        let x = random_tensor(&mut tree.child(1).stream(p), &[1, n]);
        let fwd = Tensor::new(vec![1, n], dense_apply(&dense, x.data(), false)).unwrap();
        let adj = Tensor::new(vec![1, n], dense_apply(&dense, x.data(), true)).unwrap();
        worst_dense = worst_dense.max(rel_err(&toe.apply(&x).unwrap(), &fwd));
        worst_dense = worst_dense.max(rel_err(&toe.adjoint(&x).unwrap(), &adj));
    }
    let kernel = gaussian_kernel2d(5, 7.0).map_err(|e| e.to_string())?;
    let odd = random_tensor(&mut tree.stream(99), &[3, 5]);
    let shape = [3, 12, 14];
    for (i, k) in [kernel.clone(), odd].iter().enumerate() {
        let blur = LinearOperator::blur(k.clone(), &shape).map_err(|e| e.to_string())?;
        for p in 0..PROBES {
            let x = random_tensor(&mut tree.child(2 + i as u64).stream(p), &shape);
            worst_dense = worst_dense.max(rel_err(&blur.apply(&x).unwrap(), &naive_blur(&x, k)));
        }
    }
    if !(worst_dense < DENSE_TOL) {
        return Err(format!("operator vs dense oracle: relative error {worst_dense:.3e} ≥ {DENSE_TOL:e}"));
    }
    let ops = [
        ("toeplitz", toe),
        ("blur", LinearOperator::blur(kernel, &[3, 24, 24]).unwrap()),
        ("identity", LinearOperator::identity(&[3, 8, 8], Tensor::zeros(vec![8, 8]))),
    ];
    let mut worst_adj: f64 = 0.0;
    for (i, (name, op)) in ops.iter().enumerate() {
        let gap = adjoint_gap(op, tree.child(10 + i as u64));
        if !(gap < ADJOINT_TOL) {
            return Err(format!("{name}: |<Ax,y> - <x,Aᵀy>| relative gap {gap:.3e} ≥ {ADJOINT_TOL:e}"));
        }
        worst_adj = worst_adj.max(gap);
    }
    Ok(format!(
        "dense oracle max rel err {worst_dense:.2e}; adjoint identity max gap {worst_adj:.2e} over {} probes",
        PROBES * ops.len() as u64
    ))
}
