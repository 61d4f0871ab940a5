//! Anderson mixing against closed forms, a direct solve and Picard iteration.

use mutn_core::rng::SeedTree;
use mutn_core::solvers::{anderson_solve, AndersonConfig};
use mutn_core::tensor::Tensor;

use super::{random_tensor, Outcome};

pub const SCALAR_TOL: f64 = 1e-8;
pub const DIRECT_TOL: f64 = 1e-6;
pub const DIM: usize = 16;
pub const RADIUS: f64 = 0.9;

/// Solves `a·x = b` by Gauss–Jordan elimination with partial pivoting.
pub fn gauss_jordan(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    (0..n).map(|i| b[i] / a[i][i]).collect()
}

/// `Q·diag(λ)·Qᵀ` with a random orthogonal `Q` and eigenvalues in
/// `[−RADIUS, RADIUS]`, one of which is exactly `RADIUS`.
pub fn contraction(seed: u64) -> Vec<Vec<f64>> {
    let tree = SeedTree::new(seed);
    let mut q: Vec<Vec<f64>> = Vec::new();
    for i in 0..DIM {
        let mut v = random_tensor(&mut tree.stream(i as u64), &[DIM]).into_data();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        q.push(v.into_iter().map(|a| a / n).collect());
    }
    let mut s = tree.stream(100);
    let lam: Vec<f64> = (0..DIM).map(|i| if i == 0 { RADIUS } else { s.uniform_in(-RADIUS, RADIUS) }).collect();
    (0..DIM)
        .map(|i| (0..DIM).map(|j| (0..DIM).map(|k| q[k][i] * lam[k] * q[k][j]).sum()).collect())
        .collect()
}

pub fn run() -> Outcome {
    let cfg = AndersonConfig { memory: 5, beta: 1.0, ridge: 1e-10, tol: 1e-12, max_iter: 200 };
    let mut f = |x: &Tensor| Ok(x.map(|v| 0.5 * v + 1.0));
    let r = anderson_solve(&mut f, &Tensor::vector(vec![0.0]), &cfg).map_err(|e| e.to_string())?;
    let gap = (r.x.data()[0] - 2.0).abs();
    if !(gap < SCALAR_TOL) {
        return Err(format!("F(x) = 0.5x + 1: |x − 2| = {gap:.3e}"));
    }
    let m = contraction(5);
    let b = random_tensor(&mut SeedTree::new(6).stream(0), &[DIM]);
    let mut eye_minus_m = m.clone();
    for (i, row) in eye_minus_m.iter_mut().enumerate() {
        row.iter_mut().for_each(|v| *v = -*v);
        row[i] += 1.0;
    }
    let direct = gauss_jordan(eye_minus_m, b.data().to_vec());
    let linear = |x: &Tensor| -> mutn_core::error::Result<Tensor> {
        let d = x.data();
        let out = (0..DIM).map(|i| m[i].iter().zip(d).map(|(a, v)| a * v).sum::<f64>() + b.data()[i]).collect();
        Ok(Tensor::vector(out))
    };
    let base = AndersonConfig { memory: 5, beta: 1.0, ridge: 1e-10, tol: 1e-8, max_iter: 2000 };
    let aa = anderson_solve(&mut { linear }, &Tensor::zeros(vec![DIM]), &base).map_err(|e| e.to_string())?;
    let picard = anderson_solve(&mut { linear }, &Tensor::zeros(vec![DIM]), &AndersonConfig { memory: 1, ..base.clone() })
        .map_err(|e| e.to_string())?;
    if !(aa.converged && picard.converged) {
        return Err(format!("no convergence: anderson {}, picard {}", aa.converged, picard.converged));
    }
    let err = |x: &Tensor| x.data().iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let (ea, ep) = (err(&aa.x), err(&picard.x));
    if !(ea < DIRECT_TOL && ep < DIRECT_TOL) {
        return Err(format!("direct-solve gap: anderson {ea:.3e}, picard {ep:.3e}"));
    }
    let (na, np) = (aa.residuals.len(), picard.residuals.len());
    if na > np {
        return Err(format!("anderson used {na} iterations, picard {np}"));
    }
    Ok(format!(
        "|x − 2| = {gap:.1e}; spectral radius {RADIUS} map: gap {ea:.1e} in {na} iterations vs picard {ep:.1e} in {np}"
    ))
}
