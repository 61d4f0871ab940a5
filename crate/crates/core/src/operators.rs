//! Forward models: convolution operators, the fog model, and the composite
//! `A₀(x) + f_θ(x, A₀)` predictor.

use std::f64::consts::PI;

use crate::diff::{self, Graph, Var};
use crate::error::{Error, Result};
use crate::networks::{ResidualNet, Weights};
use crate::tensor::Tensor;

/// Ricker wavelet `(1 − 2π²f₀²t²)·exp(−π²f₀²t²)` sampled at `t = k·dt`,
/// `k = −half_len..=half_len`.
pub fn ricker_wavelet(f0: f64, dt: f64, half_len: usize) -> Result<Tensor> {
    if !(f0 > 0.0 && dt > 0.0) {
        return Err(Error::invalid(format!("ricker wavelet needs f0 > 0 and dt > 0, got f0={f0}, dt={dt}")));
    }
    let a = (PI * f0).powi(2);
    let data = (-(half_len as isize)..=half_len as isize)
        .map(|k| {
            let t = k as f64 * dt;
            (1.0 - 2.0 * a * t * t) * (-a * t * t).exp()
        })
        .collect();
    Ok(Tensor::vector(data))
}

/// Normalised `size × size` Gaussian kernel with entries `∝ exp(−(i² + j²) / (2·variance))`
/// about the centre. Note that `variance` is σ², not σ.
pub fn gaussian_kernel2d(size: usize, variance: f64) -> Result<Tensor> {
    if size % 2 == 0 {
        return Err(Error::invalid(format!("gaussian kernel size must be odd, got {size}")));
    }
    if !(variance > 0.0) {
        return Err(Error::invalid(format!("gaussian kernel variance must be positive, got {variance}")));
    }
    let c = (size / 2) as isize;
    let mut data = Vec::with_capacity(size * size);
    for i in -c..=c {
        for j in -c..=c {
            data.push((-((i * i + j * j) as f64) / (2.0 * variance)).exp());
        }
    }
    let total: f64 = data.iter().sum();
    data.iter_mut().for_each(|v| *v /= total);
    Tensor::new(vec![size, size], data)
}

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    /// Convolution with a 1D wavelet (a Toeplitz matrix).
    Toeplitz { wavelet: Tensor, reversed: Tensor },
    /// Channel-wise 2D convolution.
    Blur { kernel: Tensor, rotated: Tensor },
    Identity,
}

/// A linear forward operator with its adjoint and the feature tensor that
/// describes it (the wavelet, kernel or depth map handed to the mismatch net).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearOperator {
    kind: Kind,
    features: Tensor,
    shape: Vec<usize>,
}

impl LinearOperator {
    /// Convolution with `wavelet` on signals of shape `[1, n]`.
    pub fn toeplitz(wavelet: Tensor, n: usize) -> Result<Self> {
        if wavelet.rank() != 1 {
            return Err(Error::invalid(format!("wavelet must be rank 1, got {:?}", wavelet.shape())));
        }
        let k = wavelet.len();
        if k % 2 == 0 || k > n {
            return Err(Error::invalid(format!("wavelet length {k} must be odd and at most n={n}")));
        }
        let reversed = Tensor::vector(wavelet.data().iter().rev().copied().collect());
        Ok(Self {
            features: wavelet.clone(),
            kind: Kind::Toeplitz { wavelet, reversed },
            shape: vec![1, n],
        })
    }

    /// Channel-wise blur of `[c, h, w]` images with a 2D kernel.
    pub fn blur(kernel: Tensor, image_shape: &[usize]) -> Result<Self> {
        let (kh, kw) = match kernel.shape() {
            [kh, kw] => (*kh, *kw),
            s => return Err(Error::invalid(format!("blur kernel must be rank 2, got {s:?}"))),
        };
        if image_shape.len() != 3 {
            return Err(Error::invalid(format!("blur needs a [c, h, w] image shape, got {image_shape:?}")));
        }
        if kh % 2 == 0 || kw % 2 == 0 || kh > image_shape[1] || kw > image_shape[2] {
            return Err(Error::invalid(format!(
                "blur kernel {kh}x{kw} must be odd-sized and fit the image {image_shape:?}"
            )));
        }
        let rotated = Tensor::new(vec![kh, kw], kernel.data().iter().rev().copied().collect())?;
        Ok(Self {
            features: kernel.clone(),
            kind: Kind::Blur { kernel, rotated },
            shape: image_shape.to_vec(),
        })
    }

    /// The identity on `shape`, carrying `features` for the mismatch network.
    pub fn identity(shape: &[usize], features: Tensor) -> Self {
        Self {
            kind: Kind::Identity,
            features,
            shape: shape.to_vec(),
        }
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    /// Shape of both the input and the output space.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    fn check(&self, x: &[usize], op: &'static str) -> Result<()> {
        if x != self.shape.as_slice() {
            return Err(Error::shape(op, x, &self.shape));
        }
        Ok(())
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x.shape(), "operator apply")?;
        match &self.kind {
            Kind::Toeplitz { wavelet, .. } => diff::conv1d_same(x, wavelet),
            Kind::Blur { kernel, .. } => diff::conv2d_same(x, kernel),
            Kind::Identity => Ok(x.clone()),
        }
    }

    pub fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        self.check(y.shape(), "operator adjoint")?;
        match &self.kind {
            Kind::Toeplitz { reversed, .. } => diff::conv1d_same(y, reversed),
            Kind::Blur { rotated, .. } => diff::conv2d_same(y, rotated),
            Kind::Identity => Ok(y.clone()),
        }
    }

    pub fn apply_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.check(g.shape(x), "operator apply")?;
        match &self.kind {
            Kind::Toeplitz { wavelet, .. } => {
                let w = g.constant(wavelet.clone());
                g.conv1d(x, w)
            }
            Kind::Blur { kernel, .. } => {
                let k = g.constant(kernel.clone());
                g.conv2d(x, k)
            }
            Kind::Identity => Ok(x),
        }
    }

    pub fn adjoint_graph(&self, g: &mut Graph, y: Var) -> Result<Var> {
        self.check(g.shape(y), "operator adjoint")?;
        match &self.kind {
            Kind::Toeplitz { reversed, .. } => {
                let w = g.constant(reversed.clone());
                g.conv1d(y, w)
            }
            Kind::Blur { rotated, .. } => {
                let k = g.constant(rotated.clone());
                g.conv2d(y, k)
            }
            Kind::Identity => Ok(y),
        }
    }
}

/// `y = x ⊙ T + L_air ⊙ (1 − T)` with transmission `T ∈ [0, 1]`.
pub fn fog_forward(x: &Tensor, transmission: &Tensor, airlight: &Tensor) -> Result<Tensor> {
    if x.shape() != transmission.shape() {
        return Err(Error::shape("fog_forward", x.shape(), transmission.shape()));
    }
    if x.shape() != airlight.shape() {
        return Err(Error::shape("fog_forward", x.shape(), airlight.shape()));
    }
    if transmission.data().iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::invalid("transmission map entries must lie in [0, 1]"));
    }
    let data = x
        .data()
        .iter()
        .zip(transmission.data())
        .zip(airlight.data())
        .map(|((&xv, &t), &l)| xv * t + l * (1.0 - t))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// The synthetic ground-truth fog model: a transmission map and an airlight
/// profile, both already broadcast to the image shape.
#[derive(Clone, Debug)]
pub struct FogModel {
    pub transmission: Tensor,
    pub airlight: Tensor,
}

impl FogModel {
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        fog_forward(x, &self.transmission, &self.airlight)
    }
}

/// `A₀` plus a residual network with fixed weights `θ`.
pub struct CompositeForwardModel<'a> {
    pub base: &'a LinearOperator,
    pub residual: &'a dyn ResidualNet,
    pub theta: &'a Weights,
}

impl CompositeForwardModel<'_> {
    /// `A₀(x) + f_θ(x, features(A₀))`.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = self.predict_graph(&mut g, xv)?;
        Ok(g.value(out).clone())
    }

    pub fn predict_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let theta = self.theta.constants(g);
        let a0x = self.base.apply_graph(g, x)?;
        let r = self.residual.forward(g, &theta, x, a0x, self.base.features())?;
        if g.shape(r) != g.shape(a0x) {
            return Err(Error::shape("composite_predict", g.shape(a0x), g.shape(r)));
        }
        g.add(a0x, r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ricker_anchor_points() {
        let f0 = 25.0;
        let w = ricker_wavelet(f0, 0.001, 40).unwrap();
        assert_eq!(w.len(), 81);
        assert_eq!(w.data()[40], 1.0);
        let root = 1.0 / (2f64.sqrt() * PI * f0);
        let a = (PI * f0).powi(2);
        let at_root = (1.0 - 2.0 * a * root * root) * (-a * root * root).exp();
        assert!(at_root.abs() < 1e-15);
        assert!(ricker_wavelet(0.0, 0.001, 3).is_err());
        assert!(ricker_wavelet(10.0, -1.0, 3).is_err());
    }

    #[test]
    fn gaussian_kernel_properties() {
        let k = gaussian_kernel2d(5, 7.0).unwrap();
        assert!((k.sum() - 1.0).abs() < 1e-14);
        assert_eq!(gaussian_kernel2d(1, 3.0).unwrap().data(), &[1.0]);
        assert!(gaussian_kernel2d(4, 1.0).is_err());
        let sharp = gaussian_kernel2d(5, 1.0).unwrap();
        assert!(k.max() < sharp.max());
    }

    #[test]
    fn fog_limits() {
        let x = Tensor::full(vec![3, 2, 2], 0.5);
        let l = Tensor::full(vec![3, 2, 2], 1.0);
        let ones = Tensor::full(vec![3, 2, 2], 1.0);
        assert_eq!(fog_forward(&x, &ones, &l).unwrap(), x);
        assert_eq!(fog_forward(&x, &Tensor::zeros(vec![3, 2, 2]), &l).unwrap(), l);
        let half = Tensor::full(vec![3, 2, 2], 0.5);
        let y = fog_forward(&x, &half, &l).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.75));
        let bad = Tensor::full(vec![3, 2, 2], 1.5);
        assert!(fog_forward(&x, &bad, &l).is_err());
    }

    #[test]
    fn unit_kernels_are_identity() {
        let x = Tensor::new(vec![1, 5], vec![1.0, -2.0, 3.0, 0.5, 4.0]).unwrap();
        let op = LinearOperator::toeplitz(Tensor::vector(vec![1.0]), 5).unwrap();
        assert_eq!(op.apply(&x).unwrap(), x);
        let img = Tensor::new(vec![1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let blur = LinearOperator::blur(Tensor::new(vec![1, 1], vec![1.0]).unwrap(), &[1, 2, 3]).unwrap();
        assert_eq!(blur.apply(&img).unwrap(), img);
        assert_eq!(blur.adjoint(&img).unwrap(), img);
    }

    #[test]
    fn toeplitz_rejects_bad_wavelets() {
        assert!(LinearOperator::toeplitz(Tensor::vector(vec![1.0, 2.0]), 8).is_err());
        assert!(LinearOperator::toeplitz(Tensor::vector(vec![1.0; 9]), 8).is_err());
    }
}
