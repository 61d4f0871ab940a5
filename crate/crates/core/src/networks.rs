//! Plain convolutional networks: the learned proximal operator and the
//! untrained forward-model mismatch network `f_θ`.

use crate::diff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::SeedTree;
use crate::tensor::Tensor;

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Leaky ReLU with slope 0.2.
    LeakyRelu,
}

/// Architecture of a stack of "same" convolutions with biases.
///
/// Internal layers are followed by the activation; the last layer is linear.
/// With `residual` set the network returns `input + body(input)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvNetSpec {
    /// 1 for signals `[c, n]`, 2 for images `[c, h, w]`.
    pub dims: usize,
    pub in_channels: usize,
    pub hidden: usize,
    pub out_channels: usize,
    pub layers: usize,
    pub kernel: usize,
    pub activation: Activation,
    pub residual: bool,
}

impl ConvNetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dims == 1 || self.dims == 2) {
            return Err(Error::invalid(format!("network dims must be 1 or 2, got {}", self.dims)));
        }
        if self.layers == 0 || self.kernel % 2 == 0 {
            return Err(Error::invalid("network needs at least one layer and an odd kernel"));
        }
        if self.in_channels == 0 || self.out_channels == 0 || (self.layers > 1 && self.hidden == 0) {
            return Err(Error::invalid("network channel counts must be positive"));
        }
        if self.residual && self.in_channels != self.out_channels {
            return Err(Error::invalid("residual networks must preserve the channel count"));
        }
        Ok(())
    }

    /// `(in, out)` channels of each layer.
    pub fn layer_channels(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|i| {
                let cin = if i == 0 { self.in_channels } else { self.hidden };
                let cout = if i + 1 == self.layers { self.out_channels } else { self.hidden };
                (cin, cout)
            })
            .collect()
    }

    fn kernel_volume(&self) -> usize {
        self.kernel.pow(self.dims as u32)
    }

    fn weight_shape(&self, cin: usize, cout: usize) -> Vec<usize> {
        let mut s = vec![cout, cin];
        s.extend(std::iter::repeat_n(self.kernel, self.dims));
        s
    }

    /// Number of weight tensors (a kernel and a bias per layer).
    pub fn tensor_count(&self) -> usize {
        2 * self.layers
    }

    /// Forward pass on a single `[c, ...]` input.
    pub fn forward(&self, g: &mut Graph, weights: &[Var], input: Var) -> Result<Var> {
        if weights.len() != self.tensor_count() {
            return Err(Error::invalid(format!(
                "network expects {} weight tensors, got {}",
                self.tensor_count(),
                weights.len()
            )));
        }
        let s = g.shape(input);
        if s.len() != self.dims + 1 || s[0] != self.in_channels {
            return Err(Error::shape("network input", s, &[self.in_channels]));
        }
        let mut h = input;
        for layer in 0..self.layers {
            let (w, b) = (weights[2 * layer], weights[2 * layer + 1]);
            h = if self.dims == 1 { g.conv1d(h, w)? } else { g.conv2d(h, w)? };
            h = g.add_bias(h, b)?;
            if layer + 1 < self.layers {
                h = match self.activation {
                    Activation::Relu => g.relu(h),
                    Activation::LeakyRelu => g.leaky_relu(h, LEAKY_SLOPE),
                };
            }
        }
        if self.residual {
            h = g.add(input, h)?;
        }
        Ok(h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    /// `U(−√(6/fan_in), √(6/fan_in))`.
    KaimingUniform,
    /// `U(−√(6/(fan_in + fan_out)), √(6/(fan_in + fan_out)))`.
    Xavier,
}

impl InitScheme {
    pub fn bound(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitScheme::KaimingUniform => (6.0 / fan_in as f64).sqrt(),
            InitScheme::Xavier => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InitScheme::KaimingUniform => "uniform",
            InitScheme::Xavier => "xavier",
        }
    }
}

/// An ordered list of weight tensors (`ρ` or `θ`).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Weights(pub Vec<Tensor>);

impl Weights {
    pub fn tensors(&self) -> &[Tensor] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Weights {
        Weights(self.0.iter().map(Tensor::zeros_like).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Tensor::is_finite)
    }

    pub fn constants(&self, g: &mut Graph) -> Vec<Var> {
        self.0.iter().map(|t| g.constant(t.clone())).collect()
    }

    pub fn params(&self, g: &mut Graph) -> Vec<Var> {
        self.0.iter().map(|t| g.param(t.clone())).collect()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Weights) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::invalid("weight sets differ in length"));
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    pub fn sq_norm(&self) -> f64 {
        self.0.iter().map(Tensor::sq_norm).sum()
    }

    /// Element-wise mean of several weight sets with identical layout.
    pub fn mean(sets: &[Weights]) -> Result<Weights> {
        let first = sets.first().ok_or_else(|| Error::invalid("mean of zero weight sets"))?;
        let mut acc = first.zeros_like();
        for s in sets {
            acc.axpy(1.0, s)?;
        }
        let scale = 1.0 / sets.len() as f64;
        Ok(Weights(acc.0.iter().map(|t| t.scale(scale)).collect()))
    }

    /// Sets the final layer's kernel and bias to zero.
    pub fn zero_last_layer(&mut self) {
        let n = self.0.len();
        for t in &mut self.0[n.saturating_sub(2)..] {
            *t = Tensor::zeros_like(t);
        }
    }
}

/// Draws weights for `spec`. Kernels follow `scheme` with
/// `fan_in = cin·k^d`, `fan_out = cout·k^d`; biases start at zero.
/// Layer `i` uses stream `i` of `seed`, so results depend only on
/// `(spec, scheme, seed)`.
pub fn init_params(spec: &ConvNetSpec, scheme: InitScheme, seed: u64) -> Weights {
    let tree = SeedTree::new(seed);
    let kv = spec.kernel_volume();
    let mut out = Vec::with_capacity(spec.tensor_count());
    for (i, (cin, cout)) in spec.layer_channels().into_iter().enumerate() {
        let bound = scheme.bound(cin * kv, cout * kv);
        let mut s = tree.stream(i as u64);
        let shape = spec.weight_shape(cin, cout);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| s.uniform_in(-bound, bound)).collect();
        out.push(Tensor::from_parts(shape, data));
        out.push(Tensor::zeros(vec![cout]));
    }
    Weights(out)
}

/// Learned proximal step `v ↦ v + body(v)` (with the residual skip enabled).
pub fn prox_forward(spec: &ConvNetSpec, rho: &Weights, v: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let w = rho.constants(&mut g);
    let x = g.constant(v.clone());
    let out = spec.forward(&mut g, &w, x)?;
    Ok(g.value(out).clone())
}

/// Places `features` centred on a zero plane shaped like `grid` and returns
/// it as a single channel `[1, grid...]`.
pub fn feature_plane(features: &Tensor, grid: &[usize]) -> Result<Tensor> {
    let fs = features.shape();
    if fs.len() != grid.len() || fs.iter().zip(grid).any(|(f, g)| f > g) {
        return Err(Error::invalid(format!(
            "features of shape {fs:?} cannot be placed on a {grid:?} grid"
        )));
    }
    let mut shape = vec![1];
    shape.extend_from_slice(grid);
    let mut out = Tensor::zeros(shape);
    match grid.len() {
        1 => {
            let off = (grid[0] - fs[0]) / 2;
            out.data_mut()[off..off + fs[0]].copy_from_slice(features.data());
        }
        2 => {
            let (r0, c0) = ((grid[0] - fs[0]) / 2, (grid[1] - fs[1]) / 2);
            for r in 0..fs[0] {
                let dst = (r0 + r) * grid[1] + c0;
                out.data_mut()[dst..dst + fs[1]].copy_from_slice(&features.data()[r * fs[1]..(r + 1) * fs[1]]);
            }
        }
        _ => return Err(Error::invalid("features must be 1D or 2D")),
    }
    Ok(out)
}

/// A network `f_θ(x, A₀)` estimating the measurement residual `A(x) − A₀(x)`.
pub trait ResidualNet: Send + Sync {
    /// Residual in measurement space; `a0x` is `A₀(x)` and `features`
    /// describes `A₀`.
    fn forward(&self, g: &mut Graph, theta: &[Var], x: Var, a0x: Var, features: &Tensor) -> Result<Var>;

    fn init(&self, scheme: InitScheme, seed: u64) -> Weights;
}

/// The two residual architectures used by the tasks.
#[derive(Clone, Debug, PartialEq)]
pub enum MismatchNet {
    /// A CNN over the channel concatenation `[A₀(x); feature plane]`.
    Cnn(ConvNetSpec),
    /// Structured fog residual `(L_θ − x) ⊙ (1 − T_θ)` with
    /// `T_θ = sigmoid(net_T(·))` and `L_θ = net_L(·)`, both fed
    /// `[x; depth plane]`. With `A₀ = I` the composite model becomes
    /// `x ⊙ T + L ⊙ (1 − T)`.
    Fog {
        transmission: ConvNetSpec,
        airlight: ConvNetSpec,
    },
}

impl MismatchNet {
    pub fn specs(&self) -> Vec<&ConvNetSpec> {
        match self {
            MismatchNet::Cnn(s) => vec![s],
            MismatchNet::Fog { transmission, airlight } => vec![transmission, airlight],
        }
    }

    fn input(g: &mut Graph, a0x: Var, features: &Tensor) -> Result<Var> {
        let grid = g.shape(a0x)[1..].to_vec();
        let plane = g.constant(feature_plane(features, &grid)?);
        g.concat(&[a0x, plane])
    }
}

impl ResidualNet for MismatchNet {
    fn forward(&self, g: &mut Graph, theta: &[Var], x: Var, a0x: Var, features: &Tensor) -> Result<Var> {
        match self {
            MismatchNet::Cnn(spec) => {
                let input = Self::input(g, a0x, features)?;
                spec.forward(g, theta, input)
            }
            MismatchNet::Fog { transmission, airlight } => {
                let split = transmission.tensor_count();
                if theta.len() != split + airlight.tensor_count() {
                    return Err(Error::invalid("fog residual weight count mismatch"));
                }
                let input = Self::input(g, x, features)?;
                let t_logits = transmission.forward(g, &theta[..split], input)?;
                let t = g.sigmoid(t_logits);
                let l = airlight.forward(g, &theta[split..], input)?;
                let l_minus_x = g.sub(l, x)?;
                let ones = g.constant(Tensor::full(g.shape(t).to_vec(), 1.0));
                let one_minus_t = g.sub(ones, t)?;
                g.mul(l_minus_x, one_minus_t)
            }
        }
    }

    fn init(&self, scheme: InitScheme, seed: u64) -> Weights {
        let tree = SeedTree::new(seed);
        let mut all = Vec::new();
        for (i, spec) in self.specs().into_iter().enumerate() {
            all.extend(init_params(spec, scheme, tree.child(i as u64).seed()).0);
        }
        Weights(all)
    }
}

/// `f_θ(x, features)` evaluated outside a graph.
pub fn mismatch_forward(
    net: &dyn ResidualNet,
    theta: &Weights,
    x: &Tensor,
    a0x: &Tensor,
    features: &Tensor,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let th = theta.constants(&mut g);
    let xv = g.constant(x.clone());
    let av = g.constant(a0x.clone());
    let r = net.forward(&mut g, &th, xv, av, features)?;
    Ok(g.value(r).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prox_spec() -> ConvNetSpec {
        ConvNetSpec {
            dims: 2,
            in_channels: 3,
            hidden: 4,
            out_channels: 3,
            layers: 3,
            kernel: 3,
            activation: Activation::Relu,
            residual: true,
        }
    }

    #[test]
    fn zero_weights_give_identity_prox() {
        let spec = prox_spec();
        let rho = init_params(&spec, InitScheme::Xavier, 1).zeros_like();
        let v = Tensor::new(vec![3, 16, 16], (0..768).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        assert_eq!(prox_forward(&spec, &rho, &v).unwrap(), v);
        let rho = init_params(&spec, InitScheme::Xavier, 1);
        assert_eq!(prox_forward(&spec, &rho, &v).unwrap().shape(), &[3, 16, 16]);
    }

    #[test]
    fn linear_single_layer_prox() {
        let spec = ConvNetSpec {
            dims: 1,
            in_channels: 1,
            hidden: 0,
            out_channels: 1,
            layers: 1,
            kernel: 1,
            activation: Activation::Relu,
            residual: true,
        };
        let rho = Weights(vec![
            Tensor::new(vec![1, 1, 1], vec![0.5]).unwrap(),
            Tensor::zeros(vec![1]),
        ]);
        let v = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
        assert_eq!(prox_forward(&spec, &rho, &v).unwrap().data(), &[3.0]);
    }

    #[test]
    fn prox_rejects_wrong_modality() {
        let spec = prox_spec();
        let rho = init_params(&spec, InitScheme::Xavier, 1);
        assert!(prox_forward(&spec, &rho, &Tensor::zeros(vec![1, 16, 16])).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let spec = prox_spec();
        for scheme in [InitScheme::KaimingUniform, InitScheme::Xavier] {
            let a = init_params(&spec, scheme, 5);
            assert_eq!(a, init_params(&spec, scheme, 5));
            assert_ne!(a, init_params(&spec, scheme, 6));
            for (i, (cin, cout)) in spec.layer_channels().into_iter().enumerate() {
                let bound = scheme.bound(cin * 9, cout * 9);
                assert!(a.0[2 * i].data().iter().all(|w| w.abs() <= bound));
            }
        }
    }

    #[test]
    fn feature_plane_is_centred() {
        let p = feature_plane(&Tensor::vector(vec![1.0, 2.0, 3.0]), &[7]).unwrap();
        assert_eq!(p.data(), &[0.0, 0.0, 1.0, 2.0, 3.0, 0.0, 0.0]);
        let k = Tensor::new(vec![1, 1], vec![5.0]).unwrap();
        let p = feature_plane(&k, &[3, 3]).unwrap();
        assert_eq!(p.data()[4], 5.0);
        assert!(feature_plane(&Tensor::vector(vec![0.0; 9]), &[7]).is_err());
    }
}
