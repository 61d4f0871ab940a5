//! Iterative reconstruction engines.
//!
//! The model-adaptive solvers minimise, by alternating updates,
//!
//! ```text
//! J(z, θ, x) = ½‖y − A₀z − f_θ(z)‖² + γ·r(x) + τ‖f_θ(z)‖² + λ‖x − z‖²
//! ```
//!
//! where `z` is a split copy of the signal, `f_θ` an untrained network that
//! absorbs the mismatch between `A₀` and the true forward model, and the
//! `x` step is a proximal map (learned, or classical for testing). The
//! unrolled variant runs a fixed number of rounds; the equilibrium variant
//! runs the same map to a fixed point with Anderson acceleration.

use crate::diff::{Graph, Var};
use crate::error::{Error, Result};
use crate::networks::{prox_forward, ConvNetSpec, ResidualNet, Weights};
use crate::operators::LinearOperator;
use crate::tensor::Tensor;

/// Halvings tried by a backtracking step before the step is abandoned.
const MAX_HALVINGS: usize = 50;

/// Soft threshold: the proximal map of `t·‖·‖₁`.
pub fn prox_l1(v: &Tensor, t: f64) -> Result<Tensor> {
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("prox threshold must be non-negative, got {t}")));
    }
    Ok(v.map(|a| a.signum() * (a.abs() - t).max(0.0)))
}

/// Shrinkage `v / (1 + 2t)`: the proximal map of `t·‖·‖²`.
pub fn prox_l2(v: &Tensor, t: f64) -> Result<Tensor> {
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("prox weight must be non-negative, got {t}")));
    }
    Ok(v.scale(1.0 / (1.0 + 2.0 * t)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reg {
    /// `r(x) = ‖x‖₁`
    L1,
    /// `r(x) = ‖x‖²`
    L2,
}

impl Reg {
    pub fn value(self, x: &Tensor) -> f64 {
        match self {
            Reg::L1 => x.data().iter().map(|v| v.abs()).sum(),
            Reg::L2 => x.sq_norm(),
        }
    }

    pub fn prox(self, v: &Tensor, t: f64) -> Result<Tensor> {
        match self {
            Reg::L1 => prox_l1(v, t),
            Reg::L2 => prox_l2(v, t),
        }
    }
}

/// A proximal map used by [`x_update`] and [`prox_grad_step`].
pub enum Prox<'a> {
    Identity,
    L1(f64),
    L2(f64),
    Learned { spec: &'a ConvNetSpec, rho: &'a Weights },
}

impl Prox<'_> {
    pub fn apply(&self, v: &Tensor) -> Result<Tensor> {
        match self {
            Prox::Identity => Ok(v.clone()),
            Prox::L1(t) => prox_l1(v, *t),
            Prox::L2(t) => prox_l2(v, *t),
            Prox::Learned { spec, rho } => prox_forward(spec, rho, v),
        }
    }
}

/// `prox(x + η·Aᵀ(y − A x))`.
pub fn prox_grad_step(x: &Tensor, y: &Tensor, op: &LinearOperator, eta: f64, prox: &Prox) -> Result<Tensor> {
    let r = y.sub(&op.apply(x)?)?;
    let mut v = x.clone();
    v.axpy(eta, &op.adjoint(&r)?)?;
    prox.apply(&v)
}

/// `prox(x − η(x − z))`.
pub fn x_update(x: &Tensor, z: &Tensor, eta: f64, prox: &Prox) -> Result<Tensor> {
    let mut v = x.clone();
    v.axpy(-eta, &x.sub(z)?)?;
    prox.apply(&v)
}

/// How the `x` sub-problem is solved.
pub enum XStep<'a> {
    /// `prox_ρ(x − η(x − z))` with a learned proximal network.
    Learned { spec: &'a ConvNetSpec, rho: &'a Weights, eta: f64 },
    /// A proximal-gradient step of length `η` on `λ‖x − z‖² + γ·r(x)`:
    /// `prox_{ηγ·r}(x − 2λη(x − z))`. With `η = 1/(2λ)` this is the exact
    /// minimiser `prox_{γ/(2λ)·r}(z)`.
    Classical { reg: Reg, gamma: f64, eta: f64 },
}

impl XStep<'_> {
    pub fn apply(&self, x: &Tensor, z: &Tensor, lambda: f64) -> Result<Tensor> {
        match self {
            XStep::Learned { spec, rho, eta } => x_update(x, z, *eta, &Prox::Learned { spec, rho }),
            XStep::Classical { reg, gamma, eta } => {
                let prox = match reg {
                    Reg::L1 => Prox::L1(eta * gamma),
                    Reg::L2 => Prox::L2(eta * gamma),
                };
                x_update(x, z, 2.0 * lambda * eta, &prox)
            }
        }
    }

    fn reg_term(&self) -> Option<(Reg, f64)> {
        match self {
            XStep::Learned { .. } => None,
            XStep::Classical { reg, gamma, .. } => Some((*reg, *gamma)),
        }
    }
}

/// Learned components as graph variables, for end-to-end training.
pub struct LearnedVars<'a> {
    pub spec: &'a ConvNetSpec,
    pub rho: Vec<Var>,
    pub eta: Var,
}

impl LearnedVars<'_> {
    /// `prox_ρ(x − η(x − z))` in `g`; `z` enters as a constant.
    pub fn x_step(&self, g: &mut Graph, x: Var, z: &Tensor) -> Result<Var> {
        let zc = g.constant(z.clone());
        let d = g.sub(x, zc)?;
        let step = g.mul_scalar(d, self.eta)?;
        let v = g.sub(x, step)?;
        self.spec.forward(g, &self.rho, v)
    }

    /// `prox_ρ(x + η·A₀ᵀ(y − A₀x))` in `g`.
    pub fn grad_step(&self, g: &mut Graph, x: Var, y: &Tensor, op: &LinearOperator) -> Result<Var> {
        let ax = op.apply_graph(g, x)?;
        let yc = g.constant(y.clone());
        let r = g.sub(yc, ax)?;
        let at = op.adjoint_graph(g, r)?;
        let step = g.mul_scalar(at, self.eta)?;
        let v = g.add(x, step)?;
        self.spec.forward(g, &self.rho, v)
    }
}

/// Measurement, approximate operator and starting point of one instance.
#[derive(Clone, Debug)]
pub struct Problem<'a> {
    pub y: &'a Tensor,
    pub op: &'a LinearOperator,
    pub x0: Tensor,
}

impl<'a> Problem<'a> {
    /// Starts from `A₀ᵀy` when `from_adjoint`, otherwise from `y`.
    pub fn new(y: &'a Tensor, op: &'a LinearOperator, from_adjoint: bool) -> Result<Self> {
        let x0 = if from_adjoint { op.adjoint(y)? } else { y.clone() };
        Ok(Self { y, op, x0 })
    }
}

/// Settings of the `z` and `θ` sub-problems.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerConfig {
    pub lambda: f64,
    pub tau: f64,
    pub steps_z: usize,
    pub steps_theta: usize,
    pub lr_z: f64,
    pub lr_theta: f64,
    /// Halve each step until the sub-objective does not increase.
    pub backtracking: bool,
    /// Start each inexact `z` solve from the current `x` rather than the
    /// previous `z`.
    pub z_from_x: bool,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            tau: 0.1,
            steps_z: 1,
            steps_theta: 1,
            lr_z: 1e-4,
            lr_theta: 1e-4,
            backtracking: false,
            z_from_x: false,
        }
    }
}

impl InnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.tau >= 0.0) {
            return Err(Error::invalid("lambda and tau must be non-negative"));
        }
        if !(self.lr_z > 0.0 && self.lr_theta > 0.0) {
            return Err(Error::invalid("inner learning rates must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LUConfig {
    /// Outer iterations `K`.
    pub iterations: usize,
    pub inner: InnerConfig,
    /// Record `J` values (costs extra forward passes of `f_θ`).
    pub record_objective: bool,
}

impl Default for LUConfig {
    fn default() -> Self {
        Self { iterations: 5, inner: InnerConfig::default(), record_objective: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AndersonConfig {
    pub memory: usize,
    /// Relaxation `β`: `x ← (1 − β)Σαᵢxᵢ + βΣαᵢF(xᵢ)`.
    pub beta: f64,
    /// Relative ridge added to the Gram matrix, scaled by its mean diagonal.
    pub ridge: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for AndersonConfig {
    fn default() -> Self {
        Self { memory: 5, beta: 1.0, ridge: 1e-10, tol: 1e-4, max_iter: 30 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DEQConfig {
    pub inner: InnerConfig,
    pub anderson: AndersonConfig,
    pub record_objective: bool,
}

impl Default for DEQConfig {
    fn default() -> Self {
        Self { inner: InnerConfig::default(), anderson: AndersonConfig::default(), record_objective: false }
    }
}

/// Per-iteration diagnostics. Index `k` of `snapshots` is `x_k`; `mse`
/// and `objective` are aligned with it when populated, and `residual[k]`
/// belongs to the step that produced `x_{k+1}`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolverTrace {
    pub snapshots: Vec<Tensor>,
    pub mse: Vec<f64>,
    pub objective: Vec<f64>,
    /// `J` after the `z`, `θ` and `x` sub-steps of each round.
    pub stages: Vec<[f64; 3]>,
    pub residual: Vec<f64>,
    pub converged: bool,
}

impl SolverTrace {
    fn push(&mut self, x: &Tensor, truth: Option<&Tensor>) -> Result<()> {
        if let Some(t) = truth {
            self.mse.push(crate::metrics::mse(x, t)?);
        }
        self.snapshots.push(x.clone());
        Ok(())
    }

    /// `instance_id,k,J,mse,fp_residual` rows (no column header); missing
    /// values are left empty.
    pub fn csv_rows(&self, instance_id: usize) -> String {
        let opt = |v: Option<&f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::new();
        for k in 0..self.snapshots.len() {
            let res = if k == 0 { None } else { self.residual.get(k - 1) };
            s.push_str(&format!(
                "{instance_id},{k},{},{},{}\n",
                opt(self.objective.get(k)),
                opt(self.mse.get(k)),
                opt(res)
            ));
        }
        s
    }
}

pub const TRACE_CSV_HEADER: &str = "instance_id,k,J,mse,fp_residual\n";

/// `½‖y − A₀z − f_θ(z)‖² + τ‖f_θ(z)‖²` in `g`.
fn fit_terms(g: &mut Graph, z: Var, theta: &[Var], y: &Tensor, op: &LinearOperator, net: &dyn ResidualNet, tau: f64) -> Result<Var> {
    let a0z = op.apply_graph(g, z)?;
    let f = net.forward(g, theta, z, a0z, op.features())?;
    if g.shape(f) != g.shape(a0z) {
        return Err(Error::shape("mismatch network output", g.shape(f), g.shape(a0z)));
    }
    let yc = g.constant(y.clone());
    let r = g.sub(yc, a0z)?;
    let r = g.sub(r, f)?;
    let fit = g.sq_norm(r);
    let fit = g.scale(fit, 0.5);
    let pen = g.sq_norm(f);
    let pen = g.scale(pen, tau);
    g.add(fit, pen)
}

fn coupling(g: &mut Graph, x: &Tensor, z: Var, lambda: f64) -> Result<Var> {
    let xc = g.constant(x.clone());
    let d = g.sub(xc, z)?;
    let n = g.sq_norm(d);
    Ok(g.scale(n, lambda))
}

/// `J(z, θ, x)`. `reg` supplies `(r, γ)`; `None` omits the `γ·r(x)` term,
/// as in learned-prox runs where `γ` is absorbed into the network.
#[allow(clippy::too_many_arguments)]
pub fn objective_j(
    z: &Tensor,
    theta: &Weights,
    x: &Tensor,
    y: &Tensor,
    op: &LinearOperator,
    net: &dyn ResidualNet,
    lambda: f64,
    tau: f64,
    reg: Option<(Reg, f64)>,
) -> Result<f64> {
    if x.shape() != z.shape() {
        return Err(Error::shape("objective", x.shape(), z.shape()));
    }
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let th = theta.constants(&mut g);
    let fit = fit_terms(&mut g, zv, &th, y, op, net, tau)?;
    let c = coupling(&mut g, x, zv, lambda)?;
    let total = g.add(fit, c)?;
    let r = reg.map_or(0.0, |(r, gamma)| gamma * r.value(x));
    Ok(g.value(total).item()? + r)
}

/// Plain or backtracking gradient descent on a weight set. `eval` returns
/// the objective and, when asked, its gradient.
fn descend(
    mut p: Weights,
    steps: usize,
    lr: f64,
    backtracking: bool,
    what: &str,
    eval: &dyn Fn(&Weights, bool) -> Result<(f64, Option<Weights>)>,
) -> Result<Weights> {
    for _ in 0..steps {
        let (value, grad) = eval(&p, true)?;
        let grad = grad.expect("gradient requested");
        if !value.is_finite() || !grad.is_finite() {
            return Err(Error::non_finite(format!("{what}: objective {value}, gradient norm² {}", grad.sq_norm())));
        }
        if !backtracking {
            p.axpy(-lr, &grad)?;
            if !p.is_finite() {
                return Err(Error::non_finite(format!("{what}: iterate after a step of {lr}")));
            }
            continue;
        }
        let mut step = lr;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let mut cand = p.clone();
            cand.axpy(-step, &grad)?;
            if eval(&cand, false)?.0 <= value {
                p = cand;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(p)
}

/// Gradient steps on `½‖y − A₀z − f_θ(z)‖² + τ‖f_θ(z)‖² + λ‖x − z‖²` over
/// `z`, starting from `z`, with `θ` fixed.
pub fn z_update(
    z: &Tensor,
    theta: &Weights,
    x: &Tensor,
    y: &Tensor,
    op: &LinearOperator,
    net: &dyn ResidualNet,
    cfg: &InnerConfig,
) -> Result<Tensor> {
    let eval = |p: &Weights, want_grad: bool| -> Result<(f64, Option<Weights>)> {
        let mut g = Graph::new();
        let zv = g.param(p.0[0].clone());
        let th = theta.constants(&mut g);
        let fit = fit_terms(&mut g, zv, &th, y, op, net, cfg.tau)?;
        let c = coupling(&mut g, x, zv, cfg.lambda)?;
        let total = g.add(fit, c)?;
        let v = g.value(total).item()?;
        let grad = if want_grad { Some(Weights(g.grad(total, &[zv])?)) } else { None };
        Ok((v, grad))
    };
    let out = descend(Weights(vec![z.clone()]), cfg.steps_z, cfg.lr_z, cfg.backtracking, "z update", &eval)?;
    Ok(out.0.into_iter().next().expect("one tensor"))
}

/// Gradient steps on `½‖y − A₀z − f_θ(z)‖² + τ‖f_θ(z)‖²` over `θ` with `z` fixed.
pub fn theta_update(
    z: &Tensor,
    theta: &Weights,
    y: &Tensor,
    op: &LinearOperator,
    net: &dyn ResidualNet,
    cfg: &InnerConfig,
) -> Result<Weights> {
    let eval = |p: &Weights, want_grad: bool| -> Result<(f64, Option<Weights>)> {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let th = p.params(&mut g);
        let total = fit_terms(&mut g, zv, &th, y, op, net, cfg.tau)?;
        let v = g.value(total).item()?;
        let grad = if want_grad { Some(Weights(g.grad(total, &th)?)) } else { None };
        Ok((v, grad))
    };
    descend(theta.clone(), cfg.steps_theta, cfg.lr_theta, cfg.backtracking, "theta update", &eval)
}

fn rel_change(new: &Tensor, old: &Tensor) -> Result<f64> {
    Ok(new.sub(old)?.norm() / (1e-8 + new.norm()))
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::non_finite(what.to_string()))
    }
}

/// State carried by the alternating updates.
#[derive(Clone, Debug)]
pub struct SplitState {
    pub x: Tensor,
    pub z: Tensor,
    pub theta: Weights,
}

/// Output of the model-adaptive solvers.
#[derive(Clone, Debug)]
pub struct AdaptiveOutput {
    pub x: Tensor,
    /// Final mismatch-network weights `θ_K`.
    pub theta: Weights,
    pub trace: SolverTrace,
}

/// The shared unrolled loop; `x_step(x_k, z_{k+1})` performs the `x` update.
#[allow(clippy::too_many_arguments)]
fn lu_core(
    problem: &Problem,
    net: &dyn ResidualNet,
    theta_init: &Weights,
    cfg: &LUConfig,
    reg: Option<(Reg, f64)>,
    truth: Option<&Tensor>,
    x_step: &mut dyn FnMut(&Tensor, &Tensor) -> Result<Tensor>,
) -> Result<AdaptiveOutput> {
    cfg.inner.validate()?;
    let (y, op) = (problem.y, problem.op);
    let inner = &cfg.inner;
    let mut x = problem.x0.clone();
    let mut z = x.clone();
    let mut theta = theta_init.clone();
    let mut trace = SolverTrace::default();
    let j = |z: &Tensor, th: &Weights, x: &Tensor| objective_j(z, th, x, y, op, net, inner.lambda, inner.tau, reg);
    trace.push(&x, truth)?;
    if cfg.record_objective {
        trace.objective.push(j(&z, &theta, &x)?);
    }
    for _ in 0..cfg.iterations {
        let start = if inner.z_from_x { &x } else { &z };
        z = z_update(start, &theta, &x, y, op, net, inner)?;
        let after_z = if cfg.record_objective { j(&z, &theta, &x)? } else { f64::NAN };
        theta = theta_update(&z, &theta, y, op, net, inner)?;
        let after_theta = if cfg.record_objective { j(&z, &theta, &x)? } else { f64::NAN };
        let next = x_step(&x, &z)?;
        check_finite(&next, "x update")?;
        trace.residual.push(rel_change(&next, &x)?);
        x = next;
        trace.push(&x, truth)?;
        if cfg.record_objective {
            let after_x = j(&z, &theta, &x)?;
            trace.stages.push([after_z, after_theta, after_x]);
            trace.objective.push(after_x);
        }
    }
    trace.converged = true;
    Ok(AdaptiveOutput { x, theta, trace })
}

/// Model-adaptive loop unrolling: `K` rounds of `z`, `θ` and `x` updates
/// starting from `x₀ = z₀`, `θ₀ = θ_init`.
pub fn a_adaptive_lu_forward(
    problem: &Problem,
    net: &dyn ResidualNet,
    xstep: &XStep,
    theta_init: &Weights,
    cfg: &LUConfig,
    truth: Option<&Tensor>,
) -> Result<AdaptiveOutput> {
    let lambda = cfg.inner.lambda;
    lu_core(problem, net, theta_init, cfg, xstep.reg_term(), truth, &mut |x, z| xstep.apply(x, z, lambda))
}

/// [`a_adaptive_lu_forward`] with the `x` chain recorded in `g` so the
/// result can be differentiated with respect to the learned variables.
/// `z` and `θ` updates are computed outside the graph and enter as constants.
pub fn a_adaptive_lu_graph(
    g: &mut Graph,
    problem: &Problem,
    net: &dyn ResidualNet,
    learned: &LearnedVars,
    theta_init: &Weights,
    cfg: &LUConfig,
    truth: Option<&Tensor>,
) -> Result<(Var, AdaptiveOutput)> {
    let mut xv = g.constant(problem.x0.clone());
    let out = lu_core(problem, net, theta_init, cfg, None, truth, &mut |_, z| {
        xv = learned.x_step(g, xv, z)?;
        Ok(g.value(xv).clone())
    })?;
    Ok((xv, out))
}

/// Robust loop unrolling: `K` learned proximal-gradient steps with `A₀`.
pub fn robust_lu_graph(
    g: &mut Graph,
    problem: &Problem,
    learned: &LearnedVars,
    iterations: usize,
    truth: Option<&Tensor>,
) -> Result<(Var, SolverTrace)> {
    let mut trace = SolverTrace::default();
    let mut x = g.constant(problem.x0.clone());
    trace.push(g.value(x), truth)?;
    for _ in 0..iterations {
        let next = learned.grad_step(g, x, problem.y, problem.op)?;
        check_finite(g.value(next), "robust step")?;
        trace.residual.push(rel_change(g.value(next), g.value(x))?);
        x = next;
        trace.push(g.value(x), truth)?;
    }
    trace.converged = true;
    Ok((x, trace))
}

pub fn robust_lu_forward(
    problem: &Problem,
    spec: &ConvNetSpec,
    rho: &Weights,
    eta: f64,
    iterations: usize,
    truth: Option<&Tensor>,
) -> Result<(Tensor, SolverTrace)> {
    let mut g = Graph::new();
    let learned = LearnedVars { spec, rho: rho.constants(&mut g), eta: g.constant(Tensor::scalar(eta)) };
    let (x, trace) = robust_lu_graph(&mut g, problem, &learned, iterations, truth)?;
    Ok((g.value(x).clone(), trace))
}

/// The operator-agnostic baseline: one network application to `x₀`.
pub fn direct_inverse_forward(x0: &Tensor, spec: &ConvNetSpec, weights: &Weights) -> Result<Tensor> {
    prox_forward(spec, weights, x0)
}

#[derive(Clone, Debug)]
pub struct AndersonResult {
    /// `F` evaluated at the last input.
    pub x: Tensor,
    /// The input of the last `F` evaluation.
    pub last_input: Tensor,
    /// `‖F(x) − x‖ / (1e-8 + ‖F(x)‖)` per evaluation.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

/// Solves `(m+1)`-sized dense systems by Gaussian elimination with partial
/// pivoting; `None` when a pivot vanishes.
fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if !(a[piv * n + col].abs() > 1e-300) {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Mixing weights `α` minimising `‖Σαᵢgᵢ‖²` subject to `Σαᵢ = 1`, from the
/// bordered system `[0 1ᵀ; 1 GGᵀ + ridge·I]·[ν; α] = [1; 0]`.
fn mixing_weights(g: &[Tensor], ridge: f64) -> Option<Vec<f64>> {
    let m = g.len();
    let n = m + 1;
    let mut gram = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let d: f64 = g[i].data().iter().zip(g[j].data()).map(|(a, b)| a * b).sum();
            gram[i * m + j] = d;
            gram[j * m + i] = d;
        }
    }
    let mean_diag = (0..m).map(|i| gram[i * m + i]).sum::<f64>() / m as f64;
    let reg = ridge * mean_diag.max(f64::MIN_POSITIVE);
    let mut a = vec![0.0; n * n];
    for i in 1..n {
        a[i] = 1.0;
        a[i * n] = 1.0;
        for j in 1..n {
            a[i * n + j] = gram[(i - 1) * m + (j - 1)] + if i == j { reg } else { 0.0 };
        }
    }
    let mut b = vec![0.0; n];
    b[0] = 1.0;
    solve_dense(a, b).map(|s| s[1..].to_vec())
}

/// Anderson-accelerated fixed-point iteration of `f` from `x0`.
///
/// Stops as soon as the relative residual drops below `tol` and returns
/// `F` at that point; otherwise returns the last evaluation with
/// `converged = false`. A singular mixing system falls back to a plain
/// relaxed step for that iteration. `memory = 1` is plain Picard iteration.
pub fn anderson_solve(
    f: &mut dyn FnMut(&Tensor) -> Result<Tensor>,
    x0: &Tensor,
    cfg: &AndersonConfig,
) -> Result<AndersonResult> {
    if cfg.memory == 0 || !(cfg.tol > 0.0) || cfg.max_iter == 0 {
        return Err(Error::invalid("anderson needs memory ≥ 1, tol > 0 and max_iter ≥ 1"));
    }
    let mut x = x0.clone();
    let mut xs: Vec<Tensor> = Vec::new();
    let mut fs: Vec<Tensor> = Vec::new();
    let mut gs: Vec<Tensor> = Vec::new();
    let mut residuals = Vec::new();
    for it in 0..cfg.max_iter {
        let fx = f(&x)?;
        if fx.shape() != x.shape() {
            return Err(Error::shape("fixed-point map", fx.shape(), x.shape()));
        }
        check_finite(&fx, "fixed-point map")?;
        let g = fx.sub(&x)?;
        let res = g.norm() / (1e-8 + fx.norm());
        residuals.push(res);
        if res < cfg.tol || it + 1 == cfg.max_iter {
            return Ok(AndersonResult { x: fx, last_input: x, residuals, converged: res < cfg.tol });
        }
        if xs.len() == cfg.memory {
            xs.remove(0);
            fs.remove(0);
            gs.remove(0);
        }
        xs.push(x.clone());
        fs.push(fx.clone());
        gs.push(g);
        let alpha = mixing_weights(&gs, cfg.ridge).unwrap_or_else(|| {
            let mut a = vec![0.0; gs.len()];
            *a.last_mut().expect("non-empty history") = 1.0;
            a
        });
        let mut next = Tensor::zeros_like(&x);
        for (i, a) in alpha.iter().enumerate() {
            next.axpy((1.0 - cfg.beta) * a, &xs[i])?;
            next.axpy(cfg.beta * a, &fs[i])?;
        }
        x = next;
    }
    unreachable!("the loop returns on its last iteration")
}

/// Input and side state of the final map application of an equilibrium
/// solve: everything the one-step backward pass needs.
#[derive(Clone, Debug)]
pub struct LastStep {
    pub x_in: Tensor,
    /// `z` produced inside the last application.
    pub z: Tensor,
    pub theta: Weights,
}

#[derive(Clone, Debug)]
pub struct DeqOutput {
    pub out: AdaptiveOutput,
    pub last: LastStep,
}

/// Model-adaptive equilibrium solve. One application of the map is a `z`
/// update, a `θ` update and an `x` update; `z` and `θ` are carried as side
/// state while Anderson mixing acts on `x` only.
pub fn a_adaptive_deq_forward(
    problem: &Problem,
    net: &dyn ResidualNet,
    xstep: &XStep,
    theta_init: &Weights,
    cfg: &DEQConfig,
    truth: Option<&Tensor>,
) -> Result<DeqOutput> {
    cfg.inner.validate()?;
    let (y, op) = (problem.y, problem.op);
    let inner = &cfg.inner;
    let reg = xstep.reg_term();
    let mut z = problem.x0.clone();
    let mut theta = theta_init.clone();
    let mut trace = SolverTrace::default();
    trace.push(&problem.x0, truth)?;
    if cfg.record_objective {
        trace.objective.push(objective_j(&z, &theta, &problem.x0, y, op, net, inner.lambda, inner.tau, reg)?);
    }
    let mut map = |x: &Tensor| -> Result<Tensor> {
        let start = if inner.z_from_x { x } else { &z };
        z = z_update(start, &theta, x, y, op, net, inner)?;
        theta = theta_update(&z, &theta, y, op, net, inner)?;
        let next = xstep.apply(x, &z, inner.lambda)?;
        check_finite(&next, "equilibrium map")?;
        trace.push(&next, truth)?;
        if cfg.record_objective {
            trace.objective.push(objective_j(&z, &theta, &next, y, op, net, inner.lambda, inner.tau, reg)?);
        }
        Ok(next)
    };
    let res = anderson_solve(&mut map, &problem.x0, &cfg.anderson)?;
    trace.residual = res.residuals;
    trace.converged = res.converged;
    Ok(DeqOutput {
        out: AdaptiveOutput { x: res.x, theta: theta.clone(), trace },
        last: LastStep { x_in: res.last_input, z, theta },
    })
}

/// Jacobian-free backward contract: re-applies the `x` update of the last
/// map application in `g`, treating its input, `z` and `θ` as constants.
/// Differentiating a loss of the returned variable yields the one-step
/// gradient with respect to the learned variables.
pub fn deq_backward_graph(g: &mut Graph, last: &LastStep, learned: &LearnedVars) -> Result<Var> {
    let x = g.constant(last.x_in.clone());
    learned.x_step(g, x, &last.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::MismatchNet;

    #[test]
    fn classical_prox_examples() {
        let v = Tensor::vector(vec![2.0, -0.5]);
        assert_eq!(prox_l1(&v, 1.0).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(prox_l1(&v, 0.0).unwrap(), v);
        assert_eq!(prox_l2(&Tensor::vector(vec![2.0]), 0.5).unwrap().data(), &[1.0]);
        assert!(prox_l1(&v, -1.0).is_err());
        assert!(prox_l2(&v, -1.0).is_err());
    }

    #[test]
    fn x_update_examples() {
        let x = Tensor::vector(vec![1.0]);
        let z = Tensor::vector(vec![0.0]);
        assert_eq!(x_update(&x, &z, 1.0, &Prox::Identity).unwrap(), z);
        assert_eq!(x_update(&x, &z, 0.0, &Prox::Identity).unwrap(), x);
        let out = x_update(&x, &z, 0.5, &Prox::L1(0.1)).unwrap();
        assert!((out.data()[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn prox_grad_identity_cases() {
        let op = LinearOperator::identity(&[1, 3], Tensor::vector(vec![1.0]));
        let x = Tensor::new(vec![1, 3], vec![0.5, 1.0, -1.0]).unwrap();
        let y = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(prox_grad_step(&x, &y, &op, 1.0, &Prox::Identity).unwrap(), y);
        assert_eq!(prox_grad_step(&x, &y, &op, 0.0, &Prox::Identity).unwrap(), x);
    }

    #[test]
    fn anderson_scalar_and_identity() {
        let cfg = AndersonConfig { tol: 1e-12, max_iter: 50, ..Default::default() };
        let mut f = |x: &Tensor| Ok(x.map(|v| 0.5 * v + 1.0));
        let r = anderson_solve(&mut f, &Tensor::vector(vec![0.0]), &cfg).unwrap();
        assert!(r.converged);
        assert!((r.x.data()[0] - 2.0).abs() < 1e-8);
        let x0 = Tensor::vector(vec![3.0, -1.0]);
        let r = anderson_solve(&mut |x: &Tensor| Ok(x.clone()), &x0, &cfg).unwrap();
        assert_eq!(r.x, x0);
        assert_eq!(r.residuals, vec![0.0]);
    }

    #[test]
    fn non_convergence_is_flagged() {
        let cfg = AndersonConfig { tol: 1e-12, max_iter: 3, memory: 1, ..Default::default() };
        let r = anderson_solve(&mut |x: &Tensor| Ok(x.map(|v| 0.9 * v + 1.0)), &Tensor::vector(vec![0.0]), &cfg).unwrap();
        assert!(!r.converged);
        assert_eq!(r.residuals.len(), 3);
    }

    #[test]
    fn z_update_closed_form_step() {
        let op = LinearOperator::identity(&[1, 1], Tensor::vector(vec![0.0]));
        let net = zero_net();
        let theta = net.init(crate::networks::InitScheme::Xavier, 0).zeros_like();
        let one = |v: f64| Tensor::new(vec![1, 1], vec![v]).unwrap();
        let cfg = InnerConfig { lambda: 0.5, lr_z: 0.1, ..Default::default() };
        let z = z_update(&one(0.0), &theta, &one(0.0), &one(1.0), &op, &net, &cfg).unwrap();
        assert!((z.data()[0] - 0.1).abs() < 1e-15);
        let cfg0 = InnerConfig { steps_z: 0, ..cfg };
        assert_eq!(z_update(&one(0.3), &theta, &one(0.0), &one(1.0), &op, &net, &cfg0).unwrap(), one(0.3));
    }

    fn zero_net() -> MismatchNet {
        MismatchNet::Cnn(ConvNetSpec {
            dims: 1,
            in_channels: 2,
            hidden: 2,
            out_channels: 1,
            layers: 2,
            kernel: 1,
            activation: crate::networks::Activation::LeakyRelu,
            residual: false,
        })
    }

    #[test]
    fn objective_coupling_term() {
        let op = LinearOperator::identity(&[1, 2], Tensor::vector(vec![0.0]));
        let net = zero_net();
        let theta = net.init(crate::networks::InitScheme::Xavier, 0).zeros_like();
        let z = Tensor::zeros(vec![1, 2]);
        let x = Tensor::full(vec![1, 2], 1.0);
        let j = objective_j(&z, &theta, &x, &z, &op, &net, 0.5, 0.1, None).unwrap();
        assert!((j - 1.0).abs() < 1e-15);
    }
}
