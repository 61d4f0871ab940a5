//! End-to-end training of the learned proximal network `ρ` and step size
//! `η`, checkpoints, and evaluation.
//!
//! The outer optimiser (Adam) only ever sees `(ρ, η)`. The mismatch weights
//! `θ` change solely through the inner update rule of the adaptive solvers;
//! during training one `θ` is carried from batch to batch as the mean of
//! the per-instance results.

use std::path::Path;

use rayon::prelude::*;

use crate::config::Config;
use crate::container::{DType, TensorFile};
use crate::diff::Graph;
use crate::error::{Error, Result};
use crate::metrics::{self, MetricRow, MetricsReport};
use crate::networks::{init_params, Activation, ConvNetSpec, InitScheme, MismatchNet, ResidualNet, Weights};
use crate::rng::SeedTree;
use crate::solvers::{
    a_adaptive_deq_forward, a_adaptive_lu_graph, deq_backward_graph, robust_lu_graph,
    AndersonConfig, DEQConfig, InnerConfig, LUConfig, LearnedVars, Problem, SolverTrace, XStep,
};
use crate::synthdata::{Dataset, SampleTriple, Task};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Direct,
    RobustLu,
    AaLu,
    AaDeq,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Direct, ModelKind::RobustLu, ModelKind::AaLu, ModelKind::AaDeq];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Direct => "direct",
            ModelKind::RobustLu => "robust_lu",
            ModelKind::AaLu => "aa_lu",
            ModelKind::AaDeq => "aa_deq",
        }
    }

    pub fn parse(s: &str) -> Result<ModelKind> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}`")))
    }

    /// Whether the model carries mismatch weights `θ`.
    pub fn adaptive(self) -> bool {
        matches!(self, ModelKind::AaLu | ModelKind::AaDeq)
    }
}

fn parse_scheme(s: &str) -> Result<InitScheme> {
    match s {
        "uniform" => Ok(InitScheme::KaimingUniform),
        "xavier" => Ok(InitScheme::Xavier),
        other => Err(Error::Config(format!("unknown init scheme `{other}`"))),
    }
}

fn parse_activation(s: &str) -> Result<Activation> {
    match s {
        "relu" => Ok(Activation::Relu),
        "leaky_relu" => Ok(Activation::LeakyRelu),
        other => Err(Error::Config(format!("unknown activation `{other}`"))),
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::LeakyRelu => "leaky_relu",
    }
}

/// Everything that defines a model and its solver.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub task: Task,
    pub prox: ConvNetSpec,
    pub mismatch: MismatchNet,
    /// Unrolled iterations `K`.
    pub iterations: usize,
    pub eta_init: f64,
    pub inner: InnerConfig,
    /// Anderson settings; `max_iter` is the training budget.
    pub anderson: AndersonConfig,
    /// Equilibrium iteration budget at evaluation.
    pub eval_max_iter: usize,
    /// Scheme of the initial `θ` at the start of training.
    pub theta_init: InitScheme,
}

struct NetShape {
    layers: usize,
    hidden: usize,
    kernel: usize,
}

impl ModelConfig {
    /// Reads `model.*`, `prox.*`, `mismatch.*`, `inner.*` and `deq.*` keys,
    /// falling back to per-task defaults.
    pub fn from_config(cfg: &Config) -> Result<ModelConfig> {
        let task = Task::parse(&cfg.get_or("data.task", "deconv".to_string())?)?;
        let kind = ModelKind::parse(&cfg.get_or("model.kind", "aa_lu".to_string())?)?;
        let (dims, channels, kernel) = match task {
            Task::Deconv => (1, 1, 5),
            Task::Deblur | Task::Defog => (2, 3, 3),
        };
        let prox_hidden = if dims == 1 { 16 } else { 12 };
        let prox = NetShape {
            layers: cfg.get_or("prox.layers", 5)?,
            hidden: cfg.get_or("prox.hidden", prox_hidden)?,
            kernel: cfg.get_or("prox.kernel", kernel)?,
        };
        let mis = NetShape {
            layers: cfg.get_or("mismatch.layers", 3)?,
            hidden: cfg.get_or("mismatch.hidden", 8)?,
            kernel: cfg.get_or("mismatch.kernel", kernel)?,
        };
        let prox = ConvNetSpec {
            dims,
            in_channels: channels,
            hidden: prox.hidden,
            out_channels: channels,
            layers: prox.layers,
            kernel: prox.kernel,
            activation: parse_activation(&cfg.get_or("prox.activation", "relu".to_string())?)?,
            residual: true,
        };
        let mis_act = parse_activation(&cfg.get_or("mismatch.activation", "leaky_relu".to_string())?)?;
        let cnn = |cin: usize, cout: usize| ConvNetSpec {
            dims,
            in_channels: cin,
            hidden: mis.hidden,
            out_channels: cout,
            layers: mis.layers,
            kernel: mis.kernel,
            activation: mis_act,
            residual: false,
        };
        let mismatch = match task {
            Task::Defog => MismatchNet::Fog { transmission: cnn(channels + 1, channels), airlight: cnn(channels + 1, channels) },
            _ => MismatchNet::Cnn(cnn(channels + 1, channels)),
        };
        let d = InnerConfig::default();
        let inner = InnerConfig {
            lambda: cfg.get_or("inner.lambda", d.lambda)?,
            tau: cfg.get_or("inner.tau", d.tau)?,
            steps_z: cfg.get_or("inner.steps_z", d.steps_z)?,
            steps_theta: cfg.get_or("inner.steps_theta", d.steps_theta)?,
            lr_z: cfg.get_or("inner.lr_z", d.lr_z)?,
            lr_theta: cfg.get_or("inner.lr_theta", d.lr_theta)?,
            backtracking: cfg.get_or("inner.backtracking", d.backtracking)?,
            z_from_x: cfg.get_or("inner.z_from_x", d.z_from_x)?,
        };
        let a = AndersonConfig::default();
        let anderson = AndersonConfig {
            memory: cfg.get_or("deq.memory", a.memory)?,
            beta: cfg.get_or("deq.beta", a.beta)?,
            ridge: cfg.get_or("deq.ridge", a.ridge)?,
            tol: cfg.get_or("deq.tol", a.tol)?,
            max_iter: cfg.get_or("deq.max_iter_train", a.max_iter)?,
        };
        let model = ModelConfig {
            kind,
            task,
            prox,
            mismatch,
            iterations: cfg.get_or("model.iterations", 5)?,
            eta_init: cfg.get_or("model.eta_init", 1.0)?,
            inner,
            eval_max_iter: cfg.get_or("deq.max_iter_eval", 30)?,
            anderson,
            theta_init: parse_scheme(&cfg.get_or("model.theta_init", "uniform".to_string())?)?,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn to_config(&self) -> Config {
        let mut c = Config::new();
        c.set("data.task", self.task.name());
        c.set("model.kind", self.kind.name());
        c.set("model.iterations", self.iterations);
        c.set("model.eta_init", self.eta_init);
        c.set("model.theta_init", self.theta_init.name());
        c.set("prox.layers", self.prox.layers);
        c.set("prox.hidden", self.prox.hidden);
        c.set("prox.kernel", self.prox.kernel);
        c.set("prox.activation", activation_name(self.prox.activation));
        let m = self.mismatch.specs()[0];
        c.set("mismatch.layers", m.layers);
        c.set("mismatch.hidden", m.hidden);
        c.set("mismatch.kernel", m.kernel);
        c.set("mismatch.activation", activation_name(m.activation));
        c.set("inner.lambda", self.inner.lambda);
        c.set("inner.tau", self.inner.tau);
        c.set("inner.steps_z", self.inner.steps_z);
        c.set("inner.steps_theta", self.inner.steps_theta);
        c.set("inner.lr_z", self.inner.lr_z);
        c.set("inner.lr_theta", self.inner.lr_theta);
        c.set("inner.backtracking", self.inner.backtracking);
        c.set("inner.z_from_x", self.inner.z_from_x);
        c.set("deq.memory", self.anderson.memory);
        c.set("deq.beta", self.anderson.beta);
        c.set("deq.ridge", self.anderson.ridge);
        c.set("deq.tol", self.anderson.tol);
        c.set("deq.max_iter_train", self.anderson.max_iter);
        c.set("deq.max_iter_eval", self.eval_max_iter);
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.prox.validate().map_err(|e| Error::Config(e.to_string()))?;
        for s in self.mismatch.specs() {
            s.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        self.inner.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.iterations == 0 && self.kind != ModelKind::Direct {
            return Err(Error::Config("model.iterations must be at least 1".into()));
        }
        if self.anderson.memory == 0 || !(self.anderson.tol > 0.0) || self.anderson.max_iter == 0 || self.eval_max_iter == 0 {
            return Err(Error::Config("deq settings need memory ≥ 1, tol > 0 and positive iteration budgets".into()));
        }
        Ok(())
    }

    fn lu_config(&self, iterations: usize) -> LUConfig {
        LUConfig { iterations, inner: self.inner.clone(), record_objective: false }
    }

    fn deq_config(&self, max_iter: usize, tol: f64) -> DEQConfig {
        DEQConfig {
            inner: self.inner.clone(),
            anderson: AndersonConfig { max_iter, tol, ..self.anderson.clone() },
            record_objective: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fraction of the dataset held out for validation.
    pub val_frac: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn from_config(cfg: &Config) -> Result<TrainConfig> {
        let model = ModelConfig::from_config(cfg)?;
        let default_batch = if model.task == Task::Defog { 8 } else { 32 };
        let t = TrainConfig {
            epochs: cfg.get_or("train.epochs", 30)?,
            batch_size: cfg.get_or("train.batch_size", default_batch)?,
            lr: cfg.get_or("train.lr", 1e-4)?,
            beta1: cfg.get_or("train.beta1", 0.9)?,
            beta2: cfg.get_or("train.beta2", 0.999)?,
            eps: cfg.get_or("train.eps", 1e-8)?,
            val_frac: cfg.get_or("train.val_frac", 0.1)?,
            seed: cfg.get_or("seed", 0)?,
            model,
        };
        if t.batch_size == 0 || !(t.lr > 0.0) || !(0.0..1.0).contains(&t.val_frac) {
            return Err(Error::Config("train needs batch_size ≥ 1, lr > 0 and val_frac in [0, 1)".into()));
        }
        Ok(t)
    }

    pub fn to_config(&self) -> Config {
        let mut c = self.model.to_config();
        c.set("train.epochs", self.epochs);
        c.set("train.batch_size", self.batch_size);
        c.set("train.lr", self.lr);
        c.set("train.beta1", self.beta1);
        c.set("train.beta2", self.beta2);
        c.set("train.eps", self.eps);
        c.set("train.val_frac", self.val_frac);
        c.set("seed", self.seed);
        c
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Weights,
    v: Weights,
}

impl Adam {
    pub fn new(like: &Weights, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, t: 0, m: like.zeros_like(), v: like.zeros_like() }
    }

    pub fn step(&mut self, params: &mut Weights, grads: &Weights) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::invalid("adam parameter layout changed"));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads.0[i].data();
            let m = self.m.0[i].data_mut();
            for (mj, gj) in m.iter_mut().zip(g) {
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
            }
            let v = self.v.0[i].data_mut();
            for (vj, gj) in v.iter_mut().zip(g) {
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
            }
            let (m, v) = (self.m.0[i].data(), self.v.0[i].data());
            for ((p, mj), vj) in params.0[i].data_mut().iter_mut().zip(m).zip(v) {
                *p -= self.lr * (mj / c1) / ((vj / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// A trained model and its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub train: TrainConfig,
    pub rho: Weights,
    pub eta: f64,
    /// Carried mismatch weights (empty for non-adaptive models).
    pub theta: Weights,
    pub curves: Vec<EpochRecord>,
    /// Mean MSE over the training split, evaluated with the final weights.
    pub final_train_mse: f64,
}

impl Checkpoint {
    pub fn model(&self) -> &ModelConfig {
        &self.train.model
    }

    pub fn to_file(&self, header: &str) -> Result<TensorFile> {
        let mut f = TensorFile::new();
        f.push_text("header", header)?;
        f.push_text("config", &self.train.to_config().echo())?;
        for (i, t) in self.rho.tensors().iter().enumerate() {
            f.push_tensor(&format!("rho.{i}"), t, DType::F64)?;
        }
        for (i, t) in self.theta.tensors().iter().enumerate() {
            f.push_tensor(&format!("theta.{i}"), t, DType::F64)?;
        }
        f.push_tensor("eta", &Tensor::scalar(self.eta), DType::F64)?;
        f.push_tensor("final_train_mse", &Tensor::scalar(self.final_train_mse), DType::F64)?;
        if !self.curves.is_empty() {
            let data = self.curves.iter().flat_map(|c| [c.epoch as f64, c.train_loss, c.val_loss]).collect();
            f.push_tensor("curves", &Tensor::new(vec![self.curves.len(), 3], data)?, DType::F64)?;
        }
        Ok(f)
    }

    pub fn from_file(f: &TensorFile) -> Result<Checkpoint> {
        let train = TrainConfig::from_config(&Config::parse(&f.text("config")?)?)?;
        let collect = |prefix: &str| -> Result<Weights> {
            let mut out = Vec::new();
            while f.get(&format!("{prefix}.{}", out.len())).is_ok() {
                out.push(f.tensor(&format!("{prefix}.{}", out.len()))?);
            }
            Ok(Weights(out))
        };
        let curves = match f.tensor("curves") {
            Ok(t) => t
                .data()
                .chunks(3)
                .map(|c| EpochRecord { epoch: c[0] as usize, train_loss: c[1], val_loss: c[2] })
                .collect(),
            Err(_) => Vec::new(),
        };
        Ok(Checkpoint {
            train,
            rho: collect("rho")?,
            eta: f.tensor("eta")?.item()?,
            theta: collect("theta")?,
            curves,
            final_train_mse: f.tensor("final_train_mse")?.item()?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, header: &str) -> Result<()> {
        self.to_file(header)?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Checkpoint::from_file(&TensorFile::load(path)?)
    }
}

fn check_task(model: &ModelConfig, data: &Dataset) -> Result<()> {
    if model.task != data.task {
        return Err(Error::invalid(format!(
            "model is configured for {} but the dataset holds {}",
            model.task.name(),
            data.task.name()
        )));
    }
    Ok(())
}

/// Learned parameters as one list: the prox weights followed by `η`.
fn pack(rho: &Weights, eta: f64) -> Weights {
    let mut all = rho.0.clone();
    all.push(Tensor::scalar(eta));
    Weights(all)
}

fn unpack(params: &Weights) -> (Weights, f64) {
    let n = params.len() - 1;
    (Weights(params.0[..n].to_vec()), params.0[n].data()[0])
}

struct InstanceResult {
    loss: f64,
    grads: Option<Weights>,
    theta: Option<Weights>,
    trace: SolverTrace,
    x: Tensor,
}

/// Runs one model on one sample. With `want_grad` the returned gradient is
/// that of the MSE to the ground truth with respect to `(ρ, η)`.
#[allow(clippy::too_many_arguments)]
fn run_instance(
    model: &ModelConfig,
    params: &Weights,
    theta: &Weights,
    sample: &SampleTriple,
    op: &crate::operators::LinearOperator,
    iterations: usize,
    tol: f64,
    want_grad: bool,
) -> Result<InstanceResult> {
    let problem = Problem::new(&sample.y, op, model.task.init_from_adjoint())?;
    let mut g = Graph::new();
    let vars = if want_grad { params.params(&mut g) } else { params.constants(&mut g) };
    let n = vars.len() - 1;
    let learned = LearnedVars { spec: &model.prox, rho: vars[..n].to_vec(), eta: vars[n] };
    let truth = Some(&sample.x);
    let (out, theta_out, trace) = match model.kind {
        ModelKind::Direct => {
            let x0 = g.constant(problem.x0.clone());
            let out = model.prox.forward(&mut g, &learned.rho, x0)?;
            let mut trace = SolverTrace::default();
            for v in [x0, out] {
                trace.mse.push(metrics::mse(g.value(v), &sample.x)?);
                trace.snapshots.push(g.value(v).clone());
            }
            trace.converged = true;
            (out, None, trace)
        }
        ModelKind::RobustLu => {
            let (out, trace) = robust_lu_graph(&mut g, &problem, &learned, iterations, truth)?;
            (out, None, trace)
        }
        ModelKind::AaLu => {
            let cfg = model.lu_config(iterations);
            let (out, res) = a_adaptive_lu_graph(&mut g, &problem, &model.mismatch, &learned, theta, &cfg, truth)?;
            (out, Some(res.theta), res.trace)
        }
        ModelKind::AaDeq => {
            let (rho, eta) = unpack(params);
            let xstep = XStep::Learned { spec: &model.prox, rho: &rho, eta };
            let cfg = model.deq_config(iterations, tol);
            let res = a_adaptive_deq_forward(&problem, &model.mismatch, &xstep, theta, &cfg, truth)?;
            let out = if want_grad {
                deq_backward_graph(&mut g, &res.last, &learned)?
            } else {
                g.constant(res.out.x.clone())
            };
            (out, Some(res.out.theta), res.out.trace)
        }
    };
    let xt = g.constant(sample.x.clone());
    let d = g.sub(out, xt)?;
    let sq = g.sq_norm(d);
    let loss_v = g.scale(sq, 1.0 / sample.x.len() as f64);
    let loss = g.value(loss_v).item()?;
    let grads = if want_grad { Some(Weights(g.grad(loss_v, &vars)?)) } else { None };
    Ok(InstanceResult { loss, grads, theta: theta_out, trace, x: g.value(out).clone() })
}

/// Initial `(ρ, η, θ)` for a training run.
pub fn initial_state(train: &TrainConfig) -> (Weights, f64, Weights) {
    let tree = SeedTree::new(train.seed);
    let model = &train.model;
    let mut rho = init_params(&model.prox, InitScheme::KaimingUniform, tree.child(0).seed());
    rho.zero_last_layer();
    let theta = if model.kind.adaptive() {
        model.mismatch.init(model.theta_init, tree.child(1).seed())
    } else {
        Weights::default()
    };
    (rho, model.eta_init, theta)
}

fn mean_loss(model: &ModelConfig, params: &Weights, theta: &Weights, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let losses = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let op = data.operator(i)?;
            let budget = if model.kind == ModelKind::AaDeq { model.anderson.max_iter } else { model.iterations };
            Ok(run_instance(model, params, theta, &data.samples[i], &op, budget, model.anderson.tol, false)?.loss)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Progress callback: `(epoch, record)`.
pub type EpochHook<'a> = &'a mut dyn FnMut(&EpochRecord);

/// Trains `(ρ, η)` by minimising the MSE of the final reconstruction.
pub fn train(data: &Dataset, cfg: &TrainConfig, mut hook: Option<EpochHook>) -> Result<Checkpoint> {
    let model = &cfg.model;
    check_task(model, data)?;
    model.validate()?;
    let (train_set, val_set) = data.split(cfg.val_frac);
    if train_set.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let (rho, eta, mut theta) = initial_state(cfg);
    let mut params = pack(&rho, eta);
    let mut adam = Adam::new(&params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let shuffle_tree = SeedTree::new(cfg.seed).child(2);
    let budget = if model.kind == ModelKind::AaDeq { model.anderson.max_iter } else { model.iterations };
    let ops = (0..train_set.len()).map(|i| train_set.operator(i)).collect::<Result<Vec<_>>>()?;
    let mut curves = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        shuffle_tree.stream(epoch as u64).shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| {
                    run_instance(model, &params, &theta, &train_set.samples[i], &ops[i], budget, model.anderson.tol, true)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grad = params.zeros_like();
            let scale = 1.0 / results.len() as f64;
            let mut thetas = Vec::new();
            for r in results {
                if !r.loss.is_finite() {
                    return Err(Error::non_finite(format!("training loss in epoch {epoch}")));
                }
                total += r.loss;
                grad.axpy(scale, r.grads.as_ref().expect("gradients requested"))?;
                thetas.extend(r.theta);
            }
            if !grad.is_finite() {
                return Err(Error::non_finite(format!("training gradient in epoch {epoch}")));
            }
            adam.step(&mut params, &grad)?;
            if !thetas.is_empty() {
                theta = Weights::mean(&thetas)?;
            }
        }
        let record = EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            val_loss: mean_loss(model, &params, &theta, &val_set)?,
        };
        if let Some(h) = hook.as_mut() {
            h(&record);
        }
        curves.push(record);
    }
    let final_train_mse = mean_loss(model, &params, &theta, &train_set)?;
    let (rho, eta) = unpack(&params);
    Ok(Checkpoint { train: cfg.clone(), rho, eta, theta, curves, final_train_mse })
}

/// Where evaluation takes the initial `θ` from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThetaSource {
    Saved,
    Fresh(InitScheme),
}

impl ThetaSource {
    pub fn parse(s: &str) -> Result<ThetaSource> {
        match s {
            "saved" => Ok(ThetaSource::Saved),
            other => Ok(ThetaSource::Fresh(parse_scheme(other)?)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ThetaSource::Saved => "saved",
            ThetaSource::Fresh(s) => s.name(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub theta: ThetaSource,
    /// Overrides `K` (unrolled) or the equilibrium iteration budget.
    pub iterations: Option<usize>,
    /// Overrides the equilibrium stopping tolerance.
    pub tol: Option<f64>,
    /// Seed of freshly drawn `θ`.
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { theta: ThetaSource::Saved, iterations: None, tol: None, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct EvalOutput {
    pub report: MetricsReport,
    pub traces: Vec<SolverTrace>,
    pub reconstructions: Vec<Tensor>,
}

impl EvalOutput {
    /// Mean MSE of the `k`-th iterate across instances. A trace that stopped
    /// early (a converged equilibrium solve) contributes its final value.
    /// `None` when there are no traces or a trace has no MSE record.
    pub fn mean_mse_at(&self, k: usize) -> Option<f64> {
        let vals: Option<Vec<f64>> = self
            .traces
            .iter()
            .map(|t| t.mse.get(k).or(t.mse.last()).copied())
            .collect();
        vals.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Length of the longest trace.
    pub fn max_trace_len(&self) -> usize {
        self.traces.iter().map(|t| t.mse.len()).max().unwrap_or(0)
    }
}

/// Evaluates a checkpoint on every sample of `data`. Each instance starts
/// from its own copy of the initial `θ`.
pub fn evaluate(ckpt: &Checkpoint, data: &Dataset, opts: &EvalOptions) -> Result<EvalOutput> {
    let model = ckpt.model();
    check_task(model, data)?;
    let theta = match (model.kind.adaptive(), opts.theta) {
        (false, _) => Weights::default(),
        (true, ThetaSource::Saved) => ckpt.theta.clone(),
        (true, ThetaSource::Fresh(scheme)) => model.mismatch.init(scheme, opts.seed),
    };
    let iterations = opts.iterations.unwrap_or(match model.kind {
        ModelKind::AaDeq => model.eval_max_iter,
        _ => model.iterations,
    });
    let tol = opts.tol.unwrap_or(model.anderson.tol);
    let params = pack(&ckpt.rho, ckpt.eta);
    let results = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let s = &data.samples[i];
            let op = data.operator(i)?;
            let r = run_instance(model, &params, &theta, s, &op, iterations, tol, false)?;
            let peak = model.task.peak(&s.x);
            let row = MetricRow {
                instance_id: i,
                psnr_db: metrics::psnr(&r.x, &s.x, peak)?,
                ssim: metrics::ssim(&r.x, &s.x, peak)?,
                mse: r.loss,
            };
            Ok((row, r.trace, r.x))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = EvalOutput { report: MetricsReport::default(), traces: Vec::new(), reconstructions: Vec::new() };
    for (row, trace, x) in results {
        out.report.rows.push(row);
        out.traces.push(trace);
        out.reconstructions.push(x);
    }
    Ok(out)
}
