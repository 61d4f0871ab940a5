//! Reverse-mode gradients against central finite differences.

use mutn_core::diff::{Graph, Var};
use mutn_core::error::Result;
use mutn_core::rng::SeedTree;
use mutn_core::tensor::Tensor;

use super::{random_tensor, rel_err, Outcome};

pub const FD_STEP: f64 = 1e-6;
pub const TOL: f64 = 1e-5;

type Build<'a> = &'a dyn Fn(&mut Graph, &[Var]) -> Result<Var>;

/// Reduces a node to a scalar: itself if it has one element, otherwise
/// `Σ out ⊙ W` for a fixed pseudo-random `W`.
fn reduce(g: &mut Graph, out: Var) -> Result<Var> {
    if g.value(out).len() == 1 && g.shape(out).iter().all(|&d| d == 1) {
        return Ok(out);
    }
    let shape = g.shape(out).to_vec();
    let w = random_tensor(&mut SeedTree::new(4242).stream(shape.iter().sum::<usize>() as u64), &shape);
    let wv = g.constant(w);
    let p = g.mul(out, wv)?;
    Ok(g.sum(p))
}

fn loss_at(inputs: &[Tensor], build: Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    let l = reduce(&mut g, out).unwrap();
    g.value(l).item().unwrap()
}

/// Largest relative error over all inputs between the analytic gradient
/// and central differences with step [`FD_STEP`].
pub fn check(inputs: &[Tensor], build: Build) -> std::result::Result<f64, String> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars).map_err(|e| e.to_string())?;
    let l = reduce(&mut g, out).map_err(|e| e.to_string())?;
    let analytic = g.grad(l, &vars).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let mut numeric = Tensor::zeros_like(input);
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            numeric.data_mut()[j] = (loss_at(&plus, build) - loss_at(&minus, build)) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_err(&analytic[i], &numeric));
    }
    Ok(worst)
}

fn primitive_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>)> {
    vec![
        ("add", vec![vec![3, 4], vec![3, 4]], Box::new(|g, v| g.add(v[0], v[1]))),
        ("sub", vec![vec![3, 4], vec![3, 4]], Box::new(|g, v| g.sub(v[0], v[1]))),
        ("scale", vec![vec![3, 4]], Box::new(|g, v| Ok(g.scale(v[0], -1.7)))),
        ("mul_scalar", vec![vec![3, 4], vec![]], Box::new(|g, v| g.mul_scalar(v[0], v[1]))),
        ("mul", vec![vec![3, 4], vec![3, 4]], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("matmul", vec![vec![3, 4], vec![4, 5]], Box::new(|g, v| g.matmul(v[0], v[1]))),
        ("matvec", vec![vec![3, 4], vec![4]], Box::new(|g, v| g.matmul(v[0], v[1]))),
        ("conv1d", vec![vec![9], vec![3]], Box::new(|g, v| g.conv1d(v[0], v[1]))),
        ("conv1d_shared", vec![vec![2, 9], vec![5]], Box::new(|g, v| g.conv1d(v[0], v[1]))),
        ("conv1d_dense", vec![vec![2, 9], vec![3, 2, 5]], Box::new(|g, v| g.conv1d(v[0], v[1]))),
        ("conv2d", vec![vec![5, 6], vec![3, 3]], Box::new(|g, v| g.conv2d(v[0], v[1]))),
        ("conv2d_shared", vec![vec![2, 5, 6], vec![3, 5]], Box::new(|g, v| g.conv2d(v[0], v[1]))),
        ("conv2d_dense", vec![vec![2, 5, 6], vec![3, 2, 3, 5]], Box::new(|g, v| g.conv2d(v[0], v[1]))),
        ("add_bias", vec![vec![3, 4], vec![3]], Box::new(|g, v| g.add_bias(v[0], v[1]))),
        ("add_bias_2d", vec![vec![2, 3, 4], vec![2]], Box::new(|g, v| g.add_bias(v[0], v[1]))),
        ("relu", vec![vec![3, 4]], Box::new(|g, v| Ok(g.relu(v[0])))),
        ("leaky_relu", vec![vec![3, 4]], Box::new(|g, v| Ok(g.leaky_relu(v[0], 0.1)))),
        ("sigmoid", vec![vec![3, 4]], Box::new(|g, v| Ok(g.sigmoid(v[0])))),
        ("sum", vec![vec![3, 4]], Box::new(|g, v| Ok(g.sum(v[0])))),
        ("mean", vec![vec![3, 4]], Box::new(|g, v| Ok(g.mean(v[0])))),
        ("sq_norm", vec![vec![3, 4]], Box::new(|g, v| Ok(g.sq_norm(v[0])))),
        ("concat", vec![vec![2, 4], vec![3, 4]], Box::new(|g, v| g.concat(&[v[0], v[1]]))),
        ("slice", vec![vec![5, 4]], Box::new(|g, v| g.slice(v[0], 1, 3))),
        ("reshape", vec![vec![3, 4]], Box::new(|g, v| g.reshape(v[0], &[2, 6]))),
    ]
}

/// Applies `steps` random shape-preserving primitives to `[2, 8]` inputs.
fn random_expression(g: &mut Graph, v: &[Var], seed: u64, steps: usize) -> Result<Var> {
    let mut s = SeedTree::new(seed).stream(1);
    let (a, b, k, sc) = (v[0], v[1], v[2], v[3]);
    let mut pool = vec![a, b];
    let mut cur = a;
    for _ in 0..steps {
        let other = pool[s.below(pool.len() as u64) as usize];
        cur = match s.below(10) {
            0 => g.add(cur, other)?,
            1 => g.sub(cur, other)?,
            2 => g.mul(cur, other)?,
            3 => g.scale(cur, s.uniform_in(-2.0, 2.0)),
            4 => g.mul_scalar(cur, sc)?,
            5 => g.sigmoid(cur),
            6 => g.leaky_relu(cur, 0.2),
            7 => g.relu(cur),
            8 => g.conv1d(cur, k)?,
            _ => {
                let c = g.concat(&[cur, other])?;
                g.slice(c, 1, 3)?
            }
        };
        pool.push(cur);
    }
    if s.bernoulli(0.5) {
        Ok(g.sq_norm(cur))
    } else {
        Ok(cur)
    }
}

pub const EXPRESSIONS: usize = 20;

pub fn run() -> Outcome {
    let tree = SeedTree::new(7);
    let cases = primitive_cases();
    let mut worst_prim: f64 = 0.0;
    for (i, (name, shapes, build)) in cases.iter().enumerate() {
        let mut s = tree.stream(i as u64);
        let inputs: Vec<Tensor> = shapes.iter().map(|sh| random_tensor(&mut s, sh)).collect();
        let err = check(&inputs, build.as_ref()).map_err(|e| format!("{name}: {e}"))?;
        if !(err < TOL) {
            return Err(format!("primitive {name}: relative error {err:.3e} ≥ {TOL:e}"));
        }
        worst_prim = worst_prim.max(err);
    }
    let mut worst_expr: f64 = 0.0;
    for e in 0..EXPRESSIONS as u64 {
        let mut s = tree.child(1).stream(e);
        let inputs = vec![
            random_tensor(&mut s, &[2, 8]),
            random_tensor(&mut s, &[2, 8]),
            random_tensor(&mut s, &[3]).scale(0.5),
            random_tensor(&mut s, &[]),
        ];
        let steps = 4 + (e % 4) as usize;
        let build = move |g: &mut Graph, v: &[Var]| random_expression(g, v, 100 + e, steps);
        let err = check(&inputs, &build)?;
        if !(err < TOL) {
            return Err(format!("random expression {e}: relative error {err:.3e} ≥ {TOL:e}"));
        }
        worst_expr = worst_expr.max(err);
    }
    Ok(format!(
        "{} primitives max rel err {worst_prim:.2e}; {EXPRESSIONS} random expressions max rel err {worst_expr:.2e}",
        cases.len()
    ))
}
