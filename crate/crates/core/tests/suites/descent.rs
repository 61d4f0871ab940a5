//! Monotone descent of the split objective under the classical updates:
//! backtracking `z` and `θ` steps and the exact `x` minimiser.

use mutn_core::networks::{Activation, ConvNetSpec, InitScheme, MismatchNet, ResidualNet};
use mutn_core::solvers::{a_adaptive_lu_forward, InnerConfig, LUConfig, Problem, Reg, XStep};
use mutn_core::synthdata::{gen_seismic_dataset, SeismicConfig};

use super::Outcome;

pub const INSTANCES: usize = 10;
pub const ROUNDS: usize = 50;
pub const UPHILL_TOL: f64 = 1e-10;

pub fn small_mismatch_net() -> MismatchNet {
    MismatchNet::Cnn(ConvNetSpec {
        dims: 1,
        in_channels: 2,
        hidden: 4,
        out_channels: 1,
        layers: 3,
        kernel: 5,
        activation: Activation::LeakyRelu,
        residual: false,
    })
}

pub fn run() -> Outcome {
    let data = gen_seismic_dataset(&SeismicConfig { count: INSTANCES, seed: 31, ..SeismicConfig::default() })
        .map_err(|e| e.to_string())?;
    let net = small_mismatch_net();
    let lambda = 0.1;
    let cfg = LUConfig {
        iterations: ROUNDS,
        inner: InnerConfig {
            lambda,
            tau: 0.1,
            steps_z: 1,
            steps_theta: 1,
            lr_z: 1.0,
            lr_theta: 1e-2,
            backtracking: true,
            z_from_x: false,
        },
        record_objective: true,
    };
    let mut checked = 0;
    let mut total_drop = 0.0;
    for reg in [Reg::L1, Reg::L2] {
        let xstep = XStep::Classical { reg, gamma: 0.01, eta: 1.0 / (2.0 * lambda) };
        for i in 0..INSTANCES {
            let op = data.operator(i).map_err(|e| e.to_string())?;
            let s = &data.samples[i];
            let problem = Problem::new(&s.y, &op, true).map_err(|e| e.to_string())?;
            let theta = net.init(InitScheme::KaimingUniform, 1000 + i as u64);
            let out = a_adaptive_lu_forward(&problem, &net, &xstep, &theta, &cfg, None).map_err(|e| e.to_string())?;
            let t = &out.trace;
            if t.stages.len() != ROUNDS || t.objective.len() != ROUNDS + 1 {
                return Err(format!("instance {i}: expected {ROUNDS} recorded rounds"));
            }
            for k in 0..ROUNDS {
                let chain = [t.objective[k], t.stages[k][0], t.stages[k][1], t.stages[k][2]];
                for (step, pair) in chain.windows(2).enumerate() {
                    let slack = UPHILL_TOL * (1.0 + pair[0].abs());
                    if !(pair[1] <= pair[0] + slack) {
                        let what = ["z", "theta", "x"][step];
                        return Err(format!(
                            "{reg:?} instance {i} round {k}: {what} update raised J from {} to {}",
                            pair[0], pair[1]
                        ));
                    }
                    checked += 1;
                }
            }
            total_drop += (t.objective[0] - t.objective[ROUNDS]) / t.objective[0].abs().max(1e-300);
        }
    }
    Ok(format!(
        "{checked} sub-updates non-increasing (l1 and l2, {INSTANCES} instances × {ROUNDS} rounds); mean relative J drop {:.3}",
        total_drop / (2 * INSTANCES) as f64
    ))
}
