#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use invdesign_core::domain::NormalizationStats;
use invdesign_core::flow::{InnConfig, InnModel, FLOW_DIM, LATENT_DIM};
use invdesign_core::losses::{mmd2_graph, mse_graph, LossWeights, DEFAULT_BANDWIDTHS};
use invdesign_core::numgrad::{Graph, NodeId, Tensor};

pub const FD_STEP: f64 = 1e-6;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_ABS_FLOOR: f64 = 1e-7;

type Build = Box<dyn Fn(&mut Graph, &[NodeId]) -> NodeId>;

/// A scalar function of several tensor inputs, recorded on a graph.
pub struct GradCase {
    pub name: String,
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

pub fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Entries drawn away from zero so ReLU kinks stay out of the difference stencil.
fn away_from_zero(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| {
        let v: f64 = rng.random_range(0.1..1.5);
        if rng.random::<bool>() { v } else { -v }
    })
}

/// Contracts a non-scalar node with fixed weights.
fn project(g: &mut Graph, out: NodeId) -> NodeId {
    let (r, c) = g.value(out).shape();
    let w = g.constant(Tensor::from_fn(r, c, |i, j| ((i * 7 + j * 3) as f64 * 0.37).sin() + 0.2));
    let m = g.mul(out, w).unwrap();
    g.sum(m).unwrap()
}

fn case(name: &str, inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[NodeId]) -> NodeId + 'static) -> GradCase {
    GradCase {
        name: name.to_string(),
        inputs,
        build: Box::new(build),
    }
}

pub fn small_inn(blocks: usize, width: usize, seed: u64) -> InnModel {
    let config = InnConfig {
        blocks,
        hidden_width: width,
        seed,
        ..InnConfig::default()
    };
    InnModel::new(config, NormalizationStats::identity(FLOW_DIM, 3), LossWeights::default()).unwrap()
}

/// Random model state: fresh initialization plus Gaussian weight noise.
pub fn random_inn(seed: u64) -> InnModel {
    let mut m = small_inn(4, 32, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for p in m.params_mut() {
        for v in p.data_mut() {
            *v += 0.2 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    m
}

/// One case per graph operation, plus the losses and whole-flow compositions.
pub fn gradient_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = vec![
        case("matmul", vec![normal(3, 4, &mut rng), normal(4, 2, &mut rng)], |g, x| {
            let o = g.matmul(x[0], x[1]).unwrap();
            project(g, o)
        }),
        case(
            "linear",
            vec![normal(5, 3, &mut rng), normal(3, 4, &mut rng), normal(1, 4, &mut rng)],
            |g, x| {
                let o = g.linear(x[0], x[1], x[2], false).unwrap();
                project(g, o)
            },
        ),
    ];
    let (xr, wr, br) = loop {
        let x = normal(5, 3, &mut rng);
        let w = normal(3, 4, &mut rng);
        let b = normal(1, 4, &mut rng);
        let pre = x.matmul(&w).unwrap().add_row(&b).unwrap();
        if pre.data().iter().all(|v| v.abs() > 1e-3) {
            break (x, w, b);
        }
    };
    cases.push(case("linear_relu", vec![xr, wr, br], |g, x| {
        let o = g.linear(x[0], x[1], x[2], true).unwrap();
        project(g, o)
    }));
    cases.push(case("add", vec![normal(3, 4, &mut rng), normal(3, 4, &mut rng)], |g, x| {
        let o = g.add(x[0], x[1]).unwrap();
        project(g, o)
    }));
    cases.push(case("sub", vec![normal(3, 4, &mut rng), normal(3, 4, &mut rng)], |g, x| {
        let o = g.sub(x[0], x[1]).unwrap();
        project(g, o)
    }));
    cases.push(case("mul", vec![normal(3, 4, &mut rng), normal(3, 4, &mut rng)], |g, x| {
        let o = g.mul(x[0], x[1]).unwrap();
        project(g, o)
    }));
    cases.push(case("add_row", vec![normal(4, 3, &mut rng), normal(1, 3, &mut rng)], |g, x| {
        let o = g.add_row(x[0], x[1]).unwrap();
        project(g, o)
    }));
    cases.push(case("exp", vec![normal(3, 3, &mut rng)], |g, x| {
        let o = g.exp(x[0]);
        project(g, o)
    }));
    cases.push(case("tanh", vec![normal(3, 3, &mut rng)], |g, x| {
        let o = g.tanh(x[0]);
        project(g, o)
    }));
    cases.push(case("relu", vec![away_from_zero(4, 3, &mut rng)], |g, x| {
        let o = g.relu(x[0]);
        project(g, o)
    }));
    cases.push(case("scale", vec![normal(2, 5, &mut rng)], |g, x| {
        let o = g.scale(x[0], -2.5);
        project(g, o)
    }));
    cases.push(case("sum", vec![normal(3, 4, &mut rng)], |g, x| {
        let e = g.exp(x[0]);
        g.sum(e).unwrap()
    }));
    cases.push(case("mean", vec![normal(3, 4, &mut rng)], |g, x| {
        let e = g.tanh(x[0]);
        g.mean(e).unwrap()
    }));
    cases.push(case("select_cols", vec![normal(3, 4, &mut rng)], |g, x| {
        let o = g.select_cols(x[0], &[2, 0, 2, 3]).unwrap();
        project(g, o)
    }));
    cases.push(case("concat_cols", vec![normal(3, 2, &mut rng), normal(3, 3, &mut rng)], |g, x| {
        let o = g.concat_cols(x[0], x[1]).unwrap();
        project(g, o)
    }));
    cases.push(case("mse", vec![normal(6, 3, &mut rng), normal(6, 3, &mut rng)], |g, x| {
        mse_graph(g, x[0], x[1]).unwrap()
    }));
    cases.push(case("mmd2", vec![normal(7, 3, &mut rng), normal(5, 3, &mut rng)], |g, x| {
        mmd2_graph(g, x[0], x[1], &DEFAULT_BANDWIDTHS).unwrap()
    }));

    let inn = small_inn(2, 8, seed);
    let n_params = inn.param_tensor_count();
    let mut flow_inputs = vec![normal(4, FLOW_DIM, &mut rng)];
    flow_inputs.extend(inn.params().cloned());
    let fwd = inn.clone();
    cases.push(case("inn_forward", flow_inputs.clone(), move |g, x| {
        let o = fwd.forward_graph(g, x[0], &x[1..=n_params]).unwrap();
        project(g, o)
    }));
    let inv = inn.clone();
    cases.push(case("inn_inverse", flow_inputs, move |g, x| {
        let o = inv.inverse_graph(g, x[0], &x[1..=n_params]).unwrap();
        project(g, o)
    }));
    let latent = normal(4, LATENT_DIM, &mut rng);
    let mut loss_inputs = vec![normal(4, FLOW_DIM, &mut rng), normal(4, 3, &mut rng)];
    loss_inputs.extend(inn.params().cloned());
    cases.push(case("inn_forward_loss", loss_inputs, move |g, x| {
        let out = inn.forward_graph(g, x[0], &x[2..2 + n_params]).unwrap();
        let y = g.select_cols(out, &[0, 1, 2]).unwrap();
        let z = g.select_cols(out, &[3, 4, 5]).unwrap();
        let zs = g.constant(latent.clone());
        let ly = mse_graph(g, y, x[1]).unwrap();
        let lz = mmd2_graph(g, z, zs, &DEFAULT_BANDWIDTHS).unwrap();
        let lz = g.scale(lz, 0.1);
        g.add(ly, lz).unwrap()
    }));
    cases
}

fn eval(case: &GradCase, inputs: &[Tensor]) -> f64 {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let root = (case.build)(&mut g, &ids);
    g.scalar_value(root)
}

/// Error of one analytic entry against its central difference: relative,
/// except that differences below the absolute floor count as zero.
pub fn entry_error(analytic: f64, numeric: f64) -> f64 {
    let d = (analytic - numeric).abs();
    if d <= FD_ABS_FLOOR {
        0.0
    } else {
        d / analytic.abs().max(numeric.abs())
    }
}

/// Largest entry error over all inputs of `case`.
pub fn max_gradient_error(case: &GradCase) -> f64 {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = case.inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let root = (case.build)(&mut g, &ids);
    let grads = g.backward(root).unwrap();
    let mut worst = 0.0f64;
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id);
        for e in 0..case.inputs[k].len() {
            let mut plus = case.inputs.clone();
            plus[k].data_mut()[e] += FD_STEP;
            let mut minus = case.inputs.clone();
            minus[k].data_mut()[e] -= FD_STEP;
            let numeric = (eval(case, &plus) - eval(case, &minus)) / (2.0 * FD_STEP);
            worst = worst.max(entry_error(analytic.data()[e], numeric));
        }
    }
    worst
}

/// Central-difference Jacobian of the flow at one raw input row.
pub fn numeric_jacobian(model: &InnModel, x: &[f64], h: f64) -> [[f64; FLOW_DIM]; FLOW_DIM] {
    let mut jac = [[0.0; FLOW_DIM]; FLOW_DIM];
    for j in 0..FLOW_DIM {
        let mut p = x.to_vec();
        p[j] += h;
        let mut m = x.to_vec();
        m[j] -= h;
        let fp = model.forward(&Tensor::row_vector(p)).unwrap();
        let fm = model.forward(&Tensor::row_vector(m)).unwrap();
        for i in 0..FLOW_DIM {
            jac[i][j] = (fp.data()[i] - fm.data()[i]) / (2.0 * h);
        }
    }
    jac
}

/// `ln |det J|` of the central-difference Jacobian, via nalgebra's LU.
pub fn numeric_log_det(model: &InnModel, x: &[f64]) -> f64 {
    let jac = numeric_jacobian(model, x, 1e-5);
    let m = nalgebra::SMatrix::<f64, FLOW_DIM, FLOW_DIM>::from_fn(|i, j| jac[i][j]);
    m.determinant().abs().ln()
}
