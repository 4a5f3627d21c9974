//! Central finite-difference gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use protoseg_core::loss::LossConfig;
use protoseg_core::{Graph, ModelConfig, ParamStore, PointCloud, ProtoSeg, Tensor, Var};

pub const STEP: f64 = 1e-5;

/// ‖a − b‖ / max(‖a‖, ‖b‖); two zero vectors give 0.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

type Build = fn(&mut Graph, &[Var]) -> Var;

/// One differentiable operation under test: input tensors plus a builder
/// producing the op's (possibly non-scalar) output.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

fn forward(inputs: &[Tensor], build: Build, with_grad: bool) -> (Graph, Vec<Var>, Var) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            let t = t.clone();
            g.leaf(if with_grad { t.with_grad() } else { t })
        })
        .collect();
    let out = build(&mut g, &vars);
    (g, vars, out)
}

/// Σ w ⊙ output, evaluated outside the graph.
fn probe(inputs: &[Tensor], build: Build, w: &[f64]) -> f64 {
    let (g, _, out) = forward(inputs, build, false);
    g.values(out).iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Relative error between the analytic and numerical gradients of
/// `Σ w ⊙ op(inputs)` over all inputs, with random probe weights `w`.
pub fn check_case(case: &OpCase, rng: &mut impl Rng) -> f64 {
    let (g0, _, out0) = forward(&case.inputs, case.build, false);
    let w: Vec<f64> = (0..g0.values(out0).len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let shape = g0.shape(out0).to_vec();

    let (mut g, vars, out) = forward(&case.inputs, case.build, true);
    let wv = g.constant(shape, w.clone()).unwrap();
    let prod = g.mul(out, wv).unwrap();
    let total = g.sum_all(prod).unwrap();
    g.backward(total).unwrap();
    let mut analytic = Vec::new();
    for &v in &vars {
        analytic.extend_from_slice(g.grad(v).expect("leaf gradient"));
    }

    let mut numeric = Vec::new();
    for t in 0..case.inputs.len() {
        for i in 0..case.inputs[t].len() {
            let mut plus = case.inputs.clone();
            plus[t].values_mut()[i] += STEP;
            let mut minus = case.inputs.clone();
            minus[t].values_mut()[i] -= STEP;
            numeric.push((probe(&plus, case.build, &w) - probe(&minus, case.build, &w)) / (2.0 * STEP));
        }
    }
    rel_error(&analytic, &numeric)
}

fn uniform(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )
    .unwrap()
}

/// Values in [-2, 2] kept at least `gap` away from zero (kinks of relu).
fn away_from_zero(rng: &mut impl Rng, shape: &[usize], gap: f64) -> Tensor {
    let mut t = uniform(rng, shape);
    for v in t.values_mut() {
        if v.abs() < gap {
            *v = if *v < 0.0 { -gap } else { gap };
        }
    }
    t
}

fn probabilities(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(0.05..0.95)).collect(),
    )
    .unwrap()
}

const BCE_TARGET: [f64; 12] = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0];

/// Every differentiable graph operation with inputs drawn from `seed`.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let case = |name, inputs, build| OpCase { name, inputs, build };
    vec![
        case(
            "matmul",
            vec![uniform(r, &[5, 4]), uniform(r, &[4, 3])],
            |g, v| g.matmul(v[0], v[1]).unwrap(),
        ),
        case("transpose", vec![uniform(r, &[3, 4])], |g, v| {
            g.transpose(v[0]).unwrap()
        }),
        case("add", vec![uniform(r, &[3, 4]), uniform(r, &[3, 4])], |g, v| {
            g.add(v[0], v[1]).unwrap()
        }),
        case("sub", vec![uniform(r, &[3, 4]), uniform(r, &[3, 4])], |g, v| {
            g.sub(v[0], v[1]).unwrap()
        }),
        case("mul", vec![uniform(r, &[3, 4]), uniform(r, &[3, 4])], |g, v| {
            g.mul(v[0], v[1]).unwrap()
        }),
        case("scale", vec![uniform(r, &[3, 4])], |g, v| g.scale(v[0], -1.7)),
        case("relu", vec![away_from_zero(r, &[3, 4], 1e-3)], |g, v| {
            g.relu(v[0])
        }),
        case("tanh", vec![uniform(r, &[3, 4])], |g, v| g.tanh(v[0])),
        case("sigmoid", vec![uniform(r, &[3, 4])], |g, v| g.sigmoid(v[0])),
        case("add_bias", vec![uniform(r, &[4, 3]), uniform(r, &[3])], |g, v| {
            g.add_bias(v[0], v[1]).unwrap()
        }),
        case("sum_axis0", vec![uniform(r, &[3, 4])], |g, v| {
            g.sum(v[0], 0).unwrap()
        }),
        case("sum_axis1", vec![uniform(r, &[3, 4])], |g, v| {
            g.sum(v[0], 1).unwrap()
        }),
        case("mean_axis0", vec![uniform(r, &[3, 4])], |g, v| {
            g.mean(v[0], 0).unwrap()
        }),
        case("mean_axis1", vec![uniform(r, &[3, 4])], |g, v| {
            g.mean(v[0], 1).unwrap()
        }),
        case("max_axis0", vec![uniform(r, &[3, 4])], |g, v| {
            g.max(v[0], 0).unwrap()
        }),
        case("max_axis1", vec![uniform(r, &[3, 4])], |g, v| {
            g.max(v[0], 1).unwrap()
        }),
        case("min_axis1", vec![uniform(r, &[3, 4])], |g, v| {
            g.min(v[0], 1).unwrap()
        }),
        case("sum_rank3", vec![uniform(r, &[2, 3, 4])], |g, v| {
            g.sum(v[0], 1).unwrap()
        }),
        case("max_rank3", vec![uniform(r, &[2, 3, 4])], |g, v| {
            g.max(v[0], 1).unwrap()
        }),
        case("sum_all", vec![uniform(r, &[3, 4])], |g, v| {
            g.sum_all(v[0]).unwrap()
        }),
        case("mean_all", vec![uniform(r, &[3, 4])], |g, v| {
            g.mean_all(v[0]).unwrap()
        }),
        case("reshape", vec![uniform(r, &[3, 4])], |g, v| {
            g.reshape(v[0], vec![2, 6]).unwrap()
        }),
        case("gather_rows", vec![uniform(r, &[3, 2])], |g, v| {
            g.gather_rows(v[0], &[2, 0, 2]).unwrap()
        }),
        case(
            "concat_cols",
            vec![uniform(r, &[3, 2]), uniform(r, &[3, 1])],
            |g, v| g.concat_cols(&[v[0], v[1]]).unwrap(),
        ),
        case("bce_elem", vec![probabilities(r, &[3, 4])], |g, v| {
            g.bce_elem(v[0], &BCE_TARGET).unwrap()
        }),
        case("bce", vec![probabilities(r, &[8])], |g, v| {
            g.bce(v[0], &BCE_TARGET[..8]).unwrap()
        }),
        case("bce_rows", vec![probabilities(r, &[3, 4])], |g, v| {
            g.bce_rows(v[0], &BCE_TARGET).unwrap()
        }),
    ]
}

/// A small network whose 32-point scenes keep finite differences cheap.
pub fn tiny_model_config(seed: u64) -> ModelConfig {
    ModelConfig {
        backbone_hidden: 8,
        features: 8,
        prototypes: 6,
        proto_hidden: 8,
        samples: 6,
        dilations: vec![1, 2],
        k: 4,
        kernel_hidden: 4,
        branch_width: 4,
        fusion_width: 8,
        init_seed: seed,
        ..ModelConfig::default()
    }
}

/// Relative error of the reciprocal-loss gradient with respect to
/// `coordinates` randomly chosen parameter entries of a tiny model.
///
/// Fresh biases are zero, and a sampled point is its own first neighbor
/// with a zero offset, so some kernel pre-activations start exactly on the
/// relu kink. Every parameter is therefore jittered off its initial value
/// before checking.
pub fn model_rel_error(cloud: &PointCloud, seed: u64, coordinates: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut model = ProtoSeg::new(tiny_model_config(seed)).unwrap();
    for (_, _, t) in model.params.iter_mut() {
        for v in t.values_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    let cfg = LossConfig::default();
    let mut grads: ParamStore = model.params.clone();
    grads.clear_grads();
    model.accumulate_gradients(cloud, &cfg, &mut grads).unwrap();

    let ids: Vec<_> = model.params.iter().map(|(id, _, t)| (id, t.len())).collect();
    let total: usize = ids.iter().map(|x| x.1).sum();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for _ in 0..coordinates.min(total) {
        let mut flat = rng.random_range(0..total);
        let (id, i) = ids
            .iter()
            .find_map(|&(id, len)| {
                if flat < len {
                    Some((id, flat))
                } else {
                    flat -= len;
                    None
                }
            })
            .unwrap();
        analytic.push(grads.get(id).grad().map_or(0.0, |g| g[i]));
        let eval = |delta: f64| {
            let mut m = model.clone();
            m.params.get_mut(id).values_mut()[i] += delta;
            m.loss(cloud, &cfg).unwrap().loss
        };
        numeric.push((eval(STEP) - eval(-STEP)) / (2.0 * STEP));
    }
    rel_error(&analytic, &numeric)
}
