//! Central finite differences against reverse-mode gradients, in f64.

use hvc_core::capsule::CapsuleDerivation;
use hvc_core::tensor::ops::{NormMode, RunningStats};
use hvc_core::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-3;
/// Batch norm over a handful of rows is curved enough that a 1e-3 step leaves
/// truncation error above tolerance; a smaller step isolates gradient error.
pub const FINE_EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Denominator floor: below this size a gradient is judged on absolute error.
pub const FLOOR: f64 = 1e-2;
pub const INSTANCES: u64 = 20;

pub type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Var;
pub type Make = dyn Fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build>);

pub struct Case {
    pub name: String,
    pub eps: f64,
    pub make: Box<Make>,
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn dims(rng: &mut ChaCha8Rng, ranges: &[(usize, usize)]) -> Vec<usize> {
    ranges.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect()
}

/// Values bounded away from zero so a relu kink is never straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    random(rng, shape).map(|v| if v.abs() < 0.05 { v + 0.1f64.copysign(v) } else { v })
}

/// Reduces an op's output to a scalar with fixed random weights.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Var {
    let shape = g.shape(y).to_vec();
    if shape.is_empty() {
        return y;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let r = g.constant(random(&mut rng, &shape));
    let p = g.mul(y, r).unwrap();
    let axes: Vec<usize> = (0..shape.len()).collect();
    g.reduce_sum(p, &axes).unwrap()
}

fn evaluate(build: &Build, inputs: &[Tensor<f64>], seed: u64) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let y = build(&mut g, &vars);
    let loss = project(&mut g, y, seed);
    g.value(loss).item()
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Largest relative error over every input element.
fn check(build: &Build, inputs: &[Tensor<f64>], seed: u64, eps: f64) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let y = build(&mut g, &vars);
    let loss = project(&mut g, y, seed);
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).map_or_else(|| vec![0.0; g.value(v).numel()], |s| s.to_vec()))
        .collect();
    let mut worst = 0.0f64;
    for (t, a) in analytic.iter().enumerate() {
        for i in 0..inputs[t].numel() {
            let mut plus = inputs.to_vec();
            plus[t].data_mut()[i] += eps;
            let mut minus = inputs.to_vec();
            minus[t].data_mut()[i] -= eps;
            let numeric = (evaluate(build, &plus, seed) - evaluate(build, &minus, seed)) / (2.0 * eps);
            worst = worst.max(relative_error(a[i], numeric));
        }
    }
    worst
}

/// Worst error over the case's instances, or the first instance over tolerance.
pub fn run_case(case: &Case) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + case.name.len() as u64);
        let (inputs, build) = (case.make)(&mut rng);
        let e = check(&*build, &inputs, seed, case.eps);
        if !(e < TOL) {
            return Err(format!("{}: instance {seed} relative error {e:e}", case.name));
        }
        worst = worst.max(e);
    }
    Ok(worst)
}

fn case(name: &str, eps: f64, make: impl Fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build>) + 'static) -> Case {
    Case {
        name: name.to_string(),
        eps,
        make: Box::new(make),
    }
}

/// One case per differentiable op, plus a small composite.
pub fn op_cases() -> Vec<Case> {
    let mut cases = vec![
        case("conv2d_valid", EPS, |rng| {
            let d = dims(rng, &[(1, 3), (3, 6), (3, 6), (1, 4), (1, 4)]);
            let x = random(rng, &d[..4]);
            let k = random(rng, &[3, 3, d[3], d[4]]);
            (vec![x, k], Box::new(|g, v| g.conv2d_valid(v[0], v[1]).unwrap()))
        }),
        case("conv -> relu -> sum on 5x5", EPS, |rng| {
            let x = random(rng, &[1, 5, 5, 1]);
            let k = random(rng, &[3, 3, 1, 2]);
            (
                vec![x, k],
                Box::new(|g, v| {
                    let y = g.conv2d_valid(v[0], v[1]).unwrap();
                    let r = g.relu(y);
                    g.reduce_sum(r, &[0, 1, 2, 3]).unwrap()
                }),
            )
        }),
        case("matmul", EPS, |rng| {
            let d = dims(rng, &[(1, 5), (1, 6), (1, 5)]);
            let x = random(rng, &d[..2]);
            let w = random(rng, &d[1..]);
            (vec![x, w], Box::new(|g, v| g.matmul(v[0], v[1]).unwrap()))
        }),
        case("relu", EPS, |rng| {
            let d = dims(rng, &[(1, 5), (1, 6)]);
            (vec![away_from_zero(rng, &d)], Box::new(|g, v| g.relu(v[0])))
        }),
        case("reduce_sum", EPS, |rng| {
            let d = dims(rng, &[(1, 4), (1, 4), (1, 4)]);
            let axes: Vec<usize> = [vec![0], vec![2], vec![0, 2]][rng.gen_range(0..3)].clone();
            (vec![random(rng, &d)], Box::new(move |g, v| g.reduce_sum(v[0], &axes).unwrap()))
        }),
        case("permute", EPS, |rng| {
            let mut d = dims(rng, &[(1, 4), (1, 4), (1, 4)]);
            d.push(2);
            let perm = [[0, 3, 1, 2], [3, 2, 1, 0], [0, 2, 1, 3]][rng.gen_range(0..3)];
            (vec![random(rng, &d)], Box::new(move |g, v| g.permute(v[0], &perm).unwrap()))
        }),
        case("reshape", EPS, |rng| {
            let d = dims(rng, &[(1, 4), (1, 4)]);
            let (a, b) = (d[0], d[1]);
            (
                vec![random(rng, &[a, b, 2])],
                Box::new(move |g, v| g.reshape(v[0], &[2 * b, a]).unwrap()),
            )
        }),
        case("softmax_cross_entropy", EPS, |rng| {
            let d = dims(rng, &[(1, 5), (2, 6)]);
            let x = random(rng, &d).map(|v| 3.0 * v);
            let labels: Vec<usize> = (0..d[0]).map(|_| rng.gen_range(0..d[1])).collect();
            (
                vec![x],
                Box::new(move |g, v| g.softmax_cross_entropy(v[0], &labels).unwrap().0),
            )
        }),
        case("hvc_class_vectors", EPS, |rng| {
            let d = dims(rng, &[(1, 3), (1, 5), (1, 4), (1, 4)]);
            let (b, n, m, k) = (d[0], d[1], d[2], d[3]);
            let caps = random(rng, &[b, n, k]);
            let w = random(rng, &[n, m, k]);
            (vec![caps, w], Box::new(|g, v| g.hvc_class_vectors(v[0], v[1]).unwrap()))
        }),
        case("branch_logits", EPS, |rng| {
            let d = dims(rng, &[(1, 3), (1, 4), (1, 4)]);
            (vec![random(rng, &d)], Box::new(|g, v| g.branch_logits(v[0]).unwrap()))
        }),
        case("merge_branches", EPS, |rng| {
            let k = rng.gen_range(1..4);
            let shape = dims(rng, &[(1, 3), (2, 5)]);
            let mut inputs: Vec<Tensor<f64>> = (0..k).map(|_| random(rng, &shape)).collect();
            inputs.push(random(rng, &[k]));
            (inputs, Box::new(move |g, v| g.merge_branches(&v[..k], v[k]).unwrap()))
        }),
    ];
    for (name, op) in [("add", 0), ("mul", 1)] {
        cases.push(case(&format!("{name} with broadcasting"), EPS, move |rng| {
            let shape = dims(rng, &[(1, 4), (1, 4), (1, 4)]);
            let other: Vec<usize> = match rng.gen_range(0..3) {
                0 => shape.clone(),
                1 => shape[1..].to_vec(),
                _ => vec![1],
            };
            let a = random(rng, &shape);
            let b = random(rng, &other);
            (
                vec![a, b],
                Box::new(move |g, v| {
                    if op == 0 {
                        g.add(v[0], v[1]).unwrap()
                    } else {
                        g.mul(v[0], v[1]).unwrap()
                    }
                }),
            )
        }));
    }
    for mode in [CapsuleDerivation::Z, CapsuleDerivation::XY] {
        cases.push(case(&format!("derive_capsules {mode}"), EPS, move |rng| {
            let mut d = dims(rng, &[(1, 3), (1, 4), (1, 4)]);
            d.push(3);
            (vec![random(rng, &d)], Box::new(move |g, v| g.derive_capsules(v[0], mode).unwrap()))
        }));
    }
    for (name, mode, fdims) in [
        ("batch_norm train, one feature axis", NormMode::Train, 1),
        ("batch_norm train, two feature axes", NormMode::Train, 2),
        ("batch_norm eval", NormMode::Eval, 1),
    ] {
        cases.push(case(name, FINE_EPS, move |rng| {
            let shape = dims(rng, &[(2, 5), (1, 4), (1, 4)]);
            let f: usize = shape[3 - fdims..].iter().product();
            let x = random(rng, &shape);
            let gamma = random(rng, &[f]);
            let beta = random(rng, &[f]);
            let mut stats = RunningStats::<f64>::new(f);
            stats.mean = (0..f).map(|_| rng.gen_range(-0.5..0.5)).collect();
            stats.var = (0..f).map(|_| rng.gen_range(0.5..2.0)).collect();
            (
                vec![x, gamma, beta],
                Box::new(move |g, v| {
                    let mut s = stats.clone();
                    g.batch_norm(v[0], v[1], v[2], &mut s, mode, fdims).unwrap()
                }),
            )
        }));
    }
    cases
}
