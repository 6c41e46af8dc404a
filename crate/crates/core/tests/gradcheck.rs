mod common;

use common::grad::{op_cases, relative_error, run_case, FINE_EPS, INSTANCES, TOL};
use hvc_core::capsule::{CapsuleDerivation, MergeKind};
use hvc_core::model::{Head, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn every_op_matches_finite_differences() {
    let mut failures = Vec::new();
    for case in op_cases() {
        match run_case(&case) {
            Ok(worst) => println!("{}: {INSTANCES} instances, max relative error {worst:.2e}", case.name),
            Err(e) => failures.push(e),
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}

/// Whole network in train mode, perturbing a sample of its parameters.
#[test]
fn tiny_network_end_to_end() {
    for (head, branches, merge) in [
        (Head::Hvc(CapsuleDerivation::Z), 3, MergeKind::RandomInit),
        (Head::Hvc(CapsuleDerivation::XY), 1, MergeKind::NotLearnable),
        (Head::FullyConnected, 3, MergeKind::OnesInit),
    ] {
        let cfg = ModelConfig {
            conv_filters: vec![2, 2, 3, 3, 3, 4, 4, 4, 4],
            custom_ladder: true,
            image_size: 20,
            head,
            branches,
            merge,
            ..Default::default()
        };
        let model = Model::<f64>::build(cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = common::grad::random(&mut rng, &[3, 20, 20, 1]);
        let labels = [1usize, 7, 3];
        let loss_of = |m: &Model<f64>| {
            let mut m = m.clone();
            let f = m.forward_train(&x).unwrap();
            let mut g = f.graph;
            let (l, _) = g.softmax_cross_entropy(f.logits, &labels).unwrap();
            (g, l, f.params)
        };
        let value = |m: &Model<f64>| {
            let (g, l, _) = loss_of(m);
            g.value(l).item()
        };
        let (mut g, l, params) = loss_of(&model);
        g.backward(l).unwrap();
        let mut worst = 0.0f64;
        let mut checked = 0;
        for (pi, entry) in model.manifest().entries.iter().enumerate() {
            if !entry.trainable {
                continue;
            }
            let grad = g.grad(params[pi].unwrap()).unwrap().to_vec();
            for _ in 0..3 {
                let i = rng.gen_range(0..grad.len());
                let mut plus = model.clone();
                plus.values_mut()[pi].data_mut()[i] += FINE_EPS;
                let mut minus = model.clone();
                minus.values_mut()[pi].data_mut()[i] -= FINE_EPS;
                let numeric = (value(&plus) - value(&minus)) / (2.0 * FINE_EPS);
                let err = relative_error(grad[i], numeric);
                assert!(err < TOL, "{head} {}[{i}]: relative error {err:e}", entry.name);
                worst = worst.max(err);
                checked += 1;
            }
        }
        println!("network {head}, {branches} branch(es): {checked} parameters, max relative error {worst:.2e}");
    }
}
