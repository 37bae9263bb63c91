mod common;

use common::{network_with_biases, sample_indices, Batch};
use snakezero::net::gradient_check;

fn check(n: usize, seed: u64, c_l2: f64) {
    let net = network_with_biases(n, seed);
    let batch = Batch::random(n, 4, seed + 100);
    let idx = sample_indices(&net, 18, seed + 200);
    let report = gradient_check(&net, &batch.samples(), c_l2, &idx, 1e-4).unwrap();
    eprintln!("n={n} seed={seed}: {report:?}");
    assert!(report.checked >= 200, "{report:?}");
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn gradients_match_finite_differences_6x6() {
    for seed in 0..3 {
        check(6, seed, 1e-3);
    }
}

#[test]
fn gradients_match_finite_differences_10x10() {
    check(10, 7, 1e-4);
}

#[test]
fn gradients_without_regularisation() {
    check(4, 11, 0.0);
}

#[test]
fn small_step_against_gradient_lowers_loss() {
    let mut net = network_with_biases(6, 21);
    let batch = Batch::random(6, 8, 22);
    let samples = batch.samples();
    let before = net.batch_loss(&samples, 1e-4).unwrap();
    let g = net.backward(&samples, 1e-4).unwrap();
    assert!((g.loss - before).abs() < 1e-9 * before.abs());
    net.sgd_update(&g.values, 1e-6, 0.0).unwrap();
    let after = net.batch_loss(&samples, 1e-4).unwrap();
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn f32_and_f64_storage_agree() {
    let net = snakezero::net::Network::<f32>::init(10, 5).unwrap();
    let wide = net.cast::<f64>();
    let batch = Batch::random(10, 3, 6);
    for f in &batch.features {
        let a = net.forward(f).unwrap();
        let b = wide.forward(f).unwrap();
        assert_eq!(a, b);
    }
}

mod props {
    use proptest::prelude::*;
    use snakezero::net::Network;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn policy_is_a_distribution(
            input in proptest::collection::vec(-1e3f64..1e3, 7 * 16),
            seed in 0u64..1000,
        ) {
            let net = Network::<f32>::init(4, seed).unwrap();
            let out = net.trace_dense(input).unwrap().output;
            let sum: f64 = out.policy.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(out.policy.iter().all(|p| p.is_finite() && *p >= 0.0));
            prop_assert!(out.value.is_finite());
        }
    }
}
