mod common;

use common::mlm_problem;
use mlmkit::autodiff::{analytic_gradients, grad_check_with, GradCheckOptions, Precision};

#[test]
fn full_model_gradients_in_double_precision() {
    for seed in 0..2 {
        let (f, inputs) = mlm_problem(seed);
        let opts = GradCheckOptions {
            max_coords_per_input: Some(6),
            analytic_precision: Precision::F64,
            seed,
            ..Default::default()
        };
        let r = grad_check_with(&f, &inputs, &opts).unwrap();
        assert!(r.max_rel_error < 1e-3, "seed {seed}: {:?}", r.worst);
    }
}

#[test]
fn key_bias_gradient_vanishes() {
    // A bias on the keys shifts every score of a query row by the same
    // amount, which softmax cancels.
    let (f, inputs) = mlm_problem(3);
    let grads = analytic_gradients::<f64, _>(&f, &inputs).unwrap();
    for ((name, _), g) in f.model.params.iter().zip(&grads) {
        if name.ends_with("attention.key.bias") {
            assert!(g.data().iter().all(|v| v.abs() < 1e-12), "{name}");
        }
    }
}
