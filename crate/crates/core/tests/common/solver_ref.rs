//! Independent scalar reference for the six update policies, shared between
//! the focused tests and the acceptance gate.

#![allow(dead_code)]

use hetgrad_core::kernels::updates;
use hetgrad_core::rng::Xoshiro256;

#[derive(Clone, Copy)]
pub struct Hyper {
    pub lr: f64,
    pub momentum: f64,
    pub momentum2: f64,
    pub delta: f64,
    pub rms_decay: f64,
}

/// Scalar reference stepper: state in plain locals, one policy at a time.
pub fn reference_sequence(policy: &str, grads: &[f64], h: Hyper) -> Vec<f64> {
    let mut updates_out = Vec::with_capacity(grads.len());
    let (mut h1, mut h2) = (0.0f64, 0.0f64);
    for (t, &g) in grads.iter().enumerate() {
        let u = match policy {
            "sgd" => {
                h1 = h.momentum * h1 + h.lr * g;
                h1
            }
            "nesterov" => {
                let prev = h1;
                h1 = h.momentum * h1 + h.lr * g;
                (1.0 + h.momentum) * h1 - h.momentum * prev
            }
            "adagrad" => {
                h1 += g * g;
                h.lr * g / (h1.sqrt() + h.delta)
            }
            "rmsprop" => {
                h1 = h.rms_decay * h1 + (1.0 - h.rms_decay) * g * g;
                h.lr * g / (h1.sqrt() + h.delta)
            }
            "adadelta" => {
                h1 = h.momentum * h1 + (1.0 - h.momentum) * g * g;
                let step = g * (h2 + h.delta).sqrt() / (h1 + h.delta).sqrt();
                h2 = h.momentum * h2 + (1.0 - h.momentum) * step * step;
                h.lr * step
            }
            "adam" => {
                let tt = (t + 1) as i32;
                h1 = h.momentum * h1 + (1.0 - h.momentum) * g;
                h2 = h.momentum2 * h2 + (1.0 - h.momentum2) * g * g;
                let correction =
                    (1.0 - h.momentum2.powi(tt)).sqrt() / (1.0 - h.momentum.powi(tt));
                h.lr * correction * h1 / (h2.sqrt() + h.delta)
            }
            _ => unreachable!(),
        };
        updates_out.push(u);
    }
    updates_out
}

/// Same sequence through the kernel implementations (element 0 of a buffer).
pub fn kernel_sequence(policy: &str, grads: &[f64], h: Hyper) -> Vec<f64> {
    let mut out = Vec::with_capacity(grads.len());
    let mut h1 = [0.0f64];
    let mut h2 = [0.0f64];
    for (t, &g) in grads.iter().enumerate() {
        let mut diff = [g];
        match policy {
            "sgd" => updates::sgd_update(&mut diff, &mut h1, h.lr, h.momentum).unwrap(),
            "nesterov" => updates::nesterov_update(&mut diff, &mut h1, h.lr, h.momentum).unwrap(),
            "adagrad" => updates::adagrad_update(&mut diff, &mut h1, h.lr, h.delta).unwrap(),
            "rmsprop" => {
                updates::rmsprop_update(&mut diff, &mut h1, h.lr, h.rms_decay, h.delta).unwrap()
            }
            "adadelta" => {
                updates::adadelta_update(&mut diff, &mut h1, &mut h2, h.lr, h.momentum, h.delta)
                    .unwrap()
            }
            "adam" => updates::adam_update(
                &mut diff,
                &mut h1,
                &mut h2,
                h.lr,
                h.momentum,
                h.momentum2,
                h.delta,
                (t + 1) as u64,
            )
            .unwrap(),
            _ => unreachable!(),
        }
        out.push(diff[0]);
    }
    out
}


pub fn all_policies_match_scalar_reference() {
    let policies = ["sgd", "nesterov", "adagrad", "rmsprop", "adadelta", "adam"];
    let mut rng = Xoshiro256::seed_from(77);
    for policy in policies {
        for run in 0..10 {
            let h = Hyper {
                lr: rng.uniform(0.001, 0.5),
                momentum: rng.uniform(0.0, 0.99),
                momentum2: rng.uniform(0.9, 0.9999),
                delta: 10f64.powf(rng.uniform(-10.0, -6.0)),
                rms_decay: rng.uniform(0.8, 0.999),
            };
            let grads: Vec<f64> = (0..20).map(|_| rng.gaussian(0.0, 1.0)).collect();
            let expected = reference_sequence(policy, &grads, h);
            let got = kernel_sequence(policy, &grads, h);
            for (step, (e, g)) in expected.iter().zip(&got).enumerate() {
                let err = (e - g).abs() / e.abs().max(1.0);
                assert!(err < 1e-12, "{} run {} step {}: {} vs {}", policy, run, step, e, g);
            }
        }
    }
}

pub fn zero_gradient_zero_decay_is_a_fixpoint() {
    let h = Hyper { lr: 0.1, momentum: 0.9, momentum2: 0.999, delta: 1e-8, rms_decay: 0.99 };
    for policy in ["sgd", "nesterov", "adagrad", "rmsprop", "adadelta", "adam"] {
        let grads = vec![0.0; 10];
        let updates = kernel_sequence(policy, &grads, h);
        assert!(updates.iter().all(|&u| u == 0.0), "{} moved on zero gradients", policy);
    }
}

pub fn plain_sgd_is_scaled_gradient() {
    let h = Hyper { lr: 0.05, momentum: 0.0, momentum2: 0.999, delta: 1e-8, rms_decay: 0.99 };
    let grads = [1.0, -2.0, 0.25];
    let updates = kernel_sequence("sgd", &grads, h);
    assert_eq!(updates, [0.05, -0.1, 0.0125]);
}

pub fn adam_first_step_magnitude() {
    let h = Hyper { lr: 0.1, momentum: 0.9, momentum2: 0.999, delta: 1e-8, rms_decay: 0.99 };
    let u = kernel_sequence("adam", &[1.0], h)[0];
    // Bias-corrected first step, evaluated by hand.
    assert!((u - 0.099_999_968_377_233_39).abs() < 1e-12);
    // lr * (1 - 1e-7) agrees to six significant figures.
    assert!((u - 0.1 * (1.0 - 1e-7)).abs() / 0.1 < 1e-6);
}
