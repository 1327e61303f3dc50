//! Parsers for the network and solver description text formats: a faithful
//! subset of the classic prototxt grammar, covering both the modern
//! `layer { type: "Convolution" }` style and the legacy
//! `layers { type: CONVOLUTION }` enum style.

use thiserror::Error;

pub mod model;
pub mod text;

pub use model::{
    net_to_text, parse_net, parse_solver, InputDecl, LrPolicy, NetSpec, Regularization,
    SolverSpec, SolverType,
};
pub use text::{parse_text, Message, Value};

/// Lexical or structural error with source position.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("line {line}:{col}: {message}")]
pub struct ParseError {
    pub message: String,
    pub line: u32,
    pub col: u32,
}

/// Learning rate for an iteration under the solver's schedule. Policy-required
/// fields are validated by `parse_solver`, so evaluation cannot fail.
pub fn learning_rate(spec: &SolverSpec, iter: u64) -> f64 {
    let base = spec.base_lr;
    match spec.lr_policy {
        LrPolicy::Fixed => base,
        LrPolicy::Step => base * spec.gamma.powi((iter / spec.stepsize.max(1)) as i32),
        LrPolicy::Exp => base * spec.gamma.powf(iter as f64),
        LrPolicy::Inv => base * (1.0 + spec.gamma * iter as f64).powf(-spec.power),
        LrPolicy::Multistep => {
            let passed = spec.stepvalues.iter().filter(|&&v| v <= iter).count() as i32;
            base * spec.gamma.powi(passed)
        }
        LrPolicy::Poly => {
            let frac = 1.0 - iter as f64 / spec.max_iter.max(1) as f64;
            base * frac.powf(spec.power)
        }
        LrPolicy::Sigmoid => {
            base * (1.0 / (1.0 + (-spec.gamma * (iter as f64 - spec.stepsize as f64)).exp()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solver(text: &str) -> SolverSpec {
        parse_solver(text).unwrap()
    }

    #[test]
    fn lr_fixed() {
        let s = solver("net: \"n\" base_lr: 0.01 lr_policy: \"fixed\"");
        assert_eq!(learning_rate(&s, 0), 0.01);
        assert_eq!(learning_rate(&s, 12345), 0.01);
    }

    #[test]
    fn lr_step() {
        let s = solver("net: \"n\" base_lr: 0.01 lr_policy: \"step\" gamma: 0.1 stepsize: 100");
        let lr = learning_rate(&s, 250);
        assert!((lr - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn lr_inv_at_zero_is_base() {
        let s = solver("net: \"n\" base_lr: 0.01 lr_policy: \"inv\" gamma: 0.0001 power: 0.75");
        assert_eq!(learning_rate(&s, 0), 0.01);
    }

    #[test]
    fn lr_non_increasing_for_decaying_policies() {
        let texts = [
            "net: \"n\" base_lr: 0.1 lr_policy: \"step\" gamma: 0.5 stepsize: 10",
            "net: \"n\" base_lr: 0.1 lr_policy: \"exp\" gamma: 0.99",
            "net: \"n\" base_lr: 0.1 lr_policy: \"inv\" gamma: 0.01 power: 0.5",
            "net: \"n\" base_lr: 0.1 lr_policy: \"multistep\" gamma: 0.5 stepvalue: 5 stepvalue: 20",
            "net: \"n\" base_lr: 0.1 lr_policy: \"poly\" power: 1.5 max_iter: 100",
        ];
        for text in texts {
            let s = solver(text);
            let mut prev = f64::INFINITY;
            for iter in 0..100 {
                let lr = learning_rate(&s, iter);
                assert!(lr <= prev + 1e-15, "{:?} increased at {}", s.lr_policy, iter);
                prev = lr;
            }
        }
    }
}
