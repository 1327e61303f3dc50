//! Shared byte-fuzz harness for the description parsers.

#![allow(dead_code)]

use hetgrad_core::netdef::{parse_net, parse_solver};
use hetgrad_core::rng::Xoshiro256;

use super::read_model;

pub fn mutate(rng: &mut Xoshiro256, base: &[u8]) -> Vec<u8> {
    let mut bytes = base.to_vec();
    let edits = 1 + rng.below(8);
    for _ in 0..edits {
        if bytes.is_empty() {
            bytes.push(rng.next_u64() as u8);
            continue;
        }
        match rng.below(5) {
            0 => {
                // Flip a byte.
                let i = rng.below(bytes.len());
                bytes[i] = rng.next_u64() as u8;
            }
            1 => {
                // Insert a random byte (brace-heavy to stress nesting).
                let i = rng.below(bytes.len() + 1);
                let choices = b"{}\":0a \x00\xff";
                bytes.insert(i, choices[rng.below(choices.len())]);
            }
            2 => {
                // Delete a span.
                let start = rng.below(bytes.len());
                let len = (1 + rng.below(16)).min(bytes.len() - start);
                bytes.drain(start..start + len);
            }
            3 => {
                // Truncate.
                let keep = rng.below(bytes.len() + 1);
                bytes.truncate(keep);
            }
            _ => {
                // Duplicate a span somewhere else.
                let start = rng.below(bytes.len());
                let len = (1 + rng.below(32)).min(bytes.len() - start);
                let span: Vec<u8> = bytes[start..start + len].to_vec();
                let at = rng.below(bytes.len() + 1);
                for (k, b) in span.into_iter().enumerate() {
                    bytes.insert(at + k, b);
                }
            }
        }
    }
    bytes
}

/// Mutates the bundled descriptions `cases` times; panics on any parser
/// crash, returns (parsed-ok, rejected) tallies.
pub fn parse_fuzz(cases: usize) -> (u32, u32) {
    let corpus: Vec<Vec<u8>> = [
        "lenet/lenet_train_test.prototxt",
        "lenet/lenet.prototxt",
        "alexnet/deploy.prototxt",
        "squeezenet_v1.0/train_val.prototxt",
        "googlenet/deploy.prototxt",
        "lenet/lenet_solver.prototxt",
    ]
    .iter()
    .map(|rel| read_model(rel).into_bytes())
    .collect();

    let mut rng = Xoshiro256::seed_from(0xF0_55);
    let mut ok = 0u32;
    let mut err = 0u32;
    for case in 0..cases {
        let base = &corpus[case % corpus.len()];
        let mutated = mutate(&mut rng, base);
        let text = String::from_utf8_lossy(&mutated);
        // Alternate between the two parsers; both must stay panic-free.
        let outcome_ok = if case % 2 == 0 {
            parse_net(&text).is_ok()
        } else {
            parse_solver(&text).is_ok()
        };
        if outcome_ok {
            ok += 1;
        } else {
            err += 1;
        }
    }
    (ok, err)
}
