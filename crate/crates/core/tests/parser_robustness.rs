//! Byte-level fuzzing of the description parsers: every mutated input must
//! yield either a description or a positioned error, never a crash.

mod common;

use hetgrad_core::netdef::parse_net;

#[test]
fn ten_thousand_mutated_inputs_never_crash() {
    let (ok, err) = common::fuzz::parse_fuzz(10_000);
    assert!(ok > 0, "no mutated input parsed");
    assert!(err > 0, "no mutated input was rejected");
}

#[test]
fn errors_carry_positions() {
    let cases = [
        ("layer { name: \"x\"", "unbalanced"),
        ("layer { name: \"x\" type: 3 top: \"x\" }", "token"),
        ("x: \u{1}", "unexpected"),
    ];
    for (text, needle) in cases {
        let err = parse_net(text).unwrap_err();
        assert!(err.line >= 1 && err.col >= 1);
        assert!(err.message.contains(needle), "{} !~ {}", err.message, needle);
        // The formatted message leads with the position.
        assert!(err.to_string().starts_with("line "));
    }
}

#[test]
fn canonical_files_round_trip() {
    use hetgrad_core::netdef::net_to_text;
    for rel in [
        "lenet/lenet_train_test.prototxt",
        "lenet/lenet.prototxt",
        "alexnet/train_val.prototxt",
        "alexnet/deploy.prototxt",
        "squeezenet_v1.0/train_val.prototxt",
        "squeezenet_v1.0/deploy.prototxt",
        "googlenet/train_val.prototxt",
        "googlenet/deploy.prototxt",
    ] {
        let first = parse_net(&common::read_model(rel)).unwrap();
        let serialized = net_to_text(&first);
        let second = parse_net(&serialized).unwrap_or_else(|e| panic!("{}: {}", rel, e));
        assert_eq!(first.name, second.name, "{}", rel);
        assert_eq!(first.inputs, second.inputs, "{}", rel);
        assert_eq!(first.layers, second.layers, "{}", rel);
        assert_eq!(serialized, net_to_text(&second), "{}: canonical form must be stable", rel);
    }
}
