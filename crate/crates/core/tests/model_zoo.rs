//! The bundled network descriptions parse and build with correct blob shapes.

use hetgrad_core::net::{BuildOptions, Net};
use hetgrad_core::netdef::parse_net;
use hetgrad_core::{Phase, Runtime};

fn models_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn read(rel: &str) -> String {
    let path = models_dir().join(rel);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("read {}: {}", path.display(), e))
}

fn build(rel: &str, phase: Phase, batch: Option<usize>) -> (Runtime<f32>, Net<f32>) {
    let spec = parse_net(&read(rel)).unwrap_or_else(|e| panic!("{}: {}", rel, e));
    assert!(spec.warnings.is_empty(), "{}: {:?}", rel, spec.warnings);
    let mut rt = Runtime::new();
    rt.register_host();
    let opts = BuildOptions { batch_override: batch, ..Default::default() };
    let net = Net::build(&mut rt, &spec, phase, &opts)
        .unwrap_or_else(|e| panic!("{} build: {}", rel, e));
    (rt, net)
}

fn shape_of(net: &Net<f32>, blob: &str) -> Vec<usize> {
    net.blob_shape(blob)
        .unwrap_or_else(|| panic!("missing blob {}", blob))
        .dims()
        .to_vec()
}

#[test]
fn lenet_train_val_shapes() {
    let spec = parse_net(&read("lenet/lenet_train_test.prototxt")).unwrap();
    assert_eq!(spec.layers.len(), 11);
    let (_rt, net) = build("lenet/lenet_train_test.prototxt", Phase::Train, None);
    assert_eq!(net.layer_count(), 9);
    assert_eq!(shape_of(&net, "conv1"), [64, 20, 24, 24]);
    assert_eq!(shape_of(&net, "pool1"), [64, 20, 12, 12]);
    assert_eq!(shape_of(&net, "conv2"), [64, 50, 8, 8]);
    assert_eq!(shape_of(&net, "pool2"), [64, 50, 4, 4]);
    assert_eq!(shape_of(&net, "ip1"), [64, 500]);
    assert_eq!(shape_of(&net, "ip2"), [64, 10]);
}

#[test]
fn lenet_deploy_builds() {
    let (_rt, net) = build("lenet/lenet.prototxt", Phase::Test, None);
    assert_eq!(shape_of(&net, "prob"), [64, 10]);
}

#[test]
fn alexnet_shapes() {
    let (_rt, net) = build("alexnet/train_val.prototxt", Phase::Train, Some(2));
    assert_eq!(shape_of(&net, "conv1"), [2, 96, 55, 55]);
    assert_eq!(shape_of(&net, "pool1"), [2, 96, 27, 27]);
    assert_eq!(shape_of(&net, "conv2"), [2, 256, 27, 27]);
    assert_eq!(shape_of(&net, "pool2"), [2, 256, 13, 13]);
    assert_eq!(shape_of(&net, "conv5"), [2, 256, 13, 13]);
    assert_eq!(shape_of(&net, "pool5"), [2, 256, 6, 6]);
    assert_eq!(shape_of(&net, "fc6"), [2, 4096]);
    assert_eq!(shape_of(&net, "fc8"), [2, 1000]);
    let (_rt, net) = build("alexnet/deploy.prototxt", Phase::Test, None);
    assert_eq!(shape_of(&net, "prob"), [10, 1000]);
}

#[test]
fn squeezenet_shapes() {
    let (_rt, net) = build("squeezenet_v1.0/train_val.prototxt", Phase::Train, Some(1));
    assert_eq!(shape_of(&net, "conv1"), [1, 96, 111, 111]);
    assert_eq!(shape_of(&net, "pool1"), [1, 96, 55, 55]);
    assert_eq!(shape_of(&net, "fire2/concat"), [1, 128, 55, 55]);
    assert_eq!(shape_of(&net, "pool4"), [1, 256, 27, 27]);
    assert_eq!(shape_of(&net, "pool8"), [1, 512, 13, 13]);
    assert_eq!(shape_of(&net, "fire9/concat"), [1, 512, 13, 13]);
    assert_eq!(shape_of(&net, "conv10"), [1, 1000, 13, 13]);
    assert_eq!(shape_of(&net, "pool10"), [1, 1000, 1, 1]);
    let (_rt, net) = build("squeezenet_v1.0/deploy.prototxt", Phase::Test, None);
    assert_eq!(shape_of(&net, "prob"), [10, 1000, 1, 1]);
}

#[test]
fn googlenet_shapes_and_heads() {
    let (_rt, net) = build("googlenet/train_val.prototxt", Phase::Train, Some(1));
    assert_eq!(shape_of(&net, "conv1/7x7_s2"), [1, 64, 112, 112]);
    assert_eq!(shape_of(&net, "pool1/3x3_s2"), [1, 64, 56, 56]);
    assert_eq!(shape_of(&net, "conv2/3x3"), [1, 192, 56, 56]);
    assert_eq!(shape_of(&net, "pool2/3x3_s2"), [1, 192, 28, 28]);
    assert_eq!(shape_of(&net, "inception_3a/output"), [1, 256, 28, 28]);
    assert_eq!(shape_of(&net, "inception_3b/output"), [1, 480, 28, 28]);
    assert_eq!(shape_of(&net, "pool3/3x3_s2"), [1, 480, 14, 14]);
    assert_eq!(shape_of(&net, "inception_4a/output"), [1, 512, 14, 14]);
    assert_eq!(shape_of(&net, "loss1/ave_pool"), [1, 512, 4, 4]);
    assert_eq!(shape_of(&net, "loss1/fc"), [1, 1024]);
    assert_eq!(shape_of(&net, "inception_4e/output"), [1, 832, 14, 14]);
    assert_eq!(shape_of(&net, "pool4/3x3_s2"), [1, 832, 7, 7]);
    assert_eq!(shape_of(&net, "inception_5b/output"), [1, 1024, 7, 7]);
    assert_eq!(shape_of(&net, "pool5/7x7_s1"), [1, 1024, 1, 1]);
    // Three training loss heads with the canonical weights.
    let mut weights: Vec<f64> = net.loss_layer_indices().iter().map(|&(_, w)| w).collect();
    weights.sort_by(f64::total_cmp);
    assert_eq!(weights, [0.3, 0.3, 1.0]);

    // The deploy variant ends in a single softmax, no loss heads.
    let (_rt, net) = build("googlenet/deploy.prototxt", Phase::Test, None);
    assert_eq!(shape_of(&net, "prob"), [10, 1000]);
    assert!(net.loss_layer_indices().is_empty());
}

#[test]
fn googlenet_test_phase_builds_with_shared_label() {
    // TEST phase keeps the three loss heads and adds six accuracy layers;
    // the label fans out nine ways behind one auto-inserted split.
    let (_rt, net) = build("googlenet/train_val.prototxt", Phase::Test, Some(1));
    let names = net.layer_names();
    let label_split = names.iter().find(|n| n.contains("label") && n.ends_with("_split"));
    assert!(label_split.is_some(), "expected an auto-inserted label split");
    assert_eq!(names.iter().filter(|n| n.contains("top-")).count(), 6);
    assert_eq!(net.loss_layer_indices().len(), 3);
}

#[test]
fn build_order_is_deterministic() {
    let (_rt, a) = build("googlenet/train_val.prototxt", Phase::Train, Some(1));
    let (_rt, b) = build("googlenet/train_val.prototxt", Phase::Train, Some(1));
    assert_eq!(a.layer_names(), b.layer_names());
}
