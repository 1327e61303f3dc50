//! Randomized per-layer gradient-check case suites, shared between the
//! focused tests and the acceptance gate.

#![allow(dead_code)]

use hetgrad_core::kernels::norm::LrnParams;
use hetgrad_core::layers::{
    ConvParams, Filler, IpParams, LayerParams, LayerSpec, PoolMethod, PoolParams,
};
use hetgrad_core::rng::Xoshiro256;

use super::{check_layer_gradients, GradCheckCfg};

fn spec(name: &str, params: LayerParams, bottoms: &[&str], tops: &[&str]) -> LayerSpec {
    LayerSpec::new(name, params).with_bottoms(bottoms).with_tops(tops)
}

fn conv_params(rng: &mut Xoshiro256) -> (ConvParams, Vec<usize>) {
    let group = if rng.below(3) == 0 { 2 } else { 1 };
    let icg = 1 + rng.below(2);
    let in_c = group * icg;
    let k = 1 + rng.below(3);
    let pad = rng.below(2);
    let stride = 1 + rng.below(2);
    let extent = k + stride * (1 + rng.below(3)).max(1);
    let (h, w) = (extent, extent + rng.below(2));
    let cp = ConvParams {
        num_output: group * (1 + rng.below(3)),
        kernel_h: k,
        kernel_w: k,
        pad_h: pad,
        pad_w: pad,
        stride_h: stride,
        stride_w: stride,
        group,
        bias_term: rng.below(4) != 0,
        weight_filler: Filler::Gaussian { mean: 0.0, std: 1.0 },
        bias_filler: Filler::Gaussian { mean: 0.0, std: 0.5 },
    };
    let n = 1 + rng.below(2);
    (cp, vec![n, in_c, h, w])
}

pub fn convolution_gradients() {
    let mut rng = Xoshiro256::seed_from(11);
    for case in 0..20 {
        let (cp, dims) = conv_params(&mut rng);
        let s = spec("conv", LayerParams::Convolution(cp), &["x"], &["y"]);
        check_layer_gradients(&s, &[&dims], None, 100 + case, &GradCheckCfg::default());
    }
}

pub fn pooling_gradients() {
    let mut rng = Xoshiro256::seed_from(12);
    for case in 0..20 {
        let method = if case % 2 == 0 { PoolMethod::Max } else { PoolMethod::Ave };
        let k = 2 + rng.below(2);
        let stride = 1 + rng.below(2);
        let extent = k + stride * (1 + rng.below(3));
        let pp = PoolParams {
            method,
            kernel_h: k,
            kernel_w: k,
            pad_h: if k > 1 { rng.below(2) } else { 0 },
            pad_w: 0,
            stride_h: stride,
            stride_w: stride,
            global: false,
        };
        let dims = vec![1 + rng.below(2), 1 + rng.below(3), extent, extent];
        let s = spec("pool", LayerParams::Pooling(pp), &["x"], &["y"]);
        check_layer_gradients(&s, &[&dims], None, 200 + case, &GradCheckCfg::default());
    }
}

pub fn inner_product_gradients() {
    let mut rng = Xoshiro256::seed_from(13);
    for case in 0..20 {
        let ip = IpParams {
            num_output: 1 + rng.below(6),
            bias_term: rng.below(4) != 0,
            weight_filler: Filler::Gaussian { mean: 0.0, std: 1.0 },
            bias_filler: Filler::Gaussian { mean: 0.0, std: 0.5 },
        };
        let dims = vec![1 + rng.below(3), 1 + rng.below(8)];
        let s = spec("ip", LayerParams::InnerProduct(ip), &["x"], &["y"]);
        check_layer_gradients(&s, &[&dims], None, 300 + case, &GradCheckCfg::default());
    }
}

pub fn relu_gradients() {
    let mut rng = Xoshiro256::seed_from(14);
    for case in 0..20 {
        let slope = if case % 2 == 0 { 0.0 } else { 0.1 };
        let dims = vec![1 + rng.below(3), 2 + rng.below(6)];
        let s = spec("relu", LayerParams::ReLU { negative_slope: slope }, &["x"], &["y"]);
        check_layer_gradients(&s, &[&dims], None, 400 + case, &GradCheckCfg::default());
    }
}

pub fn lrn_gradients() {
    let mut rng = Xoshiro256::seed_from(15);
    for case in 0..20 {
        let p = LrnParams {
            local_size: [1, 3, 5][rng.below(3)],
            alpha: 10f64.powf(rng.uniform(-4.0, -0.5)),
            beta: rng.uniform(0.4, 1.1),
            k: rng.uniform(0.5, 2.0),
        };
        let dims = vec![1 + rng.below(2), 2 + rng.below(6), 1 + rng.below(3), 1 + rng.below(3)];
        let s = spec("lrn", LayerParams::Lrn(p), &["x"], &["y"]);
        check_layer_gradients(&s, &[&dims], None, 500 + case, &GradCheckCfg::default());
    }
}

pub fn dropout_gradients() {
    let mut rng = Xoshiro256::seed_from(16);
    for case in 0..20 {
        let ratio = [0.0, 0.25, 0.5, 0.7][rng.below(4)];
        let dims = vec![1 + rng.below(3), 3 + rng.below(6)];
        let s = spec("drop", LayerParams::Dropout { ratio }, &["x"], &["y"]);
        check_layer_gradients(&s, &[&dims], None, 600 + case, &GradCheckCfg::default());
    }
}

pub fn concat_gradients() {
    let mut rng = Xoshiro256::seed_from(17);
    for case in 0..20 {
        let n = 1 + rng.below(2);
        let (h, w) = (1 + rng.below(3), 1 + rng.below(3));
        let dims_a = vec![n, 1 + rng.below(3), h, w];
        let dims_b = vec![n, 1 + rng.below(3), h, w];
        let s = spec("cat", LayerParams::Concat { axis: 1 }, &["a", "b"], &["y"]);
        check_layer_gradients(&s, &[&dims_a, &dims_b], None, 700 + case, &GradCheckCfg::default());
    }
}

pub fn split_gradients() {
    let mut rng = Xoshiro256::seed_from(18);
    for case in 0..20 {
        let dims = vec![1 + rng.below(3), 2 + rng.below(5)];
        let fanout = 2 + rng.below(3);
        let tops: Vec<String> = (0..fanout).map(|i| format!("t{}", i)).collect();
        let top_refs: Vec<&str> = tops.iter().map(String::as_str).collect();
        let s = spec("split", LayerParams::Split, &["x"], &top_refs);
        check_layer_gradients(&s, &[&dims], None, 800 + case, &GradCheckCfg::default());
    }
}

pub fn softmax_gradients() {
    let mut rng = Xoshiro256::seed_from(19);
    for case in 0..20 {
        let dims = vec![1 + rng.below(3), 2 + rng.below(5)];
        let s = spec("softmax", LayerParams::Softmax, &["x"], &["y"]);
        check_layer_gradients(&s, &[&dims], None, 900 + case, &GradCheckCfg::default());
    }
}

pub fn softmax_loss_gradients() {
    let mut rng = Xoshiro256::seed_from(20);
    for case in 0..20 {
        let n = 1 + rng.below(4);
        let classes = 2 + rng.below(6);
        let dims = vec![n, classes];
        let label_dims = vec![n];
        let mut s = spec("loss", LayerParams::SoftmaxWithLoss, &["x", "label"], &["loss"]);
        if case % 3 == 0 {
            s.loss_weights = vec![0.3];
        }
        check_layer_gradients(
            &s,
            &[&dims, &label_dims],
            Some(classes),
            1000 + case,
            &GradCheckCfg::default(),
        );
    }
}

/// Every layer type, twenty randomized shapes each.
pub fn run_all() {
    convolution_gradients();
    pooling_gradients();
    inner_product_gradients();
    relu_gradients();
    lrn_gradients();
    dropout_gradients();
    concat_gradients();
    split_gradients();
    softmax_gradients();
    softmax_loss_gradients();
}
