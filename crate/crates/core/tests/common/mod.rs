//! Shared test machinery: independent brute-force oracles, a central-difference
//! gradient checker driving real layers, and model-file helpers.

#![allow(dead_code)]

pub mod equiv;
pub mod fuzz;
pub mod gradcases;
pub mod shadow;
pub mod solver_ref;

use std::cell::RefCell;
use std::path::PathBuf;

use hetgrad_core::layers::{build_layer, LayerCtx, LayerSpec, Phase};
use hetgrad_core::memory::{Blob, TensorShape};
use hetgrad_core::rng::Xoshiro256;
use hetgrad_core::scalar::Scalar;
use hetgrad_core::Runtime;

pub fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

pub fn read_model(rel: &str) -> String {
    let path = models_dir().join(rel);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("read {}: {}", path.display(), e))
}

// ---------- independent oracles ----------

/// Plain triple-loop matrix product oracle (no transposes, alpha=1, beta=0).
pub fn oracle_matmul(m: usize, n: usize, k: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// Transpose helper so the matmul oracle covers all flag combinations.
pub fn oracle_transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Sliding-window im2col oracle, written against the definition: walk output
/// positions and copy the window.
#[allow(clippy::too_many_arguments)]
pub fn oracle_im2col(
    input: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    sh: usize,
    sw: usize,
) -> Vec<f64> {
    let oh = (height + 2 * ph - kh) / sh + 1;
    let ow = (width + 2 * pw - kw) / sw + 1;
    let rows = channels * kh * kw;
    let cols = oh * ow;
    let mut col = vec![0.0; rows * cols];
    for spatial in 0..cols {
        let (p, q) = (spatial / ow, spatial % ow);
        for c in 0..channels {
            for i in 0..kh {
                for j in 0..kw {
                    let y = (p * sh + i) as isize - ph as isize;
                    let x = (q * sw + j) as isize - pw as isize;
                    let row = (c * kh + i) * kw + j;
                    col[row * cols + spatial] =
                        if y >= 0 && (y as usize) < height && x >= 0 && (x as usize) < width {
                            input[(c * height + y as usize) * width + x as usize]
                        } else {
                            0.0
                        };
                }
            }
        }
    }
    col
}

/// Direct 4-loop convolution oracle over one item (all groups).
#[allow(clippy::too_many_arguments)]
pub fn oracle_conv_item(
    input: &[f64],
    weight: &[f64],
    in_c: usize,
    height: usize,
    width: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    sh: usize,
    sw: usize,
    group: usize,
) -> Vec<f64> {
    let oh = (height + 2 * ph - kh) / sh + 1;
    let ow = (width + 2 * pw - kw) / sw + 1;
    let icg = in_c / group;
    let ocg = out_c / group;
    let mut out = vec![0.0; out_c * oh * ow];
    for oc in 0..out_c {
        let g = oc / ocg;
        for p in 0..oh {
            for q in 0..ow {
                let mut acc = 0.0;
                for ic in 0..icg {
                    let ic_global = g * icg + ic;
                    for i in 0..kh {
                        for j in 0..kw {
                            let y = (p * sh + i) as isize - ph as isize;
                            let x = (q * sw + j) as isize - pw as isize;
                            if y >= 0 && (y as usize) < height && x >= 0 && (x as usize) < width {
                                let iv = input[(ic_global * height + y as usize) * width + x as usize];
                                let wv = weight[((oc * icg + ic) * kh + i) * kw + j];
                                acc += iv * wv;
                            }
                        }
                    }
                }
                out[(oc * oh + p) * ow + q] = acc;
            }
        }
    }
    out
}

/// Exhaustive-window pooling oracle (returns output and, for max, argmaxes).
#[allow(clippy::too_many_arguments)]
pub fn oracle_pool(
    input: &[f64],
    maxpool: bool,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    sh: usize,
    sw: usize,
    oh: usize,
    ow: usize,
) -> (Vec<f64>, Vec<usize>) {
    let mut out = vec![0.0; oh * ow];
    let mut arg = vec![0usize; oh * ow];
    for p in 0..oh {
        for q in 0..ow {
            let hs = (p * sh) as isize - ph as isize;
            let ws = (q * sw) as isize - pw as isize;
            let he = (hs + kh as isize).min(height as isize);
            let we = (ws + kw as isize).min(width as isize);
            let hs = hs.max(0) as usize;
            let ws = ws.max(0) as usize;
            let (he, we) = (he as usize, we as usize);
            if maxpool {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for y in hs..he {
                    for x in ws..we {
                        let v = input[y * width + x];
                        if v > best {
                            best = v;
                            best_idx = y * width + x;
                        }
                    }
                }
                out[p * ow + q] = best;
                arg[p * ow + q] = best_idx;
            } else {
                let mut acc = 0.0;
                for y in hs..he {
                    for x in ws..we {
                        acc += input[y * width + x];
                    }
                }
                out[p * ow + q] = acc / ((he - hs) * (we - ws)) as f64;
            }
        }
    }
    (out, arg)
}

// ---------- gradient checking ----------

pub struct GradCheckCfg {
    pub step: f64,
    pub tol: f64,
    pub max_coords: usize,
}

impl Default for GradCheckCfg {
    fn default() -> Self {
        GradCheckCfg { step: 1e-6, tol: 1e-4, max_coords: 24 }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Drives one layer in fp64 and compares its analytic gradients (inputs and
/// parameters) against central differences of the scalar readout
/// L = sum_t r_t . top_t (or the loss itself for loss layers).
pub fn check_layer_gradients(
    spec: &LayerSpec,
    bottom_dims: &[&[usize]],
    label_classes: Option<usize>,
    seed: u64,
    cfg: &GradCheckCfg,
) {
    let mut rt = Runtime::<f64>::new();
    rt.register_host();
    let mut layer = build_layer::<f64>(spec).expect("layer builds");
    let ctx = LayerCtx { phase: Phase::Train, iter: 0, master_seed: seed, layer_index: 0 };
    let mut rng = Xoshiro256::seed_from(seed ^ 0x9e37);

    let shapes: Vec<TensorShape> =
        bottom_dims.iter().map(|d| TensorShape::new(d).unwrap()).collect();
    let bottoms: Vec<RefCell<Blob<f64>>> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| RefCell::new(Blob::new(format!("b{}", i), s.clone())))
        .collect();
    // Label bottoms (last bottom of loss-style layers) hold class indices and
    // are not differentiated.
    let label_slot = label_classes.map(|_| bottoms.len() - 1);
    for (bi, cell) in bottoms.iter().enumerate() {
        let mut blob = cell.borrow_mut();
        let view = blob.data.write_host(&mut rt).unwrap();
        if Some(bi) == label_slot {
            for v in view.iter_mut() {
                *v = rng.below(label_classes.unwrap()) as f64;
            }
        } else {
            for v in view.iter_mut() {
                // Stay away from the relu/max kinks.
                let mut x = rng.gaussian(0.0, 1.0);
                if x.abs() < 0.05 {
                    x += 0.1_f64.copysign(x + 1e-12);
                }
                *v = x;
            }
        }
    }

    let top_shapes = layer.setup(&mut rt, &shapes, &ctx).expect("setup");
    let tops: Vec<RefCell<Blob<f64>>> = top_shapes
        .iter()
        .enumerate()
        .map(|(i, s)| RefCell::new(Blob::new(format!("t{}", i), s.clone())))
        .collect();
    let readout: Vec<Vec<f64>> = top_shapes
        .iter()
        .map(|s| (0..s.count()).map(|_| rng.uniform(-1.0, 1.0)).collect())
        .collect();
    let is_loss = matches!(spec.params, hetgrad_core::layers::LayerParams::SoftmaxWithLoss);
    let loss_weight = spec.loss_weight(0);

    let bottom_refs: Vec<&RefCell<Blob<f64>>> = bottoms.iter().collect();
    let top_refs: Vec<&RefCell<Blob<f64>>> = tops.iter().collect();

    macro_rules! eval {
        () => {{
            let loss = layer.forward(&mut rt, &bottom_refs, &top_refs, &ctx).expect("forward");
            if is_loss {
                loss * loss_weight
            } else {
                let mut acc = 0.0;
                for (t, r) in tops.iter().zip(&readout) {
                    let view = t.borrow_mut().data.read_host(&mut rt).unwrap();
                    for (v, w) in view.iter().zip(r) {
                        acc += v * w;
                    }
                }
                acc
            }
        }};
    }

    // Analytic pass.
    let _ = eval!();
    for (t, r) in tops.iter().zip(&readout) {
        t.borrow_mut().diff.write_host(&mut rt).unwrap().copy_from_slice(r);
    }
    for blob in layer.params() {
        blob.diff.write_host(&mut rt).unwrap().fill(0.0);
    }
    let mut pd = vec![true; bottoms.len()];
    if let Some(slot) = label_slot {
        pd[slot] = false;
    }
    layer.backward(&mut rt, &top_refs, &pd, &bottom_refs, &ctx).expect("backward");

    let analytic_bottom: Vec<Vec<f64>> = bottoms
        .iter()
        .map(|b| b.borrow_mut().diff.read_host(&mut rt).unwrap().to_vec())
        .collect();
    let analytic_params: Vec<Vec<f64>> = layer
        .params()
        .into_iter()
        .map(|b| b.diff.read_host(&mut rt).unwrap().to_vec())
        .collect();

    let mut coords_of = |count: usize| -> Vec<usize> {
        if count <= cfg.max_coords {
            (0..count).collect()
        } else {
            (0..cfg.max_coords).map(|_| rng.below(count)).collect()
        }
    };

    // Finite differences over bottoms.
    for (bi, cell) in bottoms.iter().enumerate() {
        if Some(bi) == label_slot {
            continue;
        }
        let count = cell.borrow().count();
        for idx in coords_of(count) {
            let original = cell.borrow_mut().data.read_host(&mut rt).unwrap()[idx];
            cell.borrow_mut().data.write_host(&mut rt).unwrap()[idx] = original + cfg.step;
            let plus = eval!();
            cell.borrow_mut().data.write_host(&mut rt).unwrap()[idx] = original - cfg.step;
            let minus = eval!();
            cell.borrow_mut().data.write_host(&mut rt).unwrap()[idx] = original;
            let fd = (plus - minus) / (2.0 * cfg.step);
            let an = analytic_bottom[bi][idx];
            assert!(
                rel_err(fd, an) < cfg.tol,
                "{}: bottom {} coord {}: fd {} vs analytic {}",
                spec.name,
                bi,
                idx,
                fd,
                an
            );
        }
    }

    // Finite differences over parameters.
    let param_count = analytic_params.len();
    for pi in 0..param_count {
        let count = analytic_params[pi].len();
        for idx in coords_of(count) {
            let original = {
                let mut params = layer.params();
                params[pi].data.read_host(&mut rt).unwrap()[idx]
            };
            layer.params()[pi].data.write_host(&mut rt).unwrap()[idx] = original + cfg.step;
            let plus = eval!();
            layer.params()[pi].data.write_host(&mut rt).unwrap()[idx] = original - cfg.step;
            let minus = eval!();
            layer.params()[pi].data.write_host(&mut rt).unwrap()[idx] = original;
            let fd = (plus - minus) / (2.0 * cfg.step);
            let an = analytic_params[pi][idx];
            assert!(
                rel_err(fd, an) < cfg.tol,
                "{}: param {} coord {}: fd {} vs analytic {}",
                spec.name,
                pi,
                idx,
                fd,
                an
            );
        }
    }
}

/// Fills a slice with values bounded away from zero (relu-safe).
pub fn fill_safe<S: Scalar>(rng: &mut Xoshiro256, view: &mut [S]) {
    for v in view.iter_mut() {
        let mut x = rng.gaussian(0.0, 1.0);
        if x.abs() < 0.05 {
            x += 0.1_f64.copysign(x + 1e-12);
        }
        *v = S::from_f64(x);
    }
}
