//! Shared backend-equivalence harness: declarative launch cases and a
//! runner comparing output bits between devices.

#![allow(dead_code)]

use hetgrad_core::device::{Arg, BufId, BufView, DeviceId, Runtime};
use hetgrad_core::rng::Xoshiro256;

/// Declarative launch case: buffer sizes by role order plus scalars.
pub struct Case {
    pub kernel: &'static str,
    pub ins: Vec<usize>,
    pub outs: Vec<usize>,
    pub inouts: Vec<usize>,
    pub scalars: Vec<f64>,
}

pub fn cases() -> Vec<Case> {
    let c = |kernel, ins: &[usize], outs: &[usize], inouts: &[usize], scalars: &[f64]| Case {
        kernel,
        ins: ins.to_vec(),
        outs: outs.to_vec(),
        inouts: inouts.to_vec(),
        scalars: scalars.to_vec(),
    };
    vec![
        c("Gemm", &[12, 20], &[], &[15], &[0.0, 0.0, 3.0, 5.0, 4.0, 1.25, 0.5]),
        c("Gemv", &[12, 4], &[], &[3], &[0.0, 3.0, 4.0, 1.5, 0.25]),
        c("Apy", &[9], &[], &[9], &[0.75]),
        c("Scale", &[], &[], &[11], &[-1.25]),
        c("Asum", &[13], &[1], &[], &[]),
        c("Add", &[8, 8], &[8], &[], &[]),
        c("Sign", &[10], &[10], &[], &[]),
        // channels,h,w,kh,kw,ph,pw,sh,sw for a 2x5x4 input, 3x2 kernel.
        c("Im2col", &[40], &[2 * 6 * 9], &[], &[2.0, 5.0, 4.0, 3.0, 2.0, 1.0, 0.0, 2.0, 1.0]),
        c("Col2im", &[2 * 6 * 9], &[40], &[], &[2.0, 5.0, 4.0, 3.0, 2.0, 1.0, 0.0, 2.0, 1.0]),
        // n,c,h,w,kh,kw,ph,pw,sh,sw over 2x1x4x4, 2x2 stride 2.
        c("Max_pool_F", &[32], &[8, 8], &[], &[2.0, 1.0, 4.0, 4.0, 2.0, 2.0, 0.0, 0.0, 2.0, 2.0]),
        c("Ave_pool_F", &[32], &[8], &[], &[2.0, 1.0, 4.0, 4.0, 2.0, 2.0, 0.0, 0.0, 2.0, 2.0]),
        c("Ave_pool_B", &[8], &[32], &[], &[2.0, 1.0, 4.0, 4.0, 2.0, 2.0, 0.0, 0.0, 2.0, 2.0]),
        c("ReLU_F", &[16], &[16], &[], &[0.1]),
        c("ReLU_B", &[16, 16], &[16], &[], &[0.1]),
        c("LRN_Scale", &[24], &[24], &[], &[2.0, 4.0, 3.0, 3.0, 1e-4, 1.0]),
        c("LRN_Output", &[24, 24], &[24], &[], &[0.75]),
        c("Softmax", &[15], &[15], &[], &[3.0, 5.0, 1.0]),
        c("Softmax_B", &[15, 15], &[15], &[], &[3.0, 5.0, 1.0]),
        c("Dropout_F", &[12, 12], &[12], &[], &[2.0]),
        c("Dropout_B", &[12, 12], &[12], &[], &[2.0]),
        c("Concat", &[6], &[], &[12], &[2.0, 3.0, 6.0, 0.0, 2.0, 3.0]),
        c("Split", &[14], &[14], &[], &[]),
        c("Bias", &[3], &[], &[18], &[2.0, 3.0, 3.0]),
        c("Sgd_Update", &[], &[], &[10, 10], &[0.1, 0.9]),
        c("Nesterov_Update", &[], &[], &[10, 10], &[0.1, 0.9]),
        c("Adagrad_Update", &[], &[], &[10, 10], &[0.1, 1e-8]),
        c("Rmsprop_Update", &[], &[], &[10, 10], &[0.1, 0.98, 1e-8]),
        c("Adadelta_Update", &[], &[], &[10, 10, 10], &[0.1, 0.9, 1e-6]),
        c("Adam_Update", &[], &[], &[10, 10, 10], &[0.1, 0.9, 0.999, 1e-8, 3.0]),
    ]
}

/// Runs one case on a device; returns the bit patterns of every buffer that
/// the kernel may have written.
pub fn run_case(rt: &mut Runtime<f32>, d: DeviceId, case: &Case, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = Xoshiro256::seed_from(seed);
    let mut fill = |rt: &mut Runtime<f32>, id: BufId, len: usize, positive: bool| {
        let data: Vec<f32> = (0..len)
            .map(|_| {
                let v = rng.uniform(0.1, 2.0) as f32;
                if positive || rng.below(2) == 0 {
                    v
                } else {
                    -v
                }
            })
            .collect();
        rt.enqueue_write(d, BufView::new(id, 0, len), &data).unwrap();
    };

    let mut args: Vec<Arg> = Vec::new();
    let mut writable: Vec<(BufId, usize)> = Vec::new();
    // Keep positive content for kernels that exponentiate or index.
    let positive = matches!(case.kernel, "LRN_Output" | "Dropout_F" | "Dropout_B");
    let mut labels_like = false;
    for (i, &len) in case.ins.iter().enumerate() {
        let id = rt.alloc_on(d, len).unwrap();
        // Mask inputs of dropout kernels are 0/1 lattices.
        if case.kernel.starts_with("Dropout") && i == 1 {
            let data: Vec<f32> = (0..len).map(|j| (j % 2) as f32).collect();
            rt.enqueue_write(d, BufView::new(id, 0, len), &data).unwrap();
        } else if case.kernel == "Max_pool_B" && i == 1 {
            labels_like = true;
            let data: Vec<f32> = (0..len).map(|j| ((j * 3) % 16) as f32).collect();
            rt.enqueue_write(d, BufView::new(id, 0, len), &data).unwrap();
        } else {
            fill(rt, id, len, positive);
        }
        args.push(Arg::In(BufView::new(id, 0, len)));
    }
    let _ = labels_like;
    for &len in &case.outs {
        let id = rt.alloc_on(d, len).unwrap();
        writable.push((id, len));
        args.push(Arg::Out(BufView::new(id, 0, len)));
    }
    for &len in &case.inouts {
        let id = rt.alloc_on(d, len).unwrap();
        fill(rt, id, len, positive);
        writable.push((id, len));
        args.push(Arg::InOut(BufView::new(id, 0, len)));
    }
    for &s in &case.scalars {
        args.push(Arg::Scalar(s));
    }

    // Signature order is scalars interleaved per kernel; rebuild correctly.
    let ordered = order_args(rt, case.kernel, &args);
    rt.launch(d, case.kernel, &ordered).unwrap();

    writable
        .iter()
        .map(|&(id, len)| {
            let mut out = vec![0.0f32; len];
            rt.enqueue_read(d, BufView::new(id, 0, len), &mut out).unwrap();
            out.into_iter().map(f32::to_bits).collect()
        })
        .collect()
}

/// Reorders role-grouped args into the kernel's declared signature order.
pub fn order_args(rt: &Runtime<f32>, kernel: &str, grouped: &[Arg]) -> Vec<Arg> {
    let desc = rt.registry().descriptor(kernel).expect("registered");
    let mut ins: Vec<Arg> = Vec::new();
    let mut outs: Vec<Arg> = Vec::new();
    let mut inouts: Vec<Arg> = Vec::new();
    let mut scalars: Vec<Arg> = Vec::new();
    for a in grouped {
        match a {
            Arg::In(_) => ins.push(*a),
            Arg::Out(_) => outs.push(*a),
            Arg::InOut(_) => inouts.push(*a),
            Arg::Scalar(_) => scalars.push(*a),
        }
    }
    let (mut i, mut o, mut io, mut s) = (0, 0, 0, 0);
    desc.signature
        .iter()
        .map(|spec| match spec.role {
            hetgrad_core::device::ArgRole::BufferIn => {
                i += 1;
                ins[i - 1]
            }
            hetgrad_core::device::ArgRole::BufferOut => {
                o += 1;
                outs[o - 1]
            }
            hetgrad_core::device::ArgRole::BufferInOut => {
                io += 1;
                inouts[io - 1]
            }
            hetgrad_core::device::ArgRole::Scalar => {
                s += 1;
                scalars[s - 1]
            }
        })
        .collect()
}


/// Structured cases for the kernels that need label- or mask-valued inputs:
/// the fused loss pair, max-pool backward and the analytic LRN gradient.
pub fn structured_case_bits(rt0: &mut Runtime<f32>, d0: DeviceId) -> Vec<Vec<u32>> {
    let run = |rt: &mut Runtime<f32>, d: DeviceId| -> Vec<Vec<u32>> {
        let n = 3;
        let c = 4;
        let mut rng = Xoshiro256::seed_from(99);
        let x: Vec<f32> = (0..n * c).map(|_| rng.gaussian(0.0, 1.0) as f32).collect();
        let labels: Vec<f32> = (0..n).map(|_| rng.below(c) as f32).collect();

        let xb = rt.alloc_on(d, n * c).unwrap();
        rt.enqueue_write(d, BufView::new(xb, 0, n * c), &x).unwrap();
        let pb = rt.alloc_on(d, n * c).unwrap();
        rt.launch(
            d,
            "Softmax",
            &[
                Arg::In(BufView::new(xb, 0, n * c)),
                Arg::Out(BufView::new(pb, 0, n * c)),
                Arg::Scalar(n as f64),
                Arg::Scalar(c as f64),
                Arg::Scalar(1.0),
            ],
        )
        .unwrap();
        let lb = rt.alloc_on(d, n).unwrap();
        rt.enqueue_write(d, BufView::new(lb, 0, n), &labels).unwrap();
        let loss = rt.alloc_on(d, n).unwrap();
        rt.launch(
            d,
            "SoftmaxLoss_F",
            &[
                Arg::In(BufView::new(pb, 0, n * c)),
                Arg::In(BufView::new(lb, 0, n)),
                Arg::Out(BufView::new(loss, 0, n)),
                Arg::Scalar(n as f64),
                Arg::Scalar(c as f64),
                Arg::Scalar(1.0),
            ],
        )
        .unwrap();
        let diff = rt.alloc_on(d, n * c).unwrap();
        rt.launch(
            d,
            "SoftmaxLoss_B",
            &[
                Arg::In(BufView::new(pb, 0, n * c)),
                Arg::In(BufView::new(lb, 0, n)),
                Arg::Out(BufView::new(diff, 0, n * c)),
                Arg::Scalar(n as f64),
                Arg::Scalar(c as f64),
                Arg::Scalar(1.0),
            ],
        )
        .unwrap();

        // Max pooling forward + backward with a real mask.
        let input: Vec<f32> = (0..32).map(|_| rng.gaussian(0.0, 1.0) as f32).collect();
        let ib = rt.alloc_on(d, 32).unwrap();
        rt.enqueue_write(d, BufView::new(ib, 0, 32), &input).unwrap();
        let ob = rt.alloc_on(d, 8).unwrap();
        let mb = rt.alloc_on(d, 8).unwrap();
        let geom: Vec<Arg> = [2.0, 1.0, 4.0, 4.0, 2.0, 2.0, 0.0, 0.0, 2.0, 2.0]
            .iter()
            .map(|&v| Arg::Scalar(v))
            .collect();
        let mut args = vec![
            Arg::In(BufView::new(ib, 0, 32)),
            Arg::Out(BufView::new(ob, 0, 8)),
            Arg::Out(BufView::new(mb, 0, 8)),
        ];
        args.extend(&geom);
        rt.launch(d, "Max_pool_F", &args).unwrap();
        let td: Vec<f32> = (0..8).map(|_| rng.gaussian(0.0, 1.0) as f32).collect();
        let tdb = rt.alloc_on(d, 8).unwrap();
        rt.enqueue_write(d, BufView::new(tdb, 0, 8), &td).unwrap();
        let bd = rt.alloc_on(d, 32).unwrap();
        let mut args = vec![
            Arg::In(BufView::new(tdb, 0, 8)),
            Arg::In(BufView::new(mb, 0, 8)),
            Arg::Out(BufView::new(bd, 0, 32)),
        ];
        args.extend(&geom);
        rt.launch(d, "Max_pool_B", &args).unwrap();

        // LRN forward chain + analytic backward.
        let nlc = 2 * 4 * 3;
        let lx: Vec<f32> = (0..nlc).map(|_| rng.gaussian(0.0, 1.0) as f32).collect();
        let lxb = rt.alloc_on(d, nlc).unwrap();
        rt.enqueue_write(d, BufView::new(lxb, 0, nlc), &lx).unwrap();
        let scale = rt.alloc_on(d, nlc).unwrap();
        rt.launch(
            d,
            "LRN_Scale",
            &[
                Arg::In(BufView::new(lxb, 0, nlc)),
                Arg::Out(BufView::new(scale, 0, nlc)),
                Arg::Scalar(2.0),
                Arg::Scalar(4.0),
                Arg::Scalar(3.0),
                Arg::Scalar(3.0),
                Arg::Scalar(1e-4),
                Arg::Scalar(1.0),
            ],
        )
        .unwrap();
        let ly = rt.alloc_on(d, nlc).unwrap();
        rt.launch(
            d,
            "LRN_Output",
            &[
                Arg::In(BufView::new(lxb, 0, nlc)),
                Arg::In(BufView::new(scale, 0, nlc)),
                Arg::Out(BufView::new(ly, 0, nlc)),
                Arg::Scalar(0.75),
            ],
        )
        .unwrap();
        let ltd: Vec<f32> = (0..nlc).map(|_| rng.gaussian(0.0, 1.0) as f32).collect();
        let ltdb = rt.alloc_on(d, nlc).unwrap();
        rt.enqueue_write(d, BufView::new(ltdb, 0, nlc), &ltd).unwrap();
        let lbd = rt.alloc_on(d, nlc).unwrap();
        rt.launch(
            d,
            "LRN_Diff",
            &[
                Arg::In(BufView::new(lxb, 0, nlc)),
                Arg::In(BufView::new(ly, 0, nlc)),
                Arg::In(BufView::new(scale, 0, nlc)),
                Arg::In(BufView::new(ltdb, 0, nlc)),
                Arg::Out(BufView::new(lbd, 0, nlc)),
                Arg::Scalar(2.0),
                Arg::Scalar(4.0),
                Arg::Scalar(3.0),
                Arg::Scalar(3.0),
                Arg::Scalar(1e-4),
                Arg::Scalar(0.75),
            ],
        )
        .unwrap();

        [
            (pb, n * c),
            (loss, n),
            (diff, n * c),
            (ob, 8),
            (mb, 8),
            (bd, 32),
            (scale, nlc),
            (ly, nlc),
            (lbd, nlc),
        ]
        .iter()
        .map(|&(id, len)| {
            let mut out = vec![0.0f32; len];
            rt.enqueue_read(d, BufView::new(id, 0, len), &mut out).unwrap();
            out.into_iter().map(f32::to_bits).collect()
        })
        .collect()
    };

    let mut rt = Runtime::<f32>::new();
    let host = rt.register_host();
    let emu = rt.register_emulated(None).unwrap();
    assert_eq!(run(&mut rt, host), run(&mut rt, emu));

    run(rt0, d0)
}
