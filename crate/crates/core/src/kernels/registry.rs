//! Kernel registry construction: descriptors plus argument-unpacking
//! adapters bridging the launch interface to the typed math routines.

use super::{as_index, blas, conv, misc, norm, pool, updates, KernelError};
use crate::device::{ArgSpec, KernelArgs, KernelDescriptor, KernelGroup, KernelRegistry, KernelStyle};
use crate::scalar::Scalar;

fn desc(name: &str, group: KernelGroup, signature: Vec<ArgSpec>) -> KernelDescriptor {
    KernelDescriptor { name: name.to_string(), group, style: KernelStyle::NdRange, signature }
}

fn flag(v: f64) -> bool {
    v != 0.0
}

fn take2<'s, S>(outs: &'s mut [&mut [S]]) -> (&'s mut [S], &'s mut [S]) {
    let (a, b) = outs.split_at_mut(1);
    (&mut *a[0], &mut *b[0])
}

fn take3<'s, S>(outs: &'s mut [&mut [S]]) -> (&'s mut [S], &'s mut [S], &'s mut [S]) {
    let (a, rest) = outs.split_at_mut(1);
    let (b, c) = rest.split_at_mut(1);
    (&mut *a[0], &mut *b[0], &mut *c[0])
}

fn gemm_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    let s = &a.scalars;
    blas::gemm(
        flag(s[0]),
        flag(s[1]),
        as_index(s[2], "m")?,
        as_index(s[3], "n")?,
        as_index(s[4], "k")?,
        S::from_f64(s[5]),
        a.ins[0],
        a.ins[1],
        S::from_f64(s[6]),
        a.outs[0],
    )
}

fn gemv_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    let s = &a.scalars;
    blas::gemv(
        flag(s[0]),
        as_index(s[1], "m")?,
        as_index(s[2], "n")?,
        S::from_f64(s[3]),
        a.ins[0],
        a.ins[1],
        S::from_f64(s[4]),
        a.outs[0],
    )
}

fn axpy_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    blas::axpy(S::from_f64(a.scalars[0]), a.ins[0], a.outs[0])
}

fn scal_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    blas::scal(S::from_f64(a.scalars[0]), a.outs[0]);
    Ok(())
}

fn asum_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    super::check_len("asum out", a.outs[0], 1)?;
    a.outs[0][0] = blas::asum(a.ins[0]);
    Ok(())
}

fn add_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    blas::add(a.ins[0], a.ins[1], a.outs[0])
}

fn sign_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    blas::sign(a.ins[0], a.outs[0])
}

fn conv_geom(s: &[f64]) -> Result<conv::ConvGeometry, KernelError> {
    conv::ConvGeometry::new(
        as_index(s[0], "channels")?,
        as_index(s[1], "height")?,
        as_index(s[2], "width")?,
        as_index(s[3], "kernel_h")?,
        as_index(s[4], "kernel_w")?,
        as_index(s[5], "pad_h")?,
        as_index(s[6], "pad_w")?,
        as_index(s[7], "stride_h")?,
        as_index(s[8], "stride_w")?,
    )
}

fn im2col_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    let geom = conv_geom(&a.scalars)?;
    conv::im2col(a.ins[0], &geom, a.outs[0])
}

fn col2im_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    let geom = conv_geom(&a.scalars)?;
    conv::col2im(a.ins[0], &geom, a.outs[0])
}

fn pool_geom(s: &[f64]) -> Result<(usize, usize, pool::PoolGeometry), KernelError> {
    let n = as_index(s[0], "n")?;
    let c = as_index(s[1], "c")?;
    let geom = pool::PoolGeometry::new(
        as_index(s[2], "height")?,
        as_index(s[3], "width")?,
        as_index(s[4], "kernel_h")?,
        as_index(s[5], "kernel_w")?,
        as_index(s[6], "pad_h")?,
        as_index(s[7], "pad_w")?,
        as_index(s[8], "stride_h")?,
        as_index(s[9], "stride_w")?,
    )?;
    Ok((n, c, geom))
}

fn max_pool_f_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    let (n, c, geom) = pool_geom(&a.scalars)?;
    let (out, mask) = take2(&mut a.outs);
    pool::max_pool_forward(a.ins[0], n, c, &geom, out, mask)
}

fn max_pool_b_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    let (n, c, geom) = pool_geom(&a.scalars)?;
    pool::max_pool_backward(a.ins[0], a.ins[1], n, c, &geom, a.outs[0])
}

fn ave_pool_f_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    let (n, c, geom) = pool_geom(&a.scalars)?;
    pool::ave_pool_forward(a.ins[0], n, c, &geom, a.outs[0])
}

fn ave_pool_b_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    let (n, c, geom) = pool_geom(&a.scalars)?;
    pool::ave_pool_backward(a.ins[0], n, c, &geom, a.outs[0])
}

fn relu_f_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    misc::relu_forward(a.ins[0], a.scalars[0], a.outs[0])
}

fn relu_b_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    misc::relu_backward(a.ins[0], a.ins[1], a.scalars[0], a.outs[0])
}

fn lrn_params(size: f64, alpha: f64, beta: f64, k: f64) -> Result<norm::LrnParams, KernelError> {
    let p = norm::LrnParams { local_size: as_index(size, "local_size")?, alpha, beta, k };
    p.validate()?;
    Ok(p)
}

fn lrn_scale_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    let s = &a.scalars;
    let p = lrn_params(s[3], s[4], 0.75, s[5])?;
    norm::lrn_scale(
        a.ins[0],
        as_index(s[0], "n")?,
        as_index(s[1], "c")?,
        as_index(s[2], "spatial")?,
        &p,
        a.outs[0],
    )
}

fn lrn_output_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    norm::lrn_output(a.ins[0], a.ins[1], a.scalars[0], a.outs[0])
}

fn lrn_diff_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    let s = &a.scalars;
    let p = lrn_params(s[3], s[4], s[5], 1.0)?;
    norm::lrn_diff(
        a.ins[0],
        a.ins[1],
        a.ins[2],
        a.ins[3],
        as_index(s[0], "n")?,
        as_index(s[1], "c")?,
        as_index(s[2], "spatial")?,
        &p,
        a.outs[0],
    )
}

fn ncs(s: &[f64]) -> Result<(usize, usize, usize), KernelError> {
    Ok((as_index(s[0], "n")?, as_index(s[1], "c")?, as_index(s[2], "spatial")?))
}

fn softmax_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    let (n, c, sp) = ncs(&a.scalars)?;
    norm::softmax(a.ins[0], n, c, sp, a.outs[0])
}

fn softmax_b_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    let (n, c, sp) = ncs(&a.scalars)?;
    norm::softmax_backward(a.ins[0], a.ins[1], n, c, sp, a.outs[0])
}

fn softmax_loss_f_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    let (n, c, sp) = ncs(&a.scalars)?;
    norm::softmax_loss_forward(a.ins[0], a.ins[1], n, c, sp, a.outs[0])
}

fn softmax_loss_b_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    let (n, c, sp) = ncs(&a.scalars)?;
    norm::softmax_loss_backward(a.ins[0], a.ins[1], n, c, sp, a.outs[0])
}

fn dropout_f_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    misc::dropout_apply(a.ins[0], a.ins[1], a.scalars[0], a.outs[0])
}

fn dropout_b_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    misc::dropout_backward(a.ins[0], a.ins[1], a.scalars[0], a.outs[0])
}

fn concat_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    let s = &a.scalars;
    misc::block_copy(
        a.ins[0],
        as_index(s[0], "n")?,
        as_index(s[1], "src_stride")?,
        as_index(s[2], "dst_stride")?,
        as_index(s[3], "src_off")?,
        as_index(s[4], "dst_off")?,
        as_index(s[5], "block")?,
        a.outs[0],
    )
}

fn split_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    misc::copy(a.ins[0], a.outs[0])
}

fn bias_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    let s = &a.scalars;
    misc::bias_add(
        a.ins[0],
        as_index(s[0], "n")?,
        as_index(s[1], "c")?,
        as_index(s[2], "hw")?,
        a.outs[0],
    )
}

fn sgd_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    let (diff, hist) = take2(&mut a.outs);
    updates::sgd_update(diff, hist, a.scalars[0], a.scalars[1])
}

fn nesterov_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    let (diff, hist) = take2(&mut a.outs);
    updates::nesterov_update(diff, hist, a.scalars[0], a.scalars[1])
}

fn adagrad_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    let (diff, hist) = take2(&mut a.outs);
    updates::adagrad_update(diff, hist, a.scalars[0], a.scalars[1])
}

fn rmsprop_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    let (diff, hist) = take2(&mut a.outs);
    updates::rmsprop_update(diff, hist, a.scalars[0], a.scalars[1], a.scalars[2])
}

fn adadelta_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    let (diff, h1, h2) = take3(&mut a.outs);
    updates::adadelta_update(diff, h1, h2, a.scalars[0], a.scalars[1], a.scalars[2])
}

fn adam_k<S: Scalar>(mut a: KernelArgs<'_, S>) -> Result<(), KernelError> {
    let (diff, m, v) = take3(&mut a.outs);
    updates::adam_update(
        diff,
        m,
        v,
        a.scalars[0],
        a.scalars[1],
        a.scalars[2],
        a.scalars[3],
        as_index(a.scalars[4], "t")? as u64,
    )
}

/// The full registry every runtime starts from.
pub fn default_registry<S: Scalar>() -> KernelRegistry<S> {
    use ArgSpec as A;
    use KernelGroup::*;

    let mut reg = KernelRegistry::empty();

    let conv_scalars = || {
        vec![
            A::scalar("channels"),
            A::scalar("height"),
            A::scalar("width"),
            A::scalar("kernel_h"),
            A::scalar("kernel_w"),
            A::scalar("pad_h"),
            A::scalar("pad_w"),
            A::scalar("stride_h"),
            A::scalar("stride_w"),
        ]
    };
    let pool_scalars = || {
        let mut v = vec![A::scalar("n"), A::scalar("c")];
        v.extend(conv_scalars().into_iter().skip(1));
        v
    };

    // BLAS-related.
    reg.register(
        desc(
            "Gemm",
            BlasRelated,
            vec![
                A::scalar("trans_a"),
                A::scalar("trans_b"),
                A::scalar("m"),
                A::scalar("n"),
                A::scalar("k"),
                A::scalar("alpha"),
                A::input("a"),
                A::input("b"),
                A::scalar("beta"),
                A::inout("c"),
            ],
        ),
        gemm_k::<S>,
    );
    reg.register(
        desc(
            "Gemv",
            BlasRelated,
            vec![
                A::scalar("trans"),
                A::scalar("m"),
                A::scalar("n"),
                A::scalar("alpha"),
                A::input("a"),
                A::input("x"),
                A::scalar("beta"),
                A::inout("y"),
            ],
        ),
        gemv_k::<S>,
    );
    reg.register(
        desc("Apy", BlasRelated, vec![A::scalar("alpha"), A::input("x"), A::inout("y")]),
        axpy_k::<S>,
    );
    reg.register(
        desc("Scale", BlasRelated, vec![A::scalar("alpha"), A::inout("x")]),
        scal_k::<S>,
    );
    reg.register(
        desc("Asum", BlasRelated, vec![A::input("x"), A::output("sum")]),
        asum_k::<S>,
    );
    reg.register(
        desc("Add", BlasRelated, vec![A::input("x"), A::input("y"), A::output("out")]),
        add_k::<S>,
    );

    // Layer-related.
    reg.register(
        desc("Im2col", LayerRelated, {
            let mut v = vec![A::input("input"), A::output("col")];
            v.extend(conv_scalars());
            v
        }),
        im2col_k::<S>,
    );
    reg.register(
        desc("Col2im", LayerRelated, {
            let mut v = vec![A::input("col"), A::output("out")];
            v.extend(conv_scalars());
            v
        }),
        col2im_k::<S>,
    );
    reg.register(
        desc("Max_pool_F", LayerRelated, {
            let mut v = vec![A::input("input"), A::output("output"), A::output("mask")];
            v.extend(pool_scalars());
            v
        }),
        max_pool_f_k::<S>,
    );
    reg.register(
        desc("Max_pool_B", LayerRelated, {
            let mut v = vec![A::input("top_diff"), A::input("mask"), A::output("bottom_diff")];
            v.extend(pool_scalars());
            v
        }),
        max_pool_b_k::<S>,
    );
    reg.register(
        desc("Ave_pool_F", LayerRelated, {
            let mut v = vec![A::input("input"), A::output("output")];
            v.extend(pool_scalars());
            v
        }),
        ave_pool_f_k::<S>,
    );
    reg.register(
        desc("Ave_pool_B", LayerRelated, {
            let mut v = vec![A::input("top_diff"), A::output("bottom_diff")];
            v.extend(pool_scalars());
            v
        }),
        ave_pool_b_k::<S>,
    );
    reg.register(
        desc("ReLU_F", LayerRelated, vec![A::input("x"), A::output("y"), A::scalar("slope")]),
        relu_f_k::<S>,
    );
    reg.register(
        desc(
            "ReLU_B",
            LayerRelated,
            vec![A::input("x"), A::input("top_diff"), A::output("bottom_diff"), A::scalar("slope")],
        ),
        relu_b_k::<S>,
    );
    reg.register(
        desc(
            "LRN_Scale",
            LayerRelated,
            vec![
                A::input("x"),
                A::output("scale"),
                A::scalar("n"),
                A::scalar("c"),
                A::scalar("spatial"),
                A::scalar("local_size"),
                A::scalar("alpha"),
                A::scalar("k"),
            ],
        ),
        lrn_scale_k::<S>,
    );
    reg.register(
        desc(
            "LRN_Output",
            LayerRelated,
            vec![A::input("x"), A::input("scale"), A::output("y"), A::scalar("beta")],
        ),
        lrn_output_k::<S>,
    );
    reg.register(
        desc(
            "LRN_Diff",
            LayerRelated,
            vec![
                A::input("x"),
                A::input("y"),
                A::input("scale"),
                A::input("top_diff"),
                A::output("bottom_diff"),
                A::scalar("n"),
                A::scalar("c"),
                A::scalar("spatial"),
                A::scalar("local_size"),
                A::scalar("alpha"),
                A::scalar("beta"),
            ],
        ),
        lrn_diff_k::<S>,
    );
    reg.register(
        desc(
            "Softmax",
            LayerRelated,
            vec![A::input("x"), A::output("p"), A::scalar("n"), A::scalar("c"), A::scalar("spatial")],
        ),
        softmax_k::<S>,
    );
    reg.register(
        desc(
            "Softmax_B",
            LayerRelated,
            vec![
                A::input("p"),
                A::input("top_diff"),
                A::output("bottom_diff"),
                A::scalar("n"),
                A::scalar("c"),
                A::scalar("spatial"),
            ],
        ),
        softmax_b_k::<S>,
    );
    reg.register(
        desc(
            "SoftmaxLoss_F",
            LayerRelated,
            vec![
                A::input("p"),
                A::input("label"),
                A::output("per_loss"),
                A::scalar("n"),
                A::scalar("c"),
                A::scalar("spatial"),
            ],
        ),
        softmax_loss_f_k::<S>,
    );
    reg.register(
        desc(
            "SoftmaxLoss_B",
            LayerRelated,
            vec![
                A::input("p"),
                A::input("label"),
                A::output("diff"),
                A::scalar("n"),
                A::scalar("c"),
                A::scalar("spatial"),
            ],
        ),
        softmax_loss_b_k::<S>,
    );
    reg.register(
        desc(
            "Dropout_F",
            LayerRelated,
            vec![A::input("x"), A::input("mask"), A::output("y"), A::scalar("scale")],
        ),
        dropout_f_k::<S>,
    );
    reg.register(
        desc(
            "Dropout_B",
            LayerRelated,
            vec![A::input("top_diff"), A::input("mask"), A::output("bottom_diff"), A::scalar("scale")],
        ),
        dropout_b_k::<S>,
    );
    reg.register(
        desc(
            "Concat",
            LayerRelated,
            vec![
                A::input("src"),
                A::inout("dst"),
                A::scalar("n"),
                A::scalar("src_stride"),
                A::scalar("dst_stride"),
                A::scalar("src_off"),
                A::scalar("dst_off"),
                A::scalar("block"),
            ],
        ),
        concat_k::<S>,
    );
    reg.register(
        desc("Split", LayerRelated, vec![A::input("src"), A::output("dst")]),
        split_k::<S>,
    );
    reg.register(
        desc(
            "Bias",
            LayerRelated,
            vec![A::input("bias"), A::inout("out"), A::scalar("n"), A::scalar("c"), A::scalar("hw")],
        ),
        bias_k::<S>,
    );

    // Solver-related.
    reg.register(
        desc(
            "Sgd_Update",
            SolverRelated,
            vec![A::inout("diff"), A::inout("history"), A::scalar("lr"), A::scalar("momentum")],
        ),
        sgd_k::<S>,
    );
    reg.register(
        desc(
            "Nesterov_Update",
            SolverRelated,
            vec![A::inout("diff"), A::inout("history"), A::scalar("lr"), A::scalar("momentum")],
        ),
        nesterov_k::<S>,
    );
    reg.register(
        desc(
            "Adagrad_Update",
            SolverRelated,
            vec![A::inout("diff"), A::inout("history"), A::scalar("lr"), A::scalar("delta")],
        ),
        adagrad_k::<S>,
    );
    reg.register(
        desc(
            "Rmsprop_Update",
            SolverRelated,
            vec![
                A::inout("diff"),
                A::inout("history"),
                A::scalar("lr"),
                A::scalar("rms_decay"),
                A::scalar("delta"),
            ],
        ),
        rmsprop_k::<S>,
    );
    reg.register(
        desc(
            "Adadelta_Update",
            SolverRelated,
            vec![
                A::inout("diff"),
                A::inout("sq_history"),
                A::inout("delta_history"),
                A::scalar("lr"),
                A::scalar("momentum"),
                A::scalar("delta"),
            ],
        ),
        adadelta_k::<S>,
    );
    reg.register(
        desc(
            "Adam_Update",
            SolverRelated,
            vec![
                A::inout("diff"),
                A::inout("m"),
                A::inout("v"),
                A::scalar("lr"),
                A::scalar("momentum"),
                A::scalar("momentum2"),
                A::scalar("delta"),
                A::scalar("t"),
            ],
        ),
        adam_k::<S>,
    );
    reg.register(
        desc("Sign", SolverRelated, vec![A::input("x"), A::output("out")]),
        sign_k::<S>,
    );

    reg
}
