//! Element-wise and data-movement kernels: ReLU, dropout, bias, and the
//! block copies behind concat and split.

use super::{check_len, KernelError};
use crate::rng::Xoshiro256;
use crate::scalar::Scalar;

/// y = x for x > 0, else slope * x.
pub fn relu_forward<S: Scalar>(x: &[S], slope: f64, y: &mut [S]) -> Result<(), KernelError> {
    check_len("relu y", y, x.len())?;
    let slope = S::from_f64(slope);
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv = if *xv > S::zero() { *xv } else { slope * *xv };
    }
    Ok(())
}

/// bottom_diff = top_diff where the activation was positive, scaled by slope
/// elsewhere. The gate works on either pre- or post-activation values since
/// the sign is preserved for slope >= 0, which is what permits in-place use.
pub fn relu_backward<S: Scalar>(
    x: &[S],
    top_diff: &[S],
    slope: f64,
    bottom_diff: &mut [S],
) -> Result<(), KernelError> {
    check_len("relu top_diff", top_diff, x.len())?;
    check_len("relu bottom_diff", bottom_diff, x.len())?;
    let slope = S::from_f64(slope);
    for i in 0..x.len() {
        bottom_diff[i] = if x[i] > S::zero() { top_diff[i] } else { slope * top_diff[i] };
    }
    Ok(())
}

/// Deterministic Bernoulli(1 - ratio) mask of zeros and ones.
pub fn dropout_mask<S: Scalar>(len: usize, ratio: f64, seed: u64) -> Result<Vec<S>, KernelError> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(KernelError::BadArg(format!("dropout ratio {} must be in [0,1)", ratio)));
    }
    let mut rng = Xoshiro256::seed_from(seed);
    Ok((0..len)
        .map(|_| if rng.bernoulli(1.0 - ratio) { S::one() } else { S::zero() })
        .collect())
}

/// y = x * mask * scale (inverted dropout; scale = 1/(1-ratio) at train time).
pub fn dropout_apply<S: Scalar>(x: &[S], mask: &[S], scale: f64, y: &mut [S]) -> Result<(), KernelError> {
    check_len("dropout mask", mask, x.len())?;
    check_len("dropout y", y, x.len())?;
    let scale = S::from_f64(scale);
    for i in 0..x.len() {
        y[i] = x[i] * mask[i] * scale;
    }
    Ok(())
}

/// Train/test dropout as one call: TRAIN draws a seeded mask and rescales,
/// TEST passes through with an all-ones mask.
pub fn dropout_forward<S: Scalar>(
    x: &[S],
    ratio: f64,
    train: bool,
    seed: u64,
) -> Result<(Vec<S>, Vec<S>), KernelError> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(KernelError::BadArg(format!("dropout ratio {} must be in [0,1)", ratio)));
    }
    if !train {
        return Ok((x.to_vec(), vec![S::one(); x.len()]));
    }
    let mask = dropout_mask::<S>(x.len(), ratio, seed)?;
    let mut y = vec![S::zero(); x.len()];
    dropout_apply(x, &mask, 1.0 / (1.0 - ratio), &mut y)?;
    Ok((y, mask))
}

/// bottom_diff = top_diff * mask * scale (mirrors the forward mask).
pub fn dropout_backward<S: Scalar>(
    top_diff: &[S],
    mask: &[S],
    scale: f64,
    bottom_diff: &mut [S],
) -> Result<(), KernelError> {
    dropout_apply(top_diff, mask, scale, bottom_diff)
}

/// out[n,c,h,w] += bias[c] over an N x C x (HW) tensor.
pub fn bias_add<S: Scalar>(
    bias: &[S],
    n: usize,
    c: usize,
    hw: usize,
    out: &mut [S],
) -> Result<(), KernelError> {
    check_len("bias", bias, c)?;
    check_len("bias out", out, n * c * hw)?;
    for img in 0..n {
        for (ch, &b) in bias.iter().enumerate() {
            let base = (img * c + ch) * hw;
            for v in &mut out[base..base + hw] {
                *v += b;
            }
        }
    }
    Ok(())
}

/// Strided block copy: for each of `n` items, copies `block` elements from
/// `src[i*src_stride + src_off]` to `dst[i*dst_stride + dst_off]`. Concat
/// forward and backward are both this move with swapped geometry.
#[allow(clippy::too_many_arguments)]
pub fn block_copy<S: Scalar>(
    src: &[S],
    n: usize,
    src_stride: usize,
    dst_stride: usize,
    src_off: usize,
    dst_off: usize,
    block: usize,
    dst: &mut [S],
) -> Result<(), KernelError> {
    check_len("block_copy src", src, n * src_stride)?;
    check_len("block_copy dst", dst, n * dst_stride)?;
    if src_off + block > src_stride || dst_off + block > dst_stride {
        return Err(KernelError::DimMismatch("block exceeds stride".into()));
    }
    for i in 0..n {
        let s = i * src_stride + src_off;
        let d = i * dst_stride + dst_off;
        dst[d..d + block].copy_from_slice(&src[s..s + block]);
    }
    Ok(())
}

/// Whole-buffer copy (split fan-out).
pub fn copy<S: Scalar>(src: &[S], dst: &mut [S]) -> Result<(), KernelError> {
    check_len("copy dst", dst, src.len())?;
    dst.copy_from_slice(src);
    Ok(())
}
