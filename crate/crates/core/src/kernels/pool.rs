//! Max and average pooling over N x C x H x W inputs.
//!
//! Pooled extents follow the classic framework rule: ceiling division plus a
//! clip so the last window starts inside the (padded) input. Max pooling
//! records flat argmax indices (first maximum on ties) so backward scatters
//! exactly; average pooling divides by the number of in-bounds cells.

use super::{check_len, KernelError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
}

impl PoolGeometry {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        height: usize,
        width: usize,
        kernel_h: usize,
        kernel_w: usize,
        pad_h: usize,
        pad_w: usize,
        stride_h: usize,
        stride_w: usize,
    ) -> Result<Self, KernelError> {
        if height == 0 || width == 0 || kernel_h == 0 || kernel_w == 0 {
            return Err(KernelError::BadArg("pool geometry extents must be >= 1".into()));
        }
        if stride_h == 0 || stride_w == 0 {
            return Err(KernelError::BadArg("pool strides must be >= 1".into()));
        }
        if pad_h >= kernel_h || pad_w >= kernel_w {
            return Err(KernelError::BadArg("pool padding must be smaller than the kernel".into()));
        }
        Ok(PoolGeometry { height, width, kernel_h, kernel_w, pad_h, pad_w, stride_h, stride_w })
    }

    fn pooled(extent: usize, kernel: usize, pad: usize, stride: usize) -> usize {
        let padded = extent + 2 * pad;
        if padded < kernel {
            return 1;
        }
        let mut out = (padded - kernel).div_ceil(stride) + 1;
        // The last window must start inside the image (plus leading pad);
        // otherwise ceil mode would yield an empty trailing window.
        while out > 1 && (out - 1) * stride >= extent + pad {
            out -= 1;
        }
        out
    }

    pub fn out_h(&self) -> usize {
        Self::pooled(self.height, self.kernel_h, self.pad_h, self.stride_h)
    }

    pub fn out_w(&self) -> usize {
        Self::pooled(self.width, self.kernel_w, self.pad_w, self.stride_w)
    }
}

/// Clipped window bounds for one output coordinate.
fn window(o: usize, stride: usize, pad: usize, kernel: usize, extent: usize) -> (usize, usize) {
    let start = (o * stride) as isize - pad as isize;
    let end = (start + kernel as isize).min(extent as isize) as usize;
    (start.max(0) as usize, end)
}

/// Max pooling forward; `mask` receives the flat argmax index within the H*W
/// plane of each window's input channel.
pub fn max_pool_forward<S: Scalar>(
    input: &[S],
    n: usize,
    c: usize,
    geom: &PoolGeometry,
    output: &mut [S],
    mask: &mut [S],
) -> Result<(), KernelError> {
    let (oh, ow) = (geom.out_h(), geom.out_w());
    check_len("max_pool input", input, n * c * geom.height * geom.width)?;
    check_len("max_pool output", output, n * c * oh * ow)?;
    check_len("max_pool mask", mask, n * c * oh * ow)?;
    let plane = geom.height * geom.width;
    for img in 0..n * c {
        let src = &input[img * plane..(img + 1) * plane];
        let dst_off = img * oh * ow;
        for po in 0..oh {
            let (hs, he) = window(po, geom.stride_h, geom.pad_h, geom.kernel_h, geom.height);
            for qo in 0..ow {
                let (ws, we) = window(qo, geom.stride_w, geom.pad_w, geom.kernel_w, geom.width);
                let mut best = S::neg_infinity();
                let mut best_idx = 0usize;
                for h in hs..he {
                    for w in ws..we {
                        let v = src[h * geom.width + w];
                        if v > best {
                            best = v;
                            best_idx = h * geom.width + w;
                        }
                    }
                }
                output[dst_off + po * ow + qo] = best;
                mask[dst_off + po * ow + qo] = S::from_f64(best_idx as f64);
            }
        }
    }
    Ok(())
}

/// Scatters top gradients to the argmax positions, accumulating on overlap.
pub fn max_pool_backward<S: Scalar>(
    top_diff: &[S],
    mask: &[S],
    n: usize,
    c: usize,
    geom: &PoolGeometry,
    bottom_diff: &mut [S],
) -> Result<(), KernelError> {
    let (oh, ow) = (geom.out_h(), geom.out_w());
    check_len("max_pool top_diff", top_diff, n * c * oh * ow)?;
    check_len("max_pool mask", mask, n * c * oh * ow)?;
    check_len("max_pool bottom_diff", bottom_diff, n * c * geom.height * geom.width)?;
    bottom_diff.fill(S::zero());
    let plane = geom.height * geom.width;
    for img in 0..n * c {
        let dst = &mut bottom_diff[img * plane..(img + 1) * plane];
        let src_off = img * oh * ow;
        for i in 0..oh * ow {
            let idx = mask[src_off + i].to_f64() as usize;
            if idx >= plane {
                return Err(KernelError::BadArg(format!("mask index {} out of plane {}", idx, plane)));
            }
            dst[idx] += top_diff[src_off + i];
        }
    }
    Ok(())
}

/// Average pooling forward; the divisor counts only in-bounds cells.
pub fn ave_pool_forward<S: Scalar>(
    input: &[S],
    n: usize,
    c: usize,
    geom: &PoolGeometry,
    output: &mut [S],
) -> Result<(), KernelError> {
    let (oh, ow) = (geom.out_h(), geom.out_w());
    check_len("ave_pool input", input, n * c * geom.height * geom.width)?;
    check_len("ave_pool output", output, n * c * oh * ow)?;
    let plane = geom.height * geom.width;
    for img in 0..n * c {
        let src = &input[img * plane..(img + 1) * plane];
        let dst_off = img * oh * ow;
        for po in 0..oh {
            let (hs, he) = window(po, geom.stride_h, geom.pad_h, geom.kernel_h, geom.height);
            for qo in 0..ow {
                let (ws, we) = window(qo, geom.stride_w, geom.pad_w, geom.kernel_w, geom.width);
                let mut acc = S::zero();
                for h in hs..he {
                    for w in ws..we {
                        acc += src[h * geom.width + w];
                    }
                }
                let size = S::from_f64(((he - hs) * (we - ws)) as f64);
                output[dst_off + po * ow + qo] = acc / size;
            }
        }
    }
    Ok(())
}

/// Spreads each top gradient uniformly over its window, using the same
/// divisor as the forward pass.
pub fn ave_pool_backward<S: Scalar>(
    top_diff: &[S],
    n: usize,
    c: usize,
    geom: &PoolGeometry,
    bottom_diff: &mut [S],
) -> Result<(), KernelError> {
    let (oh, ow) = (geom.out_h(), geom.out_w());
    check_len("ave_pool top_diff", top_diff, n * c * oh * ow)?;
    check_len("ave_pool bottom_diff", bottom_diff, n * c * geom.height * geom.width)?;
    bottom_diff.fill(S::zero());
    let plane = geom.height * geom.width;
    for img in 0..n * c {
        let dst = &mut bottom_diff[img * plane..(img + 1) * plane];
        let src_off = img * oh * ow;
        for po in 0..oh {
            let (hs, he) = window(po, geom.stride_h, geom.pad_h, geom.kernel_h, geom.height);
            for qo in 0..ow {
                let (ws, we) = window(qo, geom.stride_w, geom.pad_w, geom.kernel_w, geom.width);
                let size = S::from_f64(((he - hs) * (we - ws)) as f64);
                let share = top_diff[src_off + po * ow + qo] / size;
                for h in hs..he {
                    for w in ws..we {
                        dst[h * geom.width + w] += share;
                    }
                }
            }
        }
    }
    Ok(())
}
