//! Convolution lowering: im2col unfolds sliding windows into a column matrix
//! so convolution becomes one GEMM; col2im is its scatter-add adjoint.

use super::{check_len, KernelError};
use crate::scalar::Scalar;

/// Spatial geometry of a convolution over one C x H x W input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
}

impl ConvGeometry {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel_h: usize,
        kernel_w: usize,
        pad_h: usize,
        pad_w: usize,
        stride_h: usize,
        stride_w: usize,
    ) -> Result<Self, KernelError> {
        let g = ConvGeometry {
            channels,
            height,
            width,
            kernel_h,
            kernel_w,
            pad_h,
            pad_w,
            stride_h,
            stride_w,
        };
        if channels == 0 || height == 0 || width == 0 || kernel_h == 0 || kernel_w == 0 {
            return Err(KernelError::BadArg("conv geometry extents must be >= 1".into()));
        }
        if stride_h == 0 || stride_w == 0 {
            return Err(KernelError::BadArg("conv strides must be >= 1".into()));
        }
        if height + 2 * pad_h < kernel_h || width + 2 * pad_w < kernel_w {
            return Err(KernelError::BadArg("kernel larger than padded input".into()));
        }
        debug_assert!(g.out_h() >= 1 && g.out_w() >= 1);
        Ok(g)
    }

    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.pad_h - self.kernel_h) / self.stride_h + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.pad_w - self.kernel_w) / self.stride_w + 1
    }

    /// Rows of the column matrix: C * kh * kw.
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    /// Columns of the column matrix: out_h * out_w.
    pub fn col_cols(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn input_count(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Unit geometry: the column matrix equals the input, so the lowering is
    /// an identity reshape.
    pub fn is_unit(&self) -> bool {
        self.kernel_h == 1
            && self.kernel_w == 1
            && self.stride_h == 1
            && self.stride_w == 1
            && self.pad_h == 0
            && self.pad_w == 0
    }
}

/// col[(c*kh*kw index), (spatial index)] = input value under the sliding
/// window; out-of-bounds (padding) reads as zero.
pub fn im2col<S: Scalar>(input: &[S], geom: &ConvGeometry, col: &mut [S]) -> Result<(), KernelError> {
    check_len("im2col input", input, geom.input_count())?;
    check_len("im2col col", col, geom.col_rows() * geom.col_cols())?;
    let (out_h, out_w) = (geom.out_h(), geom.out_w());
    let cols = out_h * out_w;
    let mut row = 0;
    for c in 0..geom.channels {
        let plane = &input[c * geom.height * geom.width..(c + 1) * geom.height * geom.width];
        for kh in 0..geom.kernel_h {
            for kw in 0..geom.kernel_w {
                let dst = &mut col[row * cols..(row + 1) * cols];
                row += 1;
                for oh in 0..out_h {
                    let ih = (oh * geom.stride_h + kh) as isize - geom.pad_h as isize;
                    if ih < 0 || ih >= geom.height as isize {
                        dst[oh * out_w..(oh + 1) * out_w].fill(S::zero());
                        continue;
                    }
                    let in_row = &plane[ih as usize * geom.width..(ih as usize + 1) * geom.width];
                    for ow in 0..out_w {
                        let iw = (ow * geom.stride_w + kw) as isize - geom.pad_w as isize;
                        dst[oh * out_w + ow] = if iw < 0 || iw >= geom.width as isize {
                            S::zero()
                        } else {
                            in_row[iw as usize]
                        };
                    }
                }
            }
        }
    }
    Ok(())
}

/// Scatter-add inverse of im2col: each col entry is added into its source
/// pixel; padded positions are dropped. `out` is overwritten.
pub fn col2im<S: Scalar>(col: &[S], geom: &ConvGeometry, out: &mut [S]) -> Result<(), KernelError> {
    check_len("col2im col", col, geom.col_rows() * geom.col_cols())?;
    check_len("col2im out", out, geom.input_count())?;
    out.fill(S::zero());
    let (out_h, out_w) = (geom.out_h(), geom.out_w());
    let cols = out_h * out_w;
    let mut row = 0;
    for c in 0..geom.channels {
        let base = c * geom.height * geom.width;
        for kh in 0..geom.kernel_h {
            for kw in 0..geom.kernel_w {
                let src = &col[row * cols..(row + 1) * cols];
                row += 1;
                for oh in 0..out_h {
                    let ih = (oh * geom.stride_h + kh) as isize - geom.pad_h as isize;
                    if ih < 0 || ih >= geom.height as isize {
                        continue;
                    }
                    for ow in 0..out_w {
                        let iw = (ow * geom.stride_w + kw) as isize - geom.pad_w as isize;
                        if iw < 0 || iw >= geom.width as isize {
                            continue;
                        }
                        out[base + ih as usize * geom.width + iw as usize] += src[oh * out_w + ow];
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom_3x3_2x2() -> ConvGeometry {
        ConvGeometry::new(1, 3, 3, 2, 2, 0, 0, 1, 1).unwrap()
    }

    #[test]
    fn im2col_three_by_three() {
        let input: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let geom = geom_3x3_2x2();
        let mut col = vec![0.0; geom.col_rows() * geom.col_cols()];
        im2col(&input, &geom, &mut col).unwrap();
        // Rows are window offsets, columns are output positions.
        assert_eq!(&col[0..4], &[1.0, 2.0, 4.0, 5.0]);
        assert_eq!(&col[4..8], &[2.0, 3.0, 5.0, 6.0]);
        assert_eq!(&col[8..12], &[4.0, 5.0, 7.0, 8.0]);
        assert_eq!(&col[12..16], &[5.0, 6.0, 8.0, 9.0]);
    }

    #[test]
    fn unit_kernel_is_identity_reshape() {
        let geom = ConvGeometry::new(2, 2, 2, 1, 1, 0, 0, 1, 1).unwrap();
        assert!(geom.is_unit());
        let input = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let mut col = vec![0.0; 8];
        im2col(&input, &geom, &mut col).unwrap();
        assert_eq!(col, input);
        let mut back = vec![0.0; 8];
        col2im(&col, &geom, &mut back).unwrap();
        assert_eq!(back, input);
    }

    #[test]
    fn padded_single_pixel() {
        let geom = ConvGeometry::new(1, 1, 1, 3, 3, 1, 1, 1, 1).unwrap();
        assert_eq!(geom.out_h(), 1);
        let input = [7.0];
        let mut col = vec![0.0; 9];
        im2col(&input, &geom, &mut col).unwrap();
        let mut expected = [0.0; 9];
        expected[4] = 7.0; // center tap
        assert_eq!(col, expected);
    }

    #[test]
    fn col2im_counts_coverage() {
        let input: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let geom = geom_3x3_2x2();
        let mut col = vec![0.0; 16];
        im2col(&input, &geom, &mut col).unwrap();
        let mut back = vec![0.0; 9];
        col2im(&col, &geom, &mut back).unwrap();
        // Coverage counts are [[1,2,1],[2,4,2],[1,2,1]].
        assert_eq!(back, [1.0, 4.0, 3.0, 8.0, 20.0, 12.0, 7.0, 16.0, 9.0]);
    }

    #[test]
    fn geometry_rejects_invalid() {
        assert!(ConvGeometry::new(1, 2, 2, 3, 3, 0, 0, 1, 1).is_err());
        assert!(ConvGeometry::new(1, 3, 3, 2, 2, 0, 0, 0, 1).is_err());
    }
}
