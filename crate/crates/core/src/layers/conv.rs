//! Convolution via the column lowering: forward is im2col plus one GEMM per
//! (item, group) and a bias launch per item; backward reuses or rebuilds the
//! column buffer for the weight gradient and scatters the bottom gradient
//! through col2im.
//!
//! The device pipeline always materializes the column matrix in forward, unit
//! (1x1/s1/p0) geometries included. Only non-unit columns are retained for
//! backward; unit columns live in transient scratch, so their weight-gradient
//! pass re-materializes them, while their bottom gradient skips the identity
//! scatter and GEMMs straight into the bottom buffer.

use crate::device::{wrap, Arg, BufView, Placement, Runtime};
use crate::kernels::ConvGeometry;
use crate::memory::{Blob, SyncedTensor, TensorShape};
use crate::scalar::Scalar;

use super::{exec_device, fill_tensor, shape_err, BlobRef, ConvParams, Layer, LayerCtx, LayerError, LayerParams, LayerSpec};

pub struct ConvLayer<S: Scalar> {
    spec: LayerSpec,
    cp: ConvParams,
    placement: Placement,
    weight: Blob<S>,
    bias: Option<Blob<S>>,
    /// Per-item column matrix (data) and column-gradient scratch (diff).
    col: Blob<S>,
    /// All-ones multiplier for the per-item bias gradient.
    ones: SyncedTensor<S>,
    geom: Option<ConvGeometry>,
    batch: usize,
    in_channels: usize,
    /// Columns retained from forward stay valid for the weight gradient.
    retain_col: bool,
    forward_ran: bool,
}

impl<S: Scalar> ConvLayer<S> {
    pub fn new(spec: LayerSpec) -> Result<Self, LayerError> {
        let cp = match &spec.params {
            LayerParams::Convolution(p) => p.clone(),
            _ => unreachable!("factory matched"),
        };
        Ok(ConvLayer {
            spec,
            cp,
            placement: Placement::Host,
            weight: Blob::new("weight", TensorShape::new(&[1]).expect("static")),
            bias: None,
            col: Blob::new("col", TensorShape::new(&[1]).expect("static")),
            ones: SyncedTensor::new(TensorShape::new(&[1]).expect("static")),
            geom: None,
            batch: 0,
            in_channels: 0,
            retain_col: true,
            forward_ran: false,
        })
    }

    fn geom(&self) -> &ConvGeometry {
        self.geom.as_ref().expect("setup ran")
    }

    fn launch_im2col(
        &self,
        rt: &mut Runtime<S>,
        d: crate::device::DeviceId,
        src: BufView,
        dst: BufView,
    ) -> Result<(), LayerError> {
        let g = self.geom();
        rt.launch(
            d,
            "Im2col",
            &[
                Arg::In(src),
                Arg::Out(dst),
                Arg::Scalar(g.channels as f64),
                Arg::Scalar(g.height as f64),
                Arg::Scalar(g.width as f64),
                Arg::Scalar(g.kernel_h as f64),
                Arg::Scalar(g.kernel_w as f64),
                Arg::Scalar(g.pad_h as f64),
                Arg::Scalar(g.pad_w as f64),
                Arg::Scalar(g.stride_h as f64),
                Arg::Scalar(g.stride_w as f64),
            ],
        )?;
        Ok(())
    }

    fn launch_col2im(
        &self,
        rt: &mut Runtime<S>,
        d: crate::device::DeviceId,
        src: BufView,
        dst: BufView,
    ) -> Result<(), LayerError> {
        let g = self.geom();
        rt.launch(
            d,
            "Col2im",
            &[
                Arg::In(src),
                Arg::Out(dst),
                Arg::Scalar(g.channels as f64),
                Arg::Scalar(g.height as f64),
                Arg::Scalar(g.width as f64),
                Arg::Scalar(g.kernel_h as f64),
                Arg::Scalar(g.kernel_w as f64),
                Arg::Scalar(g.pad_h as f64),
                Arg::Scalar(g.pad_w as f64),
                Arg::Scalar(g.stride_h as f64),
                Arg::Scalar(g.stride_w as f64),
            ],
        )?;
        Ok(())
    }
}

impl<S: Scalar> Layer<S> for ConvLayer<S> {
    fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    fn placement(&self) -> Placement {
        self.placement
    }

    fn set_placement(&mut self, placement: Placement) {
        self.placement = placement;
    }

    fn setup(
        &mut self,
        rt: &mut Runtime<S>,
        bottom_shapes: &[TensorShape],
        ctx: &LayerCtx,
    ) -> Result<Vec<TensorShape>, LayerError> {
        let name = self.spec.name.clone();
        if bottom_shapes.len() != 1 {
            return Err(shape_err(&name, "convolution expects one bottom"));
        }
        let (n, c, h, w) = bottom_shapes[0].dim4();
        if bottom_shapes[0].rank() != 4 {
            return Err(shape_err(&name, format!("expected 4-axis input, got {}", bottom_shapes[0])));
        }
        let cp = &self.cp;
        if c % cp.group != 0 || !cp.num_output.is_multiple_of(cp.group) {
            return Err(shape_err(
                &name,
                format!("group {} must divide channels {} and num_output {}", cp.group, c, cp.num_output),
            ));
        }
        let geom = ConvGeometry::new(c, h, w, cp.kernel_h, cp.kernel_w, cp.pad_h, cp.pad_w, cp.stride_h, cp.stride_w)
            .map_err(|e| shape_err(&name, e.to_string()))?;
        let (oh, ow) = (geom.out_h(), geom.out_w());

        let weight_shape = TensorShape::new(&[cp.num_output, c / cp.group, cp.kernel_h, cp.kernel_w])
            .map_err(|e| shape_err(&name, e.to_string()))?;
        let fan_in = (c / cp.group) * cp.kernel_h * cp.kernel_w;
        self.weight.reshape(rt, weight_shape);
        fill_tensor(
            rt,
            &mut self.weight.data,
            &cp.weight_filler,
            fan_in,
            crate::rng::derive_seed(ctx.master_seed, crate::rng::stream::FILLER, ctx.layer_index as u64 * 2),
        )?;
        if cp.bias_term {
            let mut bias = Blob::new("bias", TensorShape::new(&[cp.num_output]).map_err(|e| shape_err(&name, e.to_string()))?);
            fill_tensor(
                rt,
                &mut bias.data,
                &cp.bias_filler,
                fan_in,
                crate::rng::derive_seed(ctx.master_seed, crate::rng::stream::FILLER, ctx.layer_index as u64 * 2 + 1),
            )?;
            self.bias = Some(bias);
        }

        self.col.reshape(
            rt,
            TensorShape::new(&[geom.col_rows(), geom.col_cols()]).map_err(|e| shape_err(&name, e.to_string()))?,
        );
        self.ones.reshape(rt, TensorShape::new(&[oh * ow]).map_err(|e| shape_err(&name, e.to_string()))?);
        self.ones.write_host(rt)?.fill(S::one());

        self.geom = Some(geom);
        self.batch = n;
        self.in_channels = c;
        self.forward_ran = false;
        Ok(vec![TensorShape::new(&[n, cp.num_output, oh, ow]).map_err(|e| shape_err(&name, e.to_string()))?])
    }

    fn forward(
        &mut self,
        rt: &mut Runtime<S>,
        bottoms: &[BlobRef<'_, S>],
        tops: &[BlobRef<'_, S>],
        _ctx: &LayerCtx,
    ) -> Result<f64, LayerError> {
        let place = self.placement;
        let d = exec_device(rt, place)?;
        let g = *self.geom();
        let sp = g.col_cols();
        let out_c = self.cp.num_output;
        let groups = self.cp.group;
        let rows_g = g.col_rows() / groups;
        let m = out_c / groups;
        let k_g = rows_g;
        let in_item = g.input_count();

        let bottom = bottoms[0].borrow_mut().data.stage_in(rt, place)?;
        let top = tops[0].borrow_mut().data.stage_out(rt, place)?;
        let weight = self.weight.data.stage_in(rt, place)?;
        let bias = match &mut self.bias {
            Some(b) => Some(b.data.stage_in(rt, place)?),
            None => None,
        };
        let col = self.col.data.stage_out(rt, place)?;

        for n in 0..self.batch {
            let bottom_item = bottom.slice(n * in_item, in_item);
            self.launch_im2col(rt, d, bottom_item, col)?;
            for group in 0..groups {
                let w_g = weight.slice(group * m * k_g, m * k_g);
                let col_g = col.slice(group * rows_g * sp, rows_g * sp);
                let top_g = top.slice(n * out_c * sp + group * m * sp, m * sp);
                wrap::gemm(rt, d, false, false, m, sp, k_g, 1.0, w_g, col_g, 0.0, top_g)?;
            }
            if let Some(bias_view) = bias {
                let top_item = top.slice(n * out_c * sp, out_c * sp);
                rt.launch(
                    d,
                    "Bias",
                    &[
                        Arg::In(bias_view),
                        Arg::InOut(top_item),
                        Arg::Scalar(1.0),
                        Arg::Scalar(out_c as f64),
                        Arg::Scalar(sp as f64),
                    ],
                )?;
            }
        }
        self.forward_ran = true;
        Ok(0.0)
    }

    fn backward(
        &mut self,
        rt: &mut Runtime<S>,
        tops: &[BlobRef<'_, S>],
        propagate_down: &[bool],
        bottoms: &[BlobRef<'_, S>],
        _ctx: &LayerCtx,
    ) -> Result<(), LayerError> {
        if !self.forward_ran {
            return Err(LayerError::BackwardBeforeForward { layer: self.spec.name.clone() });
        }
        let place = self.placement;
        let d = exec_device(rt, place)?;
        let g = *self.geom();
        let sp = g.col_cols();
        let out_c = self.cp.num_output;
        let groups = self.cp.group;
        let rows = g.col_rows();
        let rows_g = rows / groups;
        let m = out_c / groups;
        let in_item = g.input_count();
        let pd = propagate_down[0];
        let unit = g.is_unit();

        let top_diff = tops[0].borrow_mut().diff.stage_in(rt, place)?;
        let bottom_data = bottoms[0].borrow_mut().data.stage_in(rt, place)?;
        let bottom_diff = if pd {
            Some(bottoms[0].borrow_mut().diff.stage_out(rt, place)?)
        } else {
            None
        };
        let weight_data = self.weight.data.stage_in(rt, place)?;
        let weight_diff = self.weight.diff.stage_out(rt, place)?;
        let bias_views = match &mut self.bias {
            Some(b) => Some((b.diff.stage_out(rt, place)?, self.ones.stage_in(rt, place)?)),
            None => None,
        };
        let col = self.col.data.stage_out(rt, place)?;
        let col_diff = if pd && !unit {
            Some(self.col.diff.stage_out(rt, place)?)
        } else {
            None
        };

        // Reverse item order: the retained column buffer still holds the last
        // item's columns from forward, saving one launch.
        for n in (0..self.batch).rev() {
            let top_item = top_diff.slice(n * out_c * sp, out_c * sp);

            if let Some((bias_diff, ones)) = bias_views {
                wrap::gemv(rt, d, false, out_c, sp, 1.0, top_item, ones, 1.0, bias_diff)?;
            }

            let col_valid = self.retain_col && !unit && n + 1 == self.batch;
            if !col_valid {
                let bottom_item = bottom_data.slice(n * in_item, in_item);
                self.launch_im2col(rt, d, bottom_item, col)?;
            }
            for group in 0..groups {
                let top_g = top_diff.slice(n * out_c * sp + group * m * sp, m * sp);
                let col_g = col.slice(group * rows_g * sp, rows_g * sp);
                let wdiff_g = weight_diff.slice(group * m * rows_g, m * rows_g);
                wrap::gemm(rt, d, false, true, m, rows_g, sp, 1.0, top_g, col_g, 1.0, wdiff_g)?;
            }

            if let Some(bdiff) = bottom_diff {
                if unit {
                    for group in 0..groups {
                        let w_g = weight_data.slice(group * m * rows_g, m * rows_g);
                        let top_g = top_diff.slice(n * out_c * sp + group * m * sp, m * sp);
                        let bdiff_g = bdiff.slice(n * in_item + group * rows_g * sp, rows_g * sp);
                        wrap::gemm(rt, d, true, false, rows_g, sp, m, 1.0, w_g, top_g, 0.0, bdiff_g)?;
                    }
                } else {
                    let cdiff = col_diff.expect("staged for non-unit");
                    for group in 0..groups {
                        let w_g = weight_data.slice(group * m * rows_g, m * rows_g);
                        let top_g = top_diff.slice(n * out_c * sp + group * m * sp, m * sp);
                        let cdiff_g = cdiff.slice(group * rows_g * sp, rows_g * sp);
                        wrap::gemm(rt, d, true, false, rows_g, sp, m, 1.0, w_g, top_g, 0.0, cdiff_g)?;
                    }
                    let bdiff_item = bdiff.slice(n * in_item, in_item);
                    self.launch_col2im(rt, d, cdiff, bdiff_item)?;
                }
            }
        }
        Ok(())
    }

    fn params(&mut self) -> Vec<&mut Blob<S>> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    fn resident_tensors(&mut self) -> Vec<&mut SyncedTensor<S>> {
        let mut v = vec![&mut self.weight.data, &mut self.ones];
        if let Some(b) = &mut self.bias {
            v.push(&mut b.data);
        }
        v
    }

    fn set_retain_col(&mut self, retain: bool) {
        self.retain_col = retain;
    }
}
