//! Channel concatenation and fan-out. Concat moves one channel block per
//! bottom in each direction. Split copies the bottom into every top in
//! forward; backward folds the consumer gradients with one add and axpy
//! accumulations.

use crate::device::{wrap, Arg, Placement, Runtime};
use crate::memory::TensorShape;
use crate::scalar::Scalar;

use super::{exec_device, shape_err, BlobRef, Layer, LayerCtx, LayerError, LayerParams, LayerSpec};

pub struct ConcatLayer<S: Scalar> {
    spec: LayerSpec,
    placement: Placement,
    /// (channel offset, channels) per bottom.
    blocks: Vec<(usize, usize)>,
    batch: usize,
    spatial: usize,
    total_channels: usize,
    _marker: std::marker::PhantomData<S>,
}

impl<S: Scalar> ConcatLayer<S> {
    pub fn new(spec: LayerSpec) -> Self {
        ConcatLayer {
            spec,
            placement: Placement::Host,
            blocks: Vec::new(),
            batch: 0,
            spatial: 0,
            total_channels: 0,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<S: Scalar> Layer<S> for ConcatLayer<S> {
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
        _rt: &mut Runtime<S>,
        bottom_shapes: &[TensorShape],
        _ctx: &LayerCtx,
    ) -> Result<Vec<TensorShape>, LayerError> {
        let name = self.spec.name.clone();
        if bottom_shapes.is_empty() {
            return Err(shape_err(&name, "concat expects at least one bottom"));
        }
        if let LayerParams::Concat { axis } = self.spec.params {
            if axis != 1 {
                return Err(shape_err(&name, format!("only channel-axis concat supported, got axis {}", axis)));
            }
        }
        let (n, _, h, w) = bottom_shapes[0].dim4();
        let mut offset = 0;
        self.blocks.clear();
        for shape in bottom_shapes {
            let (bn, bc, bh, bw) = shape.dim4();
            if bn != n || bh != h || bw != w {
                return Err(shape_err(
                    &name,
                    format!("non-channel extents differ: {} vs {}", bottom_shapes[0], shape),
                ));
            }
            self.blocks.push((offset, bc));
            offset += bc;
        }
        self.batch = n;
        self.spatial = h * w;
        self.total_channels = offset;
        Ok(vec![TensorShape::new(&[n, offset, h, w]).map_err(|e| shape_err(&name, e.to_string()))?])
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
        let top = tops[0].borrow_mut().data.stage_out(rt, place)?;
        let dst_stride = self.total_channels * self.spatial;
        for (i, &(offset, channels)) in self.blocks.iter().enumerate() {
            let src = bottoms[i].borrow_mut().data.stage_in(rt, place)?;
            let block = channels * self.spatial;
            rt.launch(
                d,
                "Concat",
                &[
                    Arg::In(src),
                    Arg::InOut(top),
                    Arg::Scalar(self.batch as f64),
                    Arg::Scalar(block as f64),
                    Arg::Scalar(dst_stride as f64),
                    Arg::Scalar(0.0),
                    Arg::Scalar((offset * self.spatial) as f64),
                    Arg::Scalar(block as f64),
                ],
            )?;
        }
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
        let place = self.placement;
        let d = exec_device(rt, place)?;
        let top_diff = tops[0].borrow_mut().diff.stage_in(rt, place)?;
        let src_stride = self.total_channels * self.spatial;
        for (i, &(offset, channels)) in self.blocks.iter().enumerate() {
            if !propagate_down[i] {
                continue;
            }
            let dst = bottoms[i].borrow_mut().diff.stage_out(rt, place)?;
            let block = channels * self.spatial;
            rt.launch(
                d,
                "Concat",
                &[
                    Arg::In(top_diff),
                    Arg::InOut(dst),
                    Arg::Scalar(self.batch as f64),
                    Arg::Scalar(src_stride as f64),
                    Arg::Scalar(block as f64),
                    Arg::Scalar((offset * self.spatial) as f64),
                    Arg::Scalar(0.0),
                    Arg::Scalar(block as f64),
                ],
            )?;
        }
        Ok(())
    }
}

pub struct SplitLayer<S: Scalar> {
    spec: LayerSpec,
    placement: Placement,
    _marker: std::marker::PhantomData<S>,
}

impl<S: Scalar> SplitLayer<S> {
    pub fn new(spec: LayerSpec) -> Self {
        SplitLayer { spec, placement: Placement::Host, _marker: std::marker::PhantomData }
    }
}

impl<S: Scalar> Layer<S> for SplitLayer<S> {
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
        _rt: &mut Runtime<S>,
        bottom_shapes: &[TensorShape],
        _ctx: &LayerCtx,
    ) -> Result<Vec<TensorShape>, LayerError> {
        if bottom_shapes.len() != 1 {
            return Err(shape_err(&self.spec.name, "split expects one bottom"));
        }
        Ok(vec![bottom_shapes[0].clone(); self.spec.tops.len()])
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
        let src = bottoms[0].borrow_mut().data.stage_in(rt, place)?;
        for top in tops {
            let dst = top.borrow_mut().data.stage_out(rt, place)?;
            wrap::split_copy(rt, d, src, dst)?;
        }
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
        if !propagate_down[0] {
            return Ok(());
        }
        let place = self.placement;
        let d = exec_device(rt, place)?;
        let bottom_diff = bottoms[0].borrow_mut().diff.stage_out(rt, place)?;
        if tops.len() == 1 {
            let t0 = tops[0].borrow_mut().diff.stage_in(rt, place)?;
            wrap::split_copy(rt, d, t0, bottom_diff)?;
            return Ok(());
        }
        let t0 = tops[0].borrow_mut().diff.stage_in(rt, place)?;
        let t1 = tops[1].borrow_mut().diff.stage_in(rt, place)?;
        wrap::add(rt, d, t0, t1, bottom_diff)?;
        for top in &tops[2..] {
            let ti = top.borrow_mut().diff.stage_in(rt, place)?;
            wrap::axpy(rt, d, 1.0, ti, bottom_diff)?;
        }
        Ok(())
    }
}
