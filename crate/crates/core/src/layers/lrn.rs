//! Across-channel local response normalization. The scale tensor from the
//! forward pass feeds the analytic backward kernel, so the layer cannot run
//! in place.

use crate::device::{Arg, Placement, Runtime};
use crate::kernels::norm::LrnParams;
use crate::memory::{SyncedTensor, TensorShape};
use crate::scalar::Scalar;

use super::{exec_device, shape_err, BlobRef, Layer, LayerCtx, LayerError, LayerParams, LayerSpec};

pub struct LrnLayer<S: Scalar> {
    spec: LayerSpec,
    p: LrnParams,
    placement: Placement,
    scale: SyncedTensor<S>,
    dims: (usize, usize, usize),
    forward_ran: bool,
}

impl<S: Scalar> LrnLayer<S> {
    pub fn new(spec: LayerSpec) -> Self {
        let p = match spec.params {
            LayerParams::Lrn(p) => p,
            _ => unreachable!("factory matched"),
        };
        LrnLayer {
            spec,
            p,
            placement: Placement::Host,
            scale: SyncedTensor::new(TensorShape::new(&[1]).expect("static")),
            dims: (0, 0, 0),
            forward_ran: false,
        }
    }
}

impl<S: Scalar> Layer<S> for LrnLayer<S> {
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
        _ctx: &LayerCtx,
    ) -> Result<Vec<TensorShape>, LayerError> {
        let name = self.spec.name.clone();
        if bottom_shapes.len() != 1 || bottom_shapes[0].rank() < 2 {
            return Err(shape_err(&name, "lrn expects one bottom of rank >= 2"));
        }
        if self.spec.bottoms == self.spec.tops {
            return Err(shape_err(&name, "lrn cannot run in place"));
        }
        self.p.validate().map_err(|e| shape_err(&name, e.to_string()))?;
        let (n, c, h, w) = bottom_shapes[0].dim4();
        self.dims = (n, c, h * w);
        self.scale.reshape(rt, bottom_shapes[0].clone());
        self.forward_ran = false;
        Ok(vec![bottom_shapes[0].clone()])
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
        let (n, c, sp) = self.dims;
        let x = bottoms[0].borrow_mut().data.stage_in(rt, place)?;
        let scale = self.scale.stage_out(rt, place)?;
        rt.launch(
            d,
            "LRN_Scale",
            &[
                Arg::In(x),
                Arg::Out(scale),
                Arg::Scalar(n as f64),
                Arg::Scalar(c as f64),
                Arg::Scalar(sp as f64),
                Arg::Scalar(self.p.local_size as f64),
                Arg::Scalar(self.p.alpha),
                Arg::Scalar(self.p.k),
            ],
        )?;
        let scale_in = self.scale.stage_in(rt, place)?;
        let y = tops[0].borrow_mut().data.stage_out(rt, place)?;
        rt.launch(
            d,
            "LRN_Output",
            &[Arg::In(x), Arg::In(scale_in), Arg::Out(y), Arg::Scalar(self.p.beta)],
        )?;
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
        if !propagate_down[0] {
            return Ok(());
        }
        if !self.forward_ran {
            return Err(LayerError::BackwardBeforeForward { layer: self.spec.name.clone() });
        }
        let place = self.placement;
        let d = exec_device(rt, place)?;
        let (n, c, sp) = self.dims;
        let x = bottoms[0].borrow_mut().data.stage_in(rt, place)?;
        let y = tops[0].borrow_mut().data.stage_in(rt, place)?;
        let scale = self.scale.stage_in(rt, place)?;
        let top_diff = tops[0].borrow_mut().diff.stage_in(rt, place)?;
        let bottom_diff = bottoms[0].borrow_mut().diff.stage_out(rt, place)?;
        rt.launch(
            d,
            "LRN_Diff",
            &[
                Arg::In(x),
                Arg::In(y),
                Arg::In(scale),
                Arg::In(top_diff),
                Arg::Out(bottom_diff),
                Arg::Scalar(n as f64),
                Arg::Scalar(c as f64),
                Arg::Scalar(sp as f64),
                Arg::Scalar(self.p.local_size as f64),
                Arg::Scalar(self.p.alpha),
                Arg::Scalar(self.p.beta),
            ],
        )?;
        Ok(())
    }
}
