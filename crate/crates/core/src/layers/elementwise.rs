//! ReLU and dropout. Both support in-place operation (bottom and top bound to
//! the same blob); dropout masks are drawn host-side from a stream derived
//! from the master seed, the layer index and the iteration, so repeat runs
//! and snapshot resumes see identical masks.

use crate::device::{Arg, Placement, Runtime};
use crate::kernels::misc::dropout_mask;
use crate::memory::{SyncedTensor, TensorShape};
use crate::rng::{derive_seed, stream};
use crate::scalar::Scalar;

use super::{exec_device, shape_err, BlobRef, Layer, LayerCtx, LayerError, LayerParams, LayerSpec, Phase};

pub struct ReluLayer<S: Scalar> {
    spec: LayerSpec,
    slope: f64,
    placement: Placement,
    _marker: std::marker::PhantomData<S>,
}

impl<S: Scalar> ReluLayer<S> {
    pub fn new(spec: LayerSpec) -> Self {
        let slope = match spec.params {
            LayerParams::ReLU { negative_slope } => negative_slope,
            _ => unreachable!("factory matched"),
        };
        ReluLayer { spec, slope, placement: Placement::Host, _marker: std::marker::PhantomData }
    }
}

impl<S: Scalar> Layer<S> for ReluLayer<S> {
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
            return Err(shape_err(&self.spec.name, "relu expects one bottom"));
        }
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
        let x = bottoms[0].borrow_mut().data.stage_in(rt, place)?;
        let y = tops[0].borrow_mut().data.stage_out(rt, place)?;
        rt.launch(d, "ReLU_F", &[Arg::In(x), Arg::Out(y), Arg::Scalar(self.slope)])?;
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
        // Gate on the blob's data; sign-compatible whether the blob holds the
        // pre-activation (out-of-place) or the activation (in-place).
        let x = bottoms[0].borrow_mut().data.stage_in(rt, place)?;
        let top_diff = tops[0].borrow_mut().diff.stage_in(rt, place)?;
        let bottom_diff = bottoms[0].borrow_mut().diff.stage_out(rt, place)?;
        rt.launch(
            d,
            "ReLU_B",
            &[Arg::In(x), Arg::In(top_diff), Arg::Out(bottom_diff), Arg::Scalar(self.slope)],
        )?;
        Ok(())
    }
}

pub struct DropoutLayer<S: Scalar> {
    spec: LayerSpec,
    ratio: f64,
    placement: Placement,
    mask: SyncedTensor<S>,
    trained_forward: bool,
}

impl<S: Scalar> DropoutLayer<S> {
    pub fn new(spec: LayerSpec) -> Self {
        let ratio = match spec.params {
            LayerParams::Dropout { ratio } => ratio,
            _ => unreachable!("factory matched"),
        };
        DropoutLayer {
            spec,
            ratio,
            placement: Placement::Host,
            mask: SyncedTensor::new(TensorShape::new(&[1]).expect("static")),
            trained_forward: false,
        }
    }

    fn scale(&self) -> f64 {
        1.0 / (1.0 - self.ratio)
    }
}

impl<S: Scalar> Layer<S> for DropoutLayer<S> {
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
        if bottom_shapes.len() != 1 {
            return Err(shape_err(&self.spec.name, "dropout expects one bottom"));
        }
        self.mask.reshape(rt, bottom_shapes[0].clone());
        Ok(vec![bottom_shapes[0].clone()])
    }

    fn forward(
        &mut self,
        rt: &mut Runtime<S>,
        bottoms: &[BlobRef<'_, S>],
        tops: &[BlobRef<'_, S>],
        ctx: &LayerCtx,
    ) -> Result<f64, LayerError> {
        let in_place = std::ptr::eq(bottoms[0], tops[0]);
        if ctx.phase == Phase::Test {
            self.trained_forward = false;
            if in_place {
                return Ok(0.0);
            }
            // Out-of-place inference pass-through: identity mask, unit scale.
            let place = self.placement;
            let d = exec_device(rt, place)?;
            self.mask.write_host(rt)?.fill(S::one());
            let x = bottoms[0].borrow_mut().data.stage_in(rt, place)?;
            let mask = self.mask.stage_in(rt, place)?;
            let y = tops[0].borrow_mut().data.stage_out(rt, place)?;
            rt.launch(d, "Dropout_F", &[Arg::In(x), Arg::In(mask), Arg::Out(y), Arg::Scalar(1.0)])?;
            return Ok(0.0);
        }

        let seed = derive_seed(
            ctx.master_seed,
            stream::DROPOUT,
            ((ctx.layer_index as u64) << 40) ^ ctx.iter,
        );
        let values = dropout_mask::<S>(self.mask.count(), self.ratio, seed)
            .map_err(|e| shape_err(&self.spec.name, e.to_string()))?;
        self.mask.write_host(rt)?.copy_from_slice(&values);

        let place = self.placement;
        let d = exec_device(rt, place)?;
        let x = bottoms[0].borrow_mut().data.stage_in(rt, place)?;
        let mask = self.mask.stage_in(rt, place)?;
        let y = tops[0].borrow_mut().data.stage_out(rt, place)?;
        rt.launch(
            d,
            "Dropout_F",
            &[Arg::In(x), Arg::In(mask), Arg::Out(y), Arg::Scalar(self.scale())],
        )?;
        self.trained_forward = true;
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
        if !self.trained_forward {
            return Err(LayerError::BackwardBeforeForward { layer: self.spec.name.clone() });
        }
        let place = self.placement;
        let d = exec_device(rt, place)?;
        let top_diff = tops[0].borrow_mut().diff.stage_in(rt, place)?;
        let mask = self.mask.stage_in(rt, place)?;
        let bottom_diff = bottoms[0].borrow_mut().diff.stage_out(rt, place)?;
        rt.launch(
            d,
            "Dropout_B",
            &[Arg::In(top_diff), Arg::In(mask), Arg::Out(bottom_diff), Arg::Scalar(self.scale())],
        )?;
        Ok(())
    }
}
