//! Softmax, the fused softmax-loss head, and top-k accuracy.
//!
//! The loss head launches the softmax, the per-item negative log-likelihood
//! and an absolute-sum reduction, then reads the one-element sum back to the
//! host; on an accelerator placement that read-back is the only
//! device-to-host transfer a training pass needs.

use crate::device::{wrap, Arg, Placement, Runtime};
use crate::memory::{SyncedTensor, TensorShape};
use crate::scalar::Scalar;

use super::{exec_device, shape_err, BlobRef, Layer, LayerCtx, LayerError, LayerParams, LayerSpec};

fn ncs(shape: &TensorShape) -> (usize, usize, usize) {
    let n = shape.dim(0);
    let c = if shape.rank() > 1 { shape.dim(1) } else { 1 };
    (n, c, shape.count() / (n * c))
}

pub struct SoftmaxLayer<S: Scalar> {
    spec: LayerSpec,
    placement: Placement,
    dims: (usize, usize, usize),
    _marker: std::marker::PhantomData<S>,
}

impl<S: Scalar> SoftmaxLayer<S> {
    pub fn new(spec: LayerSpec) -> Self {
        SoftmaxLayer { spec, placement: Placement::Host, dims: (0, 0, 0), _marker: std::marker::PhantomData }
    }
}

impl<S: Scalar> Layer<S> for SoftmaxLayer<S> {
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
        if bottom_shapes.len() != 1 || bottom_shapes[0].rank() < 2 {
            return Err(shape_err(&self.spec.name, "softmax expects one bottom of rank >= 2"));
        }
        self.dims = ncs(&bottom_shapes[0]);
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
        let (n, c, s) = self.dims;
        let x = bottoms[0].borrow_mut().data.stage_in(rt, place)?;
        let p = tops[0].borrow_mut().data.stage_out(rt, place)?;
        rt.launch(
            d,
            "Softmax",
            &[Arg::In(x), Arg::Out(p), Arg::Scalar(n as f64), Arg::Scalar(c as f64), Arg::Scalar(s as f64)],
        )?;
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
        let (n, c, s) = self.dims;
        let p = tops[0].borrow_mut().data.stage_in(rt, place)?;
        let top_diff = tops[0].borrow_mut().diff.stage_in(rt, place)?;
        let bottom_diff = bottoms[0].borrow_mut().diff.stage_out(rt, place)?;
        rt.launch(
            d,
            "Softmax_B",
            &[
                Arg::In(p),
                Arg::In(top_diff),
                Arg::Out(bottom_diff),
                Arg::Scalar(n as f64),
                Arg::Scalar(c as f64),
                Arg::Scalar(s as f64),
            ],
        )?;
        Ok(())
    }
}

pub struct SoftmaxLossLayer<S: Scalar> {
    spec: LayerSpec,
    placement: Placement,
    prob: SyncedTensor<S>,
    per_loss: SyncedTensor<S>,
    sum: SyncedTensor<S>,
    dims: (usize, usize, usize),
    forward_ran: bool,
}

impl<S: Scalar> SoftmaxLossLayer<S> {
    pub fn new(spec: LayerSpec) -> Self {
        SoftmaxLossLayer {
            spec,
            placement: Placement::Host,
            prob: SyncedTensor::new(TensorShape::new(&[1]).expect("static")),
            per_loss: SyncedTensor::new(TensorShape::new(&[1]).expect("static")),
            sum: SyncedTensor::new(TensorShape::new(&[1]).expect("static")),
            dims: (0, 0, 0),
            forward_ran: false,
        }
    }
}

impl<S: Scalar> Layer<S> for SoftmaxLossLayer<S> {
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
        if bottom_shapes.len() != 2 {
            return Err(shape_err(&name, "loss expects scores and labels"));
        }
        let (n, c, s) = ncs(&bottom_shapes[0]);
        if bottom_shapes[1].count() != n * s {
            return Err(shape_err(
                &name,
                format!("labels {} do not pair with scores {}", bottom_shapes[1], bottom_shapes[0]),
            ));
        }
        self.dims = (n, c, s);
        self.prob.reshape(rt, bottom_shapes[0].clone());
        self.per_loss.reshape(rt, TensorShape::new(&[n * s]).map_err(|e| shape_err(&name, e.to_string()))?);
        self.sum.reshape(rt, TensorShape::new(&[1]).map_err(|e| shape_err(&name, e.to_string()))?);
        self.forward_ran = false;
        Ok(vec![TensorShape::new(&[1]).map_err(|e| shape_err(&name, e.to_string()))?])
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
        let (n, c, s) = self.dims;
        let scores = bottoms[0].borrow_mut().data.stage_in(rt, place)?;
        let prob = self.prob.stage_out(rt, place)?;
        rt.launch(
            d,
            "Softmax",
            &[Arg::In(scores), Arg::Out(prob), Arg::Scalar(n as f64), Arg::Scalar(c as f64), Arg::Scalar(s as f64)],
        )?;
        let prob_in = self.prob.stage_in(rt, place)?;
        let label = bottoms[1].borrow_mut().data.stage_in(rt, place)?;
        let per_loss = self.per_loss.stage_out(rt, place)?;
        rt.launch(
            d,
            "SoftmaxLoss_F",
            &[
                Arg::In(prob_in),
                Arg::In(label),
                Arg::Out(per_loss),
                Arg::Scalar(n as f64),
                Arg::Scalar(c as f64),
                Arg::Scalar(s as f64),
            ],
        )?;
        let per_loss_in = self.per_loss.stage_in(rt, place)?;
        let sum = self.sum.stage_out(rt, place)?;
        wrap::asum(rt, d, per_loss_in, sum)?;
        // The scalar comes back to the host: the one read a pass needs.
        let total = self.sum.read_host(rt)?[0].to_f64();
        let loss = total / (n * s) as f64;
        tops[0].borrow_mut().data.write_host(rt)?[0] = S::from_f64(loss);
        self.forward_ran = true;
        Ok(loss)
    }

    fn backward(
        &mut self,
        rt: &mut Runtime<S>,
        _tops: &[BlobRef<'_, S>],
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
        let (n, c, s) = self.dims;
        let prob = self.prob.stage_in(rt, place)?;
        let label = bottoms[1].borrow_mut().data.stage_in(rt, place)?;
        let bottom_diff = bottoms[0].borrow_mut().diff.stage_out(rt, place)?;
        rt.launch(
            d,
            "SoftmaxLoss_B",
            &[
                Arg::In(prob),
                Arg::In(label),
                Arg::Out(bottom_diff),
                Arg::Scalar(n as f64),
                Arg::Scalar(c as f64),
                Arg::Scalar(s as f64),
            ],
        )?;
        let weight = self.spec.loss_weight(0);
        wrap::scal(rt, d, weight / (n * s) as f64, bottom_diff)?;
        Ok(())
    }
}

/// Host-side top-k accuracy; an output-only layer with no kernels.
pub struct AccuracyLayer<S: Scalar> {
    spec: LayerSpec,
    placement: Placement,
    top_k: usize,
    dims: (usize, usize, usize),
    _marker: std::marker::PhantomData<S>,
}

impl<S: Scalar> AccuracyLayer<S> {
    pub fn new(spec: LayerSpec) -> Self {
        let top_k = match spec.params {
            LayerParams::Accuracy { top_k } => top_k,
            _ => unreachable!("factory matched"),
        };
        AccuracyLayer { spec, placement: Placement::Host, top_k, dims: (0, 0, 0), _marker: std::marker::PhantomData }
    }
}

impl<S: Scalar> Layer<S> for AccuracyLayer<S> {
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
        if bottom_shapes.len() != 2 {
            return Err(shape_err(&name, "accuracy expects scores and labels"));
        }
        self.dims = ncs(&bottom_shapes[0]);
        Ok(vec![TensorShape::new(&[1]).map_err(|e| shape_err(&name, e.to_string()))?])
    }

    fn forward(
        &mut self,
        rt: &mut Runtime<S>,
        bottoms: &[BlobRef<'_, S>],
        tops: &[BlobRef<'_, S>],
        _ctx: &LayerCtx,
    ) -> Result<f64, LayerError> {
        let (n, c, s) = self.dims;
        let scores = bottoms[0].borrow_mut().data.read_host(rt)?.to_vec();
        let labels = bottoms[1].borrow_mut().data.read_host(rt)?.to_vec();
        let mut hits = 0usize;
        for img in 0..n {
            for sp in 0..s {
                let label = labels[img * s + sp].to_f64() as usize;
                let score_of = |ch: usize| scores[img * c * s + ch * s + sp];
                let target = score_of(label);
                // Rank of the target score; strictly-greater count below k is a hit.
                let greater = (0..c).filter(|&ch| score_of(ch).to_f64() > target.to_f64()).count();
                if greater < self.top_k {
                    hits += 1;
                }
            }
        }
        let acc = hits as f64 / (n * s) as f64;
        tops[0].borrow_mut().data.write_host(rt)?[0] = S::from_f64(acc);
        Ok(0.0)
    }

    fn backward(
        &mut self,
        _rt: &mut Runtime<S>,
        _tops: &[BlobRef<'_, S>],
        _propagate_down: &[bool],
        _bottoms: &[BlobRef<'_, S>],
        _ctx: &LayerCtx,
    ) -> Result<(), LayerError> {
        Ok(())
    }
}
