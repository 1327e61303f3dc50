//! Fully connected layer. A single-item batch dispatches the forward pass to
//! the matrix-vector kernel; larger batches use one GEMM. The per-item bias
//! add is an axpy.

use crate::device::{wrap, Placement, Runtime};
use crate::memory::{Blob, SyncedTensor, TensorShape};
use crate::scalar::Scalar;

use super::{exec_device, fill_tensor, shape_err, BlobRef, IpParams, Layer, LayerCtx, LayerError, LayerParams, LayerSpec};

pub struct InnerProductLayer<S: Scalar> {
    spec: LayerSpec,
    ip: IpParams,
    placement: Placement,
    weight: Blob<S>,
    bias: Option<Blob<S>>,
    ones: SyncedTensor<S>,
    batch: usize,
    in_count: usize,
    forward_ran: bool,
}

impl<S: Scalar> InnerProductLayer<S> {
    pub fn new(spec: LayerSpec) -> Self {
        let ip = match &spec.params {
            LayerParams::InnerProduct(p) => p.clone(),
            _ => unreachable!("factory matched"),
        };
        InnerProductLayer {
            spec,
            ip,
            placement: Placement::Host,
            weight: Blob::new("weight", TensorShape::new(&[1]).expect("static")),
            bias: None,
            ones: SyncedTensor::new(TensorShape::new(&[1]).expect("static")),
            batch: 0,
            in_count: 0,
            forward_ran: false,
        }
    }
}

impl<S: Scalar> Layer<S> for InnerProductLayer<S> {
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
            return Err(shape_err(&name, "inner product expects one bottom"));
        }
        let n = bottom_shapes[0].dim(0);
        let in_count = bottom_shapes[0].inner_count();
        let out = self.ip.num_output;

        self.weight.reshape(
            rt,
            TensorShape::new(&[out, in_count]).map_err(|e| shape_err(&name, e.to_string()))?,
        );
        fill_tensor(
            rt,
            &mut self.weight.data,
            &self.ip.weight_filler,
            in_count,
            crate::rng::derive_seed(ctx.master_seed, crate::rng::stream::FILLER, ctx.layer_index as u64 * 2),
        )?;
        if self.ip.bias_term {
            let mut bias = Blob::new(
                "bias",
                TensorShape::new(&[out]).map_err(|e| shape_err(&name, e.to_string()))?,
            );
            fill_tensor(
                rt,
                &mut bias.data,
                &self.ip.bias_filler,
                in_count,
                crate::rng::derive_seed(ctx.master_seed, crate::rng::stream::FILLER, ctx.layer_index as u64 * 2 + 1),
            )?;
            self.bias = Some(bias);
        }
        self.ones.reshape(rt, TensorShape::new(&[n]).map_err(|e| shape_err(&name, e.to_string()))?);
        self.ones.write_host(rt)?.fill(S::one());

        self.batch = n;
        self.in_count = in_count;
        self.forward_ran = false;
        Ok(vec![TensorShape::new(&[n, out]).map_err(|e| shape_err(&name, e.to_string()))?])
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
        let out = self.ip.num_output;
        let k = self.in_count;
        let n = self.batch;

        let bottom = bottoms[0].borrow_mut().data.stage_in(rt, place)?;
        let top = tops[0].borrow_mut().data.stage_out(rt, place)?;
        let weight = self.weight.data.stage_in(rt, place)?;

        if n == 1 {
            wrap::gemv(rt, d, false, out, k, 1.0, weight, bottom, 0.0, top)?;
        } else {
            wrap::gemm(rt, d, false, true, n, out, k, 1.0, bottom, weight, 0.0, top)?;
        }
        if let Some(b) = &mut self.bias {
            let bias = b.data.stage_in(rt, place)?;
            for item in 0..n {
                wrap::axpy(rt, d, 1.0, bias, top.slice(item * out, out))?;
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
        let out = self.ip.num_output;
        let k = self.in_count;
        let n = self.batch;

        let top_diff = tops[0].borrow_mut().diff.stage_in(rt, place)?;
        let bottom_data = bottoms[0].borrow_mut().data.stage_in(rt, place)?;
        let weight_diff = self.weight.diff.stage_out(rt, place)?;

        wrap::gemm(rt, d, true, false, out, k, n, 1.0, top_diff, bottom_data, 1.0, weight_diff)?;

        if let Some(b) = &mut self.bias {
            let bias_diff = b.diff.stage_out(rt, place)?;
            let ones = self.ones.stage_in(rt, place)?;
            wrap::gemv(rt, d, true, n, out, 1.0, top_diff, ones, 1.0, bias_diff)?;
        }

        if propagate_down[0] {
            let weight = self.weight.data.stage_in(rt, place)?;
            let bottom_diff = bottoms[0].borrow_mut().diff.stage_out(rt, place)?;
            wrap::gemm(rt, d, false, false, n, k, out, 1.0, top_diff, weight, 0.0, bottom_diff)?;
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
}
