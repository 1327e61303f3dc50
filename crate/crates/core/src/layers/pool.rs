//! Spatial pooling; max pooling records an argmax mask for exact backward
//! scattering.

use crate::device::{Arg, Placement, Runtime};
use crate::kernels::PoolGeometry;
use crate::memory::{SyncedTensor, TensorShape};
use crate::scalar::Scalar;

use super::{exec_device, shape_err, BlobRef, Layer, LayerCtx, LayerError, LayerParams, PoolMethod, PoolParams, LayerSpec};

pub struct PoolLayer<S: Scalar> {
    spec: LayerSpec,
    pp: PoolParams,
    placement: Placement,
    mask: SyncedTensor<S>,
    geom: Option<PoolGeometry>,
    batch: usize,
    channels: usize,
    forward_ran: bool,
}

impl<S: Scalar> PoolLayer<S> {
    pub fn new(spec: LayerSpec) -> Self {
        let pp = match &spec.params {
            LayerParams::Pooling(p) => p.clone(),
            _ => unreachable!("factory matched"),
        };
        PoolLayer {
            spec,
            pp,
            placement: Placement::Host,
            mask: SyncedTensor::new(TensorShape::new(&[1]).expect("static")),
            geom: None,
            batch: 0,
            channels: 0,
            forward_ran: false,
        }
    }

    fn geometry_scalars(&self) -> [Arg; 10] {
        let g = self.geom.as_ref().expect("setup ran");
        [
            Arg::Scalar(self.batch as f64),
            Arg::Scalar(self.channels as f64),
            Arg::Scalar(g.height as f64),
            Arg::Scalar(g.width as f64),
            Arg::Scalar(g.kernel_h as f64),
            Arg::Scalar(g.kernel_w as f64),
            Arg::Scalar(g.pad_h as f64),
            Arg::Scalar(g.pad_w as f64),
            Arg::Scalar(g.stride_h as f64),
            Arg::Scalar(g.stride_w as f64),
        ]
    }
}

impl<S: Scalar> Layer<S> for PoolLayer<S> {
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
        if bottom_shapes.len() != 1 || bottom_shapes[0].rank() != 4 {
            return Err(shape_err(&name, "pooling expects one 4-axis bottom"));
        }
        let (n, c, h, w) = bottom_shapes[0].dim4();
        let (kh, kw) = if self.pp.global { (h, w) } else { (self.pp.kernel_h, self.pp.kernel_w) };
        let geom = PoolGeometry::new(h, w, kh, kw, self.pp.pad_h, self.pp.pad_w, self.pp.stride_h, self.pp.stride_w)
            .map_err(|e| shape_err(&name, e.to_string()))?;
        let (oh, ow) = (geom.out_h(), geom.out_w());
        if matches!(self.pp.method, PoolMethod::Max) {
            self.mask.reshape(rt, TensorShape::new(&[n, c, oh, ow]).map_err(|e| shape_err(&name, e.to_string()))?);
        }
        self.geom = Some(geom);
        self.batch = n;
        self.channels = c;
        self.forward_ran = false;
        Ok(vec![TensorShape::new(&[n, c, oh, ow]).map_err(|e| shape_err(&name, e.to_string()))?])
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
        let bottom = bottoms[0].borrow_mut().data.stage_in(rt, place)?;
        let top = tops[0].borrow_mut().data.stage_out(rt, place)?;
        let scalars = self.geometry_scalars();
        match self.pp.method {
            PoolMethod::Max => {
                let mask = self.mask.stage_out(rt, place)?;
                let mut args = vec![Arg::In(bottom), Arg::Out(top), Arg::Out(mask)];
                args.extend_from_slice(&scalars);
                rt.launch(d, "Max_pool_F", &args)?;
            }
            PoolMethod::Ave => {
                let mut args = vec![Arg::In(bottom), Arg::Out(top)];
                args.extend_from_slice(&scalars);
                rt.launch(d, "Ave_pool_F", &args)?;
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
        if !propagate_down[0] {
            return Ok(());
        }
        if !self.forward_ran {
            return Err(LayerError::BackwardBeforeForward { layer: self.spec.name.clone() });
        }
        let place = self.placement;
        let d = exec_device(rt, place)?;
        let top_diff = tops[0].borrow_mut().diff.stage_in(rt, place)?;
        let bottom_diff = bottoms[0].borrow_mut().diff.stage_out(rt, place)?;
        let scalars = self.geometry_scalars();
        match self.pp.method {
            PoolMethod::Max => {
                let mask = self.mask.stage_in(rt, place)?;
                let mut args = vec![Arg::In(top_diff), Arg::In(mask), Arg::Out(bottom_diff)];
                args.extend_from_slice(&scalars);
                rt.launch(d, "Max_pool_B", &args)?;
            }
            PoolMethod::Ave => {
                let mut args = vec![Arg::In(top_diff), Arg::Out(bottom_diff)];
                args.extend_from_slice(&scalars);
                rt.launch(d, "Ave_pool_B", &args)?;
            }
        }
        Ok(())
    }
}
