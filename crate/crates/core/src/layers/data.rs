//! The data layer serves batches from an attached in-memory dataset, or
//! deterministic synthetic inputs when none is attached (benchmark runs).
//! Training phases shuffle per epoch with a seed-derived order; the cursor is
//! a plain call counter so a restored run resumes on the exact same batches.

use std::sync::Arc;

use crate::device::{Placement, Runtime};
use crate::ingestion::Dataset;
use crate::memory::TensorShape;
use crate::rng::{derive_seed, stream, Xoshiro256};
use crate::scalar::Scalar;

use super::{shape_err, BlobRef, DataParams, Layer, LayerCtx, LayerError, LayerParams, LayerSpec, Phase};

/// Classes synthesized for label tops when no dataset is attached; small
/// enough to stay valid for every classifier head.
const SYNTH_CLASSES: usize = 10;

pub struct DataLayer<S: Scalar> {
    spec: LayerSpec,
    dp: DataParams,
    placement: Placement,
    source: Option<Arc<Dataset>>,
    item_shape: (usize, usize, usize),
    batch: usize,
    calls: u64,
    shuffle: bool,
    epoch_order: Option<(u64, Vec<u32>)>,
    _marker: std::marker::PhantomData<S>,
}

impl<S: Scalar> DataLayer<S> {
    pub fn new(spec: LayerSpec) -> Self {
        let dp = match &spec.params {
            LayerParams::Data(p) => p.clone(),
            _ => unreachable!("factory matched"),
        };
        DataLayer {
            spec,
            dp,
            placement: Placement::Host,
            source: None,
            item_shape: (0, 0, 0),
            batch: 0,
            calls: 0,
            shuffle: false,
            epoch_order: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn attach(&mut self, source: Arc<Dataset>) {
        self.source = Some(source);
    }

    pub fn set_batch(&mut self, batch: usize) {
        self.dp.batch_size = batch;
    }

    /// Forward-call counter, used to resume deterministically.
    pub fn cursor(&self) -> u64 {
        self.calls
    }

    pub fn set_cursor(&mut self, calls: u64) {
        self.calls = calls;
        self.epoch_order = None;
    }

    fn order_for_epoch(&mut self, epoch: u64, len: usize, master_seed: u64) -> &[u32] {
        let stale = match &self.epoch_order {
            Some((cached, _)) => *cached != epoch,
            None => true,
        };
        if stale {
            let mut order: Vec<u32> = (0..len as u32).collect();
            if self.shuffle {
                let mut rng = Xoshiro256::seed_from(derive_seed(master_seed, stream::SHUFFLE, epoch));
                rng.shuffle(&mut order);
            }
            self.epoch_order = Some((epoch, order));
        }
        &self.epoch_order.as_ref().expect("just filled").1
    }
}

impl<S: Scalar> Layer<S> for DataLayer<S> {
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
        ctx: &LayerCtx,
    ) -> Result<Vec<TensorShape>, LayerError> {
        let name = self.spec.name.clone();
        if !bottom_shapes.is_empty() {
            return Err(shape_err(&name, "data layers take no bottoms"));
        }
        self.batch = self.dp.batch_size.max(1);
        self.item_shape = match &self.source {
            Some(ds) => {
                let (_, c, h, w) = ds.shape;
                (c, h, w)
            }
            // Database-backed descriptions carry no shape: a crop size means
            // a 3-channel crop; otherwise assume the 1x28x28 digit layout.
            None => match self.dp.crop_size {
                Some(crop) => (3, crop, crop),
                None => (1, 28, 28),
            },
        };
        self.shuffle = ctx.phase == Phase::Train;
        self.calls = 0;
        self.epoch_order = None;

        let (c, h, w) = self.item_shape;
        let mut tops = vec![TensorShape::new(&[self.batch, c, h, w]).map_err(|e| shape_err(&name, e.to_string()))?];
        if self.spec.tops.len() > 1 {
            tops.push(TensorShape::new(&[self.batch]).map_err(|e| shape_err(&name, e.to_string()))?);
        }
        Ok(tops)
    }

    fn forward(
        &mut self,
        rt: &mut Runtime<S>,
        _bottoms: &[BlobRef<'_, S>],
        tops: &[BlobRef<'_, S>],
        ctx: &LayerCtx,
    ) -> Result<f64, LayerError> {
        let batch = self.batch;
        let scale = S::from_f64(self.dp.scale);
        let item = {
            let (c, h, w) = self.item_shape;
            c * h * w
        };
        let mut labels = vec![S::zero(); batch];

        match self.source.clone() {
            Some(ds) => {
                let len = ds.len();
                let base = self.calls * batch as u64;
                let master = ctx.master_seed;
                // Borrow the top blob once; fill items straight into it.
                let mut top0 = tops[0].borrow_mut();
                let data = top0.data.write_host(rt)?;
                for i in 0..batch {
                    let pos = base + i as u64;
                    let epoch = pos / len as u64;
                    let within = (pos % len as u64) as usize;
                    let index = self.order_for_epoch(epoch, len, master)[within] as usize;
                    let src = ds.image(index);
                    for (dst, &v) in data[i * item..(i + 1) * item].iter_mut().zip(src) {
                        *dst = S::from_f64(v as f64) * scale;
                    }
                    labels[i] = S::from_f64(ds.labels[index] as f64);
                }
            }
            None => {
                let seed = derive_seed(ctx.master_seed, stream::TIME_INPUT, self.calls);
                let mut rng = Xoshiro256::seed_from(seed);
                let mut top0 = tops[0].borrow_mut();
                let data = top0.data.write_host(rt)?;
                for v in data.iter_mut() {
                    *v = S::from_f64(rng.next_f64()) * scale;
                }
                for label in labels.iter_mut() {
                    *label = S::from_f64(rng.below(SYNTH_CLASSES) as f64);
                }
            }
        }

        if tops.len() > 1 {
            tops[1].borrow_mut().data.write_host(rt)?.copy_from_slice(&labels);
        }
        self.calls += 1;
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

    fn attach_dataset(&mut self, source: Arc<Dataset>) {
        self.attach(source);
    }

    fn set_batch_size(&mut self, batch: usize) {
        self.set_batch(batch);
    }

    fn data_cursor(&self) -> Option<u64> {
        Some(self.cursor())
    }

    fn set_data_cursor(&mut self, calls: u64) {
        self.set_cursor(calls);
    }
}
