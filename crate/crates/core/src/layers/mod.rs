//! The class layer: typed network layers composing runtime kernel launches
//! into forward/backward passes over blobs, with per-layer host/device
//! placement and automatic tensor synchronization.

use std::cell::RefCell;

use thiserror::Error;

use crate::device::{DeviceError, DeviceId, Placement, Runtime};
use crate::memory::{Blob, SyncedTensor, TensorShape};
use crate::rng::Xoshiro256;
use crate::scalar::Scalar;

pub mod concat;
pub mod conv;
pub mod data;
pub mod elementwise;
pub mod ip;
pub mod lrn;
pub mod pool;
pub mod softmax;
pub mod spec;

pub use spec::{
    ConvParams, DataParams, Filler, IpParams, LayerParams, LayerSpec, ParamSpec, Phase,
    PoolMethod, PoolParams,
};

#[derive(Debug, Error)]
pub enum LayerError {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("layer '{layer}': {message}")]
    Shape { layer: String, message: String },
    #[error("layer '{layer}': backward called before forward")]
    BackwardBeforeForward { layer: String },
    #[error("layer '{layer}': {message}")]
    Unsupported { layer: String, message: String },
}

pub(crate) fn shape_err(layer: &str, message: impl Into<String>) -> LayerError {
    LayerError::Shape { layer: layer.to_string(), message: message.into() }
}

/// Per-call context a layer needs beyond its blobs.
#[derive(Debug, Clone, Copy)]
pub struct LayerCtx {
    pub phase: Phase,
    /// Current forward pass index (training iteration on train nets).
    pub iter: u64,
    pub master_seed: u64,
    pub layer_index: usize,
}

pub type BlobRef<'a, S> = &'a RefCell<Blob<S>>;

/// One network layer. Setup computes top shapes and allocates parameters;
/// forward/backward compose kernel launches at the layer's placement.
pub trait Layer<S: Scalar> {
    fn spec(&self) -> &LayerSpec;

    fn placement(&self) -> Placement;

    fn set_placement(&mut self, placement: Placement);

    fn setup(
        &mut self,
        rt: &mut Runtime<S>,
        bottom_shapes: &[TensorShape],
        ctx: &LayerCtx,
    ) -> Result<Vec<TensorShape>, LayerError>;

    /// Runs the layer; loss layers return their (unweighted) scalar loss.
    fn forward(
        &mut self,
        rt: &mut Runtime<S>,
        bottoms: &[BlobRef<'_, S>],
        tops: &[BlobRef<'_, S>],
        ctx: &LayerCtx,
    ) -> Result<f64, LayerError>;

    fn backward(
        &mut self,
        rt: &mut Runtime<S>,
        tops: &[BlobRef<'_, S>],
        propagate_down: &[bool],
        bottoms: &[BlobRef<'_, S>],
        ctx: &LayerCtx,
    ) -> Result<(), LayerError>;

    /// Learnable parameter blobs (weights before biases).
    fn params(&mut self) -> Vec<&mut Blob<S>> {
        Vec::new()
    }

    /// Long-lived tensors kept resident on a device between iterations
    /// (parameter data and bias multipliers); invalidated by the
    /// upload-per-iteration emulation so every pass re-uploads them.
    fn resident_tensors(&mut self) -> Vec<&mut SyncedTensor<S>> {
        Vec::new()
    }

    /// Data layers accept a dataset; a no-op elsewhere.
    fn attach_dataset(&mut self, _source: std::sync::Arc<crate::ingestion::Dataset>) {}

    /// Data layers accept a batch override before setup; a no-op elsewhere.
    fn set_batch_size(&mut self, _batch: usize) {}

    /// Data layers report their forward-call cursor.
    fn data_cursor(&self) -> Option<u64> {
        None
    }

    fn set_data_cursor(&mut self, _calls: u64) {}

    /// Convolution layers accept the column-buffer retention policy.
    fn set_retain_col(&mut self, _retain: bool) {}
}

/// Device a placement launches on.
pub(crate) fn exec_device<S: Scalar>(
    rt: &Runtime<S>,
    placement: Placement,
) -> Result<DeviceId, DeviceError> {
    match placement {
        Placement::Host => rt.host_device(),
        Placement::Device(d) => Ok(d),
    }
}

/// Fills a tensor host-side from an initialization policy.
pub(crate) fn fill_tensor<S: Scalar>(
    rt: &mut Runtime<S>,
    tensor: &mut SyncedTensor<S>,
    filler: &Filler,
    fan_in: usize,
    seed: u64,
) -> Result<(), LayerError> {
    let view = tensor.write_host(rt)?;
    let mut rng = Xoshiro256::seed_from(seed);
    match filler {
        Filler::Constant(v) => view.fill(S::from_f64(*v)),
        Filler::Xavier => {
            let bound = (3.0 / fan_in.max(1) as f64).sqrt();
            for v in view.iter_mut() {
                *v = S::from_f64(rng.uniform(-bound, bound));
            }
        }
        Filler::Gaussian { mean, std } => {
            for v in view.iter_mut() {
                *v = S::from_f64(rng.gaussian(*mean, *std));
            }
        }
        Filler::Uniform { min, max } => {
            for v in view.iter_mut() {
                *v = S::from_f64(rng.uniform(*min, *max));
            }
        }
    }
    Ok(())
}

/// Instantiates the layer implementation for a description.
pub fn build_layer<S: Scalar>(spec: &LayerSpec) -> Result<Box<dyn Layer<S>>, LayerError> {
    Ok(match &spec.params {
        LayerParams::Data(_) => Box::new(data::DataLayer::new(spec.clone())),
        LayerParams::Convolution(_) => Box::new(conv::ConvLayer::new(spec.clone())?),
        LayerParams::Pooling(_) => Box::new(pool::PoolLayer::new(spec.clone())),
        LayerParams::InnerProduct(_) => Box::new(ip::InnerProductLayer::new(spec.clone())),
        LayerParams::ReLU { .. } => Box::new(elementwise::ReluLayer::new(spec.clone())),
        LayerParams::Lrn(_) => Box::new(lrn::LrnLayer::new(spec.clone())),
        LayerParams::Dropout { .. } => Box::new(elementwise::DropoutLayer::new(spec.clone())),
        LayerParams::Concat { .. } => Box::new(concat::ConcatLayer::new(spec.clone())),
        LayerParams::Split => Box::new(concat::SplitLayer::new(spec.clone())),
        LayerParams::Softmax => Box::new(softmax::SoftmaxLayer::new(spec.clone())),
        LayerParams::SoftmaxWithLoss => Box::new(softmax::SoftmaxLossLayer::new(spec.clone())),
        LayerParams::Accuracy { .. } => Box::new(softmax::AccuracyLayer::new(spec.clone())),
    })
}
