//! A heterogeneous mini deep-learning framework: a kernel library, a device
//! runtime with synchronous launches and profiling, a host/device memory
//! state machine, a layer/net/solver stack, text-format network and solver
//! parsers, and dataset ingestion.
//!
//! The accelerator is emulated: kernels run the same scalar code as the host
//! backend, while transfers and launch durations are accounted against a
//! bandwidth cost model, so placement experiments and kernel statistics are
//! reproducible on a desk.

pub mod device;
pub mod ingestion;
pub mod kernels;
pub mod layers;
pub mod memory;
pub mod net;
pub mod netdef;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod solver;

pub use device::{Backend, DeviceCostModel, DeviceId, Placement, ProfileEvent, Runtime};
pub use layers::Phase;
pub use memory::{Blob, Head, SyncedTensor, TensorShape, TransferStats};
pub use net::{BuildOptions, Net};
pub use scalar::{ElemType, Scalar};

/// Working-precision aliases; `f32` is the default element type.
pub type Runtime32 = Runtime<f32>;
pub type Runtime64 = Runtime<f64>;
pub type Tensor32 = SyncedTensor<f32>;
pub type Tensor64 = SyncedTensor<f64>;
pub type Blob32 = Blob<f32>;
pub type Blob64 = Blob<f64>;
