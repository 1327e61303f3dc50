//! Synchronized memory: each tensor tracks where its freshest copy lives and
//! performs lazy, counted transfers between host and registered devices.
//!
//! The topography is a hub: host memory in the middle, one optional device
//! binding per tensor. Moving between two devices always routes through the
//! host, so a cross-device move costs one read and one write.

use thiserror::Error;

use crate::device::{BufId, BufView, DeviceError, DeviceId, MemDomain, Placement, Runtime};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShapeError {
    #[error("tensor shape must have rank >= 1")]
    EmptyRank,
    #[error("extent {0} must be >= 1")]
    ZeroExtent(usize),
    #[error("element count overflows the index range")]
    Overflow,
}

/// Shape of a tensor: ordered positive extents. Activations use the
/// canonical 4-axis N,C,H,W; parameters may have any rank >= 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorShape {
    dims: Vec<usize>,
    count: usize,
}

impl TensorShape {
    pub fn new(dims: &[usize]) -> Result<Self, ShapeError> {
        if dims.is_empty() {
            return Err(ShapeError::EmptyRank);
        }
        let mut count: usize = 1;
        for (i, &d) in dims.iter().enumerate() {
            if d == 0 {
                return Err(ShapeError::ZeroExtent(i));
            }
            count = count.checked_mul(d).ok_or(ShapeError::Overflow)?;
        }
        Ok(TensorShape { dims: dims.to_vec(), count })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.dims[axis]
    }

    /// (N, C, H, W) with missing trailing axes read as 1. Panics on rank > 4.
    pub fn dim4(&self) -> (usize, usize, usize, usize) {
        assert!(self.rank() <= 4, "dim4 on rank {}", self.rank());
        let d = |i: usize| self.dims.get(i).copied().unwrap_or(1);
        (d(0), d(1), d(2), d(3))
    }

    /// Elements per outermost item (count / dims[0]).
    pub fn inner_count(&self) -> usize {
        self.count / self.dims[0]
    }
}

impl std::fmt::Display for TensorShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", d)?;
        }
        write!(f, "]")
    }
}

/// Which copy of a tensor is authoritative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Uninitialized,
    HostOnly,
    DeviceOnly(DeviceId),
    Synced(DeviceId),
}

/// Directional transfer counters; monotonically non-decreasing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransferStats {
    pub host_to_device_count: u64,
    pub device_to_host_count: u64,
    pub host_to_device_bytes: u64,
    pub device_to_host_bytes: u64,
}

/// Shape-carrying numeric buffer with a host/device head-state machine and
/// transfer counters.
#[derive(Debug)]
pub struct SyncedTensor<S: Scalar> {
    shape: TensorShape,
    head: Head,
    host: Option<BufId>,
    dev: Option<(DeviceId, BufId)>,
    stats: TransferStats,
    _marker: std::marker::PhantomData<S>,
}

impl<S: Scalar> SyncedTensor<S> {
    pub fn new(shape: TensorShape) -> Self {
        SyncedTensor {
            shape,
            head: Head::Uninitialized,
            host: None,
            dev: None,
            stats: TransferStats::default(),
            _marker: std::marker::PhantomData,
        }
    }

    pub fn from_dims(dims: &[usize]) -> Result<Self, ShapeError> {
        Ok(Self::new(TensorShape::new(dims)?))
    }

    pub fn shape(&self) -> &TensorShape {
        &self.shape
    }

    pub fn count(&self) -> usize {
        self.shape.count()
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn stats(&self) -> &TransferStats {
        &self.stats
    }

    pub fn bound_device(&self) -> Option<DeviceId> {
        self.dev.map(|(d, _)| d)
    }

    fn ensure_host_alloc(&mut self, rt: &mut Runtime<S>) -> BufId {
        match self.host {
            Some(id) => id,
            None => {
                // First touch zero-fills.
                let id = rt.alloc_host(self.count());
                self.host = Some(id);
                id
            }
        }
    }

    fn ensure_dev_alloc(&mut self, rt: &mut Runtime<S>, d: DeviceId) -> Result<BufId, DeviceError> {
        match self.dev {
            Some((bound, id)) if bound == d => Ok(id),
            Some((_, id)) => {
                // Bound to at most one device: rebinding frees the old buffer.
                rt.free(id);
                let nid = rt.alloc_on(d, self.count())?;
                self.dev = Some((d, nid));
                Ok(nid)
            }
            None => {
                let id = rt.alloc_on(d, self.count())?;
                self.dev = Some((d, id));
                Ok(id)
            }
        }
    }

    /// Makes the host copy fresh, pulling from a device if needed, and
    /// returns the host buffer. State afterwards is HostOnly or Synced.
    pub fn to_host(&mut self, rt: &mut Runtime<S>) -> Result<BufId, DeviceError> {
        match self.head {
            Head::Uninitialized => {
                let id = self.ensure_host_alloc(rt);
                self.head = Head::HostOnly;
                Ok(id)
            }
            Head::HostOnly | Head::Synced(_) => Ok(self.host.expect("host buffer present")),
            Head::DeviceOnly(d) => {
                let dev_buf = self.dev.expect("device buffer present").1;
                let host_id = self.ensure_host_alloc(rt);
                let n = self.count();
                rt.copy_between(d, BufView::new(dev_buf, 0, n), BufView::new(host_id, 0, n), false)?;
                self.stats.device_to_host_count += 1;
                self.stats.device_to_host_bytes += (n * S::ELEM.size_bytes()) as u64;
                self.head = Head::Synced(d);
                Ok(host_id)
            }
        }
    }

    /// Makes device `d`'s copy fresh, pushing from the host (or routing
    /// another device's copy through the host) as needed.
    pub fn to_device(&mut self, rt: &mut Runtime<S>, d: DeviceId) -> Result<BufId, DeviceError> {
        // A host-reference device operates on host memory directly.
        if rt.domain_of(d)? == MemDomain::Host {
            return self.to_host(rt);
        }
        match self.head {
            Head::Uninitialized => {
                let id = self.ensure_dev_alloc(rt, d)?;
                self.head = Head::DeviceOnly(d);
                Ok(id)
            }
            Head::DeviceOnly(cur) | Head::Synced(cur) if cur == d => {
                Ok(self.dev.expect("device buffer present").1)
            }
            Head::DeviceOnly(_) => {
                // Two hops: old device -> host, host -> new device.
                self.to_host(rt)?;
                self.upload(rt, d)
            }
            Head::HostOnly | Head::Synced(_) => self.upload(rt, d),
        }
    }

    fn upload(&mut self, rt: &mut Runtime<S>, d: DeviceId) -> Result<BufId, DeviceError> {
        let host_id = self.host.expect("host copy is fresh");
        let dev_id = self.ensure_dev_alloc(rt, d)?;
        let n = self.count();
        rt.copy_between(d, BufView::new(host_id, 0, n), BufView::new(dev_id, 0, n), true)?;
        self.stats.host_to_device_count += 1;
        self.stats.host_to_device_bytes += (n * S::ELEM.size_bytes()) as u64;
        self.head = Head::Synced(d);
        Ok(dev_id)
    }

    /// Read-only host view; zero-filled on first touch.
    pub fn read_host<'r>(&mut self, rt: &'r mut Runtime<S>) -> Result<&'r [S], DeviceError> {
        let id = self.to_host(rt)?;
        rt.host_slice(id)
    }

    /// Writable host view; any device copy becomes stale (not freed).
    pub fn write_host<'r>(&mut self, rt: &'r mut Runtime<S>) -> Result<&'r mut [S], DeviceError> {
        let id = self.to_host(rt)?;
        self.head = Head::HostOnly;
        rt.host_slice_mut(id)
    }

    /// Device handle for reading on `d`; uploads if the host is authoritative.
    pub fn read_device(&mut self, rt: &mut Runtime<S>, d: DeviceId) -> Result<BufView, DeviceError> {
        let id = self.to_device(rt, d)?;
        Ok(BufView::new(id, 0, self.count()))
    }

    /// Device handle for writing on `d`; the device copy becomes the only
    /// authoritative one.
    pub fn write_device(&mut self, rt: &mut Runtime<S>, d: DeviceId) -> Result<BufView, DeviceError> {
        let id = self.to_device(rt, d)?;
        if rt.domain_of(d)? == MemDomain::Host {
            self.head = Head::HostOnly;
        } else {
            self.head = Head::DeviceOnly(d);
        }
        Ok(BufView::new(id, 0, self.count()))
    }

    /// Full-tensor view for a launch on `target`, syncing for reads.
    pub fn stage_in(&mut self, rt: &mut Runtime<S>, target: Placement) -> Result<BufView, DeviceError> {
        match target {
            Placement::Host => {
                let id = self.to_host(rt)?;
                Ok(BufView::new(id, 0, self.count()))
            }
            Placement::Device(d) => self.read_device(rt, d),
        }
    }

    /// Full-tensor view for a launch that writes on `target`.
    pub fn stage_out(&mut self, rt: &mut Runtime<S>, target: Placement) -> Result<BufView, DeviceError> {
        match target {
            Placement::Host => {
                let id = self.to_host(rt)?;
                self.head = Head::HostOnly;
                Ok(BufView::new(id, 0, self.count()))
            }
            Placement::Device(d) => self.write_device(rt, d),
        }
    }

    /// Marks any synced device copy stale so the next device use re-uploads.
    /// Pulls to host first if the device holds the only fresh copy.
    pub fn invalidate_device(&mut self, rt: &mut Runtime<S>) -> Result<(), DeviceError> {
        match self.head {
            Head::Uninitialized | Head::HostOnly => Ok(()),
            Head::Synced(_) => {
                self.head = Head::HostOnly;
                Ok(())
            }
            Head::DeviceOnly(_) => {
                self.to_host(rt)?;
                self.head = Head::HostOnly;
                Ok(())
            }
        }
    }

    /// Overwrites contents from a slice (host side).
    pub fn fill_from(&mut self, rt: &mut Runtime<S>, values: &[S]) -> Result<(), DeviceError> {
        let n = self.count();
        if values.len() != n {
            return Err(DeviceError::SizeMismatch { expected: n, got: values.len() });
        }
        self.write_host(rt)?.copy_from_slice(values);
        Ok(())
    }

    /// Copies out to a fresh vector (host side).
    pub fn to_vec(&mut self, rt: &mut Runtime<S>) -> Result<Vec<S>, DeviceError> {
        Ok(self.read_host(rt)?.to_vec())
    }

    /// Releases both buffers and returns to Uninitialized.
    pub fn clear(&mut self, rt: &mut Runtime<S>) {
        if let Some(id) = self.host.take() {
            rt.free(id);
        }
        if let Some((_, id)) = self.dev.take() {
            rt.free(id);
        }
        self.head = Head::Uninitialized;
        self.stats = TransferStats::default();
    }

    /// Replaces the shape. Same element count keeps the contents; a different
    /// count releases the buffers.
    pub fn reshape(&mut self, rt: &mut Runtime<S>, shape: TensorShape) {
        if shape.count() != self.shape.count() {
            let stats = self.stats;
            self.clear(rt);
            self.stats = stats;
        }
        self.shape = shape;
    }
}

/// Named pair of tensors: activations or parameters (`data`) and their
/// gradients (`diff`), always shape-equal.
#[derive(Debug)]
pub struct Blob<S: Scalar> {
    pub name: String,
    pub data: SyncedTensor<S>,
    pub diff: SyncedTensor<S>,
}

impl<S: Scalar> Blob<S> {
    pub fn new(name: impl Into<String>, shape: TensorShape) -> Self {
        Blob {
            name: name.into(),
            data: SyncedTensor::new(shape.clone()),
            diff: SyncedTensor::new(shape),
        }
    }

    pub fn shape(&self) -> &TensorShape {
        debug_assert_eq!(self.data.shape(), self.diff.shape());
        self.data.shape()
    }

    pub fn count(&self) -> usize {
        self.data.count()
    }

    /// Reshapes data and diff together, preserving the shape-equality
    /// invariant.
    pub fn reshape(&mut self, rt: &mut Runtime<S>, shape: TensorShape) {
        self.data.reshape(rt, shape.clone());
        self.diff.reshape(rt, shape);
    }
}
