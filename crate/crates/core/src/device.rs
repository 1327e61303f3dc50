//! Device runtime: device registration, buffer lifecycle, synchronous kernel
//! launches with per-launch profiling, and the emulated accelerator's
//! virtual-time cost model.
//!
//! Two backends exist. The host-reference backend executes kernels against
//! host memory and reports wall-clock durations. The emulated accelerator
//! owns a separate memory domain reachable only through counted
//! `Write_Buffer`/`Read_Buffer` transfers, and reports virtual durations
//! derived from reference bandwidths and per-kernel efficiency ratios. Both
//! backends run the same kernel code, so outputs are bit-identical and only
//! the accounting differs.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use thiserror::Error;

use crate::kernels::KernelError;
use crate::scalar::Scalar;

/// Identifier of a registered device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DeviceId(pub usize);

impl std::fmt::Display for DeviceId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "device{}", self.0)
    }
}

/// Identifier of a runtime-owned buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufId(pub u64);

/// A bounded view into a buffer, in elements. Kernel launches operate on
/// views so per-item work (one image of a batch) can address a sub-range.
#[derive(Debug, Clone, Copy)]
pub struct BufView {
    pub id: BufId,
    pub offset: usize,
    pub len: usize,
}

impl BufView {
    pub fn new(id: BufId, offset: usize, len: usize) -> Self {
        BufView { id, offset, len }
    }

    /// A sub-view relative to this view.
    pub fn slice(&self, offset: usize, len: usize) -> BufView {
        BufView {
            id: self.id,
            offset: self.offset + offset,
            len,
        }
    }
}

/// Execution backend kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    HostReference,
    EmulatedAccelerator,
}

/// Memory domain a buffer lives in. Host-reference devices share the host
/// domain; each emulated accelerator owns its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemDomain {
    Host,
    Device(DeviceId),
}

/// Where a layer or an update runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Host,
    Device(DeviceId),
}

/// Kernel grouping mirroring the runtime's registry organization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelGroup {
    LayerRelated,
    BlasRelated,
    SolverRelated,
}

/// Authoring style annotation; informational only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelStyle {
    NdRange,
    SingleWorkItem,
}

/// Role of one launch argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgRole {
    BufferIn,
    BufferOut,
    BufferInOut,
    Scalar,
}

/// One slot of a kernel signature.
#[derive(Debug, Clone)]
pub struct ArgSpec {
    pub role: ArgRole,
    pub semantic: &'static str,
}

impl ArgSpec {
    pub fn input(semantic: &'static str) -> Self {
        ArgSpec { role: ArgRole::BufferIn, semantic }
    }
    pub fn output(semantic: &'static str) -> Self {
        ArgSpec { role: ArgRole::BufferOut, semantic }
    }
    pub fn inout(semantic: &'static str) -> Self {
        ArgSpec { role: ArgRole::BufferInOut, semantic }
    }
    pub fn scalar(semantic: &'static str) -> Self {
        ArgSpec { role: ArgRole::Scalar, semantic }
    }
}

/// Registry entry describing a launchable kernel.
#[derive(Debug, Clone)]
pub struct KernelDescriptor {
    pub name: String,
    pub group: KernelGroup,
    pub style: KernelStyle,
    pub signature: Vec<ArgSpec>,
}

/// Arguments as passed to `launch`.
#[derive(Debug, Clone, Copy)]
pub enum Arg {
    In(BufView),
    Out(BufView),
    InOut(BufView),
    Scalar(f64),
}

impl Arg {
    fn role(&self) -> ArgRole {
        match self {
            Arg::In(_) => ArgRole::BufferIn,
            Arg::Out(_) => ArgRole::BufferOut,
            Arg::InOut(_) => ArgRole::BufferInOut,
            Arg::Scalar(_) => ArgRole::Scalar,
        }
    }

    fn view(&self) -> Option<BufView> {
        match self {
            Arg::In(v) | Arg::Out(v) | Arg::InOut(v) => Some(*v),
            Arg::Scalar(_) => None,
        }
    }
}

/// Kernel arguments resolved to slices, handed to the kernel implementation.
/// `ins`, `outs` and `scalars` keep the relative order of the signature.
pub struct KernelArgs<'a, S> {
    pub ins: Vec<&'a [S]>,
    pub outs: Vec<&'a mut [S]>,
    pub scalars: Vec<f64>,
}

pub type KernelFn<S> = fn(KernelArgs<'_, S>) -> Result<(), KernelError>;

/// Registry of kernels in three groups; every launch must name an entry.
pub struct KernelRegistry<S: Scalar> {
    entries: HashMap<String, (KernelDescriptor, KernelFn<S>)>,
}

impl<S: Scalar> KernelRegistry<S> {
    pub fn empty() -> Self {
        KernelRegistry { entries: HashMap::new() }
    }

    pub fn register(&mut self, desc: KernelDescriptor, f: KernelFn<S>) {
        let prev = self.entries.insert(desc.name.clone(), (desc, f));
        assert!(prev.is_none(), "duplicate kernel registration");
    }

    pub fn get(&self, name: &str) -> Option<&(KernelDescriptor, KernelFn<S>)> {
        self.entries.get(name)
    }

    pub fn names(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.entries.keys().map(|s| s.as_str()).collect();
        v.sort_unstable();
        v
    }

    pub fn descriptor(&self, name: &str) -> Option<&KernelDescriptor> {
        self.entries.get(name).map(|(d, _)| d)
    }
}

/// One launch's accounting record.
#[derive(Debug, Clone)]
pub struct ProfileEvent {
    pub kernel: String,
    pub device: DeviceId,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub duration_ms: f64,
    /// Bandwidth efficiency ratio on the emulated backend; absent for
    /// wall-clock (host) events.
    pub efficiency: Option<f64>,
    pub seq: u64,
}

/// Reference bandwidths and per-kernel efficiency ratios used to assign
/// virtual time on the emulated accelerator.
#[derive(Debug, Clone)]
pub struct DeviceCostModel {
    /// DDR reference bandwidth in bytes/ms.
    pub ddr_ref_bandwidth: f64,
    /// PCIe reference bandwidth in bytes/ms.
    pub pcie_ref_bandwidth: f64,
    /// Measured PCIe bandwidth in bytes/ms; transfers are billed at this.
    pub pcie_effective_bandwidth: f64,
    /// kernel name -> DDR efficiency ratio in (0, 1].
    pub kernel_efficiency: HashMap<String, f64>,
    /// Ratio applied to kernels absent from the map.
    pub fallback_efficiency: f64,
}

/// 14928 MB/s DDR reference (decimal megabytes), in bytes/ms.
pub const DDR_REF_BYTES_PER_MS: f64 = 14_928_000.0;
/// 15.75 GB/s PCIe Gen3 x16 reference, in bytes/ms.
pub const PCIE_REF_BYTES_PER_MS: f64 = 15_750_000.0;
/// 1.906 GB/s measured PCIe bandwidth, in bytes/ms.
pub const PCIE_EFF_BYTES_PER_MS: f64 = 1_906_000.0;

const DEFAULT_EFFICIENCY: &[(&str, f64)] = &[
    ("Ave_pool_B", 0.36),
    ("Ave_pool_F", 0.39),
    ("Col2im", 0.54),
    ("Concat", 0.10),
    ("Bias", 0.12),
    ("Dropout_B", 0.10),
    ("Dropout_F", 0.10),
    ("Gemm", 0.77),
    ("Gemv", 0.81),
    ("Im2col", 0.42),
    ("LRN_Diff", 0.43),
    ("LRN_Output", 0.16),
    ("LRN_Scale", 0.34),
    ("Max_pool_B", 0.62),
    ("Max_pool_F", 0.60),
    ("ReLU_B", 0.17),
    ("ReLU_F", 0.10),
    ("Split", 0.11),
    ("Add", 0.17),
    ("Apy", 0.20),
    ("Scale", 0.11),
];

impl Default for DeviceCostModel {
    fn default() -> Self {
        let kernel_efficiency = DEFAULT_EFFICIENCY
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        DeviceCostModel {
            ddr_ref_bandwidth: DDR_REF_BYTES_PER_MS,
            pcie_ref_bandwidth: PCIE_REF_BYTES_PER_MS,
            pcie_effective_bandwidth: PCIE_EFF_BYTES_PER_MS,
            kernel_efficiency,
            fallback_efficiency: 0.10,
        }
    }
}

impl DeviceCostModel {
    pub fn validate(&self) -> Result<(), DeviceError> {
        let bw_ok = self.ddr_ref_bandwidth > 0.0
            && self.pcie_ref_bandwidth > 0.0
            && self.pcie_effective_bandwidth > 0.0
            && self.fallback_efficiency > 0.0
            && self.fallback_efficiency <= 1.0;
        if !bw_ok {
            return Err(DeviceError::InvalidCostModel);
        }
        for ratio in self.kernel_efficiency.values() {
            if !(*ratio > 0.0 && *ratio <= 1.0) {
                return Err(DeviceError::InvalidCostModel);
            }
        }
        Ok(())
    }

    pub fn efficiency(&self, kernel: &str) -> f64 {
        self.kernel_efficiency
            .get(kernel)
            .copied()
            .unwrap_or(self.fallback_efficiency)
    }

    /// Ratio reported for PCIe transfers.
    pub fn transfer_efficiency(&self) -> f64 {
        self.pcie_effective_bandwidth / self.pcie_ref_bandwidth
    }
}

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("unknown device id {0}")]
    UnknownDevice(DeviceId),
    #[error("no host-reference device registered")]
    NoHostDevice,
    #[error("unknown buffer id {0:?}")]
    UnknownBuffer(BufId),
    #[error("buffer {buffer:?} lives in another memory domain than {device}")]
    WrongDomain { buffer: BufId, device: DeviceId },
    #[error("buffer view out of bounds: offset {offset} + len {len} > {buf_len}")]
    OutOfBounds { offset: usize, len: usize, buf_len: usize },
    #[error("size mismatch: expected {expected} elements, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("unknown kernel '{0}'")]
    UnknownKernel(String),
    #[error("kernel '{kernel}' signature mismatch: {detail}")]
    SignatureMismatch { kernel: String, detail: String },
    #[error("aliased write: buffer {0:?} passed to more than one writable argument")]
    AliasedWrite(BufId),
    #[error("invalid cost model: bandwidths must be positive, ratios in (0,1]")]
    InvalidCostModel,
    #[error("kernel '{kernel}' failed: {source}")]
    Kernel {
        kernel: String,
        #[source]
        source: KernelError,
    },
}

struct DeviceState {
    backend: Backend,
    cost_model: Option<DeviceCostModel>,
    next_seq: u64,
    virtual_ms: f64,
    events: Vec<ProfileEvent>,
}

struct Buffer<S> {
    home: MemDomain,
    data: Vec<S>,
}

/// The runtime owning devices, buffers and the kernel registry.
pub struct Runtime<S: Scalar> {
    devices: Vec<DeviceState>,
    buffers: HashMap<u64, Buffer<S>>,
    next_buf: u64,
    registry: KernelRegistry<S>,
    /// Wall time spent inside launch and transfer bodies, for overhead
    /// accounting on emulated runs.
    exec_wall_ms: f64,
}

/// Per-device event-sequence watermark; reports are taken "since" one.
#[derive(Debug, Clone, Default)]
pub struct Watermark(pub Vec<u64>);

impl<S: Scalar> Default for Runtime<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Runtime<S> {
    /// Runtime with the full default kernel registry.
    pub fn new() -> Self {
        Runtime {
            devices: Vec::new(),
            buffers: HashMap::new(),
            next_buf: 0,
            registry: crate::kernels::default_registry::<S>(),
            exec_wall_ms: 0.0,
        }
    }

    pub fn registry(&self) -> &KernelRegistry<S> {
        &self.registry
    }

    /// Registers a backend and returns its fresh id. An emulated accelerator
    /// gets the default cost model when none is supplied.
    pub fn register_device(
        &mut self,
        backend: Backend,
        model: Option<DeviceCostModel>,
    ) -> Result<DeviceId, DeviceError> {
        let cost_model = match backend {
            Backend::HostReference => None,
            Backend::EmulatedAccelerator => {
                let m = model.unwrap_or_default();
                m.validate()?;
                Some(m)
            }
        };
        let id = DeviceId(self.devices.len());
        self.devices.push(DeviceState {
            backend,
            cost_model,
            next_seq: 0,
            virtual_ms: 0.0,
            events: Vec::new(),
        });
        Ok(id)
    }

    pub fn register_host(&mut self) -> DeviceId {
        self.register_device(Backend::HostReference, None)
            .expect("host registration cannot fail")
    }

    pub fn register_emulated(&mut self, model: Option<DeviceCostModel>) -> Result<DeviceId, DeviceError> {
        self.register_device(Backend::EmulatedAccelerator, model)
    }

    /// First registered host-reference device.
    pub fn host_device(&self) -> Result<DeviceId, DeviceError> {
        self.devices
            .iter()
            .position(|d| d.backend == Backend::HostReference)
            .map(DeviceId)
            .ok_or(DeviceError::NoHostDevice)
    }

    pub fn backend(&self, d: DeviceId) -> Result<Backend, DeviceError> {
        self.device(d).map(|s| s.backend)
    }

    pub fn cost_model(&self, d: DeviceId) -> Result<Option<&DeviceCostModel>, DeviceError> {
        self.device(d).map(|s| s.cost_model.as_ref())
    }

    /// Memory domain a device operates on.
    pub fn domain_of(&self, d: DeviceId) -> Result<MemDomain, DeviceError> {
        Ok(match self.device(d)?.backend {
            Backend::HostReference => MemDomain::Host,
            Backend::EmulatedAccelerator => MemDomain::Device(d),
        })
    }

    fn device(&self, d: DeviceId) -> Result<&DeviceState, DeviceError> {
        self.devices.get(d.0).ok_or(DeviceError::UnknownDevice(d))
    }

    // ---- buffer lifecycle ----

    fn alloc(&mut self, home: MemDomain, len: usize) -> BufId {
        let id = BufId(self.next_buf);
        self.next_buf += 1;
        self.buffers.insert(id.0, Buffer { home, data: vec![S::zero(); len] });
        id
    }

    /// Zero-filled buffer in the host domain.
    pub fn alloc_host(&mut self, len: usize) -> BufId {
        self.alloc(MemDomain::Host, len)
    }

    /// Zero-filled buffer in the memory domain of device `d`.
    pub fn alloc_on(&mut self, d: DeviceId, len: usize) -> Result<BufId, DeviceError> {
        let home = self.domain_of(d)?;
        Ok(self.alloc(home, len))
    }

    pub fn free(&mut self, id: BufId) {
        self.buffers.remove(&id.0);
    }

    pub fn buf_len(&self, id: BufId) -> Result<usize, DeviceError> {
        self.buffers
            .get(&id.0)
            .map(|b| b.data.len())
            .ok_or(DeviceError::UnknownBuffer(id))
    }

    pub fn buf_domain(&self, id: BufId) -> Result<MemDomain, DeviceError> {
        self.buffers
            .get(&id.0)
            .map(|b| b.home)
            .ok_or(DeviceError::UnknownBuffer(id))
    }

    /// Read-only view of a host-domain buffer. Device-domain buffers are
    /// reachable only through `enqueue_read`, which is what keeps the
    /// transfer accounting honest.
    pub fn host_slice(&self, id: BufId) -> Result<&[S], DeviceError> {
        let buf = self.buffers.get(&id.0).ok_or(DeviceError::UnknownBuffer(id))?;
        match buf.home {
            MemDomain::Host => Ok(&buf.data),
            MemDomain::Device(d) => Err(DeviceError::WrongDomain { buffer: id, device: d }),
        }
    }

    pub fn host_slice_mut(&mut self, id: BufId) -> Result<&mut [S], DeviceError> {
        let buf = self.buffers.get_mut(&id.0).ok_or(DeviceError::UnknownBuffer(id))?;
        match buf.home {
            MemDomain::Host => Ok(&mut buf.data),
            MemDomain::Device(d) => Err(DeviceError::WrongDomain { buffer: id, device: d }),
        }
    }

    fn check_view(&self, view: BufView) -> Result<(), DeviceError> {
        let len = self.buf_len(view.id)?;
        if view.offset + view.len > len {
            return Err(DeviceError::OutOfBounds { offset: view.offset, len: view.len, buf_len: len });
        }
        Ok(())
    }

    fn check_owned_by(&self, view: BufView, d: DeviceId) -> Result<(), DeviceError> {
        self.check_view(view)?;
        let home = self.buf_domain(view.id)?;
        if home != self.domain_of(d)? {
            return Err(DeviceError::WrongDomain { buffer: view.id, device: d });
        }
        Ok(())
    }

    // ---- transfers ----

    fn record_event(
        &mut self,
        d: DeviceId,
        kernel: &str,
        bytes_read: u64,
        bytes_written: u64,
        duration_ms: f64,
        efficiency: Option<f64>,
    ) -> ProfileEvent {
        let dev = &mut self.devices[d.0];
        let seq = dev.next_seq;
        dev.next_seq += 1;
        dev.virtual_ms += duration_ms;
        let ev = ProfileEvent {
            kernel: kernel.to_string(),
            device: d,
            bytes_read,
            bytes_written,
            duration_ms,
            efficiency,
            seq,
        };
        dev.events.push(ev.clone());
        ev
    }

    fn transfer_cost(&self, d: DeviceId, bytes: u64, wall: f64) -> (f64, Option<f64>) {
        match &self.devices[d.0].cost_model {
            Some(m) => (bytes as f64 / m.pcie_effective_bandwidth, Some(m.transfer_efficiency())),
            None => (wall, None),
        }
    }

    /// Synchronous host-to-device write; records a `Write_Buffer` event on
    /// `d`'s queue.
    pub fn enqueue_write(
        &mut self,
        d: DeviceId,
        dst: BufView,
        src: &[S],
    ) -> Result<ProfileEvent, DeviceError> {
        self.device(d)?;
        self.check_owned_by(dst, d)?;
        if src.len() != dst.len {
            return Err(DeviceError::SizeMismatch { expected: dst.len, got: src.len() });
        }
        let t0 = Instant::now();
        let buf = self.buffers.get_mut(&dst.id.0).unwrap();
        buf.data[dst.offset..dst.offset + dst.len].copy_from_slice(src);
        let wall = t0.elapsed().as_secs_f64() * 1e3;
        self.exec_wall_ms += wall;
        let bytes = (src.len() * S::ELEM.size_bytes()) as u64;
        let (dur, eff) = self.transfer_cost(d, bytes, wall);
        Ok(self.record_event(d, "Write_Buffer", 0, bytes, dur, eff))
    }

    /// Synchronous device-to-host read into `dst`; records a `Read_Buffer`
    /// event on `d`'s queue.
    pub fn enqueue_read(
        &mut self,
        d: DeviceId,
        src: BufView,
        dst: &mut [S],
    ) -> Result<ProfileEvent, DeviceError> {
        self.device(d)?;
        self.check_owned_by(src, d)?;
        if dst.len() != src.len {
            return Err(DeviceError::SizeMismatch { expected: src.len, got: dst.len() });
        }
        let t0 = Instant::now();
        let buf = self.buffers.get(&src.id.0).unwrap();
        dst.copy_from_slice(&buf.data[src.offset..src.offset + src.len]);
        let wall = t0.elapsed().as_secs_f64() * 1e3;
        self.exec_wall_ms += wall;
        let bytes = (dst.len() * S::ELEM.size_bytes()) as u64;
        let (dur, eff) = self.transfer_cost(d, bytes, wall);
        Ok(self.record_event(d, "Read_Buffer", bytes, 0, dur, eff))
    }

    /// Internal buffer-to-buffer transfer used by the memory module when a
    /// tensor synchronizes; same accounting as the public enqueue calls.
    pub(crate) fn copy_between(
        &mut self,
        d: DeviceId,
        src: BufView,
        dst: BufView,
        to_device: bool,
    ) -> Result<ProfileEvent, DeviceError> {
        self.check_view(src)?;
        self.check_view(dst)?;
        if src.len != dst.len {
            return Err(DeviceError::SizeMismatch { expected: dst.len, got: src.len });
        }
        let t0 = Instant::now();
        if src.id == dst.id {
            let buf = self.buffers.get_mut(&src.id.0).unwrap();
            buf.data.copy_within(src.offset..src.offset + src.len, dst.offset);
        } else {
            let tmp = {
                let sbuf = self.buffers.get(&src.id.0).unwrap();
                sbuf.data[src.offset..src.offset + src.len].to_vec()
            };
            let dbuf = self.buffers.get_mut(&dst.id.0).unwrap();
            dbuf.data[dst.offset..dst.offset + dst.len].copy_from_slice(&tmp);
        }
        let wall = t0.elapsed().as_secs_f64() * 1e3;
        self.exec_wall_ms += wall;
        let bytes = (src.len * S::ELEM.size_bytes()) as u64;
        let (dur, eff) = self.transfer_cost(d, bytes, wall);
        let (name, br, bw) = if to_device {
            ("Write_Buffer", 0, bytes)
        } else {
            ("Read_Buffer", bytes, 0)
        };
        Ok(self.record_event(d, name, br, bw, dur, eff))
    }

    // ---- launches ----

    /// Launches a registered kernel synchronously on `d`. The kernel math has
    /// completed when this returns; on failure no event is recorded.
    pub fn launch(&mut self, d: DeviceId, kernel: &str, args: &[Arg]) -> Result<ProfileEvent, DeviceError> {
        self.device(d)?;
        let (desc, func) = self
            .registry
            .get(kernel)
            .map(|(desc, f)| (desc.clone(), *f))
            .ok_or_else(|| DeviceError::UnknownKernel(kernel.to_string()))?;

        if desc.signature.len() != args.len() {
            return Err(DeviceError::SignatureMismatch {
                kernel: kernel.to_string(),
                detail: format!("expected {} args, got {}", desc.signature.len(), args.len()),
            });
        }
        for (i, (spec, arg)) in desc.signature.iter().zip(args).enumerate() {
            if spec.role != arg.role() {
                return Err(DeviceError::SignatureMismatch {
                    kernel: kernel.to_string(),
                    detail: format!(
                        "arg {} ({}): expected {:?}, got {:?}",
                        i, spec.semantic, spec.role, arg.role()
                    ),
                });
            }
        }
        for arg in args {
            if let Some(view) = arg.view() {
                self.check_owned_by(view, d)?;
            }
        }

        // One writable owner per buffer; extra readers of an aliased buffer
        // observe a pre-launch snapshot, which for element-wise kernels is
        // exactly the in-place semantics layers rely on.
        let mut writer_of: HashMap<u64, usize> = HashMap::new();
        for (i, arg) in args.iter().enumerate() {
            match arg {
                Arg::Out(v) | Arg::InOut(v)
                    if writer_of.insert(v.id.0, i).is_some() => {
                        return Err(DeviceError::AliasedWrite(v.id));
                    }
                _ => {}
            }
        }
        let mut snapshots: HashMap<u64, Vec<S>> = HashMap::new();
        for arg in args {
            if let Arg::In(v) = arg {
                if writer_of.contains_key(&v.id.0) && !snapshots.contains_key(&v.id.0) {
                    snapshots.insert(v.id.0, self.buffers[&v.id.0].data.clone());
                }
            }
        }

        // Take writable buffers out of the table for the duration of the call.
        enum Slot<S> {
            Owned(u64, Vec<S>),
            Scalar(f64),
            Read(BufView),
        }
        let mut slots: Vec<Slot<S>> = Vec::with_capacity(args.len());
        for arg in args {
            match arg {
                Arg::Scalar(v) => slots.push(Slot::Scalar(*v)),
                Arg::In(v) => slots.push(Slot::Read(*v)),
                Arg::Out(v) | Arg::InOut(v) => {
                    let data = self.buffers.remove(&v.id.0).unwrap().data;
                    slots.push(Slot::Owned(v.id.0, data));
                }
            }
        }

        let mut ins: Vec<&[S]> = Vec::new();
        let mut outs: Vec<&mut [S]> = Vec::new();
        let mut scalars: Vec<f64> = Vec::new();
        let mut bytes_read: u64 = 0;
        let mut bytes_written: u64 = 0;
        let esize = S::ELEM.size_bytes() as u64;
        for (slot, arg) in slots.iter_mut().zip(args) {
            match (slot, arg) {
                (Slot::Scalar(v), Arg::Scalar(_)) => scalars.push(*v),
                (Slot::Read(v), Arg::In(_)) => {
                    bytes_read += v.len as u64 * esize;
                    let data: &[S] = match snapshots.get(&v.id.0) {
                        Some(snap) => snap,
                        None => &self.buffers[&v.id.0].data,
                    };
                    ins.push(&data[v.offset..v.offset + v.len]);
                }
                (Slot::Owned(_, data), Arg::Out(v)) => {
                    bytes_written += v.len as u64 * esize;
                    outs.push(&mut data[v.offset..v.offset + v.len]);
                }
                (Slot::Owned(_, data), Arg::InOut(v)) => {
                    bytes_read += v.len as u64 * esize;
                    bytes_written += v.len as u64 * esize;
                    outs.push(&mut data[v.offset..v.offset + v.len]);
                }
                _ => unreachable!("slot kinds follow arg kinds"),
            }
        }

        let t0 = Instant::now();
        let result = func(KernelArgs { ins, outs, scalars });
        let wall = t0.elapsed().as_secs_f64() * 1e3;
        self.exec_wall_ms += wall;

        // Reinsert before error handling so the table stays intact either way.
        let mut restored = Vec::new();
        for slot in slots {
            if let Slot::Owned(id, data) = slot {
                restored.push((id, data));
            }
        }
        let home = self.domain_of(d)?;
        for (id, data) in restored {
            self.buffers.insert(id, Buffer { home, data });
        }

        if let Err(e) = result {
            return Err(DeviceError::Kernel { kernel: kernel.to_string(), source: e });
        }

        let (dur, eff) = match &self.devices[d.0].cost_model {
            Some(m) => {
                let ratio = m.efficiency(kernel);
                (
                    (bytes_read + bytes_written) as f64 / (ratio * m.ddr_ref_bandwidth),
                    Some(ratio),
                )
            }
            None => (wall, None),
        };
        Ok(self.record_event(d, kernel, bytes_read, bytes_written, dur, eff))
    }

    // ---- profiling ----

    pub fn events(&self, d: DeviceId) -> Result<&[ProfileEvent], DeviceError> {
        self.device(d).map(|s| s.events.as_slice())
    }

    /// Accumulated virtual time on an emulated device (total event time on a
    /// host device).
    pub fn device_time_ms(&self, d: DeviceId) -> Result<f64, DeviceError> {
        self.device(d).map(|s| s.virtual_ms)
    }

    pub fn device_count(&self) -> usize {
        self.devices.len()
    }

    /// Cumulative wall time spent executing kernels and transfers.
    pub fn exec_wall_ms(&self) -> f64 {
        self.exec_wall_ms
    }

    /// Current per-device sequence watermark; pass to `report_since` to
    /// aggregate only later events.
    pub fn watermark(&self) -> Watermark {
        Watermark(self.devices.iter().map(|d| d.next_seq).collect())
    }

    /// Per-kernel aggregate over one device since a sequence index.
    pub fn profile_report(&self, d: DeviceId, since: u64) -> Result<ProfileReport, DeviceError> {
        let dev = self.device(d)?;
        Ok(aggregate(dev.events.iter().filter(|e| e.seq >= since)))
    }

    /// Merged per-kernel aggregate across all devices since a watermark.
    pub fn report_since(&self, mark: &Watermark) -> ProfileReport {
        let events = self.devices.iter().enumerate().flat_map(|(i, dev)| {
            let floor = mark.0.get(i).copied().unwrap_or(0);
            dev.events.iter().filter(move |e| e.seq >= floor)
        });
        aggregate(events)
    }
}

fn aggregate<'a, I: Iterator<Item = &'a ProfileEvent>>(events: I) -> ProfileReport {
    struct Acc {
        instances: u64,
        total_ms: f64,
        eff_sum: f64,
        eff_n: u64,
    }
    let mut map: BTreeMap<String, Acc> = BTreeMap::new();
    for ev in events {
        let acc = map.entry(ev.kernel.clone()).or_insert(Acc {
            instances: 0,
            total_ms: 0.0,
            eff_sum: 0.0,
            eff_n: 0,
        });
        acc.instances += 1;
        acc.total_ms += ev.duration_ms;
        if let Some(e) = ev.efficiency {
            acc.eff_sum += e;
            acc.eff_n += 1;
        }
    }
    let mut rows = Vec::new();
    let mut total_instances = 0;
    let mut total_ms = 0.0;
    for (kernel, acc) in map {
        total_instances += acc.instances;
        total_ms += acc.total_ms;
        rows.push(ReportRow {
            kernel,
            instances: acc.instances,
            total_ms: acc.total_ms,
            mean_efficiency: if acc.eff_n > 0 {
                Some(acc.eff_sum / acc.eff_n as f64)
            } else {
                None
            },
        });
    }
    ProfileReport { rows, total_instances, total_ms, total_efficiency: None }
}

/// One aggregated row of a profile report.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub kernel: String,
    pub instances: u64,
    pub total_ms: f64,
    pub mean_efficiency: Option<f64>,
}

/// Per-kernel aggregate with a grand total row, sorted by kernel name.
#[derive(Debug, Clone)]
pub struct ProfileReport {
    pub rows: Vec<ReportRow>,
    pub total_instances: u64,
    pub total_ms: f64,
    /// Ratio of kernel time to the whole measured pass, when known.
    pub total_efficiency: Option<f64>,
}

impl ProfileReport {
    pub fn instances_of(&self, kernel: &str) -> u64 {
        self.rows
            .iter()
            .find(|r| r.kernel == kernel)
            .map(|r| r.instances)
            .unwrap_or(0)
    }

    fn eff_cell(kernel: &str, eff: Option<f64>) -> String {
        let domain = if kernel == "Write_Buffer" || kernel == "Read_Buffer" {
            "PCIe"
        } else {
            "DDR"
        };
        match eff {
            Some(e) => format!("{:.0}% ({})", e * 100.0, domain),
            None => "-".to_string(),
        }
    }

    /// Tab-separated table: `kernel<TAB>instances<TAB>total_ms<TAB>efficiency`
    /// plus a final `Total` row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("Kernels\tInstance Count\tTotal Time (ms)\tEfficiency\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{:.3}\t{}\n",
                row.kernel,
                row.instances,
                row.total_ms,
                match row.mean_efficiency {
                    Some(e) => format!("{:.4}", e),
                    None => "-".to_string(),
                }
            ));
        }
        out.push_str(&format!(
            "Total\t{}\t{:.3}\t{}\n",
            self.total_instances,
            self.total_ms,
            match self.total_efficiency {
                Some(e) => format!("{:.4}", e),
                None => "-".to_string(),
            }
        ));
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>14} {:>16}  {}\n",
            "Kernels", "Instance Count", "Total Time (ms)", "Efficiency"
        ));
        for row in &self.rows {
            out.push_str(&format!(
                "{:<16} {:>14} {:>16.3}  {}\n",
                row.kernel,
                row.instances,
                row.total_ms,
                Self::eff_cell(&row.kernel, row.mean_efficiency)
            ));
        }
        let total_eff = match self.total_efficiency {
            Some(e) => format!("{:.0}% (F->B)", e * 100.0),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "{:<16} {:>14} {:>16.3}  {}\n",
            "Total", self.total_instances, self.total_ms, total_eff
        ));
        out
    }
}

/// Typed wrappers over `launch`, one per kernel: argument marshalling for the
/// math library so layers never build raw argument lists.
pub mod wrap {
    use super::*;

    fn b(v: bool) -> f64 {
        if v { 1.0 } else { 0.0 }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn gemm<S: Scalar>(
        rt: &mut Runtime<S>,
        d: DeviceId,
        trans_a: bool,
        trans_b: bool,
        m: usize,
        n: usize,
        k: usize,
        alpha: f64,
        a: BufView,
        bm: BufView,
        beta: f64,
        c: BufView,
    ) -> Result<ProfileEvent, DeviceError> {
        rt.launch(
            d,
            "Gemm",
            &[
                Arg::Scalar(b(trans_a)),
                Arg::Scalar(b(trans_b)),
                Arg::Scalar(m as f64),
                Arg::Scalar(n as f64),
                Arg::Scalar(k as f64),
                Arg::Scalar(alpha),
                Arg::In(a),
                Arg::In(bm),
                Arg::Scalar(beta),
                Arg::InOut(c),
            ],
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn gemv<S: Scalar>(
        rt: &mut Runtime<S>,
        d: DeviceId,
        trans: bool,
        m: usize,
        n: usize,
        alpha: f64,
        a: BufView,
        x: BufView,
        beta: f64,
        y: BufView,
    ) -> Result<ProfileEvent, DeviceError> {
        rt.launch(
            d,
            "Gemv",
            &[
                Arg::Scalar(b(trans)),
                Arg::Scalar(m as f64),
                Arg::Scalar(n as f64),
                Arg::Scalar(alpha),
                Arg::In(a),
                Arg::In(x),
                Arg::Scalar(beta),
                Arg::InOut(y),
            ],
        )
    }

    pub fn axpy<S: Scalar>(
        rt: &mut Runtime<S>,
        d: DeviceId,
        alpha: f64,
        x: BufView,
        y: BufView,
    ) -> Result<ProfileEvent, DeviceError> {
        rt.launch(d, "Apy", &[Arg::Scalar(alpha), Arg::In(x), Arg::InOut(y)])
    }

    pub fn scal<S: Scalar>(
        rt: &mut Runtime<S>,
        d: DeviceId,
        alpha: f64,
        x: BufView,
    ) -> Result<ProfileEvent, DeviceError> {
        rt.launch(d, "Scale", &[Arg::Scalar(alpha), Arg::InOut(x)])
    }

    pub fn asum<S: Scalar>(
        rt: &mut Runtime<S>,
        d: DeviceId,
        x: BufView,
        out: BufView,
    ) -> Result<ProfileEvent, DeviceError> {
        rt.launch(d, "Asum", &[Arg::In(x), Arg::Out(out)])
    }

    pub fn add<S: Scalar>(
        rt: &mut Runtime<S>,
        d: DeviceId,
        x: BufView,
        y: BufView,
        out: BufView,
    ) -> Result<ProfileEvent, DeviceError> {
        rt.launch(d, "Add", &[Arg::In(x), Arg::In(y), Arg::Out(out)])
    }

    pub fn sign<S: Scalar>(
        rt: &mut Runtime<S>,
        d: DeviceId,
        x: BufView,
        out: BufView,
    ) -> Result<ProfileEvent, DeviceError> {
        rt.launch(d, "Sign", &[Arg::In(x), Arg::Out(out)])
    }

    pub fn split_copy<S: Scalar>(
        rt: &mut Runtime<S>,
        d: DeviceId,
        src: BufView,
        dst: BufView,
    ) -> Result<ProfileEvent, DeviceError> {
        rt.launch(d, "Split", &[Arg::In(src), Arg::Out(dst)])
    }
}
