//! Snapshot serialization. Little-endian binary layout:
//!
//! ```text
//! magic "HGSNAP01"
//! u32 version = 1
//! u64 iteration
//! u64 x 4 rng state words (word 0 is the master seed; 1..3 reserved)
//! u32 tensor count
//! per tensor:
//!   u32 name length, UTF-8 name
//!   u32 rank, u64 x rank extents
//!   u8 element tag (0 = fp32, 1 = fp64)
//!   raw little-endian element data
//! ```
//!
//! Restores resume training bitwise identically to an uninterrupted run:
//! every parameter and history tensor round-trips exactly, and all stochastic
//! streams derive from the saved seed and iteration.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::device::DeviceError;
use crate::memory::{SyncedTensor, TensorShape};
use crate::net::Net;
use crate::scalar::Scalar;
use crate::Runtime;

use super::Solver;

const MAGIC: &[u8; 8] = b"HGSNAP01";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic or version in snapshot")]
    BadMagic,
    #[error("truncated snapshot")]
    Truncated,
    #[error("snapshot tensor '{name}' has shape {found}, expected {expected}")]
    ShapeMismatch { name: String, found: String, expected: String },
    #[error("snapshot element type {found:?} does not match this runtime")]
    ElemMismatch { found: u8 },
    #[error("snapshot is missing tensor '{0}'")]
    MissingTensor(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor<S: Scalar>(&mut self, name: &str, shape: &TensorShape, data: &[S]) {
        self.u32(name.len() as u32);
        self.buf.extend_from_slice(name.as_bytes());
        self.u32(shape.rank() as u32);
        for &d in shape.dims() {
            self.u64(d as u64);
        }
        self.buf.push(S::ELEM.tag());
        for v in data {
            v.write_le(&mut self.buf);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        if self.pos + n > self.buf.len() {
            return Err(SnapshotError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, SnapshotError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, SnapshotError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn u64(&mut self) -> Result<u64, SnapshotError> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

struct SnapshotTensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

struct SnapshotFile<S> {
    iter: u64,
    rng_words: [u64; 4],
    tensors: Vec<(String, SnapshotTensor<S>)>,
}

fn read_file<S: Scalar>(path: &Path) -> Result<SnapshotFile<S>, SnapshotError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| SnapshotError::Io { path: path.display().to_string(), source })?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    if r.u32()? != VERSION {
        return Err(SnapshotError::BadMagic);
    }
    let iter = r.u64()?;
    let mut rng_words = [0u64; 4];
    for word in &mut rng_words {
        *word = r.u64()?;
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8_lossy(r.take(name_len)?).into_owned();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut total = 1usize;
        for _ in 0..rank {
            let d = r.u64()? as usize;
            total = total.saturating_mul(d);
            shape.push(d);
        }
        let tag = r.u8()?;
        if tag != S::ELEM.tag() {
            return Err(SnapshotError::ElemMismatch { found: tag });
        }
        let esize = S::ELEM.size_bytes();
        let raw = r.take(total * esize)?;
        let data: Vec<S> = raw.chunks_exact(esize).map(S::read_le).collect();
        tensors.push((name, SnapshotTensor { shape, data }));
    }
    Ok(SnapshotFile { iter, rng_words, tensors })
}

fn restore_tensor<S: Scalar>(
    rt: &mut Runtime<S>,
    name: &str,
    tensor: &mut SyncedTensor<S>,
    saved: &SnapshotTensor<S>,
) -> Result<(), SnapshotError> {
    if tensor.shape().dims() != saved.shape.as_slice() {
        return Err(SnapshotError::ShapeMismatch {
            name: name.to_string(),
            found: format!("{:?}", saved.shape),
            expected: format!("{:?}", tensor.shape().dims()),
        });
    }
    tensor.fill_from(rt, &saved.data)?;
    Ok(())
}

/// Serializes iteration, rng seed, every parameter tensor and every history
/// tensor. Bit-exact round trip.
pub fn save<S: Scalar>(
    path: impl AsRef<Path>,
    rt: &mut Runtime<S>,
    solver: &mut Solver<S>,
) -> Result<(), SnapshotError> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u64(solver.iter());
    w.u64(solver.net.master_seed());
    w.u64(0);
    w.u64(0);
    w.u64(0);

    let handles = solver.param_handles().to_vec();
    let slots = solver.history_mut()[0].len();
    let count = handles.len() * (1 + slots);
    w.u32(count as u32);

    for (pi, &handle) in handles.iter().enumerate() {
        let name = solver.net.param_name(handle);
        let (shape, data) = solver.net.with_param(handle, |blob| {
            Ok::<_, DeviceError>((blob.shape().clone(), blob.data.read_host(rt)?.to_vec()))
        })?;
        w.tensor(&name, &shape, &data);
        for hi in 0..slots {
            let hist = &mut solver.history_mut()[pi][hi];
            let shape = hist.shape().clone();
            let data = hist.read_host(rt)?.to_vec();
            w.tensor(&format!("{}@h{}", name, hi), &shape, &data);
        }
    }

    let path = path.as_ref();
    let mut file = std::fs::File::create(path)
        .map_err(|source| SnapshotError::Io { path: path.display().to_string(), source })?;
    file.write_all(&w.buf)
        .map_err(|source| SnapshotError::Io { path: path.display().to_string(), source })?;
    Ok(())
}

/// Restores a snapshot into a freshly built solver of the same topology;
/// continued training is bitwise identical to an uninterrupted run.
pub fn restore<S: Scalar>(
    path: impl AsRef<Path>,
    rt: &mut Runtime<S>,
    solver: &mut Solver<S>,
) -> Result<(), SnapshotError> {
    let file = read_file::<S>(path.as_ref())?;
    let by_name: HashMap<&str, &SnapshotTensor<S>> =
        file.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();

    let handles = solver.param_handles().to_vec();
    for (pi, &handle) in handles.iter().enumerate() {
        let name = solver.net.param_name(handle);
        let saved = by_name
            .get(name.as_str())
            .ok_or_else(|| SnapshotError::MissingTensor(name.clone()))?;
        let expected_shape = solver.net.with_param(handle, |b| b.shape().clone());
        if expected_shape.dims() != saved.shape.as_slice() {
            return Err(SnapshotError::ShapeMismatch {
                name,
                found: format!("{:?}", saved.shape),
                expected: format!("{:?}", expected_shape.dims()),
            });
        }
        solver.net.with_param(handle, |blob| blob.data.fill_from(rt, &saved.data))?;
        let slots = solver.history_mut()[pi].len();
        for hi in 0..slots {
            let hname = format!("{}@h{}", name, hi);
            let saved = by_name
                .get(hname.as_str())
                .ok_or_else(|| SnapshotError::MissingTensor(hname.clone()))?;
            let hist = &mut solver.history_mut()[pi][hi];
            restore_tensor(rt, &hname, hist, saved)?;
        }
    }

    solver.net.set_master_seed(file.rng_words[0]);
    solver.set_iter(file.iter);
    Ok(())
}

/// Loads parameter tensors (ignoring history) into a net by name.
pub fn load_weights<S: Scalar>(
    path: impl AsRef<Path>,
    rt: &mut Runtime<S>,
    net: &mut Net<S>,
) -> Result<(), SnapshotError> {
    let file = read_file::<S>(path.as_ref())?;
    let by_name: HashMap<&str, &SnapshotTensor<S>> =
        file.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
    for handle in net.param_handles() {
        let name = net.param_name(handle);
        let Some(saved) = by_name.get(name.as_str()) else { continue };
        let expected_shape = net.with_param(handle, |b| b.shape().clone());
        if expected_shape.dims() != saved.shape.as_slice() {
            return Err(SnapshotError::ShapeMismatch {
                name,
                found: format!("{:?}", saved.shape),
                expected: format!("{:?}", expected_shape.dims()),
            });
        }
        net.with_param(handle, |blob| blob.data.fill_from(rt, &saved.data))?;
    }
    Ok(())
}
