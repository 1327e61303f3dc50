//! Graph construction and execution: builds a runnable net from a parsed
//! description for one phase, auto-inserts split layers behind shared blobs,
//! resolves in-place chains, propagates shapes, and runs whole-net forward
//! and backward passes with multi-loss weighting.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::device::{DeviceError, Placement, ProfileReport, Runtime};
use crate::ingestion::Dataset;
use crate::layers::{
    build_layer, BlobRef, Layer, LayerCtx, LayerError, LayerParams, LayerSpec, Phase,
};
use crate::memory::{Blob, TensorShape};
use crate::netdef::NetSpec;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("blob '{blob}' consumed by layer '{layer}' is not produced by any earlier layer")]
    UnresolvedBottom { layer: String, blob: String },
    #[error("input '{0}' has an invalid shape")]
    BadInput(String),
    #[error("net has no data layer to attach a dataset to")]
    NoDataLayer,
    #[error("unknown layer '{0}'")]
    UnknownLayer(String),
    #[error("forward pass produced a non-finite loss at iteration {0}")]
    NonFiniteLoss(u64),
    #[error("backward called before forward")]
    BackwardBeforeForward,
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// Build-time knobs.
#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Overrides every data-layer batch and declared input batch dimension.
    pub batch_override: Option<usize>,
    pub seed: u64,
    /// Retain convolution column buffers from forward for the weight
    /// gradient (recomputed when false; changes Im2col launch counts only).
    pub retain_col: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { batch_override: None, seed: 1, retain_col: true }
    }
}

/// Inserts split layers behind every blob definition consumed more than
/// once, rewiring consumers to the split outputs in consumption order.
fn insert_splits(layers: &[LayerSpec], input_names: &[String]) -> Result<Vec<LayerSpec>, NetError> {
    struct Def {
        blob: String,
        /// Producing layer position, or None for declared inputs.
        producer: Option<usize>,
        consumers: Vec<(usize, usize)>,
    }
    let mut defs: Vec<Def> = Vec::new();
    let mut current: HashMap<String, usize> = HashMap::new();

    for name in input_names {
        current.insert(name.clone(), defs.len());
        defs.push(Def { blob: name.clone(), producer: None, consumers: Vec::new() });
    }
    for (li, layer) in layers.iter().enumerate() {
        for (bi, bottom) in layer.bottoms.iter().enumerate() {
            let def = *current.get(bottom).ok_or_else(|| NetError::UnresolvedBottom {
                layer: layer.name.clone(),
                blob: bottom.clone(),
            })?;
            defs[def].consumers.push((li, bi));
        }
        for top in &layer.tops {
            current.insert(top.clone(), defs.len());
            defs.push(Def { blob: top.clone(), producer: Some(li), consumers: Vec::new() });
        }
    }

    let needs_split: Vec<usize> =
        (0..defs.len()).filter(|&d| defs[d].consumers.len() > 1).collect();
    if needs_split.is_empty() {
        return Ok(layers.to_vec());
    }

    let split_top = |def: &Def, j: usize| -> String {
        let producer = match def.producer {
            Some(li) => layers[li].name.as_str(),
            None => "input",
        };
        format!("{}_{}_split_{}", def.blob, producer, j)
    };
    let make_split = |def: &Def| -> LayerSpec {
        let producer = match def.producer {
            Some(li) => layers[li].name.as_str(),
            None => "input",
        };
        let mut spec = LayerSpec::new(format!("{}_{}_split", def.blob, producer), LayerParams::Split);
        spec.bottoms = vec![def.blob.clone()];
        spec.tops = (0..def.consumers.len()).map(|j| split_top(def, j)).collect();
        spec
    };

    // Renames, keyed by (consumer position, bottom slot).
    let mut renames: HashMap<(usize, usize), String> = HashMap::new();
    for &d in &needs_split {
        for (j, &(li, bi)) in defs[d].consumers.iter().enumerate() {
            renames.insert((li, bi), split_top(&defs[d], j));
        }
    }

    let mut out: Vec<LayerSpec> = Vec::new();
    // Splits for declared inputs come first.
    for &d in &needs_split {
        if defs[d].producer.is_none() {
            out.push(make_split(&defs[d]));
        }
    }
    for (li, layer) in layers.iter().enumerate() {
        let mut layer = layer.clone();
        for (bi, bottom) in layer.bottoms.iter_mut().enumerate() {
            if let Some(renamed) = renames.get(&(li, bi)) {
                *bottom = renamed.clone();
            }
        }
        out.push(layer);
        for &d in &needs_split {
            if defs[d].producer == Some(li) {
                out.push(make_split(&defs[d]));
            }
        }
    }
    Ok(out)
}

/// Per-layer durations of one timed pass.
#[derive(Debug, Clone)]
pub struct TimedPass {
    pub loss: f64,
    pub forward_ms: Vec<f64>,
    pub backward_ms: Vec<f64>,
}

/// A runnable network: ordered layers over a table of named blobs.
pub struct Net<S: Scalar> {
    pub name: String,
    pub phase: Phase,
    layers: Vec<Box<dyn Layer<S>>>,
    blobs: Vec<RefCell<Blob<S>>>,
    blob_index: HashMap<String, usize>,
    bottom_ids: Vec<Vec<usize>>,
    top_ids: Vec<Vec<usize>>,
    bottom_pd: Vec<Vec<bool>>,
    need_backward: Vec<bool>,
    /// (layer index, loss weight) for loss-producing layers.
    loss_layers: Vec<(usize, f64)>,
    master_seed: u64,
    forward_calls: u64,
    forward_done: bool,
}

impl<S: Scalar> Net<S> {
    /// Builds the network for one phase: drops out-of-phase layers, inserts
    /// splits, wires blobs, propagates shapes and computes backward needs.
    pub fn build(
        rt: &mut Runtime<S>,
        spec: &NetSpec,
        phase: Phase,
        opts: &BuildOptions,
    ) -> Result<Self, NetError> {
        let filtered: Vec<LayerSpec> =
            spec.layers.iter().filter(|l| l.runs_in(phase)).cloned().collect();
        let input_names: Vec<String> = spec.inputs.iter().map(|i| i.name.clone()).collect();
        let layer_specs = insert_splits(&filtered, &input_names)?;

        let mut net = Net {
            name: spec.name.clone(),
            phase,
            layers: Vec::new(),
            blobs: Vec::new(),
            blob_index: HashMap::new(),
            bottom_ids: Vec::new(),
            top_ids: Vec::new(),
            bottom_pd: Vec::new(),
            need_backward: Vec::new(),
            loss_layers: Vec::new(),
            master_seed: opts.seed,
            forward_calls: 0,
            forward_done: false,
        };

        // Declared inputs become blobs up front.
        let mut current: HashMap<String, usize> = HashMap::new();
        let mut upstream_param: HashMap<usize, bool> = HashMap::new();
        for input in &spec.inputs {
            let mut dims = input.dims.clone();
            if let (Some(batch), true) = (opts.batch_override, !dims.is_empty()) {
                dims[0] = batch;
            }
            let shape = TensorShape::new(&dims).map_err(|_| NetError::BadInput(input.name.clone()))?;
            let id = net.add_blob(&input.name, Blob::new(input.name.clone(), shape));
            current.insert(input.name.clone(), id);
            upstream_param.insert(id, false);
        }

        for (li, lspec) in layer_specs.iter().enumerate() {
            let mut layer = build_layer::<S>(lspec)?;
            if let Some(batch) = opts.batch_override {
                layer.set_batch_size(batch);
            }
            layer.set_retain_col(opts.retain_col);

            let mut bottom_ids = Vec::new();
            let mut bottom_shapes = Vec::new();
            let mut bottom_flags = Vec::new();
            for bottom in &lspec.bottoms {
                let id = *current.get(bottom).ok_or_else(|| NetError::UnresolvedBottom {
                    layer: lspec.name.clone(),
                    blob: bottom.clone(),
                })?;
                bottom_ids.push(id);
                bottom_shapes.push(net.blobs[id].borrow().shape().clone());
                bottom_flags.push(*upstream_param.get(&id).unwrap_or(&false));
            }

            let ctx = LayerCtx { phase, iter: 0, master_seed: opts.seed, layer_index: li };
            let top_shapes = layer.setup(rt, &bottom_shapes, &ctx)?;

            let out_flag = lspec.params.has_params() || bottom_flags.iter().any(|&f| f);
            let mut top_ids = Vec::new();
            for (ti, top) in lspec.tops.iter().enumerate() {
                let shape = top_shapes.get(ti).cloned().unwrap_or_else(|| {
                    TensorShape::new(&[1]).expect("static")
                });
                // In-place: the top reuses the bottom's blob.
                let id = match lspec.bottoms.iter().position(|b| b == top) {
                    Some(bi) => {
                        let id = bottom_ids[bi];
                        net.blobs[id].borrow_mut().reshape(rt, shape);
                        id
                    }
                    None => net.add_blob(top, Blob::new(top.clone(), shape)),
                };
                current.insert(top.clone(), id);
                upstream_param.insert(id, out_flag);
                top_ids.push(id);
            }

            if matches!(lspec.params, LayerParams::SoftmaxWithLoss) {
                net.loss_layers.push((li, lspec.loss_weight(0)));
            }
            let need_bwd = lspec.params.has_params() || bottom_flags.iter().any(|&f| f);
            net.layers.push(layer);
            net.bottom_ids.push(bottom_ids);
            net.top_ids.push(top_ids);
            net.bottom_pd.push(bottom_flags);
            net.need_backward.push(need_bwd);
        }
        Ok(net)
    }

    fn add_blob(&mut self, name: &str, blob: Blob<S>) -> usize {
        let id = self.blobs.len();
        self.blobs.push(RefCell::new(blob));
        self.blob_index.insert(name.to_string(), id);
        id
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.spec().name.clone()).collect()
    }

    pub fn layer(&self, index: usize) -> &dyn Layer<S> {
        self.layers[index].as_ref()
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.spec().name == name)
    }

    /// Latest definition of a blob name.
    pub fn blob(&self, name: &str) -> Option<&RefCell<Blob<S>>> {
        self.blob_index.get(name).map(|&i| &self.blobs[i])
    }

    pub fn blob_shape(&self, name: &str) -> Option<TensorShape> {
        self.blob(name).map(|b| b.borrow().shape().clone())
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn set_master_seed(&mut self, seed: u64) {
        self.master_seed = seed;
    }

    /// Forward-pass counter driving dropout streams and data cursors.
    pub fn cursor(&self) -> u64 {
        self.forward_calls
    }

    pub fn set_cursor(&mut self, calls: u64) {
        self.forward_calls = calls;
        for layer in &mut self.layers {
            layer.set_data_cursor(calls);
        }
    }

    pub fn set_placement_all(&mut self, placement: Placement) {
        for layer in &mut self.layers {
            layer.set_placement(placement);
        }
    }

    pub fn set_layer_placement(&mut self, name: &str, placement: Placement) -> Result<(), NetError> {
        let idx = self.layer_index(name).ok_or_else(|| NetError::UnknownLayer(name.to_string()))?;
        self.layers[idx].set_placement(placement);
        Ok(())
    }

    /// Attaches a dataset to every data layer.
    pub fn attach_dataset(&mut self, source: Arc<Dataset>) -> Result<(), NetError> {
        let mut found = false;
        for layer in &mut self.layers {
            if matches!(layer.spec().params, LayerParams::Data(_)) {
                layer.attach_dataset(source.clone());
                found = true;
            }
        }
        if found {
            Ok(())
        } else {
            Err(NetError::NoDataLayer)
        }
    }

    pub fn has_data_layer(&self) -> bool {
        self.layers.iter().any(|l| matches!(l.spec().params, LayerParams::Data(_)))
    }

    /// Re-runs every layer's setup (used after attaching datasets, which can
    /// change data shapes).
    pub fn reshape(&mut self, rt: &mut Runtime<S>) -> Result<(), NetError> {
        for li in 0..self.layers.len() {
            let bottom_shapes: Vec<TensorShape> = self.bottom_ids[li]
                .iter()
                .map(|&id| self.blobs[id].borrow().shape().clone())
                .collect();
            let ctx = LayerCtx {
                phase: self.phase,
                iter: self.forward_calls,
                master_seed: self.master_seed,
                layer_index: li,
            };
            let top_shapes = self.layers[li].setup(rt, &bottom_shapes, &ctx)?;
            for (ti, &id) in self.top_ids[li].iter().enumerate() {
                if let Some(shape) = top_shapes.get(ti) {
                    if self.blobs[id].borrow().shape() != shape {
                        self.blobs[id].borrow_mut().reshape(rt, shape.clone());
                    }
                }
            }
        }
        Ok(())
    }

    /// Runs all layers in order; returns the weighted total loss.
    pub fn forward(&mut self, rt: &mut Runtime<S>) -> Result<f64, NetError> {
        let mut total = 0.0;
        for li in 0..self.layers.len() {
            total += self.forward_layer(rt, li)?;
        }
        self.forward_calls += 1;
        self.forward_done = true;
        Ok(total)
    }

    /// Runs a single layer's forward; returns its weighted loss contribution.
    pub fn forward_layer(&mut self, rt: &mut Runtime<S>, li: usize) -> Result<f64, NetError> {
        let ctx = LayerCtx {
            phase: self.phase,
            iter: self.forward_calls,
            master_seed: self.master_seed,
            layer_index: li,
        };
        let blobs = &self.blobs;
        let bottoms: Vec<BlobRef<'_, S>> = self.bottom_ids[li].iter().map(|&i| &blobs[i]).collect();
        let tops: Vec<BlobRef<'_, S>> = self.top_ids[li].iter().map(|&i| &blobs[i]).collect();
        let loss = self.layers[li].forward(rt, &bottoms, &tops, &ctx)?;
        let weight = self
            .loss_layers
            .iter()
            .find(|(idx, _)| *idx == li)
            .map(|(_, w)| *w)
            .unwrap_or(1.0);
        Ok(loss * weight)
    }

    /// Reverse-order backward respecting propagation needs.
    pub fn backward(&mut self, rt: &mut Runtime<S>) -> Result<(), NetError> {
        if !self.forward_done {
            return Err(NetError::BackwardBeforeForward);
        }
        for li in (0..self.layers.len()).rev() {
            if !self.need_backward[li] {
                continue;
            }
            let ctx = LayerCtx {
                phase: self.phase,
                iter: self.forward_calls.saturating_sub(1),
                master_seed: self.master_seed,
                layer_index: li,
            };
            let blobs = &self.blobs;
            let bottoms: Vec<BlobRef<'_, S>> = self.bottom_ids[li].iter().map(|&i| &blobs[i]).collect();
            let tops: Vec<BlobRef<'_, S>> = self.top_ids[li].iter().map(|&i| &blobs[i]).collect();
            let pd = &self.bottom_pd[li];
            self.layers[li].backward(rt, &tops, pd, &bottoms, &ctx)?;
        }
        Ok(())
    }

    /// Learnable parameters as (layer index, param index) handles.
    pub fn param_handles(&mut self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (li, layer) in self.layers.iter_mut().enumerate() {
            for pi in 0..layer.params().len() {
                out.push((li, pi));
            }
        }
        out
    }

    /// Runs `f` over one parameter blob.
    pub fn with_param<R>(
        &mut self,
        handle: (usize, usize),
        f: impl FnOnce(&mut Blob<S>) -> R,
    ) -> R {
        let mut params = self.layers[handle.0].params();
        f(params[handle.1])
    }

    /// lr/decay multipliers for a parameter handle.
    pub fn param_spec(&self, handle: (usize, usize)) -> crate::layers::ParamSpec {
        self.layers[handle.0].spec().param_spec(handle.1)
    }

    pub fn param_placement(&self, handle: (usize, usize)) -> Placement {
        self.layers[handle.0].placement()
    }

    /// Stable snapshot name for a parameter.
    pub fn param_name(&self, handle: (usize, usize)) -> String {
        format!("{}#{}", self.layers[handle.0].spec().name, handle.1)
    }

    /// Marks resident device copies stale so the next pass re-uploads
    /// parameters and multipliers (per-iteration weight loading emulation).
    pub fn invalidate_resident(&mut self, rt: &mut Runtime<S>) -> Result<(), NetError> {
        for layer in &mut self.layers {
            for tensor in layer.resident_tensors() {
                tensor.invalidate_device(rt)?;
            }
        }
        Ok(())
    }

    /// Zeroes every parameter gradient with a scale launch at the owning
    /// layer's placement.
    pub fn zero_param_diffs(&mut self, rt: &mut Runtime<S>) -> Result<(), NetError> {
        for li in 0..self.layers.len() {
            let place = self.layers[li].placement();
            let d = crate::layers::exec_device(rt, place)?;
            for blob in self.layers[li].params() {
                let view = blob.diff.stage_out(rt, place)?;
                crate::device::wrap::scal(rt, d, 0.0, view)?;
            }
        }
        Ok(())
    }

    /// Copies parameter values from another net by layer name; shapes must
    /// match.
    pub fn copy_params_from(&mut self, rt: &mut Runtime<S>, other: &mut Net<S>) -> Result<(), NetError> {
        for li in 0..self.layers.len() {
            let name = self.layers[li].spec().name.clone();
            let Some(oi) = other.layer_index(&name) else { continue };
            let values: Vec<Vec<S>> = other.layers[oi]
                .params()
                .into_iter()
                .map(|b| b.data.read_host(rt).map(|v| v.to_vec()))
                .collect::<Result<_, _>>()?;
            for (blob, vals) in self.layers[li].params().into_iter().zip(values) {
                blob.data.fill_from(rt, &vals)?;
            }
        }
        Ok(())
    }

    /// Total weighted loss of loss layers for reporting.
    pub fn loss_layer_indices(&self) -> &[(usize, f64)] {
        &self.loss_layers
    }

    pub fn layer_placement(&self, index: usize) -> Placement {
        self.layers[index].placement()
    }

    /// One timed forward+backward pass. Per-layer durations are wall-clock
    /// for host-placed layers and virtual-clock deltas for device-placed
    /// ones (transfers a layer triggers land in its own bucket).
    pub fn timed_iteration(&mut self, rt: &mut Runtime<S>) -> Result<TimedPass, NetError> {
        let device_clock = |rt: &Runtime<S>| -> f64 {
            (0..rt.device_count()).map(|i| rt.device_time_ms(crate::device::DeviceId(i)).unwrap_or(0.0)).sum()
        };
        let n = self.layers.len();
        let mut pass = TimedPass {
            loss: 0.0,
            forward_ms: vec![0.0; n],
            backward_ms: vec![0.0; n],
        };
        for li in 0..n {
            let wall0 = std::time::Instant::now();
            let virt0 = device_clock(rt);
            pass.loss += self.forward_layer(rt, li)?;
            pass.forward_ms[li] = match self.layers[li].placement() {
                Placement::Host => wall0.elapsed().as_secs_f64() * 1e3,
                Placement::Device(_) => device_clock(rt) - virt0,
            };
        }
        self.forward_calls += 1;
        self.forward_done = true;
        for li in (0..n).rev() {
            if !self.need_backward[li] {
                continue;
            }
            let wall0 = std::time::Instant::now();
            let virt0 = device_clock(rt);
            let ctx = LayerCtx {
                phase: self.phase,
                iter: self.forward_calls.saturating_sub(1),
                master_seed: self.master_seed,
                layer_index: li,
            };
            let blobs = &self.blobs;
            let bottoms: Vec<BlobRef<'_, S>> = self.bottom_ids[li].iter().map(|&i| &blobs[i]).collect();
            let tops: Vec<BlobRef<'_, S>> = self.top_ids[li].iter().map(|&i| &blobs[i]).collect();
            let pd = &self.bottom_pd[li];
            self.layers[li].backward(rt, &tops, pd, &bottoms, &ctx)?;
            pass.backward_ms[li] = match self.layers[li].placement() {
                Placement::Host => wall0.elapsed().as_secs_f64() * 1e3,
                Placement::Device(_) => device_clock(rt) - virt0,
            };
        }
        Ok(pass)
    }

    /// Runs forward+backward `iterations` times and returns the merged
    /// per-kernel statistics, including transfer rows. With
    /// `upload_per_iteration`, parameters re-upload every pass.
    pub fn trace(
        &mut self,
        rt: &mut Runtime<S>,
        iterations: u64,
        upload_per_iteration: bool,
    ) -> Result<ProfileReport, NetError> {
        let mark = rt.watermark();
        for _ in 0..iterations {
            if upload_per_iteration {
                self.invalidate_resident(rt)?;
            }
            self.forward(rt)?;
            self.backward(rt)?;
        }
        Ok(rt.report_since(&mark))
    }
}
