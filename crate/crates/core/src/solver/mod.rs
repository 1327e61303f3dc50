//! The training loop: iterates forward/backward, then applies the three
//! update phases per parameter — normalization, regularization and the
//! policy-specific compute update — followed by the axpy that applies the
//! step. Update math runs as registered solver kernels at each owning
//! layer's placement; normalization and regularization are composed from
//! scale/axpy launches.

use thiserror::Error;

use crate::device::{wrap, Arg, DeviceError, Runtime};
use crate::layers::LayerError;
use crate::memory::{SyncedTensor, TensorShape};
use crate::net::{Net, NetError};
use crate::netdef::{learning_rate, Regularization, SolverSpec, SolverType};
use crate::scalar::Scalar;

pub mod snapshot;

pub use snapshot::{load_weights, SnapshotError};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("non-finite loss {loss} at iteration {iter}")]
    NonFiniteLoss { iter: u64, loss: f64 },
}

/// One logged training step.
#[derive(Debug, Clone)]
pub struct TrainEvent {
    pub iter: u64,
    pub lr: f64,
    pub loss: f64,
    pub smoothed_loss: f64,
    /// (output name, mean value) pairs from a test pass, when one ran.
    pub test: Option<Vec<(String, f64)>>,
}

/// Number of history tensors a policy maintains per parameter.
fn history_slots(t: SolverType) -> usize {
    match t {
        SolverType::Adam | SolverType::AdaDelta => 2,
        _ => 1,
    }
}

pub struct Solver<S: Scalar> {
    pub spec: SolverSpec,
    pub net: Net<S>,
    pub test_net: Option<Net<S>>,
    iter: u64,
    param_handles: Vec<(usize, usize)>,
    history: Vec<Vec<SyncedTensor<S>>>,
    sign_scratch: Vec<Option<SyncedTensor<S>>>,
    loss_window: std::collections::VecDeque<f64>,
}

impl<S: Scalar> Solver<S> {
    /// Wraps a built TRAIN net (and optional TEST net) with zeroed history.
    pub fn new(
        rt: &mut Runtime<S>,
        spec: SolverSpec,
        mut net: Net<S>,
        test_net: Option<Net<S>>,
    ) -> Result<Self, SolverError> {
        let param_handles = net.param_handles();
        let slots = history_slots(spec.solver_type);
        let mut history = Vec::with_capacity(param_handles.len());
        for &handle in &param_handles {
            let shape = net.with_param(handle, |b| b.shape().clone());
            let mut tensors = Vec::with_capacity(slots);
            for _ in 0..slots {
                let mut t = SyncedTensor::new(shape.clone());
                // History starts as explicit zeros.
                t.write_host(rt)?;
                tensors.push(t);
            }
            history.push(tensors);
        }
        let sign_scratch = (0..param_handles.len()).map(|_| None).collect();
        Ok(Solver {
            spec,
            net,
            test_net,
            iter: 0,
            param_handles,
            history,
            sign_scratch,
            loss_window: std::collections::VecDeque::new(),
        })
    }

    pub fn iter(&self) -> u64 {
        self.iter
    }

    pub(crate) fn set_iter(&mut self, iter: u64) {
        self.iter = iter;
        let calls = iter * self.spec.iter_size;
        self.net.set_cursor(calls);
        self.loss_window.clear();
    }

    pub(crate) fn param_handles(&self) -> &[(usize, usize)] {
        &self.param_handles
    }

    pub(crate) fn history_mut(&mut self) -> &mut Vec<Vec<SyncedTensor<S>>> {
        &mut self.history
    }

    pub fn current_lr(&self) -> f64 {
        learning_rate(&self.spec, self.iter)
    }

    /// Runs `iterations` training steps, reporting each through `on_event`.
    pub fn step(
        &mut self,
        rt: &mut Runtime<S>,
        iterations: u64,
        mut on_event: impl FnMut(&TrainEvent),
    ) -> Result<(), SolverError> {
        for _ in 0..iterations {
            let event = self.step_one(rt)?;
            on_event(&event);
        }
        Ok(())
    }

    fn step_one(&mut self, rt: &mut Runtime<S>) -> Result<TrainEvent, SolverError> {
        let iter_size = self.spec.iter_size.max(1);
        self.net.zero_param_diffs(rt)?;

        let mut loss = 0.0;
        for _ in 0..iter_size {
            loss += self.net.forward(rt)?;
            self.net.backward(rt)?;
        }
        loss /= iter_size as f64;
        if !loss.is_finite() {
            return Err(SolverError::NonFiniteLoss { iter: self.iter, loss });
        }

        let lr = learning_rate(&self.spec, self.iter);
        self.apply_updates(rt, lr, iter_size)?;
        self.iter += 1;

        let window = self.spec.display.max(1) as usize;
        self.loss_window.push_back(loss);
        while self.loss_window.len() > window {
            self.loss_window.pop_front();
        }
        let smoothed = self.loss_window.iter().sum::<f64>() / self.loss_window.len() as f64;

        let test = if self.spec.test_interval > 0
            && self.iter.is_multiple_of(self.spec.test_interval)
            && self.test_net.is_some()
        {
            Some(self.evaluate(rt)?)
        } else {
            None
        };

        Ok(TrainEvent { iter: self.iter, lr, loss, smoothed_loss: smoothed, test })
    }

    fn apply_updates(&mut self, rt: &mut Runtime<S>, lr: f64, iter_size: u64) -> Result<(), SolverError> {
        let s = &self.spec;
        for (pi, &handle) in self.param_handles.iter().enumerate() {
            let place = self.net.param_placement(handle);
            let d = crate::layers::exec_device(rt, place)?;
            let pspec = self.net.param_spec(handle);
            let local_rate = lr * pspec.lr_mult;
            let decay = s.weight_decay * pspec.decay_mult;

            let (diff, data) = self.net.with_param(handle, |blob| {
                Ok::<_, DeviceError>((
                    blob.diff.stage_out(rt, place)?,
                    blob.data.stage_in(rt, place)?,
                ))
            })?;

            // Normalization: average the accumulated micro-batch gradients.
            if iter_size > 1 {
                wrap::scal(rt, d, 1.0 / iter_size as f64, diff)?;
            }

            // Regularization.
            if decay != 0.0 {
                match s.regularization {
                    Regularization::L2 => {
                        wrap::axpy(rt, d, decay, data, diff)?;
                    }
                    Regularization::L1 => {
                        let count = diff.len;
                        let scratch = self.sign_scratch[pi].get_or_insert_with(|| {
                            SyncedTensor::new(TensorShape::new(&[count]).expect("param count >= 1"))
                        });
                        let sign_out = scratch.stage_out(rt, place)?;
                        wrap::sign(rt, d, data, sign_out)?;
                        let sign_in = scratch.stage_in(rt, place)?;
                        wrap::axpy(rt, d, decay, sign_in, diff)?;
                    }
                }
            }

            // Compute update: the policy kernel rewrites the gradient buffer
            // into the final step and maintains its history.
            let hist = &mut self.history[pi];
            match s.solver_type {
                SolverType::Sgd => {
                    let h = hist[0].stage_out(rt, place)?;
                    rt.launch(
                        d,
                        "Sgd_Update",
                        &[Arg::InOut(diff), Arg::InOut(h), Arg::Scalar(local_rate), Arg::Scalar(s.momentum)],
                    )?;
                }
                SolverType::Nesterov => {
                    let h = hist[0].stage_out(rt, place)?;
                    rt.launch(
                        d,
                        "Nesterov_Update",
                        &[Arg::InOut(diff), Arg::InOut(h), Arg::Scalar(local_rate), Arg::Scalar(s.momentum)],
                    )?;
                }
                SolverType::AdaGrad => {
                    let h = hist[0].stage_out(rt, place)?;
                    rt.launch(
                        d,
                        "Adagrad_Update",
                        &[Arg::InOut(diff), Arg::InOut(h), Arg::Scalar(local_rate), Arg::Scalar(s.delta)],
                    )?;
                }
                SolverType::RmsProp => {
                    let h = hist[0].stage_out(rt, place)?;
                    rt.launch(
                        d,
                        "Rmsprop_Update",
                        &[
                            Arg::InOut(diff),
                            Arg::InOut(h),
                            Arg::Scalar(local_rate),
                            Arg::Scalar(s.rms_decay),
                            Arg::Scalar(s.delta),
                        ],
                    )?;
                }
                SolverType::AdaDelta => {
                    let h1 = hist[0].stage_out(rt, place)?;
                    let h2 = hist[1].stage_out(rt, place)?;
                    rt.launch(
                        d,
                        "Adadelta_Update",
                        &[
                            Arg::InOut(diff),
                            Arg::InOut(h1),
                            Arg::InOut(h2),
                            Arg::Scalar(local_rate),
                            Arg::Scalar(s.momentum),
                            Arg::Scalar(s.delta),
                        ],
                    )?;
                }
                SolverType::Adam => {
                    let m = hist[0].stage_out(rt, place)?;
                    let v = hist[1].stage_out(rt, place)?;
                    rt.launch(
                        d,
                        "Adam_Update",
                        &[
                            Arg::InOut(diff),
                            Arg::InOut(m),
                            Arg::InOut(v),
                            Arg::Scalar(local_rate),
                            Arg::Scalar(s.momentum),
                            Arg::Scalar(s.momentum2),
                            Arg::Scalar(s.delta),
                            Arg::Scalar((self.iter + 1) as f64),
                        ],
                    )?;
                }
            }

            // Apply: param <- param - update.
            let data_out = self.net.with_param(handle, |blob| blob.data.stage_out(rt, place))?;
            wrap::axpy(rt, d, -1.0, diff, data_out)?;
        }
        Ok(())
    }

    /// Copies parameters into the test net and averages its output layers
    /// over `test_iter` batches, always starting from the head of the test
    /// set so an evaluation is a pure function of the weights.
    pub fn evaluate(&mut self, rt: &mut Runtime<S>) -> Result<Vec<(String, f64)>, SolverError> {
        let test_net = self.test_net.as_mut().expect("caller checked");
        test_net.set_cursor(0);
        test_net.copy_params_from(rt, &mut self.net)?;
        let iters = self.spec.test_iter.max(1);
        let mut sums: Vec<(String, f64)> = Vec::new();
        for _ in 0..iters {
            let loss = test_net.forward(rt)?;
            let mut outputs = vec![("loss".to_string(), loss)];
            for li in 0..test_net.layer_count() {
                let spec = test_net.layer(li).spec();
                if matches!(spec.params, crate::layers::LayerParams::Accuracy { .. }) {
                    let name = spec.tops.first().cloned().unwrap_or_else(|| spec.name.clone());
                    let value = test_net
                        .blob(&name)
                        .map(|b| b.borrow_mut().data.read_host(rt).map(|v| v[0].to_f64()))
                        .transpose()?
                        .unwrap_or(0.0);
                    outputs.push((name, value));
                }
            }
            if sums.is_empty() {
                sums = outputs;
            } else {
                for (acc, (_, v)) in sums.iter_mut().zip(outputs) {
                    acc.1 += v;
                }
            }
        }
        for entry in &mut sums {
            entry.1 /= iters as f64;
        }
        Ok(sums)
    }
}
