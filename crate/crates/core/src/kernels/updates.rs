//! Solver compute-update kernels. Each transforms the gradient buffer into
//! the final update step in place, maintaining its history tensors; the
//! caller applies the step with an axpy(-1) against the parameter.

use super::{check_len, KernelError};
use crate::scalar::Scalar;

/// h <- mu*h + lr*g; update = h.
pub fn sgd_update<S: Scalar>(diff: &mut [S], hist: &mut [S], lr: f64, momentum: f64) -> Result<(), KernelError> {
    check_len("sgd hist", hist, diff.len())?;
    let lr = S::from_f64(lr);
    let mu = S::from_f64(momentum);
    for (g, h) in diff.iter_mut().zip(hist.iter_mut()) {
        *h = mu * *h + lr * *g;
        *g = *h;
    }
    Ok(())
}

/// h' <- mu*h + lr*g; update = (1+mu)*h' - mu*h.
pub fn nesterov_update<S: Scalar>(
    diff: &mut [S],
    hist: &mut [S],
    lr: f64,
    momentum: f64,
) -> Result<(), KernelError> {
    check_len("nesterov hist", hist, diff.len())?;
    let lr = S::from_f64(lr);
    let mu = S::from_f64(momentum);
    for (g, h) in diff.iter_mut().zip(hist.iter_mut()) {
        let h_prev = *h;
        *h = mu * *h + lr * *g;
        *g = (S::one() + mu) * *h - mu * h_prev;
    }
    Ok(())
}

/// h <- h + g^2; update = lr * g / (sqrt(h) + delta).
pub fn adagrad_update<S: Scalar>(diff: &mut [S], hist: &mut [S], lr: f64, delta: f64) -> Result<(), KernelError> {
    check_len("adagrad hist", hist, diff.len())?;
    let lr = S::from_f64(lr);
    let delta = S::from_f64(delta);
    for (g, h) in diff.iter_mut().zip(hist.iter_mut()) {
        *h += *g * *g;
        *g = lr * *g / (h.sqrt() + delta);
    }
    Ok(())
}

/// h <- rho*h + (1-rho)*g^2; update = lr * g / (sqrt(h) + delta).
pub fn rmsprop_update<S: Scalar>(
    diff: &mut [S],
    hist: &mut [S],
    lr: f64,
    rms_decay: f64,
    delta: f64,
) -> Result<(), KernelError> {
    check_len("rmsprop hist", hist, diff.len())?;
    let lr = S::from_f64(lr);
    let rho = S::from_f64(rms_decay);
    let delta = S::from_f64(delta);
    for (g, h) in diff.iter_mut().zip(hist.iter_mut()) {
        *h = rho * *h + (S::one() - rho) * *g * *g;
        *g = lr * *g / (h.sqrt() + delta);
    }
    Ok(())
}

/// h1 <- mu*h1 + (1-mu)*g^2; step = g * sqrt(h2+delta)/sqrt(h1+delta);
/// h2 <- mu*h2 + (1-mu)*step^2; update = lr * step.
pub fn adadelta_update<S: Scalar>(
    diff: &mut [S],
    h1: &mut [S],
    h2: &mut [S],
    lr: f64,
    momentum: f64,
    delta: f64,
) -> Result<(), KernelError> {
    check_len("adadelta h1", h1, diff.len())?;
    check_len("adadelta h2", h2, diff.len())?;
    let lr = S::from_f64(lr);
    let mu = S::from_f64(momentum);
    let delta = S::from_f64(delta);
    for i in 0..diff.len() {
        let g = diff[i];
        h1[i] = mu * h1[i] + (S::one() - mu) * g * g;
        let step = g * (h2[i] + delta).sqrt() / (h1[i] + delta).sqrt();
        h2[i] = mu * h2[i] + (S::one() - mu) * step * step;
        diff[i] = lr * step;
    }
    Ok(())
}

/// m <- mu*m + (1-mu)*g; v <- b2*v + (1-b2)*g^2;
/// update = lr * (sqrt(1-b2^t)/(1-mu^t)) * m / (sqrt(v) + delta).
#[allow(clippy::too_many_arguments)]
pub fn adam_update<S: Scalar>(
    diff: &mut [S],
    m: &mut [S],
    v: &mut [S],
    lr: f64,
    momentum: f64,
    momentum2: f64,
    delta: f64,
    t: u64,
) -> Result<(), KernelError> {
    check_len("adam m", m, diff.len())?;
    check_len("adam v", v, diff.len())?;
    if t == 0 {
        return Err(KernelError::BadArg("adam step index starts at 1".into()));
    }
    let mu = S::from_f64(momentum);
    let b2 = S::from_f64(momentum2);
    let delta = S::from_f64(delta);
    let correction = S::from_f64(
        (1.0 - momentum2.powi(t as i32)).sqrt() / (1.0 - momentum.powi(t as i32)),
    );
    let lr = S::from_f64(lr);
    for i in 0..diff.len() {
        let g = diff[i];
        m[i] = mu * m[i] + (S::one() - mu) * g;
        v[i] = b2 * v[i] + (S::one() - b2) * g * g;
        diff[i] = lr * correction * m[i] / (v[i].sqrt() + delta);
    }
    Ok(())
}
