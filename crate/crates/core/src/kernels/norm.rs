//! Across-channel local response normalization and the softmax family.

use super::{check_len, KernelError};
use crate::scalar::Scalar;

/// LRN parameters; `local_size` is the odd across-channel window width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrnParams {
    pub local_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        LrnParams { local_size: 5, alpha: 1e-4, beta: 0.75, k: 1.0 }
    }
}

impl LrnParams {
    pub fn validate(&self) -> Result<(), KernelError> {
        if self.local_size == 0 || self.local_size.is_multiple_of(2) {
            return Err(KernelError::BadArg("lrn local_size must be odd and >= 1".into()));
        }
        if self.k <= 0.0 {
            return Err(KernelError::BadArg("lrn k must be > 0".into()));
        }
        Ok(())
    }
}

fn lrn_window(c: usize, channels: usize, size: usize) -> (usize, usize) {
    let half = (size - 1) / 2;
    let lo = c.saturating_sub(half);
    let hi = (c + half + 1).min(channels);
    (lo, hi)
}

/// scale[i] = k + (alpha/size) * sum of x^2 over the channel window.
pub fn lrn_scale<S: Scalar>(
    x: &[S],
    n: usize,
    channels: usize,
    spatial: usize,
    p: &LrnParams,
    scale: &mut [S],
) -> Result<(), KernelError> {
    p.validate()?;
    check_len("lrn x", x, n * channels * spatial)?;
    check_len("lrn scale", scale, n * channels * spatial)?;
    let k = S::from_f64(p.k);
    let alpha_over_n = S::from_f64(p.alpha / p.local_size as f64);
    for img in 0..n {
        let base = img * channels * spatial;
        for c in 0..channels {
            let (lo, hi) = lrn_window(c, channels, p.local_size);
            for s in 0..spatial {
                let mut acc = S::zero();
                for j in lo..hi {
                    let v = x[base + j * spatial + s];
                    acc += v * v;
                }
                scale[base + c * spatial + s] = k + alpha_over_n * acc;
            }
        }
    }
    Ok(())
}

/// y = x * scale^(-beta).
pub fn lrn_output<S: Scalar>(x: &[S], scale: &[S], beta: f64, y: &mut [S]) -> Result<(), KernelError> {
    check_len("lrn scale", scale, x.len())?;
    check_len("lrn y", y, x.len())?;
    let nb = S::from_f64(-beta);
    for i in 0..x.len() {
        y[i] = x[i] * scale[i].powf(nb);
    }
    Ok(())
}

/// Exact analytic gradient of the LRN output contracted with the top
/// gradient:
/// bd_i = td_i * scale_i^(-beta)
///        - (2*alpha*beta/size) * x_i * sum_{j in window(i)} td_j * y_j / scale_j.
#[allow(clippy::too_many_arguments)]
pub fn lrn_diff<S: Scalar>(
    x: &[S],
    y: &[S],
    scale: &[S],
    top_diff: &[S],
    n: usize,
    channels: usize,
    spatial: usize,
    p: &LrnParams,
    bottom_diff: &mut [S],
) -> Result<(), KernelError> {
    p.validate()?;
    let total = n * channels * spatial;
    check_len("lrn x", x, total)?;
    check_len("lrn y", y, total)?;
    check_len("lrn scale", scale, total)?;
    check_len("lrn top_diff", top_diff, total)?;
    check_len("lrn bottom_diff", bottom_diff, total)?;
    let nb = S::from_f64(-p.beta);
    let factor = S::from_f64(2.0 * p.alpha * p.beta / p.local_size as f64);
    for img in 0..n {
        let base = img * channels * spatial;
        for c in 0..channels {
            let (lo, hi) = lrn_window(c, channels, p.local_size);
            for s in 0..spatial {
                let i = base + c * spatial + s;
                let mut acc = S::zero();
                for j in lo..hi {
                    let jj = base + j * spatial + s;
                    acc += top_diff[jj] * y[jj] / scale[jj];
                }
                bottom_diff[i] = top_diff[i] * scale[i].powf(nb) - factor * x[i] * acc;
            }
        }
    }
    Ok(())
}

/// Row-stable softmax over the channel axis of an N x C x S tensor.
pub fn softmax<S: Scalar>(
    x: &[S],
    n: usize,
    channels: usize,
    spatial: usize,
    p: &mut [S],
) -> Result<(), KernelError> {
    check_len("softmax x", x, n * channels * spatial)?;
    check_len("softmax p", p, n * channels * spatial)?;
    for img in 0..n {
        let base = img * channels * spatial;
        for s in 0..spatial {
            let mut max = S::neg_infinity();
            for c in 0..channels {
                max = max.max(x[base + c * spatial + s]);
            }
            let mut sum = S::zero();
            for c in 0..channels {
                let e = (x[base + c * spatial + s] - max).exp();
                p[base + c * spatial + s] = e;
                sum += e;
            }
            for c in 0..channels {
                p[base + c * spatial + s] /= sum;
            }
        }
    }
    Ok(())
}

/// Gradient of a plain softmax output contracted with the top gradient.
pub fn softmax_backward<S: Scalar>(
    p: &[S],
    top_diff: &[S],
    n: usize,
    channels: usize,
    spatial: usize,
    bottom_diff: &mut [S],
) -> Result<(), KernelError> {
    let total = n * channels * spatial;
    check_len("softmax p", p, total)?;
    check_len("softmax top_diff", top_diff, total)?;
    check_len("softmax bottom_diff", bottom_diff, total)?;
    for img in 0..n {
        let base = img * channels * spatial;
        for s in 0..spatial {
            let mut dot = S::zero();
            for c in 0..channels {
                let i = base + c * spatial + s;
                dot += top_diff[i] * p[i];
            }
            for c in 0..channels {
                let i = base + c * spatial + s;
                bottom_diff[i] = p[i] * (top_diff[i] - dot);
            }
        }
    }
    Ok(())
}

/// Per-position negative log-likelihood: out[n,s] = -ln p[label(n,s)].
pub fn softmax_loss_forward<S: Scalar>(
    p: &[S],
    labels: &[S],
    n: usize,
    channels: usize,
    spatial: usize,
    per_loss: &mut [S],
) -> Result<(), KernelError> {
    check_len("loss p", p, n * channels * spatial)?;
    check_len("loss labels", labels, n * spatial)?;
    check_len("loss out", per_loss, n * spatial)?;
    for img in 0..n {
        for s in 0..spatial {
            let label = labels[img * spatial + s].to_f64();
            if label < 0.0 || label >= channels as f64 || label.fract() != 0.0 {
                return Err(KernelError::BadArg(format!(
                    "label {} out of range [0,{})",
                    label, channels
                )));
            }
            let prob = p[img * channels * spatial + (label as usize) * spatial + s];
            let floor = S::from_f64(f64::MIN_POSITIVE);
            per_loss[img * spatial + s] = -(prob.max(floor)).ln();
        }
    }
    Ok(())
}

/// diff = p - onehot(label); loss-weight and batch scaling are applied by a
/// following scale pass.
pub fn softmax_loss_backward<S: Scalar>(
    p: &[S],
    labels: &[S],
    n: usize,
    channels: usize,
    spatial: usize,
    diff: &mut [S],
) -> Result<(), KernelError> {
    check_len("loss p", p, n * channels * spatial)?;
    check_len("loss labels", labels, n * spatial)?;
    check_len("loss diff", diff, n * channels * spatial)?;
    diff.copy_from_slice(p);
    for img in 0..n {
        for s in 0..spatial {
            let label = labels[img * spatial + s].to_f64();
            if label < 0.0 || label >= channels as f64 || label.fract() != 0.0 {
                return Err(KernelError::BadArg(format!(
                    "label {} out of range [0,{})",
                    label, channels
                )));
            }
            diff[img * channels * spatial + (label as usize) * spatial + s] -= S::one();
        }
    }
    Ok(())
}
