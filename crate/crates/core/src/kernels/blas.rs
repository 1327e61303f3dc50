//! Naive BLAS routines: gemm, gemv and the small vector kernels.
//! Correctness-first scalar loops; the gemm inner loops are arranged so the
//! compiler can vectorize the contiguous case.

use super::{check_len, KernelError};
use crate::scalar::Scalar;

/// C <- alpha * op(A) * op(B) + beta * C, row-major.
/// op(A) is m x k and op(B) is k x n; flags transpose the stored matrix.
#[allow(clippy::too_many_arguments)]
pub fn gemm<S: Scalar>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: S,
    a: &[S],
    b: &[S],
    beta: S,
    c: &mut [S],
) -> Result<(), KernelError> {
    check_len("gemm A", a, m * k)?;
    check_len("gemm B", b, k * n)?;
    check_len("gemm C", c, m * n)?;

    if beta == S::zero() {
        c.fill(S::zero());
    } else if beta != S::one() {
        for v in c.iter_mut() {
            *v *= beta;
        }
    }
    if alpha == S::zero() {
        return Ok(());
    }

    match (trans_a, trans_b) {
        (false, false) => {
            // C[i] row accumulates k rank-1 updates; j loop is contiguous.
            for i in 0..m {
                let c_row = &mut c[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = alpha * a[i * k + p];
                    if av == S::zero() {
                        continue;
                    }
                    let b_row = &b[p * n..(p + 1) * n];
                    for (cv, bv) in c_row.iter_mut().zip(b_row) {
                        *cv += av * *bv;
                    }
                }
            }
        }
        (false, true) => {
            // B stored n x k: dot products over contiguous rows.
            for i in 0..m {
                let a_row = &a[i * k..(i + 1) * k];
                for j in 0..n {
                    let b_row = &b[j * k..(j + 1) * k];
                    let mut acc = S::zero();
                    for (av, bv) in a_row.iter().zip(b_row) {
                        acc += *av * *bv;
                    }
                    c[i * n + j] += alpha * acc;
                }
            }
        }
        (true, false) => {
            // A stored k x m.
            for p in 0..k {
                let b_row = &b[p * n..(p + 1) * n];
                for i in 0..m {
                    let av = alpha * a[p * m + i];
                    if av == S::zero() {
                        continue;
                    }
                    let c_row = &mut c[i * n..(i + 1) * n];
                    for (cv, bv) in c_row.iter_mut().zip(b_row) {
                        *cv += av * *bv;
                    }
                }
            }
        }
        (true, true) => {
            for i in 0..m {
                for j in 0..n {
                    let mut acc = S::zero();
                    for p in 0..k {
                        acc += a[p * m + i] * b[j * k + p];
                    }
                    c[i * n + j] += alpha * acc;
                }
            }
        }
    }
    Ok(())
}

/// y <- alpha * op(A) * x + beta * y, with A stored m x n row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemv<S: Scalar>(
    trans: bool,
    m: usize,
    n: usize,
    alpha: S,
    a: &[S],
    x: &[S],
    beta: S,
    y: &mut [S],
) -> Result<(), KernelError> {
    check_len("gemv A", a, m * n)?;
    let (xlen, ylen) = if trans { (m, n) } else { (n, m) };
    check_len("gemv x", x, xlen)?;
    check_len("gemv y", y, ylen)?;

    if beta == S::zero() {
        y.fill(S::zero());
    } else if beta != S::one() {
        for v in y.iter_mut() {
            *v *= beta;
        }
    }
    if alpha == S::zero() {
        return Ok(());
    }

    if !trans {
        for i in 0..m {
            let row = &a[i * n..(i + 1) * n];
            let mut acc = S::zero();
            for (av, xv) in row.iter().zip(x) {
                acc += *av * *xv;
            }
            y[i] += alpha * acc;
        }
    } else {
        for i in 0..m {
            let row = &a[i * n..(i + 1) * n];
            let xv = alpha * x[i];
            if xv == S::zero() {
                continue;
            }
            for (yv, av) in y.iter_mut().zip(row) {
                *yv += xv * *av;
            }
        }
    }
    Ok(())
}

/// y <- alpha * x + y.
pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) -> Result<(), KernelError> {
    check_len("axpy y", y, x.len())?;
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * *xv;
    }
    Ok(())
}

/// x <- alpha * x.
pub fn scal<S: Scalar>(alpha: S, x: &mut [S]) {
    for v in x.iter_mut() {
        *v *= alpha;
    }
}

/// Sum of absolute values.
pub fn asum<S: Scalar>(x: &[S]) -> S {
    let mut acc = S::zero();
    for v in x {
        acc += v.abs();
    }
    acc
}

/// out <- x + y.
pub fn add<S: Scalar>(x: &[S], y: &[S], out: &mut [S]) -> Result<(), KernelError> {
    check_len("add y", y, x.len())?;
    check_len("add out", out, x.len())?;
    for i in 0..x.len() {
        out[i] = x[i] + y[i];
    }
    Ok(())
}

/// out <- sign(x), with sign(0) = 0.
pub fn sign<S: Scalar>(x: &[S], out: &mut [S]) -> Result<(), KernelError> {
    check_len("sign out", out, x.len())?;
    for (ov, xv) in out.iter_mut().zip(x) {
        *ov = if *xv > S::zero() {
            S::one()
        } else if *xv < S::zero() {
            -S::one()
        } else {
            S::zero()
        };
    }
    Ok(())
}
