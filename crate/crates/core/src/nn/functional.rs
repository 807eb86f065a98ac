//! Precision-generic kernels used both by the autograd tape (`f32`) and by
//! the double-precision gradient checks in tests.
//!
//! Arrays are addressed as `(outer, len, inner)` around the reduced axis.

use num_traits::Float;

/// Softmax along the middle axis of an `(outer, len, inner)` array.
pub fn softmax_axis<F: Float>(x: &[F], outer: usize, len: usize, inner: usize) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for o in 0..outer {
        let base = o * len * inner;
        for i in 0..inner {
            let mut max = F::neg_infinity();
            for d in 0..len {
                max = max.max(x[base + d * inner + i]);
            }
            let mut sum = F::zero();
            for d in 0..len {
                let e = (x[base + d * inner + i] - max).exp();
                out[base + d * inner + i] = e;
                sum = sum + e;
            }
            for d in 0..len {
                out[base + d * inner + i] = out[base + d * inner + i] / sum;
            }
        }
    }
    out
}

/// Vector-Jacobian product of [`softmax_axis`] given its output `p`.
pub fn softmax_axis_backward<F: Float>(p: &[F], dp: &[F], outer: usize, len: usize, inner: usize) -> Vec<F> {
    let mut dx = vec![F::zero(); p.len()];
    for o in 0..outer {
        let base = o * len * inner;
        for i in 0..inner {
            let mut dot = F::zero();
            for d in 0..len {
                let k = base + d * inner + i;
                dot = dot + p[k] * dp[k];
            }
            for d in 0..len {
                let k = base + d * inner + i;
                dx[k] = p[k] * (dp[k] - dot);
            }
        }
    }
    dx
}

/// Expected index `Σ d·p(d)` along the middle axis; result is `(outer, inner)`.
pub fn expectation_axis<F: Float>(p: &[F], outer: usize, len: usize, inner: usize) -> Vec<F> {
    let mut out = vec![F::zero(); outer * inner];
    for o in 0..outer {
        let base = o * len * inner;
        let dst = &mut out[o * inner..(o + 1) * inner];
        for d in 0..len {
            let w = F::from(d).unwrap();
            for (i, v) in dst.iter_mut().enumerate() {
                *v = *v + w * p[base + d * inner + i];
            }
        }
    }
    out
}

pub fn expectation_axis_backward<F: Float>(dout: &[F], outer: usize, len: usize, inner: usize) -> Vec<F> {
    let mut dp = vec![F::zero(); outer * len * inner];
    for o in 0..outer {
        for d in 0..len {
            let w = F::from(d).unwrap();
            for i in 0..inner {
                dp[(o * len + d) * inner + i] = w * dout[o * inner + i];
            }
        }
    }
    dp
}
