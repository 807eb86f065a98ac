//! Separable linear resampling (bi-/trilinear without corner alignment).

use crate::tensor::split_axis;

struct Taps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f32>,
}

fn taps(in_len: usize, out_len: usize) -> Taps {
    let scale = in_len as f64 / out_len as f64;
    let mut t =
        Taps { lo: Vec::with_capacity(out_len), hi: Vec::with_capacity(out_len), frac: Vec::with_capacity(out_len) };
    for o in 0..out_len {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let lo = (src.floor() as usize).min(in_len - 1);
        let hi = (lo + 1).min(in_len - 1);
        t.lo.push(lo);
        t.hi.push(hi);
        t.frac.push((src - lo as f64) as f32);
    }
    t
}

/// Resizes `axis` of a row-major array to `out_len` samples.
pub fn resize_axis(data: &[f32], shape: &[usize], axis: usize, out_len: usize) -> (Vec<f32>, Vec<usize>) {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut new_shape = shape.to_vec();
    new_shape[axis] = out_len;
    if len == out_len {
        return (data.to_vec(), new_shape);
    }
    let t = taps(len, out_len);
    let mut out = vec![0.0; outer * out_len * inner];
    for o in 0..outer {
        let src = &data[o * len * inner..(o + 1) * len * inner];
        let dst = &mut out[o * out_len * inner..(o + 1) * out_len * inner];
        for j in 0..out_len {
            let (a, b, f) = (t.lo[j], t.hi[j], t.frac[j]);
            let row = &mut dst[j * inner..(j + 1) * inner];
            let ra = &src[a * inner..(a + 1) * inner];
            let rb = &src[b * inner..(b + 1) * inner];
            for ((d, &va), &vb) in row.iter_mut().zip(ra).zip(rb) {
                *d = va + f * (vb - va);
            }
        }
    }
    (out, new_shape)
}

/// Adjoint of [`resize_axis`]: maps a gradient on the resized array back to
/// the original `shape`.
pub fn resize_axis_adjoint(grad: &[f32], shape: &[usize], axis: usize, out_len: usize) -> Vec<f32> {
    let (outer, len, inner) = split_axis(shape, axis);
    if len == out_len {
        return grad.to_vec();
    }
    let t = taps(len, out_len);
    let mut out = vec![0.0; outer * len * inner];
    for o in 0..outer {
        let src = &grad[o * out_len * inner..(o + 1) * out_len * inner];
        let dst = &mut out[o * len * inner..(o + 1) * len * inner];
        for j in 0..out_len {
            let (a, b, f) = (t.lo[j], t.hi[j], t.frac[j]);
            let row = &src[j * inner..(j + 1) * inner];
            for (i, &g) in row.iter().enumerate() {
                dst[a * inner + i] += (1.0 - f) * g;
                dst[b * inner + i] += f * g;
            }
        }
    }
    out
}

/// Resizes several axes in turn; `targets` pairs an axis with its new length.
pub fn resize(data: &[f32], shape: &[usize], targets: &[(usize, usize)]) -> (Vec<f32>, Vec<usize>) {
    let mut cur = data.to_vec();
    let mut cur_shape = shape.to_vec();
    for &(axis, len) in targets {
        let (next, next_shape) = resize_axis(&cur, &cur_shape, axis, len);
        cur = next;
        cur_shape = next_shape;
    }
    (cur, cur_shape)
}

/// Adjoint of [`resize`] with the same arguments.
pub fn resize_adjoint(grad: &[f32], shape: &[usize], targets: &[(usize, usize)]) -> Vec<f32> {
    // intermediate shapes of the forward pass
    let mut shapes = vec![shape.to_vec()];
    for &(axis, len) in targets {
        let mut s = shapes.last().unwrap().clone();
        s[axis] = len;
        shapes.push(s);
    }
    let mut g = grad.to_vec();
    for (i, &(axis, len)) in targets.iter().enumerate().rev() {
        g = resize_axis_adjoint(&g, &shapes[i], axis, len);
    }
    g
}
