//! Convolution kernels (2-D and 3-D) lowered to GEMM through im2col.
//!
//! Every convolution is handled as a 3-D convolution; 2-D layers use a
//! depth of one with a unit kernel along that axis. Tensors are
//! `[batch, channels, depth?, height, width]` and the weights of a forward
//! convolution are `[out, in, kd?, kh, kw]`. A transposed convolution stores
//! its weights as `[in, out, kd, kh, kw]`, which is the weight of the forward
//! convolution it is the adjoint of.

use super::gemm::{matmul, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_dims: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    /// Square 2-D convolution over `h × w` inputs.
    pub fn conv2d(cin: usize, cout: usize, hw: [usize; 2], k: usize, stride: usize, pad: usize) -> Self {
        ConvGeom {
            in_channels: cin,
            out_channels: cout,
            in_dims: [1, hw[0], hw[1]],
            kernel: [1, k, k],
            stride: [1, stride, stride],
            pad: [0, pad, pad],
        }
    }

    /// Cubic 3-D convolution over `d × h × w` inputs.
    pub fn conv3d(cin: usize, cout: usize, dims: [usize; 3], k: usize, stride: usize, pad: usize) -> Self {
        ConvGeom {
            in_channels: cin,
            out_channels: cout,
            in_dims: dims,
            kernel: [k; 3],
            stride: [stride; 3],
            pad: [pad; 3],
        }
    }

    pub fn out_dims(&self) -> [usize; 3] {
        let mut out = [0; 3];
        for i in 0..3 {
            out[i] = (self.in_dims[i] + 2 * self.pad[i] - self.kernel[i]) / self.stride[i] + 1;
        }
        out
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn in_volume(&self) -> usize {
        self.in_dims.iter().product()
    }

    pub fn out_volume(&self) -> usize {
        self.out_dims().iter().product()
    }

    /// Rows of the im2col matrix.
    pub fn col_rows(&self) -> usize {
        self.in_channels * self.kernel_volume()
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.col_rows()
    }

    /// Multiply-accumulates for one sample, counted on the output grid.
    pub fn macs(&self) -> u64 {
        (self.out_channels * self.col_rows() * self.out_volume()) as u64
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.stride == [1; 3] && self.pad == [0; 3]
    }
}

/// Output columns `[lo, hi)` for which `o * stride + k - pad` lands inside `0..len`.
fn valid_range(out_len: usize, len: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    // o*stride + k >= pad
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // o*stride + k - pad <= len - 1
    let hi = if len + pad < k + 1 { 0 } else { ((len + pad - k - 1) / stride + 1).min(out_len) };
    (lo.min(hi), hi)
}

/// Unfolds one sample `x` (`[C, D, H, W]`) into `cols` (`[C·kvol, Do·Ho·Wo]`).
pub fn im2col(x: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let [d, h, w] = g.in_dims;
    let [od, oh, ow] = g.out_dims();
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let ovol = od * oh * ow;
    let mut row = 0;
    for c in 0..g.in_channels {
        let xc = &x[c * d * h * w..(c + 1) * d * h * w];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let dst = &mut cols[row * ovol..(row + 1) * ovol];
                    let (wlo, whi) = valid_range(ow, w, sw, e, pw);
                    for z in 0..od {
                        let iz = (z * sd + a) as isize - pd as isize;
                        for y in 0..oh {
                            let iy = (y * sh + b) as isize - ph as isize;
                            let out = &mut dst[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                            if iz < 0 || iz >= d as isize || iy < 0 || iy >= h as isize {
                                out.fill(0.0);
                                continue;
                            }
                            let src = &xc[(iz as usize * h + iy as usize) * w..][..w];
                            out[..wlo].fill(0.0);
                            out[whi..].fill(0.0);
                            if whi > wlo {
                                let start = wlo * sw + e - pw;
                                if sw == 1 {
                                    out[wlo..whi].copy_from_slice(&src[start..start + (whi - wlo)]);
                                } else {
                                    for (i, o) in out[wlo..whi].iter_mut().enumerate() {
                                        *o = src[start + i * sw];
                                    }
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` back into `x`.
pub fn col2im(cols: &[f32], g: &ConvGeom, x: &mut [f32]) {
    let [d, h, w] = g.in_dims;
    let [od, oh, ow] = g.out_dims();
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let ovol = od * oh * ow;
    let mut row = 0;
    for c in 0..g.in_channels {
        let xc = &mut x[c * d * h * w..(c + 1) * d * h * w];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let src = &cols[row * ovol..(row + 1) * ovol];
                    let (wlo, whi) = valid_range(ow, w, sw, e, pw);
                    for z in 0..od {
                        let iz = (z * sd + a) as isize - pd as isize;
                        if iz < 0 || iz >= d as isize {
                            continue;
                        }
                        for y in 0..oh {
                            let iy = (y * sh + b) as isize - ph as isize;
                            if iy < 0 || iy >= h as isize || whi <= wlo {
                                continue;
                            }
                            let input = &src[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                            let dst = &mut xc[(iz as usize * h + iy as usize) * w..][..w];
                            let start = wlo * sw + e - pw;
                            for (i, v) in input[wlo..whi].iter().enumerate() {
                                dst[start + i * sw] += *v;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Forward convolution of a batch. `x` holds `batch` samples laid out per `g`.
pub fn conv_forward(x: &[f32], w: &[f32], g: &ConvGeom, batch: usize) -> Vec<f32> {
    let ivol = g.in_channels * g.in_volume();
    let ovol = g.out_volume();
    let rows = g.col_rows();
    let mut y = vec![0.0; batch * g.out_channels * ovol];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; rows * ovol] };
    let wm = Mat::new(w, g.out_channels, rows);
    for b in 0..batch {
        let xb = &x[b * ivol..(b + 1) * ivol];
        let yb = &mut y[b * g.out_channels * ovol..(b + 1) * g.out_channels * ovol];
        let cm = if g.is_pointwise() {
            Mat::new(xb, rows, ovol)
        } else {
            im2col(xb, g, &mut cols);
            Mat::new(&cols, rows, ovol)
        };
        matmul(wm, cm, yb, 0.0);
    }
    y
}

/// Gradients of [`conv_forward`]. Returns `(dx, dw)`; `dx` only when requested.
pub fn conv_backward(
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    g: &ConvGeom,
    batch: usize,
    need_dx: bool,
) -> (Option<Vec<f32>>, Vec<f32>) {
    let ivol = g.in_channels * g.in_volume();
    let ovol = g.out_volume();
    let rows = g.col_rows();
    let mut dw = vec![0.0; g.weight_len()];
    let mut dx = if need_dx { Some(vec![0.0; batch * ivol]) } else { None };
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; rows * ovol] };
    let mut dcols = if need_dx && !g.is_pointwise() { vec![0.0; rows * ovol] } else { Vec::new() };
    let wm = Mat::new(w, g.out_channels, rows);
    for b in 0..batch {
        let xb = &x[b * ivol..(b + 1) * ivol];
        let dyb = Mat::new(&dy[b * g.out_channels * ovol..(b + 1) * g.out_channels * ovol], g.out_channels, ovol);
        let cm = if g.is_pointwise() {
            Mat::new(xb, rows, ovol)
        } else {
            im2col(xb, g, &mut cols);
            Mat::new(&cols, rows, ovol)
        };
        matmul(dyb, cm.t(), &mut dw, 1.0);
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * ivol..(b + 1) * ivol];
            if g.is_pointwise() {
                matmul(wm.t(), dyb, dxb, 1.0);
            } else {
                matmul(wm.t(), dyb, &mut dcols, 0.0);
                col2im(&dcols, g, dxb);
            }
        }
    }
    (dx, dw)
}

/// Transposed convolution: the adjoint of the forward convolution `g`, which
/// maps the (larger) output grid `g.in_dims` to the input grid `g.out_dims()`.
///
/// `x` is `[batch, g.out_channels, g.out_dims()]`, the result is
/// `[batch, g.in_channels, g.in_dims]`.
pub fn conv_transpose_forward(x: &[f32], w: &[f32], g: &ConvGeom, batch: usize) -> Vec<f32> {
    let xvol = g.out_channels * g.out_volume();
    let yvol = g.in_channels * g.in_volume();
    let rows = g.col_rows();
    let mut y = vec![0.0; batch * yvol];
    let mut cols = vec![0.0; rows * g.out_volume()];
    let wm = Mat::new(w, g.out_channels, rows);
    for b in 0..batch {
        let xb = Mat::new(&x[b * xvol..(b + 1) * xvol], g.out_channels, g.out_volume());
        matmul(wm.t(), xb, &mut cols, 0.0);
        col2im(&cols, g, &mut y[b * yvol..(b + 1) * yvol]);
    }
    y
}

pub fn conv_transpose_backward(
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    g: &ConvGeom,
    batch: usize,
    need_dx: bool,
) -> (Option<Vec<f32>>, Vec<f32>) {
    let xvol = g.out_channels * g.out_volume();
    let yvol = g.in_channels * g.in_volume();
    let rows = g.col_rows();
    let mut dw = vec![0.0; g.weight_len()];
    let mut dx = if need_dx { Some(vec![0.0; batch * xvol]) } else { None };
    let mut cols = vec![0.0; rows * g.out_volume()];
    let wm = Mat::new(w, g.out_channels, rows);
    for b in 0..batch {
        im2col(&dy[b * yvol..(b + 1) * yvol], g, &mut cols);
        let cm = Mat::new(&cols, rows, g.out_volume());
        let xb = Mat::new(&x[b * xvol..(b + 1) * xvol], g.out_channels, g.out_volume());
        matmul(xb, cm.t(), &mut dw, 1.0);
        if let Some(dx) = dx.as_mut() {
            matmul(wm, cm, &mut dx[b * xvol..(b + 1) * xvol], 0.0);
        }
    }
    (dx, dw)
}
