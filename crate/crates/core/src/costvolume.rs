//! Group-wise correlation cost volume and the optional attention gate.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::layers::{Conv, ConvBn};
use crate::nn::{Graph, ParamStore, Var};
use crate::tensor::Tensor;

/// Groups of the correlation volume that feeds the attention network.
pub const ATTENTION_GROUPS: usize = 8;

/// `out[b, g, d, y, x] = (G/C) Σ_{c∈g} left[b, c, y, x] · right[b, c, y, x − d]`,
/// zero where `x < d`. `dims` is `[B, C, H, W]`.
pub fn correlation_forward(left: &[f32], right: &[f32], dims: [usize; 4], groups: usize, max_disp: usize) -> Vec<f32> {
    let [batch, channels, h, w] = dims;
    let per = channels / groups;
    let scale = 1.0 / per as f32;
    let plane = h * w;
    let mut out = vec![0.0f32; batch * groups * max_disp * plane];
    for b in 0..batch {
        for g in 0..groups {
            for d in 0..max_disp.min(w) {
                let o = &mut out[((b * groups + g) * max_disp + d) * plane..][..plane];
                for c in g * per..(g + 1) * per {
                    let l = &left[(b * channels + c) * plane..][..plane];
                    let r = &right[(b * channels + c) * plane..][..plane];
                    for y in 0..h {
                        let (lo, ro, oo) = (&l[y * w..(y + 1) * w], &r[y * w..(y + 1) * w], &mut o[y * w..(y + 1) * w]);
                        for x in d..w {
                            oo[x] += lo[x] * ro[x - d];
                        }
                    }
                }
                o.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
    out
}

/// Gradients of [`correlation_forward`] w.r.t. both feature maps.
pub fn correlation_backward(
    left: &[f32],
    right: &[f32],
    grad: &[f32],
    dims: [usize; 4],
    groups: usize,
    max_disp: usize,
) -> (Vec<f32>, Vec<f32>) {
    let [batch, channels, h, w] = dims;
    let per = channels / groups;
    let scale = 1.0 / per as f32;
    let plane = h * w;
    let mut dl = vec![0.0f32; left.len()];
    let mut dr = vec![0.0f32; right.len()];
    for b in 0..batch {
        for g in 0..groups {
            for d in 0..max_disp.min(w) {
                let go = &grad[((b * groups + g) * max_disp + d) * plane..][..plane];
                for c in g * per..(g + 1) * per {
                    let base = (b * channels + c) * plane;
                    for y in 0..h {
                        let row = base + y * w;
                        for x in d..w {
                            let gv = go[y * w + x] * scale;
                            dl[row + x] += gv * right[row + x - d];
                            dr[row + x - d] += gv * left[row + x];
                        }
                    }
                }
            }
        }
    }
    (dl, dr)
}

/// Tensor-level correlation of `[C, H, W]` or `[B, C, H, W]` features into a
/// volume with `max_disparity / 4` disparity bins.
pub fn groupwise_correlation(left: &Tensor, right: &Tensor, max_disparity: usize, groups: usize) -> Result<Tensor> {
    if left.shape() != right.shape() {
        return Err(Error::Shape(format!("feature shapes differ: {:?} vs {:?}", left.shape(), right.shape())));
    }
    let (batched, dims) = match *left.shape() {
        [c, h, w] => (false, [1, c, h, w]),
        [b, c, h, w] => (true, [b, c, h, w]),
        _ => return Err(Error::Shape(format!("features must be rank 3 or 4, got {:?}", left.shape()))),
    };
    if groups == 0 || dims[1] % groups != 0 {
        return Err(Error::Shape(format!("{} channels not divisible into {groups} groups", dims[1])));
    }
    if !max_disparity.is_multiple_of(4) {
        return Err(Error::Config(format!("max disparity {max_disparity} not divisible by 4")));
    }
    let dq = max_disparity / 4;
    let data = correlation_forward(left.data(), right.data(), dims, groups, dq);
    let mut shape = vec![dims[0], groups, dq, dims[2], dims[3]];
    if !batched {
        shape.remove(0);
    }
    Tensor::from_vec(&shape, data)
}

/// Gates a `[.., G, D, H, W]` volume with `[.., 1, D, H, W]` weights.
pub fn apply_attention(volume: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let (vs, ws) = (volume.shape(), weights.shape());
    let ok = vs.len() == ws.len()
        && vs.len() >= 4
        && ws[ws.len() - 4] == 1
        && vs[vs.len() - 3..] == ws[ws.len() - 3..]
        && vs[..vs.len() - 4] == ws[..ws.len() - 4];
    if !ok {
        return Err(Error::Shape(format!("attention weights {ws:?} do not match volume {vs:?}")));
    }
    let inner: usize = vs[vs.len() - 3..].iter().product();
    let groups = vs[vs.len() - 4];
    let mut out = volume.clone();
    for (i, chunk) in out.data_mut().chunks_mut(inner).enumerate() {
        let wb = &weights.data()[(i / groups) * inner..][..inner];
        chunk.iter_mut().zip(wb).for_each(|(v, a)| *v *= a);
    }
    Ok(out)
}

/// Correlation with 8 groups, conv3d 8→16 (+norm, ReLU), conv3d 16→1,
/// then a sigmoid (or a softmax over disparity).
#[derive(Clone, Debug)]
pub struct AttentionNet {
    pub conv1: ConvBn,
    pub conv2: Conv,
    pub softmax: bool,
}

impl AttentionNet {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, softmax: bool) -> Result<Self> {
        Ok(AttentionNet {
            conv1: ConvBn::new(store, rng, &format!("{prefix}.conv1"), ATTENTION_GROUPS, 16, 3, 1, true, true)?,
            conv2: Conv::new(store, rng, &format!("{prefix}.conv2"), 16, 1, 3, 1, true)?,
            softmax,
        })
    }

    /// Weights `[B, 1, D/4, H/4, W/4]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, left: Var, right: Var, dq: usize) -> Var {
        let corr = g.correlation(left, right, ATTENTION_GROUPS, dq);
        let h = self.conv1.forward(g, store, corr);
        let logits = self.conv2.forward(g, store, h);
        if self.softmax {
            g.softmax(logits, 2)
        } else {
            g.sigmoid(logits)
        }
    }

    pub fn num_params(&self) -> usize {
        self.conv1.num_params() + self.conv2.num_params()
    }

    pub fn macs(&self, dq: usize, hq: usize, wq: usize) -> u64 {
        let shape = [1, ATTENTION_GROUPS, dq, hq, wq];
        let (m1, s1) = self.conv1.profile(&shape);
        m1 + self.conv2.profile(&s1).0
    }
}

#[derive(Clone, Debug)]
pub struct CostVolumeBuilder {
    pub groups: usize,
    pub max_disparity: usize,
    pub attention: Option<AttentionNet>,
}

#[derive(Clone, Copy, Debug)]
pub struct CostVolumeOutput {
    /// The volume handed to aggregation (gated when attention is enabled).
    pub volume: Var,
    pub attention: Option<Var>,
}

impl CostVolumeBuilder {
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, left: Var, right: Var) -> CostVolumeOutput {
        let dq = self.max_disparity / 4;
        let raw = g.correlation(left, right, self.groups, dq);
        match &self.attention {
            Some(net) => {
                let w = net.forward(g, store, left, right, dq);
                CostVolumeOutput { volume: g.gate(raw, w), attention: Some(w) }
            }
            None => CostVolumeOutput { volume: raw, attention: None },
        }
    }
}
