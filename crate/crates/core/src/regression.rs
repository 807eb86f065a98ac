//! Disparity regression: head convs, ×4 trilinear upsampling, softmax over
//! disparity, and soft-argmin.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::functional::{expectation_axis, softmax_axis};
use crate::nn::layers::{Conv, ConvBn};
use crate::nn::{Graph, ParamStore, Var};
use crate::tensor::{split_axis, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// One disparity map per ED network.
    Train,
    /// Only the final ED network is regressed.
    Infer,
}

#[derive(Clone, Debug)]
pub struct RegressionHead {
    pub conv1: ConvBn,
    pub conv2: Conv,
    pub negate: bool,
    pub upsample_first: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    /// `[B, D, H, W]`, normalized over D.
    pub probabilities: Var,
    /// `[B, H, W]` in pixels.
    pub disparity: Var,
}

impl RegressionHead {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        n: usize,
        negate: bool,
        upsample_first: bool,
    ) -> Result<Self> {
        Ok(RegressionHead {
            conv1: ConvBn::new(store, rng, &format!("{prefix}.conv1"), n, n, 3, 1, true, true)?,
            conv2: Conv::new(store, rng, &format!("{prefix}.conv2"), n, 1, 3, 1, true)?,
            negate,
            upsample_first,
        })
    }

    /// `volume` is `[B, N, D/4, H/4, W/4]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, volume: Var) -> HeadOutput {
        let s = g.shape(volume).to_vec();
        let (b, dq, hq, wq) = (s[0], s[2], s[3], s[4]);
        let up = [(2, 4 * dq), (3, 4 * hq), (4, 4 * wq)];
        let cost = if self.upsample_first {
            let v = g.resize(volume, &up);
            let h = self.conv1.forward(g, store, v);
            self.conv2.forward(g, store, h)
        } else {
            let h = self.conv1.forward(g, store, volume);
            let c = self.conv2.forward(g, store, h);
            g.resize(c, &up)
        };
        let cost = g.reshape(cost, &[b, 4 * dq, 4 * hq, 4 * wq]);
        let logits = if self.negate { g.scale(cost, -1.0) } else { cost };
        let probabilities = g.softmax(logits, 1);
        let disparity = g.expectation(probabilities, 1);
        HeadOutput { probabilities, disparity }
    }

    pub fn num_params(&self) -> usize {
        self.conv1.num_params() + self.conv2.num_params()
    }

    pub fn macs(&self, n: usize, dims: [usize; 3]) -> u64 {
        let d = if self.upsample_first { dims.map(|v| 4 * v) } else { dims };
        let x = [1, n, d[0], d[1], d[2]];
        let (m1, s1) = self.conv1.profile(&x);
        m1 + self.conv2.profile(&s1).0
    }
}

/// Applies the heads to ED outputs: all of them in training, the last in
/// inference.
pub fn predict(
    g: &mut Graph,
    store: &ParamStore,
    heads: &[RegressionHead],
    volumes: &[Var],
    mode: Mode,
) -> Result<Vec<HeadOutput>> {
    if volumes.is_empty() {
        return Err(Error::InvalidInput("no aggregated volumes to regress".into()));
    }
    if heads.len() != volumes.len() {
        return Err(Error::Shape(format!("{} heads for {} volumes", heads.len(), volumes.len())));
    }
    Ok(match mode {
        Mode::Train => heads.iter().zip(volumes).map(|(h, v)| h.forward(g, store, *v)).collect(),
        Mode::Infer => vec![heads.last().unwrap().forward(g, store, *volumes.last().unwrap())],
    })
}

fn disparity_axis(t: &Tensor) -> Result<usize> {
    match t.rank() {
        3 => Ok(0),
        4 => Ok(1),
        r => Err(Error::Shape(format!("expected [D,H,W] or [B,D,H,W], got rank {r}"))),
    }
}

/// Softmax over the disparity axis of `[D,H,W]` or `[B,D,H,W]` scores.
pub fn probabilities(scores: &Tensor) -> Result<Tensor> {
    let axis = disparity_axis(scores)?;
    let (o, l, i) = split_axis(scores.shape(), axis);
    Tensor::from_vec(scores.shape(), softmax_axis(scores.data(), o, l, i))
}

/// `Σ_d d · p(d)` over the disparity axis.
pub fn soft_argmin(p: &Tensor) -> Result<Tensor> {
    let axis = disparity_axis(p)?;
    let (o, l, i) = split_axis(p.shape(), axis);
    let mut shape = p.shape().to_vec();
    shape.remove(axis);
    Tensor::from_vec(&shape, expectation_axis(p.data(), o, l, i))
}
