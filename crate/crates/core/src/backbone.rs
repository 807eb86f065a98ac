//! Shared-weight 2-D feature extractor.
//!
//! The full layout has eleven rows:
//!
//! | row | block            | output            |
//! |-----|------------------|-------------------|
//! | 1   | conv 3×3, s2     | 32 × H/2 × W/2    |
//! | 2-3 | conv 3×3         | 32 × H/2 × W/2    |
//! | 4-5 | B1               | 32 × H/2 × W/2    |
//! | 6   | B2               | 64 × H/4 × W/4    |
//! | 7-9 | B1               | 64 × H/4 × W/4    |
//! | 10  | B1 (64→128)      | 128 × H/4 × W/4   |
//! | 11  | B1               | 128 × H/4 × W/4   |
//!
//! and the output concatenates rows 9, 10 and 11 into 320 channels.
//! Shallower variants drop repeated rows but keep the concat rows.

use rand::Rng;

use crate::config::{BackboneVariant, FEATURE_CHANNELS};
use crate::error::{Error, Result};
use crate::nn::layers::ConvBn;
use crate::nn::{Graph, ParamStore, Var};

/// Two 3×3 conv layers with a residual connection. The first conv may be
/// strided; the skip is a 1×1 projection whenever the shape changes.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: ConvBn,
    pub conv2: ConvBn,
    pub skip: Option<ConvBn>,
}

impl ResBlock {
    fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
    ) -> Result<Self> {
        let conv1 = ConvBn::new(store, rng, &format!("{name}.conv1"), cin, cout, 3, stride, false, true)?;
        let conv2 = ConvBn::new(store, rng, &format!("{name}.conv2"), cout, cout, 3, 1, false, false)?;
        let skip = if cin != cout || stride != 1 {
            Some(ConvBn::new(store, rng, &format!("{name}.skip"), cin, cout, 1, stride, false, false)?)
        } else {
            None
        };
        Ok(ResBlock { conv1, conv2, skip })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let y = self.conv1.forward(g, store, x);
        let y = self.conv2.forward(g, store, y);
        let s = match &self.skip {
            Some(p) => p.forward(g, store, x),
            None => x,
        };
        let sum = g.add(y, s);
        g.relu(sum)
    }

    pub fn num_params(&self) -> usize {
        self.conv1.num_params() + self.conv2.num_params() + self.skip.as_ref().map_or(0, |s| s.num_params())
    }

    pub fn num_convs(&self) -> usize {
        2 + usize::from(self.skip.is_some())
    }

    pub fn profile(&self, shape: &[usize]) -> (u64, Vec<usize>) {
        let (m1, s1) = self.conv1.profile(shape);
        let (m2, s2) = self.conv2.profile(&s1);
        let ms = self.skip.as_ref().map_or(0, |s| s.profile(shape).0);
        (m1 + m2 + ms, s2)
    }
}

/// Residual block without downsampling.
pub fn build_block_b1(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    name: &str,
    cin: usize,
    cout: usize,
) -> Result<ResBlock> {
    ResBlock::new(store, rng, name, cin, cout, 1)
}

/// Residual block whose first conv and skip projection have stride 2.
pub fn build_block_b2(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    name: &str,
    cin: usize,
    cout: usize,
) -> Result<ResBlock> {
    ResBlock::new(store, rng, name, cin, cout, 2)
}

#[derive(Clone, Debug)]
pub enum Layer {
    Plain(ConvBn),
    Residual(ResBlock),
}

impl Layer {
    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        match self {
            Layer::Plain(c) => c.forward(g, store, x),
            Layer::Residual(b) => b.forward(g, store, x),
        }
    }

    fn profile(&self, shape: &[usize]) -> (u64, Vec<usize>) {
        match self {
            Layer::Plain(c) => c.profile(shape),
            Layer::Residual(b) => b.profile(shape),
        }
    }

    fn num_convs(&self) -> usize {
        match self {
            Layer::Plain(_) => 1,
            Layer::Residual(b) => b.num_convs(),
        }
    }

    fn num_params(&self) -> usize {
        match self {
            Layer::Plain(c) => c.num_params(),
            Layer::Residual(b) => b.num_params(),
        }
    }
}

/// Rows of the full layout that each variant keeps.
pub fn kept_rows(variant: BackboneVariant) -> &'static [usize] {
    match variant {
        BackboneVariant::BB21 => &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11],
        BackboneVariant::BB18 => &[1, 2, 4, 5, 6, 7, 9, 10, 11],
        BackboneVariant::BB14 => &[1, 2, 4, 6, 9, 10, 11],
    }
}

const CONCAT_ROWS: [usize; 3] = [9, 10, 11];

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub variant: BackboneVariant,
    pub layers: Vec<(usize, Layer)>,
    /// Row whose output is the `layer3` tap.
    pub tap3_row: usize,
    /// Row whose output is the `layer5` tap.
    pub tap5_row: usize,
}

/// Output of one view.
#[derive(Clone, Copy, Debug)]
pub struct BackboneOutput {
    pub features: Var,
    pub layer3: Var,
    pub layer5: Var,
}

pub fn build_backbone(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    prefix: &str,
    variant: BackboneVariant,
) -> Result<FeatureExtractor> {
    let rows = kept_rows(variant);
    let mut layers = Vec::new();
    for &row in rows {
        let name = format!("{prefix}.layer{row}");
        let layer = match row {
            1 => Layer::Plain(ConvBn::new(store, rng, &name, 3, 32, 3, 2, false, true)?),
            2 | 3 => Layer::Plain(ConvBn::new(store, rng, &name, 32, 32, 3, 1, false, true)?),
            4 | 5 => Layer::Residual(build_block_b1(store, rng, &name, 32, 32)?),
            6 => Layer::Residual(build_block_b2(store, rng, &name, 32, 64)?),
            7..=9 => Layer::Residual(build_block_b1(store, rng, &name, 64, 64)?),
            10 => Layer::Residual(build_block_b1(store, rng, &name, 64, 128)?),
            11 => Layer::Residual(build_block_b1(store, rng, &name, 128, 128)?),
            _ => unreachable!(),
        };
        layers.push((row, layer));
    }
    let last_at_most = |limit: usize| rows.iter().copied().filter(|&r| r <= limit).max().unwrap();
    Ok(FeatureExtractor { variant, layers, tap3_row: last_at_most(3), tap5_row: last_at_most(5) })
}

impl FeatureExtractor {
    /// One view: `[B, 3, H, W]` → 320 × H/4 × W/4 features plus early taps.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, image: Var) -> BackboneOutput {
        let mut x = image;
        let mut concat = Vec::with_capacity(3);
        let (mut layer3, mut layer5) = (None, None);
        for (row, layer) in &self.layers {
            x = layer.forward(g, store, x);
            if *row == self.tap3_row {
                layer3 = Some(x);
            }
            if *row == self.tap5_row {
                layer5 = Some(x);
            }
            if CONCAT_ROWS.contains(row) {
                concat.push(x);
            }
        }
        let features = g.concat(&concat);
        debug_assert_eq!(g.shape(features)[1], FEATURE_CHANNELS);
        BackboneOutput { features, layer3: layer3.unwrap(), layer5: layer5.unwrap() }
    }

    /// Runs both views through the same weights. Taps come from the left view.
    pub fn extract_features(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        left: Var,
        right: Var,
    ) -> Result<(BackboneOutput, BackboneOutput)> {
        let (ls, rs) = (g.shape(left).to_vec(), g.shape(right).to_vec());
        if ls != rs {
            return Err(Error::Shape(format!("left image {ls:?} and right image {rs:?} differ")));
        }
        if ls.len() != 4 || ls[1] != 3 || ls[2] % 4 != 0 || ls[3] % 4 != 0 {
            return Err(Error::Shape(format!("expected [B, 3, H, W] images with H, W divisible by 4, got {ls:?}")));
        }
        let l = self.forward(g, store, left);
        let r = self.forward(g, store, right);
        Ok((l, r))
    }

    /// Convolution layers including skip projections.
    pub fn num_convs(&self) -> usize {
        self.layers.iter().map(|(_, l)| l.num_convs()).sum()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|(_, l)| l.num_params()).sum()
    }

    /// MACs of one view of size `h × w`.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let mut shape = vec![1, 3, h, w];
        let mut total = 0;
        for (_, layer) in &self.layers {
            let (m, s) = layer.profile(&shape);
            total += m;
            shape = s;
        }
        total
    }
}
