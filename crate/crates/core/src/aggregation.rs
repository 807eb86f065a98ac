//! 3-D cost aggregation: a pre-convolution from G to N channels followed by
//! a chain of encoder–decoder (ED) networks.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::layers::{spatial_dims, BatchNorm, ConvBn, ConvTranspose3d};
use crate::nn::{Graph, ParamStore, Var};

/// One encoder–decoder: two strided encoder stages (2N, 4N channels), each
/// followed by a stride-1 conv, and two transposed convs back to 2N and N
/// with additive skips from the second row and from the input.
#[derive(Clone, Debug)]
pub struct EdNetwork {
    pub channels: usize,
    pub enc1: ConvBn,
    pub enc2: ConvBn,
    pub enc3: ConvBn,
    pub enc4: ConvBn,
    pub dec1: ConvTranspose3d,
    pub dec1_bn: BatchNorm,
    pub dec2: ConvTranspose3d,
    pub dec2_bn: BatchNorm,
}

/// Intermediate activations of one ED pass.
#[derive(Clone, Copy, Debug)]
pub struct EdOutput {
    pub bottleneck: Var,
    pub output: Var,
}

pub fn build_ed_network(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, n: usize) -> Result<EdNetwork> {
    let c = |store: &mut ParamStore, rng: &mut _, name: &str, cin, cout, stride| {
        ConvBn::new(store, rng, &format!("{prefix}.{name}"), cin, cout, 3, stride, true, true)
    };
    Ok(EdNetwork {
        channels: n,
        enc1: c(store, rng, "enc1", n, 2 * n, 2)?,
        enc2: c(store, rng, "enc2", 2 * n, 2 * n, 1)?,
        enc3: c(store, rng, "enc3", 2 * n, 4 * n, 2)?,
        enc4: c(store, rng, "enc4", 4 * n, 4 * n, 1)?,
        dec1: ConvTranspose3d::new(store, rng, &format!("{prefix}.dec1"), 4 * n, 2 * n)?,
        dec1_bn: BatchNorm::new(store, &format!("{prefix}.dec1.bn"), 2 * n)?,
        dec2: ConvTranspose3d::new(store, rng, &format!("{prefix}.dec2"), 2 * n, n)?,
        dec2_bn: BatchNorm::new(store, &format!("{prefix}.dec2.bn"), n)?,
    })
}

impl EdNetwork {
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> EdOutput {
        let r1 = self.enc1.forward(g, store, x);
        let r2 = self.enc2.forward(g, store, r1);
        let r3 = self.enc3.forward(g, store, r2);
        let r4 = self.enc4.forward(g, store, r3);
        let up = self.dec1.forward(g, store, r4, spatial_dims(g.shape(r2)));
        let up = self.dec1_bn.forward(g, store, up);
        let r5 = g.add(up, r2);
        let r5 = g.relu(r5);
        let up = self.dec2.forward(g, store, r5, spatial_dims(g.shape(x)));
        let up = self.dec2_bn.forward(g, store, up);
        let r6 = g.add(up, x);
        let r6 = g.relu(r6);
        EdOutput { bottleneck: r4, output: r6 }
    }

    pub fn num_params(&self) -> usize {
        [&self.enc1, &self.enc2, &self.enc3, &self.enc4].iter().map(|c| c.num_params()).sum::<usize>()
            + self.dec1.num_params()
            + self.dec1_bn.num_params()
            + self.dec2.num_params()
            + self.dec2_bn.num_params()
    }

    /// Conv layers (encoder and transposed).
    pub fn num_convs(&self) -> usize {
        6
    }

    pub fn macs(&self, dims: [usize; 3]) -> u64 {
        let x = [1, self.channels, dims[0], dims[1], dims[2]];
        let (m1, s1) = self.enc1.profile(&x);
        let (m2, s2) = self.enc2.profile(&s1);
        let (m3, s3) = self.enc3.profile(&s2);
        let (m4, _) = self.enc4.profile(&s3);
        m1 + m2 + m3 + m4 + self.dec1.macs(spatial_dims(&s2)) + self.dec2.macs(dims)
    }
}

#[derive(Clone, Debug)]
pub struct Aggregation {
    pub groups: usize,
    pub pre1: ConvBn,
    pub pre2: ConvBn,
    pub eds: Vec<EdNetwork>,
}

pub fn build_aggregation(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    prefix: &str,
    groups: usize,
    n: usize,
    num_ed: usize,
) -> Result<Aggregation> {
    let pre1 = ConvBn::new(store, rng, &format!("{prefix}.pre1"), groups, n, 3, 1, true, true)?;
    let pre2 = ConvBn::new(store, rng, &format!("{prefix}.pre2"), n, n, 3, 1, true, true)?;
    let eds = (0..num_ed)
        .map(|i| build_ed_network(store, rng, &format!("{prefix}.ed{}", i + 1), n))
        .collect::<Result<Vec<_>>>()?;
    Ok(Aggregation { groups, pre1, pre2, eds })
}

impl Aggregation {
    /// One output volume per ED network, in order.
    pub fn aggregate(&self, g: &mut Graph, store: &ParamStore, volume: Var) -> Result<Vec<EdOutput>> {
        let s = g.shape(volume);
        if s.len() != 5 || s[1] != self.groups {
            return Err(Error::Shape(format!("aggregation expects [B, {}, D, H, W], got {s:?}", self.groups)));
        }
        let x = self.pre1.forward(g, store, volume);
        let mut x = self.pre2.forward(g, store, x);
        let mut outs = Vec::with_capacity(self.eds.len());
        for ed in &self.eds {
            let o = ed.forward(g, store, x);
            x = o.output;
            outs.push(o);
        }
        Ok(outs)
    }

    pub fn num_params(&self) -> usize {
        self.pre1.num_params() + self.pre2.num_params() + self.eds.iter().map(|e| e.num_params()).sum::<usize>()
    }

    pub fn macs(&self, dims: [usize; 3]) -> u64 {
        let x = [1, self.groups, dims[0], dims[1], dims[2]];
        let (m1, s1) = self.pre1.profile(&x);
        let (m2, _) = self.pre2.profile(&s1);
        m1 + m2 + self.eds.iter().map(|e| e.macs(dims)).sum::<u64>()
    }
}
