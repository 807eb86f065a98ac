//! Parameterized building blocks on top of [`Graph`].

use rand::Rng;

use super::conv::ConvGeom;
use super::graph::{BatchNormIds, Graph, Var};
use super::params::{he_normal, ParamKind, ParamStore};
use crate::error::Result;
use crate::tensor::Tensor;

/// Spatial dims of a rank-4 (`[B,C,H,W]`) or rank-5 (`[B,C,D,H,W]`) shape.
pub fn spatial_dims(shape: &[usize]) -> [usize; 3] {
    match shape.len() {
        4 => [1, shape[2], shape[3]],
        5 => [shape[2], shape[3], shape[4]],
        _ => panic!("expected rank 4 or 5, got {shape:?}"),
    }
}

/// Bias-free convolution, 2-D or 3-D.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: super::params::ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub three_d: bool,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        three_d: bool,
    ) -> Result<Self> {
        let kvol = if three_d { kernel.pow(3) } else { kernel * kernel };
        let shape: Vec<usize> =
            if three_d { vec![cout, cin, kernel, kernel, kernel] } else { vec![cout, cin, kernel, kernel] };
        let w = he_normal(&shape, cout * kvol, rng);
        let weight = store.add(format!("{name}.weight"), w, ParamKind::Trainable)?;
        Ok(Conv { weight, in_channels: cin, out_channels: cout, kernel, stride, pad: kernel / 2, three_d })
    }

    pub fn geom(&self, in_shape: &[usize]) -> ConvGeom {
        let d = spatial_dims(in_shape);
        if self.three_d {
            ConvGeom::conv3d(self.in_channels, self.out_channels, d, self.kernel, self.stride, self.pad)
        } else {
            ConvGeom::conv2d(self.in_channels, self.out_channels, [d[1], d[2]], self.kernel, self.stride, self.pad)
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let geom = self.geom(g.shape(x));
        let w = g.param(store, self.weight);
        g.conv(x, w, geom)
    }

    pub fn num_params(&self) -> usize {
        let kvol = if self.three_d { self.kernel.pow(3) } else { self.kernel * self.kernel };
        self.in_channels * self.out_channels * kvol
    }

    /// MACs for one sample and the output shape (without batch).
    pub fn profile(&self, in_shape: &[usize]) -> (u64, Vec<usize>) {
        let geom = self.geom(in_shape);
        let od = geom.out_dims();
        let mut out = vec![in_shape[0], self.out_channels];
        if self.three_d {
            out.extend_from_slice(&od);
        } else {
            out.extend_from_slice(&od[1..]);
        }
        (geom.macs(), out)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub ids: BatchNormIds,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let ids = BatchNormIds {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0), ParamKind::Trainable)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), ParamKind::Trainable)?,
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[channels]), ParamKind::Buffer)?,
            running_var: store.add(format!("{name}.running_var"), Tensor::full(&[channels], 1.0), ParamKind::Buffer)?,
        };
        Ok(BatchNorm { ids, channels })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        g.batch_norm(store, x, &self.ids)
    }

    pub fn num_params(&self) -> usize {
        2 * self.channels
    }
}

/// Convolution followed by normalization and an optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub relu: bool,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        three_d: bool,
        relu: bool,
    ) -> Result<Self> {
        let conv = Conv::new(store, rng, &format!("{name}.conv"), cin, cout, kernel, stride, three_d)?;
        let bn = BatchNorm::new(store, &format!("{name}.bn"), cout)?;
        Ok(ConvBn { conv, bn, relu })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let y = self.conv.forward(g, store, x);
        let y = self.bn.forward(g, store, y);
        if self.relu {
            g.relu(y)
        } else {
            y
        }
    }

    pub fn num_params(&self) -> usize {
        self.conv.num_params() + self.bn.num_params()
    }

    pub fn profile(&self, in_shape: &[usize]) -> (u64, Vec<usize>) {
        self.conv.profile(in_shape)
    }
}

/// 3-D transposed convolution with kernel 3, stride 2, padding 1 whose
/// output grid is given explicitly (the matching encoder size).
#[derive(Clone, Debug)]
pub struct ConvTranspose3d {
    pub weight: super::params::ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvTranspose3d {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cin: usize, cout: usize) -> Result<Self> {
        let w = he_normal(&[cin, cout, 3, 3, 3], cout * 27, rng);
        let weight = store.add(format!("{name}.weight"), w, ParamKind::Trainable)?;
        Ok(ConvTranspose3d { weight, in_channels: cin, out_channels: cout })
    }

    fn geom(&self, out_dims: [usize; 3]) -> ConvGeom {
        ConvGeom::conv3d(self.out_channels, self.in_channels, out_dims, 3, 2, 1)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, out_dims: [usize; 3]) -> Var {
        let w = g.param(store, self.weight);
        g.conv_transpose(x, w, self.geom(out_dims))
    }

    pub fn num_params(&self) -> usize {
        self.in_channels * self.out_channels * 27
    }

    /// MACs for one sample, counted on the output grid.
    pub fn macs(&self, out_dims: [usize; 3]) -> u64 {
        (self.in_channels * self.out_channels * 27 * out_dims.iter().product::<usize>()) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_param_count_example() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = Conv::new(&mut store, &mut rng, "c", 2, 4, 3, 1, false).unwrap();
        assert_eq!(c.num_params(), 72);
        assert_eq!(store.count_trainable(""), 72);
        let (macs, out) = c.profile(&[1, 2, 8, 8]);
        assert_eq!(macs, 4608);
        assert_eq!(out, vec![1, 4, 8, 8]);
    }

    #[test]
    fn conv3d_mac_example() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = Conv::new(&mut store, &mut rng, "c", 8, 16, 3, 1, true).unwrap();
        assert_eq!(c.profile(&[1, 8, 4, 8, 8]).0, 884_736);
    }

    #[test]
    fn profile_matches_graph_counter() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = ConvBn::new(&mut store, &mut rng, "c", 3, 5, 3, 2, true, true).unwrap();
        let up = ConvTranspose3d::new(&mut store, &mut rng, "u", 5, 3).unwrap();
        let mut g = Graph::inference();
        let x = g.input(Tensor::full(&[2, 3, 4, 6, 5], 0.5));
        let y = c.forward(&mut g, &store, x);
        let (m1, shape) = c.profile(&[1, 3, 4, 6, 5]);
        assert_eq!(&g.shape(y)[1..], &shape[1..]);
        let z = up.forward(&mut g, &store, y, [4, 6, 5]);
        assert_eq!(g.shape(z), &[2, 3, 4, 6, 5]);
        assert_eq!(g.macs(), 2 * (m1 + up.macs([4, 6, 5])));
    }
}
