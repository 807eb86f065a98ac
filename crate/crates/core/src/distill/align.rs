//! Bringing student and teacher activations to a common shape.
//!
//! Spatial (and disparity) sizes are matched by resampling the teacher.
//! Channel counts are matched by a learned 1×1 (or 1×1×1) projection of the
//! student, owned by [`Adapters`]; projections live under
//! [`ADAPTER_PREFIX`] in the student's parameter store and are never used at
//! inference.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::interp;
use crate::nn::layers::Conv;
use crate::nn::{Graph, ParamStore, Var};
use crate::tensor::Tensor;

pub const ADAPTER_PREFIX: &str = "adapter.";

/// Lazily created student-side channel projections, one per tap.
#[derive(Clone, Debug)]
pub struct Adapters {
    seed: u64,
    convs: BTreeMap<String, Conv>,
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

impl Adapters {
    pub fn new(seed: u64) -> Self {
        Adapters { seed, convs: BTreeMap::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.convs.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.convs.keys().map(String::as_str)
    }

    pub fn get(&self, key: &str) -> Option<&Conv> {
        self.convs.get(key)
    }

    /// Returns the projection for `key`, creating it on first use. A store
    /// that already holds the weight (a restored checkpoint) is reused.
    pub fn projection(
        &mut self,
        store: &mut ParamStore,
        key: &str,
        cin: usize,
        cout: usize,
        three_d: bool,
    ) -> Result<Conv> {
        if let Some(c) = self.convs.get(key) {
            if (c.in_channels, c.out_channels, c.three_d) != (cin, cout, three_d) {
                return Err(Error::Shape(format!(
                    "adapter {key} maps {}→{} channels, asked for {cin}→{cout}",
                    c.in_channels, c.out_channels
                )));
            }
            return Ok(c.clone());
        }
        let name = format!("{ADAPTER_PREFIX}{key}");
        let conv = match store.id(&format!("{name}.weight")) {
            Some(weight) => {
                let want: Vec<usize> = if three_d { vec![cout, cin, 1, 1, 1] } else { vec![cout, cin, 1, 1] };
                if store.value(weight).shape() != want.as_slice() {
                    return Err(Error::Shape(format!(
                        "stored adapter {name} has shape {:?}",
                        store.value(weight).shape()
                    )));
                }
                Conv { weight, in_channels: cin, out_channels: cout, kernel: 1, stride: 1, pad: 0, three_d }
            }
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv(key));
                Conv::new(store, &mut rng, &name, cin, cout, 1, 1, three_d)?
            }
        };
        self.convs.insert(key.to_string(), conv.clone());
        Ok(conv)
    }
}

/// Resamples `t` so that every axis from `first_axis` on matches `target`.
pub fn resample_to(t: &Tensor, target: &[usize], first_axis: usize) -> Tensor {
    let targets: Vec<(usize, usize)> =
        (first_axis..t.rank()).filter(|a| t.dim(*a) != target[*a]).map(|a| (a, target[a])).collect();
    if targets.is_empty() {
        return t.clone();
    }
    let (data, shape) = interp::resize(t.data(), t.shape(), &targets);
    Tensor::from_vec(&shape, data).unwrap()
}

/// Aligns a student activation to a teacher activation.
///
/// With `channels`, axis 1 is a channel axis (projected on the student side)
/// and axes 2.. are resampled; otherwise every axis after the batch axis is
/// resampled.
pub fn align(
    g: &mut Graph,
    store: &mut ParamStore,
    adapters: &mut Adapters,
    key: &str,
    student: Var,
    teacher: &Tensor,
    channels: bool,
) -> Result<(Var, Tensor)> {
    let s = g.shape(student).to_vec();
    let t = teacher.shape();
    if s.len() != t.len() {
        return Err(Error::Shape(format!("{key}: student rank {} vs teacher rank {}", s.len(), t.len())));
    }
    if s[0] != t[0] {
        return Err(Error::Shape(format!("{key}: batch {} vs {}", s[0], t[0])));
    }
    if s == t {
        return Ok((student, teacher.clone()));
    }
    let first_spatial = if channels { 2 } else { 1 };
    let teacher = resample_to(teacher, &s, first_spatial);
    let mut student = student;
    if channels && s[1] != t[1] {
        let three_d = match s.len() {
            4 => false,
            5 => true,
            r => return Err(Error::Shape(format!("{key}: cannot project rank-{r} activations"))),
        };
        let conv = adapters.projection(store, key, s[1], t[1], three_d)?;
        student = conv.forward(g, store, student);
    }
    Ok((student, teacher))
}
