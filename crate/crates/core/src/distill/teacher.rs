//! Teachers: a ground-truth oracle, a frozen network, and replay of
//! previously exported taps.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::checkpoint::Checkpoint;
use super::container::Container;
use super::{head_key, keys, DistillPoint, TapSet, Teacher};
use crate::config::ModelConfig;
use crate::data::{Batch, StereoSample};
use crate::error::{Error, Result};
use crate::model::StereoNet;
use crate::nn::{Graph, NormMode, ParamStore};
use crate::regression::Mode;
use crate::tensor::Tensor;

/// Taps synthesized from ground truth: the disparity tap is the ground
/// truth itself, and both volume taps hold log-probabilities of a Gaussian
/// bump (standard deviation `temperature` bins) centred at `gt / 4` along
/// the quarter-resolution disparity axis. Feature taps are unavailable.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleTeacher {
    pub max_disparity: usize,
    pub temperature: f32,
}

impl OracleTeacher {
    pub fn new(max_disparity: usize) -> Self {
        OracleTeacher { max_disparity, temperature: 1.0 }
    }

    /// Log-softmax over `len` bins of `-(d - centre)² / (2T²)`.
    fn log_bump(&self, centre: f32, len: usize, out: &mut [f32]) {
        let t2 = 2.0 * self.temperature * self.temperature;
        let logits: Vec<f32> = (0..len).map(|d| -(d as f32 - centre).powi(2) / t2).collect();
        let m = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f32>().ln();
        for (o, l) in out.iter_mut().zip(logits) {
            *o = l - lse;
        }
    }

    /// Taps for `[B, H, W]` ground truth.
    pub fn taps_for(&self, gt: &Tensor) -> Result<TapSet> {
        let [b, h, w] = *gt.shape() else {
            return Err(Error::Shape(format!("expected [B, H, W] ground truth, got {:?}", gt.shape())));
        };
        if !gt.all_finite() {
            return Err(Error::InvalidInput("oracle teacher needs dense ground truth".into()));
        }
        if h % 4 != 0 || w % 4 != 0 || !self.max_disparity.is_multiple_of(4) {
            return Err(Error::Shape(format!(
                "oracle needs sizes divisible by 4, got {h}x{w} with D = {}",
                self.max_disparity
            )));
        }
        let (dq, hq, wq) = (self.max_disparity / 4, h / 4, w / 4);
        let d = self.max_disparity;
        let mut vol = vec![0.0f32; b * dq * hq * wq];
        let mut prob = vec![0.0f32; b * d * h * w];
        let mut col = vec![0.0f32; d];
        for n in 0..b {
            let g = &gt.data()[n * h * w..(n + 1) * h * w];
            for y in 0..hq {
                for x in 0..wq {
                    let mut s = 0.0;
                    for yy in 4 * y..4 * y + 4 {
                        s += g[yy * w + 4 * x..yy * w + 4 * x + 4].iter().sum::<f32>();
                    }
                    self.log_bump(s / 64.0, dq, &mut col[..dq]);
                    for (k, v) in col[..dq].iter().enumerate() {
                        vol[((n * dq + k) * hq + y) * wq + x] = *v;
                    }
                }
            }
            for p in 0..h * w {
                self.log_bump(g[p], d, &mut col);
                for (k, v) in col.iter().enumerate() {
                    prob[(n * d + k) * h * w + p] = v.exp();
                }
            }
        }
        let vol = Tensor::from_vec(&[b, 1, dq, hq, wq], vol)?;
        let mut taps = TapSet::new();
        taps.insert(keys::COST_VOLUME, vol.clone())?;
        taps.insert(keys::COST_AGGREGATION, vol)?;
        taps.insert(keys::DISPARITY, gt.clone())?;
        taps.insert(keys::DISPARITY_PROB, Tensor::from_vec(&[b, d, h, w], prob)?)?;
        Ok(taps)
    }
}

impl Teacher for OracleTeacher {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn capabilities(&self) -> BTreeSet<DistillPoint> {
        BTreeSet::from([DistillPoint::CostVolume, DistillPoint::CostAggregation, DistillPoint::Disparity])
    }

    fn forward(&mut self, batch: &Batch) -> Result<TapSet> {
        self.taps_for(&batch.disparity)
    }
}

fn hash_sample(left: &[f32], right: &[f32]) -> u64 {
    left.iter()
        .chain(right)
        .flat_map(|v| v.to_bits().to_le_bytes())
        .fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

/// A frozen network. Gradients never reach its parameters, which live in a
/// store of their own.
#[derive(Clone, Debug)]
pub struct ModelTeacher {
    pub net: StereoNet,
    store: ParamStore,
    norm: NormMode,
    keep: Option<BTreeSet<String>>,
    /// Per-sample taps keyed by an input hash; only used with running
    /// statistics, where samples do not interact.
    cache: Option<HashMap<u64, TapSet>>,
}

impl ModelTeacher {
    /// Uses running normalization statistics (evaluation behaviour).
    pub fn new(net: StereoNet, store: ParamStore) -> Self {
        ModelTeacher { net, store, norm: NormMode::Running, keep: None, cache: None }
    }

    /// Normalizes with batch statistics (without updating them) instead.
    pub fn with_batch_statistics(mut self) -> Self {
        self.norm = NormMode::Batch { track_running: false };
        self.cache = None;
        self
    }

    /// Remembers taps per input so repeated samples skip the forward pass.
    pub fn with_cache(mut self) -> Self {
        if self.norm == NormMode::Running {
            self.cache = Some(HashMap::new());
        }
        self
    }

    /// Loads a checkpoint; `config` defaults to the one recorded in it.
    pub fn from_checkpoint(path: &Path, config: Option<&ModelConfig>) -> Result<Self> {
        let (net, store) = Checkpoint::load(path)?.build_model(config, path)?;
        Ok(ModelTeacher::new(net, store))
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    fn run(&self, left: &Tensor, right: &Tensor) -> Result<TapSet> {
        let mut g = Graph::new(self.norm, false);
        let l = g.input(left.clone());
        let r = g.input(right.clone());
        let out = self.net.forward(&mut g, &self.store, l, r, Mode::Train)?;
        let mut taps = TapSet::new();
        taps.insert(keys::FE_LAYER3, g.value(out.fe_layer3).clone())?;
        taps.insert(keys::FE_LAYER5, g.value(out.fe_layer5).clone())?;
        taps.insert(keys::COST_VOLUME, g.value(out.cost_volume).clone())?;
        taps.insert(keys::COST_AGGREGATION, g.value(out.final_aggregated()).clone())?;
        let n = out.heads.len();
        for (i, h) in out.heads.iter().enumerate() {
            let (dk, pk) = if i + 1 == n {
                (keys::DISPARITY.to_string(), keys::DISPARITY_PROB.to_string())
            } else {
                (head_key(keys::DISPARITY, i + 1), head_key(keys::DISPARITY_PROB, i + 1))
            };
            taps.insert(dk, g.value(h.disparity).clone())?;
            taps.insert(pk, g.value(h.probabilities).clone())?;
        }
        if let Some(keep) = &self.keep {
            taps.retain(|k| keep.contains(k));
        }
        Ok(taps)
    }
}

impl Teacher for ModelTeacher {
    fn name(&self) -> String {
        self.net.config.name()
    }

    fn capabilities(&self) -> BTreeSet<DistillPoint> {
        DistillPoint::ALL.into_iter().collect()
    }

    fn forward(&mut self, batch: &Batch) -> Result<TapSet> {
        let Some(cache) = &self.cache else {
            return self.run(&batch.left, &batch.right);
        };
        let hashes: Vec<u64> = (0..batch.len())
            .map(|i| {
                let (l, r) = (batch.left.index_outer(i), batch.right.index_outer(i));
                hash_sample(l.data(), r.data())
            })
            .collect();
        if hashes.iter().all(|h| cache.contains_key(h)) {
            let parts: Vec<TapSet> = hashes.iter().map(|h| cache[h].clone()).collect();
            return TapSet::stack(&parts);
        }
        let taps = self.run(&batch.left, &batch.right)?;
        let cache = self.cache.as_mut().unwrap();
        for (i, h) in hashes.iter().enumerate() {
            cache.entry(*h).or_insert_with(|| taps.sample(i));
        }
        Ok(taps)
    }

    fn retain_only(&mut self, keys: &BTreeSet<String>) {
        self.keep = Some(keys.clone());
        if let Some(c) = &mut self.cache {
            c.clear();
        }
    }
}

const TAPS_KIND: &str = "taps";

/// Replays taps stored per sample id as `sample/<id>/<tap>`.
#[derive(Clone, Debug)]
pub struct TapFileTeacher {
    source: String,
    samples: HashMap<String, TapSet>,
    capabilities: BTreeSet<DistillPoint>,
}

impl TapFileTeacher {
    pub fn open(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        Self::from_container(&c, &path.display().to_string()).map_err(|e| match e {
            Error::InvalidInput(m) => Error::format(path, m),
            e => e,
        })
    }

    pub fn from_container(c: &Container, source: &str) -> Result<Self> {
        if c.metadata.get("kind").and_then(|k| k.as_str()) != Some(TAPS_KIND) {
            return Err(Error::InvalidInput("not a tap file".into()));
        }
        let mut samples: HashMap<String, TapSet> = HashMap::new();
        for (name, t) in c.tensors() {
            let (id, tap) = name
                .strip_prefix("sample/")
                .and_then(|r| r.rsplit_once('/'))
                .ok_or_else(|| Error::InvalidInput(format!("unexpected tensor name {name:?}")))?;
            samples.entry(id.to_string()).or_default().insert(tap, t.clone())?;
        }
        let capabilities = samples
            .values()
            .map(TapSet::points)
            .reduce(|a, b| a.intersection(&b).copied().collect())
            .unwrap_or_default();
        Ok(TapFileTeacher { source: source.to_string(), samples, capabilities })
    }

    pub fn sample_ids(&self) -> impl Iterator<Item = &str> {
        self.samples.keys().map(String::as_str)
    }
}

impl Teacher for TapFileTeacher {
    fn name(&self) -> String {
        format!("taps:{}", self.source)
    }

    fn capabilities(&self) -> BTreeSet<DistillPoint> {
        self.capabilities.clone()
    }

    fn forward(&mut self, batch: &Batch) -> Result<TapSet> {
        let hw = &batch.disparity.shape()[1..];
        let parts = batch
            .ids
            .iter()
            .map(|id| {
                let t = self
                    .samples
                    .get(id)
                    .ok_or_else(|| Error::InvalidInput(format!("tap file has no sample {id:?}")))?;
                if let Some(d) = t.get(keys::DISPARITY) {
                    if d.shape() != hw {
                        return Err(Error::Shape(format!(
                            "sample {id}: stored disparity {:?} but batch images are {hw:?}",
                            d.shape()
                        )));
                    }
                }
                Ok(t.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        TapSet::stack(&parts)
    }
}

/// Runs `teacher` over `samples` one at a time and stores every tap.
pub fn export_taps(teacher: &mut dyn Teacher, samples: &[StereoSample], path: &Path) -> Result<Container> {
    let mut c = Container::new(serde_json::json!({
        "kind": TAPS_KIND,
        "teacher": teacher.name(),
    }));
    for s in samples {
        let taps = teacher.forward(&Batch::from_samples(std::slice::from_ref(s))?)?;
        for (k, t) in taps.sample(0).iter() {
            c.insert(format!("sample/{}/{k}", s.id), t.clone())?;
        }
    }
    c.write(path)?;
    Ok(c)
}
