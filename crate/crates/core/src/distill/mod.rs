//! Knowledge distillation: taps, teachers, alignment, the training step and
//! loop, checkpoints, and the loss/point ablation harness.

pub mod ablation;
pub mod align;
pub mod checkpoint;
pub mod container;
pub mod teacher;
pub mod trainer;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::Term;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use align::{align, Adapters, ADAPTER_PREFIX};
pub use checkpoint::{Checkpoint, OptimizerState};
pub use container::Container;
pub use teacher::{export_taps, ModelTeacher, OracleTeacher, TapFileTeacher};
pub use trainer::{distill_step, forward_objective, train, EpochRecord, Objective, Student, TrainOutcome};

/// Tap names.
pub mod keys {
    pub const FE_LAYER3: &str = "fe_early.layer3";
    pub const FE_LAYER5: &str = "fe_early.layer5";
    pub const COST_VOLUME: &str = "cost_volume";
    pub const COST_AGGREGATION: &str = "cost_aggregation";
    /// Final full-resolution disparity map.
    pub const DISPARITY: &str = "disparity";
    /// Final distribution over disparity candidates.
    pub const DISPARITY_PROB: &str = "disparity_prob";
}

/// Where a student activation is matched to the teacher's.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillPoint {
    FeEarly,
    CostVolume,
    CostAggregation,
    Disparity,
}

impl DistillPoint {
    pub const ALL: [DistillPoint; 4] =
        [DistillPoint::FeEarly, DistillPoint::CostVolume, DistillPoint::CostAggregation, DistillPoint::Disparity];

    pub fn as_str(self) -> &'static str {
        match self {
            DistillPoint::FeEarly => "fe_early",
            DistillPoint::CostVolume => "cost_volume",
            DistillPoint::CostAggregation => "cost_aggregation",
            DistillPoint::Disparity => "disparity",
        }
    }

    /// Taps that must be present for the point to be available.
    pub fn required_keys(self) -> &'static [&'static str] {
        match self {
            DistillPoint::FeEarly => &[keys::FE_LAYER3, keys::FE_LAYER5],
            DistillPoint::CostVolume => &[keys::COST_VOLUME],
            DistillPoint::CostAggregation => &[keys::COST_AGGREGATION],
            DistillPoint::Disparity => &[keys::DISPARITY],
        }
    }

    /// The point a teacher term reads; `None` for the ground-truth term.
    pub fn for_term(term: Term) -> Option<DistillPoint> {
        match term {
            Term::Fe => Some(DistillPoint::FeEarly),
            Term::Cv => Some(DistillPoint::CostVolume),
            Term::Ca => Some(DistillPoint::CostAggregation),
            Term::Spw => None,
            Term::Stpw => Some(DistillPoint::Disparity),
        }
    }
}

impl fmt::Display for DistillPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistillPoint {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DistillPoint::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown distillation point {s:?}")))
    }
}

/// Name of the disparity tap of a non-final head, `k` counted from 1.
pub fn head_key(base: &str, k: usize) -> String {
    format!("{base}.head{k}")
}

fn is_known_key(key: &str) -> bool {
    const FIXED: [&str; 6] = [
        keys::FE_LAYER3,
        keys::FE_LAYER5,
        keys::COST_VOLUME,
        keys::COST_AGGREGATION,
        keys::DISPARITY,
        keys::DISPARITY_PROB,
    ];
    if FIXED.contains(&key) {
        return true;
    }
    [keys::DISPARITY, keys::DISPARITY_PROB].iter().any(|base| {
        key.strip_prefix(base)
            .and_then(|r| r.strip_prefix(".head"))
            .is_some_and(|n| n.parse::<usize>().is_ok_and(|k| k >= 1))
    })
}

/// Named activations of one network for one batch (or one sample).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TapSet {
    entries: BTreeMap<String, Tensor>,
}

impl TapSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, tensor: Tensor) -> Result<()> {
        let key = key.into();
        if !is_known_key(&key) {
            return Err(Error::InvalidInput(format!("unknown tap {key:?}")));
        }
        self.entries.insert(key, tensor);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Tensor> {
        self.entries.get(key)
    }

    pub fn require(&self, key: &str) -> Result<&Tensor> {
        self.get(key).ok_or_else(|| Error::Capability(format!("teacher provides no {key:?} tap")))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn shapes(&self) -> BTreeMap<&str, &[usize]> {
        self.iter().map(|(k, v)| (k, v.shape())).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn points(&self) -> BTreeSet<DistillPoint> {
        DistillPoint::ALL
            .into_iter()
            .filter(|p| p.required_keys().iter().all(|k| self.entries.contains_key(*k)))
            .collect()
    }

    /// Number of disparity heads (final plus `disparity.head<k>` taps).
    pub fn disparity_heads(&self) -> usize {
        if !self.entries.contains_key(keys::DISPARITY) {
            return 0;
        }
        1 + (1..).take_while(|k| self.entries.contains_key(&head_key(keys::DISPARITY, *k))).count()
    }

    /// Slice `i` of the leading (batch) axis of every tap.
    pub fn sample(&self, i: usize) -> TapSet {
        TapSet { entries: self.entries.iter().map(|(k, v)| (k.clone(), v.index_outer(i))).collect() }
    }

    /// Stacks per-sample tap sets along a new batch axis.
    pub fn stack(items: &[TapSet]) -> Result<TapSet> {
        let first = items.first().ok_or_else(|| Error::Shape("no tap sets to stack".into()))?;
        let mut out = TapSet::new();
        for key in first.entries.keys() {
            let parts = items
                .iter()
                .map(|t| {
                    t.entries
                        .get(key)
                        .cloned()
                        .ok_or_else(|| Error::Shape(format!("tap {key} missing from some samples")))
                })
                .collect::<Result<Vec<_>>>()?;
            out.entries.insert(key.clone(), Tensor::stack(&parts)?);
        }
        if items.iter().any(|t| t.entries.len() != first.entries.len()) {
            return Err(Error::Shape("samples carry different tap sets".into()));
        }
        Ok(out)
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.entries.retain(|k, _| keep(k));
    }
}

/// A source of teacher activations.
pub trait Teacher {
    fn name(&self) -> String;

    fn capabilities(&self) -> BTreeSet<DistillPoint>;

    /// Taps for a preprocessed batch; the disparity map is the
    /// [`keys::DISPARITY`] entry.
    fn forward(&mut self, batch: &Batch) -> Result<TapSet>;

    /// Hint that only these taps will be read (lets teachers cache less).
    fn retain_only(&mut self, _keys: &BTreeSet<String>) {}
}

/// Reborrows an optional teacher for a shorter call.
pub fn reborrow<'a>(t: &'a mut Option<&mut dyn Teacher>) -> Option<&'a mut dyn Teacher> {
    match t {
        Some(t) => Some(&mut **t),
        None => None,
    }
}

/// Errors unless `teacher` can serve every teacher term in `terms`.
pub fn check_capabilities(terms: &BTreeSet<Term>, teacher: Option<&dyn Teacher>) -> Result<()> {
    let needed: BTreeSet<DistillPoint> = terms.iter().filter_map(|t| DistillPoint::for_term(*t)).collect();
    if needed.is_empty() {
        return Ok(());
    }
    let Some(teacher) = teacher else {
        let list: Vec<&str> = needed.iter().map(|p| p.as_str()).collect();
        return Err(Error::Capability(format!("points {list:?} need a teacher")));
    };
    let caps = teacher.capabilities();
    if let Some(missing) = needed.iter().find(|p| !caps.contains(p)) {
        return Err(Error::Capability(format!("teacher {} cannot provide the {missing} point", teacher.name())));
    }
    Ok(())
}
