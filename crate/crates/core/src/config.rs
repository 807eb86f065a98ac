//! Architecture, objective, and training configuration.
//!
//! Configuration files are JSON documents; unknown keys are rejected.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channels of the concatenated feature-extractor output.
pub const FEATURE_CHANNELS: usize = 320;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackboneVariant {
    BB14,
    BB18,
    BB21,
}

impl BackboneVariant {
    /// Number of convolution layers excluding skip projections.
    pub fn depth(self) -> usize {
        match self {
            BackboneVariant::BB14 => 14,
            BackboneVariant::BB18 => 18,
            BackboneVariant::BB21 => 21,
        }
    }

    pub fn all() -> [BackboneVariant; 3] {
        [BackboneVariant::BB14, BackboneVariant::BB18, BackboneVariant::BB21]
    }
}

/// Which views the early feature taps are taken from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapViews {
    #[default]
    Left,
    /// Left and right taps concatenated along the batch axis.
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: BackboneVariant,
    pub num_ed_networks: usize,
    pub base_channels: usize,
    pub max_disparity: usize,
    pub correlation_groups: usize,
    pub use_attention: bool,
    /// Softmax over the negated head output (cost semantics).
    pub negate_cost: bool,
    /// Upsample the aggregated volume before the head convolutions.
    pub upsample_before_head: bool,
    /// Normalize attention weights with a softmax over disparity instead of
    /// a sigmoid.
    pub attention_softmax: bool,
    pub tap_views: TapViews,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneVariant::BB21,
            num_ed_networks: 2,
            base_channels: 16,
            max_disparity: 192,
            correlation_groups: 40,
            use_attention: false,
            negate_cost: true,
            upsample_before_head: false,
            attention_softmax: false,
            tap_views: TapViews::Left,
        }
    }
}

const PRESET_CHANNELS: [usize; 4] = [8, 16, 24, 32];

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.max_disparity;
        if d == 0 || !d.is_multiple_of(4) {
            return Err(Error::Config(format!("max_disparity {d} must be a positive multiple of 4")));
        }
        if !(d / 4).is_multiple_of(2) {
            return Err(Error::Config(format!("max_disparity/4 = {} must be even", d / 4)));
        }
        let g = self.correlation_groups;
        if g == 0 || !FEATURE_CHANNELS.is_multiple_of(g) {
            return Err(Error::Config(format!(
                "correlation_groups {g} must divide the {FEATURE_CHANNELS} feature channels"
            )));
        }
        if !(1..=3).contains(&self.num_ed_networks) {
            return Err(Error::Config(format!("num_ed_networks {} must be 1, 2 or 3", self.num_ed_networks)));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be at least 1".into()));
        }
        Ok(())
    }

    /// Checks an input image size against the quarter-resolution grid.
    pub fn validate_input(&self, height: usize, width: usize) -> Result<()> {
        for (name, v) in [("height", height), ("width", width)] {
            if v == 0 || v % 8 != 0 {
                return Err(Error::Config(format!(
                    "input {name} {v} must be a positive multiple of 8 (even quarter resolution)"
                )));
            }
        }
        Ok(())
    }

    /// Canonical preset-style name, e.g. `BB21-ED2-N16+attention`.
    pub fn name(&self) -> String {
        let mut s = format!("{:?}-ED{}-N{}", self.backbone, self.num_ed_networks, self.base_channels);
        if self.use_attention {
            s.push_str("+attention");
        }
        s
    }
}

/// Names of every preset in the variant grid (without attention).
pub fn preset_names() -> Vec<String> {
    let mut out = Vec::new();
    for bb in BackboneVariant::all() {
        for ed in 1..=3 {
            for n in PRESET_CHANNELS {
                out.push(format!("{bb:?}-ED{ed}-N{n}"));
            }
        }
    }
    out
}

pub fn preset(name: &str) -> Result<ModelConfig> {
    let unknown = || {
        Error::Config(format!(
            "unknown preset {name:?}; valid presets are DSNet, DSNet+Attention, and \
             BB{{14|18|21}}-ED{{1|2|3}}-N{{8|16|24|32}} with optional +attention"
        ))
    };
    let (base, attention) = match name {
        "DSNet" => ("BB21-ED2-N16", false),
        "DSNet+Attention" => ("BB21-ED2-N16", true),
        _ => match name.strip_suffix("+attention") {
            Some(b) => (b, true),
            None => (name, false),
        },
    };
    let parts: Vec<&str> = base.split('-').collect();
    let [bb, ed, n] = parts.as_slice() else {
        return Err(unknown());
    };
    let backbone = match *bb {
        "BB14" => BackboneVariant::BB14,
        "BB18" => BackboneVariant::BB18,
        "BB21" => BackboneVariant::BB21,
        _ => return Err(unknown()),
    };
    let num_ed_networks = match *ed {
        "ED1" => 1,
        "ED2" => 2,
        "ED3" => 3,
        _ => return Err(unknown()),
    };
    let base_channels = n
        .strip_prefix('N')
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|v| PRESET_CHANNELS.contains(v) && n[1..] == v.to_string())
        .ok_or_else(unknown)?;
    Ok(ModelConfig { backbone, num_ed_networks, base_channels, use_attention: attention, ..ModelConfig::default() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveWeights {
    pub lambda_fe: f32,
    pub lambda_cv: f32,
    pub lambda_ca: f32,
    pub lambda_spw: f32,
    pub lambda_stpw: f32,
    /// Deep-supervision weights, one per ED output; the last is the final output.
    pub intermediate_output_weights: Vec<f32>,
}

impl ObjectiveWeights {
    pub fn for_ed_count(num_ed: usize) -> Self {
        let intermediate_output_weights = match num_ed {
            1 => vec![1.0],
            2 => vec![0.7, 1.0],
            _ => vec![0.5, 0.7, 1.0],
        };
        ObjectiveWeights {
            lambda_fe: 0.1,
            lambda_cv: 0.1,
            lambda_ca: 0.1,
            lambda_spw: 0.4,
            lambda_stpw: 0.4,
            intermediate_output_weights,
        }
    }

    pub fn lambda(&self, term: Term) -> f32 {
        match term {
            Term::Fe => self.lambda_fe,
            Term::Cv => self.lambda_cv,
            Term::Ca => self.lambda_ca,
            Term::Spw => self.lambda_spw,
            Term::Stpw => self.lambda_stpw,
        }
    }

    pub fn validate(&self, num_ed: usize) -> Result<()> {
        let all = [self.lambda_fe, self.lambda_cv, self.lambda_ca, self.lambda_spw, self.lambda_stpw];
        if all.iter().chain(&self.intermediate_output_weights).any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("objective weights must be finite and non-negative".into()));
        }
        if self.intermediate_output_weights.len() != num_ed {
            return Err(Error::Config(format!(
                "intermediate_output_weights has {} entries for {num_ed} ED networks",
                self.intermediate_output_weights.len()
            )));
        }
        Ok(())
    }
}

/// Objective weights for the two-ED reference student.
pub fn default_objective_weights() -> ObjectiveWeights {
    ObjectiveWeights::for_ed_count(2)
}

/// The five terms of the joint objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Term {
    Fe,
    Cv,
    Ca,
    Spw,
    Stpw,
}

impl Term {
    pub const ALL: [Term; 5] = [Term::Fe, Term::Cv, Term::Ca, Term::Spw, Term::Stpw];

    pub fn as_str(self) -> &'static str {
        match self {
            Term::Fe => "fe",
            Term::Cv => "cv",
            Term::Ca => "ca",
            Term::Spw => "spw",
            Term::Stpw => "stpw",
        }
    }

    /// Whether the term compares against a teacher.
    pub fn needs_teacher(self) -> bool {
        self != Term::Spw
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Term {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Term::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective term {s:?} (fe, cv, ca, spw, stpw)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    SmoothL1,
    LogL1,
    Cosine,
    Kld,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::SmoothL1 => "smoothl1",
            LossKind::LogL1 => "logl1",
            LossKind::Cosine => "cosine",
            LossKind::Kld => "kld",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "smoothl1" => Ok(LossKind::SmoothL1),
            "logl1" => Ok(LossKind::LogL1),
            "cosine" => Ok(LossKind::Cosine),
            "kld" => Ok(LossKind::Kld),
            _ => Err(Error::Config(format!("unknown loss {s:?} (smoothl1, logl1, cosine, kld)"))),
        }
    }
}

/// Loss function used at each term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossAssignment {
    pub fe: LossKind,
    pub cv: LossKind,
    pub ca: LossKind,
    pub spw: LossKind,
    pub stpw: LossKind,
}

impl Default for LossAssignment {
    fn default() -> Self {
        LossAssignment {
            fe: LossKind::Cosine,
            cv: LossKind::Cosine,
            ca: LossKind::Kld,
            spw: LossKind::LogL1,
            stpw: LossKind::SmoothL1,
        }
    }
}

impl LossAssignment {
    pub fn get(&self, term: Term) -> LossKind {
        match term {
            Term::Fe => self.fe,
            Term::Cv => self.cv,
            Term::Ca => self.ca,
            Term::Spw => self.spw,
            Term::Stpw => self.stpw,
        }
    }

    pub fn set(&mut self, term: Term, kind: LossKind) {
        match term {
            Term::Fe => self.fe = kind,
            Term::Cv => self.cv = kind,
            Term::Ca => self.ca = kind,
            Term::Spw => self.spw = kind,
            Term::Stpw => self.stpw = kind,
        }
    }

    /// Parses `term=loss` pairs separated by commas, applied over `self`.
    pub fn apply_overrides(&mut self, spec: &str) -> Result<()> {
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (t, l) =
                item.split_once('=').ok_or_else(|| Error::Config(format!("expected term=loss, got {item:?}")))?;
            self.set(t.trim().parse()?, l.trim().parse()?);
        }
        Ok(())
    }
}

/// Where teacher signals come from.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum TeacherSpec {
    #[default]
    None,
    Oracle,
    Checkpoint(PathBuf),
    Taps(PathBuf),
}

impl FromStr for TeacherSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            Ok(TeacherSpec::None)
        } else if s == "oracle" {
            Ok(TeacherSpec::Oracle)
        } else if let Some(p) = s.strip_prefix("checkpoint:") {
            Ok(TeacherSpec::Checkpoint(p.into()))
        } else if let Some(p) = s.strip_prefix("taps:") {
            Ok(TeacherSpec::Taps(p.into()))
        } else {
            Err(Error::Config(format!("teacher must be none, oracle, checkpoint:PATH or taps:PATH, got {s:?}")))
        }
    }
}

impl fmt::Display for TeacherSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TeacherSpec::None => f.write_str("none"),
            TeacherSpec::Oracle => f.write_str("oracle"),
            TeacherSpec::Checkpoint(p) => write!(f, "checkpoint:{}", p.display()),
            TeacherSpec::Taps(p) => write!(f, "taps:{}", p.display()),
        }
    }
}

impl Serialize for TeacherSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TeacherSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f32,
    /// Zero-based epochs at which the rate is multiplied by `lr_decay_factor`.
    pub lr_milestones: Vec<usize>,
    pub lr_decay_factor: f32,
    pub crop_height: usize,
    pub crop_width: usize,
    pub seed: u64,
    /// Dataset manifest; training uses the `train` split, validation `test`.
    pub dataset: Option<PathBuf>,
    pub teacher: TeacherSpec,
    /// Enabled objective terms.
    pub points: Vec<Term>,
    pub losses: LossAssignment,
    /// Batch-norm running-statistics momentum.
    pub bn_momentum: f32,
    /// Write a checkpoint after every epoch (otherwise only the last).
    pub checkpoint_every_epoch: bool,
    /// Validate every this many epochs (0: only after the last one).
    pub validate_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 64,
            batch_size: 8,
            initial_lr: 1e-4,
            lr_milestones: vec![20, 32, 40, 48, 56],
            lr_decay_factor: 0.5,
            crop_height: 256,
            crop_width: 512,
            seed: 0,
            dataset: None,
            teacher: TeacherSpec::None,
            points: vec![Term::Spw],
            losses: LossAssignment::default(),
            bn_momentum: 0.1,
            checkpoint_every_epoch: true,
            validate_every: 1,
        }
    }
}

impl TrainConfig {
    /// Fine-tuning schedule for the driving-scene benchmark.
    pub fn kitti_finetune() -> Self {
        TrainConfig { epochs: 500, lr_milestones: vec![250], lr_decay_factor: 0.2, ..TrainConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.initial_lr > 0.0) || !(self.lr_decay_factor > 0.0) {
            return Err(Error::Config("learning rate and decay factor must be positive".into()));
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("lr_milestones {:?} must be strictly increasing", self.lr_milestones)));
        }
        if !self.crop_height.is_multiple_of(4)
            || !self.crop_width.is_multiple_of(4)
            || self.crop_height == 0
            || self.crop_width == 0
        {
            return Err(Error::Config(format!(
                "crop {}x{} must be positive multiples of 4",
                self.crop_height, self.crop_width
            )));
        }
        if self.points.is_empty() {
            return Err(Error::Config("at least one objective term must be enabled".into()));
        }
        if self.losses.spw == LossKind::Kld {
            return Err(Error::Config("kld needs a teacher distribution; it cannot be used for spw".into()));
        }
        Ok(())
    }
}

/// A complete experiment document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Preset name applied before `model` overrides; `model` wins if both given.
    pub preset: Option<String>,
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    pub objective: Option<ObjectiveWeights>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn resolve_model(&self) -> Result<ModelConfig> {
        let m = match (&self.model, &self.preset) {
            (Some(m), _) => m.clone(),
            (None, Some(p)) => preset(p)?,
            (None, None) => ModelConfig::default(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn resolve_objective(&self, model: &ModelConfig) -> Result<ObjectiveWeights> {
        let w = self.objective.clone().unwrap_or_else(|| ObjectiveWeights::for_ed_count(model.num_ed_networks));
        w.validate(model.num_ed_networks)?;
        Ok(w)
    }
}
