//! The distillation step and the epoch loop.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::align::{align, Adapters, ADAPTER_PREFIX};
use super::checkpoint::Checkpoint;
use super::teacher::{ModelTeacher, OracleTeacher, TapFileTeacher};
use super::{check_capabilities, head_key, keys, reborrow, DistillPoint, TapSet, Teacher};
use crate::config::{LossAssignment, LossKind, ModelConfig, ObjectiveWeights, TeacherSpec, Term, TrainConfig};
use crate::data::{preprocess, Batch, Dataset, Normalization, StereoSample};
use crate::error::{Error, Result};
use crate::evaluation::evaluate_model;
use crate::losses::{self, combine, AxisLayout, LossBreakdown, TermLosses};
use crate::model::StereoNet;
use crate::nn::functional::softmax_axis;
use crate::nn::{Adam, Graph, MultiStepLr, ParamKind, ParamStore, Var};
use crate::regression::Mode;
use crate::tensor::{split_axis, Tensor};

/// Which terms are enabled, their loss functions, and their weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub weights: ObjectiveWeights,
    pub losses: LossAssignment,
    pub points: BTreeSet<Term>,
}

impl Objective {
    pub fn new(weights: ObjectiveWeights, losses: LossAssignment, points: &[Term]) -> Result<Self> {
        let o = Objective { weights, losses, points: points.iter().copied().collect() };
        o.check_kinds()?;
        Ok(o)
    }

    fn check_kinds(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Config("no objective terms enabled".into()));
        }
        for &t in &self.points {
            let k = self.losses.get(t);
            let ok = match t {
                Term::Spw => matches!(k, LossKind::SmoothL1 | LossKind::LogL1),
                Term::Stpw => k != LossKind::Cosine,
                Term::Fe => k != LossKind::Kld,
                Term::Cv | Term::Ca => true,
            };
            if !ok {
                return Err(Error::Config(format!("{k:?} is not available for the {t} term")));
            }
        }
        Ok(())
    }

    pub fn validate(&self, num_ed: usize) -> Result<()> {
        self.check_kinds()?;
        self.weights.validate(num_ed)
    }

    pub fn needs_teacher(&self) -> bool {
        self.points.iter().any(|t| t.needs_teacher())
    }

    /// Teacher taps the enabled terms read.
    pub fn tap_keys(&self, max_heads: usize) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for &t in &self.points {
            if let Some(p) = DistillPoint::for_term(t) {
                out.extend(p.required_keys().iter().map(|k| k.to_string()));
            }
            if t == Term::Stpw {
                let base = if self.losses.stpw == LossKind::Kld { keys::DISPARITY_PROB } else { keys::DISPARITY };
                out.insert(base.to_string());
                out.extend((1..max_heads).map(|k| head_key(base, k)));
            }
        }
        out
    }
}

/// The network being trained together with its optimizer and adapters.
#[derive(Clone, Debug)]
pub struct Student {
    pub net: StereoNet,
    pub store: ParamStore,
    pub adam: Adam,
    pub adapters: Adapters,
    pub bn_momentum: f32,
}

impl Student {
    pub fn new(config: &ModelConfig, seed: u64, lr: f32) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = StereoNet::build(config, &mut store, "", seed)?;
        Ok(Student { net, store, adam: Adam::new(lr), adapters: Adapters::new(seed ^ 0x5eed_ada9), bn_momentum: 0.1 })
    }

    pub fn checkpoint(&self, epoch: Option<usize>) -> Checkpoint {
        Checkpoint::from_store(Some(&self.net.config), &self.store, epoch, Some(&self.adam))
    }

    /// Loads weights, adapters and optimizer state.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        for (name, t) in &ck.params {
            if name.starts_with(ADAPTER_PREFIX) && self.store.id(name).is_none() {
                self.store.add(name.clone(), t.clone(), ParamKind::Trainable)?;
            }
        }
        ck.load_into(&mut self.store, None)?;
        ck.restore_optimizer(&self.store, &mut self.adam)
    }
}

fn loss_node(
    g: &mut Graph,
    kind: LossKind,
    student: Var,
    teacher: &Tensor,
    layout: AxisLayout,
    mask: Option<&[bool]>,
) -> Result<(Var, f64)> {
    let lg = losses::evaluate(kind, g.value(student).data(), teacher.data(), layout, mask)?;
    let grad = Tensor::from_vec(g.shape(student), lg.grad)?;
    Ok((g.loss(student, lg.value, grad), lg.value as f64))
}

fn softmax_tensor(t: &Tensor, axis: usize) -> Tensor {
    let (o, l, i) = split_axis(t.shape(), axis);
    Tensor::from_vec(t.shape(), softmax_axis(t.data(), o, l, i)).unwrap()
}

/// Feature maps and volumes: channel projection, then the assigned loss.
/// Volumes under KLD become distributions along the disparity axis; cosine
/// runs along channels, or along disparity for single-channel volumes.
fn activation_term(
    g: &mut Graph,
    student: &mut Student,
    key: &str,
    s: Var,
    t: &Tensor,
    kind: LossKind,
) -> Result<(Var, f64)> {
    let (s, t) = align(g, &mut student.store, &mut student.adapters, key, s, t, true)?;
    let shape = g.shape(s).to_vec();
    match kind {
        LossKind::Kld => {
            if shape.len() != 5 {
                return Err(Error::Config(format!("KLD needs a disparity axis; {key} has shape {shape:?}")));
            }
            let sp = g.softmax(s, 2);
            let tp = softmax_tensor(&t, 2);
            loss_node(g, kind, sp, &tp, AxisLayout::new(&shape, 2), None)
        }
        LossKind::Cosine => {
            let axis = if shape[1] == 1 && shape.len() == 5 { 2 } else { 1 };
            loss_node(g, kind, s, &t, AxisLayout::new(&shape, axis), None)
        }
        _ => loss_node(g, kind, s, &t, AxisLayout::flat(t.numel()), None),
    }
}

fn weighted(g: &mut Graph, parts: &[(Var, f64)], weights: &[f32]) -> (Var, f64) {
    let terms: Vec<(Var, f32)> = parts.iter().zip(weights).map(|((v, _), w)| (*v, *w)).collect();
    let value = parts.iter().zip(weights).map(|((_, l), w)| l * *w as f64).sum();
    (g.weighted_sum(&terms), value)
}

/// The teacher tap a student head is compared with: the teacher head at the
/// same distance from the end, or the teacher's final map.
fn teacher_head_key(base: &str, taps: &TapSet, head: usize, n_heads: usize) -> String {
    let from_end = n_heads - 1 - head;
    let m = taps.disparity_heads();
    if from_end == 0 || m <= from_end {
        base.to_string()
    } else {
        head_key(base, m - from_end)
    }
}

/// Forward pass of student (training mode) and teacher (no gradient), and
/// every enabled term. Returns the graph, the total-loss node, and the
/// breakdown.
pub fn forward_objective(
    batch: &Batch,
    student: &mut Student,
    teacher: Option<&mut dyn Teacher>,
    objective: &Objective,
) -> Result<(Graph, Var, LossBreakdown)> {
    objective.validate(student.net.config.num_ed_networks)?;
    let mut teacher = teacher;
    check_capabilities(&objective.points, teacher.as_deref().map(|t| t as &dyn Teacher))?;
    let taps = match teacher.as_mut() {
        Some(t) if objective.needs_teacher() => Some(t.forward(batch)?),
        _ => None,
    };
    let tap = |k: &str| taps.as_ref().expect("teacher checked above").require(k);

    let mut g = Graph::training();
    let l = g.input(batch.left.clone());
    let r = g.input(batch.right.clone());
    let out = student.net.forward(&mut g, &student.store, l, r, Mode::Train)?;
    let head_w = objective.weights.intermediate_output_weights.clone();
    let n_heads = out.heads.len();

    let mut terms = TermLosses::default();
    let mut nodes = Vec::new();
    for &term in &objective.points {
        let kind = objective.losses.get(term);
        let (node, value) = match term {
            Term::Fe => {
                let a = activation_term(&mut g, student, keys::FE_LAYER3, out.fe_layer3, tap(keys::FE_LAYER3)?, kind)?;
                let b = activation_term(&mut g, student, keys::FE_LAYER5, out.fe_layer5, tap(keys::FE_LAYER5)?, kind)?;
                weighted(&mut g, &[a, b], &[0.5, 0.5])
            }
            Term::Cv => {
                activation_term(&mut g, student, keys::COST_VOLUME, out.cost_volume, tap(keys::COST_VOLUME)?, kind)?
            }
            Term::Ca => activation_term(
                &mut g,
                student,
                keys::COST_AGGREGATION,
                out.final_aggregated(),
                tap(keys::COST_AGGREGATION)?,
                kind,
            )?,
            Term::Spw => {
                let mut parts = Vec::new();
                for h in &out.heads {
                    let layout = AxisLayout::flat(batch.disparity.numel());
                    parts.push(loss_node(&mut g, kind, h.disparity, &batch.disparity, layout, Some(&batch.valid))?);
                }
                weighted(&mut g, &parts, &head_w)
            }
            Term::Stpw => {
                let taps = taps.as_ref().expect("teacher checked above");
                let mut parts = Vec::new();
                for (i, h) in out.heads.iter().enumerate() {
                    if kind == LossKind::Kld {
                        let key = teacher_head_key(keys::DISPARITY_PROB, taps, i, n_heads);
                        let t = taps.require(&key)?;
                        let (s, t) =
                            align(&mut g, &mut student.store, &mut student.adapters, &key, h.probabilities, t, false)?;
                        let layout = AxisLayout::new(t.shape(), 1);
                        parts.push(loss_node(&mut g, kind, s, &t, layout, None)?);
                    } else {
                        let key = teacher_head_key(keys::DISPARITY, taps, i, n_heads);
                        let t = taps.require(&key)?;
                        let (s, t) =
                            align(&mut g, &mut student.store, &mut student.adapters, &key, h.disparity, t, false)?;
                        let mask: Vec<bool> = t.data().iter().map(|v| v.is_finite()).collect();
                        let mask = (!mask.iter().all(|m| *m)).then_some(mask);
                        parts.push(loss_node(&mut g, kind, s, &t, AxisLayout::flat(t.numel()), mask.as_deref())?);
                    }
                }
                weighted(&mut g, &parts, &head_w)
            }
        };
        terms.set(term, Some(value));
        nodes.push((node, objective.weights.lambda(term)));
    }
    let breakdown = combine(&terms, &objective.weights)?;
    let total = g.weighted_sum(&nodes);
    Ok((g, total, breakdown))
}

/// One optimizer update on `batch`; returns the losses before the update.
pub fn distill_step(
    batch: &Batch,
    student: &mut Student,
    teacher: Option<&mut dyn Teacher>,
    objective: &Objective,
) -> Result<LossBreakdown> {
    let (g, total, breakdown) = forward_objective(batch, student, teacher, objective)?;
    student.store.zero_grads();
    g.backward(total, &mut student.store);
    student.adam.step(&mut student.store);
    g.apply_bn_updates(&mut student.store, student.bn_momentum);
    Ok(breakdown)
}

/// Builds the teacher a spec names.
pub fn build_teacher(spec: &TeacherSpec, model: &ModelConfig) -> Result<Option<Box<dyn Teacher>>> {
    Ok(match spec {
        TeacherSpec::None => None,
        TeacherSpec::Oracle => Some(Box::new(OracleTeacher::new(model.max_disparity))),
        TeacherSpec::Checkpoint(p) => Some(Box::new(ModelTeacher::from_checkpoint(p, None)?.with_cache())),
        TeacherSpec::Taps(p) => Some(Box::new(TapFileTeacher::open(p)?)),
    })
}

pub const METRICS_HEADER: &str = "epoch,lr,l_fe,l_cv,l_ca,l_spw,l_stpw,total,val_epe";

/// Mean losses of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f32,
    pub losses: TermLosses,
    pub total: f64,
    pub val_epe: Option<f32>,
}

impl EpochRecord {
    /// Disabled terms and a missing validation score are empty fields.
    pub fn csv_row(&self) -> String {
        let mut s = format!("{},{}", self.epoch, self.lr);
        for t in Term::ALL {
            match self.losses.get(t) {
                Some(v) => write!(s, ",{v}").unwrap(),
                None => s.push(','),
            }
        }
        write!(s, ",{}", self.total).unwrap();
        match self.val_epe {
            Some(v) => write!(s, ",{v}").unwrap(),
            None => s.push(','),
        }
        s
    }
}

pub fn metrics_csv(history: &[EpochRecord]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in history {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Final weights with optimizer state.
    pub checkpoint: PathBuf,
    pub epoch_checkpoints: Vec<PathBuf>,
    pub metrics_csv: PathBuf,
    pub student: Student,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ a.wrapping_mul(0x9e3779b97f4a7c15) ^ b.wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Trains a student on the dataset of `cfg`, with the teacher it names.
pub fn train(
    cfg: &TrainConfig,
    model: &ModelConfig,
    weights: &ObjectiveWeights,
    out_dir: &Path,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let objective = Objective::new(weights.clone(), cfg.losses, &cfg.points)?;
    objective.validate(model.num_ed_networks)?;
    let mut teacher = if objective.needs_teacher() { build_teacher(&cfg.teacher, model)? } else { None };
    check_capabilities(&objective.points, teacher.as_deref())?;
    let path = cfg.dataset.as_ref().ok_or_else(|| Error::Config("no dataset given".into()))?;
    let ds = Dataset::open(path)?;
    let train_set = ds.load_split("train")?;
    let val_set = ds.load_split("test")?;
    train_with(
        cfg,
        model,
        &objective,
        teacher.as_mut().map(|b| b.as_mut() as &mut dyn Teacher),
        &train_set,
        &val_set,
        out_dir,
        progress,
    )
}

/// The epoch loop on in-memory samples.
#[allow(clippy::too_many_arguments)]
pub fn train_with(
    cfg: &TrainConfig,
    model: &ModelConfig,
    objective: &Objective,
    mut teacher: Option<&mut dyn Teacher>,
    train_set: &[StereoSample],
    val_set: &[StereoSample],
    out_dir: &Path,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    objective.validate(model.num_ed_networks)?;
    check_capabilities(&objective.points, teacher.as_deref().map(|t| t as &dyn Teacher))?;
    if train_set.is_empty() {
        return Err(Error::InvalidInput("dataset has no training samples".into()));
    }
    if let Some(t) = teacher.as_mut() {
        t.retain_only(&objective.tap_keys(4));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let norm = Normalization::default();
    let schedule =
        MultiStepLr { initial: cfg.initial_lr, milestones: cfg.lr_milestones.clone(), factor: cfg.lr_decay_factor };
    let mut student = Student::new(model, cfg.seed, cfg.initial_lr)?;
    student.bn_momentum = cfg.bn_momentum;
    let metrics_path = out_dir.join("metrics.csv");
    let mut history = Vec::new();
    let mut epoch_checkpoints = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        student.adam.lr = lr;
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, u64::MAX)));
        let mut sums = [0.0f64; 5];
        let mut total = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let samples = chunk
                .iter()
                .map(|&i| {
                    let seed = mix(cfg.seed, epoch as u64, i as u64);
                    preprocess(&train_set[i], cfg.crop_height, cfg.crop_width, true, seed, model.max_disparity, &norm)
                })
                .collect::<Result<Vec<_>>>()?;
            let batch = Batch::from_samples(&samples)?;
            let b = distill_step(&batch, &mut student, reborrow(&mut teacher), objective)?;
            for (k, t) in Term::ALL.into_iter().enumerate() {
                sums[k] += b.get(t);
            }
            total += b.total;
            batches += 1;
        }
        let mut losses = TermLosses::default();
        for (k, t) in Term::ALL.into_iter().enumerate() {
            if objective.points.contains(&t) {
                losses.set(t, Some(sums[k] / batches as f64));
            }
        }
        let due = epoch + 1 == cfg.epochs || (cfg.validate_every > 0 && (epoch + 1) % cfg.validate_every == 0);
        let val_epe = if val_set.is_empty() || !due {
            None
        } else {
            Some(evaluate_model(&student.net, &student.store, val_set, &norm)?.0.epe_px)
        };
        let rec = EpochRecord { epoch: epoch + 1, lr, losses, total: total / batches as f64, val_epe };
        progress(&rec);
        history.push(rec);
        std::fs::write(&metrics_path, metrics_csv(&history)).map_err(|e| Error::io(&metrics_path, e))?;
        if cfg.checkpoint_every_epoch {
            let p = out_dir.join("checkpoints").join(format!("epoch_{:03}.ckpt", epoch + 1));
            student.checkpoint(Some(epoch + 1)).save(&p)?;
            epoch_checkpoints.push(p);
        }
    }
    let final_path = out_dir.join("final.ckpt");
    student.checkpoint(Some(cfg.epochs)).save(&final_path)?;
    Ok(TrainOutcome { history, checkpoint: final_path, epoch_checkpoints, metrics_csv: metrics_path, student })
}
