use std::path::{Path, PathBuf};

use stereokd::config::{ExperimentConfig, ObjectiveWeights};
use stereokd::data::pfm::{read_pfm_disparity, write_pfm_disparity};
use stereokd::data::{
    generate_dataset, preprocess, Dataset, GeneratorInfo, Normalization, StereoSample, MANIFEST_FILE,
};
use stereokd::distill::ablation::{ablation_rows, run_ablation};
use stereokd::distill::trainer::{build_teacher, train as run_training, EpochRecord};
use stereokd::distill::{export_taps as write_taps, Checkpoint, Teacher};
use stereokd::evaluation::report::{error_map_rgb, metrics_csv_row, write_png_rgb, METRICS_CSV_HEADER};
use stereokd::evaluation::{evaluate_model, profile as profile_model, MetricAccumulator};
use stereokd::{preset, Error, ModelConfig, Result, TeacherSpec, Term, TrainConfig};

use crate::args::*;
use crate::run_manifest::RunManifest;

pub type Artifacts = Vec<PathBuf>;

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::io(path, e))
}

pub fn gen_data(a: &GenDataArgs) -> Result<Artifacts> {
    for (name, v) in [("height", a.height), ("width", a.width)] {
        if v == 0 || v % 4 != 0 {
            return Err(Error::Config(format!("{name} {v} must be a positive multiple of 4")));
        }
    }
    if a.count == 0 {
        return Err(Error::Config("count must be positive".into()));
    }
    let test_count = a.test_count.unwrap_or(a.count / 5);
    if test_count > a.count {
        return Err(Error::Config(format!("test count {test_count} exceeds count {}", a.count)));
    }
    let info = GeneratorInfo {
        seed: a.seed,
        height: a.height,
        width: a.width,
        max_disparity: a.max_disp,
        n_objects: a.objects,
        train_count: a.count - test_count,
        test_count,
    };
    let manifest = generate_dataset(&a.out, &info)?;
    let mut run = RunManifest::new("gen-data", Some(a.seed), serde_json::to_value(&info).unwrap());
    run.artifacts.push(a.out.join(MANIFEST_FILE));
    for s in &manifest.samples {
        run.artifacts.extend([&s.left, &s.right, &s.disparity].map(|p| a.out.join(p)));
        run.artifacts.extend(s.valid_mask.iter().map(|p| a.out.join(p)));
    }
    run.finish(&a.out)
}

/// Config file, then preset, then individual flags.
fn resolve(flags: &TrainFlags) -> Result<(ExperimentConfig, ModelConfig, ObjectiveWeights)> {
    let mut exp = match &flags.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = &flags.preset {
        exp.preset = Some(p.clone());
        exp.model = None;
    }
    let mut model = exp.resolve_model()?;
    if let Some(d) = flags.max_disp {
        model.max_disparity = d;
    }
    model.validate()?;
    let t = &mut exp.train;
    macro_rules! set {
        ($flag:ident => $field:ident) => {
            if let Some(v) = &flags.$flag {
                t.$field = v.clone();
            }
        };
    }
    set!(epochs => epochs);
    set!(batch_size => batch_size);
    set!(lr => initial_lr);
    set!(lr_milestones => lr_milestones);
    set!(lr_decay => lr_decay_factor);
    set!(crop_height => crop_height);
    set!(crop_width => crop_width);
    set!(seed => seed);
    set!(bn_momentum => bn_momentum);
    set!(validate_every => validate_every);
    if let Some(d) = &flags.dataset {
        t.dataset = Some(d.clone());
    }
    if flags.final_checkpoint_only {
        t.checkpoint_every_epoch = false;
    }
    exp.model = Some(model.clone());
    let weights = exp.resolve_objective(&model)?;
    exp.objective = Some(weights.clone());
    Ok((exp, model, weights))
}

fn parse_points(s: &str) -> Result<Vec<Term>> {
    let mut v: Vec<Term> =
        s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect::<Result<_>>()?;
    v.sort();
    v.dedup();
    Ok(v)
}

fn print_epoch(r: &EpochRecord) {
    let val = r.val_epe.map(|v| format!(" val EPE {v:.4}")).unwrap_or_default();
    eprintln!("epoch {:>3}  lr {:.2e}  loss {:.5}{val}", r.epoch, r.lr, r.total);
}

fn run_train(
    command: &str,
    flags: &TrainFlags,
    exp: ExperimentConfig,
    model: &ModelConfig,
    weights: &ObjectiveWeights,
) -> Result<Artifacts> {
    let cfg = &exp.train;
    let outcome = run_training(cfg, model, weights, &flags.out, &mut print_epoch)?;
    let mut run = RunManifest::new(command, Some(cfg.seed), serde_json::to_value(&exp).unwrap());
    run.artifacts.push(outcome.metrics_csv);
    run.artifacts.extend(outcome.epoch_checkpoints);
    run.artifacts.push(outcome.checkpoint);
    run.finish(&flags.out)
}

pub fn train(a: &TrainArgs) -> Result<Artifacts> {
    let (mut exp, model, weights) = resolve(&a.train)?;
    exp.train.points = vec![Term::Spw];
    exp.train.teacher = TeacherSpec::None;
    if let Some(l) = &a.losses {
        exp.train.losses.apply_overrides(l)?;
    }
    run_train("train", &a.train, exp, &model, &weights)
}

pub fn distill(a: &DistillArgs) -> Result<Artifacts> {
    let (mut exp, model, weights) = resolve(&a.train)?;
    if let Some(t) = &a.teacher {
        exp.train.teacher = t.parse()?;
    }
    if let Some(p) = &a.points {
        exp.train.points = parse_points(p)?;
    }
    if let Some(l) = &a.losses {
        exp.train.losses.apply_overrides(l)?;
    }
    run_train("distill", &a.train, exp, &model, &weights)
}

fn open_split(dataset: &Path, split: &str) -> Result<Vec<StereoSample>> {
    let samples = Dataset::open(dataset)?.load_split(split)?;
    if samples.is_empty() {
        return Err(Error::InvalidInput(format!("dataset has no {split:?} samples")));
    }
    Ok(samples)
}

struct Scored {
    id: String,
    width: usize,
    height: usize,
    pred: Vec<f32>,
    gt: Vec<f32>,
    mask: Vec<bool>,
}

pub fn evaluate(a: &EvaluateArgs) -> Result<Artifacts> {
    // Load everything before the output directory is touched, so failures
    // leave no artifacts behind.
    let samples = open_split(&a.dataset, &a.split)?;
    let norm = Normalization::default();
    let mut scored = Vec::with_capacity(samples.len());
    let config = if let Some(ck_path) = &a.checkpoint {
        let ck = Checkpoint::load(ck_path)?;
        let (net, store) = ck.build_model(None, ck_path)?;
        let (_, preds) = evaluate_model(&net, &store, &samples, &norm)?;
        for p in preds {
            let (height, width) = (p.ground_truth.shape()[0], p.ground_truth.shape()[1]);
            scored.push(Scored {
                id: p.id,
                width,
                height,
                pred: p.disparity.data().to_vec(),
                gt: p.ground_truth.data().to_vec(),
                mask: p.mask,
            });
        }
        serde_json::json!({ "checkpoint": ck_path, "model": net.config, "dataset": a.dataset, "split": a.split })
    } else {
        let dir = a.predictions.as_ref().expect("clap enforces one source");
        for s in &samples {
            let path = dir.join(format!("{}.pfm", s.id));
            let (pred, _) = read_pfm_disparity(&path)?;
            if pred.shape() != s.disparity.shape() {
                return Err(Error::Shape(format!(
                    "prediction {} is {:?}, ground truth {:?}",
                    path.display(),
                    pred.shape(),
                    s.disparity.shape()
                )));
            }
            let gt = s.disparity.data();
            scored.push(Scored {
                id: s.id.clone(),
                width: s.width(),
                height: s.height(),
                pred: pred.data().to_vec(),
                gt: gt.to_vec(),
                mask: s.valid.iter().zip(gt).map(|(v, g)| *v && g.is_finite()).collect(),
            });
        }
        serde_json::json!({ "predictions": dir, "dataset": a.dataset, "split": a.split })
    };

    let mut csv = format!("{METRICS_CSV_HEADER}\n");
    let mut pooled = MetricAccumulator::default();
    for s in &scored {
        let mut one = MetricAccumulator::default();
        one.add(&s.pred, &s.gt, &s.mask)?;
        pooled.add(&s.pred, &s.gt, &s.mask)?;
        csv.push_str(&metrics_csv_row(&s.id, &one.report()?));
        csv.push('\n');
    }
    let report = pooled.report()?;
    csv.push_str(&metrics_csv_row("all", &report));
    csv.push('\n');

    io(&a.out, std::fs::create_dir_all(&a.out))?;
    let mut run = RunManifest::new("evaluate", None, config);
    let csv_path = a.out.join("metrics.csv");
    io(&csv_path, std::fs::write(&csv_path, csv))?;
    run.artifacts.push(csv_path);
    if a.images {
        for s in &scored {
            let pfm = a.out.join("disparity").join(format!("{}.pfm", s.id));
            io(&pfm, std::fs::create_dir_all(pfm.parent().unwrap()))?;
            let t = stereokd::Tensor::from_vec(&[s.height, s.width], s.pred.clone())?;
            write_pfm_disparity(&pfm, &t)?;
            let png = a.out.join("error").join(format!("{}.png", s.id));
            io(&png, std::fs::create_dir_all(png.parent().unwrap()))?;
            write_png_rgb(&png, s.width, s.height, &error_map_rgb(&s.pred, &s.gt, &s.mask, a.max_error))?;
            run.artifacts.extend([pfm, png]);
        }
    }
    println!(
        "EPE {:.4} px  D1 {:.3} %  >1px {:.3} %  >2px {:.3} %  >3px {:.3} %  ({} pixels)",
        report.epe_px,
        report.d1_percent,
        report.kpx_percent[0],
        report.kpx_percent[1],
        report.kpx_percent[2],
        report.n_valid
    );
    run.finish(&a.out)
}

pub fn profile(a: &ProfileArgs) -> Result<Artifacts> {
    let cfg = preset(&a.preset)?;
    let report = profile_model(&cfg, a.height, a.width)?;
    print!("{}", report.to_table());
    let mut out = Vec::new();
    if let Some(p) = &a.csv {
        io(p, std::fs::write(p, report.to_csv()))?;
        out.push(p.clone());
    }
    Ok(out)
}

fn teacher_for(spec: &str, model: &ModelConfig) -> Result<Box<dyn Teacher>> {
    build_teacher(&spec.parse()?, model)?.ok_or_else(|| Error::Config("a teacher is required".into()))
}

pub fn export_taps(a: &ExportTapsArgs) -> Result<Artifacts> {
    let model = ModelConfig { max_disparity: a.max_disp, ..ModelConfig::default() };
    model.validate()?;
    let mut teacher = teacher_for(&a.teacher, &model)?;
    let norm = Normalization::default();
    let samples = open_split(&a.dataset, &a.split)?
        .iter()
        .map(|s| preprocess(s, s.height(), s.width(), false, 0, a.max_disp, &norm))
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        io(dir, std::fs::create_dir_all(dir))?;
    }
    let c = write_taps(teacher.as_mut(), &samples, &a.out)?;
    eprintln!("{} tensors from {} samples", c.len(), samples.len());
    Ok(vec![a.out.clone()])
}

pub fn ablation(a: &AblationArgs) -> Result<Artifacts> {
    let (mut exp, model, weights) = resolve(&a.train)?;
    if let Some(t) = &a.teacher {
        exp.train.teacher = t.parse()?;
    }
    let all = ablation_rows();
    let rows = match &a.rows {
        None => all,
        Some(sel) => sel
            .iter()
            .map(|&i| {
                all.get(i.wrapping_sub(1))
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("ablation row {i} outside 1..={}", all.len())))
            })
            .collect::<Result<_>>()?,
    };
    let cfg: &TrainConfig = &exp.train;
    cfg.validate()?;
    let needs_teacher = rows.iter().any(|r| r.points.iter().any(|t| t.needs_teacher()));
    let mut teacher = if needs_teacher { build_teacher(&cfg.teacher, &model)? } else { None };
    if needs_teacher && teacher.is_none() {
        return Err(Error::Capability("distillation rows need --teacher".into()));
    }
    let dataset = cfg.dataset.as_ref().ok_or_else(|| Error::Config("no dataset given".into()))?;
    let ds = Dataset::open(dataset)?;
    let train = ds.load_split("train")?;
    let test = ds.load_split("test")?;
    if test.is_empty() {
        return Err(Error::InvalidInput("ablation needs a test split".into()));
    }
    let results = run_ablation(
        &rows,
        cfg,
        &model,
        &weights,
        teacher.as_mut().map(|b| b.as_mut() as &mut dyn Teacher),
        &train,
        &test,
        &a.train.out,
        &mut |row, r| {
            eprint!("row {row}: ");
            print_epoch(r);
        },
    )?;
    for (i, r) in results.iter().enumerate() {
        println!("row {} {:<40} EPE {:.4}  D1 {:.3} %", i + 1, r.row.label(), r.report.epe_px, r.report.d1_percent);
    }
    let mut run = RunManifest::new("ablation", Some(cfg.seed), serde_json::to_value(&exp).unwrap());
    run.artifacts.push(a.train.out.join("ablation.csv"));
    run.finish(&a.train.out)
}
