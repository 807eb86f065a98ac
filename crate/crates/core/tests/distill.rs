use std::collections::BTreeSet;

use stereokd::data::{preprocess, synth_sample, Batch, StereoSample, SynthParams, IMAGENET};
use stereokd::distill::checkpoint::Checkpoint;
use stereokd::distill::teacher::{export_taps, ModelTeacher, OracleTeacher, TapFileTeacher};
use stereokd::distill::trainer::{distill_step, forward_objective, Objective, Student};
use stereokd::distill::Teacher;
use stereokd::{preset, LossAssignment, ModelConfig, ObjectiveWeights, Term};

fn small(name: &str) -> ModelConfig {
    let mut cfg = preset(name).unwrap();
    cfg.max_disparity = 16;
    cfg
}

fn samples(n: u64) -> Vec<StereoSample> {
    let p = SynthParams { height: 32, width: 64, max_disparity: 16, n_objects: 3, background_disparity: None };
    (0..n).map(|i| preprocess(&synth_sample(100 + i, &p).unwrap(), 32, 64, true, i, 16, &IMAGENET).unwrap()).collect()
}

fn objective(points: &[Term], num_ed: usize) -> Objective {
    Objective::new(ObjectiveWeights::for_ed_count(num_ed), LossAssignment::default(), points).unwrap()
}

fn teacher() -> ModelTeacher {
    let t = Student::new(&small("BB14-ED2-N16"), 9, 1e-3).unwrap();
    ModelTeacher::new(t.net, t.store)
}

#[test]
fn teacher_weights_never_change() {
    let batch = Batch::from_samples(&samples(2)).unwrap();
    let mut t = teacher();
    let before = t.store().fingerprint();
    let mut s = Student::new(&small("BB14-ED1-N8"), 1, 1e-3).unwrap();
    let obj = objective(&Term::ALL, 1);
    for _ in 0..3 {
        distill_step(&batch, &mut s, Some(&mut t), &obj).unwrap();
    }
    assert_eq!(t.store().fingerprint(), before);
}

#[test]
fn every_point_reaches_the_student() {
    let batch = Batch::from_samples(&samples(2)).unwrap();
    let mut t = teacher();
    for term in Term::ALL {
        let mut s = Student::new(&small("BB14-ED1-N8"), 2, 1e-3).unwrap();
        let (g, total, _) = forward_objective(&batch, &mut s, Some(&mut t), &objective(&[term], 1)).unwrap();
        s.store.zero_grads();
        g.backward(total, &mut s.store);
        let norm: f64 = s
            .store
            .trainable_ids()
            .iter()
            .filter(|id| !s.store.entry(**id).name.starts_with("adapter"))
            .flat_map(|id| s.store.grad(*id).data().to_vec())
            .map(|v| (v as f64).powi(2))
            .sum();
        assert!(norm > 0.0, "{term}: no gradient reaches the network");
    }
}

#[test]
fn zero_weight_equals_omitting_the_point() {
    let data = samples(2);
    let batches = [Batch::from_samples(&data[..1]).unwrap(), Batch::from_samples(&data[1..]).unwrap()];
    let run = |points: &[Term], zero: Option<Term>| {
        let mut obj = objective(points, 1);
        match zero {
            Some(Term::Cv) => obj.weights.lambda_cv = 0.0,
            Some(Term::Stpw) => obj.weights.lambda_stpw = 0.0,
            _ => {}
        }
        let mut t = teacher();
        let mut s = Student::new(&small("BB14-ED1-N8"), 3, 1e-3).unwrap();
        let totals: Vec<f64> =
            (0..3).map(|i| distill_step(&batches[i % 2], &mut s, Some(&mut t), &obj).unwrap().total).collect();
        let net_only: Vec<_> = s
            .store
            .entries()
            .filter(|(_, e)| !e.name.starts_with("adapter"))
            .map(|(_, e)| e.value.data().to_vec())
            .collect();
        (totals, net_only)
    };
    let baseline = run(&[Term::Spw], None);
    assert_eq!(run(&[Term::Spw, Term::Cv], Some(Term::Cv)), baseline);
    assert_eq!(run(&[Term::Spw, Term::Stpw], Some(Term::Stpw)), baseline);
}

#[test]
fn same_seed_same_trajectory() {
    let batch = Batch::from_samples(&samples(2)).unwrap();
    let run = || {
        let mut t = teacher();
        let mut s = Student::new(&small("BB14-ED1-N8+attention"), 4, 1e-3).unwrap();
        let obj = objective(&Term::ALL, 1);
        (0..2).map(|_| distill_step(&batch, &mut s, Some(&mut t), &obj).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn nan_ground_truth_keeps_training_finite() {
    let p = SynthParams { height: 32, width: 64, max_disparity: 16, n_objects: 4, background_disparity: None };
    let mut raw = synth_sample(7, &p).unwrap();
    for (d, v) in raw.disparity.data_mut().iter_mut().zip(&raw.valid) {
        if !v {
            *d = f32::NAN;
        }
    }
    let batch = Batch::from_samples(&[preprocess(&raw, 32, 64, true, 0, 16, &IMAGENET).unwrap()]).unwrap();
    let mut s = Student::new(&small("BB14-ED1-N8"), 5, 1e-3).unwrap();
    let l = distill_step(&batch, &mut s, Some(&mut teacher()), &objective(&Term::ALL, 1)).unwrap();
    assert!(l.total.is_finite());
    // The oracle cannot fill holes, and says so.
    assert!(OracleTeacher::new(16).forward(&batch).is_err());
    assert!(s.store.entries().all(|(_, e)| e.value.all_finite()));
}

#[test]
fn checkpoint_reload_predicts_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let batch = Batch::from_samples(&samples(1)).unwrap();
    let mut s = Student::new(&small("BB18-ED2-N8"), 6, 1e-3).unwrap();
    distill_step(&batch, &mut s, None, &objective(&[Term::Spw], 2)).unwrap();
    let path = tmp.path().join("s.ckpt");
    s.checkpoint(Some(1)).save(&path).unwrap();
    let (net, store) = Checkpoint::load(&path).unwrap().build_model(None, &path).unwrap();
    let a = s.net.infer(&s.store, &batch.left, &batch.right).unwrap();
    let b = net.infer(&store, &batch.left, &batch.right).unwrap();
    assert_eq!(a, b);

    let mut resumed = Student::new(&small("BB18-ED2-N8"), 99, 1e-3).unwrap();
    resumed.restore(&Checkpoint::load(&path).unwrap()).unwrap();
    let obj = objective(&[Term::Spw], 2);
    assert_eq!(
        distill_step(&batch, &mut s, None, &obj).unwrap(),
        distill_step(&batch, &mut resumed, None, &obj).unwrap()
    );
    assert_eq!(s.store.fingerprint(), resumed.store.fingerprint());
}

#[test]
fn exported_taps_replay_bit_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let data = samples(3);
    let mut t = teacher();
    let path = tmp.path().join("t.taps");
    export_taps(&mut t, &data, &path).unwrap();
    let mut replay = TapFileTeacher::open(&path).unwrap();
    assert_eq!(replay.capabilities(), t.capabilities());
    for s in &data {
        let batch = Batch::from_samples(std::slice::from_ref(s)).unwrap();
        let live = t.forward(&batch).unwrap();
        let stored = replay.forward(&batch).unwrap();
        let keys: BTreeSet<&str> = live.keys().collect();
        assert_eq!(keys, stored.keys().collect());
        for k in keys {
            let (a, b) = (live.get(k).unwrap(), stored.get(k).unwrap());
            assert_eq!(a.shape(), b.shape(), "{k}");
            let bits = |t: &stereokd::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b), "{k}");
        }
    }
}
