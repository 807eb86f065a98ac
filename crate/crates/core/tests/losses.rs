use proptest::collection::vec;
use proptest::prelude::*;

use stereokd::losses::{cosine, kld, log_l1, smooth_l1, AxisLayout, LossGrad};

fn normalize(v: &mut [f64], len: usize) {
    for col in v.chunks_mut(len) {
        let s: f64 = col.iter().sum();
        col.iter_mut().for_each(|x| *x /= s);
    }
}

/// Rows of `len` positive weights, normalized.
fn distributions(locs: usize, len: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(0.01f64..1.0, locs * len).prop_map(move |mut v| {
        normalize(&mut v, len);
        v
    })
}

fn pair(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (vec(-4.0f64..4.0, n), vec(-4.0f64..4.0, n))
}

fn max_rel_error(analytic: &[f64], f: impl Fn(&[f64]) -> f64, x: &[f64]) -> f64 {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut p = x.to_vec();
        let mut m = x.to_vec();
        p[i] += h;
        m[i] -= h;
        let fd = (f(&p) - f(&m)) / (2.0 * h);
        worst = worst.max((fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1.0));
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_loss_is_non_negative((a, b) in pair(12), p in distributions(3, 4), q in distributions(3, 4)) {
        prop_assert!(smooth_l1(&a, &b, None, 1.0).unwrap().value >= 0.0);
        prop_assert!(log_l1(&a, &b, None, 1.0).unwrap().value >= 0.0);
        prop_assert!(cosine(&a, &b, AxisLayout::new(&[3, 4], 1), None).unwrap().value >= -1e-12);
        // Gibbs' inequality.
        prop_assert!(kld(&p, &q, AxisLayout::new(&[3, 4], 1), None).unwrap().value >= -1e-12);
    }

    #[test]
    fn smooth_l1_and_cosine_are_symmetric((a, b) in pair(12)) {
        let l = AxisLayout::new(&[2, 6], 1);
        prop_assert_eq!(smooth_l1(&a, &b, None, 1.0).unwrap().value, smooth_l1(&b, &a, None, 1.0).unwrap().value);
        let (ab, ba) = (cosine(&a, &b, l, None).unwrap().value, cosine(&b, &a, l, None).unwrap().value);
        prop_assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn analytic_gradients_match_central_differences(
        (a, b) in pair(8),
        p in distributions(2, 4),
        q in distributions(2, 4),
    ) {
        let l = AxisLayout::new(&[2, 4], 1);
        let checks: [(LossGrad<f64>, Box<dyn Fn(&[f64]) -> f64>); 3] = [
            (smooth_l1(&a, &b, None, 1.0).unwrap(), Box::new(|x| smooth_l1(x, &b, None, 1.0).unwrap().value)),
            (log_l1(&a, &b, None, 1.0).unwrap(), Box::new(|x| log_l1(x, &b, None, 1.0).unwrap().value)),
            (cosine(&a, &b, l, None).unwrap(), Box::new(|x| cosine(x, &b, l, None).unwrap().value)),
        ];
        for (g, f) in &checks {
            // Skip draws sitting on a kink of |x|.
            if a.iter().zip(&b).any(|(x, y)| (x - y).abs() < 1e-3 || ((x - y).abs() - 1.0).abs() < 1e-3) {
                continue;
            }
            prop_assert!(max_rel_error(&g.grad, f, &a) <= 1e-4);
        }
        let g = kld(&p, &q, l, None).unwrap();
        prop_assert!(max_rel_error(&g.grad, |x| kld(x, &q, l, None).unwrap().value, &p) <= 1e-4);
    }

    #[test]
    fn masked_out_elements_never_matter(
        (a, b) in pair(6),
        (junk_a, junk_b) in pair(4),
        p in distributions(2, 3),
        q in distributions(2, 3),
        junk_p in vec(-10.0f64..10.0, 3),
    ) {
        let (mut a2, mut b2) = (a.clone(), b.clone());
        a2.extend(&junk_a);
        b2.extend(&junk_b);
        let mask: Vec<bool> = (0..10).map(|i| i < 6).collect();
        prop_assert_eq!(smooth_l1(&a, &b, None, 1.0).unwrap().value, smooth_l1(&a2, &b2, Some(&mask), 1.0).unwrap().value);
        prop_assert_eq!(log_l1(&a, &b, None, 1.0).unwrap().value, log_l1(&a2, &b2, Some(&mask), 1.0).unwrap().value);

        // Vectors of length 2 at 3 (then 5) locations, axis 0.
        let cos = cosine(&a, &b, AxisLayout::new(&[2, 3], 0), None).unwrap().value;
        let interleave = |x: &[f64], j: &[f64]| [&x[..3], &j[..2], &x[3..], &j[2..]].concat();
        let loc_mask = [true, true, true, false, false];
        let cos2 = cosine(&interleave(&a, &junk_a), &interleave(&b, &junk_b), AxisLayout::new(&[2, 5], 0), Some(&loc_mask))
            .unwrap()
            .value;
        prop_assert!((cos - cos2).abs() < 1e-12);

        let (mut p2, mut q2) = (p.clone(), q.clone());
        p2.extend(&junk_p);
        q2.extend(&junk_p);
        let k = kld(&p, &q, AxisLayout::new(&[2, 3], 1), None).unwrap().value;
        let k2 = kld(&p2, &q2, AxisLayout::new(&[3, 3], 1), Some(&[true, true, false])).unwrap().value;
        prop_assert!((k - k2).abs() < 1e-12);
    }
}

#[test]
fn kld_is_not_symmetric() {
    let p = [0.9, 0.1];
    let q = [0.5, 0.5];
    let l = AxisLayout::flat(2);
    let pq = kld(&p, &q, l, None).unwrap().value;
    let qp = kld(&q, &p, l, None).unwrap().value;
    // KL(q||p) = 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1); KL(p||q) = 0.9 ln 1.8 + 0.1 ln 0.2.
    assert!((pq - (0.5 * (0.5f64 / 0.9).ln() + 0.5 * 5f64.ln())).abs() < 1e-12);
    assert!((qp - (0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln())).abs() < 1e-12);
    assert!((pq - qp).abs() > 0.1);
}

#[test]
fn log_l1_keeps_its_floor_at_zero_for_equal_inputs() {
    let a = [0.5, -2.0, 3.0];
    let out = log_l1(&a, &a, None, 1.0).unwrap();
    assert_eq!(out.value, 0.0);
    assert!(out.grad.iter().all(|g| *g == 0.0));
}
