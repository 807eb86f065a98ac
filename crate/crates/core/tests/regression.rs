use proptest::collection::vec;
use proptest::prelude::*;

use stereokd::nn::functional::{expectation_axis, expectation_axis_backward, softmax_axis, softmax_axis_backward};
use stereokd::regression::{probabilities, soft_argmin};
use stereokd::Tensor;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn output_stays_in_disparity_range(d in 2usize..40, scores in vec(-30.0f32..30.0, 40 * 6)) {
        let s = Tensor::from_vec(&[d, 2, 3], scores[..d * 6].to_vec()).unwrap();
        let out = soft_argmin(&probabilities(&s).unwrap()).unwrap();
        for v in out.data() {
            prop_assert!(v.is_finite() && *v >= 0.0 && *v <= (d - 1) as f32);
        }
    }

    #[test]
    fn matches_an_explicit_sum(w in vec(0.0f32..1.0, 4 * 3 * 3)) {
        let mut p = w.clone();
        for x in 0..9 {
            let s: f32 = (0..4).map(|d| w[d * 9 + x]).sum::<f32>().max(1e-6);
            (0..4).for_each(|d| p[d * 9 + x] /= s);
        }
        let out = soft_argmin(&Tensor::from_vec(&[4, 3, 3], p.clone()).unwrap()).unwrap();
        for x in 0..9 {
            let mut want = 0.0f32;
            for d in 0..4 {
                want += d as f32 * p[d * 9 + x];
            }
            prop_assert!((out.data()[x] - want).abs() <= 1e-6);
        }
    }

    #[test]
    fn shifting_mass_shifts_the_estimate(w in vec(0.01f32..1.0, 5), k in 1usize..8, lead in 0usize..4) {
        // Support [lead, lead + 5) inside D = 16, shifted by k without wrapping.
        let d = 16;
        let total: f32 = w.iter().sum();
        let mut p = vec![0.0f32; d];
        let mut q = vec![0.0f32; d];
        for (i, v) in w.iter().enumerate() {
            p[lead + i] = v / total;
            q[lead + i + k] = v / total;
        }
        let a = soft_argmin(&Tensor::from_vec(&[d, 1, 1], p).unwrap()).unwrap().item();
        let b = soft_argmin(&Tensor::from_vec(&[d, 1, 1], q).unwrap()).unwrap().item();
        prop_assert!((b - a - k as f32).abs() < 1e-4);
    }

    #[test]
    fn logit_gradient_matches_central_differences(logits in vec(-3.0f64..3.0, 6 * 2)) {
        // [D=6, 2 locations]; the objective is Σ_loc c_loc · soft_argmin(loc).
        let coef = [0.7, -1.3];
        let f = |x: &[f64]| -> f64 {
            let e = expectation_axis(&softmax_axis(x, 1, 6, 2), 1, 6, 2);
            e.iter().zip(coef).map(|(v, c)| v * c).sum()
        };
        let p = softmax_axis(&logits, 1, 6, 2);
        let dp = expectation_axis_backward(&coef, 1, 6, 2);
        let analytic = softmax_axis_backward(&p, &dp, 1, 6, 2);
        let h = 1e-5;
        for i in 0..logits.len() {
            let mut a = logits.clone();
            let mut b = logits.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-3);
            prop_assert!(rel <= 1e-4, "element {}: fd {} analytic {}", i, fd, analytic[i]);
        }
    }
}

#[test]
fn uniform_over_192_sits_in_the_middle() {
    let p = Tensor::full(&[192, 1, 1], 1.0 / 192.0);
    assert!((soft_argmin(&p).unwrap().item() - 95.5).abs() < 1e-4);
}
