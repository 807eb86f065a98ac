//! Distillation losses and the joint objective.
//!
//! Every loss returns its value together with the gradient with respect to
//! the student argument, and reduces by the mean over valid elements (or
//! valid locations, for the losses that reduce along an axis).

use num_traits::Float;
use serde::Serialize;

use crate::config::{LossKind, ObjectiveWeights, Term};
use crate::error::{Error, Result};

/// Probability floor inside the logarithms of the divergence.
pub const KLD_FLOOR: f64 = 1e-12;
/// Denominator guard of the cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad<F> {
    pub value: F,
    /// Gradient w.r.t. the student input; zero at masked elements.
    pub grad: Vec<F>,
}

/// An array viewed as `(outer, len, inner)` around the axis a loss reduces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AxisLayout {
    pub outer: usize,
    pub len: usize,
    pub inner: usize,
}

impl AxisLayout {
    pub fn new(shape: &[usize], axis: usize) -> Self {
        let (outer, len, inner) = crate::tensor::split_axis(shape, axis);
        AxisLayout { outer, len, inner }
    }

    /// Every element is its own vector of length `n`, one location.
    pub fn flat(n: usize) -> Self {
        AxisLayout { outer: 1, len: n, inner: 1 }
    }

    pub fn numel(&self) -> usize {
        self.outer * self.len * self.inner
    }

    pub fn locations(&self) -> usize {
        self.outer * self.inner
    }

    fn index(&self, loc: usize, k: usize) -> usize {
        let (o, i) = (loc / self.inner, loc % self.inner);
        (o * self.len + k) * self.inner + i
    }

    /// A location is valid when every element along the axis is.
    pub fn location_mask(&self, element_mask: &[bool]) -> Vec<bool> {
        (0..self.locations()).map(|loc| (0..self.len).all(|k| element_mask[self.index(loc, k)])).collect()
    }
}

fn check_pair<F>(a: &[F], b: &[F], mask: Option<&[bool]>, mask_len: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("loss inputs differ in size: {} vs {}", a.len(), b.len())));
    }
    if let Some(m) = mask {
        if m.len() != mask_len {
            return Err(Error::Shape(format!("mask has {} entries, expected {mask_len}", m.len())));
        }
    }
    Ok(())
}

fn count_valid(mask: Option<&[bool]>, n: usize) -> Result<usize> {
    let c = mask.map_or(n, |m| m.iter().filter(|v| **v).count());
    if c == 0 {
        return Err(Error::InvalidInput("loss mask selects no elements".into()));
    }
    Ok(c)
}

fn elementwise<F: Float>(a: &[F], b: &[F], mask: Option<&[bool]>, f: impl Fn(F) -> (F, F)) -> Result<LossGrad<F>> {
    check_pair(a, b, mask, a.len())?;
    let n = count_valid(mask, a.len())?;
    let inv = F::one() / F::from(n).unwrap();
    let mut sum = F::zero();
    let mut grad = vec![F::zero(); a.len()];
    for i in 0..a.len() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let (v, dv) = f(a[i] - b[i]);
        sum = sum + v;
        grad[i] = dv * inv;
    }
    Ok(LossGrad { value: sum * inv, grad })
}

/// Huber-style loss: `0.5·x²/τ` for `|x| < τ`, `|x| − 0.5·τ` otherwise.
pub fn smooth_l1<F: Float>(a: &[F], b: &[F], mask: Option<&[bool]>, tau: F) -> Result<LossGrad<F>> {
    if !(tau > F::zero()) {
        return Err(Error::InvalidInput("smooth L1 threshold must be positive".into()));
    }
    let half = F::from(0.5).unwrap();
    elementwise(a, b, mask, |x| {
        if x.abs() < tau {
            (half * x * x / tau, x / tau)
        } else {
            (x.abs() - half * tau, x.signum())
        }
    })
}

/// `log(|x| + ε)` with `ε ≥ 1`, so the loss stays non-negative.
pub fn log_l1<F: Float>(a: &[F], b: &[F], mask: Option<&[bool]>, eps: F) -> Result<LossGrad<F>> {
    if !(eps >= F::one()) {
        return Err(Error::InvalidInput("log L1 epsilon must be at least 1".into()));
    }
    elementwise(a, b, mask, |x| {
        let s = x.abs() + eps;
        let d = if x == F::zero() { F::zero() } else { x.signum() / s };
        (s.ln(), d)
    })
}

/// `1 − cos(a, b)` with vectors taken along the layout axis, averaged over
/// valid locations. `mask` is per location; a pair of zero vectors counts as
/// identical.
pub fn cosine<F: Float>(a: &[F], b: &[F], layout: AxisLayout, mask: Option<&[bool]>) -> Result<LossGrad<F>> {
    if a.len() != layout.numel() {
        return Err(Error::Shape(format!("{} elements for layout {layout:?}", a.len())));
    }
    check_pair(a, b, mask, layout.locations())?;
    let n = count_valid(mask, layout.locations())?;
    let inv = F::one() / F::from(n).unwrap();
    let eps = F::from(COSINE_EPS).unwrap();
    let mut sum = F::zero();
    let mut grad = vec![F::zero(); a.len()];
    for loc in 0..layout.locations() {
        if mask.is_some_and(|m| !m[loc]) {
            continue;
        }
        let (mut dot, mut na, mut nb) = (F::zero(), F::zero(), F::zero());
        for k in 0..layout.len {
            let i = layout.index(loc, k);
            dot = dot + a[i] * b[i];
            na = na + a[i] * a[i];
            nb = nb + b[i] * b[i];
        }
        let denom = (na * nb).sqrt();
        if na == F::zero() && nb == F::zero() {
            // Two zero vectors (e.g. the out-of-frame region of a cost
            // volume) are identical.
            continue;
        } else if denom > eps {
            let cos = dot / denom;
            sum = sum + (F::one() - cos);
            // d cos / d a = b / (|a||b|) − cos · a / |a|²
            for k in 0..layout.len {
                let i = layout.index(loc, k);
                grad[i] = -(b[i] / denom - cos * a[i] / na) * inv;
            }
        } else {
            sum = sum + (F::one() - dot / eps);
            for k in 0..layout.len {
                let i = layout.index(loc, k);
                grad[i] = -(b[i] / eps) * inv;
            }
        }
    }
    Ok(LossGrad { value: sum * inv, grad })
}

/// `Σ_d p_T (log p_T − log p_S)` along the layout axis, averaged over valid
/// locations. Both logarithms are floored at [`KLD_FLOOR`]; `0 · log 0 = 0`.
pub fn kld<F: Float>(
    p_student: &[F],
    p_teacher: &[F],
    layout: AxisLayout,
    mask: Option<&[bool]>,
) -> Result<LossGrad<F>> {
    if p_student.len() != layout.numel() {
        return Err(Error::Shape(format!("{} elements for layout {layout:?}", p_student.len())));
    }
    check_pair(p_student, p_teacher, mask, layout.locations())?;
    let n = count_valid(mask, layout.locations())?;
    let tol = F::from(1e-3).unwrap();
    let floor = F::from(KLD_FLOOR).unwrap();
    let inv = F::one() / F::from(n).unwrap();
    let mut sum = F::zero();
    let mut grad = vec![F::zero(); p_student.len()];
    for loc in 0..layout.locations() {
        if mask.is_some_and(|m| !m[loc]) {
            continue;
        }
        let (mut ss, mut st) = (F::zero(), F::zero());
        for k in 0..layout.len {
            let i = layout.index(loc, k);
            ss = ss + p_student[i];
            st = st + p_teacher[i];
        }
        if (ss - F::one()).abs() > tol || (st - F::one()).abs() > tol {
            return Err(Error::InvalidInput(format!(
                "distributions must sum to 1 along the disparity axis (got {:.4} and {:.4})",
                ss.to_f64().unwrap_or(f64::NAN),
                st.to_f64().unwrap_or(f64::NAN)
            )));
        }
        for k in 0..layout.len {
            let i = layout.index(loc, k);
            let (ps, pt) = (p_student[i], p_teacher[i]);
            if pt <= F::zero() {
                continue;
            }
            sum = sum + pt * (pt.max(floor).ln() - ps.max(floor).ln());
            if ps > floor {
                grad[i] = -(pt / ps) * inv;
            }
        }
    }
    Ok(LossGrad { value: sum * inv, grad })
}

/// Evaluates `kind` in single precision (accumulated in double).
///
/// For [`LossKind::Kld`] both arguments must already be probabilities along
/// the layout axis. `element_mask` marks usable elements.
pub fn evaluate(
    kind: LossKind,
    student: &[f32],
    teacher: &[f32],
    layout: AxisLayout,
    element_mask: Option<&[bool]>,
) -> Result<LossGrad<f32>> {
    let a: Vec<f64> = student.iter().map(|v| *v as f64).collect();
    let b: Vec<f64> = teacher.iter().map(|v| *v as f64).collect();
    let out = match kind {
        LossKind::SmoothL1 => smooth_l1(&a, &b, element_mask, 1.0)?,
        LossKind::LogL1 => log_l1(&a, &b, element_mask, 1.0)?,
        LossKind::Cosine | LossKind::Kld => {
            let loc_mask = element_mask.map(|m| layout.location_mask(m));
            if kind == LossKind::Cosine {
                cosine(&a, &b, layout, loc_mask.as_deref())?
            } else {
                kld(&a, &b, layout, loc_mask.as_deref())?
            }
        }
    };
    Ok(LossGrad { value: out.value as f32, grad: out.grad.into_iter().map(|v| v as f32).collect() })
}

/// Per-term loss values; `None` marks a disabled term.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TermLosses {
    pub fe: Option<f64>,
    pub cv: Option<f64>,
    pub ca: Option<f64>,
    pub spw: Option<f64>,
    pub stpw: Option<f64>,
}

impl TermLosses {
    pub fn get(&self, t: Term) -> Option<f64> {
        match t {
            Term::Fe => self.fe,
            Term::Cv => self.cv,
            Term::Ca => self.ca,
            Term::Spw => self.spw,
            Term::Stpw => self.stpw,
        }
    }

    pub fn set(&mut self, t: Term, v: Option<f64>) {
        match t {
            Term::Fe => self.fe = v,
            Term::Cv => self.cv = v,
            Term::Ca => self.ca = v,
            Term::Spw => self.spw = v,
            Term::Stpw => self.stpw = v,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub l_fe: f64,
    pub l_cv: f64,
    pub l_ca: f64,
    pub l_spw: f64,
    pub l_stpw: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn get(&self, t: Term) -> f64 {
        match t {
            Term::Fe => self.l_fe,
            Term::Cv => self.l_cv,
            Term::Ca => self.l_ca,
            Term::Spw => self.l_spw,
            Term::Stpw => self.l_stpw,
        }
    }
}

/// The joint objective `λ ℓ_fe + λ ℓ_cv + λ_ca ℓ_ca + λ_spw ℓ_spw + λ_stpw ℓ_stpw`.
pub fn combine(losses: &TermLosses, w: &ObjectiveWeights) -> Result<LossBreakdown> {
    let mut b = LossBreakdown::default();
    for t in Term::ALL {
        let v = losses.get(t).unwrap_or(0.0);
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!("loss term {t} is not finite")));
        }
        match t {
            Term::Fe => b.l_fe = v,
            Term::Cv => b.l_cv = v,
            Term::Ca => b.l_ca = v,
            Term::Spw => b.l_spw = v,
            Term::Stpw => b.l_stpw = v,
        }
        b.total += w.lambda(t) as f64 * v;
    }
    Ok(b)
}
