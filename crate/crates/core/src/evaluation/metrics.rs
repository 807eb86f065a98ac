//! Disparity error metrics over valid pixels.

use serde::Serialize;

use crate::error::{Error, Result};

fn check(pred: &[f32], gt: &[f32], mask: &[bool]) -> Result<()> {
    if pred.len() != gt.len() || gt.len() != mask.len() {
        return Err(Error::Shape(format!(
            "prediction ({}), ground truth ({}) and mask ({}) lengths differ",
            pred.len(),
            gt.len(),
            mask.len()
        )));
    }
    Ok(())
}

fn valid_errors<'a>(pred: &'a [f32], gt: &'a [f32], mask: &'a [bool]) -> impl Iterator<Item = (f64, f64)> + 'a {
    pred.iter()
        .zip(gt)
        .zip(mask)
        .filter(|((_, g), m)| **m && g.is_finite())
        .map(|((p, g), _)| (((*p as f64) - (*g as f64)).abs(), *g as f64))
}

fn percent_where(pred: &[f32], gt: &[f32], mask: &[bool], f: impl Fn(f64, f64) -> bool) -> Result<f32> {
    check(pred, gt, mask)?;
    let (mut n, mut hit) = (0usize, 0usize);
    for (e, g) in valid_errors(pred, gt, mask) {
        n += 1;
        hit += usize::from(f(e, g));
    }
    if n == 0 {
        return Err(Error::InvalidInput("mask selects no valid pixels".into()));
    }
    Ok((100.0 * hit as f64 / n as f64) as f32)
}

/// Mean absolute disparity error.
pub fn epe(pred: &[f32], gt: &[f32], mask: &[bool]) -> Result<f32> {
    check(pred, gt, mask)?;
    let (mut n, mut sum) = (0usize, 0.0f64);
    for (e, _) in valid_errors(pred, gt, mask) {
        n += 1;
        sum += e;
    }
    if n == 0 {
        return Err(Error::InvalidInput("mask selects no valid pixels".into()));
    }
    Ok((sum / n as f64) as f32)
}

/// Percentage of pixels whose error exceeds both 3 px and 5% of the truth.
pub fn d1(pred: &[f32], gt: &[f32], mask: &[bool]) -> Result<f32> {
    percent_where(pred, gt, mask, |e, g| e > 3.0 && e > 0.05 * g)
}

/// Percentage of pixels whose error exceeds `k` px.
pub fn kpx(pred: &[f32], gt: &[f32], mask: &[bool], k: u32) -> Result<f32> {
    if !(1..=4).contains(&k) {
        return Err(Error::InvalidInput(format!("k must be 1..=4, got {k}")));
    }
    percent_where(pred, gt, mask, |e, _| e > k as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub epe_px: f32,
    pub d1_percent: f32,
    /// Errors above 1, 2, 3 and 4 px.
    pub kpx_percent: [f32; 4],
    pub n_valid: usize,
}

/// Pools pixels across many images.
#[derive(Clone, Debug, Default)]
pub struct MetricAccumulator {
    n: usize,
    abs_sum: f64,
    d1: usize,
    kpx: [usize; 4],
}

impl MetricAccumulator {
    pub fn add(&mut self, pred: &[f32], gt: &[f32], mask: &[bool]) -> Result<()> {
        check(pred, gt, mask)?;
        for (e, g) in valid_errors(pred, gt, mask) {
            self.n += 1;
            self.abs_sum += e;
            self.d1 += usize::from(e > 3.0 && e > 0.05 * g);
            for k in 0..4 {
                self.kpx[k] += usize::from(e > (k + 1) as f64);
            }
        }
        Ok(())
    }

    pub fn report(&self) -> Result<MetricReport> {
        if self.n == 0 {
            return Err(Error::InvalidInput("no valid pixels were evaluated".into()));
        }
        let pct = |c: usize| (100.0 * c as f64 / self.n as f64) as f32;
        Ok(MetricReport {
            epe_px: (self.abs_sum / self.n as f64) as f32,
            d1_percent: pct(self.d1),
            kpx_percent: self.kpx.map(pct),
            n_valid: self.n,
        })
    }
}

/// All metrics of a single map.
pub fn evaluate(pred: &[f32], gt: &[f32], mask: &[bool]) -> Result<MetricReport> {
    let mut acc = MetricAccumulator::default();
    acc.add(pred, gt, mask)?;
    acc.report()
}
