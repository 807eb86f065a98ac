//! Running a trained network over evaluation samples.

use crate::data::{pad_to_multiple, preprocess, unpad, Normalization, StereoSample};
use crate::error::Result;
use crate::evaluation::metrics::{MetricAccumulator, MetricReport};
use crate::model::StereoNet;
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// A full-resolution prediction and the mask it is scored on.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub id: String,
    pub disparity: Tensor,
    pub ground_truth: Tensor,
    /// Valid ground truth below the maximum disparity.
    pub mask: Vec<bool>,
}

/// Standardizes `sample`, pads it to a multiple of 8, and predicts.
pub fn predict_sample(
    net: &StereoNet,
    store: &ParamStore,
    sample: &StereoSample,
    norm: &Normalization,
) -> Result<Prediction> {
    let (h, w) = (sample.height(), sample.width());
    let s = preprocess(sample, h, w, false, 0, net.config.max_disparity, norm)?;
    let padded = pad_to_multiple(&s, 8);
    let (ph, pw) = (padded.height(), padded.width());
    let left = padded.left.clone().reshape(&[1, 3, ph, pw])?;
    let right = padded.right.clone().reshape(&[1, 3, ph, pw])?;
    let pred = net.infer(store, &left, &right)?.reshape(&[ph, pw])?;
    Ok(Prediction { id: s.id, disparity: unpad(&pred, h, w), ground_truth: s.disparity, mask: s.valid })
}

/// Pooled metrics over `samples` plus the individual predictions.
pub fn evaluate_model(
    net: &StereoNet,
    store: &ParamStore,
    samples: &[StereoSample],
    norm: &Normalization,
) -> Result<(MetricReport, Vec<Prediction>)> {
    let mut acc = MetricAccumulator::default();
    let mut preds = Vec::with_capacity(samples.len());
    for s in samples {
        let p = predict_sample(net, store, s, norm)?;
        acc.add(p.disparity.data(), p.ground_truth.data(), &p.mask)?;
        preds.push(p);
    }
    Ok((acc.report()?, preds))
}
