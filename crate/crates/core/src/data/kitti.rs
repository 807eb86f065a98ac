//! Driving-benchmark disparity PNGs: 16-bit grayscale, `d = raw / 256`,
//! `raw == 0` marks a pixel without ground truth.

use std::path::Path;

use super::imageio::{read_png, write_gray16};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn decode_raw(raw: u16) -> Option<f32> {
    (raw != 0).then(|| raw as f32 / 256.0)
}

/// Returns `[H, W]` disparities (0 where invalid) and the validity mask.
pub fn read_kitti_disparity(path: &Path) -> Result<(Tensor, Vec<bool>)> {
    let img = read_png(path)?;
    if img.bit_depth != 16 || img.channels != 1 {
        return Err(Error::format(
            path,
            format!("expected a 16-bit single-channel PNG, got {} bit with {} channels", img.bit_depth, img.channels),
        ));
    }
    let mut data = Vec::with_capacity(img.samples.len());
    let mut mask = Vec::with_capacity(img.samples.len());
    for &raw in &img.samples {
        let d = decode_raw(raw);
        data.push(d.unwrap_or(0.0));
        mask.push(d.is_some());
    }
    Ok((Tensor::from_vec(&[img.height, img.width], data)?, mask))
}

/// Encodes disparities; invalid or out-of-range pixels become 0.
pub fn write_kitti_disparity(path: &Path, disparity: &Tensor, mask: &[bool]) -> Result<()> {
    let [h, w] = disparity.shape() else {
        return Err(Error::Shape(format!("expected [H, W], got {:?}", disparity.shape())));
    };
    let raw: Vec<u16> = disparity
        .data()
        .iter()
        .zip(mask)
        .map(|(d, m)| {
            let v = (d * 256.0).round();
            if *m && v >= 1.0 && v <= u16::MAX as f32 {
                v as u16
            } else {
                0
            }
        })
        .collect();
    write_gray16(path, *w, *h, &raw)
}
