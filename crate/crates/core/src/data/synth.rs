//! Synthetic rectified stereo pairs with exact integer ground truth.
//!
//! A scene is a textured background plane plus fronto-parallel rectangles,
//! each at an integer disparity. Both views are rendered from the scene, so
//! a left pixel and its match in the right view sample the same texel and
//! are bit-identical. Closer surfaces (larger disparity) occlude farther
//! ones; left pixels whose match is hidden or out of frame are invalid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::StereoSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub height: usize,
    pub width: usize,
    pub max_disparity: usize,
    pub n_objects: usize,
    /// Background disparity; drawn from `1..=max(1, max_disparity/8)` when unset.
    pub background_disparity: Option<usize>,
}

struct Layer {
    disparity: usize,
    /// Left-view rectangle `[y0, y1) × [x0, x1)`; the background covers all.
    rect: Option<[usize; 4]>,
    /// `[3, H, W + max_disparity]` texture in layer coordinates.
    texture: Vec<f32>,
}

fn value_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, tint: [f32; 3]) -> Vec<f32> {
    let mut out = vec![0.0f32; 3 * h * w];
    let octaves = [(16usize, 0.5f32), (6, 0.3), (2, 0.2)];
    for c in 0..3 {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for &(cell, amp) in &octaves {
            let gh = h / cell + 2;
            let gw = w / cell + 2;
            let grid: Vec<f32> = (0..gh * gw).map(|_| rng.random::<f32>()).collect();
            for y in 0..h {
                let fy = y as f32 / cell as f32;
                let (y0, ty) = (fy.floor() as usize, fy.fract());
                for x in 0..w {
                    let fx = x as f32 / cell as f32;
                    let (x0, tx) = (fx.floor() as usize, fx.fract());
                    let g = |yy: usize, xx: usize| grid[yy * gw + xx];
                    let top = g(y0, x0) * (1.0 - tx) + g(y0, x0 + 1) * tx;
                    let bot = g(y0 + 1, x0) * (1.0 - tx) + g(y0 + 1, x0 + 1) * tx;
                    plane[y * w + x] += amp * (top * (1.0 - ty) + bot * ty);
                }
            }
        }
        for v in plane.iter_mut() {
            let t = 0.15 + 0.7 * (0.6 * *v + 0.4 * tint[c]);
            *v = (t.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }
    out
}

/// Generates one sample from `seed`.
pub fn synth_sample(seed: u64, params: &SynthParams) -> Result<StereoSample> {
    let SynthParams { height: h, width: w, max_disparity: dmax, n_objects, .. } = *params;
    if h < 4 || w < 8 || dmax < 2 {
        return Err(Error::InvalidInput(format!("degenerate synthetic size {h}x{w} with max disparity {dmax}")));
    }
    if dmax >= w / 2 {
        return Err(Error::InvalidInput(format!("max disparity {dmax} must be below width/2 = {}", w / 2)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_bg = match params.background_disparity {
        Some(d) if d >= 1 && d < dmax => d,
        Some(d) => {
            return Err(Error::InvalidInput(format!("background disparity {d} outside 1..{dmax}")));
        }
        None => rng.random_range(1..=(dmax / 8).max(1)),
    };
    let tw = w + dmax;
    let tint = [rng.random(), rng.random(), rng.random()];
    let mut layers = vec![Layer { disparity: d_bg, rect: None, texture: value_noise(&mut rng, h, tw, tint) }];
    for _ in 0..n_objects {
        let oh = rng.random_range((h / 8).max(2)..=(h / 2).max(2));
        let ow = rng.random_range((w / 8).max(2)..=(w / 3).max(2));
        let y0 = rng.random_range(0..=h - oh);
        let x0 = rng.random_range(0..=w - ow);
        let disparity = if d_bg + 1 < dmax { rng.random_range(d_bg + 1..dmax) } else { d_bg };
        let tint = [rng.random(), rng.random(), rng.random()];
        layers.push(Layer {
            disparity,
            rect: Some([y0, y0 + oh, x0, x0 + ow]),
            texture: value_noise(&mut rng, h, tw, tint),
        });
    }
    // nearest first; ties resolved by creation order, identically in both views
    let mut order: Vec<usize> = (0..layers.len()).collect();
    order.sort_by(|&a, &b| layers[b].disparity.cmp(&layers[a].disparity).then(b.cmp(&a)));

    // `u` is the left-view column of the texel.
    let covers = |l: &Layer, y: usize, u: usize| match l.rect {
        None => true,
        Some([y0, y1, x0, x1]) => y >= y0 && y < y1 && u >= x0 && u < x1,
    };
    let top_left = |y: usize, x: usize| order.iter().copied().find(|&i| covers(&layers[i], y, x)).unwrap();
    let top_right =
        |y: usize, xr: usize| order.iter().copied().find(|&i| covers(&layers[i], y, xr + layers[i].disparity)).unwrap();

    let plane = h * w;
    let mut left = vec![0.0f32; 3 * plane];
    let mut right = vec![0.0f32; 3 * plane];
    let mut disparity = vec![0.0f32; plane];
    let mut valid = vec![false; plane];
    for y in 0..h {
        for x in 0..w {
            let li = top_left(y, x);
            let ri = top_right(y, x);
            for c in 0..3 {
                left[c * plane + y * w + x] = layers[li].texture[(c * h + y) * tw + x];
                right[c * plane + y * w + x] = layers[ri].texture[(c * h + y) * tw + x + layers[ri].disparity];
            }
            let d = layers[li].disparity;
            disparity[y * w + x] = d as f32;
            valid[y * w + x] = x >= d && top_right(y, x - d) == li;
        }
    }
    Ok(StereoSample {
        id: format!("{seed:08}"),
        left: Tensor::from_vec(&[3, h, w], left)?,
        right: Tensor::from_vec(&[3, h, w], right)?,
        disparity: Tensor::from_vec(&[h, w], disparity)?,
        valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize) -> SynthParams {
        SynthParams { height: 32, width: 64, max_disparity: 16, n_objects: n, background_disparity: None }
    }

    #[test]
    fn constant_plane() {
        let p = SynthParams { background_disparity: Some(4), ..params(0) };
        let s = synth_sample(3, &p).unwrap();
        assert!(s.disparity.data().iter().all(|d| *d == 4.0));
        // only the first four columns lack a match
        assert_eq!(s.valid.iter().filter(|v| !**v).count(), 4 * 32);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(synth_sample(0, &SynthParams { max_disparity: 32, ..params(1) }).is_err());
        assert!(synth_sample(0, &SynthParams { height: 0, ..params(1) }).is_err());
    }

    #[test]
    fn objects_are_nearer_than_background() {
        let s = synth_sample(11, &params(4)).unwrap();
        let min = s.disparity.data().iter().cloned().fold(f32::INFINITY, f32::min);
        let max = s.disparity.data().iter().cloned().fold(0.0, f32::max);
        assert!(max > min);
        assert!(max < 16.0 && min >= 1.0);
    }
}
