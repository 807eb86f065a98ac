//! Stereo samples: synthetic generation, file formats, datasets and
//! preprocessing.

pub mod imageio;
pub mod kitti;
pub mod pfm;
pub mod synth;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use kitti::read_kitti_disparity;
pub use pfm::{read_pfm, write_pfm, Pfm};
pub use synth::{synth_sample, SynthParams};

#[derive(Clone, Debug, PartialEq)]
pub struct StereoSample {
    pub id: String,
    /// `[3, H, W]`.
    pub left: Tensor,
    pub right: Tensor,
    /// `[H, W]` in pixels.
    pub disparity: Tensor,
    pub valid: Vec<bool>,
}

impl StereoSample {
    pub fn height(&self) -> usize {
        self.disparity.dim(0)
    }

    pub fn width(&self) -> usize {
        self.disparity.dim(1)
    }

    fn check(&self) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        if self.left.shape() != [3, h, w] || self.right.shape() != [3, h, w] || self.valid.len() != h * w {
            return Err(Error::Shape(format!(
                "sample {}: inconsistent shapes {:?}, {:?}, {:?}",
                self.id,
                self.left.shape(),
                self.right.shape(),
                self.disparity.shape()
            )));
        }
        Ok(())
    }
}

/// Per-channel standardization constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

pub const IMAGENET: Normalization = Normalization { mean: [0.485, 0.456, 0.406], std: [0.229, 0.224, 0.225] };

impl Default for Normalization {
    fn default() -> Self {
        IMAGENET
    }
}

fn crop_image(t: &Tensor, y0: usize, x0: usize, h: usize, w: usize) -> Tensor {
    let (c, sh, sw) = (t.dim(0), t.dim(1), t.dim(2));
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in y0..y0 + h {
            let row = (ch * sh + y) * sw;
            out.extend_from_slice(&t.data()[row + x0..row + x0 + w]);
        }
    }
    Tensor::from_vec(&[c, h, w], out).unwrap()
}

/// Crops (random offset in training, top-left otherwise), standardizes both
/// views, and drops pixels at or beyond `max_disparity` from the mask.
pub fn preprocess(
    sample: &StereoSample,
    crop_h: usize,
    crop_w: usize,
    train: bool,
    seed: u64,
    max_disparity: usize,
    norm: &Normalization,
) -> Result<StereoSample> {
    sample.check()?;
    let (h, w) = (sample.height(), sample.width());
    if h < crop_h || w < crop_w {
        return Err(Error::InvalidInput(format!(
            "sample {} is {h}x{w}, smaller than the {crop_h}x{crop_w} crop",
            sample.id
        )));
    }
    let (y0, x0) = if train {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (rng.random_range(0..=h - crop_h), rng.random_range(0..=w - crop_w))
    } else {
        (0, 0)
    };
    let mut left = crop_image(&sample.left, y0, x0, crop_h, crop_w);
    let mut right = crop_image(&sample.right, y0, x0, crop_h, crop_w);
    for img in [&mut left, &mut right] {
        for (c, plane) in img.data_mut().chunks_mut(crop_h * crop_w).enumerate() {
            plane.iter_mut().for_each(|v| *v = (*v - norm.mean[c]) / norm.std[c]);
        }
    }
    let disp3 = sample.disparity.clone().reshape(&[1, h, w])?;
    let disparity = crop_image(&disp3, y0, x0, crop_h, crop_w).reshape(&[crop_h, crop_w])?;
    let mut valid = Vec::with_capacity(crop_h * crop_w);
    for y in y0..y0 + crop_h {
        for x in x0..x0 + crop_w {
            let d = sample.disparity.data()[y * w + x];
            valid.push(sample.valid[y * w + x] && d.is_finite() && d < max_disparity as f32);
        }
    }
    Ok(StereoSample { id: sample.id.clone(), left, right, disparity, valid })
}

/// Pads height and width up to multiples of `m` with zeros (invalid GT).
pub fn pad_to_multiple(sample: &StereoSample, m: usize) -> StereoSample {
    let (h, w) = (sample.height(), sample.width());
    let (ph, pw) = (h.next_multiple_of(m), w.next_multiple_of(m));
    if (ph, pw) == (h, w) {
        return sample.clone();
    }
    let pad = |t: &Tensor, c: usize| {
        let mut out = vec![0.0f32; c * ph * pw];
        for ch in 0..c {
            for y in 0..h {
                out[(ch * ph + y) * pw..][..w].copy_from_slice(&t.data()[(ch * h + y) * w..][..w]);
            }
        }
        out
    };
    let mut valid = vec![false; ph * pw];
    for y in 0..h {
        valid[y * pw..y * pw + w].copy_from_slice(&sample.valid[y * w..(y + 1) * w]);
    }
    StereoSample {
        id: sample.id.clone(),
        left: Tensor::from_vec(&[3, ph, pw], pad(&sample.left, 3)).unwrap(),
        right: Tensor::from_vec(&[3, ph, pw], pad(&sample.right, 3)).unwrap(),
        disparity: Tensor::from_vec(&[ph, pw], pad(&sample.disparity, 1)).unwrap(),
        valid,
    }
}

/// Removes padding from an `[H', W']` prediction.
pub fn unpad(pred: &Tensor, h: usize, w: usize) -> Tensor {
    let pw = pred.dim(1);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        out.extend_from_slice(&pred.data()[y * pw..y * pw + w]);
    }
    Tensor::from_vec(&[h, w], out).unwrap()
}

/// A stacked mini-batch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `[B, 3, H, W]`.
    pub left: Tensor,
    pub right: Tensor,
    /// `[B, H, W]`.
    pub disparity: Tensor,
    pub valid: Vec<bool>,
}

impl Batch {
    pub fn from_samples(samples: &[StereoSample]) -> Result<Batch> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let cat =
            |f: fn(&StereoSample) -> &Tensor| Tensor::stack(&samples.iter().map(|s| f(s).clone()).collect::<Vec<_>>());
        Ok(Batch {
            ids: samples.iter().map(|s| s.id.clone()).collect(),
            left: cat(|s| &s.left)?,
            right: cat(|s| &s.right)?,
            disparity: cat(|s| &s.disparity)?,
            valid: samples.iter().flat_map(|s| s.valid.iter().copied()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisparityFormat {
    /// Single-channel PFM; non-finite values have no ground truth.
    #[default]
    Pfm,
    /// 16-bit PNG with `d = raw / 256` and `raw = 0` invalid.
    KittiPng,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub split: String,
    /// Paths relative to the manifest's directory.
    pub left: PathBuf,
    pub right: PathBuf,
    pub disparity: PathBuf,
    #[serde(default)]
    pub disparity_format: DisparityFormat,
    /// Optional 8-bit mask, nonzero where the ground truth is usable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorInfo {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub max_disparity: usize,
    pub n_objects: usize,
    pub train_count: usize,
    pub test_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorInfo>,
    pub samples: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Seed of sample `index` of a generated dataset.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

/// Writes `train_count + test_count` synthetic samples and their manifest.
pub fn generate_dataset(out: &Path, info: &GeneratorInfo) -> Result<Manifest> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let params = SynthParams {
        height: info.height,
        width: info.width,
        max_disparity: info.max_disparity,
        n_objects: info.n_objects,
        background_disparity: None,
    };
    let mut samples = Vec::new();
    for i in 0..info.train_count + info.test_count {
        let id = format!("{i:04}");
        let seed = sample_seed(info.seed, i);
        let s = synth_sample(seed, &params)?;
        let entry = ManifestEntry {
            id: id.clone(),
            split: if i < info.train_count { "train" } else { "test" }.into(),
            left: format!("{id}_left.png").into(),
            right: format!("{id}_right.png").into(),
            disparity: format!("{id}_disp.pfm").into(),
            disparity_format: DisparityFormat::Pfm,
            valid_mask: Some(format!("{id}_valid.png").into()),
            seed: Some(seed),
        };
        imageio::write_rgb(&out.join(&entry.left), &s.left)?;
        imageio::write_rgb(&out.join(&entry.right), &s.right)?;
        pfm::write_pfm_disparity(&out.join(&entry.disparity), &s.disparity)?;
        let mask: Vec<u8> = s.valid.iter().map(|v| if *v { 255 } else { 0 }).collect();
        imageio::write_gray8(&out.join(entry.valid_mask.as_ref().unwrap()), info.width, info.height, &mask)?;
        samples.push(entry);
    }
    let manifest = Manifest { version: 1, generator: Some(info.clone()), samples };
    let path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format(&path, e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// A manifest together with the directory its paths are relative to.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    /// `path` is a manifest file or a directory containing `manifest.json`.
    pub fn open(path: &Path) -> Result<Dataset> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&file, e.to_string()))?;
        Ok(Dataset { root: file.parent().map(Path::to_path_buf).unwrap_or_default(), manifest })
    }

    pub fn entries(&self, split: &str) -> Vec<&ManifestEntry> {
        self.manifest.samples.iter().filter(|e| e.split == split).collect()
    }

    pub fn load(&self, entry: &ManifestEntry) -> Result<StereoSample> {
        let left = imageio::read_rgb(&self.root.join(&entry.left))?;
        let right = imageio::read_rgb(&self.root.join(&entry.right))?;
        let dpath = self.root.join(&entry.disparity);
        let (mut disparity, mut valid): (Tensor, Vec<bool>) = match entry.disparity_format {
            DisparityFormat::Pfm => {
                let (d, _) = pfm::read_pfm_disparity(&dpath)?;
                let valid = d.data().iter().map(|v| v.is_finite()).collect();
                (d, valid)
            }
            DisparityFormat::KittiPng => read_kitti_disparity(&dpath)?,
        };
        // pixels without a ground-truth value carry NaN from here on
        for (d, v) in disparity.data_mut().iter_mut().zip(&valid) {
            if !v {
                *d = f32::NAN;
            }
        }
        if let Some(m) = &entry.valid_mask {
            let mpath = self.root.join(m);
            let img = imageio::read_png(&mpath)?;
            if img.channels != 1 || img.samples.len() != valid.len() {
                return Err(Error::format(&mpath, "mask must be single-channel and match the disparity size"));
            }
            valid.iter_mut().zip(&img.samples).for_each(|(v, m)| *v &= *m != 0);
        }
        let s = StereoSample { id: entry.id.clone(), left, right, disparity, valid };
        s.check()?;
        Ok(s)
    }

    pub fn load_split(&self, split: &str) -> Result<Vec<StereoSample>> {
        self.entries(split).into_iter().map(|e| self.load(e)).collect()
    }
}
