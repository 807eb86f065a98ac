//! 8- and 16-bit PNG reading and writing.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decoded PNG samples widened to `u16`.
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub bit_depth: u8,
    pub samples: Vec<u16>,
}

pub fn read_png(path: &Path) -> Result<RawImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e.to_string()))?;
    buf.truncate(info.buffer_size());
    let channels = info.color_type.samples();
    let samples = match info.bit_depth {
        png::BitDepth::Sixteen => buf.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect(),
        png::BitDepth::Eight => buf.iter().map(|&v| v as u16).collect(),
        d => return Err(Error::format(path, format!("unsupported bit depth {d:?}"))),
    };
    Ok(RawImage {
        width: info.width as usize,
        height: info.height as usize,
        channels,
        bit_depth: info.bit_depth as u8,
        samples,
    })
}

/// Reads an 8-bit image as a `[3, H, W]` tensor in `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<Tensor> {
    let img = read_png(path)?;
    if img.bit_depth != 8 {
        return Err(Error::format(path, "expected an 8-bit image"));
    }
    let (h, w, c) = (img.height, img.width, img.channels);
    let mut data = vec![0.0f32; 3 * h * w];
    for p in 0..h * w {
        for ch in 0..3 {
            let src = if c >= 3 { ch } else { 0 };
            data[ch * h * w + p] = img.samples[p * c + src] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

fn write(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut w = enc.write_header().map_err(|e| Error::format(path, e.to_string()))?;
    w.write_image_data(bytes).map_err(|e| Error::format(path, e.to_string()))?;
    w.finish().map_err(|e| Error::format(path, e.to_string()))
}

/// Writes a `[3, H, W]` tensor in `[0, 1]` as 8-bit RGB.
pub fn write_rgb(path: &Path, image: &Tensor) -> Result<()> {
    let [c, h, w] = image.shape() else {
        return Err(Error::Shape(format!("expected [3, H, W], got {:?}", image.shape())));
    };
    if *c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let (h, w) = (*h, *w);
    let mut bytes = vec![0u8; 3 * h * w];
    for p in 0..h * w {
        for ch in 0..3 {
            bytes[p * 3 + ch] = (image.data()[ch * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    write(path, w, h, png::ColorType::Rgb, png::BitDepth::Eight, &bytes)
}

pub fn write_gray16(path: &Path, width: usize, height: usize, values: &[u16]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Shape(format!("{} values for {width}x{height}", values.len())));
    }
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_be_bytes()).collect();
    write(path, width, height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes)
}

pub fn write_gray8(path: &Path, width: usize, height: usize, values: &[u8]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Shape(format!("{} values for {width}x{height}", values.len())));
    }
    write(path, width, height, png::ColorType::Grayscale, png::BitDepth::Eight, values)
}

pub fn write_rgb8(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != 3 * width * height {
        return Err(Error::Shape(format!("{} bytes for a {width}x{height} RGB image", rgb.len())));
    }
    write(path, width, height, png::ColorType::Rgb, png::BitDepth::Eight, rgb)
}
