//! Portable float map (PFM) images.
//!
//! Header: `Pf` (one channel) or `PF` (three), then `width height`, then a
//! scale whose sign gives the byte order (negative = little-endian). Rows
//! are stored bottom to top; this module always returns them top to bottom.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Magnitude of the scale field.
    pub scale: f32,
    pub little_endian: bool,
    /// Row-major, top row first, channels interleaved.
    pub data: Vec<f32>,
}

fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| std::str::from_utf8(&bytes[start..*pos]).ok()).flatten()
}

impl Pfm {
    pub fn parse(bytes: &[u8]) -> std::result::Result<Pfm, String> {
        let mut pos = 0;
        let channels = match token(bytes, &mut pos) {
            Some("Pf") => 1,
            Some("PF") => 3,
            other => return Err(format!("bad magic {other:?}")),
        };
        let mut num = |what: &str| -> std::result::Result<&str, String> {
            token(bytes, &mut pos).ok_or_else(|| format!("missing {what}"))
        };
        let width: usize = num("width")?.parse().map_err(|_| "bad width".to_string())?;
        let height: usize = num("height")?.parse().map_err(|_| "bad height".to_string())?;
        let scale: f32 = num("scale")?.parse().map_err(|_| "bad scale".to_string())?;
        if scale == 0.0 || !scale.is_finite() {
            return Err("scale must be finite and non-zero".into());
        }
        // exactly one whitespace byte separates the header from the payload
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err("truncated header".into());
        }
        pos += 1;
        let little_endian = scale < 0.0;
        let n = width * height * channels;
        let payload = &bytes[pos..];
        if payload.len() < 4 * n {
            return Err(format!("truncated payload: {} of {} bytes", payload.len(), 4 * n));
        }
        let row = width * channels;
        let mut data = vec![0.0f32; n];
        for (i, c) in payload[..4 * n].chunks_exact(4).enumerate() {
            let b = [c[0], c[1], c[2], c[3]];
            let v = if little_endian { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
            let (r, k) = (i / row, i % row);
            data[(height - 1 - r) * row + k] = v;
        }
        Ok(Pfm { width, height, channels, scale: scale.abs(), little_endian, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "PF" } else { "Pf" };
        let scale = if self.little_endian { -self.scale } else { self.scale };
        let mut out = format!("{magic}\n{} {}\n{scale:?}\n", self.width, self.height).into_bytes();
        let row = self.width * self.channels;
        for r in (0..self.height).rev() {
            for v in &self.data[r * row..(r + 1) * row] {
                out.extend_from_slice(&if self.little_endian { v.to_le_bytes() } else { v.to_be_bytes() });
            }
        }
        out
    }
}

pub fn read_pfm(path: &Path) -> Result<Pfm> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Pfm::parse(&bytes).map_err(|m| Error::format(path, m))
}

pub fn write_pfm(path: &Path, pfm: &Pfm) -> Result<()> {
    if pfm.data.len() != pfm.width * pfm.height * pfm.channels || !(pfm.channels == 1 || pfm.channels == 3) {
        return Err(Error::Shape("PFM data does not match its dimensions".into()));
    }
    std::fs::write(path, pfm.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads a single-channel disparity map as `[H, W]` plus its scale.
pub fn read_pfm_disparity(path: &Path) -> Result<(Tensor, f32)> {
    let p = read_pfm(path)?;
    if p.channels != 1 {
        return Err(Error::format(path, "disparity maps must be single-channel (Pf)"));
    }
    Ok((Tensor::from_vec(&[p.height, p.width], p.data)?, p.scale))
}

pub fn write_pfm_disparity(path: &Path, disparity: &Tensor) -> Result<()> {
    let [h, w] = disparity.shape() else {
        return Err(Error::Shape(format!("expected [H, W], got {:?}", disparity.shape())));
    };
    write_pfm(
        path,
        &Pfm { width: *w, height: *h, channels: 1, scale: 1.0, little_endian: true, data: disparity.data().to_vec() },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_file() {
        let mut bytes = b"Pf\n1 1\n-1.0\n".to_vec();
        bytes.extend_from_slice(&3.5f32.to_le_bytes());
        let p = Pfm::parse(&bytes).unwrap();
        assert_eq!(p.data, vec![3.5]);
        assert!(p.little_endian);
        assert_eq!(p.scale, 1.0);
    }

    #[test]
    fn rows_are_flipped_and_big_endian_works() {
        let mut bytes = b"Pf\n1 2\n2.0\n".to_vec();
        bytes.extend_from_slice(&1.0f32.to_be_bytes());
        bytes.extend_from_slice(&2.0f32.to_be_bytes());
        let p = Pfm::parse(&bytes).unwrap();
        assert_eq!(p.data, vec![2.0, 1.0]);
        assert_eq!(p.scale, 2.0);
        assert_eq!(p.to_bytes(), bytes);
    }

    #[test]
    fn errors() {
        assert!(Pfm::parse(b"P6\n1 1\n1\n\0\0\0\0").is_err());
        assert!(Pfm::parse(b"Pf\n2 2\n-1\n\0\0\0\0").is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pfm");
        let mut bytes = b"PF\n1 1\n-1\n".to_vec();
        bytes.extend_from_slice(&[0; 12]);
        std::fs::write(&path, bytes).unwrap();
        assert!(read_pfm(&path).is_ok());
        assert!(matches!(read_pfm_disparity(&path), Err(Error::Format { .. })));
    }
}
