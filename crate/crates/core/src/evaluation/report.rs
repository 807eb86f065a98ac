//! Report files: metric CSVs and error-map images.

use std::fmt::Write as _;
use std::path::Path;

use super::metrics::MetricReport;
use crate::error::Result;

pub const METRICS_CSV_HEADER: &str = "sample,n_valid,epe_px,d1_percent,1px_percent,2px_percent,3px_percent,4px_percent";

pub fn metrics_csv_row(name: &str, r: &MetricReport) -> String {
    let mut s = format!("{name},{},{:.6},{:.6}", r.n_valid, r.epe_px, r.d1_percent);
    for k in r.kpx_percent {
        let _ = write!(s, ",{k:.6}");
    }
    s
}

/// Maps errors to colors from blue (0) to red (`max_error` and above);
/// invalid pixels are black.
pub fn error_map_rgb(pred: &[f32], gt: &[f32], mask: &[bool], max_error: f32) -> Vec<u8> {
    let mut out = Vec::with_capacity(pred.len() * 3);
    for ((p, g), m) in pred.iter().zip(gt).zip(mask) {
        if !*m || !g.is_finite() {
            out.extend_from_slice(&[0, 0, 0]);
            continue;
        }
        let t = ((p - g).abs() / max_error).clamp(0.0, 1.0);
        let red = (255.0 * t).round() as u8;
        let green = (255.0 * (1.0 - (2.0 * t - 1.0).abs()) * 0.6).round() as u8;
        out.extend_from_slice(&[red, green, 255 - red]);
    }
    out
}

pub fn write_png_rgb(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    crate::data::imageio::write_rgb8(path, width, height, rgb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colors_run_blue_to_red() {
        let c = error_map_rgb(&[1.0, 5.0, 0.0], &[1.0, 1.0, 0.0], &[true, true, false], 4.0);
        assert_eq!(&c[0..3], &[0, 0, 255]);
        assert_eq!(&c[3..6], &[255, 0, 0]);
        assert_eq!(&c[6..9], &[0, 0, 0]);
    }

    #[test]
    fn png_written() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.png");
        write_png_rgb(&p, 2, 1, &[1, 2, 3, 4, 5, 6]).unwrap();
        assert!(std::fs::metadata(&p).unwrap().len() > 0);
        assert!(write_png_rgb(&p, 2, 2, &[0; 3]).is_err());
    }
}
