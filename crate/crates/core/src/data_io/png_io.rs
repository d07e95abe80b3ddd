//! PNG codecs for the dataset images: 8-bit RGB color, 16-bit quantized
//! depth/disparity (value 0 reserved for invalid), and 8-bit masks binarized
//! at 128 on load.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::buffer::{ColorImage, MaskImage, ScalarImage};
use crate::error::{Result, SplatError};

fn io_err(path: &Path, e: impl std::fmt::Display) -> SplatError {
    SplatError::Dataset {
        context: path.display().to_string(),
        detail: e.to_string(),
    }
}

pub fn write_color_png(img: &ColorImage, path: &Path) -> Result<()> {
    let mut out = RgbImage::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            let p = img.get(x, y);
            let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            out.put_pixel(x as u32, y as u32, Rgb([q(p[0]), q(p[1]), q(p[2])]));
        }
    }
    out.save(path).map_err(|e| io_err(path, e))
}

pub fn read_color_png(path: &Path) -> Result<ColorImage> {
    let img = image::open(path).map_err(|e| io_err(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(ColorImage::from_fn(w, h, |x, y| {
        let p = img.get_pixel(x as u32, y as u32);
        [
            p[0] as f64 / 255.0,
            p[1] as f64 / 255.0,
            p[2] as f64 / 255.0,
        ]
    }))
}

/// Quantizes to 16-bit at `scale` units per count; non-positive values and
/// values past the 16-bit range store as 0 (invalid).
pub fn write_depth_png(depth: &ScalarImage, valid: &MaskImage, scale: f64, path: &Path) -> Result<()> {
    let mut out: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::new(depth.width as u32, depth.height as u32);
    for y in 0..depth.height {
        for x in 0..depth.width {
            let v = if valid.get(x, y) {
                let q = (depth.get(x, y) * scale).round();
                if q >= 1.0 && q <= u16::MAX as f64 {
                    q as u16
                } else {
                    0
                }
            } else {
                0
            };
            out.put_pixel(x as u32, y as u32, Luma([v]));
        }
    }
    out.save(path).map_err(|e| io_err(path, e))
}

pub fn read_depth_png(path: &Path, scale: f64) -> Result<(ScalarImage, MaskImage)> {
    let img = image::open(path).map_err(|e| io_err(path, e))?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut depth = ScalarImage::new(w, h);
    let mut valid = MaskImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let v = img.get_pixel(x as u32, y as u32)[0];
            if v > 0 {
                depth.set(x, y, v as f64 / scale);
                valid.set(x, y, true);
            }
        }
    }
    Ok((depth, valid))
}

pub fn write_mask_png(mask: &MaskImage, path: &Path) -> Result<()> {
    let mut out = GrayImage::new(mask.width as u32, mask.height as u32);
    for y in 0..mask.height {
        for x in 0..mask.width {
            out.put_pixel(x as u32, y as u32, Luma([if mask.get(x, y) { 255 } else { 0 }]));
        }
    }
    out.save(path).map_err(|e| io_err(path, e))
}

pub fn read_mask_png(path: &Path) -> Result<MaskImage> {
    let img = image::open(path).map_err(|e| io_err(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(MaskImage::from_fn(w, h, |x, y| {
        img.get_pixel(x as u32, y as u32)[0] >= 128
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_roundtrip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let img = ColorImage::from_fn(9, 7, |x, y| {
            [x as f64 / 10.0, y as f64 / 10.0, 0.33]
        });
        write_color_png(&img, &path).unwrap();
        let back = read_color_png(&path).unwrap();
        for i in 0..img.data.len() {
            for c in 0..3 {
                assert!((img.data[i][c] - back.data[i][c]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn depth_value_1500_scale_1000_reads_as_1_5() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let depth = ScalarImage::filled(4, 4, 1.5);
        let valid = MaskImage::filled(4, 4, 1);
        write_depth_png(&depth, &valid, 1000.0, &path).unwrap();
        let (back, v) = read_depth_png(&path, 1000.0).unwrap();
        assert_eq!(back.get(2, 2), 1.5);
        assert!(v.get(0, 0));
    }

    #[test]
    fn invalid_depth_stays_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let depth = ScalarImage::filled(3, 3, 2.0);
        let mut valid = MaskImage::filled(3, 3, 1);
        valid.set(1, 1, false);
        write_depth_png(&depth, &valid, 1000.0, &path).unwrap();
        let (_, v) = read_depth_png(&path, 1000.0).unwrap();
        assert!(!v.get(1, 1));
        assert!(v.get(0, 0));
    }

    #[test]
    fn mask_binarizes_at_128() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mut img = GrayImage::new(3, 1);
        img.put_pixel(0, 0, Luma([0]));
        img.put_pixel(1, 0, Luma([127]));
        img.put_pixel(2, 0, Luma([128]));
        img.save(&path).unwrap();
        let m = read_mask_png(&path).unwrap();
        assert!(!m.get(0, 0));
        assert!(!m.get(1, 0));
        assert!(m.get(2, 0));
    }

    #[test]
    fn missing_file_error_names_path() {
        let err = read_color_png(Path::new("/nonexistent/file.png")).unwrap_err();
        assert!(err.to_string().contains("nonexistent"));
    }
}
