//! Grayscale PFM (portable float map) for lossless ground-truth depth.
//! Follows the convention: `Pf` header, width/height line, negative scale for
//! little-endian, rows stored bottom-to-top.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::buffer::ScalarImage;
use crate::error::{Result, SplatError};

fn err(path: &Path, detail: impl Into<String>) -> SplatError {
    SplatError::Dataset {
        context: path.display().to_string(),
        detail: detail.into(),
    }
}

pub fn write_pfm(img: &ScalarImage, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| err(path, e.to_string()))?;
    let mut w = BufWriter::new(f);
    write!(w, "Pf\n{} {}\n-1.0\n", img.width, img.height).map_err(|e| err(path, e.to_string()))?;
    for y in (0..img.height).rev() {
        for x in 0..img.width {
            w.write_f32::<LittleEndian>(img.get(x, y) as f32)
                .map_err(|e| err(path, e.to_string()))?;
        }
    }
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<ScalarImage> {
    let f = File::open(path).map_err(|e| err(path, e.to_string()))?;
    let mut r = BufReader::new(f);
    let mut header = Vec::new();
    // three whitespace-terminated tokens after the magic: width, height, scale
    let mut tokens = Vec::new();
    let mut cur = Vec::new();
    while tokens.len() < 4 {
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte).map_err(|e| err(path, e.to_string()))?;
        if byte[0].is_ascii_whitespace() {
            if !cur.is_empty() {
                tokens.push(String::from_utf8_lossy(&cur).to_string());
                cur.clear();
            }
        } else {
            cur.push(byte[0]);
        }
        header.push(byte[0]);
    }
    if tokens[0] != "Pf" {
        return Err(err(path, format!("expected grayscale PFM magic 'Pf', got '{}'", tokens[0])));
    }
    let width: usize = tokens[1].parse().map_err(|_| err(path, "bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| err(path, "bad height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| err(path, "bad scale"))?;
    if scale >= 0.0 {
        return Err(err(path, "big-endian PFM not supported"));
    }
    let mut img = ScalarImage::new(width, height);
    for y in (0..height).rev() {
        for x in 0..width {
            let v = r
                .read_f32::<LittleEndian>()
                .map_err(|e| err(path, e.to_string()))?;
            img.set(x, y, v as f64);
        }
    }
    Ok(img)
}
