//! Binary little-endian PLY checkpoints for Gaussian clouds. All properties
//! are stored as doubles so export → load is bit-exact; the frame time rides
//! along in a header comment as hex-encoded f64 bits.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Vector3, Vector4};

use crate::error::{Result, SplatError};
use crate::math::sh_coeff_count;
use crate::model::GaussianCloud;

fn err(path: &Path, detail: impl Into<String>) -> SplatError {
    SplatError::Dataset {
        context: path.display().to_string(),
        detail: detail.into(),
    }
}

fn property_names(sh_degree: usize) -> Vec<String> {
    let mut names: Vec<String> = [
        "x", "y", "z", "qw", "qx", "qy", "qz", "log_scale_x", "log_scale_y", "log_scale_z",
        "opacity_logit", "halluc_logit",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for k in 0..sh_coeff_count(sh_degree) {
        for c in ["r", "g", "b"] {
            names.push(format!("sh_{k}_{c}"));
        }
    }
    names
}

pub fn export_ply(cloud: &GaussianCloud, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| err(path, e.to_string()))?;
    let mut w = BufWriter::new(f);
    let mut write = |s: String| w.write_all(s.as_bytes()).map_err(|e| err(path, e.to_string()));
    write("ply\nformat binary_little_endian 1.0\n".into())?;
    write(format!("comment time_bits {:016x}\n", cloud.time.to_bits()))?;
    write(format!("comment sh_degree {}\n", cloud.sh_degree))?;
    write(format!("element vertex {}\n", cloud.len()))?;
    for name in property_names(cloud.sh_degree) {
        write(format!("property double {name}\n"))?;
    }
    write("end_header\n".into())?;
    let stride = cloud.sh_per_gaussian();
    for i in 0..cloud.len() {
        let mut row: Vec<f64> = Vec::with_capacity(12 + 3 * stride);
        row.extend_from_slice(cloud.positions[i].as_slice());
        row.extend_from_slice(cloud.rotations[i].as_slice());
        row.extend_from_slice(cloud.log_scales[i].as_slice());
        row.push(cloud.opacity_logits[i]);
        row.push(cloud.hallucination_logits[i]);
        for k in 0..stride {
            row.extend_from_slice(&cloud.sh_coeffs[i * stride + k]);
        }
        for v in row {
            w.write_f64::<LittleEndian>(v).map_err(|e| err(path, e.to_string()))?;
        }
    }
    Ok(())
}

pub fn load_ply(path: &Path) -> Result<GaussianCloud> {
    let f = File::open(path).map_err(|e| err(path, e.to_string()))?;
    let mut r = BufReader::new(f);
    let mut line = String::new();
    let mut read_line = |r: &mut BufReader<File>| -> Result<String> {
        line.clear();
        r.read_line(&mut line).map_err(|e| err(path, e.to_string()))?;
        Ok(line.trim_end().to_string())
    };
    if read_line(&mut r)? != "ply" {
        return Err(err(path, "not a PLY file"));
    }
    if read_line(&mut r)? != "format binary_little_endian 1.0" {
        return Err(err(path, "unsupported PLY format (need binary little-endian 1.0)"));
    }
    let mut time = 0.0f64;
    let mut sh_degree = None;
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    loop {
        let l = read_line(&mut r)?;
        if l == "end_header" {
            break;
        } else if let Some(rest) = l.strip_prefix("comment time_bits ") {
            let bits = u64::from_str_radix(rest.trim(), 16)
                .map_err(|_| err(path, "bad time_bits comment"))?;
            time = f64::from_bits(bits);
        } else if let Some(rest) = l.strip_prefix("comment sh_degree ") {
            sh_degree = Some(rest.trim().parse::<usize>().map_err(|_| err(path, "bad sh_degree"))?);
        } else if let Some(rest) = l.strip_prefix("element vertex ") {
            count = Some(rest.trim().parse::<usize>().map_err(|_| err(path, "bad vertex count"))?);
        } else if let Some(rest) = l.strip_prefix("property double ") {
            props.push(rest.trim().to_string());
        } else if l.starts_with("comment") || l.starts_with("element") {
            // tolerated: other comments; other elements unsupported below
        } else if l.is_empty() {
            return Err(err(path, "truncated header"));
        } else {
            return Err(err(path, format!("unsupported header line: {l}")));
        }
    }
    let sh_degree = sh_degree.ok_or_else(|| err(path, "missing sh_degree comment"))?;
    let count = count.ok_or_else(|| err(path, "missing vertex element"))?;
    let expected = property_names(sh_degree);
    if props != expected {
        return Err(err(path, "vertex property list does not match the checkpoint layout"));
    }
    let stride = sh_coeff_count(sh_degree);
    let mut cloud = GaussianCloud::empty(sh_degree);
    cloud.time = time;
    let mut buf = vec![0u8; 8 * expected.len()];
    for _ in 0..count {
        r.read_exact(&mut buf).map_err(|e| err(path, e.to_string()))?;
        let mut cur = &buf[..];
        let mut next = || cur.read_f64::<LittleEndian>().unwrap();
        cloud.positions.push(Vector3::new(next(), next(), next()));
        cloud.rotations.push(Vector4::new(next(), next(), next(), next()));
        cloud.log_scales.push(Vector3::new(next(), next(), next()));
        cloud.opacity_logits.push(next());
        cloud.hallucination_logits.push(next());
        for _ in 0..stride {
            cloud.sh_coeffs.push([next(), next(), next()]);
        }
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame_0000.ply");
        let mut cloud = crate::test_clouds::random_cloud_sh(17, 3, 2);
        cloud.time = 0.7;
        export_ply(&cloud, &path).unwrap();
        let back = load_ply(&path).unwrap();
        assert_eq!(back.positions, cloud.positions);
        assert_eq!(back.rotations, cloud.rotations);
        assert_eq!(back.log_scales, cloud.log_scales);
        assert_eq!(back.opacity_logits, cloud.opacity_logits);
        assert_eq!(back.hallucination_logits, cloud.hallucination_logits);
        assert_eq!(back.sh_coeffs, cloud.sh_coeffs);
        assert_eq!(back.sh_degree, cloud.sh_degree);
        assert_eq!(back.time.to_bits(), cloud.time.to_bits());
    }

    #[test]
    fn single_vertex_file_is_wellformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.ply");
        let cloud = crate::test_clouds::random_cloud(1, 5);
        export_ply(&cloud, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_end = bytes.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
        let header = std::str::from_utf8(&bytes[..header_end]).unwrap();
        assert!(header.contains("element vertex 1"));
        // 12 scalar properties + 3 coefficients (degree 0 → 1 triple)
        assert_eq!(bytes.len() - header_end, 8 * 15);
        let back = load_ply(&path).unwrap();
        assert_eq!(back.len(), 1);
    }

    #[test]
    fn degree_3_has_16_coefficient_triples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deg3.ply");
        let cloud = crate::test_clouds::random_cloud_sh(2, 9, 3);
        export_ply(&cloud, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_end = bytes.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
        let header = std::str::from_utf8(&bytes[..header_end]).unwrap();
        assert!(header.contains("sh_15_b"));
        assert!(!header.contains("sh_16_r"));
        let back = load_ply(&path).unwrap();
        assert_eq!(back.sh_per_gaussian(), 16);
    }

    #[test]
    fn truncated_payload_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ply");
        let cloud = crate::test_clouds::random_cloud(3, 5);
        export_ply(&cloud, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load_ply(&path).is_err());
    }
}
