//! JSON dataset manifest: camera parameters, depth quantization scale, and
//! per-frame file entries. Loading validates every referenced file and decodes
//! frames into observations.

use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SplatError};
use crate::model::{Camera, FrameObservation};

use super::png_io::{read_color_png, read_depth_png, read_mask_png};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub color: String,
    pub depth: String,
    pub mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disparity: Option<String>,
    pub time: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    /// World-to-camera transform, 16 values row-major.
    pub extrinsics: [f64; 16],
    pub depth_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_source: Option<String>,
    pub frames: Vec<FrameEntry>,
}

impl DatasetManifest {
    pub fn camera(&self) -> Result<Camera> {
        let w = Matrix4::from_row_slice(&self.extrinsics);
        Camera::new(
            self.intrinsics.fx,
            self.intrinsics.fy,
            self.intrinsics.cx,
            self.intrinsics.cy,
            w,
            self.width,
            self.height,
        )
    }

    pub fn validate(&self, root: &Path) -> Result<()> {
        if self.frames.is_empty() {
            return Err(SplatError::Dataset {
                context: root.display().to_string(),
                detail: "manifest lists no frames".into(),
            });
        }
        if self.depth_scale <= 0.0 {
            return Err(SplatError::Dataset {
                context: root.display().to_string(),
                detail: format!("depth_scale must be > 0, got {}", self.depth_scale),
            });
        }
        for (i, f) in self.frames.iter().enumerate() {
            let check = |rel: &str| -> Result<()> {
                let p = root.join(rel);
                if !p.exists() {
                    return Err(SplatError::Dataset {
                        context: format!("frame {i}"),
                        detail: format!("missing file {}", p.display()),
                    });
                }
                Ok(())
            };
            check(&f.color)?;
            check(&f.depth)?;
            check(&f.mask)?;
            if let Some(d) = &f.disparity {
                check(d)?;
            }
        }
        Ok(())
    }
}

pub fn save_manifest(manifest: &DatasetManifest, root: &Path) -> Result<PathBuf> {
    let path = root.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest).map_err(|e| SplatError::Dataset {
        context: path.display().to_string(),
        detail: e.to_string(),
    })?;
    std::fs::write(&path, text).map_err(|e| SplatError::Dataset {
        context: path.display().to_string(),
        detail: e.to_string(),
    })?;
    Ok(path)
}

/// Loads the manifest plus every frame, validating all files up front so a
/// broken dataset fails before any training work.
pub fn load_dataset(root: &Path) -> Result<(DatasetManifest, Camera, Vec<FrameObservation>)> {
    let path = root.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| SplatError::Dataset {
        context: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| SplatError::Dataset {
            context: path.display().to_string(),
            detail: e.to_string(),
        })?;
    manifest.validate(root)?;
    let camera = manifest.camera()?;
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for (i, entry) in manifest.frames.iter().enumerate() {
        let frame = load_frame(root, entry, &manifest, i)?;
        frames.push(frame);
    }
    Ok((manifest, camera, frames))
}

fn load_frame(
    root: &Path,
    entry: &FrameEntry,
    manifest: &DatasetManifest,
    index: usize,
) -> Result<FrameObservation> {
    let color = read_color_png(&root.join(&entry.color))?;
    let (depth, depth_valid) = read_depth_png(&root.join(&entry.depth), manifest.depth_scale)?;
    let mask = read_mask_png(&root.join(&entry.mask))?;
    let disparity = match &entry.disparity {
        Some(rel) => Some(read_depth_png(&root.join(rel), manifest.depth_scale)?.0),
        None => None,
    };
    if color.width != manifest.width || color.height != manifest.height {
        return Err(SplatError::Dataset {
            context: format!("frame {index}"),
            detail: format!(
                "image is {}×{} but the manifest declares {}×{}",
                color.width, color.height, manifest.width, manifest.height
            ),
        });
    }
    FrameObservation::new(color, depth, depth_valid, mask, disparity, entry.time).map_err(|e| {
        SplatError::Dataset {
            context: format!("frame {index}"),
            detail: e.to_string(),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffer::{ColorImage, MaskImage, ScalarImage};
    use crate::data_io::png_io::{write_color_png, write_depth_png, write_mask_png};

    fn write_frame(root: &Path, idx: usize, w: usize, h: usize) -> FrameEntry {
        for sub in ["color", "depth", "mask"] {
            std::fs::create_dir_all(root.join(sub)).unwrap();
        }
        let color = ColorImage::filled(w, h, [0.5, 0.4, 0.3]);
        let depth = ScalarImage::filled(w, h, 1.5 + idx as f64 * 0.1);
        let valid = MaskImage::filled(w, h, 1);
        let names = FrameEntry {
            color: format!("color/{idx:06}.png"),
            depth: format!("depth/{idx:06}.png"),
            mask: format!("mask/{idx:06}.png"),
            disparity: None,
            time: idx as f64,
        };
        write_color_png(&color, &root.join(&names.color)).unwrap();
        write_depth_png(&depth, &valid, 1000.0, &root.join(&names.depth)).unwrap();
        write_mask_png(&valid, &root.join(&names.mask)).unwrap();
        names
    }

    fn manifest_for(frames: Vec<FrameEntry>, w: usize, h: usize) -> DatasetManifest {
        DatasetManifest {
            width: w,
            height: h,
            intrinsics: Intrinsics { fx: 40.0, fy: 40.0, cx: w as f64 / 2.0, cy: h as f64 / 2.0 },
            extrinsics: {
                let mut e = [0.0; 16];
                e[0] = 1.0;
                e[5] = 1.0;
                e[10] = 1.0;
                e[15] = 1.0;
                e
            },
            depth_scale: 1000.0,
            depth_source: None,
            frames,
        }
    }

    #[test]
    fn two_frame_dataset_loads() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let entries = vec![write_frame(root, 0, 8, 6), write_frame(root, 1, 8, 6)];
        let manifest = manifest_for(entries, 8, 6);
        save_manifest(&manifest, root).unwrap();
        let (m, cam, frames) = load_dataset(root).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(cam.width, 8);
        assert_eq!(frames[0].width(), 8);
        assert_eq!(frames[1].time, 1.0);
        assert_eq!(m, manifest);
        // depth png 1500/1000 → 1.5
        assert_eq!(frames[0].depth.get(3, 3), 1.5);
    }

    #[test]
    fn missing_file_fails_before_decode() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let mut entries = vec![write_frame(root, 0, 8, 6)];
        entries.push(FrameEntry {
            color: "color/000009.png".into(),
            depth: "depth/000000.png".into(),
            mask: "mask/000000.png".into(),
            disparity: None,
            time: 1.0,
        });
        save_manifest(&manifest_for(entries, 8, 6), root).unwrap();
        let e = load_dataset(root).unwrap_err().to_string();
        assert!(e.contains("frame 1"), "{e}");
        assert!(e.contains("missing file"), "{e}");
    }

    #[test]
    fn unknown_manifest_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        write_frame(root, 0, 4, 4);
        let m = manifest_for(vec![], 4, 4);
        let mut v = serde_json::to_value(&m).unwrap();
        v["surprise"] = serde_json::json!(1);
        std::fs::write(root.join("manifest.json"), v.to_string()).unwrap();
        let e = load_dataset(root).unwrap_err().to_string();
        assert!(e.contains("surprise"), "{e}");
    }

    #[test]
    fn reserialized_manifest_loads_equal() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let entries = vec![write_frame(root, 0, 6, 6)];
        let manifest = manifest_for(entries, 6, 6);
        save_manifest(&manifest, root).unwrap();
        let (m1, _, _) = load_dataset(root).unwrap();
        save_manifest(&m1, root).unwrap();
        let (m2, _, _) = load_dataset(root).unwrap();
        assert_eq!(m1, m2);
    }
}
