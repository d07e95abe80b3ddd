//! Synthetic RGBD sequence generator: an analytically-known deforming sheet
//! textured with a smooth pattern, optionally occluded by a moving bar that
//! mimics a tool. Every frame is evaluated exactly from the surface formula
//! (no Gaussian rendering involved), so the output doubles as a ground-truth
//! oracle for the whole pipeline.

use std::f64::consts::TAU;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::buffer::{ColorImage, MaskImage, ScalarImage};
use crate::error::{Result, SplatError};

use super::manifest::{save_manifest, DatasetManifest, FrameEntry, Intrinsics};
use super::pfm::{read_pfm, write_pfm};
use super::png_io::{read_mask_png, write_color_png, write_depth_png, write_mask_png};

/// Vertical bar sweeping across the image, compositing over the surface.
/// Horizontal extents are fractions of the image width.
#[derive(Debug, Clone)]
pub struct OccluderBar {
    pub x0: f64,
    pub width: f64,
    /// Leftward-positive drift in image-width fractions per unit time.
    pub speed: f64,
    pub color: [f64; 3],
}

impl Default for OccluderBar {
    fn default() -> Self {
        Self {
            x0: 0.35,
            width: 0.15,
            speed: 0.1,
            color: [0.75, 0.75, 0.78],
        }
    }
}

/// Deforming-sheet scene: depth varies sinusoidally along x and in time,
/// z(x, t) = base_depth + amplitude·sin(2π·cycles·x/width + 2π·t).
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub base_depth: f64,
    pub amplitude: f64,
    pub cycles: f64,
    pub focal: f64,
    /// True stereo baseline; used to emit disparity images (fx·b/z).
    pub baseline: f64,
    pub occluder: Option<OccluderBar>,
    /// Std-dev of Gaussian color noise (0 = clean).
    pub noise_sigma: f64,
}

impl Default for SyntheticScene {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            frames: 10,
            base_depth: 2.0,
            amplitude: 0.1,
            cycles: 1.0,
            focal: 80.0,
            baseline: 0.05,
            occluder: Some(OccluderBar::default()),
            noise_sigma: 0.0,
        }
    }
}

impl SyntheticScene {
    /// Exact surface depth at pixel column `x` and time `t`.
    pub fn depth_at(&self, x: usize, t: f64) -> f64 {
        self.base_depth
            + self.amplitude * (TAU * self.cycles * x as f64 / self.width as f64 + TAU * t).sin()
    }

    /// Smooth deterministic texture, strictly inside [0,1].
    pub fn color_at(&self, x: usize, y: usize) -> [f64; 3] {
        let u = x as f64 / self.width as f64;
        let v = y as f64 / self.height as f64;
        [
            0.5 + 0.35 * (TAU * 3.0 * u).sin() * (TAU * 2.0 * v).cos(),
            0.5 + 0.35 * (TAU * 5.0 * u + 1.0).sin() * (TAU * 3.0 * v).sin(),
            0.5 + 0.35 * (TAU * 2.0 * u).cos() * (TAU * 5.0 * v + 2.0).sin(),
        ]
    }

    /// Pixel-column range [x0, x1) covered by the occluder at time `t`.
    pub fn occluder_columns(&self, t: f64) -> Option<(usize, usize)> {
        let bar = self.occluder.as_ref()?;
        let left = (bar.x0 + bar.speed * t) * self.width as f64;
        let x0 = left.round().max(0.0) as usize;
        let x1 = ((left + bar.width * self.width as f64).round() as usize).min(self.width);
        (x0 < x1).then_some((x0.min(self.width), x1))
    }

    pub fn frame_time(&self, index: usize) -> f64 {
        index as f64 / self.frames as f64
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.focal,
            fy: self.focal,
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 / 2.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return Err(SplatError::Config("scene dimensions and frame count must be > 0".into()));
        }
        if self.base_depth - self.amplitude.abs() <= 0.01 {
            return Err(SplatError::SceneOutOfView(format!(
                "surface depth {} − amplitude {} crosses the near plane",
                self.base_depth, self.amplitude
            )));
        }
        if let Some(bar) = &self.occluder {
            let span = bar.width + bar.speed.abs(); // worst case over t ∈ [0,1]
            if bar.width >= 0.5 || span >= 1.0 {
                return Err(SplatError::Config(format!(
                    "occluder must cover < 50% of the image (width {})",
                    bar.width
                )));
            }
        }
        Ok(())
    }
}

/// Ground-truth sidecar for one frame: exact surface depth and the
/// occluded-pixel mask (255 = occluded by the bar).
#[derive(Debug, Clone)]
pub struct GroundTruthFrame {
    pub depth: ScalarImage,
    pub occluded: MaskImage,
}

pub fn load_gt_sidecar(root: &Path, frame: usize) -> Result<GroundTruthFrame> {
    let depth = read_pfm(&root.join(format!("gt/depth_{frame:06}.pfm")))?;
    let occluded_png = read_mask_png(&root.join(format!("gt/occluded_{frame:06}.png")))?;
    Ok(GroundTruthFrame {
        depth,
        occluded: occluded_png,
    })
}

const DEPTH_SCALE: f64 = 1000.0;

/// Writes the full dataset (color/depth/mask/disparity PNGs + manifest) and
/// the exact ground-truth sidecar. Deterministic for a fixed seed.
///
/// Disparity is emitted for every pixel from the true surface depth — also
/// under the bar, standing in for a stereo matcher that sees around the tool;
/// this is what lets depth completion recover occluded geometry.
pub fn generate_synthetic(scene: &SyntheticScene, seed: u64, root: &Path) -> Result<DatasetManifest> {
    scene.validate()?;
    for sub in ["color", "depth", "mask", "disparity", "gt"] {
        std::fs::create_dir_all(root.join(sub)).map_err(|e| SplatError::Dataset {
            context: root.join(sub).display().to_string(),
            detail: e.to_string(),
        })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (scene.width, scene.height);
    let mut entries = Vec::with_capacity(scene.frames);
    for fi in 0..scene.frames {
        let t = scene.frame_time(fi);
        let bar = scene.occluder_columns(t);
        let occluded = MaskImage::from_fn(w, h, |x, _| bar.is_some_and(|(a, b)| x >= a && x < b));
        let surface_depth = ScalarImage::from_fn(w, h, |x, _| scene.depth_at(x, t));
        let mut color = ColorImage::from_fn(w, h, |x, y| scene.color_at(x, y));
        if scene.noise_sigma > 0.0 {
            for p in &mut color.data {
                for c in p.iter_mut() {
                    // Box-Muller keeps the generator dependency-light.
                    let u1: f64 = rng.gen_range(1e-12..1.0);
                    let u2: f64 = rng.gen_range(0.0..TAU);
                    *c = (*c + scene.noise_sigma * (-2.0 * u1.ln()).sqrt() * u2.cos())
                        .clamp(0.0, 1.0);
                }
            }
        }
        let bar_color = scene.occluder.as_ref().map(|b| b.color).unwrap_or([0.0; 3]);
        for y in 0..h {
            for x in 0..w {
                if occluded.get(x, y) {
                    color.set(x, y, bar_color);
                }
            }
        }
        let tissue_mask = MaskImage::from_fn(w, h, |x, y| !occluded.get(x, y));
        // Observed depth: the sensor sees nothing under the tool.
        let depth_valid = tissue_mask.clone();
        let disparity = ScalarImage::from_fn(w, h, |x, _| {
            scene.focal * scene.baseline / surface_depth.get(x, 0)
        });
        let disparity_valid = MaskImage::filled(w, h, 1);

        let entry = FrameEntry {
            color: format!("color/{fi:06}.png"),
            depth: format!("depth/{fi:06}.png"),
            mask: format!("mask/{fi:06}.png"),
            disparity: Some(format!("disparity/{fi:06}.png")),
            time: t,
        };
        write_color_png(&color, &root.join(&entry.color))?;
        write_depth_png(&surface_depth, &depth_valid, DEPTH_SCALE, &root.join(&entry.depth))?;
        write_mask_png(&tissue_mask, &root.join(&entry.mask))?;
        write_depth_png(
            &disparity,
            &disparity_valid,
            DEPTH_SCALE,
            &root.join(entry.disparity.as_ref().unwrap()),
        )?;
        write_pfm(&surface_depth, &root.join(format!("gt/depth_{fi:06}.pfm")))?;
        write_mask_png(&occluded, &root.join(format!("gt/occluded_{fi:06}.png")))?;
        entries.push(entry);
    }
    let intr = scene.intrinsics();
    let mut extrinsics = [0.0; 16];
    extrinsics[0] = 1.0;
    extrinsics[5] = 1.0;
    extrinsics[10] = 1.0;
    extrinsics[15] = 1.0;
    let manifest = DatasetManifest {
        width: w,
        height: h,
        intrinsics: intr,
        extrinsics,
        depth_scale: DEPTH_SCALE,
        depth_source: Some("synthetic".into()),
        frames: entries,
    };
    save_manifest(&manifest, root)?;
    Ok(manifest)
}
