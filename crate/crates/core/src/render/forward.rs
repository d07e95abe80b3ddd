//! Forward rasterization: global depth sort, 16×16 tile binning,
//! front-to-back alpha blending of color, depth, and hallucination.

use nalgebra::Matrix2;
use rayon::prelude::*;

use crate::buffer::{ColorImage, ScalarImage};
use crate::error::{Result, SplatError};
use crate::model::{Camera, GaussianCloud};

use super::project::{max_eigenvalue_2x2, ProjectedGaussian};
use super::{RenderOptions, ALPHA_CLAMP, ALPHA_SKIP, TILE_SIZE};

/// One blended contribution at a pixel, retained for the backward pass.
#[derive(Debug, Clone, Copy)]
pub struct BlendRecord {
    /// Source Gaussian index in the cloud.
    pub index: u32,
    pub alpha: f64,
    /// Transmittance prefix ∏_{j<i}(1−αⱼ) at the time of blending.
    pub transmittance: f64,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: ColorImage,
    pub depth: ScalarImage,
    pub hallucination: ScalarImage,
    pub alpha: ScalarImage,
    /// Per-pixel ordered contribution lists, row-major.
    pub records: Vec<Vec<BlendRecord>>,
}

pub(crate) struct Conic {
    pub inv: Matrix2<f64>,
    pub radius: f64,
}

pub(crate) fn conic_of(g: &ProjectedGaussian) -> Result<Conic> {
    let c = &g.cov2d;
    let det = c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(1, 0)];
    if !(det > 0.0) || !det.is_finite() || c[(0, 0)] <= 0.0 || c[(1, 1)] <= 0.0 {
        return Err(SplatError::DegenerateCovariance {
            index: g.source_index,
            detail: format!("2D covariance not SPD after dilation (det = {det:.3e})"),
        });
    }
    let inv = Matrix2::new(c[(1, 1)], -c[(0, 1)], -c[(1, 0)], c[(0, 0)]) / det;
    // Outside this radius α < ALPHA_SKIP is guaranteed, so binning introduces
    // no cutoff beyond the skip threshold itself.
    let radius = if g.opacity <= ALPHA_SKIP {
        0.0
    } else {
        (2.0 * (g.opacity / ALPHA_SKIP).ln()).sqrt() * max_eigenvalue_2x2(c).sqrt()
    };
    Ok(Conic { inv, radius })
}

struct PixelAccum {
    color: [f64; 3],
    depth: f64,
    halluc: f64,
    alpha: f64,
    records: Vec<BlendRecord>,
}

/// Rasterizes projected Gaussians over the camera's image plane.
///
/// Contributions are sorted by ascending camera depth (ties by ascending
/// source index), so the output is identical for any permutation of the
/// input list.
pub fn render(
    projected: &[ProjectedGaussian],
    camera: &Camera,
    opts: &RenderOptions,
) -> Result<RenderOutput> {
    let (w, h) = (camera.width, camera.height);
    let mut order: Vec<usize> = (0..projected.len()).collect();
    order.sort_by(|&a, &b| {
        projected[a]
            .z_camera
            .partial_cmp(&projected[b].z_camera)
            .unwrap()
            .then(projected[a].source_index.cmp(&projected[b].source_index))
    });

    let conics: Vec<Conic> = projected.iter().map(conic_of).collect::<Result<_>>()?;

    let tiles_x = w.div_ceil(TILE_SIZE);
    let tiles_y = h.div_ceil(TILE_SIZE);
    let mut tile_lists: Vec<Vec<usize>> = vec![Vec::new(); tiles_x * tiles_y];
    for &idx in &order {
        let g = &projected[idx];
        let r = conics[idx].radius;
        if r <= 0.0 {
            continue;
        }
        let x0 = ((g.mean2d.x - r).floor().max(0.0)) as usize;
        let y0 = ((g.mean2d.y - r).floor().max(0.0)) as usize;
        if g.mean2d.x + r < 0.0 || g.mean2d.y + r < 0.0 || x0 >= w || y0 >= h {
            continue;
        }
        let x1 = ((g.mean2d.x + r).ceil() as usize).min(w - 1);
        let y1 = ((g.mean2d.y + r).ceil() as usize).min(h - 1);
        for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                tile_lists[ty * tiles_x + tx].push(idx);
            }
        }
    }

    let tile_results: Vec<(usize, Vec<PixelAccum>)> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|tile| {
            let tx = tile % tiles_x;
            let ty = tile / tiles_x;
            let x_lo = tx * TILE_SIZE;
            let y_lo = ty * TILE_SIZE;
            let x_hi = (x_lo + TILE_SIZE).min(w);
            let y_hi = (y_lo + TILE_SIZE).min(h);
            let list = &tile_lists[tile];
            let mut pixels = Vec::with_capacity((x_hi - x_lo) * (y_hi - y_lo));
            for y in y_lo..y_hi {
                for x in x_lo..x_hi {
                    pixels.push(blend_pixel(projected, &conics, list, x as f64, y as f64));
                }
            }
            (tile, pixels)
        })
        .collect();

    let mut out = RenderOutput {
        color: ColorImage::new(w, h),
        depth: ScalarImage::new(w, h),
        hallucination: ScalarImage::new(w, h),
        alpha: ScalarImage::new(w, h),
        records: vec![Vec::new(); w * h],
    };
    for (tile, pixels) in tile_results {
        let tx = tile % tiles_x;
        let ty = tile / tiles_x;
        let x_lo = tx * TILE_SIZE;
        let y_lo = ty * TILE_SIZE;
        let x_hi = (x_lo + TILE_SIZE).min(w);
        let mut it = pixels.into_iter();
        for y in y_lo..(ty * TILE_SIZE + TILE_SIZE).min(h) {
            for x in x_lo..x_hi {
                let p = it.next().expect("tile pixel count");
                let rem = 1.0 - p.alpha;
                out.color.set(
                    x,
                    y,
                    [
                        p.color[0] + rem * opts.background[0],
                        p.color[1] + rem * opts.background[1],
                        p.color[2] + rem * opts.background[2],
                    ],
                );
                out.depth.set(x, y, p.depth);
                out.hallucination.set(x, y, p.halluc);
                out.alpha.set(x, y, p.alpha);
                out.records[y * w + x] = p.records;
            }
        }
    }
    Ok(out)
}

fn blend_pixel(
    projected: &[ProjectedGaussian],
    conics: &[Conic],
    list: &[usize],
    px: f64,
    py: f64,
) -> PixelAccum {
    let mut color = [0.0; 3];
    let mut depth = 0.0;
    let mut halluc = 0.0;
    let mut remaining = 1.0;
    let mut records = Vec::new();
    for &idx in list {
        let g = &projected[idx];
        let inv = &conics[idx].inv;
        let dx = px - g.mean2d.x;
        let dy = py - g.mean2d.y;
        let q = inv[(0, 0)] * dx * dx + 2.0 * inv[(0, 1)] * dx * dy + inv[(1, 1)] * dy * dy;
        let alpha = (g.opacity * (-0.5 * q).exp()).min(ALPHA_CLAMP);
        if alpha < ALPHA_SKIP {
            continue;
        }
        let wgt = alpha * remaining;
        records.push(BlendRecord {
            index: g.source_index as u32,
            alpha,
            transmittance: remaining,
        });
        for c in 0..3 {
            color[c] += wgt * g.color[c];
        }
        depth += wgt * g.z_camera;
        halluc += wgt * g.hallucination;
        remaining *= 1.0 - alpha;
    }
    PixelAccum {
        color,
        depth,
        halluc,
        alpha: 1.0 - remaining,
        records,
    }
}

/// Projects and renders a cloud in one call; returns the near-clip cull count
/// alongside the output.
pub fn render_from_cloud(
    cloud: &GaussianCloud,
    camera: &Camera,
    opts: &RenderOptions,
) -> Result<(RenderOutput, usize)> {
    let res = super::project(cloud, camera, opts);
    let out = render(&res.gaussians, camera, opts)?;
    Ok((out, res.culled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    fn cam(w: usize, h: usize) -> Camera {
        Camera::identity_pose(60.0, 60.0, w as f64 / 2.0, h as f64 / 2.0, w, h)
    }

    fn centered(px: f64, py: f64, opacity: f64, z: f64, idx: usize) -> ProjectedGaussian {
        ProjectedGaussian {
            mean2d: Vector2::new(px, py),
            cov2d: Matrix2::identity() * 2.0,
            z_camera: z,
            color: [0.8, 0.4, 0.2],
            opacity,
            hallucination: 0.3,
            source_index: idx,
        }
    }

    #[test]
    fn empty_scene_renders_background() {
        let camera = cam(8, 8);
        let opts = RenderOptions {
            background: [0.1, 0.2, 0.3],
            ..Default::default()
        };
        let out = render(&[], &camera, &opts).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(out.color.get(x, y), [0.1, 0.2, 0.3]);
                assert_eq!(out.depth.get(x, y), 0.0);
                assert_eq!(out.hallucination.get(x, y), 0.0);
                assert_eq!(out.alpha.get(x, y), 0.0);
            }
        }
    }

    #[test]
    fn saturated_single_gaussian_clamps_at_099() {
        let camera = cam(16, 16);
        let g = centered(8.0, 8.0, 1.0, 1.5, 0);
        let out = render(&[g.clone()], &camera, &RenderOptions::default()).unwrap();
        assert_eq!(out.depth.get(8, 8), 0.99 * 1.5);
        let c = out.color.get(8, 8);
        for k in 0..3 {
            assert!((c[k] - 0.99 * g.color[k]).abs() < 1e-12);
        }
        assert_eq!(out.alpha.get(8, 8), 0.99);
    }

    #[test]
    fn two_contribution_depth_recurrence() {
        // α₁ = α₂ = 0.5, d₁ = 1, d₂ = 2 → D̂ = 0.5·1 + 0.5·0.5·2 = 1.0
        let camera = cam(16, 16);
        let a = centered(8.0, 8.0, 0.5, 1.0, 0);
        let b = centered(8.0, 8.0, 0.5, 2.0, 1);
        let out = render(&[a, b], &camera, &RenderOptions::default()).unwrap();
        assert!((out.depth.get(8, 8) - 1.0).abs() < 1e-12);
        assert!((out.alpha.get(8, 8) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn permuting_input_is_bit_identical() {
        let camera = cam(32, 32);
        let gs: Vec<ProjectedGaussian> = (0..6)
            .map(|i| {
                let mut g = centered(
                    10.0 + i as f64 * 2.0,
                    12.0 + (i % 3) as f64 * 3.0,
                    0.4 + 0.08 * i as f64,
                    1.0 + 0.2 * i as f64,
                    i,
                );
                g.cov2d = Matrix2::new(3.0, 0.5, 0.5, 2.0);
                g
            })
            .collect();
        let mut shuffled = gs.clone();
        shuffled.reverse();
        shuffled.swap(0, 3);
        let opts = RenderOptions::default();
        let a = render(&gs, &camera, &opts).unwrap();
        let b = render(&shuffled, &camera, &opts).unwrap();
        assert_eq!(a.color.data, b.color.data);
        assert_eq!(a.depth.data, b.depth.data);
        assert_eq!(a.alpha.data, b.alpha.data);
    }

    #[test]
    fn transmittance_telescopes_to_alpha() {
        let camera = cam(32, 32);
        let gs: Vec<ProjectedGaussian> = (0..5)
            .map(|i| centered(14.0 + i as f64, 15.0, 0.6, 1.0 + i as f64 * 0.1, i))
            .collect();
        let out = render(&gs, &camera, &RenderOptions::default()).unwrap();
        for (pix, recs) in out.records.iter().enumerate() {
            let sum: f64 = recs.iter().map(|r| r.alpha * r.transmittance).sum();
            let a = out.alpha.data[pix];
            assert!((sum - a).abs() < 1e-9, "pixel {pix}: {sum} vs {a}");
        }
    }

    #[test]
    fn depth_is_alpha_weighted_mean_within_bounds() {
        let camera = cam(32, 32);
        let gs: Vec<ProjectedGaussian> = (0..4)
            .map(|i| centered(16.0, 16.0, 0.5, 1.0 + i as f64 * 0.5, i))
            .collect();
        let out = render(&gs, &camera, &RenderOptions::default()).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let a = out.alpha.get(x, y);
                if a > 0.0 {
                    let d = out.depth.get(x, y) / a;
                    assert!(d >= 1.0 - 1e-12 && d <= 2.5 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn hallucination_matches_gray_color_channel() {
        let camera = cam(32, 32);
        let gs: Vec<ProjectedGaussian> = (0..4)
            .map(|i| {
                let mut g = centered(15.0 + i as f64, 16.0, 0.55, 1.2 + 0.1 * i as f64, i);
                g.hallucination = 0.1 + 0.2 * i as f64;
                g
            })
            .collect();
        let mut as_color = gs.clone();
        for g in &mut as_color {
            g.color = [g.hallucination; 3];
        }
        let opts = RenderOptions::default();
        let a = render(&gs, &camera, &opts).unwrap();
        let b = render(&as_color, &camera, &opts).unwrap();
        for pix in 0..32 * 32 {
            assert_eq!(a.hallucination.data[pix], b.color.data[pix][0]);
        }
    }

    #[test]
    fn degenerate_cov2d_is_reported() {
        let camera = cam(8, 8);
        let mut g = centered(4.0, 4.0, 0.5, 1.0, 7);
        g.cov2d = Matrix2::new(1.0, 2.0, 2.0, 1.0); // det < 0
        let err = render(&[g], &camera, &RenderOptions::default()).unwrap_err();
        match err {
            SplatError::DegenerateCovariance { index, .. } => assert_eq!(index, 7),
            other => panic!("unexpected error {other}"),
        }
    }
}
