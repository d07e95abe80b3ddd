//! Frame-0 K-nearest-neighbor topology with distance-decayed edge weights,
//! frozen for the whole sequence and consumed by the physics losses.

use std::io::Write;

use crate::error::{Result, SplatError};
use crate::knn;
use crate::model::GaussianCloud;

#[derive(Debug, Clone)]
pub struct RegularizationGraph {
    /// Per-Gaussian neighbor indices, `min(k, N−1)` each.
    pub neighbors: Vec<Vec<u32>>,
    /// Per-edge weights, aligned with `neighbors`.
    pub weights: Vec<Vec<f64>>,
    /// Frame-0 edge lengths ‖μⱼ₀ − μᵢ₀‖, aligned with `neighbors`.
    pub base_distances: Vec<Vec<f64>>,
    pub k: usize,
}

impl RegularizationGraph {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    /// Diagnostic edge-list dump: `i,j,distance,weight` per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "i,j,distance,weight")?;
        for i in 0..self.len() {
            for e in 0..self.neighbors[i].len() {
                writeln!(
                    w,
                    "{},{},{},{}",
                    i, self.neighbors[i][e], self.base_distances[i][e], self.weights[i][e]
                )?;
            }
        }
        Ok(())
    }
}

/// Exact KNN on the frame-0 positions with weights
/// w = exp(−lambda_w · dist²).
pub fn build_graph(
    frame0_cloud: &GaussianCloud,
    k: usize,
    lambda_w: f64,
) -> Result<RegularizationGraph> {
    if frame0_cloud.len() < 2 {
        return Err(SplatError::TooFewPoints {
            needed: 2,
            got: frame0_cloud.len(),
        });
    }
    if k == 0 || lambda_w <= 0.0 {
        return Err(SplatError::Config(format!(
            "graph needs k ≥ 1 and lambda_w > 0 (k={k}, lambda_w={lambda_w})"
        )));
    }
    let nn = knn::knn(&frame0_cloud.positions, k);
    let mut neighbors = Vec::with_capacity(nn.len());
    let mut weights = Vec::with_capacity(nn.len());
    let mut base_distances = Vec::with_capacity(nn.len());
    for list in nn {
        let mut idx = Vec::with_capacity(list.len());
        let mut w = Vec::with_capacity(list.len());
        let mut d = Vec::with_capacity(list.len());
        for (j, dist) in list {
            idx.push(j as u32);
            w.push((-lambda_w * dist * dist).exp());
            d.push(dist);
        }
        neighbors.push(idx);
        weights.push(w);
        base_distances.push(d);
    }
    Ok(RegularizationGraph {
        neighbors,
        weights,
        base_distances,
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn cloud_at(points: &[Vector3<f64>]) -> GaussianCloud {
        let mut c = GaussianCloud::empty(0);
        for &p in points {
            c.positions.push(p);
            c.rotations.push(crate::math::quat_identity());
            c.log_scales.push(Vector3::zeros());
            c.opacity_logits.push(0.0);
            c.hallucination_logits.push(0.0);
            c.sh_coeffs.push([0.5; 3]);
        }
        c
    }

    #[test]
    fn tiny_lambda_weight_approaches_one() {
        let c = cloud_at(&[Vector3::zeros(), Vector3::x()]);
        let g = build_graph(&c, 1, 1e-12).unwrap();
        assert!((g.weights[0][0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn collinear_hand_knn() {
        let c = cloud_at(&[
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(3.0, 0.0, 0.0),
        ]);
        let lambda = 0.7;
        let g = build_graph(&c, 1, lambda).unwrap();
        assert_eq!(g.neighbors[0], vec![1]);
        assert_eq!(g.neighbors[1], vec![0]);
        assert_eq!(g.neighbors[2], vec![1]);
        assert!((g.weights[0][0] - (-lambda).exp()).abs() < 1e-15);
        assert_eq!(g.base_distances[2][0], 2.0);
    }

    #[test]
    fn coincident_points_weight_exactly_one() {
        let c = cloud_at(&[Vector3::zeros(), Vector3::zeros()]);
        let g = build_graph(&c, 1, 5.0).unwrap();
        assert_eq!(g.weights[0][0], 1.0);
    }

    #[test]
    fn mutual_edges_share_weight() {
        let c = cloud_at(&[
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.3, 0.1, 0.0),
            Vector3::new(5.0, 5.0, 5.0),
            Vector3::new(5.2, 5.0, 5.0),
        ]);
        let g = build_graph(&c, 2, 2.0).unwrap();
        for i in 0..4 {
            for (e, &j) in g.neighbors[i].iter().enumerate() {
                let j = j as usize;
                if let Some(back) = g.neighbors[j].iter().position(|&b| b as usize == i) {
                    assert_eq!(g.weights[i][e], g.weights[j][back]);
                }
            }
        }
    }

    #[test]
    fn too_few_points_rejected() {
        let c = cloud_at(&[Vector3::zeros()]);
        assert!(matches!(
            build_graph(&c, 3, 1.0),
            Err(SplatError::TooFewPoints { got: 1, .. })
        ));
    }

    #[test]
    fn graph_is_deterministic() {
        let cloud = crate::test_clouds::random_cloud(200, 77);
        let a = build_graph(&cloud, 8, 100.0).unwrap();
        let b = build_graph(&cloud, 8, 100.0).unwrap();
        assert_eq!(a.neighbors, b.neighbors);
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn csv_dump_has_all_edges() {
        let cloud = crate::test_clouds::random_cloud(10, 8);
        let g = build_graph(&cloud, 3, 50.0).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + g.edge_count());
        assert!(text.starts_with("i,j,distance,weight"));
    }
}
