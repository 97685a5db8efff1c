//! Samplers for the model spaces: circles, intervals, boxes (including the
//! cubes `Q_n = [0,1] × [0,1/2] × ⋯ × [0,1/2^{n-1}]`) and metric trees.
//!
//! Every sampler returns equally weighted points with total mass 1.

use super::{circle_distance, l2, Embedding, FiniteMetricMeasureSpace};
use crate::error::{Error, Result};
use crate::target::{MetricTree, TreePoint};
use serde::{Deserialize, Serialize};

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be positive, got {v}")))
    }
}

/// `n` equally spaced points on a circle with the arc-length metric.
pub fn sample_circle(n: usize, circumference: f64) -> Result<FiniteMetricMeasureSpace> {
    if n == 0 {
        return Err(Error::param("circle needs n >= 1"));
    }
    positive("circumference", circumference)?;
    let coords: Vec<f64> = (0..n)
        .map(|k| k as f64 * circumference / n as f64)
        .collect();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            // Depends only on |i - j| so the matrix is exactly circulant.
            let k = i.abs_diff(j).min(n - i.abs_diff(j));
            dist[i * n + j] = k as f64 * circumference / n as f64;
        }
    }
    debug_assert!(n < 2 || (dist[1] - circle_distance(coords[0], coords[1], circumference)).abs() < 1e-12);
    FiniteMetricMeasureSpace::from_trusted(
        n,
        dist,
        uniform(n),
        Some(Embedding::Circle {
            circumference,
            coords,
        }),
    )
    .map(|s| s.with_label(format!("circle({n},{circumference})")))
}

/// `n` equally spaced points of `[0, length]`, endpoints included.
pub fn sample_interval(n: usize, length: f64) -> Result<FiniteMetricMeasureSpace> {
    sample_cube(&[n], &[length]).map(|s| s.with_label(format!("interval({n},{length})")))
}

/// Product grid of `[0, sides[0]] × ⋯` with `points[k]` equally spaced
/// points (endpoints included) along axis `k`, ℓ² distance.
pub fn sample_cube(points: &[usize], sides: &[f64]) -> Result<FiniteMetricMeasureSpace> {
    if points.is_empty() || points.len() != sides.len() {
        return Err(Error::param(
            "cube needs one point count per side length",
        ));
    }
    if points.iter().any(|&m| m == 0) {
        return Err(Error::param("every axis needs at least one point"));
    }
    for &s in sides {
        positive("side length", s)?;
    }
    let axes: Vec<Vec<f64>> = points
        .iter()
        .zip(sides)
        .map(|(&m, &s)| {
            if m == 1 {
                vec![0.0]
            } else {
                (0..m).map(|k| k as f64 * s / (m - 1) as f64).collect()
            }
        })
        .collect();
    let mut coords: Vec<Vec<f64>> = vec![vec![]];
    for axis in &axes {
        coords = coords
            .into_iter()
            .flat_map(|c| {
                axis.iter().map(move |&v| {
                    let mut c = c.clone();
                    c.push(v);
                    c
                })
            })
            .collect();
    }
    let n = coords.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = l2(&coords[i], &coords[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    FiniteMetricMeasureSpace::from_trusted(n, dist, uniform(n), Some(Embedding::Euclidean { coords }))
}

/// Grid sample of `Q_n = [0,1] × [0,1/2] × ⋯ × [0,1/2^{n-1}]` with the
/// unit side split into `divisions` cells; axis `k` gets
/// `divisions / 2^{k-1} + 1` points so the spacing is uniform.
pub fn sample_qcube(n: usize, divisions: usize) -> Result<FiniteMetricMeasureSpace> {
    if n == 0 {
        return Err(Error::param("Q_n needs n >= 1"));
    }
    let top = 1usize << (n - 1);
    if divisions == 0 || divisions % top != 0 {
        return Err(Error::param(format!(
            "divisions ({divisions}) must be a positive multiple of 2^(n-1) = {top}"
        )));
    }
    let points: Vec<usize> = (0..n).map(|k| divisions / (1 << k) + 1).collect();
    let sides: Vec<f64> = (0..n).map(|k| 1.0 / (1u64 << k) as f64).collect();
    sample_cube(&points, &sides).map(|s| s.with_label(format!("Q_{n}({divisions})")))
}

/// An edge of a metric tree.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeEdge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
}

/// All vertices of the tree plus `points_per_edge` equally spaced interior
/// points on every edge, with the path metric.
pub fn sample_tree(edges: &[TreeEdge], points_per_edge: usize) -> Result<FiniteMetricMeasureSpace> {
    let tree = MetricTree::new(edges)?;
    let mut pts: Vec<TreePoint> = (0..tree.vertex_count()).map(|v| tree.vertex_point(v)).collect();
    for (e, edge) in tree.edges().iter().enumerate() {
        for k in 1..=points_per_edge {
            pts.push(TreePoint {
                edge: e,
                offset: edge.length * k as f64 / (points_per_edge + 1) as f64,
            });
        }
    }
    let n = pts.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = tree.dist(&pts[i], &pts[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    FiniteMetricMeasureSpace::from_trusted(n, dist, uniform(n), None)
        .map(|s| s.with_label(format!("tree({} edges,{points_per_edge})", edges.len())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn circle_of_four() {
        let s = sample_circle(4, 2.0 * PI).unwrap();
        assert!((s.d(0, 1) - PI / 2.0).abs() < 1e-15);
        assert!((s.d(0, 2) - PI).abs() < 1e-15);
        assert!((s.d(3, 0) - PI / 2.0).abs() < 1e-15);
        assert!((s.total_mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn interval_of_two() {
        let s = sample_interval(2, 1.0).unwrap();
        assert_eq!(s.dist_rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(s.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn q2_grid_of_nine() {
        let s = sample_cube(&[3, 3], &[1.0, 0.5]).unwrap();
        assert_eq!(s.n(), 9);
        // Oracle: direct ℓ² computation between opposite corners.
        let corner = (1.0f64 * 1.0 + 0.5 * 0.5).sqrt();
        assert!((s.diameter() - corner).abs() < 1e-15);
        let q = sample_qcube(2, 2).unwrap();
        let grid = sample_cube(&[3, 2], &[1.0, 0.5]).unwrap();
        assert_eq!(q.dist_rows(), grid.dist_rows());
        assert_eq!(sample_qcube(2, 4).unwrap().n(), 15);
    }

    #[test]
    fn generated_spaces_satisfy_axioms() {
        let spaces = vec![
            sample_circle(9, 3.0).unwrap(),
            sample_interval(7, 2.0).unwrap(),
            sample_cube(&[3, 4], &[1.0, 0.5]).unwrap(),
            sample_tree(
                &[
                    TreeEdge { a: 0, b: 1, length: 1.0 },
                    TreeEdge { a: 0, b: 2, length: 2.0 },
                    TreeEdge { a: 0, b: 3, length: 0.5 },
                ],
                2,
            )
            .unwrap(),
        ];
        for s in spaces {
            super::super::validate_space(s.dist_rows(), s.weights().to_vec()).unwrap();
            assert!((s.total_mass() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tree_path_metric() {
        let s = sample_tree(
            &[
                TreeEdge { a: 0, b: 1, length: 1.0 },
                TreeEdge { a: 1, b: 2, length: 2.0 },
            ],
            1,
        )
        .unwrap();
        // vertices 0,1,2 then midpoints of the two edges
        assert_eq!(s.n(), 5);
        assert!((s.d(0, 2) - 3.0).abs() < 1e-15);
        assert!((s.d(3, 4) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn sampler_errors() {
        assert!(sample_circle(4, 0.0).is_err());
        assert!(sample_interval(3, -1.0).is_err());
        assert!(sample_circle(0, 1.0).is_err());
        let cyc = [
            TreeEdge { a: 0, b: 1, length: 1.0 },
            TreeEdge { a: 1, b: 2, length: 1.0 },
            TreeEdge { a: 2, b: 0, length: 1.0 },
        ];
        assert!(matches!(sample_tree(&cyc, 1), Err(Error::NotATree(_))));
        assert!(sample_tree(&[TreeEdge { a: 0, b: 1, length: 0.0 }], 1).is_err());
        assert!(sample_qcube(3, 6).is_err());
    }
}
