//! Finite measured metric spaces and the Gromov–Hausdorff toolkit built on
//! them.
//!
//! A [`FiniteMetricMeasureSpace`] is the discrete surrogate for a compact
//! measured metric space: `n` points, a symmetric distance matrix and a
//! positive weight per point. The mass of a subset is the sum of its
//! weights. All balls are open: `B(x, r) = { y : d(x, y) < r }`.

mod gh;
mod net;
mod sample;
mod union;

pub use gh::{
    distortion, distortion_of_map, gh_lower, gh_upper, hausdorff_distance, is_eps_approximation,
    Correspondence, GhSearch,
};
pub use net::{
    covering_order, kuratowski_embed, maximal_r_discrete_net, project_onto_subset, CoveringMode,
    NetOrder, DEFAULT_EXHAUSTIVE_CAP,
};
pub use sample::{
    sample_circle, sample_cube, sample_interval, sample_qcube, sample_tree, TreeEdge,
};
pub use union::{union_metric, LandmarkTable, UnionMetric};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Relative tolerance (times the diameter) for the triangle inequality and
/// symmetry checks in [`validate_space`].
pub const METRIC_TOLERANCE: f64 = 1e-12;

/// How the points of a sampled space sit in a model space. Samplers record
/// this so that maps between two samples of the same model space (nearest
/// point maps, smooth test functions) can be built without guessing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Embedding {
    /// Arc-length coordinate on a circle of the given circumference.
    Circle { circumference: f64, coords: Vec<f64> },
    /// Points of a Euclidean space with the ℓ² distance.
    Euclidean { coords: Vec<Vec<f64>> },
}

impl Embedding {
    /// Distance in the model space between point `i` of `self` and point `j`
    /// of `other`; `None` when the two embeddings are not comparable.
    pub fn cross_distance(&self, i: usize, other: &Embedding, j: usize) -> Option<f64> {
        match (self, other) {
            (
                Embedding::Circle {
                    circumference: a,
                    coords: ca,
                },
                Embedding::Circle {
                    circumference: b,
                    coords: cb,
                },
            ) if (a - b).abs() <= 1e-12 * a.abs().max(1.0) => {
                Some(circle_distance(ca[i], cb[j], *a))
            }
            (Embedding::Euclidean { coords: ca }, Embedding::Euclidean { coords: cb })
                if ca[i].len() == cb[j].len() =>
            {
                Some(l2(&ca[i], &cb[j]))
            }
            _ => None,
        }
    }

    /// Coordinates of point `i` (a single angle-length for circles).
    pub fn coords(&self, i: usize) -> Vec<f64> {
        match self {
            Embedding::Circle { coords, .. } => vec![coords[i]],
            Embedding::Euclidean { coords } => coords[i].clone(),
        }
    }
}

pub(crate) fn circle_distance(a: f64, b: f64, circumference: f64) -> f64 {
    let d = (a - b).abs() % circumference;
    d.min(circumference - d)
}

pub(crate) fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Coordinate metric accepted by [`FiniteMetricMeasureSpace::from_coords`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordMetric {
    L2,
    Linf,
}

/// `n` points with a symmetric distance matrix and strictly positive weights.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMetricMeasureSpace {
    n: usize,
    dist: Vec<f64>,
    weight: Vec<f64>,
    label: Option<String>,
    embedding: Option<Embedding>,
}

/// Checks every metric-measure axiom and builds the space.
///
/// The reported error names the first violated invariant together with the
/// offending indices.
pub fn validate_space(dist: Vec<Vec<f64>>, weight: Vec<f64>) -> Result<FiniteMetricMeasureSpace> {
    let n = dist.len();
    if n == 0 {
        return Err(Error::EmptySpace);
    }
    for (row, r) in dist.iter().enumerate() {
        if r.len() != n {
            return Err(Error::NotSquare {
                rows: n,
                row,
                len: r.len(),
            });
        }
    }
    if weight.len() != n {
        return Err(Error::WeightLength {
            got: weight.len(),
            expected: n,
        });
    }
    for (i, row) in dist.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidDistance { i, j, value: v });
            }
        }
    }
    let diam = dist
        .iter()
        .flat_map(|r| r.iter().copied())
        .fold(0.0, f64::max);
    let tol = METRIC_TOLERANCE * diam;
    for (i, row) in dist.iter().enumerate() {
        if row[i] != 0.0 {
            return Err(Error::NonzeroDiagonal { i, value: row[i] });
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (dist[i][j] - dist[j][i]).abs() > tol {
                return Err(Error::Asymmetric {
                    i,
                    j,
                    dij: dist[i][j],
                    dji: dist[j][i],
                });
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let via = dist[i][j] + dist[j][k];
                if dist[i][k] > via + tol {
                    return Err(Error::Triangle {
                        i,
                        j,
                        k,
                        dik: dist[i][k],
                        via,
                    });
                }
            }
        }
    }
    for (i, &w) in weight.iter().enumerate() {
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::NonpositiveWeight { i, value: w });
        }
    }
    let mut flat = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            // Mirror the upper triangle so the stored matrix is exactly symmetric.
            flat.push(if j >= i { dist[i][j] } else { dist[j][i] });
        }
    }
    Ok(FiniteMetricMeasureSpace {
        n,
        dist: flat,
        weight,
        label: None,
        embedding: None,
    })
}

impl FiniteMetricMeasureSpace {
    /// Same as [`validate_space`].
    pub fn new(dist: Vec<Vec<f64>>, weight: Vec<f64>) -> Result<Self> {
        validate_space(dist, weight)
    }

    /// Builds a space from a metric that is correct by construction
    /// (coordinate or path metrics). Only shape and weights are checked.
    pub(crate) fn from_trusted(
        n: usize,
        dist: Vec<f64>,
        weight: Vec<f64>,
        embedding: Option<Embedding>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptySpace);
        }
        debug_assert_eq!(dist.len(), n * n);
        if weight.len() != n {
            return Err(Error::WeightLength {
                got: weight.len(),
                expected: n,
            });
        }
        for (i, &w) in weight.iter().enumerate() {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::NonpositiveWeight { i, value: w });
            }
        }
        Ok(Self {
            n,
            dist,
            weight,
            label: None,
            embedding,
        })
    }

    /// Points given by coordinates; distances are computed here with the
    /// requested metric.
    pub fn from_coords(coords: Vec<Vec<f64>>, metric: CoordMetric, weight: Vec<f64>) -> Result<Self> {
        let n = coords.len();
        if n == 0 {
            return Err(Error::EmptySpace);
        }
        let dim = coords[0].len();
        if let Some((i, c)) = coords.iter().enumerate().find(|(_, c)| c.len() != dim) {
            return Err(Error::param(format!(
                "coordinate {i} has dimension {}, expected {dim}",
                c.len()
            )));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::param("coordinates must be finite"));
        }
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = match metric {
                    CoordMetric::L2 => l2(&coords[i], &coords[j]),
                    CoordMetric::Linf => linf(&coords[i], &coords[j]),
                };
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        let embedding = match metric {
            CoordMetric::L2 => Some(Embedding::Euclidean { coords }),
            CoordMetric::Linf => None,
        };
        Self::from_trusted(n, dist, weight, embedding)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// Attaches model-space coordinates; they must reproduce the metric.
    pub fn with_embedding(mut self, embedding: Embedding) -> Result<Self> {
        let len = match &embedding {
            Embedding::Circle { coords, .. } => coords.len(),
            Embedding::Euclidean { coords } => coords.len(),
        };
        if len != self.n {
            return Err(Error::Mismatch(format!("embedding has {len} points for a space of {}", self.n)));
        }
        for i in 0..self.n {
            for j in 0..self.n {
                let e = embedding.cross_distance(i, &embedding, j).unwrap_or(f64::NAN);
                let d = self.d(i, j);
                if !((e - d).abs() <= 1e-9 * d.max(1.0)) {
                    return Err(Error::Mismatch(format!("embedding distance {e} differs from d({i}, {j}) = {d}")));
                }
            }
        }
        self.embedding = Some(embedding);
        Ok(self)
    }

    /// Replaces the weights, keeping the metric.
    pub fn with_weights(&self, weight: Vec<f64>) -> Result<Self> {
        Self::from_trusted(self.n, self.dist.clone(), weight, self.embedding.clone())
            .map(|s| Self { label: self.label.clone(), ..s })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }

    /// Row `i` of the distance matrix.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.dist[i * self.n..(i + 1) * self.n]
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weight[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn embedding(&self) -> Option<&Embedding> {
        self.embedding.as_ref()
    }

    /// The distance matrix as nested rows.
    pub fn dist_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.weight.iter().sum()
    }

    pub fn diameter(&self) -> f64 {
        self.dist.iter().copied().fold(0.0, f64::max)
    }

    /// Smallest positive distance, or `None` for a one-point space.
    pub fn min_positive_distance(&self) -> Option<f64> {
        self.dist
            .iter()
            .copied()
            .filter(|&d| d > 0.0)
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))))
    }

    /// Indices of the open ball `B(x, r)`, ascending.
    pub fn ball(&self, x: usize, r: f64) -> Vec<usize> {
        self.row(x)
            .iter()
            .enumerate()
            .filter(|(_, &d)| d < r)
            .map(|(j, _)| j)
            .collect()
    }

    /// `|B(x, r)|`, which includes the mass of `x` itself.
    pub fn ball_mass(&self, x: usize, r: f64) -> f64 {
        self.row(x)
            .iter()
            .zip(&self.weight)
            .filter(|(&d, _)| d < r)
            .map(|(_, &w)| w)
            .sum()
    }

    /// Mass of an index subset.
    pub fn mass(&self, subset: &[usize]) -> f64 {
        subset.iter().map(|&i| self.weight[i]).sum()
    }

    pub(crate) fn check_index(&self, index: usize) -> Result<()> {
        if index < self.n {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange { index, n: self.n })
        }
    }

    /// Connected components of the graph joining points at distance `< r`.
    /// Components are labelled in order of their smallest member.
    pub fn components(&self, r: f64) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.n];
        let mut next = 0;
        for s in 0..self.n {
            if label[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            label[s] = next;
            while let Some(x) = stack.pop() {
                for y in 0..self.n {
                    if label[y] == usize::MAX && self.d(x, y) < r {
                        label[y] = next;
                        stack.push(y);
                    }
                }
            }
            next += 1;
        }
        label
    }

    /// Restriction to a subset of points (metric and weights inherited).
    pub fn subspace(&self, subset: &[usize]) -> Result<Self> {
        if subset.is_empty() {
            return Err(Error::EmptySubset);
        }
        for &i in subset {
            self.check_index(i)?;
        }
        let m = subset.len();
        let mut dist = vec![0.0; m * m];
        for (a, &i) in subset.iter().enumerate() {
            for (b, &j) in subset.iter().enumerate() {
                dist[a * m + b] = self.d(i, j);
            }
        }
        let weight = subset.iter().map(|&i| self.weight[i]).collect();
        let embedding = self.embedding.as_ref().map(|e| match e {
            Embedding::Circle {
                circumference,
                coords,
            } => Embedding::Circle {
                circumference: *circumference,
                coords: subset.iter().map(|&i| coords[i]).collect(),
            },
            Embedding::Euclidean { coords } => Embedding::Euclidean {
                coords: subset.iter().map(|&i| coords[i].clone()).collect(),
            },
        });
        Self::from_trusted(m, dist, weight, embedding)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_point_space_is_valid() {
        let s = validate_space(vec![vec![0.0]], vec![1.0]).unwrap();
        assert_eq!(s.n(), 1);
        assert_eq!(s.diameter(), 0.0);
        assert_eq!(s.min_positive_distance(), None);
    }

    #[test]
    fn two_point_space_is_valid() {
        let s = validate_space(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![0.5, 0.5]).unwrap();
        assert_eq!(s.d(0, 1), 1.0);
        assert_eq!(s.total_mass(), 1.0);
    }

    #[test]
    fn asymmetric_matrix_is_rejected() {
        let err = validate_space(vec![vec![0.0, 1.0], vec![2.0, 0.0]], vec![0.5, 0.5]).unwrap_err();
        assert!(matches!(err, Error::Asymmetric { i: 0, j: 1, .. }), "{err}");
    }

    #[test]
    fn nonzero_diagonal_is_rejected() {
        let err = validate_space(vec![vec![0.1, 1.0], vec![1.0, 0.0]], vec![1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NonzeroDiagonal { i: 0, .. }));
    }

    #[test]
    fn triangle_violation_names_indices() {
        let d = vec![
            vec![0.0, 1.0, 3.0],
            vec![1.0, 0.0, 1.0],
            vec![3.0, 1.0, 0.0],
        ];
        let err = validate_space(d, vec![1.0; 3]).unwrap_err();
        match err {
            Error::Triangle { i, j, k, .. } => assert_eq!((i, j, k), (0, 1, 2)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn nonpositive_weight_is_rejected() {
        let err = validate_space(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::NonpositiveWeight { i: 1, .. }));
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(
            validate_space(vec![vec![0.0, 1.0], vec![1.0]], vec![1.0, 1.0]),
            Err(Error::NotSquare { row: 1, .. })
        ));
        assert!(matches!(
            validate_space(vec![vec![0.0]], vec![1.0, 1.0]),
            Err(Error::WeightLength { got: 2, expected: 1 })
        ));
        assert!(matches!(validate_space(vec![], vec![]), Err(Error::EmptySpace)));
    }

    #[test]
    fn balls_are_open() {
        let s = sample_interval(3, 2.0).unwrap();
        // points at 0, 1, 2
        assert_eq!(s.ball(0, 1.0), vec![0]);
        assert_eq!(s.ball(0, 1.0 + 1e-12), vec![0, 1]);
        assert!((s.ball_mass(1, 1.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn components_follow_radius() {
        let s = FiniteMetricMeasureSpace::from_coords(
            vec![vec![0.0], vec![0.5], vec![3.0]],
            CoordMetric::L2,
            vec![1.0; 3],
        )
        .unwrap();
        assert_eq!(s.components(1.0), vec![0, 0, 1]);
        assert_eq!(s.components(0.5), vec![0, 1, 2]);
    }

    #[test]
    fn linf_coordinates() {
        let s = FiniteMetricMeasureSpace::from_coords(
            vec![vec![0.0, 0.0], vec![1.0, 2.0]],
            CoordMetric::Linf,
            vec![1.0, 1.0],
        )
        .unwrap();
        assert_eq!(s.d(0, 1), 2.0);
        assert!(s.embedding().is_none());
    }
}
