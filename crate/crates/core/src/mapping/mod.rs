//! Maps from a measured space into a target, their `L^p` distances, and the
//! bookkeeping for sequences of spaces converging to a limit: measure
//! approximations, pushforwards and the `L^p`-convergence table.

use crate::error::{Error, Result};
use crate::metric::FiniteMetricMeasureSpace as Space;
use crate::target::{TargetPoint, TargetSpace};
use serde::Serialize;
use std::sync::Arc;

/// A map `u : M → Y`, one target value per domain point.
#[derive(Clone, Debug, PartialEq)]
pub struct MappedFunction {
    domain: Arc<Space>,
    target: TargetSpace,
    values: Vec<TargetPoint>,
}

impl MappedFunction {
    pub fn new(domain: Arc<Space>, target: TargetSpace, values: Vec<TargetPoint>) -> Result<Self> {
        if values.len() != domain.n() {
            return Err(Error::Mismatch(format!(
                "{} values for a domain of {} points",
                values.len(),
                domain.n()
            )));
        }
        for v in &values {
            target.check_point(v)?;
        }
        Ok(Self {
            domain,
            target,
            values,
        })
    }

    /// A real-valued map.
    pub fn real(domain: Arc<Space>, values: &[f64]) -> Result<Self> {
        let values = values.iter().map(|&x| TargetPoint::from(x)).collect();
        Self::new(domain, TargetSpace::real(), values)
    }

    pub fn constant(domain: Arc<Space>, target: TargetSpace, value: TargetPoint) -> Result<Self> {
        let values = vec![value; domain.n()];
        Self::new(domain, target, values)
    }

    /// The constant map at the target basepoint.
    pub fn basepoint_map(domain: Arc<Space>, target: TargetSpace) -> Self {
        let values = vec![target.basepoint(); domain.n()];
        Self {
            domain,
            target,
            values,
        }
    }

    pub(crate) fn from_parts(domain: Arc<Space>, target: TargetSpace, values: Vec<TargetPoint>) -> Self {
        debug_assert_eq!(values.len(), domain.n());
        Self {
            domain,
            target,
            values,
        }
    }

    pub fn domain(&self) -> &Arc<Space> {
        &self.domain
    }

    pub fn target(&self) -> &TargetSpace {
        &self.target
    }

    pub fn values(&self) -> &[TargetPoint] {
        &self.values
    }

    pub fn value(&self, i: usize) -> &TargetPoint {
        &self.values[i]
    }

    /// Values of a real-valued map.
    pub fn scalars(&self) -> Option<Vec<f64>> {
        self.values.iter().map(|v| v.scalar()).collect()
    }

    /// Same map with different values.
    pub fn with_values(&self, values: Vec<TargetPoint>) -> Result<Self> {
        Self::new(self.domain.clone(), self.target.clone(), values)
    }

    /// `d_Y(u(x), v(x))` at every point.
    pub fn pointwise_distance(&self, other: &Self) -> Result<Vec<f64>> {
        self.compatible(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| self.target.dist(a, b))
            .collect())
    }

    pub(crate) fn compatible(&self, other: &Self) -> Result<()> {
        if !same_space(&self.domain, &other.domain) {
            return Err(Error::Mismatch("maps live on different domains".into()));
        }
        if self.target != other.target {
            return Err(Error::Mismatch("maps take values in different targets".into()));
        }
        Ok(())
    }
}

pub(crate) fn same_space(a: &Arc<Space>, b: &Arc<Space>) -> bool {
    Arc::ptr_eq(a, b) || a.as_ref() == b.as_ref()
}

/// `d_{L^p}(u, v) = (Σ_x w_x d_Y(u(x), v(x))^p)^{1/p}`.
pub fn lp_distance(u: &MappedFunction, v: &MappedFunction, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::param(format!("L^p exponent must be >= 1, got {p}")));
    }
    let d = u.pointwise_distance(v)?;
    let s: f64 = d
        .iter()
        .zip(u.domain.weights())
        .map(|(di, w)| w * di.powf(p))
        .sum();
    Ok(s.powf(1.0 / p))
}

/// A partial map `φ : Dom(φ) ⊂ M_i → M`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureApproximation {
    source: Arc<Space>,
    target: Arc<Space>,
    map: Vec<Option<usize>>,
}

impl MeasureApproximation {
    pub fn new(source: Arc<Space>, target: Arc<Space>, map: Vec<Option<usize>>) -> Result<Self> {
        if map.len() != source.n() {
            return Err(Error::Mismatch(format!(
                "map has {} entries for a source of {} points",
                map.len(),
                source.n()
            )));
        }
        for &j in map.iter().flatten() {
            target.check_index(j)?;
        }
        Ok(Self {
            source,
            target,
            map,
        })
    }

    pub fn identity(space: Arc<Space>) -> Self {
        let map = (0..space.n()).map(Some).collect();
        Self {
            source: space.clone(),
            target: space,
            map,
        }
    }

    /// Nearest-point map between two samples of the same model space,
    /// using the recorded embeddings (ties to the lowest index).
    pub fn nearest(source: Arc<Space>, target: Arc<Space>) -> Result<Self> {
        let map = nearest_point_map(&source, &target)?
            .into_iter()
            .map(Some)
            .collect();
        Ok(Self {
            source,
            target,
            map,
        })
    }

    pub fn source(&self) -> &Arc<Space> {
        &self.source
    }

    pub fn target(&self) -> &Arc<Space> {
        &self.target
    }

    pub fn map(&self) -> &[Option<usize>] {
        &self.map
    }

    /// Pushforward weights `φ_* w` on the target points.
    pub fn pushforward_weights(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.target.n()];
        for (i, j) in self.map.iter().enumerate() {
            if let Some(j) = j {
                out[*j] += self.source.weight(i);
            }
        }
        out
    }
}

/// Nearest-point map between two spaces sampled from the same model space.
pub fn nearest_point_map(from: &Space, to: &Space) -> Result<Vec<usize>> {
    let (Some(ef), Some(et)) = (from.embedding(), to.embedding()) else {
        return Err(Error::Unsupported(
            "nearest-point maps need spaces with recorded embeddings".into(),
        ));
    };
    (0..from.n())
        .map(|i| {
            let mut best = (f64::INFINITY, 0);
            for j in 0..to.n() {
                let d = ef.cross_distance(i, et, j).ok_or_else(|| {
                    Error::Mismatch("embeddings belong to different model spaces".into())
                })?;
                if d < best.0 {
                    best = (d, j);
                }
            }
            Ok(best.1)
        })
        .collect()
}

/// `Φ_i u := u ∘ φ_i` on `Dom(φ_i)` and `fill` elsewhere (the target
/// basepoint when `fill` is `None`).
pub fn pushforward(
    u: &MappedFunction,
    phi: &MeasureApproximation,
    fill: Option<&TargetPoint>,
) -> Result<MappedFunction> {
    if !same_space(&phi.target, &u.domain) {
        return Err(Error::Mismatch(
            "the measure approximation does not land in the domain of u".into(),
        ));
    }
    let fill = match fill {
        Some(f) => {
            u.target.check_point(f)?;
            f.clone()
        }
        None => u.target.basepoint(),
    };
    let values = phi
        .map
        .iter()
        .map(|j| j.map_or_else(|| fill.clone(), |j| u.values[j].clone()))
        .collect();
    Ok(MappedFunction::from_parts(phi.source.clone(), u.target.clone(), values))
}

/// `ũ_ε`: the weighted Fréchet mean of `u` over each open ball `B(x, ε)`.
pub fn smooth(u: &MappedFunction, eps: f64) -> Result<MappedFunction> {
    if !(eps > 0.0) {
        return Err(Error::param(format!("smoothing radius must be positive, got {eps}")));
    }
    let m = &u.domain;
    let values = (0..m.n())
        .map(|x| {
            let ball = m.ball(x, eps);
            let pts: Vec<TargetPoint> = ball.iter().map(|&y| u.values[y].clone()).collect();
            let w: Vec<f64> = ball.iter().map(|&y| m.weight(y)).collect();
            u.target.frechet_mean(&pts, &w)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MappedFunction::from_parts(u.domain.clone(), u.target.clone(), values))
}

/// Rows are smoothing radii, columns the sequence index.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LpConvergenceTable {
    pub eps: Vec<f64>,
    pub entries: Vec<Vec<f64>>,
    /// Largest entry over the smaller half of the radii and the later half
    /// of the sequence: the finite stand-in for `lim_ε limsup_i`.
    pub tail: f64,
}

/// `d_{L^p}(Φ_i ũ_ε, u_i)` for every radius `ε` and every term of the
/// sequence `(u_i, φ_i)`.
pub fn lp_convergence_table(
    seq: &[(MappedFunction, MeasureApproximation)],
    u: &MappedFunction,
    p: f64,
    eps: &[f64],
) -> Result<LpConvergenceTable> {
    if seq.is_empty() || eps.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut entries = Vec::with_capacity(eps.len());
    for &e in eps {
        let smooth_u = smooth(u, e)?;
        let row = seq
            .iter()
            .map(|(ui, phi)| lp_distance(&pushforward(&smooth_u, phi, None)?, ui, p))
            .collect::<Result<Vec<_>>>()?;
        entries.push(row);
    }
    let mut by_radius: Vec<usize> = (0..eps.len()).collect();
    by_radius.sort_by(|&a, &b| eps[a].total_cmp(&eps[b]));
    let small = &by_radius[..eps.len().div_ceil(2)];
    let late = seq.len() / 2;
    let tail = small
        .iter()
        .flat_map(|&r| entries[r][late..].iter().cloned())
        .fold(0.0, f64::max);
    Ok(LpConvergenceTable {
        eps: eps.to_vec(),
        entries,
        tail,
    })
}

/// Largest `|Σ_{Dom φ} f(φ(x)) w_x − Σ_y f(y) w_y|` over a dictionary of
/// test functions tabulated on the target points of `φ`.
pub fn check_measure_approximation(phi: &MeasureApproximation, dictionary: &[Vec<f64>]) -> Result<f64> {
    if dictionary.is_empty() {
        return Err(Error::EmptySequence);
    }
    let push = phi.pushforward_weights();
    let mut worst: f64 = 0.0;
    for (k, f) in dictionary.iter().enumerate() {
        if f.len() != phi.target.n() {
            return Err(Error::Mismatch(format!(
                "test function {k} has {} values for {} target points",
                f.len(),
                phi.target.n()
            )));
        }
        let defect: f64 = f
            .iter()
            .zip(&push)
            .zip(phi.target.weights())
            .map(|((fv, pw), w)| fv * (pw - w))
            .sum();
        worst = worst.max(defect.abs());
    }
    Ok(worst)
}

/// `1, cos kθ, sin kθ` for `k = 1..=modes`, tabulated on a circle sample.
pub fn trigonometric_dictionary(space: &Space, modes: usize) -> Result<Vec<Vec<f64>>> {
    let Some(crate::metric::Embedding::Circle {
        circumference,
        coords,
    }) = space.embedding()
    else {
        return Err(Error::Unsupported("trigonometric dictionary needs a circle sample".into()));
    };
    let scale = 2.0 * std::f64::consts::PI / circumference;
    let mut dict = vec![vec![1.0; space.n()]];
    for k in 1..=modes {
        let kf = k as f64 * scale;
        dict.push(coords.iter().map(|t| (kf * t).cos()).collect());
        dict.push(coords.iter().map(|t| (kf * t).sin()).collect());
    }
    Ok(dict)
}

/// Per-pair traces of `|d_{X_i}(f_i x, f_i y) − d_X(x, y)|`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelationReport {
    pub pairs: Vec<(usize, usize)>,
    /// `traces[k][i]` for pair `k` and sequence index `i`.
    pub traces: Vec<Vec<f64>>,
    /// Pairs whose last defect exceeds the first one: the defect grows
    /// instead of settling.
    pub blowup: Vec<bool>,
}

/// Convergence traces for the distance axioms of an asymptotic relation
/// realized by maps `f_i : X → X_i`.
pub fn asymptotic_relation_diagnostics(
    x: &Space,
    seq: &[(Space, Vec<usize>)],
    pairs: &[(usize, usize)],
) -> Result<RelationReport> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    for (xi, f) in seq {
        if f.len() != x.n() {
            return Err(Error::Mismatch(format!(
                "map has {} entries for a domain of {} points",
                f.len(),
                x.n()
            )));
        }
        for &j in f {
            xi.check_index(j)?;
        }
    }
    for &(a, b) in pairs {
        x.check_index(a)?;
        x.check_index(b)?;
    }
    let traces: Vec<Vec<f64>> = pairs
        .iter()
        .map(|&(a, b)| {
            seq.iter()
                .map(|(xi, f)| (xi.d(f[a], f[b]) - x.d(a, b)).abs())
                .collect()
        })
        .collect();
    let tol = 1e-12 * x.diameter().max(1.0);
    let blowup = traces
        .iter()
        .map(|t| t.last().unwrap() > &(t[0] + tol))
        .collect();
    Ok(RelationReport {
        pairs: pairs.to_vec(),
        traces,
        blowup,
    })
}
