//! Convex functionals on maps into CAT(0) targets and their resolvents.
//!
//! Maps carry the distance `d(u, v)² = Σ_x w_x d_Y(u(x), v(x))²`. The
//! resolvent `J_λ u` minimizes `λ E(v) + d(u, v)²`; in the quadratic real
//! case this is `(I + λA)⁻¹ u`. For the convention `E(v) + d(u, v)² / (2τ)`
//! take `λ = 2τ`.

mod flow;

pub use flow::{
    harmonic_flow, resolvent_identities_check, semigroup, FlowSchedule, FlowTrace,
    IdentityReport, SemigroupOptions, SemigroupResult,
};

use crate::energy::EnergyForm;
use crate::error::{Error, Result};
use crate::mapping::{lp_distance, MappedFunction};
use crate::metric::FiniteMetricMeasureSpace as Space;
use crate::target::{PowerTerm, TargetPoint, TargetSpace};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// `E(v) = Σ_{x<y} q_xy d_Y(v_x, v_y)^p + Σ_x c_x d_Y(v_x, a_x)^s`.
///
/// Every such functional is convex along pointwise geodesics in a CAT(0)
/// target. Energy forms give `q_xy = (k_xy + k_yx) / 2`.
#[derive(Clone, Debug)]
pub struct ConvexFunctional {
    domain: Arc<Space>,
    target: TargetSpace,
    p: f64,
    /// Symmetric adjacency: `(y, q_xy)` in both rows.
    couplings: Vec<Vec<(usize, f64)>>,
    /// `(a_x, c_x)` per point.
    anchors: Vec<Option<(TargetPoint, f64)>>,
    anchor_exponent: f64,
    lower_bound: f64,
}

impl ConvexFunctional {
    /// The energy of an assembled form, for maps into `target`.
    pub fn from_form(form: &EnergyForm, target: TargetSpace) -> Self {
        let n = form.domain().n();
        let mut couplings: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (x, row) in form.rows().iter().enumerate() {
            for &(y, _, k) in row {
                couplings[x].push((y, 0.5 * k));
                couplings[y].push((x, 0.5 * k));
            }
        }
        for row in &mut couplings {
            row.sort_by_key(|&(y, _)| y);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for &(y, q) in row.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == y => last.1 += q,
                    _ => merged.push((y, q)),
                }
            }
            *row = merged;
        }
        Self {
            domain: form.domain().clone(),
            target,
            p: form.config().p,
            couplings,
            anchors: vec![None; n],
            anchor_exponent: 2.0,
            lower_bound: 0.0,
        }
    }

    /// `E ≡ 0`.
    pub fn zero(domain: Arc<Space>, target: TargetSpace) -> Self {
        let n = domain.n();
        Self {
            domain,
            target,
            p: 2.0,
            couplings: vec![Vec::new(); n],
            anchors: vec![None; n],
            anchor_exponent: 2.0,
            lower_bound: 0.0,
        }
    }

    /// `E(v) = Σ q_xy d_Y(v_x, v_y)^p` over the listed pairs `(x, y, q_xy)`;
    /// repeated pairs add up.
    pub fn from_couplings(domain: Arc<Space>, target: TargetSpace, p: f64, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if !(p >= 1.0) {
            return Err(Error::param(format!("coupling exponent must be >= 1, got {p}")));
        }
        let mut f = Self::zero(domain, target);
        f.p = p;
        for &(x, y, q) in edges {
            f.domain.check_index(x)?;
            f.domain.check_index(y)?;
            if x == y || !(q >= 0.0) || !q.is_finite() {
                return Err(Error::param(format!("invalid coupling ({x}, {y}, {q})")));
            }
            for (a, b) in [(x, y), (y, x)] {
                match f.couplings[a].iter_mut().find(|(z, _)| *z == b) {
                    Some(entry) => entry.1 += q,
                    None => f.couplings[a].push((b, q)),
                }
            }
        }
        for row in &mut f.couplings {
            row.sort_by_key(|&(y, _)| y);
        }
        Ok(f)
    }

    /// `E(v) = Σ_x c_x d_Y(v_x, a_x)^s`.
    pub fn potential(
        domain: Arc<Space>,
        target: TargetSpace,
        anchors: Vec<TargetPoint>,
        coefs: Vec<f64>,
        exponent: f64,
    ) -> Result<Self> {
        let n = domain.n();
        if anchors.len() != n || coefs.len() != n {
            return Err(Error::WeightLength {
                got: anchors.len().min(coefs.len()),
                expected: n,
            });
        }
        for a in &anchors {
            target.check_point(a)?;
        }
        if coefs.iter().any(|c| !(*c >= 0.0)) || !(exponent >= 1.0) {
            return Err(Error::param("potential needs coefficients >= 0 and exponent >= 1"));
        }
        let mut f = Self::zero(domain, target);
        f.anchors = anchors.into_iter().zip(coefs).map(Some).collect();
        f.anchor_exponent = exponent;
        Ok(f)
    }

    /// Replaces the potential terms.
    pub fn with_potential(mut self, anchors: Vec<TargetPoint>, coefs: Vec<f64>, exponent: f64) -> Result<Self> {
        let pot = Self::potential(self.domain.clone(), self.target.clone(), anchors, coefs, exponent)?;
        self.anchors = pot.anchors;
        self.anchor_exponent = exponent;
        Ok(self)
    }

    /// A known lower bound for `inf E`, used by the step bound.
    pub fn with_lower_bound(mut self, inf: f64) -> Self {
        self.lower_bound = inf;
        self
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    pub fn domain(&self) -> &Arc<Space> {
        &self.domain
    }

    pub fn target(&self) -> &TargetSpace {
        &self.target
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    fn check(&self, u: &MappedFunction) -> Result<()> {
        if !crate::mapping::same_space(u.domain(), &self.domain) {
            return Err(Error::Mismatch("map and functional live on different domains".into()));
        }
        if u.target() != &self.target {
            return Err(Error::Mismatch("map and functional use different targets".into()));
        }
        Ok(())
    }

    pub fn eval(&self, u: &MappedFunction) -> Result<f64> {
        self.check(u)?;
        let t = &self.target;
        let mut s = 0.0;
        for (x, row) in self.couplings.iter().enumerate() {
            for &(y, q) in row.iter().filter(|(y, _)| *y > x) {
                s += q * t.dist(u.value(x), u.value(y)).powf(self.p);
            }
            if let Some((a, c)) = &self.anchors[x] {
                s += c * t.dist(u.value(x), a).powf(self.anchor_exponent);
            }
        }
        Ok(s)
    }

    /// `E(γ(t)) − (1−t) E(u) − t E(v)` along the pointwise geodesic.
    pub fn convexity_defect(&self, u: &MappedFunction, v: &MappedFunction, t: f64) -> Result<f64> {
        u.compatible(v)?;
        let g = map_geodesic(u, v, t)?;
        Ok(self.eval(&g)? - (1.0 - t) * self.eval(u)? - t * self.eval(v)?)
    }

    fn is_linear_quadratic(&self) -> Option<usize> {
        match self.target {
            TargetSpace::Euclidean { dim } if self.p == 2.0 && self.anchor_exponent == 2.0 => Some(dim),
            _ => None,
        }
    }
}

/// Pointwise geodesic between two maps.
pub fn map_geodesic(u: &MappedFunction, v: &MappedFunction, t: f64) -> Result<MappedFunction> {
    u.compatible(v)?;
    let values = u
        .values()
        .iter()
        .zip(v.values())
        .map(|(a, b)| u.target().geodesic(a, b, t))
        .collect::<Result<Vec<_>>>()?;
    u.with_values(values)
}

/// `d(u, v)` in `L²(w)`.
pub fn map_distance(u: &MappedFunction, v: &MappedFunction) -> Result<f64> {
    lp_distance(u, v, 2.0)
}

/// Stopping rule for the blockwise resolvent solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Largest single-point move in a sweep, relative to `1 + max |u|`
    /// (target distance to the basepoint), below which sweeping stops.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_sweeps: 200_000,
        }
    }
}

/// Sweep count and final movement of a resolvent solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub sweeps: usize,
    pub residual: f64,
}

/// `J_λ u`: cyclic blockwise minimization of `λ E(v) + d(u, v)²`.
///
/// Each sweep visits the points in index order and replaces `v_x` by the
/// exact minimizer of its local objective
/// `λ Σ_y q_xy d(z, v_y)^p + λ c_x d(z, a_x)^s + w_x d(z, u_x)²`,
/// starting from `v = u`.
pub fn resolvent(
    e: &ConvexFunctional,
    u: &MappedFunction,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<(MappedFunction, SolveStats)> {
    e.check(u)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::param(format!("resolvent parameter must be positive, got {lambda}")));
    }
    let tol = opts.tol * solver_scale(e, u);
    if let Some(lin) = LinearSweeper::new(e) {
        let u0 = lin.flatten(u);
        let mut v = vec![0.0; u0.len()];
        let stats = lin.solve(&u0, lambda, tol, opts.max_sweeps, &mut v)?;
        return Ok((lin.unflatten(u, &v)?, stats));
    }
    let m = &e.domain;
    let mut v: Vec<TargetPoint> = u.values().to_vec();
    let mut residual = f64::INFINITY;
    for sweep in 1..=opts.max_sweeps {
        residual = 0.0;
        for x in 0..m.n() {
            let mut terms: Vec<PowerTerm> = Vec::with_capacity(e.couplings[x].len() + 2);
            let neighbours: Vec<TargetPoint> = e.couplings[x].iter().map(|&(y, _)| v[y].clone()).collect();
            for (&(_, q), point) in e.couplings[x].iter().zip(&neighbours) {
                terms.push(PowerTerm {
                    coef: lambda * q,
                    point,
                    exponent: e.p,
                });
            }
            if let Some((a, c)) = &e.anchors[x] {
                terms.push(PowerTerm {
                    coef: lambda * c,
                    point: a,
                    exponent: e.anchor_exponent,
                });
            }
            terms.push(PowerTerm {
                coef: m.weight(x),
                point: u.value(x),
                exponent: 2.0,
            });
            let z = e.target.minimize_power_sum(&terms)?;
            residual = residual.max(e.target.dist(&z, &v[x]));
            v[x] = z;
        }
        if residual <= tol {
            return Ok((
                u.with_values(v)?,
                SolveStats { sweeps: sweep, residual },
            ));
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_sweeps,
        residual,
    })
}

/// Same sweeps in flat coordinates: every local objective is a weighted
/// sum of squares with the weighted average as its minimizer.
pub(crate) struct LinearSweeper<'a> {
    e: &'a ConvexFunctional,
    dim: usize,
    anchors: Vec<Option<(Vec<f64>, f64)>>,
}

fn coords(p: &TargetPoint) -> &[f64] {
    match p {
        TargetPoint::Vector(v) => v,
        _ => unreachable!("checked Euclidean target"),
    }
}

impl<'a> LinearSweeper<'a> {
    pub(crate) fn new(e: &'a ConvexFunctional) -> Option<Self> {
        let dim = e.is_linear_quadratic()?;
        let anchors = e
            .anchors
            .iter()
            .map(|a| a.as_ref().map(|(p, c)| (coords(p).to_vec(), *c)))
            .collect();
        Some(Self { e, dim, anchors })
    }

    pub(crate) fn flatten(&self, u: &MappedFunction) -> Vec<f64> {
        u.values().iter().flat_map(|p| coords(p).iter().copied()).collect()
    }

    pub(crate) fn unflatten(&self, u: &MappedFunction, v: &[f64]) -> Result<MappedFunction> {
        u.with_values(v.chunks(self.dim).map(|c| TargetPoint::Vector(c.to_vec())).collect())
    }

    /// Sweeps from `v = u0` in place; `tol` is absolute.
    pub(crate) fn solve(&self, u0: &[f64], lambda: f64, tol: f64, max_sweeps: usize, v: &mut [f64]) -> Result<SolveStats> {
        let (e, dim) = (self.e, self.dim);
        let m = &e.domain;
        v.copy_from_slice(u0);
        // z = u0_x + Σ c_j (p_j − u0_x) / (w_x + Σ c_j), exact when no terms act
        let mut z = vec![0.0; dim];
        let mut residual = f64::INFINITY;
        for sweep in 1..=max_sweeps {
            residual = 0.0f64;
            for x in 0..m.n() {
                let base = &u0[x * dim..(x + 1) * dim];
                let mut total = m.weight(x);
                z.iter_mut().for_each(|zk| *zk = 0.0);
                for &(y, q) in &e.couplings[x] {
                    let c = lambda * q;
                    total += c;
                    for k in 0..dim {
                        z[k] += c * (v[y * dim + k] - base[k]);
                    }
                }
                if let Some((a, c)) = &self.anchors[x] {
                    let c = lambda * c;
                    total += c;
                    for k in 0..dim {
                        z[k] += c * (a[k] - base[k]);
                    }
                }
                let mut mv = 0.0;
                for k in 0..dim {
                    let nz = base[k] + z[k] / total;
                    mv += (nz - v[x * dim + k]).powi(2);
                    v[x * dim + k] = nz;
                }
                residual = residual.max(mv.sqrt());
            }
            if residual <= tol {
                return Ok(SolveStats { sweeps: sweep, residual });
            }
        }
        Err(Error::NoConvergence {
            iterations: max_sweeps,
            residual,
        })
    }
}

pub(crate) fn solver_scale(e: &ConvexFunctional, u: &MappedFunction) -> f64 {
    let base = e.target.basepoint();
    1.0 + u.values().iter().map(|v| e.target.dist(v, &base)).fold(0.0, f64::max)
}

/// `E^λ(u) = λ E(J_λ u) + d(u, J_λ u)²` together with `J_λ u`.
pub fn moreau_yosida(
    e: &ConvexFunctional,
    u: &MappedFunction,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<(f64, MappedFunction)> {
    let (j, _) = resolvent(e, u, lambda, opts)?;
    let d = map_distance(u, &j)?;
    Ok((lambda * e.eval(&j)? + d * d, j))
}
