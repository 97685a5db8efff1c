//! Resolvent iterates: the semigroup `T_t = lim_n (J_{t/n})^n` and
//! proximal flows towards minimizers.

use super::{
    map_distance, moreau_yosida, resolvent, solver_scale, ConvexFunctional, LinearSweeper, SolverOptions,
};
use crate::error::{Error, Result};
use crate::mapping::MappedFunction;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Dyadic refinement for [`semigroup`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemigroupOptions {
    pub n_start: usize,
    /// Stop once `d((J_{t/n})^n u, (J_{t/2n})^{2n} u) < tol`.
    pub tol: f64,
    pub max_n: usize,
    pub solver: SolverOptions,
}

impl Default for SemigroupOptions {
    fn default() -> Self {
        Self {
            n_start: 16,
            tol: 2.5e-7,
            max_n: 1 << 22,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SemigroupResult {
    pub map: MappedFunction,
    /// Number of resolvent steps in the returned iterate.
    pub n: usize,
    /// Last dyadic Cauchy defect.
    pub defect: f64,
}

fn iterate(e: &ConvexFunctional, u: &MappedFunction, lambda: f64, n: usize, opts: &SolverOptions) -> Result<MappedFunction> {
    if let Some(lin) = LinearSweeper::new(e) {
        let tol = opts.tol * solver_scale(e, u);
        let mut a = lin.flatten(u);
        let mut b = vec![0.0; a.len()];
        for _ in 0..n {
            lin.solve(&a, lambda, tol, opts.max_sweeps, &mut b)?;
            std::mem::swap(&mut a, &mut b);
        }
        return lin.unflatten(u, &a);
    }
    let mut v = u.clone();
    for _ in 0..n {
        v = resolvent(e, &v, lambda, opts)?.0;
    }
    Ok(v)
}

/// `T_t u` by doubling `n` until successive iterates agree within `tol`.
pub fn semigroup(
    e: &ConvexFunctional,
    u: &MappedFunction,
    t: f64,
    opts: &SemigroupOptions,
) -> Result<SemigroupResult> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::param(format!("semigroup time must be >= 0, got {t}")));
    }
    if opts.n_start == 0 {
        return Err(Error::param("semigroup needs n_start >= 1"));
    }
    if t == 0.0 {
        return Ok(SemigroupResult {
            map: u.clone(),
            n: 0,
            defect: 0.0,
        });
    }
    let mut n = opts.n_start;
    let mut prev = iterate(e, u, t / n as f64, n, &opts.solver)?;
    let mut defect = f64::INFINITY;
    while 2 * n <= opts.max_n {
        n *= 2;
        let cur = iterate(e, u, t / n as f64, n, &opts.solver)?;
        defect = map_distance(&prev, &cur)?;
        prev = cur;
        if defect < opts.tol {
            return Ok(SemigroupResult { map: prev, n, defect });
        }
    }
    Err(Error::NoConvergence {
        iterations: n,
        residual: defect,
    })
}

/// Steps of a proximal flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FlowSchedule {
    /// `u_{k+1} = J_{λ_k} u_k`; the clock advances by `λ_k`.
    Proximal(Vec<f64>),
    /// `u_k = J_{λ_k} u_0` for increasing `λ_k`; the clock reads `λ_k`.
    Lambda(Vec<f64>),
}

/// A recorded flow: `times[k]`, `iterates[k]`, `energies[k]`, and for
/// `k ≥ 1` the solver sweeps and the movement `d(iterates[k], previous)`.
#[derive(Clone, Debug)]
pub struct FlowTrace {
    pub times: Vec<f64>,
    pub iterates: Vec<MappedFunction>,
    pub energies: Vec<f64>,
    pub sweeps: Vec<usize>,
    pub residuals: Vec<f64>,
}

impl FlowTrace {
    pub fn terminal(&self) -> &MappedFunction {
        self.iterates.last().expect("trace holds the initial map")
    }

    pub fn terminal_energy(&self) -> f64 {
        *self.energies.last().expect("trace holds the initial map")
    }

    /// `E` never rises by more than `tol` between recorded steps.
    pub fn energy_nonincreasing(&self, tol: f64) -> bool {
        self.energies.windows(2).all(|w| w[1] <= w[0] + tol)
    }

    /// `time,energy,residual` rows; the first residual is 0.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,energy,residual\n");
        for (k, (t, e)) in self.times.iter().zip(&self.energies).enumerate() {
            let r = if k == 0 { 0.0 } else { self.residuals[k - 1] };
            writeln!(s, "{t:.16e},{e:.16e},{r:.16e}").unwrap();
        }
        s
    }
}

/// Runs a proximal flow from `u0`. Proximal schedules stop early at a
/// fixed point (a step that moves less than the solver tolerance).
pub fn harmonic_flow(
    e: &ConvexFunctional,
    u0: &MappedFunction,
    schedule: &FlowSchedule,
    opts: &SolverOptions,
) -> Result<FlowTrace> {
    let mut trace = FlowTrace {
        times: vec![0.0],
        iterates: vec![u0.clone()],
        energies: vec![e.eval(u0)?],
        sweeps: Vec::new(),
        residuals: Vec::new(),
    };
    match schedule {
        FlowSchedule::Proximal(steps) => {
            if steps.is_empty() {
                return Err(Error::ScheduleTooShort { got: 0, min: 1 });
            }
            let mut clock = 0.0;
            for &lambda in steps {
                let prev = trace.terminal().clone();
                let (next, stats) = resolvent(e, &prev, lambda, opts)?;
                let moved = map_distance(&prev, &next)?;
                clock += lambda;
                trace.times.push(clock);
                trace.energies.push(e.eval(&next)?);
                trace.iterates.push(next);
                trace.sweeps.push(stats.sweeps);
                trace.residuals.push(moved);
                if stats.sweeps == 1 && moved <= opts.tol {
                    break;
                }
            }
        }
        FlowSchedule::Lambda(lambdas) => {
            if lambdas.is_empty() {
                return Err(Error::ScheduleTooShort { got: 0, min: 1 });
            }
            if lambdas.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::param("lambda schedule must increase"));
            }
            for &lambda in lambdas {
                let (next, stats) = resolvent(e, u0, lambda, opts)?;
                let moved = map_distance(trace.terminal(), &next)?;
                trace.times.push(lambda);
                trace.energies.push(e.eval(&next)?);
                trace.iterates.push(next);
                trace.sweeps.push(stats.sweeps);
                trace.residuals.push(moved);
            }
        }
    }
    Ok(trace)
}

/// Slacks of the resolvent and semigroup identities; nonnegative slacks
/// and zero defects are exact in theory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// `d(x, y) − d(J_λ x, J_λ y)` over consecutive sample pairs and `λ`.
    pub nonexpansive: Vec<f64>,
    /// `λ (E(x) − inf E) − d(J_λ x, x)²`.
    pub step_bound: Vec<f64>,
    /// `(1/λ') E^{λ'}(x) − (1/λ) E^λ(x)` for consecutive `λ' < λ`.
    pub monotonicity: Vec<f64>,
    /// `d(T_{s+t} x, T_s T_t x)`.
    pub semigroup_defect: Vec<f64>,
}

impl IdentityReport {
    pub fn min_slack(&self) -> f64 {
        self.nonexpansive
            .iter()
            .chain(&self.step_bound)
            .chain(&self.monotonicity)
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_defect(&self) -> f64 {
        self.semigroup_defect.iter().copied().fold(0.0, f64::max)
    }

    pub fn holds_within(&self, tol: f64) -> bool {
        self.min_slack() >= -tol && self.max_defect() <= tol
    }
}

/// Evaluates the identities on the samples for every `λ`, and the
/// semigroup law at the time pair `(s, t)` when given.
pub fn resolvent_identities_check(
    e: &ConvexFunctional,
    samples: &[MappedFunction],
    lambdas: &[f64],
    times: Option<(f64, f64)>,
    opts: &SemigroupOptions,
) -> Result<IdentityReport> {
    if samples.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut rep = IdentityReport::default();
    let solver = &opts.solver;
    let mut images: Vec<Vec<MappedFunction>> = Vec::with_capacity(samples.len());
    for x in samples {
        let ex = e.eval(x)?;
        let mut row = Vec::with_capacity(sorted.len());
        let mut prev_scaled: Option<f64> = None;
        for &lambda in &sorted {
            let (my, j) = moreau_yosida(e, x, lambda, solver)?;
            let d = map_distance(&j, x)?;
            rep.step_bound.push(lambda * (ex - e.lower_bound()) - d * d);
            let scaled = my / lambda;
            if let Some(p) = prev_scaled {
                rep.monotonicity.push(scaled - p);
            }
            prev_scaled = Some(scaled);
            row.push(j);
        }
        images.push(row);
    }
    for k in 1..samples.len() {
        let dxy = map_distance(&samples[k - 1], &samples[k])?;
        for l in 0..sorted.len() {
            rep.nonexpansive.push(dxy - map_distance(&images[k - 1][l], &images[k][l])?);
        }
    }
    if let Some((s, t)) = times {
        for x in samples {
            let whole = semigroup(e, x, s + t, opts)?.map;
            let inner = semigroup(e, x, t, opts)?.map;
            let outer = semigroup(e, &inner, s, opts)?.map;
            rep.semigroup_defect.push(map_distance(&whole, &outer)?);
        }
    }
    Ok(rep)
}
