//! Convergence experiments: eigenvalue traces along ρ-schedules, resolvent
//! defects along space sequences, sublevel-set GH traces and the `Q_n`
//! cubes.

use super::{eigensolve, MAX_DENSE};
use crate::cat0::{map_distance, moreau_yosida, ConvexFunctional, SolverOptions};
use crate::energy::{BMode, EnergyConfig, EnergyForm, HMode};
use crate::error::{Error, Result};
use crate::mapping::{MappedFunction, MeasureApproximation};
use crate::metric::{gh_lower, gh_upper, sample_qcube, Correspondence, FiniteMetricMeasureSpace as Space, GhSearch};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::sync::Arc;

/// One labelled series aligned with the report axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub label: String,
    pub values: Vec<f64>,
}

/// Traces along a parameter axis plus optional limit estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub experiment: String,
    pub axis_name: String,
    pub axis: Vec<f64>,
    pub traces: Vec<Trace>,
    /// Per-trace limit estimates, aligned with `traces`.
    pub extrapolated: Option<Vec<f64>>,
    pub reference: Option<Vec<f64>>,
    /// `λ_2(measured) / λ_2(reference)`.
    pub calibration: Option<f64>,
    /// `measured_k / (calibration · reference_k)`; `None` where the
    /// reference vanishes.
    pub ratios: Option<Vec<Option<f64>>>,
    pub notes: Vec<String>,
}

impl ConvergenceReport {
    fn new(experiment: &str, axis_name: &str, axis: Vec<f64>) -> Self {
        Self {
            experiment: experiment.into(),
            axis_name: axis_name.into(),
            axis,
            traces: Vec::new(),
            extrapolated: None,
            reference: None,
            calibration: None,
            ratios: None,
            notes: Vec::new(),
        }
    }

    pub fn trace(&self, label: &str) -> Option<&[f64]> {
        self.traces.iter().find(|t| t.label == label).map(|t| t.values.as_slice())
    }

    /// One row per axis value, one column per trace, floats in `{:.16e}`.
    pub fn to_csv(&self) -> String {
        let mut out = self.axis_name.clone();
        for t in &self.traces {
            out.push(',');
            out.push_str(&t.label);
        }
        out.push('\n');
        for (j, a) in self.axis.iter().enumerate() {
            let _ = write!(out, "{a:.16e}");
            for t in &self.traces {
                let _ = write!(out, ",{:.16e}", t.values[j]);
            }
            out.push('\n');
        }
        out
    }

    /// Calibrates against `reference` with its first nonzero entry and
    /// fills `calibration` and `ratios` from `measured`.
    fn calibrate(&mut self, measured: &[f64], reference: &[f64]) {
        self.reference = Some(reference.to_vec());
        let Some(i) = reference.iter().position(|r| r.abs() > 0.0) else {
            return;
        };
        if i >= measured.len() {
            return;
        }
        let cal = measured[i] / reference[i];
        self.calibration = Some(cal);
        self.ratios = Some(
            measured
                .iter()
                .zip(reference)
                .map(|(m, r)| (r.abs() > 0.0).then(|| m / (cal * r)))
                .collect(),
        );
    }
}

/// Limit estimate for eigenvalue traces along a ρ-schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Extrapolation {
    None,
    /// Least-squares fit `λ(ρ) = λ_0 + a ρ²`.
    Richardson,
    /// Rescales `λ(ρ)` by `m_cont / m(ρ)` before the fit, where `m(ρ)` is
    /// the discrete kernel second moment `Σ_{0<d<ρ} w_y (d/h)² / (2 dim |B|)`
    /// at the point of largest ball mass and `m_cont` its value for
    /// Lebesgue measure on `ℝ^dim`. Requires `b = |B|`.
    MomentRichardson { dim: usize },
}

/// Continuum second moment of the kernel on `ℝ^dim`.
fn continuum_moment(h: HMode, dim: usize) -> f64 {
    match h {
        HMode::ConstantRho => 1.0 / (2.0 * (dim as f64 + 2.0)),
        HMode::PairwiseDistance => 1.0 / (2.0 * dim as f64),
    }
}

fn discrete_moment(form: &EnergyForm, dim: usize) -> f64 {
    let m = form.domain();
    let rho = form.config().rho;
    let x = (0..m.n())
        .map(|x| (x, m.ball_mass(x, rho)))
        .fold((0, f64::NEG_INFINITY), |b, (x, v)| if v > b.1 { (x, v) } else { b })
        .0;
    let s: f64 = (0..m.n())
        .filter(|&y| m.d(x, y) > 0.0 && m.d(x, y) < rho)
        .map(|y| {
            let h = match form.config().h_mode {
                HMode::ConstantRho => rho,
                HMode::PairwiseDistance => m.d(x, y),
            };
            m.weight(y) * (m.d(x, y) / h).powi(2)
        })
        .sum();
    s / (2.0 * dim as f64 * form.b()[x])
}

/// Least-squares intercept of `y = c + a x`.
fn intercept(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    my - sxy / sxx * mx
}

/// `λ_1, …, λ_k` of `A^ρ` along `schedule`, one domain per entry or a
/// single shared domain.
///
/// Traces are labelled `lambda_1 … lambda_k`. With an extrapolation the
/// estimated limits fill `extrapolated`; with a reference spectrum the
/// report also carries the calibration constant and per-mode ratios,
/// computed from the limits when present and from the last schedule
/// point otherwise.
pub fn eigen_convergence_experiment(
    domains: &[Arc<Space>],
    schedule: &[f64],
    config: &EnergyConfig,
    k: usize,
    extrapolation: Extrapolation,
    reference: Option<&[f64]>,
) -> Result<ConvergenceReport> {
    if schedule.len() < 3 {
        return Err(Error::ScheduleTooShort {
            got: schedule.len(),
            min: 3,
        });
    }
    if domains.len() != 1 && domains.len() != schedule.len() {
        return Err(Error::Mismatch(format!(
            "{} domains for a schedule of {} points",
            domains.len(),
            schedule.len()
        )));
    }
    if let Extrapolation::MomentRichardson { dim } = extrapolation {
        if dim == 0 {
            return Err(Error::param("moment normalization needs dim >= 1"));
        }
        if matches!(config.b_mode, BMode::UserTable(_)) {
            return Err(Error::Unsupported("moment normalization assumes b = |B|".into()));
        }
    }
    let rows: Vec<(Vec<f64>, f64)> = schedule
        .par_iter()
        .enumerate()
        .map(|(j, &rho)| {
            let domain = domains[if domains.len() == 1 { 0 } else { j }].clone();
            let form = EnergyForm::assemble(domain, config.with_rho(rho))?;
            let spec = eigensolve(&form.generator()?, k)?;
            let scale = match extrapolation {
                Extrapolation::MomentRichardson { dim } => {
                    continuum_moment(config.h_mode, dim) / discrete_moment(&form, dim)
                }
                _ => 1.0,
            };
            Ok((spec.eigenvalues, scale))
        })
        .collect::<Result<_>>()?;
    let mut report = ConvergenceReport::new("eigen_convergence", "rho", schedule.to_vec());
    for i in 0..k {
        report.traces.push(Trace {
            label: format!("lambda_{}", i + 1),
            values: rows.iter().map(|r| r.0[i]).collect(),
        });
    }
    if let Extrapolation::MomentRichardson { .. } = extrapolation {
        report.traces.push(Trace {
            label: "moment_scale".into(),
            values: rows.iter().map(|r| r.1).collect(),
        });
    }
    if extrapolation != Extrapolation::None {
        let x: Vec<f64> = schedule.iter().map(|r| r * r).collect();
        let limits = (0..k)
            .map(|i| {
                let y: Vec<f64> = rows.iter().map(|r| r.0[i] * r.1).collect();
                intercept(&x, &y)
            })
            .collect();
        report.extrapolated = Some(limits);
    }
    if let Some(reference) = reference {
        let measured = match &report.extrapolated {
            Some(l) => l.clone(),
            None => rows.last().map(|r| r.0.clone()).unwrap_or_default(),
        };
        let n = reference.len().min(k);
        report.calibrate(&measured[..n], &reference[..n]);
    }
    report.notes.push(
        "finite samples have no essential spectrum; the continuum statement is not tested".into(),
    );
    Ok(report)
}

/// `Φ u = u ∘ φ` on the source of `φ`; every source point must be mapped.
pub fn pullback(phi: &MeasureApproximation, u: &MappedFunction) -> Result<MappedFunction> {
    if !crate::mapping::same_space(u.domain(), phi.target()) {
        return Err(Error::Mismatch("map does not live on the target of the approximation".into()));
    }
    let values = phi
        .map()
        .iter()
        .map(|j| {
            j.map(|j| u.value(j).clone())
                .ok_or_else(|| Error::Mismatch("pullback needs a map defined at every point".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    MappedFunction::new(phi.source().clone(), u.target().clone(), values)
}

/// Probe maps for [`mosco_resolvent_experiment`].
#[derive(Clone, Debug)]
pub enum Probes {
    /// Maps `u` on the limit space, used as `u_i = Φ_i u`.
    Pullback(Vec<MappedFunction>),
    /// Maps `u` on the limit space with explicit approximants
    /// `approximants[probe][i]` on `M_i`.
    Sequences {
        limits: Vec<MappedFunction>,
        approximants: Vec<Vec<MappedFunction>>,
    },
}

/// Resolvent defects `d(J^i_λ u_i, Φ_i J_λ u)` and Moreau–Yosida value
/// defects `|E_i^λ(u_i) − E^λ(u)|` along a sequence `(E_i, φ_i)`.
///
/// `axis` labels the sequence. Traces are `resolvent[l=λ][p=probe]` and
/// `moreau_yosida[l=λ][p=probe]`.
pub fn mosco_resolvent_experiment(
    sequence: &[(ConvexFunctional, MeasureApproximation)],
    limit: &ConvexFunctional,
    axis: &[f64],
    lambdas: &[f64],
    probes: &Probes,
    opts: &SolverOptions,
) -> Result<ConvergenceReport> {
    if sequence.is_empty() || lambdas.is_empty() {
        return Err(Error::EmptySequence);
    }
    if axis.len() != sequence.len() {
        return Err(Error::Mismatch("axis and sequence lengths differ".into()));
    }
    let limits = match probes {
        Probes::Pullback(l) => l,
        Probes::Sequences { limits, approximants } => {
            if approximants.len() != limits.len() || approximants.iter().any(|a| a.len() != sequence.len()) {
                return Err(Error::Mismatch("approximants must cover every probe and index".into()));
            }
            limits
        }
    };
    if limits.is_empty() {
        return Err(Error::EmptySequence);
    }
    // (J_λ u, E^λ(u)) per λ and probe on the limit space
    let reference: Vec<Vec<(MappedFunction, f64)>> = lambdas
        .iter()
        .map(|&l| {
            limits
                .iter()
                .map(|u| moreau_yosida(limit, u, l, opts).map(|(v, j)| (j, v)))
                .collect()
        })
        .collect::<Result<_>>()?;
    let columns: Vec<Vec<(f64, f64)>> = sequence
        .par_iter()
        .enumerate()
        .map(|(i, (e, phi))| {
            let mut col = Vec::with_capacity(lambdas.len() * limits.len());
            for (a, &l) in lambdas.iter().enumerate() {
                for (b, u) in limits.iter().enumerate() {
                    let ui = match probes {
                        Probes::Pullback(_) => pullback(phi, u)?,
                        Probes::Sequences { approximants, .. } => approximants[b][i].clone(),
                    };
                    let (value, j) = moreau_yosida(e, &ui, l, opts)?;
                    let (jl, vl) = &reference[a][b];
                    let defect = map_distance(&j, &pullback(phi, jl)?)?;
                    col.push((defect, (value - vl).abs()));
                }
            }
            Ok(col)
        })
        .collect::<Result<_>>()?;
    let mut report = ConvergenceReport::new("mosco_resolvent", "index", axis.to_vec());
    let mut values = Vec::new();
    let mut c = 0;
    for &l in lambdas {
        for b in 0..limits.len() {
            report.traces.push(Trace {
                label: format!("resolvent[l={l}][p={b}]"),
                values: columns.iter().map(|col| col[c].0).collect(),
            });
            values.push(Trace {
                label: format!("moreau_yosida[l={l}][p={b}]"),
                values: columns.iter().map(|col| col[c].1).collect(),
            });
            c += 1;
        }
    }
    report.traces.extend(values);
    Ok(report)
}

/// A functional together with a finite sample of its mapping space.
#[derive(Clone, Debug)]
pub struct SampledMappingSpace {
    pub functional: ConvexFunctional,
    pub samples: Vec<MappedFunction>,
}

impl SampledMappingSpace {
    /// Samples with `E ≤ level` as a space under the `L²` map distance,
    /// with uniform weights, and their indices.
    pub fn sublevel(&self, level: f64) -> Result<(Space, Vec<usize>)> {
        let mut keep = Vec::new();
        for (i, u) in self.samples.iter().enumerate() {
            if self.functional.eval(u)? <= level {
                keep.push(i);
            }
        }
        if keep.is_empty() {
            return Err(Error::EmptySublevel { level });
        }
        let n = keep.len();
        let mut dist = vec![0.0; n * n];
        for a in 0..n {
            for b in a + 1..n {
                let d = map_distance(&self.samples[keep[a]], &self.samples[keep[b]])?;
                dist[a * n + b] = d;
                dist[b * n + a] = d;
            }
        }
        let space = Space::from_trusted(n, dist, vec![1.0 / n as f64; n], None)?;
        Ok((space, keep))
    }
}

/// GH bounds between sampled sublevel sets `{E_i ≤ c_i}` and `{E ≤ c}`
/// with `c_i = c (1 + 1/i)`, `i` counted from 1.
///
/// The search is warm-started from `u ↦ argmin_v d(u, Φ_i v)` and
/// `v ↦ argmin_u d(u, Φ_i v)`. Traces are `gh_upper`, `gh_lower`, `level`
/// and `sublevel_size`.
pub fn sublevel_gh_experiment(
    sequence: &[(SampledMappingSpace, MeasureApproximation)],
    limit: &SampledMappingSpace,
    c: f64,
    axis: &[f64],
    search: &GhSearch,
) -> Result<ConvergenceReport> {
    if sequence.is_empty() {
        return Err(Error::EmptySequence);
    }
    if axis.len() != sequence.len() {
        return Err(Error::Mismatch("axis and sequence lengths differ".into()));
    }
    let (s, s_idx) = limit.sublevel(c)?;
    let rows: Vec<(f64, f64, f64, f64)> = sequence
        .par_iter()
        .enumerate()
        .map(|(i, (space, phi))| {
            let level = c * (1.0 + 1.0 / (i + 1) as f64);
            let (si, si_idx) = space.sublevel(level)?;
            let pulled = s_idx
                .iter()
                .map(|&v| pullback(phi, &limit.samples[v]))
                .collect::<Result<Vec<_>>>()?;
            let mut d = vec![vec![0.0; pulled.len()]; si_idx.len()];
            for (a, &u) in si_idx.iter().enumerate() {
                for (b, p) in pulled.iter().enumerate() {
                    d[a][b] = map_distance(&space.samples[u], p)?;
                }
            }
            let argmin = |it: &mut dyn Iterator<Item = (usize, f64)>| {
                it.fold((0, f64::INFINITY), |b, (k, v)| if v < b.1 { (k, v) } else { b }).0
            };
            let f: Vec<usize> = (0..si_idx.len())
                .map(|a| argmin(&mut d[a].iter().copied().enumerate()))
                .collect();
            let g: Vec<usize> = (0..pulled.len())
                .map(|b| argmin(&mut d.iter().map(|row| row[b]).enumerate()))
                .collect();
            let warm = Correspondence::from_maps(&f, &g)?;
            let (upper, _) = gh_upper(&si, &s, search, Some(&warm))?;
            Ok((upper, gh_lower(&si, &s), level, si.n() as f64))
        })
        .collect::<Result<_>>()?;
    let mut report = ConvergenceReport::new("sublevel_gh", "index", axis.to_vec());
    for (label, pick) in [
        ("gh_upper", 0),
        ("gh_lower", 1),
        ("level", 2),
        ("sublevel_size", 3),
    ] {
        report.traces.push(Trace {
            label: label.into(),
            values: rows
                .iter()
                .map(|r| [r.0, r.1, r.2, r.3][pick])
                .collect(),
        });
    }
    Ok(report)
}

/// Mode vectors `(k_1, …, k_n)` of the `k` smallest values of
/// `π² (k_1² + 4 k_2² + ⋯ + 4^{n−1} k_n²)`, ties in lexicographic order.
fn qcube_modes(n: usize, k: usize) -> Vec<(f64, Vec<usize>)> {
    let mut all: Vec<(f64, Vec<usize>)> = Vec::new();
    let mut modes = vec![0usize; n];
    loop {
        let v: f64 = modes
            .iter()
            .enumerate()
            .map(|(j, &m)| 4f64.powi(j as i32) * (m * m) as f64)
            .sum();
        all.push((std::f64::consts::PI.powi(2) * v, modes.clone()));
        let mut j = 0;
        while j < n {
            modes[j] += 1;
            if modes[j] < k {
                break;
            }
            modes[j] = 0;
            j += 1;
        }
        if j == n {
            break;
        }
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    all.truncate(k);
    all
}

/// The `k` smallest values of the Neumann spectrum of `Q_n`.
pub fn qcube_reference(n: usize, k: usize) -> Vec<f64> {
    qcube_modes(n, k).into_iter().map(|(v, _)| v).collect()
}

/// Points per half-wavelength required on every axis.
pub const NYQUIST_POINTS: usize = 8;

/// `λ_1 … λ_k` of `A^ρ` on grid samples of `Q_1, …, Q_{n_max}`, where
/// `divisions[n−1]` splits the unit side of `Q_n`.
///
/// Calibration and ratios use the `Q_{n_max}` spectrum against
/// [`qcube_reference`].
pub fn qcube_experiment(n_max: usize, divisions: &[usize], config: &EnergyConfig, k: usize) -> Result<ConvergenceReport> {
    if n_max == 0 || divisions.len() != n_max {
        return Err(Error::param("qcube experiment needs one division count per n"));
    }
    for n in 1..=n_max {
        let div = divisions[n - 1];
        for (_, modes) in qcube_modes(n, k) {
            for (j, &m) in modes.iter().enumerate() {
                let cells = div >> j;
                if m > 0 && cells < NYQUIST_POINTS * m {
                    return Err(Error::GridTooCoarse(format!(
                        "Q_{n} axis {} has {cells} cells for mode {m}; need {}",
                        j + 1,
                        NYQUIST_POINTS * m
                    )));
                }
            }
        }
    }
    let spectra: Vec<Vec<f64>> = (1..=n_max)
        .into_par_iter()
        .map(|n| {
            let q = Arc::new(sample_qcube(n, divisions[n - 1])?);
            if q.n() > MAX_DENSE {
                return Err(Error::param(format!("Q_{n} sample has {} points, cap {MAX_DENSE}", q.n())));
            }
            let form = EnergyForm::assemble(q, config.clone())?;
            Ok(eigensolve(&form.generator()?, k)?.eigenvalues)
        })
        .collect::<Result<_>>()?;
    let mut report = ConvergenceReport::new("qcube", "n", (1..=n_max).map(|n| n as f64).collect());
    for i in 0..k {
        report.traces.push(Trace {
            label: format!("lambda_{}", i + 1),
            values: spectra.iter().map(|s| s[i]).collect(),
        });
    }
    let last = spectra.last().cloned().unwrap_or_default();
    report.calibrate(&last, &qcube_reference(n_max, k));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::EnergyConfig;
    use crate::metric::{sample_circle, sample_interval};
    use crate::target::TargetSpace;
    use std::f64::consts::PI;

    #[test]
    fn short_schedule_is_rejected() {
        let m = Arc::new(sample_circle(32, 2.0 * PI).unwrap());
        let r = eigen_convergence_experiment(&[m], &[0.4, 0.3], &EnergyConfig::new(2.0, 0.4), 3, Extrapolation::None, None);
        assert!(matches!(r, Err(Error::ScheduleTooShort { got: 2, min: 3 })));
    }

    #[test]
    fn circle_limit_matches_the_kernel_moment() {
        let m = Arc::new(sample_circle(256, 2.0 * PI).unwrap());
        let rep = eigen_convergence_experiment(
            &[m],
            &[0.5, 0.4, 0.3],
            &EnergyConfig::new(2.0, 0.5),
            5,
            Extrapolation::MomentRichardson { dim: 1 },
            Some(&[0.0, 1.0, 1.0, 4.0, 4.0]),
        )
        .unwrap();
        let lim = rep.extrapolated.as_ref().unwrap();
        // Oracle: (1/2)·(1/|B|)∫ s²/ρ² over (−ρ, ρ) = 1/6 times −d²/dθ²
        for (l, k2) in lim[1..].iter().zip([1.0, 1.0, 4.0, 4.0]) {
            assert!((l / (k2 / 6.0) - 1.0).abs() < 0.01, "{l} vs {}", k2 / 6.0);
        }
        let ratios = rep.ratios.clone().unwrap();
        assert!(ratios[0].is_none());
        assert!(ratios[1..].iter().all(|r| (r.unwrap() - 1.0).abs() < 0.01));
        assert_eq!(rep.to_csv().lines().count(), 4);
    }

    #[test]
    fn interval_mode_ratios_are_squares() {
        let m = Arc::new(sample_interval(256, 1.0).unwrap());
        let rep = eigen_convergence_experiment(
            &[m],
            &[0.06, 0.045, 0.03],
            &EnergyConfig::new(2.0, 0.06),
            4,
            Extrapolation::Richardson,
            Some(&[0.0, 1.0, 4.0, 9.0]),
        )
        .unwrap();
        for r in rep.ratios.unwrap()[1..].iter() {
            assert!((r.unwrap() - 1.0).abs() < 0.03, "{r:?}");
        }
    }

    #[test]
    fn two_point_resolvent_collapses() {
        let (wa, wb) = (0.3, 0.7);
        let target = TargetSpace::real();
        let limit_space = Arc::new(Space::new(vec![vec![0.0]], vec![wa + wb]).unwrap());
        let limit = ConvexFunctional::zero(limit_space.clone(), target.clone());
        let deltas = [1.0, 0.5, 0.25, 0.125];
        let mut seq = Vec::new();
        let mut approx = Vec::new();
        for &d in &deltas {
            let mi = Arc::new(Space::new(vec![vec![0.0, d], vec![d, 0.0]], vec![wa, wb]).unwrap());
            let e = ConvexFunctional::from_couplings(mi.clone(), target.clone(), 2.0, &[(0, 1, 1.0 / (d * d))]).unwrap();
            let phi = MeasureApproximation::new(mi.clone(), limit_space.clone(), vec![Some(0), Some(0)]).unwrap();
            approx.push(MappedFunction::real(mi, &[1.0, -1.0]).unwrap());
            seq.push((e, phi));
        }
        let mean = (wa - wb) / (wa + wb);
        let u = MappedFunction::real(limit_space, &[mean]).unwrap();
        let lambda = 0.5;
        let rep = mosco_resolvent_experiment(
            &seq,
            &limit,
            &deltas,
            &[lambda],
            &Probes::Sequences {
                limits: vec![u],
                approximants: vec![approx],
            },
            &SolverOptions::default(),
        )
        .unwrap();
        let tr = rep.trace("resolvent[l=0.5][p=0]").unwrap();
        for (t, d) in tr.iter().zip(deltas) {
            // Oracle: the mean is preserved and the gap D = 2 shrinks to
            // D / (1 + λ(w_a + w_b)/(w_a w_b δ²)); distance to the mean is
            // √(w_a w_b/(w_a + w_b))·D'.
            let gap = 2.0 / (1.0 + lambda * (wa + wb) / (wa * wb * d * d));
            let expect = (wa * wb / (wa + wb)).sqrt() * gap;
            assert!((t - expect).abs() < 1e-9, "{t} vs {expect}");
        }
        assert!(tr.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn constant_sequence_has_no_defect() {
        let m = Arc::new(sample_circle(16, 1.0).unwrap());
        let form = EnergyForm::assemble(m.clone(), EnergyConfig::new(2.0, 0.2)).unwrap();
        let e = ConvexFunctional::from_form(&form, TargetSpace::real());
        let phi = MeasureApproximation::identity(m.clone());
        let v: Vec<f64> = (0..16).map(|i| (2.0 * PI * i as f64 / 16.0).cos()).collect();
        let u = MappedFunction::real(m, &v).unwrap();
        let rep = mosco_resolvent_experiment(
            &[(e.clone(), phi.clone()), (e.clone(), phi)],
            &e,
            &[1.0, 2.0],
            &[0.1, 1.0],
            &Probes::Pullback(vec![u]),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(rep.traces.iter().all(|t| t.values.iter().all(|v| *v < 1e-9)));
    }

    fn grid(h: f64, half: f64) -> Vec<f64> {
        let steps = (2.0 * half / h).round() as usize;
        (0..=steps).map(|i| -half + i as f64 * h).collect()
    }

    fn two_point_sequence(alpha: f64, beta: f64, deltas: &[f64]) -> (Vec<(SampledMappingSpace, MeasureApproximation)>, SampledMappingSpace) {
        let y = grid(0.25, 2.0);
        let target = TargetSpace::real();
        let lim_space = Arc::new(Space::new(vec![vec![0.0]], vec![alpha + beta]).unwrap());
        let limit = SampledMappingSpace {
            functional: ConvexFunctional::zero(lim_space.clone(), target.clone()),
            samples: y.iter().map(|&t| MappedFunction::real(lim_space.clone(), &[t]).unwrap()).collect(),
        };
        let seq = deltas
            .iter()
            .map(|&d| {
                let mi = Arc::new(Space::new(vec![vec![0.0, d], vec![d, 0.0]], vec![alpha, beta]).unwrap());
                let e = ConvexFunctional::from_couplings(mi.clone(), target.clone(), 2.0, &[(0, 1, 1.0 / (d * d))]).unwrap();
                let samples = y
                    .iter()
                    .flat_map(|&a| y.iter().map(move |&b| (a, b)))
                    .map(|(a, b)| MappedFunction::real(mi.clone(), &[a, b]).unwrap())
                    .collect();
                let phi = MeasureApproximation::new(mi, lim_space.clone(), vec![Some(0), Some(0)]).unwrap();
                (SampledMappingSpace { functional: e, samples }, phi)
            })
            .collect();
        (seq, limit)
    }

    #[test]
    fn sublevel_band_shrinks_to_the_diagonal() {
        let deltas = [1.0, 0.5, 0.25, 0.125];
        let (seq, limit) = two_point_sequence(1.0, 1.0, &deltas);
        let rep = sublevel_gh_experiment(&seq, &limit, 1.0, &deltas, &GhSearch::default()).unwrap();
        let up = rep.trace("gh_upper").unwrap();
        let lo = rep.trace("gh_lower").unwrap();
        assert!(up.iter().zip(lo).all(|(u, l)| l <= &(u + 1e-12)));
        assert!(up.windows(2).all(|w| w[1] <= w[0]));
        assert!(up[3] < 1e-12);
        assert_eq!(rep.trace("sublevel_size").unwrap()[3], 17.0);
    }

    #[test]
    fn identical_spaces_have_zero_trace_and_empty_levels_error() {
        let m = Arc::new(Space::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![0.5, 0.5]).unwrap());
        let e = ConvexFunctional::from_couplings(m.clone(), TargetSpace::real(), 2.0, &[(0, 1, 1.0)]).unwrap();
        let samples: Vec<MappedFunction> = grid(0.5, 1.0)
            .iter()
            .flat_map(|&a| grid(0.5, 1.0).into_iter().map(move |b| (a, b)))
            .map(|(a, b)| MappedFunction::real(m.clone(), &[a, b]).unwrap())
            .collect();
        let s = SampledMappingSpace { functional: e, samples };
        let phi = MeasureApproximation::identity(m);
        let rep = sublevel_gh_experiment(&[(s.clone(), phi.clone()), (s.clone(), phi.clone())], &s, 0.3, &[1.0, 2.0], &GhSearch::default());
        // E takes values in {0, 1/4, 1, …}, so levels 0.3, 0.45, 0.6 cut the same set
        let rep = rep.unwrap();
        assert!(rep.trace("gh_upper").unwrap().iter().all(|v| *v == 0.0));
        let shifted = ConvexFunctional::from_couplings(s.functional.domain().clone(), TargetSpace::real(), 2.0, &[(0, 1, 1.0)])
            .unwrap()
            .with_potential(vec![5.0.into(), 5.0.into()], vec![1.0, 1.0], 2.0)
            .unwrap();
        let empty = SampledMappingSpace {
            functional: shifted,
            samples: s.samples.clone(),
        };
        assert!(matches!(
            sublevel_gh_experiment(&[(empty, phi)], &s, 0.3, &[1.0], &GhSearch::default()),
            Err(Error::EmptySublevel { .. })
        ));
    }

    #[test]
    fn qcube_reference_sum_set() {
        let p2 = PI * PI;
        let q2: Vec<f64> = qcube_reference(2, 6).iter().map(|v| v / p2).collect();
        assert_eq!(q2, vec![0.0, 1.0, 4.0, 4.0, 5.0, 8.0]);
        // stabilization: Q_3 adds 16π² and above only
        let q3: Vec<f64> = qcube_reference(3, 6).iter().map(|v| v / p2).collect();
        assert_eq!(q2, q3);
        let q1: Vec<f64> = qcube_reference(1, 4).iter().map(|v| v / p2).collect();
        assert_eq!(q1, vec![0.0, 1.0, 4.0, 9.0]);
    }

    #[test]
    fn qcube_guard_rejects_coarse_grids() {
        let cfg = EnergyConfig::new(2.0, 0.1);
        assert!(matches!(qcube_experiment(1, &[16], &cfg, 4), Err(Error::GridTooCoarse(_))));
        assert!(qcube_experiment(1, &[24], &cfg, 4).is_ok());
    }
}
