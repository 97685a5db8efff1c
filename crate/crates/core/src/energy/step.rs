//! Piecewise-constant approximations on `r`-nets.
//!
//! A maximal `r`-discrete net `x_1, x_2, …` gives cells
//! `U_k = B(x_k, r) ∖ (B(x_1, r) ∪ ⋯ ∪ B(x_{k−1}, r))`, and the step map
//! takes on `U_k` the weighted average of `u` over the whole ball
//! `B(x_k, r)`. Euclidean values are averaged directly. Other targets are
//! averaged in the Kuratowski embedding of the value set into `ℓ^∞` and
//! sent back to the nearest value of `u` in the sup norm, an approximation
//! rather than an isometric construction.

use super::{EnergyConfig, EnergyForm};
use crate::error::{Error, Result};
use crate::mapping::{lp_distance, MappedFunction};
use crate::metric::{maximal_r_discrete_net, NetOrder};
use crate::target::{TargetPoint, TargetSpace};
use serde::{Deserialize, Serialize};

/// Step map of `u` at net radius `r`.
pub fn step_map(u: &MappedFunction, r: f64, order: NetOrder) -> Result<MappedFunction> {
    let m = u.domain();
    let net = maximal_r_discrete_net(m, r, order)?;
    let n = m.n();
    let mut cell = vec![usize::MAX; n];
    for (k, &c) in net.iter().enumerate() {
        for y in m.ball(c, r) {
            if cell[y] == usize::MAX {
                cell[y] = k;
            }
        }
    }
    debug_assert!(cell.iter().all(|&k| k != usize::MAX));
    let averages: Vec<TargetPoint> = match u.target() {
        TargetSpace::Euclidean { dim } => net
            .iter()
            .map(|&c| {
                let ball = m.ball(c, r);
                let mass = m.mass(&ball);
                let mut avg = vec![0.0; *dim];
                for &y in &ball {
                    if let TargetPoint::Vector(v) = u.value(y) {
                        for (a, b) in avg.iter_mut().zip(v) {
                            *a += m.weight(y) * b;
                        }
                    }
                }
                avg.iter_mut().for_each(|a| *a /= mass);
                TargetPoint::Vector(avg)
            })
            .collect(),
        target => embedded_averages(u, target, &net, r),
    };
    let values = cell.iter().map(|&k| averages[k].clone()).collect();
    u.with_values(values)
}

/// Ball averages of `u` in the Kuratowski embedding of its value set,
/// rounded to the nearest value in the sup norm (lowest index on ties).
fn embedded_averages(u: &MappedFunction, target: &TargetSpace, net: &[usize], r: f64) -> Vec<TargetPoint> {
    let m = u.domain();
    let mut distinct: Vec<&TargetPoint> = Vec::new();
    let mut slot = Vec::with_capacity(m.n());
    for v in u.values() {
        match distinct.iter().position(|d| *d == v) {
            Some(i) => slot.push(i),
            None => {
                slot.push(distinct.len());
                distinct.push(v);
            }
        }
    }
    let k = distinct.len();
    // row i: d(v_i, ·) − d(v_0, ·)
    let dist: Vec<Vec<f64>> = distinct
        .iter()
        .map(|a| distinct.iter().map(|b| target.dist(a, b)).collect())
        .collect();
    let coords: Vec<Vec<f64>> = dist
        .iter()
        .map(|row| row.iter().zip(&dist[0]).map(|(a, b)| a - b).collect())
        .collect();
    net.iter()
        .map(|&c| {
            let ball = m.ball(c, r);
            let mass = m.mass(&ball);
            let mut avg = vec![0.0; k];
            for &y in &ball {
                for (a, b) in avg.iter_mut().zip(&coords[slot[y]]) {
                    *a += m.weight(y) * b;
                }
            }
            avg.iter_mut().for_each(|a| *a /= mass);
            let best = (0..k)
                .map(|i| {
                    let d = coords[i].iter().zip(&avg).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    (i, d)
                })
                .fold((0, f64::INFINITY), |b, (i, d)| if d < b.1 { (i, d) } else { b });
            distinct[best.0].clone()
        })
        .collect()
}

/// Step-map diagnostics over a sequence of maps and decreasing net radii.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompactnessReport {
    pub p: f64,
    pub radii: Vec<f64>,
    /// `approx[j][i] = d_{L^p}(u_i, step(u_i, r_j))`.
    pub approx: Vec<Vec<f64>>,
    /// `cauchy[j][i] = d_{L^p}(step(u_i, r_j), step(u_i, r_{j+1}))`.
    pub cauchy: Vec<Vec<f64>>,
    /// `E^ρ(u_i)`.
    pub energies: Vec<f64>,
    pub energy_bound: f64,
    /// Indices whose energy exceeds the bound.
    pub flagged: Vec<usize>,
}

impl CompactnessReport {
    /// The energies stay below the supplied bound.
    pub fn energies_bounded(&self) -> bool {
        self.flagged.is_empty()
    }

    /// `max_{i ≥ i0} approx[j][i]` for each radius, with `i0` the second half.
    pub fn tail_sup(&self) -> Vec<f64> {
        self.approx
            .iter()
            .map(|row| row[row.len() / 2..].iter().copied().fold(0.0, f64::max))
            .collect()
    }

    /// Rows of `table` are non-increasing in `j` within relative tolerance.
    pub fn decays_in_radius(table: &[Vec<f64>], tol: f64) -> bool {
        table
            .windows(2)
            .all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| *b <= a * (1.0 + tol) + tol))
    }
}

/// Runs step maps for every `u_i` and radius `r_j` (given in decreasing
/// order) and flags maps whose energy exceeds `energy_bound`.
pub fn compactness_witness(
    maps: &[MappedFunction],
    config: &EnergyConfig,
    radii: &[f64],
    energy_bound: f64,
    order: NetOrder,
) -> Result<CompactnessReport> {
    if maps.is_empty() || radii.is_empty() {
        return Err(Error::EmptySequence);
    }
    if radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::param("net radii must decrease"));
    }
    let p = config.p;
    let energies = maps
        .iter()
        .map(|u| EnergyForm::assemble(u.domain().clone(), config.clone())?.energy(u))
        .collect::<Result<Vec<f64>>>()?;
    let flagged = energies
        .iter()
        .enumerate()
        .filter(|(_, &e)| !(e <= energy_bound))
        .map(|(i, _)| i)
        .collect();
    let steps: Vec<Vec<MappedFunction>> = radii
        .iter()
        .map(|&r| maps.iter().map(|u| step_map(u, r, order)).collect())
        .collect::<Result<_>>()?;
    let approx = steps
        .iter()
        .map(|row| row.iter().zip(maps).map(|(s, u)| lp_distance(u, s, p)).collect())
        .collect::<Result<_>>()?;
    let cauchy = steps
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| lp_distance(a, b, p)).collect())
        .collect::<Result<_>>()?;
    Ok(CompactnessReport {
        p,
        radii: radii.to_vec(),
        approx,
        cauchy,
        energies,
        energy_bound,
        flagged,
    })
}

/// Bound on `approx[j][i]` from a Poincaré constant `C_i`, covering orders
/// `K_i(r_j)` and energies: `(C_i r_j^p K_i(r_j) E_i)^{1/p}`.
///
/// Valid for Euclidean targets and `ρ_i < r_j ≤ R_i`, where `C_i` certifies
/// `u_i`. `covering[j][i]` holds `K_{c,M_i}(r_j)` for the certificate's `c`.
pub fn step_defect_bounds(report: &CompactnessReport, constants: &[f64], covering: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
    let maps = report.energies.len();
    if constants.len() != maps || covering.len() != report.radii.len() || covering.iter().any(|row| row.len() != maps) {
        return Err(Error::param("bound inputs must match the witness table shape"));
    }
    let p = report.p;
    Ok(report
        .radii
        .iter()
        .zip(covering)
        .map(|(&r, row)| {
            (0..maps)
                .map(|i| (constants[i] * r.powf(p) * row[i] as f64 * report.energies[i]).powf(1.0 / p))
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{sample_circle, sample_tree, TreeEdge};
    use crate::target::MetricTree;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn sine(n: usize, modes: f64) -> MappedFunction {
        let m = Arc::new(sample_circle(n, 2.0 * PI).unwrap());
        let v: Vec<f64> = (0..n).map(|i| (modes * 2.0 * PI * i as f64 / n as f64).sin()).collect();
        MappedFunction::real(m, &v).unwrap()
    }

    #[test]
    fn constant_and_single_cell() {
        let m = Arc::new(sample_circle(10, 1.0).unwrap());
        let c = MappedFunction::real(m.clone(), &[3.0; 10]).unwrap();
        assert_eq!(step_map(&c, 0.2, NetOrder::Index).unwrap().values(), c.values());
        let v: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let u = MappedFunction::real(m, &v).unwrap();
        let s = step_map(&u, 5.0, NetOrder::Index).unwrap();
        assert!(s.values().iter().all(|p| (p.scalar().unwrap() - 4.5).abs() < 1e-12));
    }

    #[test]
    fn sine_step_error_is_order_r() {
        let u = sine(64, 1.0);
        let r = PI / 8.0;
        let s = step_map(&u, r, NetOrder::Index).unwrap();
        let err = lp_distance(&u, &s, 2.0).unwrap();
        // Oracle: |u − ū| ≤ Lip(u)·2r pointwise on cells of diameter < 2r,
        // with total mass 1.
        assert!(err > 0.0 && err <= 2.0 * r);
        let finer = lp_distance(&u, &step_map(&u, r / 2.0, NetOrder::Index).unwrap(), 2.0).unwrap();
        assert!(finer < err);
    }

    #[test]
    fn tree_values_round_to_existing_values() {
        let tree = MetricTree::star(3, 1.0).unwrap();
        let target = TargetSpace::tree(tree);
        let m = Arc::new(sample_tree(&[TreeEdge { a: 0, b: 1, length: 1.0 }], 9).unwrap());
        let values: Vec<TargetPoint> = (0..m.n())
            .map(|i| {
                TargetPoint::Tree(crate::target::TreePoint {
                    edge: i % 3,
                    offset: 0.5,
                })
            })
            .collect();
        let u = MappedFunction::new(m, target, values).unwrap();
        let s = step_map(&u, 0.3, NetOrder::Index).unwrap();
        assert!(s.values().iter().all(|v| u.values().contains(v)));
    }

    #[test]
    fn witness_decays_and_flags_oscillation() {
        let cfg = EnergyConfig::new(2.0, 0.3);
        let smooth: Vec<MappedFunction> = [64, 128, 256].iter().map(|&n| sine(n, 1.0)).collect();
        let radii = [0.8, 0.4, 0.2, 0.1];
        let rep = compactness_witness(&smooth, &cfg, &radii, 1.0, NetOrder::Index).unwrap();
        assert!(rep.energies_bounded());
        assert!(CompactnessReport::decays_in_radius(&rep.approx, 1e-9));
        assert!(rep.tail_sup().windows(2).all(|w| w[1] < w[0]));
        let osc: Vec<MappedFunction> = [(64, 1.0), (128, 4.0), (256, 16.0)]
            .iter()
            .map(|&(n, k)| sine(n, k))
            .collect();
        let rep = compactness_witness(&osc, &cfg.with_rho(0.05), &radii, 1.0, NetOrder::Index).unwrap();
        assert!(rep.energies[2] > 10.0 * rep.energies[0]);
        assert!(!rep.energies_bounded());
    }

    #[test]
    fn witness_respects_certificate_bound() {
        use crate::energy::poincare_certificate;
        use crate::metric::{covering_order, CoveringMode};
        let cfg = EnergyConfig::new(2.0, 0.2);
        let (c, big_r) = (1.5, 1.0);
        let radii = [1.0, 0.6, 0.3];
        let maps: Vec<MappedFunction> = [32, 64, 128].iter().map(|&n| sine(n, 1.0)).collect();
        let rep = compactness_witness(&maps, &cfg, &radii, 10.0, NetOrder::Index).unwrap();
        let constants: Vec<f64> = maps
            .iter()
            .map(|u| {
                let form = EnergyForm::assemble(u.domain().clone(), cfg.clone()).unwrap();
                poincare_certificate(&form, std::slice::from_ref(u), c, big_r, false).unwrap().constant
            })
            .collect();
        let covering: Vec<Vec<usize>> = radii
            .iter()
            .map(|&r| {
                maps.iter()
                    .map(|u| covering_order(u.domain(), c, r, CoveringMode::Exhaustive { cap: u.domain().n() }).unwrap())
                    .collect()
            })
            .collect();
        let bounds = step_defect_bounds(&rep, &constants, &covering).unwrap();
        for (row, brow) in rep.approx.iter().zip(&bounds) {
            for (a, b) in row.iter().zip(brow) {
                assert!(a <= b, "{a} > {b}");
            }
        }
        assert!(step_defect_bounds(&rep, &constants[..2], &covering).is_err());
    }
}
