//! The ρ-approximating energy
//!
//! ```text
//! e_u(x) = (1 / b(x,ρ)) Σ_{0 < d(x,y) < ρ} w_y (d_Y(u(x), u(y)) / h(x,y))^p
//! E(u)   = ½ Σ_x w_x e_u(x)
//! ```
//!
//! with `h = ρ` or `h = d(x, y)` and `b(x,ρ)` either the ball mass `|B(x,ρ)|`
//! (which counts `x` itself) or a user table. Equivalently
//! `E(u) = ½ Σ_{x,y} k(x,y) d_Y(u(x), u(y))^p` with the kernel
//! `k(x,y) = w_x w_y / (b(x,ρ) h(x,y)^p)` supported on the open-ball pairs.

mod poincare;
mod step;

pub use poincare::{
    check_condition_m, poincare_certificate, ConditionMEntry, PoincareCertificate, SlackEntry,
};
pub use step::{compactness_witness, step_defect_bounds, step_map, CompactnessReport};

use crate::error::{Error, Result};
use crate::mapping::MappedFunction;
use crate::metric::FiniteMetricMeasureSpace as Space;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Choice of the difference-quotient scale `h(x, y)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HMode {
    ConstantRho,
    PairwiseDistance,
}

/// Choice of the normalization `b(x, ρ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BMode {
    BallVolume,
    UserTable(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyConfig {
    pub p: f64,
    pub rho: f64,
    pub h_mode: HMode,
    pub b_mode: BMode,
    /// Constant of `κ b(x,r) ≤ |B(x,r)| ≤ b(x,r)`.
    pub kappa: f64,
    /// Optional `(R, Θ(R))` table for condition (M), ascending in `R`.
    pub theta: Option<Vec<(f64, f64)>>,
}

impl EnergyConfig {
    /// `h = ρ`, `b = |B(x,ρ)|`, `κ = 1`.
    pub fn new(p: f64, rho: f64) -> Self {
        Self {
            p,
            rho,
            h_mode: HMode::ConstantRho,
            b_mode: BMode::BallVolume,
            kappa: 1.0,
            theta: None,
        }
    }

    pub fn with_h(mut self, h: HMode) -> Self {
        self.h_mode = h;
        self
    }

    pub fn with_b(mut self, b: BMode) -> Self {
        self.b_mode = b;
        self
    }

    pub fn with_rho(&self, rho: f64) -> Self {
        let mut c = self.clone();
        c.rho = rho;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0) || !self.p.is_finite() {
            return Err(Error::param(format!("energy exponent p must be >= 1, got {}", self.p)));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::param(format!("radius rho must be positive, got {}", self.rho)));
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(Error::param(format!("kappa must lie in (0, 1], got {}", self.kappa)));
        }
        if let Some(t) = &self.theta {
            if t.iter().any(|&(r, th)| !(r > 0.0) || !(th > 0.0)) {
                return Err(Error::param("theta table needs positive radii and values"));
            }
            if t.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(Error::param("theta table radii must increase"));
            }
        }
        Ok(())
    }

    /// `Θ(R)` by linear interpolation in the table; `None` outside it.
    pub fn theta_at(&self, r: f64) -> Option<f64> {
        let t = self.theta.as_ref()?;
        let tol = 1e-12 * r;
        if let Some(&(_, th)) = t.iter().find(|(rr, _)| (rr - r).abs() <= tol) {
            return Some(th);
        }
        t.windows(2).find(|w| w[0].0 <= r && r <= w[1].0).map(|w| {
            let s = (r - w[0].0) / (w[1].0 - w[0].0);
            w[0].1 + s * (w[1].1 - w[0].1)
        })
    }
}

/// Ball masses `|B(x, r)|`; closed balls when `closed`.
pub(crate) fn ball_masses(m: &Space, r: f64, closed: bool) -> Vec<f64> {
    (0..m.n())
        .map(|x| {
            m.row(x)
                .iter()
                .zip(m.weights())
                .filter(|(&d, _)| if closed { d <= r } else { d < r })
                .map(|(_, &w)| w)
                .sum()
        })
        .collect()
}

/// Kernel rows `(y, d(x,y), k(x,y))` over `0 < d(x,y) < r` (or `≤ r`).
pub(crate) fn kernel_rows(
    m: &Space,
    p: f64,
    r: f64,
    h_mode: HMode,
    b: &[f64],
    closed: bool,
) -> Vec<Vec<(usize, f64, f64)>> {
    (0..m.n())
        .into_par_iter()
        .map(|x| {
            let wx = m.weight(x);
            m.row(x)
                .iter()
                .enumerate()
                .filter(|&(_, &d)| d > 0.0 && if closed { d <= r } else { d < r })
                .map(|(y, &d)| {
                    let h = match h_mode {
                        HMode::ConstantRho => r,
                        HMode::PairwiseDistance => d,
                    };
                    (y, d, wx * m.weight(y) / (b[x] * h.powf(p)))
                })
                .collect()
        })
        .collect()
}

/// Pointwise density from kernel rows: `e(x) = Σ_y k(x,y) d_Y^p / w_x`.
pub(crate) fn density_from_rows(
    u: &MappedFunction,
    rows: &[Vec<(usize, f64, f64)>],
    p: f64,
) -> Vec<f64> {
    let m = u.domain();
    let t = u.target();
    rows.par_iter()
        .enumerate()
        .map(|(x, row)| {
            let ux = u.value(x);
            let s: f64 = row
                .iter()
                .map(|&(y, _, k)| {
                    let d = t.dist(ux, u.value(y));
                    k * if p == 2.0 { d * d } else { d.powf(p) }
                })
                .sum();
            s / m.weight(x)
        })
        .collect()
}

/// The assembled energy on a fixed domain.
#[derive(Clone, Debug)]
pub struct EnergyForm {
    domain: Arc<Space>,
    config: EnergyConfig,
    b: Vec<f64>,
    rows: Vec<Vec<(usize, f64, f64)>>,
    warnings: Vec<String>,
}

impl EnergyForm {
    pub fn assemble(domain: Arc<Space>, config: EnergyConfig) -> Result<Self> {
        config.validate()?;
        let balls = ball_masses(&domain, config.rho, false);
        let b = match &config.b_mode {
            BMode::BallVolume => balls.clone(),
            BMode::UserTable(t) => {
                if t.len() != domain.n() {
                    return Err(Error::WeightLength {
                        got: t.len(),
                        expected: domain.n(),
                    });
                }
                for (x, (&bx, &vol)) in t.iter().zip(&balls).enumerate() {
                    let tol = 1e-12 * vol;
                    if bx < vol - tol || config.kappa * bx > vol + tol {
                        return Err(Error::param(format!(
                            "b({x}, rho) = {bx} violates kappa*b <= |B| = {vol} <= b with kappa = {}",
                            config.kappa
                        )));
                    }
                }
                t.clone()
            }
        };
        let rows = kernel_rows(&domain, config.p, config.rho, config.h_mode, &b, false);
        let mut warnings = Vec::new();
        let tol = 1e-9 * domain.diameter();
        if let Some((x, y)) = (0..domain.n())
            .flat_map(|x| (0..domain.n()).map(move |y| (x, y)))
            .find(|&(x, y)| x != y && (domain.d(x, y) - config.rho).abs() < tol)
        {
            warnings.push(format!(
                "rho = {} is within {tol:e} of the distance d({x}, {y}); the open ball excludes that pair",
                config.rho
            ));
        }
        Ok(Self {
            domain,
            config,
            b,
            rows,
            warnings,
        })
    }

    pub fn domain(&self) -> &Arc<Space> {
        &self.domain
    }

    pub fn config(&self) -> &EnergyConfig {
        &self.config
    }

    /// `b(x, ρ)` per point.
    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// Kernel rows `(y, d(x,y), k(x,y))` in ascending `y`.
    pub fn rows(&self) -> &[Vec<(usize, f64, f64)>] {
        &self.rows
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn check_map(&self, u: &MappedFunction) -> Result<()> {
        if !crate::mapping::same_space(u.domain(), &self.domain) {
            return Err(Error::Mismatch("map and energy live on different domains".into()));
        }
        Ok(())
    }

    /// `e_u(x)` at every point.
    pub fn density(&self, u: &MappedFunction) -> Result<Vec<f64>> {
        self.check_map(u)?;
        Ok(density_from_rows(u, &self.rows, self.config.p))
    }

    /// `E(u) = ½ Σ_x w_x e_u(x)`.
    pub fn energy(&self, u: &MappedFunction) -> Result<f64> {
        let e = self.density(u)?;
        Ok(0.5 * e.iter().zip(self.domain.weights()).map(|(a, w)| a * w).sum::<f64>())
    }

    /// Number of connected components of the graph of kernel pairs.
    pub fn components(&self) -> usize {
        let labels = self.domain.components(self.config.rho);
        labels.iter().max().map_or(0, |m| m + 1)
    }

    /// The generator `A` with `E(u) = ⟨Au, u⟩_w` (quadratic real case).
    pub fn generator(&self) -> Result<Generator> {
        if self.config.p != 2.0 {
            return Err(Error::Unsupported(format!(
                "generators need p = 2, got p = {}",
                self.config.p
            )));
        }
        let n = self.domain.n();
        let mut l = DMatrix::<f64>::zeros(n, n);
        for (x, row) in self.rows.iter().enumerate() {
            for &(y, _, k) in row {
                // symmetrized kernel (k_xy + k_yx)/2 enters both rows
                let s = 0.5 * k;
                l[(x, y)] -= s;
                l[(y, x)] -= s;
                l[(x, x)] += s;
                l[(y, y)] += s;
            }
        }
        Ok(Generator {
            laplacian: l,
            weights: self.domain.weights().to_vec(),
        })
    }
}

/// `e_u` for a map and a configuration, assembling the kernel on the fly.
pub fn energy_density(u: &MappedFunction, config: &EnergyConfig) -> Result<Vec<f64>> {
    EnergyForm::assemble(u.domain().clone(), config.clone())?.density(u)
}

/// `E(u)` for a map and a configuration.
pub fn energy(u: &MappedFunction, config: &EnergyConfig) -> Result<f64> {
    EnergyForm::assemble(u.domain().clone(), config.clone())?.energy(u)
}

/// Generator of the quadratic energy on a domain (`p = 2`, real target).
pub fn assemble_generator(config: &EnergyConfig, domain: Arc<Space>) -> Result<Generator> {
    EnergyForm::assemble(domain, config.clone())?.generator()
}

/// A weighted self-adjoint operator `A = W⁻¹ L` on `L²(w)`, stored through
/// its symmetric part `L = W A` (the stiffness matrix of the energy).
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    laplacian: DMatrix<f64>,
    weights: Vec<f64>,
}

/// Relative asymmetry of `W A` tolerated by [`Generator::from_matrix`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

impl Generator {
    /// From `A` and the weights; `W A` must be symmetric.
    pub fn from_matrix(a: DMatrix<f64>, weights: Vec<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::NotSquare {
                rows: n,
                row: 0,
                len: a.ncols(),
            });
        }
        if weights.len() != n {
            return Err(Error::WeightLength {
                got: weights.len(),
                expected: n,
            });
        }
        if let Some((i, &w)) = weights.iter().enumerate().find(|(_, w)| !(**w > 0.0)) {
            return Err(Error::NonpositiveWeight { i, value: w });
        }
        let mut l = a;
        for i in 0..n {
            for j in 0..n {
                l[(i, j)] *= weights[i];
            }
        }
        let scale = l.amax().max(f64::MIN_POSITIVE);
        let asym = (&l - l.transpose()).amax() / scale;
        if asym > SYMMETRY_TOLERANCE {
            return Err(Error::NonSymmetric {
                asymmetry: asym,
                tolerance: SYMMETRY_TOLERANCE,
            });
        }
        let l = 0.5 * (&l + l.transpose());
        Ok(Self {
            laplacian: l,
            weights,
        })
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `L = W A`, symmetric.
    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    /// `A = W⁻¹ L`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut a = self.laplacian.clone();
        for i in 0..self.n() {
            let w = self.weights[i];
            a.row_mut(i).iter_mut().for_each(|v| *v /= w);
        }
        a
    }

    /// `W^{-1/2} L W^{-1/2}`, similar to `A` and symmetric.
    pub fn symmetric(&self) -> DMatrix<f64> {
        let s: Vec<f64> = self.weights.iter().map(|w| 1.0 / w.sqrt()).collect();
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| s[i] * self.laplacian[(i, j)] * s[j])
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let lu = &self.laplacian * nalgebra::DVector::from_column_slice(u);
        lu.iter().zip(&self.weights).map(|(v, w)| v / w).collect()
    }

    /// `⟨u, v⟩_w`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).zip(&self.weights).map(|((a, b), w)| a * b * w).sum()
    }

    /// `⟨Au, u⟩_w = uᵀ L u`.
    pub fn quadratic_form(&self, u: &[f64]) -> f64 {
        let v = nalgebra::DVector::from_column_slice(u);
        (v.transpose() * &self.laplacian * &v)[(0, 0)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{sample_circle, sample_interval};
    use std::f64::consts::PI;

    fn two_point(delta: f64, wa: f64, wb: f64) -> Arc<Space> {
        Arc::new(Space::new(vec![vec![0.0, delta], vec![delta, 0.0]], vec![wa, wb]).unwrap())
    }

    #[test]
    fn two_point_density_and_energy() {
        let (wa, wb, rho) = (0.3, 0.9, 0.5);
        let m = two_point(0.2, wa, wb);
        let u = MappedFunction::real(m, &[0.0, 1.0]).unwrap();
        for p in [1.0, 2.0, 3.0] {
            let e = energy_density(&u, &EnergyConfig::new(p, rho)).unwrap();
            // Oracle: e(a) = w_b / ((w_a + w_b) ρ^p)
            assert!((e[0] - wb / ((wa + wb) * rho.powf(p))).abs() < 1e-14);
            assert!((e[1] - wa / ((wa + wb) * rho.powf(p))).abs() < 1e-14);
        }
        let en = energy(&u, &EnergyConfig::new(2.0, rho)).unwrap();
        assert!((en - wa * wb / ((wa + wb) * rho * rho)).abs() < 1e-14);
    }

    #[test]
    fn constants_and_small_radius_give_zero() {
        let m = Arc::new(sample_circle(12, 1.0).unwrap());
        let c = MappedFunction::real(m.clone(), &[4.0; 12]).unwrap();
        assert!(energy_density(&c, &EnergyConfig::new(2.0, 0.3)).unwrap().iter().all(|&v| v == 0.0));
        let u = MappedFunction::real(m, &(0..12).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
        let e = energy_density(&u, &EnergyConfig::new(2.0, 0.05)).unwrap();
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_point_generator() {
        let (wa, wb, rho) = (0.25, 0.75, 0.4);
        let g = assemble_generator(&EnergyConfig::new(2.0, rho), two_point(0.1, wa, wb)).unwrap();
        let a = g.matrix();
        // Oracle: A = (1/((w_a+w_b)ρ²)) [[w_b, −w_b], [−w_a, w_a]]
        let s = 1.0 / ((wa + wb) * rho * rho);
        let expect = [[wb * s, -wb * s], [-wa * s, wa * s]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((a[(i, j)] - expect[i][j]).abs() < 1e-12);
            }
        }
        let u = [0.0, 1.0];
        let en = energy(
            &MappedFunction::real(two_point(0.1, wa, wb), &u).unwrap(),
            &EnergyConfig::new(2.0, rho),
        )
        .unwrap();
        assert!((g.quadratic_form(&u) - en).abs() < 1e-14);
        assert!((a.trace() - 1.0 / (rho * rho)).abs() < 1e-12);
    }

    #[test]
    fn generator_kills_constants_and_matches_energy() {
        let m = Arc::new(sample_interval(20, 1.0).unwrap());
        for h in [HMode::ConstantRho, HMode::PairwiseDistance] {
            let cfg = EnergyConfig::new(2.0, 0.17).with_h(h);
            let form = EnergyForm::assemble(m.clone(), cfg).unwrap();
            let g = form.generator().unwrap();
            assert!(g.apply(&[1.0; 20]).iter().all(|v| v.abs() < 1e-10));
            let u: Vec<f64> = (0..20).map(|i| ((i * 7) % 5) as f64 - 1.3).collect();
            let en = form.energy(&MappedFunction::real(m.clone(), &u).unwrap()).unwrap();
            assert!((g.quadratic_form(&u) - en).abs() <= 1e-10 * (1.0 + en));
            let back = Generator::from_matrix(g.matrix(), g.weights().to_vec()).unwrap();
            assert!((back.laplacian() - g.laplacian()).amax() < 1e-9);
        }
    }

    #[test]
    fn nonsymmetric_input_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 1.0]);
        assert!(matches!(
            Generator::from_matrix(a, vec![1.0, 1.0]),
            Err(Error::NonSymmetric { .. })
        ));
    }

    #[test]
    fn p_other_than_two_has_no_generator() {
        let m = Arc::new(sample_circle(8, 1.0).unwrap());
        assert!(assemble_generator(&EnergyConfig::new(3.0, 0.3), m).is_err());
    }

    #[test]
    fn user_table_is_checked() {
        let m = Arc::new(sample_interval(5, 1.0).unwrap());
        let vol = ball_masses(&m, 0.3, false);
        let ok = EnergyConfig::new(2.0, 0.3).with_b(BMode::UserTable(vol.iter().map(|v| v * 1.5).collect()));
        let mut ok = ok;
        ok.kappa = 0.5;
        assert!(EnergyForm::assemble(m.clone(), ok).is_ok());
        let small = EnergyConfig::new(2.0, 0.3).with_b(BMode::UserTable(vol.iter().map(|v| v * 0.5).collect()));
        assert!(EnergyForm::assemble(m, small).is_err());
    }

    #[test]
    fn radius_on_a_distance_warns() {
        let m = Arc::new(sample_interval(5, 1.0).unwrap());
        let f = EnergyForm::assemble(m.clone(), EnergyConfig::new(2.0, 0.25)).unwrap();
        assert_eq!(f.warnings().len(), 1);
        let f = EnergyForm::assemble(m, EnergyConfig::new(2.0, 0.3)).unwrap();
        assert!(f.warnings().is_empty());
    }

    #[test]
    fn circle_energy_of_sine() {
        // Lebesgue weights 2π/n; the discrete kernel sum is the oracle and
        // the values approach (1/6)∫ cos² = π/6 as ρ → 0 and n → ∞.
        let n = 2048;
        let mass = 2.0 * PI;
        let w = mass / n as f64;
        let m = Arc::new(sample_circle(n, 2.0 * PI).unwrap().with_weights(vec![w; n]).unwrap());
        let u: Vec<f64> = (0..n).map(|i| (2.0 * PI * i as f64 / n as f64).sin()).collect();
        let u = MappedFunction::real(m, &u).unwrap();
        let s = 2.0 * PI / n as f64;
        let mut errs = Vec::new();
        for rho in [0.4, 0.2, 0.1] {
            let e = energy(&u, &EnergyConfig::new(2.0, rho)).unwrap();
            let ks: Vec<f64> = (1..n / 2).map(|k| k as f64 * s).filter(|&d| d < rho).collect();
            let ball = (2 * ks.len() + 1) as f64 * w;
            // Σ_x w (sin θ − sin(θ + d))² = mass (1 − cos d), offsets ±d
            let oracle: f64 = ks.iter().map(|&d| 2.0 * w * mass * (1.0 - d.cos())).sum::<f64>()
                / (2.0 * ball * rho * rho);
            assert!((e - oracle).abs() < 1e-12, "rho {rho}: {e} vs {oracle}");
            // continuum E^ρ(sin) = π (ρ − sin ρ) / ρ³ → π/6, ball-count error O(s/ρ)
            let cont = PI * (rho - rho.sin()) / rho.powi(3);
            assert!((e - cont).abs() <= e * s / rho, "rho {rho}: {e} vs {cont}");
            errs.push((cont - PI / 6.0).abs());
        }
        assert!(errs[2] < errs[1] && errs[1] < errs[0]);
        assert!(errs[2] < 1e-3);
    }
}
