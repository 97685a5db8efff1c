//! Spectra of generators in the weighted inner product, spectral counting
//! and eigenvector comparison.

mod experiments;

pub use experiments::{
    eigen_convergence_experiment, mosco_resolvent_experiment, pullback, qcube_experiment, qcube_reference,
    sublevel_gh_experiment, ConvergenceReport, Extrapolation, Probes, SampledMappingSpace, Trace,
    NYQUIST_POINTS,
};

use crate::energy::Generator;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Eigenpairs of `A = W⁻¹L`, ascending, with eigenvectors orthonormal in
/// `⟨u, v⟩_w = Σ w_x u_x v_x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Size of the operator; `eigenvalues.len() < n` for partial spectra.
    pub n: usize,
}

/// Largest operator handled by the dense solver.
pub const MAX_DENSE: usize = 4096;

/// Endpoints closer than this to an eigenvalue are rejected.
pub const ENDPOINT_TOLERANCE: f64 = 1e-9;

/// The `k` smallest eigenpairs from a dense symmetric solve of
/// `W^{-1/2} L W^{-1/2}`.
pub fn eigensolve(gen: &Generator, k: usize) -> Result<Spectrum> {
    let n = gen.n();
    if k == 0 || k > n {
        return Err(Error::param(format!("requested {k} eigenpairs of an operator of size {n}")));
    }
    if n > MAX_DENSE {
        return Err(Error::param(format!("operator of size {n} exceeds the dense cap {MAX_DENSE}")));
    }
    let eig = SymmetricEigen::new(gen.symmetric());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let inv_sqrt: Vec<f64> = gen.weights().iter().map(|w| 1.0 / w.sqrt()).collect();
    let mut eigenvalues = Vec::with_capacity(k);
    let mut eigenvectors = Vec::with_capacity(k);
    for &j in order.iter().take(k) {
        eigenvalues.push(eig.eigenvalues[j]);
        let col = eig.eigenvectors.column(j);
        let mut v: Vec<f64> = col.iter().zip(&inv_sqrt).map(|(q, s)| q * s).collect();
        // sign convention: first entry of largest magnitude is positive
        let pivot = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |b, (i, x)| if x.abs() > b.1 + 1e-12 { (i, x.abs()) } else { b })
            .0;
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        eigenvectors.push(v);
    }
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
        weights: gen.weights().to_vec(),
        n,
    })
}

impl Spectrum {
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).zip(&self.weights).map(|((a, b), w)| a * b * w).sum()
    }

    /// `max_k |A v_k − λ_k v_k|_∞ / (1 + |λ_k|)`.
    pub fn max_residual(&self, gen: &Generator) -> f64 {
        self.eigenvalues
            .iter()
            .zip(&self.eigenvectors)
            .map(|(l, v)| {
                let av = gen.apply(v);
                av.iter().zip(v).map(|(a, x)| (a - l * x).abs()).fold(0.0, f64::max) / (1.0 + l.abs())
            })
            .fold(0.0, f64::max)
    }

    /// `max_{j,k} |⟨v_j, v_k⟩_w − δ_jk|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let k = self.eigenvectors.len();
        let mut worst = 0.0f64;
        for a in 0..k {
            for b in a..k {
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((self.inner(&self.eigenvectors[a], &self.eigenvectors[b]) - target).abs());
            }
        }
        worst
    }

    /// Eigenvalues within `tol · max(1, λ_max)` of zero.
    pub fn zero_multiplicity(&self, tol: f64) -> usize {
        let scale = self.eigenvalues.iter().fold(1.0f64, |m, l| m.max(l.abs()));
        self.eigenvalues.iter().filter(|l| l.abs() <= tol * scale).count()
    }
}

/// `n((a, b])`: eigenvalues in the half-open interval, with multiplicity.
///
/// Endpoints on the spectrum are rejected. For partial spectra `b` must lie
/// below the largest computed eigenvalue.
pub fn spectral_projection_count(spec: &Spectrum, a: f64, b: f64) -> Result<usize> {
    if !(a < b) {
        return Err(Error::param(format!("interval ({a}, {b}] is empty")));
    }
    for &l in &spec.eigenvalues {
        for end in [a, b] {
            if (end - l).abs() <= ENDPOINT_TOLERANCE * (1.0 + l.abs()) {
                return Err(Error::EndpointOnSpectrum { value: end, eigenvalue: l });
            }
        }
    }
    if spec.eigenvalues.len() < spec.n && spec.eigenvalues.last().is_none_or(|&l| b >= l) {
        return Err(Error::param(
            "interval reaches beyond the computed part of the spectrum",
        ));
    }
    Ok(spec.eigenvalues.iter().filter(|&&l| a < l && l <= b).count())
}

/// `‖u − s v‖_w` with the sign `s = ±1` chosen to maximize `⟨u, s v⟩_w`.
pub fn aligned_distance(u: &[f64], v: &[f64], weights: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).zip(weights).map(|((a, b), w)| a * b * w).sum();
    let s = if dot < 0.0 { -1.0 } else { 1.0 };
    u.iter()
        .zip(v)
        .zip(weights)
        .map(|((a, b), w)| w * (a - s * b).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Sine of the largest principal angle between the spans of two
/// `w`-orthonormal families of equal size.
pub fn subspace_gap(a: &[Vec<f64>], b: &[Vec<f64>], weights: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Mismatch("subspaces need equal nonzero dimension".into()));
    }
    let k = a.len();
    let g = DMatrix::<f64>::from_fn(k, k, |i, j| {
        a[i].iter().zip(&b[j]).zip(weights).map(|((x, y), w)| x * y * w).sum()
    });
    let sv = g.singular_values();
    let smallest = sv.iter().cloned().fold(f64::INFINITY, f64::min).min(1.0);
    Ok((1.0 - smallest * smallest).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{assemble_generator, EnergyConfig};
    use crate::metric::{sample_circle, FiniteMetricMeasureSpace as Space};
    use std::sync::Arc;

    #[test]
    fn two_point_spectrum() {
        let (wa, wb, rho) = (0.3, 0.5, 0.7);
        let m = Arc::new(Space::new(vec![vec![0.0, 0.2], vec![0.2, 0.0]], vec![wa, wb]).unwrap());
        let g = assemble_generator(&EnergyConfig::new(2.0, rho), m).unwrap();
        let s = eigensolve(&g, 2).unwrap();
        // Oracle: trace of the 2×2 generator is 1/ρ², determinant 0
        assert!(s.eigenvalues[0].abs() < 1e-12);
        assert!((s.eigenvalues[1] - 1.0 / (rho * rho)).abs() < 1e-12);
        assert!(s.max_residual(&g) < 1e-12 && s.orthonormality_defect() < 1e-12);
    }

    #[test]
    fn diagonal_matrix_spectrum() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let g = Generator::from_matrix(a, vec![1.0, 2.0, 0.5]).unwrap();
        let s = eigensolve(&g, 3).unwrap();
        for (l, d) in s.eigenvalues.iter().zip([1.0, 2.0, 3.0]) {
            assert!((l - d).abs() < 1e-14);
        }
        assert_eq!(spectral_projection_count(&s, 0.5, 2.5).unwrap(), 2);
    }

    #[test]
    fn circle_spectrum_structure() {
        let n = 40;
        let m = Arc::new(sample_circle(n, 2.0 * std::f64::consts::PI).unwrap());
        let g = assemble_generator(&EnergyConfig::new(2.0, 0.8), m).unwrap();
        let s = eigensolve(&g, n).unwrap();
        assert!(s.max_residual(&g) < 1e-9 && s.orthonormality_defect() < 1e-10);
        assert_eq!(s.zero_multiplicity(1e-9), 1);
        let c = s.eigenvectors[0][0];
        assert!(s.eigenvectors[0].iter().all(|v| (v - c).abs() < 1e-10));
        // circulant: nonzero modes come in equal pairs
        for k in [1, 3, 5] {
            assert!((s.eigenvalues[k] - s.eigenvalues[k + 1]).abs() < 1e-10);
        }
        assert!(s.eigenvalues.iter().all(|&l| l > -1e-12));
        let l2 = s.eigenvalues[1];
        assert_eq!(spectral_projection_count(&s, -2.0, -1.0).unwrap(), 0);
        assert_eq!(spectral_projection_count(&s, -1.0, 0.5 * l2).unwrap(), 1);
        let top = s.eigenvalues[n - 1];
        assert_eq!(spectral_projection_count(&s, -1.0, top + 1.0).unwrap(), n);
        assert!(matches!(
            spectral_projection_count(&s, -1.0, l2),
            Err(Error::EndpointOnSpectrum { .. })
        ));
    }

    #[test]
    fn isolated_point_adds_a_zero_mode() {
        let mut d = vec![vec![0.0; 5]; 5];
        for i in 0..4 {
            for j in 0..4 {
                d[i][j] = (i as f64 - j as f64).abs() * 0.1;
            }
            d[i][4] = 10.0 + i as f64 * 0.1;
            d[4][i] = d[i][4];
        }
        let m = Arc::new(Space::new(d, vec![0.2; 5]).unwrap());
        let g = assemble_generator(&EnergyConfig::new(2.0, 0.25), m.clone()).unwrap();
        let s = eigensolve(&g, 5).unwrap();
        assert_eq!(s.zero_multiplicity(1e-9), 2);
        assert_eq!(*m.components(0.25).iter().max().unwrap() + 1, 2);
    }

    #[test]
    fn alignment_helpers() {
        let w = vec![0.5, 0.5];
        assert!(aligned_distance(&[1.0, 1.0], &[-1.0, -1.0], &w) < 1e-15);
        let a = vec![vec![1.0, 1.0], vec![1.0, -1.0]];
        let b = vec![vec![1.0, -1.0], vec![-1.0, -1.0]];
        assert!(subspace_gap(&a, &b, &w).unwrap() < 1e-7);
        assert!((subspace_gap(&a[..1], &b[..1], &w).unwrap() - 1.0).abs() < 1e-12);
    }
}
