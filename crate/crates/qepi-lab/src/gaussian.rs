//! Gaussian states at covariance level: entropy, Fisher information,
//! displaced relative entropy, Gaussianization.
//!
//! The von Neumann entropy of a Gaussian state is `S = Σ_i h(ν_i)` over the
//! Williamson spectrum of its covariance, with
//!
//! ```text
//! h(ν) = (ν+1)/2 · ln((ν+1)/2) − (ν−1)/2 · ln((ν−1)/2),     h(1) = 0.
//! ```
//!
//! The Fisher information matrix is the Hessian in the displacement `x` of
//! `S(ρ ‖ D_x ρ D_x†)` at `x = 0`. For Gaussian states it takes the
//! normal-mode form `J = S⁻ᵀ (⊕_i β_i 1_2) S⁻¹` with
//! `β_i = ln((ν_i+1)/(ν_i−1))`; this closed form is gated by the de Bruijn
//! finite-difference cross-check `dS/dt = ¼ tr(J γ)` exercised in the tests,
//! which pins `J` entrywise through an independent computation path.

use nalgebra::{DMatrix, DVector};

use crate::symplectic::{self, CovarianceMatrix, SymplecticSpectrum};
use crate::tol::{NU_FLOOR, TOL_PSD};
use crate::{Error, Result};

/// Mean vector plus admissible covariance.
#[derive(Debug, Clone)]
pub struct GaussianState {
    mean: DVector<f64>,
    cov: CovarianceMatrix,
}

impl GaussianState {
    /// Builds a state, rejecting inadmissible covariances.
    pub fn new(mean: DVector<f64>, cov: CovarianceMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::ShapeMismatch(format!(
                "mean has length {}, covariance is {}x{}",
                mean.len(),
                cov.dim(),
                cov.dim()
            )));
        }
        let min_eig = symplectic::admissibility_min_eigenvalue(&cov);
        if min_eig < -TOL_PSD * cov.norm_inf().max(1.0) {
            return Err(Error::InadmissibleCovariance { min_eig });
        }
        Ok(Self { mean, cov })
    }

    /// Centered state from a covariance alone.
    pub fn centered(cov: CovarianceMatrix) -> Result<Self> {
        let dim = cov.dim();
        Self::new(DVector::zeros(dim), cov)
    }

    pub fn vacuum(n: usize) -> Self {
        Self {
            mean: DVector::zeros(2 * n),
            cov: CovarianceMatrix::identity(n),
        }
    }

    /// Isotropic thermal state with symplectic eigenvalue `nu` on every mode.
    pub fn thermal(n: usize, nu: f64) -> Result<Self> {
        if nu < 1.0 - TOL_PSD {
            return Err(Error::Domain(format!("thermal nu must be >= 1, got {nu}")));
        }
        Ok(Self {
            mean: DVector::zeros(2 * n),
            cov: CovarianceMatrix::isotropic(n, nu.max(1.0)),
        })
    }

    pub fn n(&self) -> usize {
        self.cov.n()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &CovarianceMatrix {
        &self.cov
    }

    pub fn entropy(&self) -> Result<f64> {
        entropy(self)
    }
}

/// Symmetric positive-semidefinite Fisher information matrix.
#[derive(Debug, Clone)]
pub struct FisherMatrix {
    j: DMatrix<f64>,
}

impl FisherMatrix {
    pub(crate) fn new(j: DMatrix<f64>) -> Self {
        let sym = (&j + j.transpose()) * 0.5;
        Self { j: sym }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.j
    }

    pub fn trace(&self) -> f64 {
        self.j.trace()
    }

    /// `tr(J · g)` against an arbitrary square matrix of matching size.
    pub fn trace_product(&self, g: &DMatrix<f64>) -> f64 {
        (&self.j * g).trace()
    }
}

/// Thermal-mode entropy `h(ν)` in nats.
///
/// Evaluated in the expansion-safe form with the `0 ln 0 = 0` convention at
/// `ν = 1`; values inside the admissibility tolerance band below 1 clamp to 0.
pub fn entropy_h(nu: f64) -> Result<f64> {
    if nu < 1.0 - TOL_PSD {
        return Err(Error::Domain(format!(
            "entropy_h needs nu >= 1 (within tolerance), got {nu}"
        )));
    }
    let up = (nu + 1.0) / 2.0;
    let dn = (nu - 1.0) / 2.0;
    let mut h = up * up.ln();
    if dn > 0.0 {
        h -= dn * dn.ln();
    }
    Ok(h.max(0.0))
}

/// `Σ_i h(ν_i)` over the Williamson spectrum; independent of the mean.
pub fn entropy(state: &GaussianState) -> Result<f64> {
    entropy_of_cov(state.cov())
}

/// Entropy straight from a covariance matrix.
pub fn entropy_of_cov(cov: &CovarianceMatrix) -> Result<f64> {
    let nus = symplectic::symplectic_eigenvalues(cov)?;
    nus.iter().map(|&nu| entropy_h(nu)).sum()
}

fn beta(nu: f64) -> f64 {
    ((nu + 1.0) / (nu - 1.0)).ln()
}

fn fisher_from_spectrum(spec: &SymplecticSpectrum) -> Result<FisherMatrix> {
    for &nu in &spec.nus {
        if nu <= 1.0 + NU_FLOOR {
            return Err(Error::PureMode { nu });
        }
    }
    let dim = 2 * spec.nus.len();
    let b = DMatrix::from_fn(dim, dim, |i, j| {
        if i == j {
            beta(spec.nus[i / 2])
        } else {
            0.0
        }
    });
    let s_inv = spec
        .s_matrix
        .clone()
        .try_inverse()
        .expect("symplectic matrices are invertible");
    Ok(FisherMatrix::new(s_inv.transpose() * b * s_inv))
}

/// Fisher information matrix `J = S⁻ᵀ (⊕ β_i 1_2) S⁻¹` of a strictly mixed
/// Gaussian state.
///
/// Errors with [`Error::PureMode`] when any `ν_i <= 1 + NU_FLOOR`: the
/// divergence at pure normal modes is surfaced, not regularized.
pub fn fisher(state: &GaussianState) -> Result<FisherMatrix> {
    fisher_of_cov(state.cov())
}

/// Fisher information straight from a covariance matrix.
pub fn fisher_of_cov(cov: &CovarianceMatrix) -> Result<FisherMatrix> {
    let spec = symplectic::williamson(cov)?;
    fisher_from_spectrum(&spec)
}

/// Exact Gaussian relative entropy between a state and its displaced copy:
/// `S(ρ ‖ D_x ρ D_x†) = ½ xᵀ J x`.
pub fn relative_entropy_displaced(state: &GaussianState, x: &DVector<f64>) -> Result<f64> {
    if x.len() != state.cov().dim() {
        return Err(Error::ShapeMismatch(format!(
            "displacement has length {}, expected {}",
            x.len(),
            state.cov().dim()
        )));
    }
    let j = fisher(state)?;
    Ok(0.5 * (x.transpose() * j.matrix() * x)[(0, 0)])
}

/// The Gaussian state with the given first and second moments.
///
/// Used as the entropy upper-bound comparator: Gaussianization never
/// decreases entropy.
pub fn gaussianize(mean: DVector<f64>, cov: CovarianceMatrix) -> Result<GaussianState> {
    GaussianState::new(mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symplectic::random_covariance;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn entropy_h_examples() {
        assert_eq!(entropy_h(1.0).unwrap(), 0.0);
        // h(3) = 2 ln 2 - 1 ln 1 = 2 ln 2.
        assert!((entropy_h(3.0).unwrap() - 2.0 * LN2).abs() < 1e-12);
        // h(2) = 1.5 ln 1.5 + 0.5 ln 2.
        let expect = 1.5 * 1.5f64.ln() + 0.5 * LN2;
        assert!((entropy_h(2.0).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.954771).abs() < 1e-6);
        assert!(entropy_h(0.5).is_err());
    }

    #[test]
    fn entropy_h_near_one_is_continuous() {
        let eps = 1e-12;
        let h = entropy_h(1.0 + eps).unwrap();
        assert!((0.0..1e-10).contains(&h));
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&GaussianState::vacuum(3)).unwrap(), 0.0);
        let s = entropy(&GaussianState::thermal(2, 3.0).unwrap()).unwrap();
        assert!((s - 4.0 * LN2).abs() < 1e-9);
        assert!((s - 2.772589).abs() < 1e-6);
    }

    #[test]
    fn entropy_symplectically_invariant() {
        for seed in 0..20u64 {
            let s = crate::symplectic::random_symplectic(2, seed, 0.4);
            let base = CovarianceMatrix::isotropic(2, 3.0);
            let conj = CovarianceMatrix::new(2, &s * base.matrix() * s.transpose()).unwrap();
            let e = entropy_of_cov(&conj).unwrap();
            assert!(
                (e - 2.0 * entropy_h(3.0).unwrap()).abs() < 1e-9,
                "seed {seed}: {e}"
            );
        }
    }

    #[test]
    fn fisher_thermal_closed_form() {
        // J(thermal nu) = ln((nu+1)/(nu-1)) * I; nu = 3 gives ln 2.
        let st = GaussianState::thermal(1, 3.0).unwrap();
        let j = fisher(&st).unwrap();
        let expect = DMatrix::<f64>::identity(2, 2) * LN2;
        assert!((j.matrix() - expect).norm() < 1e-12);
    }

    #[test]
    fn fisher_norm_decreases_with_temperature() {
        let mut last = f64::INFINITY;
        for c in [3.0, 10.0, 100.0] {
            let st = GaussianState::thermal(1, c).unwrap();
            let norm = fisher(&st).unwrap().matrix().norm();
            assert!(norm < last, "beta must decrease with nu");
            last = norm;
        }
    }

    #[test]
    fn fisher_rejects_pure_modes() {
        let st = GaussianState::vacuum(2);
        assert!(matches!(fisher(&st), Err(Error::PureMode { .. })));
    }

    #[test]
    fn fisher_covariant_under_symplectic_conjugation() {
        for seed in 0..10u64 {
            let s = crate::symplectic::random_symplectic(1, seed, 0.5);
            let sigma =
                CovarianceMatrix::new(1, &s * 3.0 * DMatrix::identity(2, 2) * s.transpose())
                    .unwrap();
            let j = fisher_of_cov(&sigma).unwrap();
            let s_inv = s.clone().try_inverse().unwrap();
            let expect = s_inv.transpose() * LN2 * DMatrix::identity(2, 2) * &s_inv;
            assert!(
                (j.matrix() - &expect).norm() < 1e-9 * expect.norm(),
                "seed {seed}"
            );
        }
    }

    /// Finite-difference de Bruijn oracle: reconstructs J entrywise from
    /// centered differences of t -> entropy(sigma + t*gamma) along symmetric
    /// basis directions, fully independent of the normal-mode closed form.
    fn fisher_via_debruijn_fd(cov: &CovarianceMatrix, step: f64) -> DMatrix<f64> {
        let dim = cov.dim();
        let n = cov.n();
        let mut j = DMatrix::zeros(dim, dim);
        for p in 0..dim {
            for q in p..dim {
                let mut gamma = DMatrix::zeros(dim, dim);
                gamma[(p, q)] += 1.0;
                gamma[(q, p)] += 1.0;
                let plus =
                    entropy_of_cov(&CovarianceMatrix::new(n, cov.matrix() + &gamma * step).unwrap())
                        .unwrap();
                let minus =
                    entropy_of_cov(&CovarianceMatrix::new(n, cov.matrix() - &gamma * step).unwrap())
                        .unwrap();
                let ds = (plus - minus) / (2.0 * step);
                // dS/dt = 1/4 tr(J gamma) and tr(J gamma) = 2 J_pq for this
                // direction (the diagonal one carries gamma_pp = 2).
                let tr_j_gamma = 4.0 * ds;
                j[(p, q)] = tr_j_gamma / 2.0;
                j[(q, p)] = tr_j_gamma / 2.0;
            }
        }
        j
    }

    #[test]
    fn fisher_matches_debruijn_finite_differences() {
        for seed in 0..12u64 {
            let n = 1 + (seed % 2) as usize;
            let cov = random_covariance(n, seed + 100, 1.3, 8.0, 0.4);
            let j = fisher_of_cov(&cov).unwrap();
            let j_fd = fisher_via_debruijn_fd(&cov, 1e-4);
            let err = (j.matrix() - &j_fd).norm() / j_fd.norm();
            assert!(err < 1e-5, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn fisher_is_symmetric_psd() {
        for seed in 0..30u64 {
            let n = 1 + (seed % 3) as usize;
            let cov = random_covariance(n, seed + 7, 1.2, 15.0, 0.4);
            let j = fisher_of_cov(&cov).unwrap();
            assert!((j.matrix() - j.matrix().transpose()).norm() < 1e-9);
            let (vals, _) = crate::symplectic::symmetric_eigen_sorted(j.matrix());
            assert!(vals[0] >= -1e-9 * j.matrix().norm());
        }
    }

    #[test]
    fn relative_entropy_displaced_examples() {
        let st = GaussianState::thermal(1, 3.0).unwrap();
        let zero = DVector::zeros(2);
        assert_eq!(relative_entropy_displaced(&st, &zero).unwrap(), 0.0);

        let x = DVector::from_vec(vec![1.0, 0.0]);
        let v = relative_entropy_displaced(&st, &x).unwrap();
        assert!((v - 0.5 * LN2).abs() < 1e-12);
        assert!((v - 0.346574).abs() < 1e-6);

        // Quadratic form: value at 2x is 4x the value at x.
        let v2 = relative_entropy_displaced(&st, &(&x * 2.0)).unwrap();
        assert!((v2 - 4.0 * v).abs() < 1e-12);
    }

    #[test]
    fn entropy_monotone_under_added_noise() {
        let cov = random_covariance(2, 3, 1.0, 4.0, 0.3);
        let gamma = {
            let a = crate::symplectic::random_symplectic(2, 11, 0.3);
            CovarianceMatrix::new(2, &a * a.transpose()).unwrap()
        };
        let mut last = entropy_of_cov(&cov).unwrap();
        for k in 1..=8 {
            let t = 0.5 * k as f64;
            let bumped = CovarianceMatrix::new(2, cov.matrix() + gamma.matrix() * t).unwrap();
            let e = entropy_of_cov(&bumped).unwrap();
            assert!(e > last, "entropy must strictly increase, t = {t}");
            last = e;
        }
    }

    #[test]
    fn gaussianize_moments() {
        // Vacuum moments give the vacuum back.
        let g = gaussianize(DVector::zeros(2), CovarianceMatrix::identity(1)).unwrap();
        assert_eq!(entropy(&g).unwrap(), 0.0);

        // Moments of Fock |1>: mean 0, sigma = 3 I -> thermal nu = 3.
        let g = gaussianize(DVector::zeros(2), CovarianceMatrix::isotropic(1, 3.0)).unwrap();
        assert!((entropy(&g).unwrap() - 2.0 * LN2).abs() < 1e-9);

        // Idempotence through moments extraction.
        let again = gaussianize(g.mean().clone(), g.cov().clone()).unwrap();
        assert_eq!(g.cov().matrix(), again.cov().matrix());

        // Inadmissible moments are rejected.
        assert!(gaussianize(DVector::zeros(2), CovarianceMatrix::isotropic(1, 0.5)).is_err());
    }
}
