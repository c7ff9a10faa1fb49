//! Symplectic form, quantum admissibility, Williamson normal form, and
//! seeded random symplectic generation.
//!
//! Conventions: quadratures are ordered mode-major `(Q_1, P_1, ..., Q_n, P_n)`,
//! the symplectic form `Δ` is block diagonal with 2x2 blocks `[[0,1],[-1,0]]`,
//! and the vacuum covariance is the identity. A symmetric matrix `σ` is a
//! quantum covariance iff the Hermitian matrix `σ + iΔ` is positive
//! semidefinite, equivalently iff all symplectic eigenvalues `ν_i` (the
//! absolute values of the eigenvalues of `Δ⁻¹σ`) are at least 1.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tol::TOL_PSD;
use crate::{Error, Result};

/// The symplectic form on `n` modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticForm {
    n: usize,
    delta: DMatrix<f64>,
}

impl SymplecticForm {
    /// Block-diagonal form with 2x2 blocks `[[0,1],[-1,0]]`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "mode count must be positive");
        let mut delta = DMatrix::zeros(2 * n, 2 * n);
        for k in 0..n {
            delta[(2 * k, 2 * k + 1)] = 1.0;
            delta[(2 * k + 1, 2 * k)] = -1.0;
        }
        Self { n, delta }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Phase-space dimension `2n`.
    pub fn dim(&self) -> usize {
        2 * self.n
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.delta
    }

    /// `Δ⁻¹ = -Δ` since `Δ² = -1`.
    pub fn inverse(&self) -> DMatrix<f64> {
        -&self.delta
    }
}

/// Real symmetric `2n x 2n` covariance matrix, vacuum-normalized.
///
/// Symmetrized on construction; admissibility is a separate check so that
/// classical (merely positive) matrices can share the type.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    n: usize,
    sigma: DMatrix<f64>,
}

impl CovarianceMatrix {
    pub fn new(n: usize, sigma: DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() != 2 * n || sigma.ncols() != 2 * n {
            return Err(Error::ShapeMismatch(format!(
                "covariance for {} modes must be {}x{}, got {}x{}",
                n,
                2 * n,
                2 * n,
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let sym = (&sigma + sigma.transpose()) * 0.5;
        Ok(Self { n, sigma: sym })
    }

    /// Vacuum: identity covariance.
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            sigma: DMatrix::identity(2 * n, 2 * n),
        }
    }

    /// Isotropic thermal covariance `nu * 1`.
    pub fn isotropic(n: usize, nu: f64) -> Self {
        Self {
            n,
            sigma: DMatrix::identity(2 * n, 2 * n) * nu,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        2 * self.n
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn is_admissible(&self) -> bool {
        is_admissible(self)
    }

    /// Max-norm of the matrix, used for relative tolerances.
    pub fn norm_inf(&self) -> f64 {
        self.sigma.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Williamson normal form: `σ = S · diag(ν_i ⊗ 1_2) · S^T` with `S` symplectic.
#[derive(Debug, Clone)]
pub struct SymplecticSpectrum {
    /// Symplectic eigenvalues, sorted descending.
    pub nus: Vec<f64>,
    /// Symplectic congruence bringing `σ` to normal form.
    pub s_matrix: DMatrix<f64>,
}

impl SymplecticSpectrum {
    /// `diag(ν_1, ν_1, ν_2, ν_2, ...)`.
    pub fn normal_form(&self) -> DMatrix<f64> {
        let dim = 2 * self.nus.len();
        DMatrix::from_fn(dim, dim, |i, j| {
            if i == j {
                self.nus[i / 2]
            } else {
                0.0
            }
        })
    }

    pub fn min_nu(&self) -> f64 {
        self.nus.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Hermitian eigendecomposition helper: eigenvalues ascending with
/// matching eigenvector columns.
fn hermitian_eigen_sorted(m: DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let eig = m.symmetric_eigen();
    let dim = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(dim, dim);
    for (col, &i) in order.iter().enumerate() {
        vecs.set_column(col, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Symmetric eigendecomposition of a real matrix, eigenvalues ascending.
pub(crate) fn symmetric_eigen_sorted(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let dim = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(dim, dim);
    for (col, &i) in order.iter().enumerate() {
        vecs.set_column(col, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Spectral powers of a symmetric positive definite matrix.
fn spd_power(m: &DMatrix<f64>, p: f64) -> DMatrix<f64> {
    let (vals, vecs) = symmetric_eigen_sorted(m);
    let d = DMatrix::from_diagonal(&DVector::from_iterator(
        vals.len(),
        vals.iter().map(|&v| v.max(0.0).powf(p)),
    ));
    &vecs * d * vecs.transpose()
}

/// Quantum admissibility: `σ + iΔ ⪰ -tol` as a Hermitian eigencheck.
pub fn is_admissible(sigma: &CovarianceMatrix) -> bool {
    admissibility_min_eigenvalue(sigma) >= -TOL_PSD * sigma.norm_inf().max(1.0)
}

/// Smallest eigenvalue of the Hermitian matrix `σ + iΔ`.
pub fn admissibility_min_eigenvalue(sigma: &CovarianceMatrix) -> f64 {
    let dim = sigma.dim();
    let delta = SymplecticForm::new(sigma.n());
    let m = DMatrix::from_fn(dim, dim, |i, j| {
        Complex64::new(sigma.matrix()[(i, j)], delta.matrix()[(i, j)])
    });
    let (vals, _) = hermitian_eigen_sorted(m);
    vals[0]
}

/// Williamson decomposition of a positive definite covariance matrix.
///
/// Returns `ν_i` sorted descending together with a symplectic `S` such that
/// `S Δ S^T = Δ` and `S · diag(ν ⊗ 1_2) · S^T = σ`, both within
/// [`crate::tol::TOL_SYMP`].
///
/// The route: with `A = σ^{-1/2} Δ σ^{-1/2}` (antisymmetric), the Hermitian
/// matrix `iA` has eigenvalues `±κ_i` with `κ_i = 1/ν_i`; the real and
/// imaginary parts of the positive-eigenvalue eigenvectors assemble an
/// orthogonal `O` with `O^T A O = ⊕ κ_i J_2`, and `S = σ^{1/2} O D^{-1/2}`.
pub fn williamson(sigma: &CovarianceMatrix) -> Result<SymplecticSpectrum> {
    let dim = sigma.dim();
    let n = sigma.n();
    let (vals, _) = symmetric_eigen_sorted(sigma.matrix());
    let scale = sigma.norm_inf().max(1.0);
    if vals[0] <= TOL_PSD * scale {
        return Err(Error::NotPositiveDefinite { min_eig: vals[0] });
    }

    let sqrt_sigma = spd_power(sigma.matrix(), 0.5);
    let inv_sqrt_sigma = spd_power(sigma.matrix(), -0.5);
    let delta = SymplecticForm::new(n);

    let a = &inv_sqrt_sigma * delta.matrix() * &inv_sqrt_sigma;
    let a = (&a - a.transpose()) * 0.5; // kill symmetric roundoff
    let ia = DMatrix::from_fn(dim, dim, |i, j| Complex64::new(0.0, a[(i, j)]));
    let (kappas, vecs) = hermitian_eigen_sorted(ia);

    // Positive eigenvalues are the top n; ascending kappa = descending nu.
    let mut nus = Vec::with_capacity(n);
    let mut ortho = DMatrix::zeros(dim, dim);
    let sqrt2 = std::f64::consts::SQRT_2;
    for (mode, idx) in (dim - n..dim).enumerate() {
        let kappa = kappas[idx];
        debug_assert!(kappa > 0.0, "positive-definite sigma gives kappa > 0");
        nus.push(1.0 / kappa);
        let z = vecs.column(idx);
        // A u = κ v, A v = -κ u; the (√2 v, √2 u) pair carries block κ J_2.
        for r in 0..dim {
            ortho[(r, 2 * mode)] = sqrt2 * z[r].im;
            ortho[(r, 2 * mode + 1)] = sqrt2 * z[r].re;
        }
    }

    let d_inv_sqrt = DMatrix::from_fn(dim, dim, |i, j| {
        if i == j {
            1.0 / nus[i / 2].sqrt()
        } else {
            0.0
        }
    });
    let s_matrix = &sqrt_sigma * &ortho * d_inv_sqrt;

    Ok(SymplecticSpectrum { nus, s_matrix })
}

/// Symplectic eigenvalues only (no congruence matrix).
pub fn symplectic_eigenvalues(sigma: &CovarianceMatrix) -> Result<Vec<f64>> {
    Ok(williamson(sigma)?.nus)
}

/// Residual `||S Δ S^T - Δ||_inf` of a purported symplectic matrix.
pub fn symplectic_residual(s: &DMatrix<f64>) -> f64 {
    let n = s.nrows() / 2;
    let delta = SymplecticForm::new(n);
    let r = s * delta.matrix() * s.transpose() - delta.matrix();
    r.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Random symplectic matrix `S = exp(Δ H)` with `H` symmetric Gaussian.
///
/// Entries of `H` are i.i.d. normal with standard deviation `scale`;
/// deterministic per seed. `scale = 0` returns the identity.
pub fn random_symplectic(n: usize, seed: u64, scale: f64) -> DMatrix<f64> {
    assert!(scale >= 0.0, "scale must be nonnegative");
    let dim = 2 * n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in i..dim {
            let x: f64 = rng.sample(StandardNormal);
            h[(i, j)] = scale * x;
            h[(j, i)] = scale * x;
        }
    }
    let delta = SymplecticForm::new(n);
    (delta.matrix() * h).exp()
}

/// Random admissible covariance `S · diag(ν ⊗ 1_2) · S^T` with `ν_i` drawn
/// uniformly from `[nu_lo, nu_hi]` and `S` a random symplectic.
///
/// Admissible by construction. Test and sweep plumbing.
pub fn random_covariance(n: usize, seed: u64, nu_lo: f64, nu_hi: f64, scale: f64) -> CovarianceMatrix {
    assert!(nu_lo >= 1.0 && nu_hi >= nu_lo, "need 1 <= nu_lo <= nu_hi");
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1));
    let nus: Vec<f64> = (0..n)
        .map(|_| nu_lo + (nu_hi - nu_lo) * rng.random::<f64>())
        .collect();
    let s = random_symplectic(n, seed, scale);
    let dim = 2 * n;
    let d = DMatrix::from_fn(dim, dim, |i, j| if i == j { nus[i / 2] } else { 0.0 });
    let sigma = &s * d * s.transpose();
    CovarianceMatrix::new(n, sigma).expect("square by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-9;

    #[test]
    fn delta_squares_to_minus_identity() {
        for n in [1, 2, 4] {
            let f = SymplecticForm::new(n);
            let d2 = f.matrix() * f.matrix();
            let id = DMatrix::<f64>::identity(2 * n, 2 * n);
            assert!((d2 + &id).norm() < 1e-15);
            assert!((f.matrix() + f.matrix().transpose()).norm() < 1e-15);
            assert!((f.matrix().determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn williamson_vacuum() {
        let sigma = CovarianceMatrix::identity(1);
        let spec = williamson(&sigma).unwrap();
        assert!((spec.nus[0] - 1.0).abs() < TOL);
        let id = DMatrix::<f64>::identity(2, 2);
        // Any symplectic-orthogonal S is valid for the identity; check the contracts.
        assert!(symplectic_residual(&spec.s_matrix) < TOL);
        let rec = &spec.s_matrix * spec.normal_form() * spec.s_matrix.transpose();
        assert!((rec - id).norm() < TOL);
    }

    #[test]
    fn williamson_diag_4_1() {
        // Independent oracle: eigenvalues of Delta^-1 sigma for diag(4,1) are
        // roots of x^2 + 4 = 0, i.e. +/- 2i, so nu = 2.
        let sigma = CovarianceMatrix::new(1, DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]))).unwrap();
        let spec = williamson(&sigma).unwrap();
        assert!((spec.nus[0] - 2.0).abs() < TOL);
        let rec = &spec.s_matrix * spec.normal_form() * spec.s_matrix.transpose();
        assert!((rec - sigma.matrix()).norm() < TOL);
        assert!(symplectic_residual(&spec.s_matrix) < TOL);
    }

    #[test]
    fn williamson_isotropic_thermal_two_modes() {
        let sigma = CovarianceMatrix::isotropic(2, 3.0);
        let spec = williamson(&sigma).unwrap();
        assert_eq!(spec.nus.len(), 2);
        for nu in &spec.nus {
            assert!((nu - 3.0).abs() < TOL);
        }
        assert!(symplectic_residual(&spec.s_matrix) < TOL);
    }

    #[test]
    fn williamson_rejects_non_positive() {
        let sigma = CovarianceMatrix::new(
            1,
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5])),
        )
        .unwrap();
        assert!(matches!(
            williamson(&sigma),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn williamson_matches_complex_eigenvalue_route() {
        // Two independent computation paths: Hermitian i*A eigensolve inside
        // williamson vs |imag| of the general complex eigenvalues of Delta^-1 sigma.
        for seed in 0..40u64 {
            let n = 1 + (seed % 4) as usize;
            let sigma = random_covariance(n, seed, 1.0, 8.0, 0.4);
            let spec = williamson(&sigma).unwrap();
            let delta = SymplecticForm::new(n);
            let m = delta.inverse() * sigma.matrix();
            let eigs = m.complex_eigenvalues();
            let mut mags: Vec<f64> = eigs.iter().map(|z| z.im.abs()).collect();
            mags.sort_by(f64::total_cmp);
            // Each nu appears twice as +/- i nu.
            let mut expected: Vec<f64> = spec.nus.iter().flat_map(|&v| [v, v]).collect();
            expected.sort_by(f64::total_cmp);
            for (a, b) in mags.iter().zip(expected.iter()) {
                assert!((a - b).abs() < 1e-9 * b.max(1.0), "nu mismatch: {a} vs {b}");
            }
        }
    }

    #[test]
    fn williamson_roundtrip_random() {
        for seed in 0..1000u64 {
            let n = 1 + (seed % 4) as usize;
            let sigma = random_covariance(n, seed, 1.0, 20.0, 0.5);
            let spec = williamson(&sigma).unwrap();
            let rec = &spec.s_matrix * spec.normal_form() * spec.s_matrix.transpose();
            let err = (rec - sigma.matrix()).iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(err <= 1e-9 * sigma.norm_inf(), "reconstruction err {err}");
            assert!(symplectic_residual(&spec.s_matrix) <= 1e-9);
        }
    }

    #[test]
    fn admissibility_examples() {
        assert!(is_admissible(&CovarianceMatrix::identity(1)));
        assert!(is_admissible(&CovarianceMatrix::identity(3)));
        // nu = 0.5 < 1: not a quantum state.
        assert!(!is_admissible(&CovarianceMatrix::isotropic(1, 0.5)));
        // diag(4,1) has nu = 2 >= 1.
        let sigma = CovarianceMatrix::new(
            1,
            DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])),
        )
        .unwrap();
        assert!(is_admissible(&sigma));
    }

    #[test]
    fn random_symplectic_is_symplectic() {
        for seed in 0..50u64 {
            let n = 1 + (seed % 4) as usize;
            let s = random_symplectic(n, seed, 0.3);
            assert!(symplectic_residual(&s) <= 1e-9, "residual {}", symplectic_residual(&s));
            assert!((s.determinant() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn random_symplectic_zero_scale_is_identity() {
        let s = random_symplectic(3, 7, 0.0);
        assert!((s - DMatrix::<f64>::identity(6, 6)).norm() < 1e-15);
    }

    #[test]
    fn random_symplectic_deterministic() {
        let a = random_symplectic(2, 42, 0.3);
        let b = random_symplectic(2, 42, 0.3);
        assert_eq!(a, b);
        let c = random_symplectic(2, 43, 0.3);
        assert_ne!(a, c);
    }
}
