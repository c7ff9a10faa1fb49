//! Independent brute-force oracle in truncated Fock space (n = 1, K = 2).
//!
//! Channels act exactly: build `ρ_1 ⊗ ρ_2`, conjugate by the two-mode
//! unitary (beam-splitter or two-mode squeezer dilating the amplifier),
//! partial-trace the ancilla. Entropies come from eigenvalues, so nothing
//! here shares a code path with the covariance-level stack — that is the
//! point.
//!
//! Truncation bookkeeping: generators truncated to the finite space stay
//! antisymmetric, so their exponentials are exactly unitary and the trace is
//! preserved. What truncation actually corrupts is the dynamics near the
//! cutoff boundary, so every channel application records the post-evolution
//! occupancy of the top two levels of either mode (plus inherited input
//! deficits) as `trace_deficit`, and hard-fails past `DEFICIT_BUDGET`.

pub mod corpus;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::check::QepiReport;
use crate::gaussian::FisherMatrix;
use crate::symplectic::{self, CovarianceMatrix};
use crate::tol::{DEFICIT_BUDGET, EIG_FLOOR};
use crate::{Error, Result};

type CMatrix = DMatrix<Complex64>;

/// Default single-mode cutoff.
pub const DEFAULT_SINGLE_MODE_CUTOFF: usize = 40;
/// Default per-mode cutoff for two-mode channel evolutions.
pub const DEFAULT_TWO_MODE_CUTOFF: usize = 24;
/// Width of the boundary band whose occupancy is charged to the deficit.
const BOUNDARY_BAND: usize = 2;
/// Out-of-support mass above which relative entropy refuses to answer.
const SUPPORT_MASS_TOL: f64 = 1e-9;
/// qEPI verdict slack for truncated oracle computations.
pub const ORACLE_RATE_TOL: f64 = 1e-6;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Annihilation operator in the number basis, `a |n> = sqrt(n) |n-1>`.
pub fn annihilation(dim: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = (n as f64).sqrt();
    }
    a
}

/// Quadrature `Q = (a + a†)/√2`.
pub fn q_op(dim: usize) -> CMatrix {
    let a = annihilation(dim);
    let m = (&a + a.transpose()) / std::f64::consts::SQRT_2;
    m.map(c)
}

/// Quadrature `P = (a − a†)/(i√2)`.
pub fn p_op(dim: usize) -> CMatrix {
    let a = annihilation(dim);
    let m = (&a - a.transpose()) / std::f64::consts::SQRT_2;
    // (a - a†)/i = -i (a - a†)
    m.map(|x| Complex64::new(0.0, -x))
}

/// Truncated density matrix with trace-deficit bookkeeping.
#[derive(Debug, Clone)]
pub struct FockState {
    dim: usize,
    rho: CMatrix,
    trace_deficit: f64,
}

impl FockState {
    /// Wraps a raw density matrix, enforcing Hermiticity and positivity
    /// within tolerance.
    pub fn from_density(rho: CMatrix, trace_deficit: f64) -> Result<Self> {
        let dim = rho.nrows();
        if rho.ncols() != dim {
            return Err(Error::ShapeMismatch("density matrix must be square".into()));
        }
        let herm_err = (&rho - rho.adjoint()).norm();
        if herm_err > 1e-12 * rho.norm().max(1.0) {
            return Err(Error::Domain(format!(
                "density matrix is not Hermitian (asymmetry {herm_err:e})"
            )));
        }
        let rho = (&rho + rho.adjoint()) * c(0.5);
        let eigs = rho.clone().symmetric_eigen().eigenvalues;
        let min_eig = eigs.iter().copied().fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 {
            return Err(Error::Domain(format!(
                "density matrix has negative eigenvalue {min_eig:e}"
            )));
        }
        Ok(Self {
            dim,
            rho,
            trace_deficit,
        })
    }

    pub fn vacuum(dim: usize) -> Self {
        Self::fock(0, dim).expect("vacuum always fits")
    }

    /// Number state `|n><n|`.
    pub fn fock(n: usize, dim: usize) -> Result<Self> {
        if n >= dim {
            return Err(Error::Domain(format!(
                "Fock level {n} does not fit below cutoff {dim}"
            )));
        }
        let mut rho = CMatrix::zeros(dim, dim);
        rho[(n, n)] = c(1.0);
        Ok(Self {
            dim,
            rho,
            trace_deficit: 0.0,
        })
    }

    /// Thermal state with symplectic eigenvalue `nu >= 1`; the geometric
    /// tail beyond the cutoff is charged to the deficit.
    pub fn thermal(nu: f64, dim: usize) -> Result<Self> {
        if nu < 1.0 {
            return Err(Error::Domain(format!("thermal nu must be >= 1, got {nu}")));
        }
        let s = (nu - 1.0) / (nu + 1.0);
        let mut rho = CMatrix::zeros(dim, dim);
        let mut mass = 0.0;
        for k in 0..dim {
            let p = (1.0 - s) * s.powi(k as i32);
            rho[(k, k)] = c(p);
            mass += p;
        }
        Ok(Self {
            dim,
            rho,
            trace_deficit: 1.0 - mass,
        })
    }

    /// Coherent state `|alpha>` built from its exact amplitudes.
    pub fn coherent(alpha: Complex64, dim: usize) -> Self {
        Self::coherent_superposition(&[(c(1.0), alpha)], dim)
            .expect("single coherent state is always well formed")
    }

    /// Normalized superposition `Σ c_i |alpha_i>`; the deficit is the exact
    /// probability mass the truncation dropped.
    pub fn coherent_superposition(terms: &[(Complex64, Complex64)], dim: usize) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Domain("superposition needs at least one term".into()));
        }
        let mut psi = DVector::<Complex64>::zeros(dim);
        for &(coeff, alpha) in terms {
            let pref = (-(alpha.norm_sqr()) / 2.0).exp();
            let mut amp = Complex64::new(pref, 0.0);
            for n in 0..dim {
                if n > 0 {
                    amp = amp * alpha / c((n as f64).sqrt());
                }
                psi[n] += coeff * amp;
            }
        }
        // Ideal norm from exact coherent overlaps:
        // <a|b> = exp(-(|a|^2+|b|^2)/2 + conj(a) b).
        let mut ideal = Complex64::new(0.0, 0.0);
        for &(ci, ai) in terms {
            for &(cj, aj) in terms {
                let z = -(ai.norm_sqr() + aj.norm_sqr()) / 2.0;
                let overlap = (Complex64::new(z, 0.0) + ai.conj() * aj).exp();
                ideal += ci.conj() * cj * overlap;
            }
        }
        let ideal = ideal.re;
        if ideal <= 0.0 {
            return Err(Error::Domain("superposition has zero norm".into()));
        }
        let raw = psi.iter().map(|z| z.norm_sqr()).sum::<f64>();
        let deficit = (1.0 - raw / ideal).max(0.0);
        let norm = raw.sqrt();
        let psi = psi / c(norm);
        let rho = &psi * psi.adjoint();
        Ok(Self {
            dim,
            rho,
            trace_deficit: deficit,
        })
    }

    /// Normalized superposition of number states.
    pub fn fock_superposition(terms: &[(usize, Complex64)], dim: usize) -> Result<Self> {
        let mut psi = DVector::<Complex64>::zeros(dim);
        for &(n, coeff) in terms {
            if n >= dim {
                return Err(Error::Domain(format!(
                    "Fock level {n} does not fit below cutoff {dim}"
                )));
            }
            psi[n] += coeff;
        }
        let norm = psi.norm();
        if norm == 0.0 {
            return Err(Error::Domain("superposition has zero norm".into()));
        }
        let psi = psi / c(norm);
        let rho = &psi * psi.adjoint();
        Ok(Self {
            dim,
            rho,
            trace_deficit: 0.0,
        })
    }

    /// Convex mixture of states on the same cutoff.
    pub fn mixture(components: &[(f64, FockState)]) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Domain("mixture needs components".into()));
        }
        let dim = components[0].1.dim;
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if total <= 0.0 || components.iter().any(|(w, _)| *w < 0.0) {
            return Err(Error::Domain("mixture weights must be nonnegative".into()));
        }
        let mut rho = CMatrix::zeros(dim, dim);
        let mut deficit = 0.0;
        for (w, st) in components {
            if st.dim != dim {
                return Err(Error::ShapeMismatch(
                    "mixture components must share the cutoff".into(),
                ));
            }
            rho += &st.rho * c(w / total);
            deficit += (w / total) * st.trace_deficit;
        }
        Ok(Self {
            dim,
            rho,
            trace_deficit: deficit,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rho(&self) -> &CMatrix {
        &self.rho
    }

    pub fn trace_deficit(&self) -> f64 {
        self.trace_deficit
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    /// Within the trusted truncation budget?
    pub fn is_trusted(&self) -> bool {
        self.trace_deficit <= DEFICIT_BUDGET
    }

    /// First and second moments `(mean, σ)` in quadrature units
    /// (`σ` is the anti-commutator covariance, vacuum = identity).
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let ops = [q_op(self.dim), p_op(self.dim)];
        let mut mean = DVector::zeros(2);
        for i in 0..2 {
            mean[i] = (&self.rho * &ops[i]).trace().re;
        }
        let mut sigma = DMatrix::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                let rij = (&self.rho * &ops[i] * &ops[j]).trace();
                sigma[(i, j)] = 2.0 * rij.re - 2.0 * mean[i] * mean[j];
            }
        }
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        (mean, sigma)
    }
}

/// Two-mode channel selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelKind {
    /// Beam-splitter of transmissivity `lambda` in `[0, 1]`.
    BeamSplitter { lambda: f64 },
    /// Two-mode squeezer dilating the amplifier: `cosh² r = kappa >= 1`.
    TwoModeSqueezer { kappa: f64 },
    /// Product displacement of both modes by quadrature pairs.
    Displacement { x: [f64; 4] },
}

impl ChannelKind {
    /// qEPI weights `(λ_1, λ_2)`; displacements carry none.
    pub fn lambdas(&self) -> Result<(f64, f64)> {
        match *self {
            ChannelKind::BeamSplitter { lambda } => Ok((lambda, 1.0 - lambda)),
            ChannelKind::TwoModeSqueezer { kappa } => Ok((kappa, kappa - 1.0)),
            ChannelKind::Displacement { .. } => Err(Error::Domain(
                "displacement channels carry no qEPI weights".into(),
            )),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            ChannelKind::BeamSplitter { lambda } => format!("beam_splitter({lambda})"),
            ChannelKind::TwoModeSqueezer { kappa } => format!("two_mode_squeezer({kappa})"),
            ChannelKind::Displacement { .. } => "displacement".into(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ChannelKind::BeamSplitter { lambda } if !(0.0..=1.0).contains(&lambda) => Err(
                Error::Domain(format!("beam-splitter parameter {lambda} outside [0,1]")),
            ),
            ChannelKind::TwoModeSqueezer { kappa } if kappa < 1.0 => Err(Error::Domain(
                format!("squeezer parameter {kappa} must be >= 1"),
            )),
            _ => Ok(()),
        }
    }
}

/// Unitary on the truncated two-mode space.
///
/// Beam-splitter and squeezer generators are real antisymmetric, so their
/// exponentials are exactly orthogonal; displacements are genuinely complex.
#[derive(Debug, Clone)]
pub enum TwoModeUnitary {
    Real(DMatrix<f64>),
    Complex(CMatrix),
}

impl TwoModeUnitary {
    /// Builds the unitary for `kind` at per-mode cutoff `dim`.
    ///
    /// Beam-splitters conserve total photon number and squeezers the photon
    /// difference, so both generators are block diagonal over those sectors;
    /// exponentiating sector by sector gives the same matrix as a dense
    /// `exp` at a fraction of the cost.
    pub fn build(kind: ChannelKind, dim: usize) -> Result<Self> {
        kind.validate()?;
        match kind {
            ChannelKind::BeamSplitter { lambda } => {
                let theta = lambda.sqrt().min(1.0).acos();
                let mut u = DMatrix::zeros(dim * dim, dim * dim);
                // Sector s = n1 + n2 holds (k, s-k) for k in the clamped range.
                for s in 0..=(2 * dim - 2) {
                    let k_lo = s.saturating_sub(dim - 1);
                    let k_hi = s.min(dim - 1);
                    let size = k_hi - k_lo + 1;
                    let mut g = DMatrix::zeros(size, size);
                    for (row, k) in (k_lo..k_hi).enumerate() {
                        // a1† a2 : (k, s-k) -> (k+1, s-k-1)
                        let amp = (((k + 1) * (s - k)) as f64).sqrt();
                        g[(row + 1, row)] = theta * amp;
                        g[(row, row + 1)] = -theta * amp;
                    }
                    let block = g.exp();
                    for (r, kr) in (k_lo..=k_hi).enumerate() {
                        for (cidx, kc) in (k_lo..=k_hi).enumerate() {
                            u[(kr * dim + (s - kr), kc * dim + (s - kc))] = block[(r, cidx)];
                        }
                    }
                }
                Ok(TwoModeUnitary::Real(u))
            }
            ChannelKind::TwoModeSqueezer { kappa } => {
                let r = (kappa.sqrt() + (kappa - 1.0).sqrt()).ln(); // acosh(sqrt(kappa))
                let mut u = DMatrix::zeros(dim * dim, dim * dim);
                // Sector d = n1 - n2 holds (m + d, m) (or mirrored for d < 0).
                for d in -(dim as isize - 1)..=(dim as isize - 1) {
                    let ad = d.unsigned_abs();
                    let size = dim - ad;
                    let mut g = DMatrix::zeros(size, size);
                    for m in 0..size - 1 {
                        // a1† a2† : (m+|d|, m) -> (m+|d|+1, m+1)
                        let amp = (((m + ad + 1) * (m + 1)) as f64).sqrt();
                        g[(m + 1, m)] = r * amp;
                        g[(m, m + 1)] = -r * amp;
                    }
                    let block = g.exp();
                    let idx = |m: usize| -> usize {
                        if d >= 0 {
                            (m + ad) * dim + m
                        } else {
                            m * dim + (m + ad)
                        }
                    };
                    for row in 0..size {
                        for col in 0..size {
                            u[(idx(row), idx(col))] = block[(row, col)];
                        }
                    }
                }
                Ok(TwoModeUnitary::Real(u))
            }
            ChannelKind::Displacement { x } => {
                let d1 = displacement_operator(quad_to_alpha(x[0], x[1]), dim);
                let d2 = displacement_operator(quad_to_alpha(x[2], x[3]), dim);
                Ok(TwoModeUnitary::Complex(d1.kronecker(&d2)))
            }
        }
    }

    /// `U x` for a complex vector.
    fn matvec(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        match self {
            TwoModeUnitary::Real(u) => {
                let re = x.map(|z| z.re);
                let im = x.map(|z| z.im);
                let yre = u * re;
                let yim = u * im;
                DVector::from_fn(x.len(), |i, _| Complex64::new(yre[i], yim[i]))
            }
            TwoModeUnitary::Complex(u) => u * x,
        }
    }

    /// `U ρ U†`, with a real fast path (4 real GEMMs instead of complex ones).
    pub fn conjugate(&self, rho: &CMatrix) -> CMatrix {
        match self {
            TwoModeUnitary::Real(u) => {
                let re = rho.map(|z| z.re);
                let im = rho.map(|z| z.im);
                let re2 = u * re * u.transpose();
                let im2 = u * im * u.transpose();
                CMatrix::from_fn(rho.nrows(), rho.ncols(), |i, j| {
                    Complex64::new(re2[(i, j)], im2[(i, j)])
                })
            }
            TwoModeUnitary::Complex(u) => u * rho * u.adjoint(),
        }
    }

    /// Deviation from unitarity, `||U†U − 1||_inf`.
    pub fn unitarity_residual(&self) -> f64 {
        match self {
            TwoModeUnitary::Real(u) => {
                let r = u.transpose() * u - DMatrix::<f64>::identity(u.nrows(), u.ncols());
                r.iter().fold(0.0f64, |m, x| m.max(x.abs()))
            }
            TwoModeUnitary::Complex(u) => {
                let r = u.adjoint() * u - CMatrix::identity(u.nrows(), u.ncols());
                r.iter().fold(0.0f64, |m, x| m.max(x.norm()))
            }
        }
    }
}

fn quad_to_alpha(x1: f64, x2: f64) -> Complex64 {
    Complex64::new(x1, x2) / c(std::f64::consts::SQRT_2)
}

/// `D(alpha) = exp(alpha a† − conj(alpha) a)` on the truncated space.
pub fn displacement_operator(alpha: Complex64, dim: usize) -> CMatrix {
    let a = annihilation(dim);
    let mut g = CMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            g[(i, j)] = alpha * c(a[(j, i)]) - alpha.conj() * c(a[(i, j)]);
        }
    }
    g.exp()
}

// Beam-splitter/squeezer unitaries are reused heavily by corpora and sweeps;
// key on the parameter bit pattern.
type UnitaryCache = Mutex<HashMap<(u8, u64, usize), Arc<TwoModeUnitary>>>;

fn unitary_cache() -> &'static UnitaryCache {
    static CACHE: OnceLock<UnitaryCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn cached_unitary(kind: ChannelKind, dim: usize) -> Result<Arc<TwoModeUnitary>> {
    let key = match kind {
        ChannelKind::BeamSplitter { lambda } => (0u8, lambda.to_bits(), dim),
        ChannelKind::TwoModeSqueezer { kappa } => (1u8, kappa.to_bits(), dim),
        ChannelKind::Displacement { .. } => {
            // Displacements vary per call; not worth caching.
            return Ok(Arc::new(TwoModeUnitary::build(kind, dim)?));
        }
    };
    if let Some(u) = unitary_cache().lock().unwrap().get(&key) {
        return Ok(u.clone());
    }
    let u = Arc::new(TwoModeUnitary::build(kind, dim)?);
    unitary_cache().lock().unwrap().insert(key, u.clone());
    Ok(u)
}

/// Exact channel action: `Tr_2(U (ρ_1 ⊗ ρ_2) U†)`.
///
/// The returned state keeps the per-mode cutoff of the inputs; the deficit
/// accumulates the inputs' deficits, any trace loss, and the post-evolution
/// boundary-band occupancy.
pub fn channel_apply(kind: ChannelKind, rho_1: &FockState, rho_2: &FockState) -> Result<FockState> {
    if rho_1.dim != rho_2.dim {
        return Err(Error::ShapeMismatch(format!(
            "input cutoffs differ: {} vs {}",
            rho_1.dim, rho_2.dim
        )));
    }
    let input_deficit = rho_1.trace_deficit + rho_2.trace_deficit;
    if input_deficit > DEFICIT_BUDGET {
        return Err(Error::Truncation {
            deficit: input_deficit,
            budget: DEFICIT_BUDGET,
        });
    }
    let dim = rho_1.dim;
    let u = cached_unitary(kind, dim)?;

    // Spectral factorization of the product input: evolving eigenvector
    // pairs one matvec at a time beats conjugating the dim^2 x dim^2 joint
    // matrix by orders of magnitude for the low-rank corpus states.
    let e1 = rho_1.rho.clone().symmetric_eigen();
    let e2 = rho_2.rho.clone().symmetric_eigen();
    let keep = |w: f64| w > 1e-14;

    let lo = dim.saturating_sub(BOUNDARY_BAND);
    let mut band = 0.0;
    let mut out = CMatrix::zeros(dim, dim);
    let mut trace_out = 0.0;
    for (i, &w1) in e1.eigenvalues.iter().enumerate() {
        if !keep(w1) {
            continue;
        }
        let v1 = e1.eigenvectors.column(i);
        for (j, &w2) in e2.eigenvalues.iter().enumerate() {
            if !keep(w2) {
                continue;
            }
            let w = w1 * w2;
            let v2 = e2.eigenvectors.column(j);
            let mut joint = DVector::<Complex64>::zeros(dim * dim);
            for r in 0..dim {
                for s in 0..dim {
                    joint[r * dim + s] = v1[r] * v2[s];
                }
            }
            let phi = u.matvec(&joint);
            // Band occupancy of the evolved pure component.
            for n1 in 0..dim {
                for n2 in 0..dim {
                    if n1 >= lo || n2 >= lo {
                        band += w * phi[n1 * dim + n2].norm_sqr();
                    }
                }
            }
            // Tr_2(phi phi†) = Phi Phi† with Phi the dim x dim reshape.
            let phi_mat = CMatrix::from_fn(dim, dim, |r, s| phi[r * dim + s]);
            out += (&phi_mat * phi_mat.adjoint()) * c(w);
            trace_out += w * phi.norm_squared();
        }
    }

    // 1 - tr(out) collects everything lost on the way in: input deficits,
    // rank components below the floor, and norm leaked by the (truncated)
    // unitary itself.
    let out = (&out + out.adjoint()) * c(0.5);
    let deficit = (1.0 - trace_out).max(0.0) + band.max(0.0);
    if deficit > DEFICIT_BUDGET {
        return Err(Error::Truncation {
            deficit,
            budget: DEFICIT_BUDGET,
        });
    }
    Ok(FockState {
        dim,
        rho: out,
        trace_deficit: deficit,
    })
}

/// `−Σ p_i ln p_i` over eigenvalues above `EIG_FLOOR`.
pub fn von_neumann_entropy(state: &FockState) -> f64 {
    let eigs = state.rho.clone().symmetric_eigen().eigenvalues;
    let mut s = 0.0;
    for &p in eigs.iter() {
        if p > EIG_FLOOR {
            s -= p * p.ln();
        }
    }
    s
}

/// Characteristic function `χ(k) = tr(ρ e^{i k^T R})`.
///
/// `e^{i k^T R} = D(β)` with `β = (i k_1 − k_2)/√2`, so `χ(0) = tr ρ`.
pub fn characteristic_function(state: &FockState, k: [f64; 2]) -> Complex64 {
    let beta = Complex64::new(-k[1], k[0]) / c(std::f64::consts::SQRT_2);
    let d = displacement_operator(beta, state.dim);
    (&state.rho * d).trace()
}

/// `D_x ρ D_x†` for a quadrature displacement `x = (x1, x2)`.
pub fn displaced(state: &FockState, x: [f64; 2]) -> FockState {
    let d = displacement_operator(quad_to_alpha(x[0], x[1]), state.dim);
    let rho = &d * &state.rho * d.adjoint();
    FockState {
        dim: state.dim,
        rho,
        trace_deficit: state.trace_deficit,
    }
}

/// Single-mode Gaussian probe `ρ_{x,Γ}` at the given cutoff, built from the
/// Williamson form of `Γ` through squeeze and phase rotations plus a final
/// displacement.
pub fn gaussian_probe(x: [f64; 2], gamma: &DMatrix<f64>, dim: usize) -> Result<FockState> {
    let cov = CovarianceMatrix::new(1, gamma.clone())?;
    if !symplectic::is_admissible(&cov) {
        return Err(Error::InadmissibleProbe);
    }
    let spec = symplectic::williamson(&cov)?;
    let nu = spec.nus[0];
    let s = &spec.s_matrix;

    // One-mode Euler decomposition S = R(phi) diag(e^-r, e^r) R(psi):
    // polar part from the symmetric eigensystem of S^T S.
    let g2 = s.transpose() * s;
    let (vals, vecs) = symplectic::symmetric_eigen_sorted(&g2);
    // vals ascending: (1/s^2, s^2) with squeeze factor s >= 1.
    let stretch = vals[1].sqrt();
    let mut v = DMatrix::zeros(2, 2);
    v.set_column(0, &vecs.column(1)); // large axis first
    v.set_column(1, &vecs.column(0));
    if v.determinant() < 0.0 {
        let c1 = -v.column(1).into_owned();
        v.set_column(1, &c1);
    }
    let p_inv = &v
        * DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 / stretch, stretch]))
        * v.transpose();
    let rot = s * p_inv; // in SO(2)
    let phi_rot = rot[(0, 1)].atan2(rot[(0, 0)]);
    let psi_v = v[(0, 1)].atan2(v[(0, 0)]);
    let phi = phi_rot + psi_v;
    let psi = -psi_v;
    let r = -stretch.ln(); // diag(stretch, 1/stretch) = diag(e^-r, e^r)

    let thermal = FockState::thermal(nu, dim)?;
    let u_sq = {
        let a = annihilation(dim);
        let g = (&a * &a - a.transpose() * a.transpose()) * (r / 2.0);
        g.exp()
    };
    let rot_diag = |angle: f64| -> CMatrix {
        CMatrix::from_fn(dim, dim, |i, j| {
            if i == j {
                Complex64::from_polar(1.0, -angle * i as f64)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    };
    let u_total = rot_diag(phi) * u_sq.map(c) * rot_diag(psi);

    let mut rho = &u_total * &thermal.rho * u_total.adjoint();
    if x != [0.0, 0.0] {
        let d = displacement_operator(quad_to_alpha(x[0], x[1]), dim);
        rho = &d * rho * d.adjoint();
    }
    // Unitaries preserve trace; squeeze/displacement can push mass toward
    // the cutoff, so charge the top band occupancy as well.
    let lo = dim.saturating_sub(BOUNDARY_BAND);
    let band: f64 = (lo..dim).map(|i| rho[(i, i)].re).sum();
    Ok(FockState {
        dim,
        rho,
        trace_deficit: thermal.trace_deficit + band.max(0.0),
    })
}

/// Generalized Husimi function `Q_Γ(x) = tr(ρ ρ_{x,Γ}) / (2π)`.
pub fn husimi(state: &FockState, gamma: &DMatrix<f64>, x: [f64; 2]) -> Result<f64> {
    let probe = gaussian_probe(x, gamma, state.dim)?;
    let overlap = (&state.rho * &probe.rho).trace().re;
    Ok(overlap / (2.0 * std::f64::consts::PI))
}

/// Quantum relative entropy `tr ρ (ln ρ − ln σ)` via eigendecompositions.
///
/// Refuses (rather than clamps) when more than `SUPPORT_MASS_TOL` of `ρ`
/// lives outside the numerical support of `σ`.
pub fn relative_entropy(rho: &FockState, sigma: &FockState) -> Result<f64> {
    if rho.dim != sigma.dim {
        return Err(Error::ShapeMismatch("cutoff mismatch".into()));
    }
    let er = rho.rho.clone().symmetric_eigen();
    let es = sigma.rho.clone().symmetric_eigen();
    let overlaps = er.eigenvectors.adjoint() * &es.eigenvectors;

    let mut value = 0.0;
    for &p in er.eigenvalues.iter() {
        if p > EIG_FLOOR {
            value += p * p.ln();
        }
    }
    let mut out_of_support = 0.0;
    for (j, &q) in es.eigenvalues.iter().enumerate() {
        // Weight of rho on this sigma eigenvector.
        let mut w = 0.0;
        for (i, &p) in er.eigenvalues.iter().enumerate() {
            if p > EIG_FLOOR {
                w += p * overlaps[(i, j)].norm_sqr();
            }
        }
        if q > EIG_FLOOR {
            value -= w * q.ln();
        } else {
            out_of_support += w;
        }
    }
    if out_of_support > SUPPORT_MASS_TOL {
        return Err(Error::SupportViolation {
            mass: out_of_support,
        });
    }
    Ok(value)
}

/// qEPI spot check at `n = 1`, `K = 2` with oracle entropies.
pub fn qepi_spot_check(
    kind: ChannelKind,
    rho_1: &FockState,
    rho_2: &FockState,
) -> Result<QepiReport> {
    let (l1, l2) = kind.lambdas()?;
    if !rho_1.is_trusted() || !rho_2.is_trusted() {
        return Err(Error::Truncation {
            deficit: rho_1.trace_deficit.max(rho_2.trace_deficit),
            budget: DEFICIT_BUDGET,
        });
    }
    let s1 = von_neumann_entropy(rho_1);
    let s2 = von_neumann_entropy(rho_2);
    let out = channel_apply(kind, rho_1, rho_2)?;
    let s_y = von_neumann_entropy(&out);
    let rate = l1 * (s1 - s_y).exp() + l2 * (s2 - s_y).exp();
    Ok(QepiReport {
        n: 1,
        s_alphas: vec![s1, s2],
        s_y,
        lambdas: vec![l1, l2],
        rate,
        satisfied: rate <= 1.0 + ORACLE_RATE_TOL,
        margin: 1.0 - rate,
    })
}

/// Fisher information by central second differences of the displaced
/// relative entropy, `J_ij = ∂²/∂x_i∂x_j S(ρ ‖ D_x ρ D_x†)` at `x = 0`.
pub fn fisher_finite_difference(rho: &FockState, step: f64) -> Result<FisherMatrix> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::Domain("step must be positive".into()));
    }
    if !rho.is_trusted() {
        return Err(Error::Truncation {
            deficit: rho.trace_deficit,
            budget: DEFICIT_BUDGET,
        });
    }
    let f = |x: [f64; 2]| -> Result<f64> { relative_entropy(rho, &displaced(rho, x)) };
    let h = step;
    let j11 = (f([h, 0.0])? + f([-h, 0.0])?) / (h * h);
    let j22 = (f([0.0, h])? + f([0.0, -h])?) / (h * h);
    let jpp = f([h, h])?;
    let jpm = f([h, -h])?;
    let jmp = f([-h, h])?;
    let jmm = f([-h, -h])?;
    let j12 = (jpp - jpm - jmp + jmm) / (4.0 * h * h);
    let j = DMatrix::from_row_slice(2, 2, &[j11, j12, j12, j22]);
    Ok(FisherMatrix::new(j))
}

/// Diffusion Lindbladian `L_γ(ρ) = −¼ Σ_ij γ_ij [R~_i, [R~_j, ρ]]` with
/// `R~ = Δ⁻¹ R = (−P, Q)`; single mode, truncated.
pub fn lindblad_generator(state: &FockState, gamma: &DMatrix<f64>) -> CMatrix {
    let dim = state.dim;
    let r_tilde = [p_op(dim) * c(-1.0), q_op(dim)];
    let mut l = CMatrix::zeros(dim, dim);
    for i in 0..2 {
        for j in 0..2 {
            let g = gamma[(i, j)];
            if g == 0.0 {
                continue;
            }
            let inner = &r_tilde[j] * &state.rho - &state.rho * &r_tilde[j];
            let outer = &r_tilde[i] * &inner - inner * &r_tilde[i];
            l += outer * c(-0.25 * g);
        }
    }
    l
}

/// One explicit Euler step of the diffusion semigroup (property tests only;
/// long-time integration belongs to the covariance-level flow).
pub fn lindblad_euler_step(state: &FockState, gamma: &DMatrix<f64>, dt: f64) -> FockState {
    let l = lindblad_generator(state, gamma);
    FockState {
        dim: state.dim,
        rho: &state.rho + l * c(dt),
        trace_deficit: state.trace_deficit,
    }
}
