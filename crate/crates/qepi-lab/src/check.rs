//! The inequality layer: qEPI rate functional, classical Gaussian EPI
//! (Minkowski determinant) check, and the Fisher-matrix data-processing and
//! Stam-type inequalities for Gaussian states.
//!
//! The qEPI in rate form asserts
//!
//! ```text
//! rate = Σ_a λ_a exp(S_a/n) / exp(S_Y/n)  <=  1,
//! ```
//!
//! with equality approached by high-temperature saturating inputs. The Stam
//! inequality is the scalar consequence of the Hessian data-processing
//! inequality `(M_a^T J_Y M_b)_{ab} <= diag(J_a)` obtained by sandwiching
//! with `λ_a e^{S_a/n} M_a^{-T}`; it is equivalent to nonnegativity of the
//! rate's flow derivative.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::gaussian::{self, GaussianState};
use crate::mixing::{MixingMatrix, ProductGaussianInput};
use crate::symplectic::{symmetric_eigen_sorted, CovarianceMatrix};
use crate::tol::{TOL_PSD, TOL_RATE};
use crate::{Error, Result};

/// Outcome of a qEPI rate evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QepiReport {
    /// Modes per input set.
    pub n: usize,
    /// Input entropies in nats.
    pub s_alphas: Vec<f64>,
    /// Output entropy in nats.
    pub s_y: f64,
    /// Block weights `λ_a = |det M_a|^{1/n}`.
    pub lambdas: Vec<f64>,
    /// `Σ_a λ_a e^{S_a/n} / e^{S_Y/n}`.
    pub rate: f64,
    /// `rate <= 1 + TOL_RATE`.
    pub satisfied: bool,
    /// `1 - rate`.
    pub margin: f64,
}

impl QepiReport {
    /// Recomputes the rate from the stored fields, the report invariant.
    pub fn recomputed_rate(&self) -> f64 {
        let n = self.n as f64;
        let num: f64 = self
            .lambdas
            .iter()
            .zip(&self.s_alphas)
            .map(|(&l, &s)| l * (s / n).exp())
            .sum();
        num / (self.s_y / n).exp()
    }
}

fn report_from_entropies(n: usize, s_alphas: Vec<f64>, s_y: f64, lambdas: Vec<f64>) -> QepiReport {
    let nf = n as f64;
    // Log-space form keeps high-temperature sweeps overflow-free.
    let rate: f64 = lambdas
        .iter()
        .zip(&s_alphas)
        .map(|(&l, &s)| l * ((s - s_y) / nf).exp())
        .sum();
    QepiReport {
        n,
        s_alphas,
        s_y,
        lambdas,
        rate,
        satisfied: rate <= 1.0 + TOL_RATE,
        margin: 1.0 - rate,
    }
}

/// Evaluates the qEPI rate for a mixing channel on a factorized Gaussian input.
pub fn qepi_rate(m: &MixingMatrix, input: &ProductGaussianInput) -> Result<QepiReport> {
    let s_alphas = input
        .states()
        .iter()
        .map(gaussian::entropy)
        .collect::<Result<Vec<_>>>()?;
    let output = m.apply(input)?;
    let s_y = gaussian::entropy(&output)?;
    Ok(report_from_entropies(
        m.n(),
        s_alphas,
        s_y,
        m.lambdas().to_vec(),
    ))
}

/// Verdict of the classical Gaussian EPI (an instance of Minkowski's
/// determinant inequality).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassicalEpiCheck {
    /// `exp(2 H_Y / m) = πe · det(Σ M_a σ_a M_a^T)^{1/m}`.
    pub lhs: f64,
    /// `Σ_a |det M_a|^{2/m} · πe · det(σ_a)^{1/m}`.
    pub rhs: f64,
    pub satisfied: bool,
}

/// Classical multi-variable EPI on Gaussian covariances (`m = 2n` real
/// variables per set; no quantum admissibility required).
pub fn classical_gaussian_epi_check(
    m: &MixingMatrix,
    sigmas: &[DMatrix<f64>],
) -> Result<ClassicalEpiCheck> {
    if sigmas.len() != m.k() {
        return Err(Error::ShapeMismatch(format!(
            "need {} covariances, got {}",
            m.k(),
            sigmas.len()
        )));
    }
    let dim = 2 * m.n();
    let mf = dim as f64;
    let pi_e = std::f64::consts::PI * std::f64::consts::E;

    let mut sigma_y = DMatrix::zeros(dim, dim);
    let mut rhs = 0.0;
    for (alpha, sigma) in sigmas.iter().enumerate() {
        if sigma.nrows() != dim || sigma.ncols() != dim {
            return Err(Error::ShapeMismatch(format!(
                "covariance {alpha} is {}x{}, expected {dim}x{dim}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let (vals, _) = symmetric_eigen_sorted(sigma);
        if vals[0] <= 0.0 {
            return Err(Error::NotPositiveDefinite { min_eig: vals[0] });
        }
        let log_det: f64 = vals.iter().map(|v| v.ln()).sum();
        let block = m.block(alpha);
        sigma_y += block * sigma * block.transpose();
        // |det M_a|^{2/m} with m = 2n is exactly lambda_a.
        rhs += m.lambdas()[alpha] * (log_det / mf).exp() * pi_e;
    }
    let (vals_y, _) = symmetric_eigen_sorted(&sigma_y);
    if vals_y[0] <= 0.0 {
        return Err(Error::NotPositiveDefinite { min_eig: vals_y[0] });
    }
    let log_det_y: f64 = vals_y.iter().map(|v| v.ln()).sum();
    let lhs = (log_det_y / mf).exp() * pi_e;
    Ok(ClassicalEpiCheck {
        lhs,
        rhs,
        satisfied: lhs >= rhs - TOL_RATE * rhs.abs().max(1.0),
    })
}

/// Verdict of the Hessian data-processing inequality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HessianCheck {
    /// Smallest eigenvalue of `diag(J_a) - (M_a^T J_Y M_b)_{ab}`.
    pub residual_min_eigenvalue: f64,
    pub satisfied: bool,
}

/// Checks `(M_a^T J_Y M_b)_{ab} ⪯ diag(J_a)` as a `2Kn x 2Kn` eigenproblem.
///
/// All inputs must be strictly mixed so the Fisher matrices exist; singular
/// blocks still contribute their rows and columns.
pub fn hessian_data_processing_check(
    m: &MixingMatrix,
    input: &ProductGaussianInput,
) -> Result<HessianCheck> {
    let output = m.apply(input)?;
    let j_y = gaussian::fisher(&output)?;
    let dim = 2 * m.n();
    let k = m.k();
    let big = k * dim;

    let mut residual = DMatrix::zeros(big, big);
    let mut b_scale = 0.0f64;
    for alpha in 0..k {
        let j_a = gaussian::fisher(input.state(alpha))?;
        b_scale = j_a.matrix().iter().fold(b_scale, |acc, x| acc.max(x.abs()));
        residual
            .view_mut((alpha * dim, alpha * dim), (dim, dim))
            .copy_from(j_a.matrix());
    }
    for alpha in 0..k {
        for beta in 0..k {
            let a_block = m.block(alpha).transpose() * j_y.matrix() * m.block(beta);
            let mut view = residual.view_mut((alpha * dim, beta * dim), (dim, dim));
            view -= &a_block;
        }
    }
    let (vals, _) = symmetric_eigen_sorted(&residual);
    let min_eig = vals[0];
    Ok(HessianCheck {
        residual_min_eigenvalue: min_eig,
        satisfied: min_eig >= -TOL_PSD * b_scale.max(1.0),
    })
}

/// Verdict of the Stam-type trace inequality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StamCheck {
    /// `(Σ_a λ_a e^{S_a/n})² · tr(J_Y)`.
    pub lhs: f64,
    /// `Σ_a λ_a e^{2S_a/n} · tr(J_a γ_a)` (singular blocks contribute zero).
    pub rhs: f64,
    pub satisfied: bool,
}

/// Checks the Stam inequality `lhs <= rhs`.
pub fn stam_check(m: &MixingMatrix, input: &ProductGaussianInput) -> Result<StamCheck> {
    let output = m.apply(input)?;
    let j_y = gaussian::fisher(&output)?;
    let n = m.n() as f64;

    let mut weight_sum = 0.0;
    let mut rhs = 0.0;
    for alpha in 0..m.k() {
        if m.is_singular_block(alpha) {
            continue; // λ_a = 0: the term vanishes
        }
        let s_a = gaussian::entropy(input.state(alpha))?;
        let lambda = m.lambdas()[alpha];
        let e_s = (s_a / n).exp();
        weight_sum += lambda * e_s;
        let j_a = gaussian::fisher(input.state(alpha))?;
        rhs += lambda * e_s * e_s * j_a.trace_product(&m.gammas()[alpha]);
    }
    let lhs = weight_sum * weight_sum * j_y.trace();
    Ok(StamCheck {
        lhs,
        rhs,
        satisfied: lhs <= rhs + TOL_RATE * rhs.abs().max(1.0),
    })
}

/// Replayable record of a checked instance, written when a verdict fails.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViolationBundle {
    pub seed: Option<u64>,
    pub mixing: MixingMatrix,
    /// Input means, one `2n`-vector per block.
    pub means: Vec<Vec<f64>>,
    /// Input covariances, row-major.
    pub covariances: Vec<Vec<f64>>,
    pub report: QepiReport,
}

impl ViolationBundle {
    pub fn new(
        seed: Option<u64>,
        mixing: &MixingMatrix,
        input: &ProductGaussianInput,
        report: &QepiReport,
    ) -> Self {
        let means = input
            .states()
            .iter()
            .map(|s| s.mean().iter().copied().collect())
            .collect();
        let covariances = input
            .states()
            .iter()
            .map(|s| {
                let m = s.cov().matrix();
                let mut flat = Vec::with_capacity(m.nrows() * m.ncols());
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        flat.push(m[(i, j)]);
                    }
                }
                flat
            })
            .collect();
        Self {
            seed,
            mixing: mixing.clone(),
            means,
            covariances,
            report: report.clone(),
        }
    }

    /// Rebuilds the instance and re-runs the rate check.
    pub fn replay(&self) -> Result<QepiReport> {
        let n = self.mixing.n();
        let dim = 2 * n;
        let mut states = Vec::with_capacity(self.means.len());
        for (mean, cov) in self.means.iter().zip(&self.covariances) {
            let mean = nalgebra::DVector::from_vec(mean.clone());
            let cov = CovarianceMatrix::new(n, DMatrix::from_row_slice(dim, dim, cov))?;
            states.push(GaussianState::new(mean, cov)?);
        }
        qepi_rate(&self.mixing, &ProductGaussianInput::new(states)?)
    }
}
