//! Linear multi-mode mixing channels.
//!
//! A channel is a `2n x 2Kn` real block matrix `M = (M_1 | ... | M_K)`
//! subject to `Σ_a M_a Δ M_a^T = Δ`, which is exactly the condition for `M`
//! to arise from an isometric (generally active) Gaussian dilation. Each
//! block carries its weight `λ_a = |det M_a|^{1/n}` and diffusion matrix
//! `γ_a = λ_a M_a⁻¹ M_a⁻ᵀ` (zero for singular blocks, which do not evolve).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::gaussian::GaussianState;
use crate::symplectic::{random_symplectic, CovarianceMatrix, SymplecticForm};
use crate::tol::TOL_SYMP;
use crate::{Error, Result};

/// Relative determinant threshold below which a block counts as singular.
const SINGULAR_DET_TOL: f64 = 1e-12;

/// Per-mode time reversal `⊕ diag(1, -1)`.
pub fn time_reversal(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        if i != j {
            0.0
        } else if i % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    })
}

/// Constrained mixing matrix in `K` blocks of size `2n x 2n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "MixingMatrixJson", into = "MixingMatrixJson")]
pub struct MixingMatrix {
    n: usize,
    k: usize,
    blocks: Vec<DMatrix<f64>>,
    lambdas: Vec<f64>,
    gammas: Vec<DMatrix<f64>>,
}

impl MixingMatrix {
    /// Builds from blocks, validating the symplectic constraint and
    /// deriving `λ_a` and `γ_a`.
    pub fn from_blocks(n: usize, blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::ShapeMismatch("need at least one block".into()));
        }
        let dim = 2 * n;
        for (i, b) in blocks.iter().enumerate() {
            if b.nrows() != dim || b.ncols() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "block {i} is {}x{}, expected {dim}x{dim}",
                    b.nrows(),
                    b.ncols()
                )));
            }
        }
        let residual = constraint_residual(n, &blocks);
        if residual > TOL_SYMP {
            return Err(Error::ConstraintViolated { residual });
        }

        let mut lambdas = Vec::with_capacity(blocks.len());
        let mut gammas = Vec::with_capacity(blocks.len());
        for b in &blocks {
            match block_log_abs_det(b) {
                Some(log_det) => {
                    let lambda = (log_det / n as f64).exp();
                    let inv = b.clone().try_inverse().expect("nonsingular by log-det test");
                    gammas.push(&inv * lambda * inv.transpose());
                    lambdas.push(lambda);
                }
                None => {
                    lambdas.push(0.0);
                    gammas.push(DMatrix::zeros(dim, dim));
                }
            }
        }
        Ok(Self {
            n,
            k: blocks.len(),
            blocks,
            lambdas,
            gammas,
        })
    }

    /// Beam-splitter of transmissivity `lam`: `M_1 = √lam 1`, `M_2 = √(1−lam) 1`.
    pub fn beam_splitter(n: usize, lam: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lam) {
            return Err(Error::Domain(format!(
                "beam-splitter parameter must lie in [0,1], got {lam}"
            )));
        }
        let dim = 2 * n;
        let id = DMatrix::identity(dim, dim);
        Self::from_blocks(n, vec![&id * lam.sqrt(), &id * (1.0 - lam).sqrt()])
    }

    /// Quantum amplifier of gain `kappa`: `M_1 = √kappa 1`, `M_2 = √(kappa−1) T`.
    pub fn amplifier(n: usize, kappa: f64) -> Result<Self> {
        if kappa < 1.0 {
            return Err(Error::Domain(format!(
                "amplifier parameter must be >= 1, got {kappa}"
            )));
        }
        let dim = 2 * n;
        let id = DMatrix::identity(dim, dim);
        let t = time_reversal(n);
        Self::from_blocks(n, vec![&id * kappa.sqrt(), t * (kappa - 1.0).sqrt()])
    }

    /// Random constrained mixing: the first `2n` rows of a random `2Kn x 2Kn`
    /// symplectic matrix. The block identity `Σ M_a Δ M_a^T = Δ` holds by
    /// construction because `Δ_{2Kn}` is block diagonal.
    pub fn random(n: usize, k: usize, seed: u64, scale: f64) -> Self {
        assert!(n >= 1 && k >= 1);
        let s = random_symplectic(k * n, seed, scale);
        let dim = 2 * n;
        let blocks: Vec<DMatrix<f64>> = (0..k)
            .map(|a| s.view((0, a * dim), (dim, dim)).into_owned())
            .collect();
        Self::from_blocks(n, blocks).expect("row-truncated symplectic satisfies the constraint")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn block(&self, alpha: usize) -> &DMatrix<f64> {
        &self.blocks[alpha]
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn gammas(&self) -> &[DMatrix<f64>] {
        &self.gammas
    }

    /// True when block `alpha` was classified singular (`λ_a = 0`).
    pub fn is_singular_block(&self, alpha: usize) -> bool {
        self.lambdas[alpha] == 0.0
    }

    pub fn constraint_residual(&self) -> f64 {
        constraint_residual(self.n, &self.blocks)
    }

    /// Channel action on a factorized Gaussian input:
    /// `mean_Y = Σ M_a mean_a`, `σ_Y = Σ M_a σ_a M_a^T`.
    pub fn apply(&self, input: &ProductGaussianInput) -> Result<GaussianState> {
        if input.len() != self.k {
            return Err(Error::ShapeMismatch(format!(
                "channel expects {} inputs, got {}",
                self.k,
                input.len()
            )));
        }
        let dim = 2 * self.n;
        let mut mean = DVector::zeros(dim);
        let mut cov = DMatrix::zeros(dim, dim);
        for (alpha, state) in input.states().iter().enumerate() {
            if state.n() != self.n {
                return Err(Error::ShapeMismatch(format!(
                    "input {alpha} has {} modes, channel has {}",
                    state.n(),
                    self.n
                )));
            }
            let m = &self.blocks[alpha];
            mean += m * state.mean();
            cov += m * state.cov().matrix() * m.transpose();
        }
        GaussianState::new(mean, CovarianceMatrix::new(self.n, cov)?)
    }

    /// Product input saturating the classical condition: `σ_a = T c_a γ_a`,
    /// so `M_a σ_a M_a^T = T c_a λ_a · 1` is isotropic for every block.
    ///
    /// Raising `T` drives the high-entropy regime where the qEPI saturates.
    pub fn saturating_family(
        &self,
        c: &[f64],
        temperature: f64,
    ) -> Result<ProductGaussianInput> {
        if c.len() != self.k {
            return Err(Error::ShapeMismatch(format!(
                "need {} coefficients, got {}",
                self.k,
                c.len()
            )));
        }
        if temperature < 1.0 {
            return Err(Error::Domain(format!(
                "temperature must be >= 1, got {temperature}"
            )));
        }
        if c.iter().any(|&x| x <= 0.0) {
            return Err(Error::Domain("coefficients must be positive".into()));
        }
        let mut states = Vec::with_capacity(self.k);
        for (alpha, &c_a) in c.iter().enumerate() {
            if self.is_singular_block(alpha) {
                return Err(Error::SingularBlock { index: alpha });
            }
            let sigma = &self.gammas[alpha] * (temperature * c_a);
            states.push(GaussianState::centered(CovarianceMatrix::new(
                self.n, sigma,
            )?)?);
        }
        ProductGaussianInput::new(states)
    }
}

fn constraint_residual(n: usize, blocks: &[DMatrix<f64>]) -> f64 {
    let delta = SymplecticForm::new(n);
    let mut acc = DMatrix::zeros(2 * n, 2 * n);
    for b in blocks {
        acc += b * delta.matrix() * b.transpose();
    }
    (acc - delta.matrix())
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()))
}

/// `ln |det M|` via LU diagonal, or `None` when the block is singular
/// relative to its scale (`|det| <= 1e-12 ||M||^{2n}`).
fn block_log_abs_det(m: &DMatrix<f64>) -> Option<f64> {
    let dim = m.nrows();
    let norm = m.norm();
    if norm == 0.0 {
        return None;
    }
    let lu = m.clone().lu();
    let u = lu.u();
    let mut log_det = 0.0f64;
    for i in 0..dim {
        let d = u[(i, i)].abs();
        if d == 0.0 {
            return None;
        }
        log_det += d.ln();
    }
    if log_det <= SINGULAR_DET_TOL.ln() + dim as f64 * norm.ln() {
        return None;
    }
    Some(log_det)
}

/// Factorized Gaussian input: `K` states on `n` modes each.
#[derive(Debug, Clone)]
pub struct ProductGaussianInput {
    states: Vec<GaussianState>,
}

impl ProductGaussianInput {
    pub fn new(states: Vec<GaussianState>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::ShapeMismatch("need at least one input state".into()));
        }
        let n = states[0].n();
        if states.iter().any(|s| s.n() != n) {
            return Err(Error::ShapeMismatch(
                "all input states must have the same mode count".into(),
            ));
        }
        Ok(Self { states })
    }

    /// `K` copies of the vacuum.
    pub fn vacua(n: usize, k: usize) -> Self {
        Self {
            states: (0..k).map(|_| GaussianState::vacuum(n)).collect(),
        }
    }

    /// Seeded random factorized input with symplectic eigenvalues drawn
    /// from `[nu_lo, nu_hi]` on every mode. Sweep plumbing.
    pub fn random_mixed(n: usize, k: usize, seed: u64, nu_lo: f64, nu_hi: f64) -> Self {
        let states = (0..k)
            .map(|a| {
                GaussianState::centered(crate::symplectic::random_covariance(
                    n,
                    seed.wrapping_mul(1315423911).wrapping_add(a as u64),
                    nu_lo,
                    nu_hi,
                    0.4,
                ))
                .expect("admissible by construction")
            })
            .collect();
        Self { states }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[GaussianState] {
        &self.states
    }

    pub fn state(&self, alpha: usize) -> &GaussianState {
        &self.states[alpha]
    }
}

/// Wire format: blocks as row-major arrays. Deserialization re-validates
/// the symplectic constraint and rejects violations.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MixingMatrixJson {
    n: usize,
    k: usize,
    blocks: Vec<Vec<f64>>,
}

impl From<MixingMatrix> for MixingMatrixJson {
    fn from(m: MixingMatrix) -> Self {
        let blocks = m
            .blocks
            .iter()
            .map(|b| {
                let mut row_major = Vec::with_capacity(b.nrows() * b.ncols());
                for i in 0..b.nrows() {
                    for j in 0..b.ncols() {
                        row_major.push(b[(i, j)]);
                    }
                }
                row_major
            })
            .collect();
        Self {
            n: m.n,
            k: m.k,
            blocks,
        }
    }
}

impl TryFrom<MixingMatrixJson> for MixingMatrix {
    type Error = Error;

    fn try_from(j: MixingMatrixJson) -> Result<Self> {
        let dim = 2 * j.n;
        if j.blocks.len() != j.k {
            return Err(Error::ShapeMismatch(format!(
                "k = {} but {} blocks present",
                j.k,
                j.blocks.len()
            )));
        }
        let mut blocks = Vec::with_capacity(j.k);
        for (i, flat) in j.blocks.iter().enumerate() {
            if flat.len() != dim * dim {
                return Err(Error::ShapeMismatch(format!(
                    "block {i} has {} entries, expected {}",
                    flat.len(),
                    dim * dim
                )));
            }
            blocks.push(DMatrix::from_row_slice(dim, dim, flat));
        }
        MixingMatrix::from_blocks(j.n, blocks)
    }
}
