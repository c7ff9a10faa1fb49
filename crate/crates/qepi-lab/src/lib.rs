//! # qepi-lab
//!
//! Numerical verification stack for the multi-mode quantum Entropy Power
//! Inequality (qEPI) on bosonic Gaussian channels.
//!
//! A linear mixing channel couples `K` independent sets of `n` bosonic modes
//! into one output set through a block matrix `M = (M_1 | ... | M_K)`
//! constrained by `sum_a M_a Δ M_a^T = Δ`. The qEPI bounds the output
//! von Neumann entropy from below:
//!
//! ```text
//! exp(S_Y / n)  >=  sum_a lambda_a exp(S_a / n),    lambda_a = |det M_a|^(1/n)
//! ```
//!
//! The crate provides the pieces needed to check this inequality and the
//! machinery of its proof at desk scale:
//!
//! - [`symplectic`]: symplectic form, quantum admissibility, Williamson
//!   normal form, seeded random symplectic matrices.
//! - [`gaussian`]: Gaussian states at covariance level — entropy, Fisher
//!   information, displaced relative entropy, Gaussianization.
//! - [`mixing`]: beam-splitter / amplifier / random mixing matrices and
//!   their action on product Gaussian inputs.
//! - [`check`]: the qEPI rate functional plus the classical Gaussian EPI,
//!   Hessian data-processing, and Stam-type inequality checks.
//! - [`flow`]: additive-noise diffusion at covariance level, the
//!   reparametrized flow ODE whose rate is monotone, entropy sandwich
//!   bounds, and asymptotic scaling fits.
//! - [`fock`]: an independent truncated Fock-space oracle (n = 1, K = 2)
//!   for non-Gaussian spot checks against the covariance-level results.
//!
//! All quantities are vacuum-normalized (vacuum covariance = identity) and
//! entropies are in nats.

use thiserror::Error;

pub mod check;
pub mod flow;
pub mod fock;
pub mod gaussian;
pub mod mixing;
pub mod symplectic;

/// Shared numerical tolerances.
///
/// These are contracts, not knobs: tests and inequality verdicts are pinned
/// against them.
pub mod tol {
    /// Relative positive-semidefiniteness slack for admissibility and
    /// eigenvalue checks (double precision headroom at n <= 8 modes).
    pub const TOL_PSD: f64 = 1e-10;

    /// Absolute tolerance on symplectic identities such as `S Δ S^T = Δ`
    /// and Williamson reconstruction.
    pub const TOL_SYMP: f64 = 1e-9;

    /// Slack for inequality verdicts (qEPI rate, Minkowski, Stam): the
    /// mathematics is exact, only floating point pollutes it.
    pub const TOL_RATE: f64 = 1e-9;

    /// Fisher information refuses modes with `nu <= 1 + NU_FLOOR`:
    /// the divergence at pure modes is surfaced as an error rather than
    /// an ill-conditioned number.
    pub const NU_FLOOR: f64 = 1e-6;

    /// Local error target per adaptive ODE step in the flow integrator.
    pub const ODE_TOL: f64 = 1e-8;

    /// Guard on local diffusion times: the flow ODE is super-exponential
    /// in tau, so t_alpha is capped before it overflows.
    pub const T_CAP: f64 = 1e6;

    /// Eigenvalues below this are treated as zero in matrix logarithms
    /// and entropy sums (0 ln 0 = 0 convention).
    pub const EIG_FLOOR: f64 = 1e-14;

    /// Maximum tolerated probability mass lost to Fock-space truncation
    /// before a state is flagged untrusted.
    pub const DEFICIT_BUDGET: f64 = 1e-6;
}

/// Errors across the verification stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (min eigenvalue {min_eig:e})")]
    NotPositiveDefinite { min_eig: f64 },

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("Fisher information diverges: mode with symplectic eigenvalue {nu} is (nearly) pure")]
    PureMode { nu: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("covariance matrix is not quantum-admissible (min eigenvalue of sigma + i*Delta = {min_eig:e})")]
    InadmissibleCovariance { min_eig: f64 },

    #[error("mixing block {index} is singular")]
    SingularBlock { index: usize },

    #[error("mixing constraint violated: ||sum M_a Delta M_a^T - Delta|| = {residual:e}")]
    ConstraintViolated { residual: f64 },

    #[error("flow solver overflow: t_alpha exceeded cap {t_cap:e} at tau = {tau}")]
    SolverOverflow {
        tau: f64,
        t_cap: f64,
        /// Samples accepted before the overflow, for post-mortem.
        partial: Box<flow::FlowTrace>,
    },

    #[error("insufficient sample range for scaling fit: t_hi/t_lo = {ratio} < 100")]
    InsufficientRange { ratio: f64 },

    #[error("Fock truncation untrusted: trace deficit {deficit:e} exceeds budget {budget:e}")]
    Truncation { deficit: f64, budget: f64 },

    #[error("relative entropy undefined: {mass:e} of the state lies outside the support of the reference")]
    SupportViolation { mass: f64 },

    #[error("Husimi probe covariance is not admissible")]
    InadmissibleProbe,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
