//! The proof's parametric evolution at covariance level.
//!
//! Each input diffuses along its own local time, `σ_a(t_a) = σ_a(0) + t_a γ_a`,
//! and the local times are chained to a single coordinate `τ` through
//!
//! ```text
//! dt_a/dτ = exp(S_a(t_a(τ)) / n),      t_a(0) = 0,
//! ```
//!
//! which makes the output covariance evolve as `σ_Y(0) + t_Y · 1` with
//! `t_Y = Σ_a λ_a t_a`. Along the flow the qEPI rate is monotone
//! nondecreasing and tends to 1, which is what the trace machinery here
//! verifies numerically.
//!
//! The right-hand side grows like `(e/2) t`, so `t(τ)` blows up exponentially
//! in `τ`; integration is adaptive (embedded Dormand–Prince 4/5 pair) with a
//! hard cap [`crate::tol::T_CAP`] on the local times.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::gaussian::{self, entropy_h};
use crate::mixing::{MixingMatrix, ProductGaussianInput};
use crate::symplectic::{self, symmetric_eigen_sorted, CovarianceMatrix};
use crate::tol::{ODE_TOL, T_CAP};
use crate::{Error, Result};

/// One sampled point of the flow.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub tau: f64,
    /// Local diffusion times `t_a(τ)`.
    pub t_alphas: Vec<f64>,
    /// `t_Y = Σ λ_a t_a`.
    pub t_y: f64,
    /// Evolved input covariances `σ_a(0) + t_a γ_a`.
    pub sigmas: Vec<CovarianceMatrix>,
    /// Output covariance `σ_Y(0) + t_Y · 1`.
    pub sigma_y: CovarianceMatrix,
    /// Input entropies at the evolved covariances (nats).
    pub s_alphas: Vec<f64>,
    pub s_y: f64,
    /// qEPI rate at this point.
    pub rate: f64,
}

/// Integrator bookkeeping.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SolverStats {
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    /// Largest accepted local error estimate (absolute, scaled norm).
    pub max_local_error: f64,
}

/// Sampled trajectory of the flow, strictly increasing in `τ`.
#[derive(Debug, Clone)]
pub struct FlowTrace {
    pub samples: Vec<FlowState>,
    pub stats: SolverStats,
}

impl FlowTrace {
    /// Minimum increment of the rate between consecutive samples;
    /// nonnegative (within ODE slack) when the rate is monotone.
    pub fn min_rate_increment(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| w[1].rate - w[0].rate)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn final_state(&self) -> Option<&FlowState> {
        self.samples.last()
    }

    /// CSV with the frozen column order
    /// `tau, t_1..t_K, t_Y, S_1..S_K, S_Y, rate`.
    pub fn to_csv(&self) -> String {
        let k = self.samples.first().map_or(0, |s| s.t_alphas.len());
        let mut out = String::new();
        out.push_str("tau");
        for a in 1..=k {
            out.push_str(&format!(",t_{a}"));
        }
        out.push_str(",t_Y");
        for a in 1..=k {
            out.push_str(&format!(",S_{a}"));
        }
        out.push_str(",S_Y,rate\n");
        for s in &self.samples {
            out.push_str(&format!("{}", s.tau));
            for t in &s.t_alphas {
                out.push_str(&format!(",{t}"));
            }
            out.push_str(&format!(",{}", s.t_y));
            for v in &s.s_alphas {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{},{}\n", s.s_y, s.rate));
        }
        out
    }

    /// JSON document of the scalar columns plus solver stats.
    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Sample<'a> {
            tau: f64,
            t_alphas: &'a [f64],
            t_y: f64,
            s_alphas: &'a [f64],
            s_y: f64,
            rate: f64,
        }
        let samples: Vec<Sample> = self
            .samples
            .iter()
            .map(|s| Sample {
                tau: s.tau,
                t_alphas: &s.t_alphas,
                t_y: s.t_y,
                s_alphas: &s.s_alphas,
                s_y: s.s_y,
                rate: s.rate,
            })
            .collect();
        serde_json::json!({
            "samples": samples,
            "solver_stats": self.stats,
        })
    }
}

/// Additive diffusion `σ + t γ`; translation-covariant, means untouched.
pub fn diffuse(sigma: &CovarianceMatrix, gamma: &DMatrix<f64>, t: f64) -> CovarianceMatrix {
    assert!(t >= 0.0, "diffusion time must be nonnegative");
    assert_eq!(gamma.nrows(), sigma.dim(), "gamma shape mismatch");
    CovarianceMatrix::new(sigma.n(), sigma.matrix() + gamma * t).expect("shape preserved")
}

struct FlowProblem<'a> {
    m: &'a MixingMatrix,
    sigma0: Vec<DMatrix<f64>>,
    sigma_y0: DMatrix<f64>,
    /// Entropy of singular-block inputs is constant along the flow.
    frozen_entropy: Vec<Option<f64>>,
    n: usize,
}

impl<'a> FlowProblem<'a> {
    fn new(m: &'a MixingMatrix, input: &ProductGaussianInput) -> Result<Self> {
        let sigma_y0 = m.apply(input)?.cov().matrix().clone();
        let sigma0: Vec<DMatrix<f64>> = input
            .states()
            .iter()
            .map(|s| s.cov().matrix().clone())
            .collect();
        let mut frozen_entropy = vec![None; m.k()];
        for (alpha, slot) in frozen_entropy.iter_mut().enumerate() {
            if m.is_singular_block(alpha) {
                *slot = Some(gaussian::entropy(input.state(alpha))?);
            }
        }
        Ok(Self {
            m,
            sigma0,
            sigma_y0,
            frozen_entropy,
            n: m.n(),
        })
    }

    fn entropy_alpha(&self, alpha: usize, t: f64) -> Result<f64> {
        if let Some(s) = self.frozen_entropy[alpha] {
            return Ok(s);
        }
        let sigma = &self.sigma0[alpha] + &self.m.gammas()[alpha] * t;
        gaussian::entropy_of_cov(&CovarianceMatrix::new(self.n, sigma)?)
    }

    /// `dt_a/dτ = exp(S_a(t_a)/n)`, componentwise and uncoupled.
    fn rhs(&self, t: &[f64]) -> Result<Vec<f64>> {
        let nf = self.n as f64;
        (0..self.m.k())
            .map(|alpha| Ok((self.entropy_alpha(alpha, t[alpha])? / nf).exp()))
            .collect()
    }

    fn state_at(&self, tau: f64, t: &[f64]) -> Result<FlowState> {
        let nf = self.n as f64;
        let lambdas = self.m.lambdas();
        let t_y: f64 = t.iter().zip(lambdas).map(|(&ta, &l)| l * ta).sum();
        let mut sigmas = Vec::with_capacity(t.len());
        let mut s_alphas = Vec::with_capacity(t.len());
        for (alpha, &t_a) in t.iter().enumerate() {
            let sigma = &self.sigma0[alpha] + &self.m.gammas()[alpha] * t_a;
            let cov = CovarianceMatrix::new(self.n, sigma)?;
            s_alphas.push(gaussian::entropy_of_cov(&cov)?);
            sigmas.push(cov);
        }
        let dim = 2 * self.n;
        let sigma_y = CovarianceMatrix::new(
            self.n,
            &self.sigma_y0 + DMatrix::<f64>::identity(dim, dim) * t_y,
        )?;
        let s_y = gaussian::entropy_of_cov(&sigma_y)?;
        let rate: f64 = lambdas
            .iter()
            .zip(&s_alphas)
            .map(|(&l, &s)| l * ((s - s_y) / nf).exp())
            .sum();
        Ok(FlowState {
            tau,
            t_alphas: t.to_vec(),
            t_y,
            sigmas,
            sigma_y,
            s_alphas,
            s_y,
            rate,
        })
    }
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates the flow ODE on a uniform `τ` grid of `sample_count` points.
///
/// Adaptive stepping with local error per step at most [`ODE_TOL`]; fails
/// with [`Error::SolverOverflow`] (carrying the partial trace) once any
/// local time exceeds [`T_CAP`].
pub fn integrate_flow(
    m: &MixingMatrix,
    input: &ProductGaussianInput,
    tau_max: f64,
    sample_count: usize,
) -> Result<FlowTrace> {
    if tau_max.is_nan() || tau_max <= 0.0 {
        return Err(Error::Domain(format!("tau_max must be > 0, got {tau_max}")));
    }
    if sample_count < 2 {
        return Err(Error::Domain(format!(
            "sample_count must be >= 2, got {sample_count}"
        )));
    }
    let problem = FlowProblem::new(m, input)?;
    let k = m.k();

    let mut stats = SolverStats::default();
    let mut samples = Vec::with_capacity(sample_count);

    let mut tau = 0.0f64;
    let mut t = vec![0.0f64; k];
    let mut f_now = problem.rhs(&t)?; // FSAL across accepted steps
    samples.push(problem.state_at(tau, &t)?);

    let dtau = tau_max / (sample_count - 1) as f64;
    let mut h = (dtau / 8.0).min(1e-3);

    for grid_idx in 1..sample_count {
        let tau_target = if grid_idx == sample_count - 1 {
            tau_max
        } else {
            dtau * grid_idx as f64
        };
        while tau < tau_target {
            let mut h_try = h.min(tau_target - tau);
            loop {
                // Stage evaluations.
                let mut ks: Vec<Vec<f64>> = Vec::with_capacity(7);
                ks.push(f_now.clone());
                let mut failed = None;
                for a_row in &A {
                    let mut y = t.clone();
                    for (s, kvec) in ks.iter().enumerate() {
                        let a = a_row[s];
                        if a != 0.0 {
                            for i in 0..k {
                                y[i] += h_try * a * kvec[i];
                            }
                        }
                    }
                    match problem.rhs(&y) {
                        Ok(f) => ks.push(f),
                        Err(e) => {
                            failed = Some(e);
                            break;
                        }
                    }
                }
                if let Some(e) = failed {
                    return Err(e);
                }

                let mut y5 = t.clone();
                let mut y4 = t.clone();
                for (s, kvec) in ks.iter().enumerate() {
                    for i in 0..k {
                        y5[i] += h_try * B5[s] * kvec[i];
                        y4[i] += h_try * B4[s] * kvec[i];
                    }
                }

                let mut err_sq = 0.0;
                for i in 0..k {
                    let scale = ODE_TOL + ODE_TOL * y5[i].abs().max(t[i].abs());
                    let e = (y5[i] - y4[i]) / scale;
                    err_sq += e * e;
                }
                let err = (err_sq / k as f64).sqrt();

                if err <= 1.0 {
                    tau += h_try;
                    t = y5;
                    stats.steps_accepted += 1;
                    stats.max_local_error = stats.max_local_error.max(err * ODE_TOL);
                    f_now = problem.rhs(&t)?;
                    let grow = if err == 0.0 {
                        5.0
                    } else {
                        (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                    };
                    h = (h_try * grow).min(tau_max);
                    if t.iter().any(|&x| x > T_CAP) {
                        let partial = FlowTrace {
                            samples,
                            stats: stats.clone(),
                        };
                        return Err(Error::SolverOverflow {
                            tau,
                            t_cap: T_CAP,
                            partial: Box::new(partial),
                        });
                    }
                    break;
                } else {
                    stats.steps_rejected += 1;
                    h_try *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.5);
                    if h_try < 1e-14 {
                        return Err(Error::Domain(
                            "flow step size underflow: ODE too stiff at requested tolerance"
                                .into(),
                        ));
                    }
                }
            }
        }
        samples.push(problem.state_at(tau, &t)?);
    }

    Ok(FlowTrace { samples, stats })
}

/// Exact entropy sandwich for diffusion of a Gaussian state.
#[derive(Debug, Clone, Serialize)]
pub struct EntropySandwich {
    /// `Σ h((t − t1) ν_i(γ))`.
    pub lower: f64,
    /// `Σ h((t + t2) ν_i(γ))`.
    pub upper: f64,
    /// `1/ν_min(γ)`: smallest scaling making `t1 γ` admissible.
    pub t1: f64,
    /// `λ_max(σ)/μ_min(γ)`: smallest scaling with `σ ⪯ t2 γ`.
    pub t2: f64,
}

/// Asymptotic entropy bounds: `lower ≤ S(σ + tγ) ≤ upper` for `t > 2 t1`.
pub fn asymptotic_bounds(
    sigma: &CovarianceMatrix,
    gamma: &DMatrix<f64>,
    t: f64,
) -> Result<EntropySandwich> {
    let n = sigma.n();
    let gamma_cov = CovarianceMatrix::new(n, gamma.clone())?;
    let (gamma_eigs, _) = symmetric_eigen_sorted(gamma_cov.matrix());
    if gamma_eigs[0] <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            min_eig: gamma_eigs[0],
        });
    }
    let nus = symplectic::symplectic_eigenvalues(&gamma_cov)?;
    let nu_min = nus.iter().copied().fold(f64::INFINITY, f64::min);
    let t1 = 1.0 / nu_min;
    if t <= 2.0 * t1 {
        return Err(Error::Domain(format!(
            "asymptotic bounds need t > 2 t1 = {}, got {t}",
            2.0 * t1
        )));
    }
    let (sigma_eigs, _) = symmetric_eigen_sorted(sigma.matrix());
    let t2 = sigma_eigs[sigma_eigs.len() - 1] / gamma_eigs[0];

    let mut lower = 0.0;
    let mut upper = 0.0;
    for &nu in &nus {
        lower += entropy_h((t - t1) * nu)?;
        upper += entropy_h((t + t2) * nu)?;
    }
    Ok(EntropySandwich {
        lower,
        upper,
        t1,
        t2,
    })
}

/// Least-squares line fit of `exp(S/n)` against `t` over the top decade.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingFit {
    /// Fitted slope; the asymptotic prediction is `(det γ)^{1/2n} · e/2`.
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute residual over the fitted window (the `O(1)` term).
    pub max_residual: f64,
}

/// Fits `(t, exp(S/n))` samples; needs `t_hi / t_lo >= 100` of total range
/// and fits only points in the top decade `t >= t_hi / 10`.
pub fn scaling_fit(samples: &[(f64, f64)]) -> Result<ScalingFit> {
    if samples.len() < 2 {
        return Err(Error::InsufficientRange { ratio: 0.0 });
    }
    let t_lo = samples.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let t_hi = samples.iter().map(|p| p.0).fold(0.0f64, f64::max);
    if t_lo.is_nan() || t_lo <= 0.0 || t_hi / t_lo < 100.0 {
        return Err(Error::InsufficientRange {
            ratio: if t_lo > 0.0 { t_hi / t_lo } else { 0.0 },
        });
    }
    let window: Vec<(f64, f64)> = samples
        .iter()
        .copied()
        .filter(|p| p.0 >= t_hi / 10.0)
        .collect();
    if window.len() < 2 {
        return Err(Error::InsufficientRange { ratio: t_hi / t_lo });
    }
    let n = window.len() as f64;
    let sx: f64 = window.iter().map(|p| p.0).sum();
    let sy: f64 = window.iter().map(|p| p.1).sum();
    let sxx: f64 = window.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = window.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let max_residual = window
        .iter()
        .map(|p| (p.1 - (slope * p.0 + intercept)).abs())
        .fold(0.0f64, f64::max);
    Ok(ScalingFit {
        slope,
        intercept,
        max_residual,
    })
}

/// Diagnostic for the entropy production identity along a trace: compares
/// centered finite differences of `S_a(τ)` against
/// `¼ e^{S_a/n} tr(J_a γ_a)`, returning the worst relative mismatch.
///
/// Samples where some input mode is still (nearly) pure are skipped, since
/// the Fisher matrix does not exist there.
pub fn entropy_rate_mismatch(m: &MixingMatrix, trace: &FlowTrace) -> Result<f64> {
    let nf = m.n() as f64;
    let mut worst = 0.0f64;
    for w in trace.samples.windows(3) {
        let (prev, mid, next) = (&w[0], &w[1], &w[2]);
        let dtau = next.tau - prev.tau;
        if dtau <= 0.0 {
            continue;
        }
        for alpha in 0..m.k() {
            if m.is_singular_block(alpha) {
                continue; // entropy frozen, derivative exactly zero
            }
            let fd = (next.s_alphas[alpha] - prev.s_alphas[alpha]) / dtau;
            let j = match gaussian::fisher_of_cov(&mid.sigmas[alpha]) {
                Ok(j) => j,
                Err(Error::PureMode { .. }) => continue,
                Err(e) => return Err(e),
            };
            let analytic =
                0.25 * (mid.s_alphas[alpha] / nf).exp() * j.trace_product(&m.gammas()[alpha]);
            let denom = analytic.abs().max(1e-12);
            worst = worst.max((fd - analytic).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianState;

    #[test]
    fn diffuse_examples() {
        let vac = CovarianceMatrix::identity(1);
        let id = DMatrix::identity(2, 2);
        let same = diffuse(&vac, &id, 0.0);
        assert_eq!(same.matrix(), vac.matrix());

        let heated = diffuse(&vac, &id, 2.0);
        assert!((heated.matrix() - &id * 3.0).norm() < 1e-15);

        // Entropy nondecreasing along the diffusion.
        let mut last = -1.0;
        for k in 0..6 {
            let t = k as f64 * 0.7;
            let e = gaussian::entropy_of_cov(&diffuse(&vac, &id, t)).unwrap();
            assert!(e >= last);
            last = e;
        }
    }

    #[test]
    fn flow_identity_channel_initial_slope() {
        // K = 1, M = identity: dt/dtau = exp(h(1+t)), slope 1 at the origin.
        // The slope excess is O(t ln t), so t tracks tau to ~0.5% at 1e-3.
        let m = MixingMatrix::from_blocks(1, vec![DMatrix::identity(2, 2)]).unwrap();
        let input = ProductGaussianInput::vacua(1, 1);
        let trace = integrate_flow(&m, &input, 1e-3, 5).unwrap();
        let last = trace.final_state().unwrap();
        assert!((last.t_alphas[0] - last.tau).abs() < 5e-3 * last.tau);
        assert!(last.t_alphas[0] >= last.tau, "slope is always >= 1");
    }

    #[test]
    fn flow_balanced_beam_splitter_stays_saturated() {
        let m = MixingMatrix::beam_splitter(1, 0.5).unwrap();
        let input = ProductGaussianInput::vacua(1, 2);
        let trace = integrate_flow(&m, &input, 4.0, 40).unwrap();
        for s in &trace.samples {
            assert!((s.rate - 1.0).abs() < 1e-9, "tau {}: rate {}", s.tau, s.rate);
        }
    }

    #[test]
    fn flow_amplifier_rate_monotone_to_one() {
        let m = MixingMatrix::amplifier(1, 2.0).unwrap();
        let input = ProductGaussianInput::vacua(1, 2);
        let trace = integrate_flow(&m, &input, 8.0, 80).unwrap();
        assert!((trace.samples[0].rate - 0.75).abs() < 1e-9);
        assert!(trace.min_rate_increment() >= -1e-7);
        let last = trace.final_state().unwrap();
        assert!(last.t_y >= 1e4, "t_Y only reached {}", last.t_y);
        assert!(last.rate >= 0.99 && last.rate <= 1.0 + 1e-9, "rate {}", last.rate);
    }

    #[test]
    fn flow_two_path_sigma_y_consistency() {
        let m = MixingMatrix::random(1, 2, 3, 0.4);
        let input = ProductGaussianInput::random_mixed(1, 2, 3, 1.0, 4.0);
        let trace = integrate_flow(&m, &input, 3.0, 20).unwrap();
        for s in &trace.samples {
            // Path 2: push the evolved inputs through the channel.
            let evolved: Vec<GaussianState> = s
                .sigmas
                .iter()
                .map(|c| GaussianState::centered(c.clone()).unwrap())
                .collect();
            let direct = m
                .apply(&ProductGaussianInput::new(evolved).unwrap())
                .unwrap();
            let err = (direct.cov().matrix() - s.sigma_y.matrix())
                .iter()
                .fold(0.0f64, |acc, x| acc.max(x.abs()));
            assert!(err <= 1e-9 * s.sigma_y.norm_inf().max(1.0), "tau {}: {err}", s.tau);
        }
    }

    #[test]
    fn flow_singular_block_grows_linearly() {
        // Transparent beam-splitter: second block is singular, gamma_2 = 0,
        // so t_2 grows at the constant rate exp(S_2).
        let m = MixingMatrix::beam_splitter(1, 1.0).unwrap();
        let input = ProductGaussianInput::new(vec![
            GaussianState::vacuum(1),
            GaussianState::thermal(1, 3.0).unwrap(),
        ])
        .unwrap();
        let trace = integrate_flow(&m, &input, 2.0, 21).unwrap();
        let e_s2 = gaussian::entropy_h(3.0).unwrap().exp();
        for s in &trace.samples {
            assert!((s.t_alphas[1] - e_s2 * s.tau).abs() < 1e-6 * (1.0 + e_s2 * s.tau));
            // Singular block contributes nothing to t_Y.
            assert!((s.t_y - s.t_alphas[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn flow_rate_independent_of_input_means() {
        let m = MixingMatrix::amplifier(1, 1.7).unwrap();
        let centered = ProductGaussianInput::new(vec![
            GaussianState::thermal(1, 2.0).unwrap(),
            GaussianState::thermal(1, 1.5).unwrap(),
        ])
        .unwrap();
        let displaced = ProductGaussianInput::new(vec![
            GaussianState::new(
                nalgebra::DVector::from_vec(vec![2.0, -1.0]),
                CovarianceMatrix::isotropic(1, 2.0),
            )
            .unwrap(),
            GaussianState::new(
                nalgebra::DVector::from_vec(vec![-0.5, 3.0]),
                CovarianceMatrix::isotropic(1, 1.5),
            )
            .unwrap(),
        ])
        .unwrap();
        let a = integrate_flow(&m, &centered, 2.0, 10).unwrap();
        let b = integrate_flow(&m, &displaced, 2.0, 10).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!((x.rate - y.rate).abs() < 1e-12);
        }
    }

    #[test]
    fn flow_overflow_reports_partial_trace() {
        let m = MixingMatrix::amplifier(1, 2.0).unwrap();
        let input = ProductGaussianInput::vacua(1, 2);
        match integrate_flow(&m, &input, 40.0, 50) {
            Err(Error::SolverOverflow { partial, .. }) => {
                assert!(!partial.samples.is_empty());
                assert!(partial.min_rate_increment() >= -1e-7);
            }
            other => panic!("expected SolverOverflow, got {other:?}"),
        }
    }

    #[test]
    fn flow_validates_config() {
        let m = MixingMatrix::beam_splitter(1, 0.5).unwrap();
        let input = ProductGaussianInput::vacua(1, 2);
        assert!(integrate_flow(&m, &input, 0.0, 10).is_err());
        assert!(integrate_flow(&m, &input, 1.0, 1).is_err());
    }

    #[test]
    fn asymptotic_bounds_identity_gamma() {
        let vac = CovarianceMatrix::identity(1);
        let id = DMatrix::identity(2, 2);
        let b = asymptotic_bounds(&vac, &id, 10.0).unwrap();
        assert!((b.t1 - 1.0).abs() < 1e-12);
        assert!((b.t2 - 1.0).abs() < 1e-12);
        assert!((b.lower - entropy_h(9.0).unwrap()).abs() < 1e-12);
        assert!((b.upper - entropy_h(11.0).unwrap()).abs() < 1e-12);
        let s = gaussian::entropy_of_cov(&diffuse(&vac, &id, 10.0)).unwrap();
        assert!(b.lower <= s + 1e-12 && s <= b.upper + 1e-12);
    }

    #[test]
    fn asymptotic_bounds_use_min_symplectic_eigenvalue() {
        // gamma with symplectic eigenvalues (2, 0.5): t1 = 1/0.5 = 2.
        let gamma = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            2.0, 2.0, 0.5, 0.5,
        ]));
        let sigma = CovarianceMatrix::identity(2);
        let b = asymptotic_bounds(&sigma, &gamma, 100.0).unwrap();
        assert!((b.t1 - 2.0).abs() < 1e-9);
        // Below the threshold the bound refuses.
        assert!(asymptotic_bounds(&sigma, &gamma, 3.9).is_err());
    }

    #[test]
    fn asymptotic_bounds_requires_positive_gamma() {
        let sigma = CovarianceMatrix::identity(1);
        let gamma = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0]));
        assert!(matches!(
            asymptotic_bounds(&sigma, &gamma, 10.0),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn sandwich_width_shrinks_relatively() {
        let sigma = CovarianceMatrix::identity(1);
        let gamma = DMatrix::identity(2, 2);
        let mut last_rel = f64::INFINITY;
        for t in [1e2, 1e3, 1e4] {
            let b = asymptotic_bounds(&sigma, &gamma, t).unwrap();
            let s = gaussian::entropy_of_cov(&diffuse(&sigma, &gamma, t)).unwrap();
            let rel = (b.upper - b.lower) / s;
            assert!(rel < last_rel);
            last_rel = rel;
        }
        assert!(last_rel < 1e-3);
    }

    #[test]
    fn scaling_fit_slope_e_over_2() {
        let sigma = CovarianceMatrix::identity(1);
        let gamma = DMatrix::identity(2, 2);
        let samples: Vec<(f64, f64)> = (0..=160)
            .map(|i| {
                let t = 10f64.powf(i as f64 / 40.0); // 1 .. 1e4
                let s = gaussian::entropy_of_cov(&diffuse(&sigma, &gamma, t)).unwrap();
                (t, s.exp())
            })
            .collect();
        let fit = scaling_fit(&samples).unwrap();
        let expect = std::f64::consts::E / 2.0;
        assert!(
            (fit.slope - expect).abs() / expect < 0.01,
            "slope {} vs {expect}",
            fit.slope
        );
    }

    #[test]
    fn scaling_fit_residual_bounded() {
        let sigma = CovarianceMatrix::isotropic(1, 2.0);
        let gamma = DMatrix::identity(2, 2);
        let build = |t_hi: f64| -> ScalingFit {
            let samples: Vec<(f64, f64)> = (0..=120)
                .map(|i| {
                    let t = 10f64.powf(i as f64 / 120.0 * t_hi.log10());
                    let s = gaussian::entropy_of_cov(&diffuse(&sigma, &gamma, t)).unwrap();
                    (t, s.exp())
                })
                .collect();
            scaling_fit(&samples).unwrap()
        };
        let fit3 = build(1e3);
        let fit4 = build(1e4);
        // O(1) residual: no growth with the fitting range.
        assert!(fit4.max_residual <= fit3.max_residual * 2.0 + 1.0);
    }

    #[test]
    fn scaling_fit_requires_range() {
        let samples: Vec<(f64, f64)> = (1..=20).map(|i| (i as f64, i as f64)).collect();
        assert!(matches!(
            scaling_fit(&samples),
            Err(Error::InsufficientRange { .. })
        ));
    }

    #[test]
    fn entropy_rate_diagnostic_thermal_inputs() {
        let m = MixingMatrix::beam_splitter(1, 0.4).unwrap();
        let input = ProductGaussianInput::new(vec![
            GaussianState::thermal(1, 3.0).unwrap(),
            GaussianState::thermal(1, 2.0).unwrap(),
        ])
        .unwrap();
        let trace = integrate_flow(&m, &input, 1.0, 400).unwrap();
        let mismatch = entropy_rate_mismatch(&m, &trace).unwrap();
        assert!(mismatch < 1e-4, "worst relative mismatch {mismatch}");
    }

    #[test]
    fn trace_csv_schema() {
        let m = MixingMatrix::beam_splitter(1, 0.5).unwrap();
        let trace = integrate_flow(&m, &ProductGaussianInput::vacua(1, 2), 1.0, 3).unwrap();
        let csv = trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "tau,t_1,t_2,t_Y,S_1,S_2,S_Y,rate");
        assert_eq!(lines.count(), 3);
        let json = trace.to_json();
        assert!(json["solver_stats"]["steps_accepted"].as_u64().unwrap() > 0);
        assert_eq!(json["samples"].as_array().unwrap().len(), 3);
    }
}
