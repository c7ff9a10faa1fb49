//! JSON-fixture corpus of oracle test states and the runner driving qEPI
//! spot checks and pinned regression comparisons over it.
//!
//! Fixture layout: named states (`fock`, `thermal`, `coherent_superposition`,
//! `fock_superposition`, `mixture`), a channel list, input pairs, and
//! optional regressions carrying frozen expected rates. Cutoffs are
//! overridable per pair and per channel; the effective cutoff of a run is
//! the larger of the two so that amplifier channels get the headroom their
//! output tails need.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{channel_apply, von_neumann_entropy, ChannelKind, FockState, ORACLE_RATE_TOL};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSpec {
    /// Per-mode cutoff used when neither pair nor channel overrides it.
    pub default_cutoff: usize,
    pub states: Vec<StateSpec>,
    pub channels: Vec<ChannelSpec>,
    pub pairs: Vec<PairSpec>,
    #[serde(default)]
    pub regressions: Vec<RegressionSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: StateKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameters", rename_all = "snake_case")]
pub enum StateKind {
    Fock {
        n: usize,
    },
    Thermal {
        nu: f64,
    },
    /// `Σ c_i |alpha_i>` over coherent states; entries are `[re, im]` pairs.
    CoherentSuperposition {
        terms: Vec<CoherentTerm>,
    },
    /// `Σ c_n |n>` over number states.
    FockSuperposition {
        terms: Vec<FockTerm>,
    },
    /// Convex mixture of nested state kinds.
    Mixture {
        components: Vec<MixtureComponent>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoherentTerm {
    pub coeff: [f64; 2],
    pub alpha: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FockTerm {
    pub n: usize,
    pub coeff: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    #[serde(flatten)]
    pub kind: StateKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    BeamSplitter {
        lambda: f64,
        #[serde(default)]
        min_cutoff: Option<usize>,
    },
    TwoModeSqueezer {
        kappa: f64,
        #[serde(default)]
        min_cutoff: Option<usize>,
    },
}

impl ChannelSpec {
    pub fn to_kind(&self) -> ChannelKind {
        match *self {
            ChannelSpec::BeamSplitter { lambda, .. } => ChannelKind::BeamSplitter { lambda },
            ChannelSpec::TwoModeSqueezer { kappa, .. } => ChannelKind::TwoModeSqueezer { kappa },
        }
    }

    fn min_cutoff(&self) -> usize {
        match *self {
            ChannelSpec::BeamSplitter { min_cutoff, .. }
            | ChannelSpec::TwoModeSqueezer { min_cutoff, .. } => min_cutoff.unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairSpec {
    pub left: String,
    pub right: String,
    #[serde(default)]
    pub cutoff: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub channel: ChannelSpec,
    pub left: String,
    pub right: String,
    pub expected_rate: f64,
    pub tol: f64,
    #[serde(default)]
    pub cutoff: Option<usize>,
}

/// Builds the state for `kind` at per-mode cutoff `dim`.
pub fn build_state(kind: &StateKind, dim: usize) -> Result<FockState> {
    match kind {
        StateKind::Fock { n } => FockState::fock(*n, dim),
        StateKind::Thermal { nu } => FockState::thermal(*nu, dim),
        StateKind::CoherentSuperposition { terms } => {
            let terms: Vec<(Complex64, Complex64)> = terms
                .iter()
                .map(|t| {
                    (
                        Complex64::new(t.coeff[0], t.coeff[1]),
                        Complex64::new(t.alpha[0], t.alpha[1]),
                    )
                })
                .collect();
            FockState::coherent_superposition(&terms, dim)
        }
        StateKind::FockSuperposition { terms } => {
            let terms: Vec<(usize, Complex64)> = terms
                .iter()
                .map(|t| (t.n, Complex64::new(t.coeff[0], t.coeff[1])))
                .collect();
            FockState::fock_superposition(&terms, dim)
        }
        StateKind::Mixture { components } => {
            let built: Result<Vec<(f64, FockState)>> = components
                .iter()
                .map(|c| Ok((c.weight, build_state(&c.kind, dim)?)))
                .collect();
            FockState::mixture(&built?)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CorpusRow {
    pub left: String,
    pub right: String,
    pub channel: String,
    pub cutoff: usize,
    pub s_1: f64,
    pub s_2: f64,
    pub s_y: f64,
    pub rate: f64,
    pub satisfied: bool,
    pub trace_deficit: f64,
    /// Populated when the run failed (e.g. truncation over budget).
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorpusReport {
    pub rows: Vec<CorpusRow>,
    pub runs: usize,
    pub max_rate: f64,
    pub all_satisfied: bool,
    pub truncation_failures: usize,
    pub regression_failures: Vec<String>,
}

impl CorpusSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn find_state(&self, name: &str) -> Result<&StateSpec> {
        self.states
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Domain(format!("corpus has no state named '{name}'")))
    }
}

/// Runs every channel over every pair, then the pinned regressions.
pub fn run_corpus(spec: &CorpusSpec) -> Result<CorpusReport> {
    let mut rows = Vec::new();
    let mut max_rate = f64::NEG_INFINITY;
    let mut truncation_failures = 0;

    for channel in &spec.channels {
        let kind = channel.to_kind();
        for pair in &spec.pairs {
            let cutoff = pair
                .cutoff
                .unwrap_or(spec.default_cutoff)
                .max(channel.min_cutoff());
            let left = build_state(&spec.find_state(&pair.left)?.kind, cutoff)?;
            let right = build_state(&spec.find_state(&pair.right)?.kind, cutoff)?;
            let s_1 = von_neumann_entropy(&left);
            let s_2 = von_neumann_entropy(&right);
            match channel_apply(kind, &left, &right) {
                Ok(out) => {
                    let s_y = von_neumann_entropy(&out);
                    let (l1, l2) = kind.lambdas()?;
                    let rate = l1 * (s_1 - s_y).exp() + l2 * (s_2 - s_y).exp();
                    max_rate = max_rate.max(rate);
                    rows.push(CorpusRow {
                        left: pair.left.clone(),
                        right: pair.right.clone(),
                        channel: kind.label(),
                        cutoff,
                        s_1,
                        s_2,
                        s_y,
                        rate,
                        satisfied: rate <= 1.0 + ORACLE_RATE_TOL,
                        trace_deficit: out.trace_deficit(),
                        error: None,
                    });
                }
                Err(Error::Truncation { deficit, .. }) => {
                    truncation_failures += 1;
                    rows.push(CorpusRow {
                        left: pair.left.clone(),
                        right: pair.right.clone(),
                        channel: kind.label(),
                        cutoff,
                        s_1,
                        s_2,
                        s_y: f64::NAN,
                        rate: f64::NAN,
                        satisfied: false,
                        trace_deficit: deficit,
                        error: Some(format!("truncation deficit {deficit:e} over budget")),
                    });
                }
                Err(e) => return Err(e),
            }
        }
    }

    let mut regression_failures = Vec::new();
    for reg in &spec.regressions {
        let cutoff = reg
            .cutoff
            .unwrap_or(spec.default_cutoff)
            .max(reg.channel.min_cutoff());
        let kind = reg.channel.to_kind();
        let left = build_state(&spec.find_state(&reg.left)?.kind, cutoff)?;
        let right = build_state(&spec.find_state(&reg.right)?.kind, cutoff)?;
        match super::qepi_spot_check(kind, &left, &right) {
            Ok(report) => {
                if (report.rate - reg.expected_rate).abs() > reg.tol {
                    regression_failures.push(format!(
                        "{} on ({}, {}): rate {} differs from pinned {} beyond {}",
                        kind.label(),
                        reg.left,
                        reg.right,
                        report.rate,
                        reg.expected_rate,
                        reg.tol
                    ));
                }
            }
            Err(e) => regression_failures.push(format!(
                "{} on ({}, {}): {e}",
                kind.label(),
                reg.left,
                reg.right
            )),
        }
    }

    let all_satisfied = rows.iter().all(|r| r.satisfied)
        && truncation_failures == 0
        && regression_failures.is_empty();
    Ok(CorpusReport {
        runs: rows.len(),
        rows,
        max_rate,
        all_satisfied,
        truncation_failures,
        regression_failures,
    })
}
