//! `qepi`: command-line harness over the qEPI verification stack.
//!
//! Subcommands: `verify-qepi`, `flow-trace`, `scaling`, `fock-corpus`.
//! Exit codes: 0 pass, 1 inequality violation, 2 usage/config error,
//! 3 solver/truncation failure. Every nonzero exit leaves a machine-readable
//! diagnostic JSON at the `--out` path. Identical config and seed produce
//! byte-identical output except for the timestamp header, which
//! `--no-timestamp` suppresses. `QEPI_LAB_LOG=debug` enables progress
//! logging on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde_json::json;

use qepi_lab::check::{self, ViolationBundle};
use qepi_lab::flow;
use qepi_lab::fock::corpus::{run_corpus, CorpusSpec};
use qepi_lab::gaussian::{self, GaussianState};
use qepi_lab::mixing::{MixingMatrix, ProductGaussianInput};
use qepi_lab::symplectic::CovarianceMatrix;
use qepi_lab::Error as LabError;

const SCHEMA_VERSION: &str = "v1";

#[derive(Parser)]
#[command(name = "qepi", version, about = "Multi-mode quantum entropy power inequality harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Channel {
    BeamSplitter,
    Amplifier,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Run random Gaussian instances through the qEPI, Hessian
    /// data-processing, and Stam checks.
    VerifyQepi {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Modes per input set (1..=8).
        #[arg(long, default_value_t = 2)]
        n: usize,
        /// Number of input sets (2..=6).
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Worker threads; per-trial seeds keep results identical.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        no_timestamp: bool,
    },
    /// Integrate the diffusion flow and report rate monotonicity.
    FlowTrace {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// Input sets; only used by the random channel.
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, value_enum, default_value_t = Channel::Amplifier)]
        channel: Channel,
        /// Beam-splitter transmissivity.
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        /// Amplifier gain.
        #[arg(long, default_value_t = 2.0)]
        kappa: f64,
        /// Thermal occupation of the inputs (1 = vacuum).
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 8.0)]
        tau_max: f64,
        #[arg(long, default_value_t = 60)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        no_timestamp: bool,
    },
    /// Fit the asymptotic growth of exp(S/n) against diffusion time.
    Scaling {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// Initial covariance is temperature * identity.
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        /// Upper end of the diffusion-time range.
        #[arg(long, default_value_t = 1e4)]
        t_hi: f64,
        /// Diffuse along a unit-determinant gamma drawn from a random
        /// mixing block instead of the identity.
        #[arg(long)]
        mixing_gamma: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        no_timestamp: bool,
    },
    /// Run the Fock-oracle corpus from a JSON fixture file.
    FockCorpus {
        #[arg(long, default_value = "fixtures/fock_corpus.json")]
        fixtures: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        no_timestamp: bool,
    },
}

/// Failure that still writes a diagnostic JSON before exiting.
struct Failure {
    code: u8,
    diagnostic: serde_json::Value,
}

impl Failure {
    fn config(msg: impl Into<String>) -> Self {
        Failure {
            code: 2,
            diagnostic: json!({"error": "config", "message": msg.into()}),
        }
    }
}

fn log_enabled() -> bool {
    std::env::var("QEPI_LAB_LOG").is_ok_and(|v| v == "debug" || v == "info")
}

fn timestamp_header(no_timestamp: bool) -> String {
    if no_timestamp {
        String::new()
    } else {
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        format!("# generated_at_unix: {now}\n")
    }
}

fn write_out(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure {
        code: 2,
        diagnostic: json!({"error": "io", "message": e.to_string(), "path": path.display().to_string()}),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (out, result) = match cli.command {
        Command::VerifyQepi {
            seed,
            n,
            k,
            trials,
            ref out,
            format,
            jobs,
            no_timestamp,
        } => (
            out.clone(),
            cmd_verify_qepi(seed, n, k, trials, out, format, jobs, no_timestamp),
        ),
        Command::FlowTrace {
            seed,
            n,
            k,
            channel,
            lambda,
            kappa,
            temperature,
            tau_max,
            samples,
            ref out,
            format,
            no_timestamp,
        } => (
            out.clone(),
            cmd_flow_trace(
                seed,
                n,
                k,
                channel,
                lambda,
                kappa,
                temperature,
                tau_max,
                samples,
                out,
                format,
                no_timestamp,
            ),
        ),
        Command::Scaling {
            seed,
            n,
            temperature,
            t_hi,
            mixing_gamma,
            ref out,
            format,
            no_timestamp,
        } => (
            out.clone(),
            cmd_scaling(seed, n, temperature, t_hi, mixing_gamma, out, format, no_timestamp),
        ),
        Command::FockCorpus {
            ref fixtures,
            ref out,
            format,
            no_timestamp,
        } => (
            out.clone(),
            cmd_fock_corpus(fixtures, out, format, no_timestamp),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            let text = serde_json::to_string_pretty(&failure.diagnostic)
                .unwrap_or_else(|_| "{\"error\":\"diagnostic serialization failed\"}".into());
            if let Err(e) = std::fs::write(&out, &text) {
                eprintln!("failed to write diagnostic to {}: {e}", out.display());
            }
            eprintln!("{text}");
            ExitCode::from(failure.code)
        }
    }
}

struct TrialRow {
    trial: usize,
    rate: f64,
    margin: f64,
    hessian_min_eig: f64,
    stam_lhs: f64,
    stam_rhs: f64,
    qepi_ok: bool,
    hessian_ok: bool,
    stam_ok: bool,
}

fn run_trial(seed: u64, trial: usize, n: usize, k: usize) -> Result<TrialRow, LabError> {
    let trial_seed = seed.wrapping_add(trial as u64);
    let m = MixingMatrix::random(n, k, trial_seed, 0.4);
    // Strictly mixed inputs so the Fisher checks are defined.
    let input = ProductGaussianInput::random_mixed(n, k, trial_seed ^ 0x5DEECE66D, 1.05, 20.0);
    let report = check::qepi_rate(&m, &input)?;
    let hessian = check::hessian_data_processing_check(&m, &input)?;
    let stam = check::stam_check(&m, &input)?;
    Ok(TrialRow {
        trial,
        rate: report.rate,
        margin: report.margin,
        hessian_min_eig: hessian.residual_min_eigenvalue,
        stam_lhs: stam.lhs,
        stam_rhs: stam.rhs,
        qepi_ok: report.satisfied,
        hessian_ok: hessian.satisfied,
        stam_ok: stam.satisfied,
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify_qepi(
    seed: u64,
    n: usize,
    k: usize,
    trials: usize,
    out: &Path,
    format: Format,
    jobs: usize,
    no_timestamp: bool,
) -> Result<(), Failure> {
    if trials == 0 {
        return Err(Failure::config("trials must be >= 1"));
    }
    if !(1..=8).contains(&n) {
        return Err(Failure::config(format!("n must be in 1..=8, got {n}")));
    }
    if !(2..=6).contains(&k) {
        return Err(Failure::config(format!("k must be in 2..=6, got {k}")));
    }
    if jobs == 0 {
        return Err(Failure::config("jobs must be >= 1"));
    }

    let jobs = jobs.min(trials);
    let mut rows: Vec<TrialRow> = Vec::with_capacity(trials);
    let chunk = trials.div_ceil(jobs);
    let results: Vec<Result<Vec<TrialRow>, LabError>> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..jobs {
            let lo = w * chunk;
            let hi = ((w + 1) * chunk).min(trials);
            handles.push(scope.spawn(move || {
                let mut part = Vec::with_capacity(hi.saturating_sub(lo));
                for t in lo..hi {
                    if log_enabled() && t % 500 == 0 {
                        eprintln!("[qepi] trial {t}/{trials}");
                    }
                    part.push(run_trial(seed, t, n, k)?);
                }
                Ok(part)
            }));
        }
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for r in results {
        match r {
            Ok(mut part) => rows.append(&mut part),
            Err(e) => {
                return Err(Failure {
                    code: 3,
                    diagnostic: json!({"error": "instance", "message": e.to_string()}),
                })
            }
        }
    }
    rows.sort_by_key(|r| r.trial);

    let violations: Vec<&TrialRow> = rows
        .iter()
        .filter(|r| !(r.qepi_ok && r.hessian_ok && r.stam_ok))
        .collect();

    let mut text = String::new();
    match format {
        Format::Csv => {
            text.push_str(&format!("# schema: verify-qepi {SCHEMA_VERSION}\n"));
            text.push_str(&timestamp_header(no_timestamp));
            text.push_str(
                "trial,rate,margin,hessian_min_eig,stam_lhs,stam_rhs,qepi_ok,hessian_ok,stam_ok\n",
            );
            for r in &rows {
                text.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    r.trial,
                    r.rate,
                    r.margin,
                    r.hessian_min_eig,
                    r.stam_lhs,
                    r.stam_rhs,
                    r.qepi_ok,
                    r.hessian_ok,
                    r.stam_ok
                ));
            }
        }
        Format::Json => {
            let items: Vec<serde_json::Value> = rows
                .iter()
                .map(|r| {
                    json!({
                        "trial": r.trial,
                        "rate": r.rate,
                        "margin": r.margin,
                        "hessian_min_eig": r.hessian_min_eig,
                        "stam_lhs": r.stam_lhs,
                        "stam_rhs": r.stam_rhs,
                        "qepi_ok": r.qepi_ok,
                        "hessian_ok": r.hessian_ok,
                        "stam_ok": r.stam_ok,
                    })
                })
                .collect();
            let doc = json!({
                "schema": format!("verify-qepi {SCHEMA_VERSION}"),
                "generated_at_unix": if no_timestamp { serde_json::Value::Null } else {
                    json!(std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs()))
                },
                "trials": items,
                "violations": violations.len(),
            });
            text = serde_json::to_string_pretty(&doc).unwrap();
            text.push('\n');
        }
    }
    write_out(out, &text)?;

    if let Some(first) = violations.first() {
        // Persist a replayable bundle for the first offending instance.
        let trial_seed = seed.wrapping_add(first.trial as u64);
        let m = MixingMatrix::random(n, k, trial_seed, 0.4);
        let input = ProductGaussianInput::random_mixed(n, k, trial_seed ^ 0x5DEECE66D, 1.05, 20.0);
        let report = check::qepi_rate(&m, &input).expect("replay of checked instance");
        let bundle = ViolationBundle::new(Some(trial_seed), &m, &input, &report);
        let bundle_path = out.with_extension("violation.json");
        let _ = std::fs::write(
            &bundle_path,
            serde_json::to_string_pretty(&bundle).unwrap_or_default(),
        );
        return Err(Failure {
            code: 1,
            diagnostic: json!({
                "error": "violation",
                "message": format!("{} of {} trials violated a check", violations.len(), rows.len()),
                "first_trial": first.trial,
                "bundle": bundle_path.display().to_string(),
            }),
        });
    }
    println!("verify-qepi: {trials} trials pass");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_flow_trace(
    seed: u64,
    n: usize,
    k: usize,
    channel: Channel,
    lambda: f64,
    kappa: f64,
    temperature: f64,
    tau_max: f64,
    samples: usize,
    out: &Path,
    format: Format,
    no_timestamp: bool,
) -> Result<(), Failure> {
    if tau_max.is_nan() || tau_max <= 0.0 {
        return Err(Failure::config(format!("tau-max must be > 0, got {tau_max}")));
    }
    if samples < 2 {
        return Err(Failure::config("samples must be >= 2"));
    }
    if temperature < 1.0 {
        return Err(Failure::config("temperature must be >= 1"));
    }
    if !(1..=8).contains(&n) || !(2..=6).contains(&k) {
        return Err(Failure::config("n must be in 1..=8 and k in 2..=6"));
    }
    let m = match channel {
        Channel::BeamSplitter => MixingMatrix::beam_splitter(n, lambda),
        Channel::Amplifier => MixingMatrix::amplifier(n, kappa),
        Channel::Random => Ok(MixingMatrix::random(n, k, seed, 0.4)),
    }
    .map_err(|e| Failure::config(e.to_string()))?;
    let input = ProductGaussianInput::new(
        (0..m.k())
            .map(|_| GaussianState::thermal(n, temperature))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Failure::config(e.to_string()))?,
    )
    .map_err(|e| Failure::config(e.to_string()))?;

    let trace = match flow::integrate_flow(&m, &input, tau_max, samples) {
        Ok(tr) => tr,
        Err(LabError::SolverOverflow { tau, t_cap, partial }) => {
            return Err(Failure {
                code: 3,
                diagnostic: json!({
                    "error": "solver_overflow",
                    "tau": tau,
                    "t_cap": t_cap,
                    "partial_trace": partial.to_json(),
                }),
            });
        }
        Err(e) => {
            return Err(Failure {
                code: 2,
                diagnostic: json!({"error": "flow", "message": e.to_string()}),
            })
        }
    };
    let min_increment = trace.min_rate_increment();
    let monotone = min_increment >= -1e-7;
    let final_rate = trace.final_state().map_or(f64::NAN, |s| s.rate);

    let mut text = String::new();
    match format {
        Format::Csv => {
            text.push_str(&format!("# schema: flow-trace {SCHEMA_VERSION}\n"));
            text.push_str(&timestamp_header(no_timestamp));
            text.push_str(&trace.to_csv());
            text.push_str(&format!(
                "# monotone: {monotone} min_increment={min_increment:e} final_rate={final_rate}\n"
            ));
        }
        Format::Json => {
            let mut doc = trace.to_json();
            doc["schema"] = json!(format!("flow-trace {SCHEMA_VERSION}"));
            doc["monotone"] = json!(monotone);
            doc["min_rate_increment"] = json!(min_increment);
            doc["final_rate"] = json!(final_rate);
            text = serde_json::to_string_pretty(&doc).unwrap();
            text.push('\n');
        }
    }
    write_out(out, &text)?;
    if !monotone {
        return Err(Failure {
            code: 1,
            diagnostic: json!({
                "error": "monotonicity",
                "message": format!("rate decreased by {min_increment:e} beyond the 1e-7 slack"),
            }),
        });
    }
    println!("flow-trace: monotone rate, final {final_rate:.6}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_scaling(
    seed: u64,
    n: usize,
    temperature: f64,
    t_hi: f64,
    mixing_gamma: bool,
    out: &Path,
    format: Format,
    no_timestamp: bool,
) -> Result<(), Failure> {
    if !(1..=8).contains(&n) {
        return Err(Failure::config(format!("n must be in 1..=8, got {n}")));
    }
    if temperature < 1.0 {
        return Err(Failure::config("temperature must be >= 1"));
    }
    if t_hi < 1e3 {
        return Err(Failure::config("t-hi must be >= 1e3 for a meaningful fit"));
    }
    let gamma: DMatrix<f64> = if mixing_gamma {
        let m = MixingMatrix::random(n, 2, seed, 0.4);
        if m.is_singular_block(0) {
            return Err(Failure::config("drawn mixing block is singular; try another seed"));
        }
        m.gammas()[0].clone()
    } else {
        DMatrix::identity(2 * n, 2 * n)
    };
    let sigma = CovarianceMatrix::isotropic(n, temperature);

    let t_lo = t_hi / 200.0;
    let count = 120usize;
    let samples: Vec<(f64, f64)> = (0..=count)
        .map(|i| {
            let t = t_lo * (t_hi / t_lo).powf(i as f64 / count as f64);
            let s = gaussian::entropy_of_cov(&flow::diffuse(&sigma, &gamma, t))
                .expect("diffused covariance stays positive");
            (t, (s / n as f64).exp())
        })
        .collect();
    let fit = flow::scaling_fit(&samples).map_err(|e| Failure {
        code: 2,
        diagnostic: json!({"error": "fit", "message": e.to_string()}),
    })?;
    let expected = gamma.determinant().powf(1.0 / (2.0 * n as f64)) * std::f64::consts::E / 2.0;
    let rel_err = (fit.slope - expected).abs() / expected;

    let mut text = String::new();
    match format {
        Format::Csv => {
            text.push_str(&format!("# schema: scaling {SCHEMA_VERSION}\n"));
            text.push_str(&timestamp_header(no_timestamp));
            text.push_str("t,exp_s_over_n\n");
            for (t, y) in &samples {
                text.push_str(&format!("{t},{y}\n"));
            }
            text.push_str(&format!(
                "# slope={} expected={expected} rel_err={rel_err:e} max_residual={}\n",
                fit.slope, fit.max_residual
            ));
        }
        Format::Json => {
            let doc = json!({
                "schema": format!("scaling {SCHEMA_VERSION}"),
                "generated_at_unix": if no_timestamp { serde_json::Value::Null } else {
                    json!(std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs()))
                },
                "samples": samples.iter().map(|(t, y)| json!({"t": t, "exp_s_over_n": y})).collect::<Vec<_>>(),
                "slope": fit.slope,
                "expected": expected,
                "rel_err": rel_err,
                "max_residual": fit.max_residual,
            });
            text = serde_json::to_string_pretty(&doc).unwrap();
            text.push('\n');
        }
    }
    write_out(out, &text)?;
    if rel_err > 0.01 {
        return Err(Failure {
            code: 1,
            diagnostic: json!({
                "error": "scaling",
                "message": format!("slope {} deviates from {expected} by {rel_err:e}", fit.slope),
            }),
        });
    }
    println!("scaling: slope {} vs expected {expected} (rel err {rel_err:.2e})", fit.slope);
    Ok(())
}

fn cmd_fock_corpus(
    fixtures: &Path,
    out: &Path,
    format: Format,
    no_timestamp: bool,
) -> Result<(), Failure> {
    if !fixtures.exists() {
        return Err(Failure::config(format!(
            "fixture file {} does not exist",
            fixtures.display()
        )));
    }
    let spec = CorpusSpec::load(fixtures).map_err(|e| Failure::config(e.to_string()))?;
    let report = run_corpus(&spec).map_err(|e| Failure {
        code: 3,
        diagnostic: json!({"error": "corpus", "message": e.to_string()}),
    })?;

    let mut text = String::new();
    match format {
        Format::Csv => {
            text.push_str(&format!("# schema: fock-corpus {SCHEMA_VERSION}\n"));
            text.push_str(&timestamp_header(no_timestamp));
            text.push_str("left,right,channel,cutoff,s_1,s_2,s_y,rate,satisfied,trace_deficit\n");
            for r in &report.rows {
                text.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    r.left,
                    r.right,
                    r.channel,
                    r.cutoff,
                    r.s_1,
                    r.s_2,
                    r.s_y,
                    r.rate,
                    r.satisfied,
                    r.trace_deficit
                ));
            }
        }
        Format::Json => {
            let mut doc = serde_json::to_value(&report).unwrap();
            doc["schema"] = json!(format!("fock-corpus {SCHEMA_VERSION}"));
            if !no_timestamp {
                doc["generated_at_unix"] = json!(std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs()));
            }
            text = serde_json::to_string_pretty(&doc).unwrap();
            text.push('\n');
        }
    }
    write_out(out, &text)?;

    if report.truncation_failures > 0 {
        return Err(Failure {
            code: 3,
            diagnostic: json!({
                "error": "truncation",
                "message": format!("{} corpus runs exceeded the deficit budget", report.truncation_failures),
            }),
        });
    }
    if !report.all_satisfied {
        return Err(Failure {
            code: 1,
            diagnostic: json!({
                "error": "violation",
                "message": "corpus contains qEPI violations or regression failures",
                "max_rate": report.max_rate,
                "regression_failures": report.regression_failures,
            }),
        });
    }
    println!(
        "fock-corpus: {} runs pass, max rate {:.6}",
        report.runs, report.max_rate
    );
    Ok(())
}
