use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use momentum_core::certificates::{
    drift_constants, ergodicity_budget, gaussian_minorization, noise_budget, preset_params, search_p_tilde,
    verify_lmi, NoiseBudgetInput, Preset, LMI_TOL,
};
use momentum_core::gaussian::{stationary_cov, stationary_cov_dense, v_prefactor, InitialLaw};
use momentum_core::harness::{
    run_experiment, run_figure1, write_outputs, Execution, ExperimentConfig, NoiseSpec, Panel, ParamSpec,
};
use momentum_core::problems::ObjectiveSpec;
use momentum_core::transport::{build_weighted_norm, c0_constant, contraction_curve, GaussianMeasure};
use momentum_core::{Error, Method, QuadraticObjective, StateVec, SymMatrix};

#[derive(Parser)]
#[command(
    name = "momentum-certify",
    version,
    about = "Stochastic momentum methods: simulation and certificates"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a Monte Carlo experiment and write curve/histogram CSVs.
    Simulate(SimulateArgs),
    /// Check the rate certificate of a preset and report constants as JSON.
    Certify(CertifyArgs),
    /// Stationary covariance of a quadratic chain as JSON.
    Stationary(StationaryArgs),
    /// Exact weighted W2 distance to stationarity along a Gaussian chain, as CSV.
    Contraction(ContractionArgs),
    /// Reproduce the three-panel simulation protocol.
    Figure1(Figure1Args),
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Ag,
    AgStar,
    Hb,
    Aybat,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Gd,
    Hb,
    Ag,
    Aspg,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Gd => Method::Gd,
            MethodArg::Hb => Method::Hb,
            MethodArg::Ag => Method::Ag,
            MethodArg::Aspg => Method::Aspg,
        }
    }
}

fn preset(p: PresetArg, alpha: Option<f64>) -> Result<Preset> {
    Ok(match p {
        PresetArg::Ag => Preset::Ag,
        PresetArg::AgStar => Preset::AgStar,
        PresetArg::Hb => Preset::Hb,
        PresetArg::Aybat => Preset::Aybat {
            alpha: alpha.context("--alpha is required for the aybat preset")?,
        },
    })
}

#[derive(Args, Clone)]
struct ThreadArgs {
    /// Worker threads; defaults to MC_THREADS or all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Run paths on the calling thread.
    #[arg(long)]
    serial: bool,
}

impl ThreadArgs {
    fn execution(&self) -> Result<Execution> {
        if self.serial {
            return Ok(Execution::Serial);
        }
        let threads = match self.threads {
            Some(n) => Some(n),
            None => match std::env::var("MC_THREADS") {
                Ok(v) => Some(
                    v.trim()
                        .parse()
                        .with_context(|| format!("MC_THREADS={v} is not a count"))?,
                ),
                Err(_) => None,
            },
        };
        if threads == Some(0) {
            bail!("thread count must be >= 1");
        }
        Ok(Execution::Parallel { threads })
    }
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<T>()
                .map_err(|e| anyhow::anyhow!("bad list entry '{t}': {e}"))
        })
        .collect()
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON experiment config; flags below are ignored when given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Output file stem.
    #[arg(long, default_value = "sim")]
    stem: String,
    /// Comma-separated Hessian eigenvalues.
    #[arg(long, default_value = "1,4")]
    eigenvalues: String,
    #[arg(long, value_enum, default_value = "ag")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "ag")]
    preset: PresetArg,
    /// Explicit stepsize (with --beta, overrides the preset).
    #[arg(long, requires = "beta")]
    alpha: Option<f64>,
    #[arg(long, requires = "alpha")]
    beta: Option<f64>,
    /// Isotropic Gaussian noise level.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1000)]
    paths: usize,
    #[arg(long, default_value_t = 200)]
    k_max: usize,
    #[arg(long, default_value = "")]
    snapshots: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[command(flatten)]
    threads: ThreadArgs,
}

fn simulate(a: SimulateArgs) -> Result<ExitCode> {
    let cfg: ExperimentConfig = match &a.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => {
            let params = match (a.alpha, a.beta) {
                (Some(alpha), Some(beta)) => ParamSpec::Explicit { alpha, beta },
                _ => ParamSpec::Preset(preset(a.preset, None)?),
            };
            ExperimentConfig {
                objective: ObjectiveSpec::Quadratic {
                    eigenvalues: parse_list(&a.eigenvalues)?,
                    a: Vec::new(),
                    b: 0.0,
                },
                method: a.method.into(),
                params,
                noise: NoiseSpec::IsotropicGaussian { sigma: a.sigma },
                n_paths: a.paths,
                k_max: a.k_max,
                snapshot_ks: parse_list(&a.snapshots)?,
                master_seed: a.seed,
                x0: None,
                constraint: None,
                bins: 50,
                record_stride: a.stride,
                moment_k: None,
                label: a.stem.clone(),
            }
        }
    };
    let result = run_experiment(&cfg, a.threads.execution()?)?;
    for p in write_outputs(&result, &a.out, &a.stem)? {
        eprintln!("wrote {}", p.display());
    }
    if result.n_diverged > 0 {
        eprintln!("{} of {} paths diverged", result.n_diverged, result.n_paths);
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long, value_enum)]
    preset: PresetArg,
    #[arg(long)]
    mu: f64,
    #[arg(long = "L")]
    ell: f64,
    /// Stepsize for the aybat preset.
    #[arg(long)]
    alpha: Option<f64>,
    /// Check this rate instead of the preset's.
    #[arg(long)]
    rho: Option<f64>,
    /// Isotropic Gaussian noise level for the noise constants.
    #[arg(long)]
    sigma: Option<f64>,
    /// Dimension of the noise for the Gaussian constants.
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Search for P~ when the preset has no explicit certificate.
    #[arg(long)]
    search: bool,
}

fn finite(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn certify(a: CertifyArgs) -> Result<ExitCode> {
    let p = preset(a.preset, a.alpha)?;
    let mut cert = match preset_params(p, a.mu, a.ell) {
        Err(Error::KappaOne) => {
            eprintln!("error: {}", Error::KappaOne);
            return Ok(ExitCode::from(2));
        }
        other => other?,
    };
    if let Some(rho) = a.rho {
        cert = cert.with_rho(rho);
    }
    if a.search && cert.p_tilde.is_none() {
        if matches!(p, Preset::Hb) {
            bail!("the matrix inequality covers the accelerated iteration only");
        }
        cert.p_tilde = Some(search_p_tilde(cert.alpha, cert.beta, cert.mu, cert.ell, cert.rho)?.p_tilde);
    }

    let lmi = match verify_lmi(&cert, LMI_TOL) {
        Ok(v) => Some(v),
        Err(Error::NoCertificate) => None,
        Err(e) => return Err(e.into()),
    };

    let mut constants = serde_json::Map::new();
    if let (Some(sigma), Some(pt)) = (a.sigma, cert.p_tilde.as_ref()) {
        let cov = SymMatrix::identity(a.dim).scale(sigma * sigma);
        let total_sigma = (cov.trace()).sqrt();
        let kappa = cert.kappa();
        let drift = drift_constants(&cert, total_sigma)?;
        constants.insert("K".into(), finite(drift.k.value));
        let eta = 1.0 / kappa.sqrt();
        constants.insert("eta".into(), json!(eta));
        match gaussian_minorization(a.mu, a.ell, &cov) {
            Ok(g) => {
                constants.insert("M".into(), finite(g.m));
                constants.insert("R".into(), finite(g.r));
                let sigma_max = noise_budget(NoiseBudgetInput::Unconstrained {
                    r: g.r,
                    ell: a.ell,
                    kappa,
                })?;
                constants.insert("sigma_max".into(), finite(sigma_max.value));
                constants.insert("noise_ok".into(), json!(total_sigma <= sigma_max.value));
                if drift.k.value > 0.0 {
                    let psi = eta / (2.0 * drift.k.value);
                    constants.insert("psi".into(), finite(psi));
                    match ergodicity_budget(eta, g.r, cert.rho, drift.k.value) {
                        Ok(b) => {
                            constants.insert("eta_bar".into(), finite(b.eta_bar));
                        }
                        Err(Error::Infeasible { slack }) => {
                            constants.insert("eta_bar".into(), Value::Null);
                            constants.insert("ergodicity_slack".into(), finite(slack));
                        }
                        Err(e) => return Err(e.into()),
                    }
                    let c0 = c0_constant(pt, a.mu, psi)?;
                    constants.insert("c0".into(), finite(c0.c0));
                    constants.insert("c_hat0".into(), finite(c0.c_hat0));
                }
            }
            Err(Error::NoiseTooLarge { .. }) => {
                constants.insert("M".into(), Value::Null);
                constants.insert("R".into(), Value::Null);
            }
            Err(e) => return Err(e.into()),
        }
    }

    let report = json!({
        "preset": p.name(),
        "params": {"alpha": cert.alpha, "beta": cert.beta, "mu": cert.mu, "L": cert.ell},
        "rho": cert.rho,
        "p_tilde": cert.p_tilde.as_ref().map(|m| m.as_matrix().to_rows()),
        "lmi_max_eig": lmi.map(|v| finite(v.max_eigenvalue)),
        "feasible": lmi.map(|v| v.feasible),
        "constants": constants,
    });
    emit(format!("{}\n", serde_json::to_string_pretty(&report)?).as_bytes())?;
    Ok(match lmi {
        Some(v) if !v.feasible => ExitCode::from(1),
        _ => ExitCode::SUCCESS,
    })
}

#[derive(Args)]
struct QuadArgs {
    #[arg(long, value_enum, default_value = "ag")]
    preset: PresetArg,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long = "L", default_value_t = 4.0)]
    ell: f64,
    /// Hessian eigenvalues; defaults to {mu, L}.
    #[arg(long)]
    eigenvalues: Option<String>,
    /// Noise covariance is sigma^2 I.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Starting point at rest; defaults to all ones.
    #[arg(long)]
    x0: Option<String>,
}

struct QuadSetup {
    obj: QuadraticObjective,
    cert: momentum_core::CertificatePair,
    sigma: SymMatrix,
    x0: Vec<f64>,
}

impl QuadArgs {
    fn setup(&self) -> Result<QuadSetup> {
        let eigs = match &self.eigenvalues {
            Some(s) => parse_list(s)?,
            None => vec![self.mu, self.ell],
        };
        let d = eigs.len();
        let obj = QuadraticObjective::diagonal(&eigs, vec![0.0; d], 0.0)?;
        let cert = preset_params(preset(self.preset, self.alpha)?, self.mu, self.ell)?;
        let x0 = match &self.x0 {
            Some(s) => parse_list(s)?,
            None => vec![1.0; d],
        };
        if x0.len() != d {
            bail!("--x0 has {} entries, expected {d}", x0.len());
        }
        Ok(QuadSetup {
            obj,
            cert,
            sigma: SymMatrix::identity(d).scale(self.sigma * self.sigma),
            x0,
        })
    }
}

#[derive(Args)]
struct StationaryArgs {
    #[command(flatten)]
    quad: QuadArgs,
}

fn stationary(a: StationaryArgs) -> Result<ExitCode> {
    let s = a.quad.setup()?;
    let params = s.cert.momentum_params();
    let rep = stationary_cov(&s.obj, &params, &s.sigma)?;
    let dense = stationary_cov_dense(&s.obj, &params, &s.sigma)?;
    let v = v_prefactor(
        &s.obj,
        &InitialLaw::Point(StateVec::at_rest(s.x0.clone())),
        params.alpha,
        &s.sigma,
        s.cert.rho,
    )?;
    let report = json!({
        "method": params.method,
        "preset": s.cert.preset.name(),
        "trace_solver": dense.trace(),
        "trace_closed": rep.trace_closed_form,
        "trace_exact_closed_form": rep.trace_exact_closed_form,
        "per_eigenvalue_terms": rep.per_eigenvalue_terms,
        "per_eigenvalue_exact": rep.per_eigenvalue_exact,
        "V_prefactor": v,
    });
    emit(format!("{}\n", serde_json::to_string_pretty(&report)?).as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
struct ContractionArgs {
    #[command(flatten)]
    quad: QuadArgs,
    #[arg(long, default_value_t = 100)]
    k_max: usize,
    /// Measure in the Euclidean metric instead of the certificate's.
    #[arg(long)]
    unweighted: bool,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn contraction(a: ContractionArgs) -> Result<ExitCode> {
    let s = a.quad.setup()?;
    let params = s.cert.momentum_params();
    let weight = match (&s.cert.p_tilde, a.unweighted) {
        (Some(p), false) => Some(build_weighted_norm(p, &s.obj)?),
        _ => None,
    };
    let start = GaussianMeasure::dirac(StateVec::at_rest(s.x0.clone()).stacked());
    let curve = contraction_curve(&s.obj, &params, &s.sigma, &start, a.k_max, weight.as_ref())?;
    let mut csv = String::from("k,w2_sq,rho_pow_k,ratio\n");
    for p in &curve.points {
        csv.push_str(&format!("{},{},{},{}\n", p.k, p.w2_sq, p.rho_pow_k, p.ratio));
    }
    match &a.out {
        Some(path) => momentum_core::harness::write_atomic(path, csv.as_bytes())?,
        None => emit(csv.as_bytes())?,
    }
    eprintln!(
        "max ratio {:.12} (squared bound {}), unsquared bound held: {}",
        curve.max_ratio,
        if curve.max_ratio <= 1.0 + 1e-9 {
            "holds"
        } else {
            "violated"
        },
        curve.unsquared_holds
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Clone, Copy, ValueEnum)]
enum PanelArg {
    Left,
    Middle,
    Right,
    All,
}

#[derive(Args)]
struct Figure1Args {
    #[arg(long, value_enum, default_value = "all")]
    panel: PanelArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = momentum_core::harness::FIGURE1_PATHS)]
    paths: usize,
    #[command(flatten)]
    threads: ThreadArgs,
}

fn figure1(a: Figure1Args) -> Result<ExitCode> {
    let panels = match a.panel {
        PanelArg::Left => vec![Panel::Left],
        PanelArg::Middle => vec![Panel::Middle],
        PanelArg::Right => vec![Panel::Right],
        PanelArg::All => vec![Panel::Left, Panel::Middle, Panel::Right],
    };
    let exec = a.threads.execution()?;
    for panel in panels {
        for (stem, r) in run_figure1(panel, a.seed, a.paths, &a.out, exec)? {
            let last = r.curve.last().map_or(f64::NAN, |row| row.mean_gap);
            eprintln!("{stem}: final mean gap {last:.6e}, diverged {}", r.n_diverged);
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Writes to stdout, treating a closed pipe (`| head`) as success.
fn emit(bytes: &[u8]) -> Result<()> {
    match std::io::stdout().lock().write_all(bytes) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Certify(a) => certify(a),
        Cmd::Stationary(a) => stationary(a),
        Cmd::Contraction(a) => contraction(a),
        Cmd::Figure1(a) => figure1(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
