//! Monte Carlo experiments over many independent noisy paths.
//!
//! Path `i` draws its noise from ChaCha stream `i` under the master seed, and
//! results are reduced in path-index order, so aggregates and written files
//! do not depend on thread count or scheduling.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::certificates::{preset_params, preset_step, Preset};
use crate::engines::{path_rng, simulate_path, Method, MomentumParams, StateVec};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SymMatrix};
use crate::problems::{ConstraintSet, NoiseKind, NoiseOracle, Objective, ObjectiveSpec};
use crate::stats::{mean_se, quantile_sorted, sort_finite, Histogram};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamSpec {
    Preset(Preset),
    Explicit { alpha: f64, beta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// `N(0, sigma^2 I_d)`.
    IsotropicGaussian {
        sigma: f64,
    },
    Gaussian {
        cov: SymMatrix,
    },
    ScaledRademacher {
        sigma: f64,
    },
    UniformBall {
        sigma: f64,
    },
    None,
}

impl NoiseSpec {
    pub fn build(&self, dim: usize) -> Result<NoiseOracle> {
        match self {
            NoiseSpec::IsotropicGaussian { sigma } => NoiseOracle::isotropic_gaussian(dim, *sigma),
            NoiseSpec::Gaussian { cov } => NoiseOracle::new(NoiseKind::Gaussian { cov: cov.clone() }, dim),
            NoiseSpec::ScaledRademacher { sigma } => {
                NoiseOracle::new(NoiseKind::ScaledRademacher { sigma: *sigma }, dim)
            }
            NoiseSpec::UniformBall { sigma } => {
                NoiseOracle::new(NoiseKind::UniformBall { sigma: *sigma }, dim)
            }
            NoiseSpec::None => Ok(NoiseOracle::zero(dim)),
        }
    }
}

fn default_bins() -> usize {
    50
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub objective: ObjectiveSpec,
    pub method: Method,
    pub params: ParamSpec,
    pub noise: NoiseSpec,
    pub n_paths: usize,
    pub k_max: usize,
    #[serde(default)]
    pub snapshot_ks: Vec<usize>,
    pub master_seed: u64,
    /// Starting point, at rest (`x_{-1} = x_0`). Defaults to all ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<ConstraintSet>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Curve rows are kept for `k` divisible by this (plus `k_max` and snapshots).
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    /// Step at which second moments of `xi - xi*` are estimated; defaults to `k_max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment_k: Option<usize>,
    #[serde(default)]
    pub label: String,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidInput("n_paths must be >= 1".into()));
        }
        if self.record_stride == 0 || self.bins == 0 {
            return Err(Error::InvalidInput("record_stride and bins must be >= 1".into()));
        }
        if let Some(&k) = self.snapshot_ks.iter().find(|&&k| k > self.k_max) {
            return Err(Error::InvalidInput(format!(
                "snapshot k={k} exceeds k_max={}",
                self.k_max
            )));
        }
        if self.moment_k.is_some_and(|k| k > self.k_max) {
            return Err(Error::InvalidInput("moment_k exceeds k_max".into()));
        }
        Ok(())
    }

    fn recorded_ks(&self) -> Vec<usize> {
        let mut ks: Vec<usize> = (0..=self.k_max).step_by(self.record_stride).collect();
        ks.push(self.k_max);
        ks.extend(&self.snapshot_ks);
        ks.sort_unstable();
        ks.dedup();
        ks
    }
}

/// Step parameters for a config. Certificates are attached when `mu < L`.
pub fn resolve_params(method: Method, spec: &ParamSpec, obj: &dyn Objective) -> Result<MomentumParams> {
    match spec {
        ParamSpec::Explicit { alpha, beta } => MomentumParams::new(method, *alpha, *beta),
        ParamSpec::Preset(p) => {
            let step = preset_step(*p, obj.mu(), obj.ell())?;
            let params = MomentumParams::new(method, step.alpha, step.beta)?;
            Ok(match preset_params(*p, obj.mu(), obj.ell()) {
                Ok(c) => params.with_certificate(c.rho, c.p_tilde),
                Err(Error::KappaOne) => params,
                Err(e) => return Err(e),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Serial,
    /// `threads = None` uses the global pool.
    Parallel {
        threads: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub k: usize,
    pub mean_gap: f64,
    pub se_gap: f64,
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
    pub n_alive: usize,
}

/// Entrywise second moment `E[(xi - xi*)(xi - xi*)^T]` with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub k: usize,
    pub n: usize,
    pub second_moment: Matrix,
    pub standard_error: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub k: usize,
    /// `f(x_k) - f*` of surviving paths, in path order.
    pub gaps: Vec<f64>,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateResult {
    pub label: String,
    pub n_paths: usize,
    pub n_diverged: usize,
    pub params: MomentumParams,
    pub curve: Vec<CurveRow>,
    pub snapshots: Vec<Snapshot>,
    pub moments: Option<MomentEstimate>,
}

struct PathOutput {
    /// Gap at each recorded k; NaN after divergence.
    gaps: Vec<f64>,
    /// `xi - xi*` at the moment step.
    deviation: Option<Vec<f64>>,
    diverged: bool,
}

struct Prepared {
    obj: Box<dyn Objective>,
    params: MomentumParams,
    noise: NoiseOracle,
    xi0: StateVec,
    ks: Vec<usize>,
    moment_k: usize,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let obj = cfg.objective.build()?;
    let d = obj.dim();
    let params = resolve_params(cfg.method, &cfg.params, obj.as_ref())?;
    if params.method == Method::Aspg && cfg.constraint.is_none() {
        return Err(Error::InvalidSet(
            "projected method needs a constraint set".into(),
        ));
    }
    if let Some(c) = &cfg.constraint {
        c.validate()?;
        if c.dim() != d {
            return Err(Error::InvalidSet("constraint dimension mismatch".into()));
        }
    }
    let x0 = cfg.x0.clone().unwrap_or_else(|| vec![1.0; d]);
    if x0.len() != d {
        return Err(Error::InvalidInput(format!(
            "x0 has length {}, expected {d}",
            x0.len()
        )));
    }
    Ok(Prepared {
        noise: cfg.noise.build(d)?,
        obj,
        params,
        xi0: StateVec::at_rest(x0),
        ks: cfg.recorded_ks(),
        moment_k: cfg.moment_k.unwrap_or(cfg.k_max),
    })
}

fn run_one(p: &Prepared, cfg: &ExperimentConfig, index: usize) -> PathOutput {
    let mut rng = path_rng(cfg.master_seed, index as u64);
    let f_star = p.obj.f_star();
    let x_star = p.obj.minimizer();
    let mut gaps = vec![f64::NAN; p.ks.len()];
    let mut deviation = None;
    let mut slot = 0;
    let diverged = simulate_path(
        &p.xi0,
        p.obj.as_ref(),
        &p.params,
        &p.noise,
        cfg.constraint.as_ref(),
        cfg.k_max,
        &mut rng,
        |k, xi| {
            if slot < p.ks.len() && p.ks[slot] == k {
                gaps[slot] = p.obj.value(&xi.x_curr) - f_star;
                slot += 1;
            }
            if k == p.moment_k {
                deviation = Some(xi.offset_from(x_star));
            }
        },
    );
    PathOutput {
        gaps,
        deviation,
        diverged: diverged.is_some(),
    }
}

fn run_paths(p: &Prepared, cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<PathOutput>> {
    let serial = || (0..cfg.n_paths).map(|i| run_one(p, cfg, i)).collect();
    match exec {
        Execution::Serial => Ok(serial()),
        #[cfg(feature = "parallel")]
        Execution::Parallel { threads } => {
            use rayon::prelude::*;
            let par = || {
                (0..cfg.n_paths)
                    .into_par_iter()
                    .map(|i| run_one(p, cfg, i))
                    .collect()
            };
            match threads {
                None => Ok(par()),
                Some(n) => rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))
                    .map(|pool| pool.install(par)),
            }
        }
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel { .. } => Ok(serial()),
    }
}

fn moments(outputs: &[PathOutput], k: usize) -> Option<MomentEstimate> {
    let devs: Vec<&Vec<f64>> = outputs.iter().filter_map(|o| o.deviation.as_ref()).collect();
    let n = devs.len();
    if n < 2 {
        return None;
    }
    let m = devs[0].len();
    let mut mean = Matrix::zeros(m, m);
    let mut se = Matrix::zeros(m, m);
    let mut prods = vec![0.0; n];
    for i in 0..m {
        for j in i..m {
            for (p, z) in prods.iter_mut().zip(&devs) {
                *p = z[i] * z[j];
            }
            let (mu, s) = mean_se(&prods);
            mean[(i, j)] = mu;
            mean[(j, i)] = mu;
            se[(i, j)] = s;
            se[(j, i)] = s;
        }
    }
    Some(MomentEstimate {
        k,
        n,
        second_moment: mean,
        standard_error: se,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<AggregateResult> {
    let p = prepare(cfg)?;
    let outputs = run_paths(&p, cfg, exec)?;
    let n_diverged = outputs.iter().filter(|o| o.diverged).count();
    if n_diverged == cfg.n_paths {
        return Err(Error::AllDiverged(n_diverged));
    }

    let mut curve = Vec::with_capacity(p.ks.len());
    let mut snapshots = Vec::new();
    let mut column = Vec::with_capacity(cfg.n_paths);
    for (slot, &k) in p.ks.iter().enumerate() {
        column.clear();
        column.extend(outputs.iter().map(|o| o.gaps[slot]).filter(|g| !g.is_nan()));
        let sorted = sort_finite(&column);
        let (mean_gap, se_gap) = mean_se(&column);
        let q = |t| {
            if sorted.is_empty() {
                f64::NAN
            } else {
                quantile_sorted(&sorted, t)
            }
        };
        curve.push(CurveRow {
            k,
            mean_gap,
            se_gap,
            q05: q(0.05),
            q25: q(0.25),
            q50: q(0.5),
            q75: q(0.75),
            q95: q(0.95),
            n_alive: column.len(),
        });
        if cfg.snapshot_ks.contains(&k) {
            snapshots.push(Snapshot {
                k,
                histogram: Histogram::from_samples(&column, cfg.bins)?,
                gaps: column.clone(),
            });
        }
    }
    Ok(AggregateResult {
        label: cfg.label.clone(),
        n_paths: cfg.n_paths,
        n_diverged,
        params: p.params,
        curve,
        snapshots,
        moments: moments(&outputs, p.moment_k),
    })
}

/// Writes through a sibling temporary file and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn curve_csv(result: &AggregateResult) -> String {
    let mut s = String::from("k,mean_gap,q05,q25,q50,q75,q95,n_alive\n");
    for r in &result.curve {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.k, r.mean_gap, r.q05, r.q25, r.q50, r.q75, r.q95, r.n_alive
        ));
    }
    s
}

pub fn histogram_csv(h: &Histogram) -> String {
    let mut s = String::from("bin_left,bin_right,count\n");
    for (i, c) in h.counts.iter().enumerate() {
        s.push_str(&format!("{},{},{}\n", h.edges[i], h.edges[i + 1], c));
    }
    s
}

#[derive(Serialize)]
struct Summary<'a> {
    label: &'a str,
    n_paths: usize,
    n_diverged: usize,
    params: &'a MomentumParams,
    final_row: Option<&'a CurveRow>,
    moments: Option<&'a MomentEstimate>,
}

/// Writes `{stem}_curve.csv`, `{stem}_hist_k{k}.csv` and `{stem}_summary.json`.
pub fn write_outputs(result: &AggregateResult, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let curve = dir.join(format!("{stem}_curve.csv"));
    write_atomic(&curve, curve_csv(result).as_bytes())?;
    written.push(curve);
    for snap in &result.snapshots {
        let path = dir.join(format!("{stem}_hist_k{}.csv", snap.k));
        write_atomic(&path, histogram_csv(&snap.histogram).as_bytes())?;
        written.push(path);
    }
    let summary = Summary {
        label: &result.label,
        n_paths: result.n_paths,
        n_diverged: result.n_diverged,
        params: &result.params,
        final_row: result.curve.last(),
        moments: result.moments.as_ref(),
    };
    let path = dir.join(format!("{stem}_summary.json"));
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');
    write_atomic(&path, &json)?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Panel {
    Left,
    Middle,
    Right,
}

impl std::str::FromStr for Panel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Panel::Left),
            "middle" => Ok(Panel::Middle),
            "right" => Ok(Panel::Right),
            other => Err(Error::InvalidInput(format!("unknown panel '{other}'"))),
        }
    }
}

pub const FIGURE1_SIGMAS: [f64; 4] = [0.01, 0.1, 1.0, 2.0];
pub const FIGURE1_SNAPSHOTS: [usize; 4] = [5, 25, 125, 625];
pub const FIGURE1_PATHS: usize = 10_000;

/// Canned configurations for the three panels, keyed by output stem.
pub fn figure1_configs(panel: Panel, seed: u64, n_paths: usize) -> Vec<(String, ExperimentConfig)> {
    let base = |eigenvalues: Vec<f64>, sigma: f64, k_max: usize| ExperimentConfig {
        objective: ObjectiveSpec::Quadratic {
            eigenvalues,
            a: Vec::new(),
            b: 0.0,
        },
        method: Method::Ag,
        params: ParamSpec::Preset(Preset::Ag),
        noise: NoiseSpec::IsotropicGaussian { sigma },
        n_paths,
        k_max,
        snapshot_ks: Vec::new(),
        master_seed: seed,
        x0: None,
        constraint: None,
        bins: default_bins(),
        record_stride: 1,
        moment_k: None,
        label: String::new(),
    };
    let diag10: Vec<f64> = (1..=10).map(|i| 1.0 / i as f64).collect();
    match panel {
        Panel::Left | Panel::Middle => FIGURE1_SIGMAS
            .iter()
            .map(|&s| {
                let (name, eig) = match panel {
                    Panel::Left => ("left", vec![1.0]),
                    _ => ("middle", diag10.clone()),
                };
                let mut cfg = base(eig, s, 1000);
                cfg.label = format!("{name} sigma={s}");
                (format!("{name}_sigma{s}"), cfg)
            })
            .collect(),
        Panel::Right => {
            let mut cfg = base(diag10, 1.0, 625);
            cfg.snapshot_ks = FIGURE1_SNAPSHOTS.to_vec();
            cfg.label = "right sigma=1".into();
            vec![("right".into(), cfg)]
        }
    }
}

pub fn run_figure1(
    panel: Panel,
    seed: u64,
    n_paths: usize,
    out: &Path,
    exec: Execution,
) -> Result<Vec<(String, AggregateResult)>> {
    let mut results = Vec::new();
    for (stem, cfg) in figure1_configs(panel, seed, n_paths) {
        let r = run_experiment(&cfg, exec)?;
        write_outputs(&r, out, &stem)?;
        results.push((stem, r));
    }
    Ok(results)
}
