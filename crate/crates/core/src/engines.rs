//! Gradient descent, heavy ball, Nesterov's accelerated gradient and its
//! projected variant, with additive gradient noise.
//!
//! All methods are written on the stacked state `xi_k = (x_k, x_{k-1})`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm2, Matrix, SymMatrix};
use crate::problems::{ConstraintSet, NoiseOracle, Objective, QuadraticObjective};

/// Paths whose iterate norm exceeds this are treated as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gd,
    Hb,
    Ag,
    Aspg,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Gd => "gd",
            Method::Hb => "hb",
            Method::Ag => "ag",
            Method::Aspg => "aspg",
        })
    }
}

/// `(x_k, x_{k-1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVec {
    pub x_curr: Vec<f64>,
    pub x_prev: Vec<f64>,
}

impl StateVec {
    pub fn new(x_curr: Vec<f64>, x_prev: Vec<f64>) -> Result<Self> {
        if x_curr.len() != x_prev.len() || x_curr.is_empty() {
            return Err(Error::InvalidInput(
                "state halves must have equal nonzero length".into(),
            ));
        }
        Ok(Self { x_curr, x_prev })
    }

    /// `x_0 = x_{-1} = x`.
    pub fn at_rest(x: Vec<f64>) -> Self {
        Self {
            x_prev: x.clone(),
            x_curr: x,
        }
    }

    pub fn from_stacked(xi: &[f64]) -> Result<Self> {
        if !xi.len().is_multiple_of(2) || xi.is_empty() {
            return Err(Error::InvalidInput("stacked state must have even length".into()));
        }
        let d = xi.len() / 2;
        Ok(Self {
            x_curr: xi[..d].to_vec(),
            x_prev: xi[d..].to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.x_curr.len()
    }

    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.x_curr.clone();
        v.extend_from_slice(&self.x_prev);
        v
    }

    /// `xi - (x*, x*)`.
    pub fn offset_from(&self, x_star: &[f64]) -> Vec<f64> {
        self.x_curr
            .iter()
            .chain(&self.x_prev)
            .zip(x_star.iter().chain(x_star))
            .map(|(a, b)| a - b)
            .collect()
    }
}

/// A `(rho, P~)` pair certifying a rate for given step parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certified {
    pub rho: f64,
    pub p_tilde: Option<SymMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumParams {
    pub alpha: f64,
    pub beta: f64,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certified: Option<Certified>,
}

impl MomentumParams {
    pub fn new(method: Method, alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidInput(format!(
                "stepsize must be positive, got {alpha}"
            )));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::InvalidInput(format!("momentum must be >= 0, got {beta}")));
        }
        if method == Method::Gd && beta != 0.0 {
            return Err(Error::InvalidInput("gradient descent has zero momentum".into()));
        }
        Ok(Self {
            alpha,
            beta,
            method,
            certified: None,
        })
    }

    pub fn with_certificate(mut self, rho: f64, p_tilde: Option<SymMatrix>) -> Self {
        self.certified = Some(Certified { rho, p_tilde });
        self
    }
}

/// One iteration with gradient noise `eps` (pass zeros for the deterministic method).
pub fn step(
    xi: &StateVec,
    obj: &dyn Objective,
    params: &MomentumParams,
    eps: &[f64],
    set: Option<&ConstraintSet>,
) -> Result<StateVec> {
    let d = obj.dim();
    if xi.x_curr.len() != d || xi.x_prev.len() != d || eps.len() != d {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: objective {d}, state {}/{}, noise {}",
            xi.x_curr.len(),
            xi.x_prev.len(),
            eps.len()
        )));
    }
    if params.method == Method::Aspg {
        let set = set.ok_or_else(|| Error::InvalidInput("projected method needs a set".into()))?;
        set.validate()?;
        if set.dim() != d {
            return Err(Error::InvalidInput("set dimension mismatch".into()));
        }
    }
    Ok(step_unchecked(xi, obj, params, eps, set))
}

fn step_unchecked(
    xi: &StateVec,
    obj: &dyn Objective,
    params: &MomentumParams,
    eps: &[f64],
    set: Option<&ConstraintSet>,
) -> StateVec {
    let (a, b) = (params.alpha, params.beta);
    let x = &xi.x_curr;
    let xp = &xi.x_prev;
    let next: Vec<f64> = match params.method {
        Method::Gd | Method::Hb => {
            let g = obj.gradient(x);
            (0..x.len())
                .map(|i| x[i] - a * (g[i] + eps[i]) + b * (x[i] - xp[i]))
                .collect()
        }
        Method::Ag | Method::Aspg => {
            let y: Vec<f64> = x.iter().zip(xp).map(|(c, p)| (1.0 + b) * c - b * p).collect();
            let g = obj.gradient(&y);
            let z: Vec<f64> = (0..y.len()).map(|i| y[i] - a * (g[i] + eps[i])).collect();
            match (params.method, set) {
                (Method::Aspg, Some(s)) => s.project_unchecked(&z),
                _ => z,
            }
        }
    };
    StateVec {
        x_prev: x.clone(),
        x_curr: next,
    }
}

/// Generator for path `path_index` of a run seeded with `master_seed`.
/// ChaCha is counter based; the stream id keeps paths independent of each
/// other and of execution order.
pub fn path_rng(master_seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path_index);
    rng
}

/// Runs one path, calling `observe(k, state)` for `k = 0..=k_max`.
/// Returns the step at which the path diverged, if it did.
#[allow(clippy::too_many_arguments)]
pub(crate) fn simulate_path<R: Rng + ?Sized>(
    xi0: &StateVec,
    obj: &dyn Objective,
    params: &MomentumParams,
    noise: &NoiseOracle,
    set: Option<&ConstraintSet>,
    k_max: usize,
    rng: &mut R,
    mut observe: impl FnMut(usize, &StateVec),
) -> Option<usize> {
    let mut xi = xi0.clone();
    let mut eps = vec![0.0; obj.dim()];
    observe(0, &xi);
    for k in 1..=k_max {
        noise.sample_into(rng, &mut eps);
        xi = step_unchecked(&xi, obj, params, &eps, set);
        let n = norm2(&xi.x_curr);
        if !n.is_finite() || n > DIVERGENCE_THRESHOLD {
            return Some(k);
        }
        observe(k, &xi);
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub states: Vec<StateVec>,
    /// `f(x_k) - f*`.
    pub subopt: Vec<f64>,
    /// `||x_k - x*||`.
    pub dist: Vec<f64>,
    pub seed: u64,
    pub params: MomentumParams,
    pub objective_id: String,
}

impl TrajectoryRecord {
    /// Columns `k,f_gap,x_norm_gap`, plus `x_0..x_{d-1}` when `raw` is set.
    pub fn write_csv<W: Write>(&self, mut w: W, raw: bool) -> Result<()> {
        write!(w, "k,f_gap,x_norm_gap")?;
        if raw {
            for i in 0..self.states.first().map_or(0, StateVec::dim) {
                write!(w, ",x_{i}")?;
            }
        }
        writeln!(w)?;
        for (k, state) in self.states.iter().enumerate() {
            write!(w, "{k},{},{}", self.subopt[k], self.dist[k])?;
            if raw {
                for v in &state.x_curr {
                    write!(w, ",{v}")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run_path(
    xi0: &StateVec,
    obj: &dyn Objective,
    params: &MomentumParams,
    noise: &NoiseOracle,
    set: Option<&ConstraintSet>,
    k_max: usize,
    seed: u64,
    objective_id: &str,
) -> Result<TrajectoryRecord> {
    if xi0.dim() != obj.dim() || noise.dim() != obj.dim() {
        return Err(Error::InvalidInput("dimension mismatch".into()));
    }
    if params.method == Method::Aspg {
        step(xi0, obj, params, &vec![0.0; obj.dim()], set)?;
    }
    let x_star = obj.minimizer().to_vec();
    let f_star = obj.f_star();
    let mut rec = TrajectoryRecord {
        states: Vec::with_capacity(k_max + 1),
        subopt: Vec::with_capacity(k_max + 1),
        dist: Vec::with_capacity(k_max + 1),
        seed,
        params: params.clone(),
        objective_id: objective_id.to_string(),
    };
    let mut rng = path_rng(seed, 0);
    let diverged = simulate_path(xi0, obj, params, noise, set, k_max, &mut rng, |_, s| {
        rec.subopt.push(obj.value(&s.x_curr) - f_star);
        let diff: Vec<f64> = s.x_curr.iter().zip(&x_star).map(|(a, b)| a - b).collect();
        rec.dist.push(norm2(&diff));
        rec.states.push(s.clone());
    });
    match diverged {
        Some(k) => Err(Error::Diverged { k }),
        None => Ok(rec),
    }
}

/// Linear map `A_Q` with `xi_{k+1} - xi* = A_Q (xi_k - xi*) + (-alpha eps; 0)`,
/// plus its per-eigenvalue 2x2 blocks `T_i` in ascending eigenvalue order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub full: Matrix,
    pub blocks: Vec<Matrix>,
}

/// Block `T` for one Hessian eigenvalue.
pub fn closed_loop_block(method: Method, lambda: f64, alpha: f64, beta: f64) -> Result<Matrix> {
    let (t11, t12) = match method {
        Method::Gd => (1.0 - alpha * lambda, 0.0),
        Method::Hb => (1.0 + beta - alpha * lambda, -beta),
        Method::Ag => {
            let h = 1.0 - alpha * lambda;
            ((1.0 + beta) * h, -beta * h)
        }
        Method::Aspg => {
            return Err(Error::Unsupported(
                "projected iterations have no linear closed-loop form".into(),
            ))
        }
    };
    Matrix::from_vec(2, 2, vec![t11, t12, 1.0, 0.0])
}

pub fn closed_loop_matrix(obj: &QuadraticObjective, params: &MomentumParams) -> Result<ClosedLoop> {
    let d = obj.dim();
    let blocks = obj
        .eigenvalues()
        .iter()
        .map(|&l| closed_loop_block(params.method, l, params.alpha, params.beta))
        .collect::<Result<Vec<_>>>()?;

    let (a, b) = (params.alpha, params.beta);
    let q = obj.hessian();
    let id = Matrix::identity(d);
    // top-left and top-right blocks as affine functions of Q
    let (tl, tr) = match params.method {
        Method::Gd => (&id - &q.as_matrix().scale(a), Matrix::zeros(d, d)),
        Method::Hb => (&id.scale(1.0 + b) - &q.as_matrix().scale(a), id.scale(-b)),
        Method::Ag => {
            let h = &id - &q.as_matrix().scale(a);
            (h.scale(1.0 + b), h.scale(-b))
        }
        Method::Aspg => unreachable!("rejected above"),
    };
    let mut full = Matrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            full[(i, j)] = tl[(i, j)];
            full[(i, d + j)] = tr[(i, j)];
        }
        full[(d + i, i)] = 1.0;
    }
    Ok(ClosedLoop { full, blocks })
}
