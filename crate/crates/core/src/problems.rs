//! Test objectives, additive gradient-noise oracles and projection sets.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, norm2, sym_eig, Matrix, Spectrum, SymMatrix};

/// A smooth strongly convex objective with known moduli and minimiser.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Strong convexity modulus.
    fn mu(&self) -> f64;
    /// Smoothness constant.
    fn ell(&self) -> f64;
    fn minimizer(&self) -> &[f64];
    fn f_star(&self) -> f64;

    fn kappa(&self) -> f64 {
        self.ell() / self.mu()
    }

    fn as_quadratic(&self) -> Option<&QuadraticObjective> {
        None
    }
}

/// `f(x) = 1/2 x^T Q x + a^T x + b` with `Q` held as its spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    spectrum: Spectrum,
    a: Vec<f64>,
    b: f64,
    minimizer: Vec<f64>,
    f_star: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub minimizer: Vec<f64>,
    pub f_star: f64,
}

impl QuadraticObjective {
    pub fn from_spectrum(spectrum: Spectrum, a: Vec<f64>, b: f64) -> Result<Self> {
        let d = spectrum.dim();
        if d == 0 {
            return Err(Error::InvalidInput("quadratic needs dim >= 1".into()));
        }
        if a.len() != d {
            return Err(Error::InvalidInput(format!(
                "linear term has length {}, expected {d}",
                a.len()
            )));
        }
        if !(spectrum.min() > 0.0) || spectrum.eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "Q must be positive definite with finite eigenvalues".into(),
            ));
        }
        let mut obj = Self {
            spectrum,
            a,
            b,
            minimizer: Vec::new(),
            f_star: 0.0,
        };
        let neg_a: Vec<f64> = obj.a.iter().map(|v| -v).collect();
        obj.minimizer = obj.apply_fn(&neg_a, |l| 1.0 / l);
        obj.f_star = obj.value(&obj.minimizer);
        Ok(obj)
    }

    /// Diagonal `Q`.
    pub fn diagonal(eigenvalues: &[f64], a: Vec<f64>, b: f64) -> Result<Self> {
        let d = eigenvalues.len();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| eigenvalues[i].total_cmp(&eigenvalues[j]));
        let mut v = Matrix::zeros(d, d);
        for (col, &i) in order.iter().enumerate() {
            v[(i, col)] = 1.0;
        }
        let spectrum = Spectrum {
            eigenvalues: order.iter().map(|&i| eigenvalues[i]).collect(),
            eigenvectors: v,
        };
        Self::from_spectrum(spectrum, a, b)
    }

    pub fn from_matrix(q: &SymMatrix, a: Vec<f64>, b: f64) -> Result<Self> {
        Self::from_spectrum(sym_eig(q)?, a, b)
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.spectrum.eigenvalues
    }

    pub fn linear_term(&self) -> &[f64] {
        &self.a
    }

    pub fn constant(&self) -> f64 {
        self.b
    }

    pub fn hessian(&self) -> SymMatrix {
        self.spectrum.reconstruct()
    }

    /// `V diag(g(lambda)) V^T x`.
    pub fn apply_fn(&self, x: &[f64], g: impl Fn(f64) -> f64) -> Vec<f64> {
        let v = &self.spectrum.eigenvectors;
        let d = self.spectrum.dim();
        let mut coeffs = vec![0.0; d];
        for (k, c) in coeffs.iter_mut().enumerate() {
            let proj: f64 = (0..d).map(|i| v[(i, k)] * x[i]).sum();
            *c = g(self.spectrum.eigenvalues[k]) * proj;
        }
        (0..d)
            .map(|i| (0..d).map(|k| v[(i, k)] * coeffs[k]).sum())
            .collect()
    }

    pub fn hessian_times(&self, x: &[f64]) -> Vec<f64> {
        self.apply_fn(x, |l| l)
    }

    pub fn eval(&self, x: &[f64]) -> QuadraticEval {
        QuadraticEval {
            value: self.value(x),
            gradient: self.gradient(x),
            minimizer: self.minimizer.clone(),
            f_star: self.f_star,
        }
    }
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.spectrum.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let qx = self.hessian_times(x);
        0.5 * linalg::dot(x, &qx) + linalg::dot(&self.a, x) + self.b
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.hessian_times(x);
        for (gi, ai) in g.iter_mut().zip(&self.a) {
            *gi += ai;
        }
        g
    }

    fn mu(&self) -> f64 {
        self.spectrum.min()
    }

    fn ell(&self) -> f64 {
        self.spectrum.max()
    }

    fn minimizer(&self) -> &[f64] {
        &self.minimizer
    }

    fn f_star(&self) -> f64 {
        self.f_star
    }

    fn as_quadratic(&self) -> Option<&QuadraticObjective> {
        Some(self)
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `f(x) = mu/2 ||x||^2 + sum_i softplus(a_i^T x)`, a non-quadratic member of
/// the strongly convex smooth class with `L = mu + ||A^T A|| / 4`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftplusObjective {
    dim: usize,
    mu: f64,
    rows: Vec<Vec<f64>>,
    ell: f64,
    minimizer: Vec<f64>,
    f_star: f64,
}

pub fn make_test_objective(dim: usize, mu: f64, rows: Vec<Vec<f64>>) -> Result<SoftplusObjective> {
    if !(mu > 0.0) {
        return Err(Error::InvalidInput("mu must be positive".into()));
    }
    if dim == 0 {
        return Err(Error::InvalidInput("dim must be >= 1".into()));
    }
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::InvalidInput("data rows must have length dim".into()));
    }
    let mut ata = Matrix::zeros(dim, dim);
    for r in &rows {
        for i in 0..dim {
            for j in 0..dim {
                ata[(i, j)] += r[i] * r[j];
            }
        }
    }
    let ata_norm = SymMatrix::from_matrix_symmetrized(&ata).norm();
    let mut obj = SoftplusObjective {
        dim,
        mu,
        rows,
        ell: mu + ata_norm / 4.0,
        minimizer: vec![0.0; dim],
        f_star: 0.0,
    };
    obj.minimizer = obj.newton_minimize()?;
    obj.f_star = obj.value(&obj.minimizer);
    Ok(obj)
}

impl SoftplusObjective {
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    fn hessian(&self, x: &[f64]) -> Matrix {
        let mut h = Matrix::identity(self.dim).scale(self.mu);
        for r in &self.rows {
            let s = sigmoid(linalg::dot(r, x));
            let w = s * (1.0 - s);
            for i in 0..self.dim {
                for j in 0..self.dim {
                    h[(i, j)] += w * r[i] * r[j];
                }
            }
        }
        h
    }

    fn newton_minimize(&self) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.dim];
        for _ in 0..200 {
            let g = self.gradient(&x);
            if norm2(&g) <= 1e-14 * (1.0 + self.ell) {
                break;
            }
            let step = linalg::solve_linear(&self.hessian(&x), &g)?;
            let f0 = self.value(&x);
            let slope = linalg::dot(&g, &step);
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a - t * s).collect();
                if self.value(&trial) <= f0 - 1e-4 * t * slope || t < 1e-12 {
                    x = trial;
                    break;
                }
                t *= 0.5;
            }
        }
        Ok(x)
    }
}

impl Objective for SoftplusObjective {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.mu * linalg::dot(x, x) + self.rows.iter().map(|r| softplus(linalg::dot(r, x))).sum::<f64>()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = x.iter().map(|v| self.mu * v).collect();
        for r in &self.rows {
            let s = sigmoid(linalg::dot(r, x));
            for (gi, ri) in g.iter_mut().zip(r) {
                *gi += s * ri;
            }
        }
        g
    }

    fn mu(&self) -> f64 {
        self.mu
    }

    fn ell(&self) -> f64 {
        self.ell
    }

    fn minimizer(&self) -> &[f64] {
        &self.minimizer
    }

    fn f_star(&self) -> f64 {
        self.f_star
    }
}

/// JSON description of an objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ObjectiveSpec {
    Quadratic {
        eigenvalues: Vec<f64>,
        #[serde(default)]
        a: Vec<f64>,
        #[serde(default)]
        b: f64,
    },
    Softplus {
        mu: f64,
        rows: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dim: Option<usize>,
    },
}

impl ObjectiveSpec {
    pub fn build(&self) -> Result<Box<dyn Objective>> {
        Ok(match self {
            ObjectiveSpec::Quadratic { eigenvalues, a, b } => {
                let a = if a.is_empty() {
                    vec![0.0; eigenvalues.len()]
                } else {
                    a.clone()
                };
                Box::new(QuadraticObjective::diagonal(eigenvalues, a, *b)?)
            }
            ObjectiveSpec::Softplus { mu, rows, dim } => {
                let dim = dim
                    .or_else(|| rows.first().map(Vec::len))
                    .ok_or_else(|| Error::InvalidInput("softplus needs dim or rows".into()))?;
                Box::new(make_test_objective(dim, *mu, rows.clone())?)
            }
        })
    }

    pub fn build_quadratic(&self) -> Result<QuadraticObjective> {
        match self {
            ObjectiveSpec::Quadratic { eigenvalues, a, b } => {
                let a = if a.is_empty() {
                    vec![0.0; eigenvalues.len()]
                } else {
                    a.clone()
                };
                QuadraticObjective::diagonal(eigenvalues, a, *b)
            }
            ObjectiveSpec::Softplus { .. } => {
                Err(Error::Unsupported("a quadratic objective is required".into()))
            }
        }
    }
}

/// Law of the additive gradient noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian { cov: SymMatrix },
    ScaledRademacher { sigma: f64 },
    UniformBall { sigma: f64 },
}

/// I.i.d. zero-mean noise with `E||eps||^2 = sigma_sq`.
#[derive(Debug, Clone)]
pub struct NoiseOracle {
    kind: NoiseKind,
    dim: usize,
    sigma_sq: f64,
    cov_sqrt: Option<Matrix>,
}

impl NoiseOracle {
    pub fn new(kind: NoiseKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("noise dim must be >= 1".into()));
        }
        let (sigma_sq, cov_sqrt) = match &kind {
            NoiseKind::Gaussian { cov } => {
                if cov.dim() != dim {
                    return Err(Error::InvalidInput("covariance dim mismatch".into()));
                }
                let root = linalg::psd_sqrt(cov)?;
                let zero = root.as_matrix().max_abs() == 0.0;
                (cov.trace(), (!zero).then(|| root.into_matrix()))
            }
            NoiseKind::ScaledRademacher { sigma } | NoiseKind::UniformBall { sigma } => {
                if !(*sigma >= 0.0) {
                    return Err(Error::InvalidInput("sigma must be >= 0".into()));
                }
                (sigma * sigma, None)
            }
        };
        Ok(Self {
            kind,
            dim,
            sigma_sq,
            cov_sqrt,
        })
    }

    pub fn gaussian(cov: SymMatrix) -> Result<Self> {
        let d = cov.dim();
        Self::new(NoiseKind::Gaussian { cov }, d)
    }

    /// `N(0, sigma^2 I_d)`.
    pub fn isotropic_gaussian(dim: usize, sigma: f64) -> Result<Self> {
        Self::gaussian(SymMatrix::identity(dim).scale(sigma * sigma))
    }

    pub fn zero(dim: usize) -> Self {
        Self::gaussian(SymMatrix::zeros(dim)).expect("zero covariance is PSD")
    }

    pub fn kind(&self) -> &NoiseKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Declared bound on `E||eps||^2`.
    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn is_zero(&self) -> bool {
        match &self.kind {
            NoiseKind::Gaussian { .. } => self.cov_sqrt.is_none(),
            NoiseKind::ScaledRademacher { sigma } | NoiseKind::UniformBall { sigma } => *sigma == 0.0,
        }
    }

    /// Covariance `E[eps eps^T]`.
    pub fn covariance(&self) -> SymMatrix {
        match &self.kind {
            NoiseKind::Gaussian { cov } => cov.clone(),
            NoiseKind::ScaledRademacher { sigma } | NoiseKind::UniformBall { sigma } => {
                SymMatrix::identity(self.dim).scale(sigma * sigma / self.dim as f64)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.sample_into(rng, &mut out);
        out
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        match &self.kind {
            NoiseKind::Gaussian { .. } => match &self.cov_sqrt {
                None => out.fill(0.0),
                Some(root) => {
                    let z: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(rng)).collect();
                    for (i, o) in out.iter_mut().enumerate() {
                        *o = (0..self.dim).map(|j| root[(i, j)] * z[j]).sum();
                    }
                }
            },
            NoiseKind::ScaledRademacher { sigma } => {
                let s = sigma / (self.dim as f64).sqrt();
                for o in out.iter_mut() {
                    *o = if rng.random::<bool>() { s } else { -s };
                }
            }
            NoiseKind::UniformBall { sigma } => {
                let d = self.dim as f64;
                let radius = sigma * ((d + 2.0) / d).sqrt();
                let z: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(rng)).collect();
                let nz = norm2(&z);
                let u: f64 = rng.random();
                let r = radius * u.powf(1.0 / d);
                for (o, zi) in out.iter_mut().zip(&z) {
                    *o = if nz > 0.0 { r * zi / nz } else { 0.0 };
                }
            }
        }
    }
}

/// Compact convex set with a closed-form Euclidean projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintSet {
    EuclideanBall { center: Vec<f64>, radius: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl ConstraintSet {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        let s = ConstraintSet::EuclideanBall { center, radius };
        s.validate()?;
        Ok(s)
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let s = ConstraintSet::Box { lower, upper };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ConstraintSet::EuclideanBall { center, radius } => {
                if !(*radius > 0.0) || center.is_empty() {
                    return Err(Error::InvalidSet(format!(
                        "ball radius {radius} must be positive"
                    )));
                }
            }
            ConstraintSet::Box { lower, upper } => {
                if lower.len() != upper.len() || lower.is_empty() {
                    return Err(Error::InvalidSet(
                        "box bounds must have equal nonzero length".into(),
                    ));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                    return Err(Error::InvalidSet("box needs lower <= upper".into()));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            ConstraintSet::EuclideanBall { center, .. } => center.len(),
            ConstraintSet::Box { lower, .. } => lower.len(),
        }
    }

    /// Diameter `D_C`.
    pub fn diameter(&self) -> f64 {
        match self {
            ConstraintSet::EuclideanBall { radius, .. } => 2.0 * radius,
            ConstraintSet::Box { lower, upper } => {
                let diff: Vec<f64> = upper.iter().zip(lower).map(|(u, l)| u - l).collect();
                norm2(&diff)
            }
        }
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        if x.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "point has dim {}, set has dim {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(self.project_unchecked(x))
    }

    pub(crate) fn project_unchecked(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ConstraintSet::EuclideanBall { center, radius } => {
                let diff: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
                let n = norm2(&diff);
                if n <= *radius {
                    x.to_vec()
                } else {
                    center
                        .iter()
                        .zip(&diff)
                        .map(|(c, d)| c + d * (radius / n))
                        .collect()
                }
            }
            ConstraintSet::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (l, u))| v.clamp(*l, *u))
                .collect(),
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self {
            ConstraintSet::EuclideanBall { center, radius } => {
                let diff: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
                norm2(&diff) <= radius + tol
            }
            ConstraintSet::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol),
        }
    }

    /// Largest distance from `p` to any point of the set.
    pub fn max_distance_from(&self, p: &[f64]) -> f64 {
        match self {
            ConstraintSet::EuclideanBall { center, radius } => {
                let diff: Vec<f64> = p.iter().zip(center).map(|(a, c)| a - c).collect();
                norm2(&diff) + radius
            }
            // the farthest corner picks the farther bound coordinate-wise
            ConstraintSet::Box { lower, upper } => p
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(pi, (l, u))| (pi - l).abs().max((u - pi).abs()).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

/// Certified upper bound on `G_M = max_{x in C} ||Q x + a||`, using
/// `||Q (x - x*)|| <= L ||x - x*||`.
pub fn grad_sup_bound(obj: &QuadraticObjective, set: &ConstraintSet) -> Result<f64> {
    if set.dim() != obj.dim() {
        return Err(Error::InvalidInput("set and objective dims differ".into()));
    }
    Ok(obj.ell() * set.max_distance_from(obj.minimizer()))
}
