//! Rate certificates and explicit constants for stochastic momentum methods.
//!
//! The 3x3 dissipation inequality for Nesterov-type iterations is assembled
//! from `(alpha, beta, mu, L, rho, P~)` and checked by eigenvalues. The
//! remaining functions evaluate closed-form constants: transient prefactors
//! for heavy ball and the accelerated `AG*` tuning, drift and ergodicity
//! budgets, Gaussian minorization radii, admissible noise levels, constants
//! for the projected method, and the regularization plan for weakly convex
//! problems.
//!
//! Each scalar constant carries a short `source` string with the formula it
//! evaluates, so reports stay auditable.

use serde::{Deserialize, Serialize};

use crate::engines::{Method, MomentumParams};
use crate::error::{Error, Result};
use crate::linalg::{max_eig_and_psd, Matrix, SymMatrix};

/// Default feasibility tolerance for the matrix inequality.
pub const LMI_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Constant {
    pub value: f64,
    pub source: &'static str,
}

impl Constant {
    fn new(value: f64, source: &'static str) -> Self {
        Self { value, source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "preset")]
pub enum Preset {
    /// `alpha = 1/L`, `beta = (sqrt(k)-1)/(sqrt(k)+1)`, rate `1 - 1/sqrt(k)`.
    Ag,
    /// `alpha = 4/(3L+mu)`, asymptotic rate `1 - 2/sqrt(3k+1)`.
    AgStar,
    /// Polyak's heavy ball tuning, rate `(sqrt(k)-1)/(sqrt(k)+1)`.
    Hb,
    /// Any `alpha in (0, 1/L]` with `beta = (1-sqrt(alpha mu))/(1+sqrt(alpha mu))`.
    Aybat { alpha: f64 },
}

impl Preset {
    pub fn method(&self) -> Method {
        match self {
            Preset::Hb => Method::Hb,
            _ => Method::Ag,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Ag => "ag",
            Preset::AgStar => "ag_star",
            Preset::Hb => "hb",
            Preset::Aybat { .. } => "aybat",
        }
    }
}

/// Step parameters with their certified rate and (when available) `P~`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificatePair {
    pub preset: Preset,
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub p_tilde: Option<SymMatrix>,
    pub mu: f64,
    pub ell: f64,
}

impl CertificatePair {
    pub fn kappa(&self) -> f64 {
        self.ell / self.mu
    }

    pub fn momentum_params(&self) -> MomentumParams {
        MomentumParams::new(self.preset.method(), self.alpha, self.beta)
            .expect("preset parameters are valid")
            .with_certificate(self.rho, self.p_tilde.clone())
    }

    /// Replace the rate, keeping step parameters and `P~`.
    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }
}

fn check_moduli(mu: f64, ell: f64) -> Result<()> {
    if !(mu > 0.0) || !(ell >= mu) || !ell.is_finite() {
        return Err(Error::InvalidInput(format!(
            "need 0 < mu <= L, got mu={mu}, L={ell}"
        )));
    }
    if mu == ell {
        return Err(Error::KappaOne);
    }
    Ok(())
}

/// `P~_AG = u u^T` with `u = (sqrt(L/2), sqrt(mu/2) - sqrt(L/2))`.
pub fn p_tilde_ag(mu: f64, ell: f64) -> SymMatrix {
    let u = [(ell / 2.0).sqrt(), (mu / 2.0).sqrt() - (ell / 2.0).sqrt()];
    SymMatrix::outer(&u, 1.0)
}

/// Step parameters of a preset. Unlike [`preset_params`] this accepts
/// `mu == L`, which is fine for simulation.
pub fn preset_step(preset: Preset, mu: f64, ell: f64) -> Result<MomentumParams> {
    if !(mu > 0.0) || !(ell >= mu) {
        return Err(Error::InvalidInput(format!(
            "need 0 < mu <= L, got mu={mu}, L={ell}"
        )));
    }
    let sk = (ell / mu).sqrt();
    let (alpha, beta) = match preset {
        Preset::Ag => (1.0 / ell, (sk - 1.0) / (sk + 1.0)),
        Preset::AgStar => {
            let s = (3.0 * ell / mu + 1.0).sqrt();
            (4.0 / (3.0 * ell + mu), (s - 2.0) / (s + 2.0))
        }
        Preset::Hb => {
            let r = (sk - 1.0) / (sk + 1.0);
            (4.0 / (mu.sqrt() + ell.sqrt()).powi(2), r * r)
        }
        Preset::Aybat { alpha } => {
            check_aybat_alpha(alpha, ell)?;
            let s = (alpha * mu).sqrt();
            (alpha, (1.0 - s) / (1.0 + s))
        }
    };
    MomentumParams::new(preset.method(), alpha, beta)
}

fn check_aybat_alpha(alpha: f64, ell: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0 / ell) {
        return Err(Error::OutOfDomain(format!("stepsize {alpha} outside (0, 1/L]")));
    }
    Ok(())
}

pub fn preset_params(preset: Preset, mu: f64, ell: f64) -> Result<CertificatePair> {
    check_moduli(mu, ell)?;
    let step = preset_step(preset, mu, ell)?;
    let kappa = ell / mu;
    let (rho, p_tilde) = match preset {
        Preset::Ag => (1.0 - 1.0 / kappa.sqrt(), Some(p_tilde_ag(mu, ell))),
        Preset::AgStar => (1.0 - 2.0 / (3.0 * kappa + 1.0).sqrt(), None),
        Preset::Hb => ((kappa.sqrt() - 1.0) / (kappa.sqrt() + 1.0), None),
        Preset::Aybat { alpha } => (1.0 - (alpha * mu).sqrt(), None),
    };
    Ok(CertificatePair {
        preset,
        alpha: step.alpha,
        beta: step.beta,
        rho,
        p_tilde,
        mu,
        ell,
    })
}

/// The two 3x3 multiplier matrices whose `rho`-convex combination enters the inequality.
pub fn multiplier_matrices(alpha: f64, beta: f64, mu: f64, ell: f64) -> (SymMatrix, SymMatrix) {
    let c = alpha * (2.0 - ell * alpha);
    let b2 = beta * beta * mu;
    let bp = 1.0 + beta;
    let x1 = [[b2, -b2, -beta], [-b2, b2, beta], [-beta, beta, c]];
    let x2 = [
        [bp * bp * mu, -beta * bp * mu, -bp],
        [-beta * bp * mu, b2, beta],
        [-bp, beta, c],
    ];
    let lift = |m: [[f64; 3]; 3]| {
        SymMatrix::new(Matrix::from_vec(3, 3, m.iter().flatten().map(|v| 0.5 * v).collect()).unwrap())
            .expect("multiplier matrices are symmetric by construction")
    };
    (lift(x1), lift(x2))
}

/// `[A^T P A - rho P, A^T P B; B^T P A, B^T P B] - (rho X1 + (1-rho) X2)`.
pub fn lmi_matrix(alpha: f64, beta: f64, mu: f64, ell: f64, rho: f64, p: &SymMatrix) -> Result<SymMatrix> {
    if p.dim() != 2 {
        return Err(Error::InvalidInput("P~ must be 2x2".into()));
    }
    let a = Matrix::from_vec(2, 2, vec![1.0 + beta, -beta, 1.0, 0.0])?;
    let b = [-alpha, 0.0];
    let pm = p.as_matrix();
    let apa = a.transpose().matmul(pm).matmul(&a);
    let pb = pm.matvec(&b);
    let apb = a.transpose().matvec(&pb);
    let bpb: f64 = b.iter().zip(&pb).map(|(x, y)| x * y).sum();

    let (x1, x2) = multiplier_matrices(alpha, beta, mu, ell);
    let mut m = Matrix::zeros(3, 3);
    for i in 0..2 {
        for j in 0..2 {
            m[(i, j)] = apa[(i, j)] - rho * pm[(i, j)];
        }
        m[(i, 2)] = apb[i];
        m[(2, i)] = apb[i];
    }
    m[(2, 2)] = bpb;
    for i in 0..3 {
        for j in 0..3 {
            m[(i, j)] -= rho * x1[(i, j)] + (1.0 - rho) * x2[(i, j)];
        }
    }
    Ok(SymMatrix::from_matrix_symmetrized(&m))
}

pub fn build_lmi(cert: &CertificatePair) -> Result<SymMatrix> {
    let p = cert.p_tilde.as_ref().ok_or(Error::NoCertificate)?;
    lmi_matrix(cert.alpha, cert.beta, cert.mu, cert.ell, cert.rho, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LmiVerdict {
    pub feasible: bool,
    pub max_eigenvalue: f64,
}

pub fn verify_lmi(cert: &CertificatePair, tol: f64) -> Result<LmiVerdict> {
    let m = build_lmi(cert)?;
    let r = max_eig_and_psd(&m, tol)?;
    Ok(LmiVerdict {
        feasible: r.is_neg_semidefinite,
        max_eigenvalue: r.max_eigenvalue,
    })
}

/// Result of the exploratory search over 2x2 PSD `P~`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PSearch {
    pub p_tilde: SymMatrix,
    pub max_eigenvalue: f64,
    pub feasible: bool,
}

// P = L L^T with L lower triangular (l11, l21, l22): always PSD.
fn p_from_factor(f: [f64; 3]) -> SymMatrix {
    let [a, b, c] = f;
    SymMatrix::from_rows(&[vec![a * a, a * b], vec![a * b, b * b + c * c]]).expect("symmetric")
}

/// Coarse grid plus compass refinement minimising the largest eigenvalue
/// of the inequality matrix over PSD `P~`. A heuristic, not an SDP solver.
pub fn search_p_tilde(alpha: f64, beta: f64, mu: f64, ell: f64, rho: f64) -> Result<PSearch> {
    let score = |f: [f64; 3]| -> f64 {
        lmi_matrix(alpha, beta, mu, ell, rho, &p_from_factor(f))
            .and_then(|m| max_eig_and_psd(&m, 0.0))
            .map_or(f64::INFINITY, |r| r.max_eigenvalue)
    };
    let scale = ell.sqrt();
    let n = 12;
    let mut best = ([0.0; 3], score([0.0; 3]));
    for i in 0..=n {
        for j in 0..=2 * n {
            for k in 0..=n {
                let f = [
                    scale * i as f64 / n as f64,
                    scale * (j as f64 - n as f64) / n as f64,
                    scale * k as f64 / n as f64,
                ];
                let s = score(f);
                if s < best.1 {
                    best = (f, s);
                }
            }
        }
    }
    let mut h = scale / n as f64;
    while h > 1e-10 * scale {
        let mut improved = false;
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let mut f = best.0;
                f[axis] += sign * h;
                let s = score(f);
                if s < best.1 {
                    best = (f, s);
                    improved = true;
                }
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    Ok(PSearch {
        p_tilde: p_from_factor(best.0),
        max_eigenvalue: best.1,
        feasible: best.1 <= LMI_TOL,
    })
}

/// Bisection on `rho` using [`search_p_tilde`] as the feasibility oracle.
pub fn bisect_rate(alpha: f64, beta: f64, mu: f64, ell: f64, tol: f64) -> Result<Option<PSearch>> {
    let top = search_p_tilde(alpha, beta, mu, ell, 1.0 - 1e-12)?;
    if !top.feasible {
        return Ok(None);
    }
    let (mut lo, mut hi, mut best) = (0.0, 1.0 - 1e-12, top);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let s = search_p_tilde(alpha, beta, mu, ell, mid)?;
        if s.feasible {
            hi = mid;
            best = s;
        } else {
            lo = mid;
        }
    }
    Ok(Some(best))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefactorMethod {
    Hb,
    AgStar,
}

/// Transient prefactor `C_k` (heavy ball) or `C*_k` (`AG*`) for `k >= 1`.
/// Interior eigenvalue maxima over an empty set are dropped.
pub fn prefactor_ck(
    method: PrefactorMethod,
    k: usize,
    mu: f64,
    ell: f64,
    eigenvalues: &[f64],
) -> Result<Constant> {
    check_moduli(mu, ell)?;
    if k == 0 {
        return Err(Error::OutOfDomain(
            "prefactor formulas hold for k >= 1; use bound_prefactor for k = 0".into(),
        ));
    }
    let slack = 1e-12 * ell;
    if eigenvalues.iter().any(|&l| l < mu - slack || l > ell + slack) {
        return Err(Error::InvalidInput("eigenvalues must lie in [mu, L]".into()));
    }
    let kf = k as f64;
    let interior = eigenvalues.iter().copied().filter(|&l| mu < l && l < ell);
    match method {
        PrefactorMethod::Hb => {
            let c_bar = interior
                .map(|l| (mu + ell) / (2.0 * ((l - mu) * (ell - l)).sqrt()))
                .fold(f64::NEG_INFINITY, f64::max);
            let r = (ell + mu) / (ell - mu);
            let growth = (4.0 * kf * kf * r * r + 2.0).sqrt();
            Ok(Constant::new(
                c_bar.max(growth),
                "C_k = max{(mu+L)/(2 sqrt((l-mu)(L-l))), sqrt(4k^2((L+mu)/(L-mu))^2 + 2)}",
            ))
        }
        PrefactorMethod::AgStar => {
            let kappa = ell / mu;
            let s = (3.0 * kappa + 1.0).sqrt();
            let rho = 1.0 - 2.0 / s;
            let r2 = rho * rho;
            let c_tilde = interior
                .filter(|&l| 3.0 * ell + mu - 4.0 * l != 0.0)
                .map(|l| {
                    (mu * (3.0 * ell + mu)).sqrt() / ((l - mu) * (3.0 * ell + mu - 4.0 * l).abs()).sqrt()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            let c_bar = (s + 2.0) / 2.0 * (r2 + 1.0) * c_tilde;
            let growth = (kf * kf * (r2 + 1.0).powi(2) + 2.0 * r2).sqrt();
            Ok(Constant::new(
                c_bar.max(growth),
                "C*_k = max{(sqrt(3k+1)+2)/2 (rho*^2+1) C~*, sqrt(k^2(rho*^2+1)^2 + 2 rho*^2)}",
            ))
        }
    }
}

/// [`prefactor_ck`] extended with the value 1 at `k = 0`.
pub fn bound_prefactor(
    method: PrefactorMethod,
    k: usize,
    mu: f64,
    ell: f64,
    eigenvalues: &[f64],
) -> Result<f64> {
    if k == 0 {
        check_moduli(mu, ell)?;
        return Ok(1.0);
    }
    prefactor_ck(method, k, mu, ell, eigenvalues).map(|c| c.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Drift {
    pub gamma: f64,
    pub k: Constant,
}

/// Drift rate and offset of `V_P` under noise with `E||eps||^2 <= sigma^2`.
pub fn drift_constants(cert: &CertificatePair, sigma: f64) -> Result<Drift> {
    let p = cert.p_tilde.as_ref().ok_or(Error::NoCertificate)?;
    let k = (cert.ell / 2.0 + p[(0, 0)]) * cert.alpha * cert.alpha * sigma * sigma;
    Ok(Drift {
        gamma: cert.rho,
        k: Constant::new(k, "K = (L/2 + P~(1,1)) alpha^2 sigma^2"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErgodicityBudget {
    pub eta: f64,
    pub r: f64,
    pub rho: f64,
    pub k: f64,
    pub psi: f64,
    pub eta_bar: f64,
    pub gamma: f64,
    pub source: &'static str,
}

pub fn ergodicity_budget(eta: f64, r: f64, rho: f64, k: f64) -> Result<ErgodicityBudget> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidInput(format!("eta must lie in (0,1), got {eta}")));
    }
    if !(r > 0.0) || !(k > 0.0) {
        return Err(Error::InvalidInput("R and K must be positive".into()));
    }
    let slack = 0.5 - rho / 2.0 - k / r;
    if !(slack > 0.0) {
        return Err(Error::Infeasible { slack });
    }
    let eta_bar = (eta / 2.0).min(slack * r * eta / (4.0 * k + r * eta));
    Ok(ErgodicityBudget {
        eta,
        r,
        rho,
        k,
        psi: eta / (2.0 * k),
        eta_bar,
        gamma: rho,
        source: "eta_bar = min{eta/2, (1/2 - rho/2 - K/R) R eta/(4K + R eta)}, psi = eta/(2K)",
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum NoiseBudgetInput {
    Unconstrained {
        r: f64,
        ell: f64,
        kappa: f64,
    },
    Aspg {
        mu: f64,
        ell: f64,
        diameter: f64,
        grad_sup: f64,
        r: f64,
    },
}

/// `a_1`, `b_1` of the quadratic-in-sigma noise condition for the projected method.
pub fn aspg_noise_coefficients(mu: f64, ell: f64, diameter: f64, grad_sup: f64) -> (f64, f64) {
    let kappa = ell / mu;
    let w = (1.0 - kappa.sqrt()).powi(2) + kappa;
    let a1 = (mu / 2.0 * w + ell / 2.0) / (ell * ell);
    let b1 = (diameter * mu * w + grad_sup) / ell;
    (a1, b1)
}

/// Largest admissible noise level `sigma`.
pub fn noise_budget(input: NoiseBudgetInput) -> Result<Constant> {
    match input {
        NoiseBudgetInput::Unconstrained { r, ell, kappa } => {
            if !(r >= 0.0) {
                return Err(Error::InvalidInput("R must be >= 0".into()));
            }
            Ok(Constant::new(
                (r * ell / (4.0 * kappa.sqrt())).sqrt(),
                "sigma^2 <= R L / (4 sqrt(kappa))",
            ))
        }
        NoiseBudgetInput::Aspg {
            mu,
            ell,
            diameter,
            grad_sup,
            r,
        } => {
            if !(r >= 0.0) {
                return Err(Error::InvalidInput("R must be >= 0".into()));
            }
            let (a1, b1) = aspg_noise_coefficients(mu, ell, diameter, grad_sup);
            let kappa = ell / mu;
            let v = (-b1 + (b1 * b1 + a1 * r / kappa.sqrt()).sqrt()) / (2.0 * a1);
            Ok(Constant::new(
                v.max(0.0),
                "sigma < (-b1 + sqrt(b1^2 + a1 R / sqrt(kappa))) / (2 a1)",
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Minorization {
    /// Radius `M` of the ball carrying mass `sqrt(eta)`.
    pub m: f64,
    /// Level `R` of the small set.
    pub r: f64,
    pub eta: f64,
}

/// Closed-form `(M, R)` for i.i.d. `N(0, Sigma)` noise at the AG preset.
pub fn gaussian_minorization(mu: f64, ell: f64, cov: &SymMatrix) -> Result<Minorization> {
    check_moduli(mu, ell)?;
    let spec = crate::linalg::sym_eig(cov)?;
    let bound = ell * ell;
    if spec.max() >= bound {
        return Err(Error::NoiseTooLarge {
            max_eigenvalue: spec.max(),
            bound,
        });
    }
    if spec.min() < -1e-12 * spec.max().abs().max(1.0) {
        return Err(Error::NotPsd {
            min_eigenvalue: spec.min(),
        });
    }
    let kappa = ell / mu;
    let det: f64 = spec.eigenvalues.iter().map(|l| 1.0 - l / bound).product();
    let m = (-2.0 * ((1.0 - kappa.powf(-0.25)) * det.sqrt()).ln()).sqrt();
    // ||Sigma^{-1}|| is infinite for singular Sigma, which sends R to zero
    let inv_norm = if spec.min() > 0.0 {
        1.0 / spec.min()
    } else {
        f64::INFINITY
    };
    let inner = (kappa.ln() / (2.0 * bound * inv_norm)).max(0.0);
    let root = -m + (m * m + inner).sqrt();
    let r = root * root * (ell - mu).powi(2) / (8.0 * (3.0 * ell.sqrt() - mu.sqrt()).powi(3));
    Ok(Minorization {
        m,
        r,
        eta: 1.0 / kappa.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AspgExtras {
    pub mu: f64,
    pub diameter: f64,
    pub grad_sup: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    Unconstrained,
    Aspg,
}

/// Noise floor `K~` of the projected method at the AG preset.
pub fn aspg_k_tilde(sigma: f64, ell: f64, extras: AspgExtras) -> f64 {
    let kappa = ell / extras.mu;
    let w = (1.0 - kappa.sqrt()).powi(2) + kappa;
    (2.0 * sigma * extras.diameter * ell + sigma * sigma) / (2.0 * ell * ell) * extras.mu * w
        + sigma * extras.grad_sup / ell
        + sigma * sigma / (2.0 * ell)
}

/// Expected-suboptimality bound at the AG preset.
pub fn subopt_bound(
    variant: BoundVariant,
    v0: f64,
    kappa: f64,
    sigma: f64,
    ell: f64,
    k: usize,
    extras: Option<AspgExtras>,
) -> Result<Constant> {
    if !(v0 >= 0.0) {
        return Err(Error::InvalidInput("V0 must be >= 0".into()));
    }
    let transient = v0 * (1.0 - 1.0 / kappa.sqrt()).powi(k as i32);
    match variant {
        BoundVariant::Unconstrained => Ok(Constant::new(
            transient + kappa.sqrt() * sigma * sigma / ell,
            "V0 (1 - 1/sqrt(kappa))^k + sqrt(kappa) sigma^2 / L",
        )),
        BoundVariant::Aspg => {
            let extras = extras.ok_or_else(|| {
                Error::InvalidInput("projected bound needs mu, diameter and gradient bound".into())
            })?;
            Ok(Constant::new(
                transient + kappa.sqrt() * aspg_k_tilde(sigma, ell, extras),
                "V0 (1 - 1/sqrt(kappa))^k + sqrt(kappa) K~",
            ))
        }
    }
}

/// `||P||` for the projected method's certificate `(mu/2) v v^T (x) I`, `v = (1 - sqrt(k), sqrt(k))`.
pub fn projected_p_norm(mu: f64, ell: f64) -> f64 {
    let kappa = ell / mu;
    mu / 2.0 * ((1.0 - kappa.sqrt()).powi(2) + kappa)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AspgInputs {
    pub alpha: f64,
    pub beta: f64,
    pub p_norm: f64,
    pub sigma: f64,
    pub diameter: f64,
    pub grad_sup: f64,
    pub ell: f64,
    pub rho: f64,
    pub r: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AspgBudget {
    pub k_tilde: f64,
    pub eta_tilde: f64,
    /// Infinite when `sigma = 0`.
    pub psi_tilde: f64,
    pub feasible: bool,
    pub a1: Option<f64>,
    pub b1: Option<f64>,
    pub sigma_max: Option<f64>,
    pub source: &'static str,
}

pub fn aspg_constants(inp: AspgInputs) -> AspgBudget {
    let AspgInputs {
        alpha,
        p_norm,
        sigma,
        diameter,
        grad_sup,
        ell,
        rho,
        r,
        eta,
        ..
    } = inp;
    let a_s = alpha * sigma;
    let k_tilde = a_s * ((a_s + 2.0 * diameter) * p_norm + grad_sup + a_s * ell / 2.0);
    let slack = 0.5 - rho / 2.0 - if k_tilde == 0.0 { 0.0 } else { k_tilde / r };
    let eta_tilde = (eta / 2.0).min(slack * r * eta / (4.0 * k_tilde + r * eta));
    AspgBudget {
        k_tilde,
        eta_tilde,
        psi_tilde: if k_tilde == 0.0 {
            f64::INFINITY
        } else {
            eta / (2.0 * k_tilde)
        },
        feasible: eta_tilde > 0.0,
        a1: None,
        b1: None,
        sigma_max: None,
        source: "K~ = alpha sigma((alpha sigma + 2 D_C)||P|| + G_M + alpha sigma L/2)",
    }
}

/// Projected-method budget at the AG preset with `eta = 1/sqrt(kappa)`.
pub fn aspg_ag_budget(
    mu: f64,
    ell: f64,
    diameter: f64,
    grad_sup: f64,
    sigma: f64,
    r: f64,
) -> Result<AspgBudget> {
    let cert = preset_params(Preset::Ag, mu, ell)?;
    let mut b = aspg_constants(AspgInputs {
        alpha: cert.alpha,
        beta: cert.beta,
        p_norm: projected_p_norm(mu, ell),
        sigma,
        diameter,
        grad_sup,
        ell,
        rho: cert.rho,
        r,
        eta: 1.0 / cert.kappa().sqrt(),
    });
    let (a1, b1) = aspg_noise_coefficients(mu, ell, diameter, grad_sup);
    b.a1 = Some(a1);
    b.b1 = Some(b1);
    b.sigma_max = Some(
        noise_budget(NoiseBudgetInput::Aspg {
            mu,
            ell,
            diameter,
            grad_sup,
            r,
        })?
        .value,
    );
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegularizationPlan {
    pub epsilon: f64,
    pub mu_eps: f64,
    pub ell_eps: f64,
    pub kappa_eps: f64,
    pub k_required: u64,
    pub k_tilde_eps: f64,
    pub noise_ok: bool,
    /// `2 epsilon` when the noise condition holds.
    pub guaranteed_gap: Option<f64>,
}

/// Plan for reaching an `epsilon`-optimal point of a weakly convex problem by
/// adding `epsilon/(2 D_C^2) ||x||^2` and running the projected method.
pub fn weakly_convex_plan(
    epsilon: f64,
    ell: f64,
    diameter: f64,
    v0: f64,
    sigma: f64,
    grad_sup: f64,
) -> Result<RegularizationPlan> {
    if !(epsilon > 0.0) || !(diameter > 0.0) || !(ell > 0.0) || !(v0 > 0.0) {
        return Err(Error::InvalidInput(
            "epsilon, D_C, L and V0 must be positive".into(),
        ));
    }
    let mu_eps = epsilon / (diameter * diameter);
    let ell_eps = ell + mu_eps;
    let kappa_eps = 1.0 + ell * diameter * diameter / epsilon;
    let count = (epsilon.ln() - v0.ln()).abs() / (1.0 - 1.0 / kappa_eps.sqrt()).ln().abs();
    let k_tilde_eps = aspg_constants(AspgInputs {
        alpha: 1.0 / ell_eps,
        beta: 0.0,
        p_norm: projected_p_norm(mu_eps, ell_eps),
        sigma,
        diameter,
        grad_sup,
        ell: ell_eps,
        rho: 1.0 - 1.0 / kappa_eps.sqrt(),
        r: 1.0,
        eta: 0.5,
    })
    .k_tilde;
    let noise_ok = kappa_eps.sqrt() * k_tilde_eps <= epsilon / 2.0;
    Ok(RegularizationPlan {
        epsilon,
        mu_eps,
        ell_eps,
        kappa_eps,
        k_required: count.ceil() as u64,
        k_tilde_eps,
        noise_ok,
        guaranteed_gap: noise_ok.then_some(2.0 * epsilon),
    })
}
