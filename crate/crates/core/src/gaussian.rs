//! Exact first and second moments of momentum chains on quadratics.
//!
//! On `f(x) = 1/2 x^T Q x + a^T x + b` with i.i.d. noise of covariance `Sigma`
//! the centred state `xi_k - xi*` evolves linearly under `A_Q`, so its mean
//! and covariance propagate in closed form and the stationary covariance
//! solves `X = A_Q X A_Q^T + blockdiag(alpha^2 Sigma, 0)`.

use serde::Serialize;

use crate::engines::{closed_loop_block, closed_loop_matrix, Method, MomentumParams, StateVec};
use crate::error::{Error, Result};
use crate::linalg::{solve_discrete_lyapunov, solve_stein, sym_eig, Matrix, SymMatrix};
use crate::problems::{Objective, QuadraticObjective};

/// Distribution of `xi_k` for a Gaussian chain: `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianChainState {
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
    pub k: usize,
}

impl GaussianChainState {
    pub fn point(xi: &StateVec) -> Self {
        let mean = xi.stacked();
        let n = mean.len();
        Self {
            mean,
            cov: SymMatrix::zeros(n),
            k: 0,
        }
    }

    pub fn new(mean: Vec<f64>, cov: SymMatrix) -> Result<Self> {
        if mean.len() != cov.dim() || !mean.len().is_multiple_of(2) {
            return Err(Error::InvalidInput(
                "mean and covariance must have matching even length".into(),
            ));
        }
        Ok(Self { mean, cov, k: 0 })
    }

    /// Stationary law: mean `xi*`, covariance `X`.
    pub fn stationary(obj: &QuadraticObjective, x: SymMatrix) -> Self {
        Self {
            mean: stacked_minimizer(obj),
            cov: x,
            k: 0,
        }
    }
}

fn stacked_minimizer(obj: &QuadraticObjective) -> Vec<f64> {
    let mut m = obj.minimizer().to_vec();
    m.extend_from_slice(obj.minimizer());
    m
}

fn check_dims(obj: &QuadraticObjective, sigma: &SymMatrix) -> Result<()> {
    if sigma.dim() != obj.dim() {
        return Err(Error::InvalidInput(format!(
            "noise covariance is {}x{0}, objective has dim {}",
            sigma.dim(),
            obj.dim()
        )));
    }
    Ok(())
}

/// `V_P(xi) = (xi - xi*)^T P (xi - xi*) + f(x) - f*`.
pub fn lyapunov_value(obj: &QuadraticObjective, p: &SymMatrix, xi: &StateVec) -> Result<f64> {
    if p.dim() != 2 * obj.dim() || xi.dim() != obj.dim() {
        return Err(Error::InvalidInput(
            "P must be 2d x 2d for a d-dimensional state".into(),
        ));
    }
    let z = xi.offset_from(obj.minimizer());
    Ok(p.quad_form(&z) + obj.value(&xi.x_curr) - obj.f_star())
}

/// `blockdiag(alpha^2 Sigma, 0)`.
fn injection(alpha: f64, sigma: &SymMatrix) -> SymMatrix {
    let d = sigma.dim();
    let mut m = Matrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] = alpha * alpha * sigma[(i, j)];
        }
    }
    SymMatrix::from_matrix_symmetrized(&m)
}

pub fn propagate_gaussian(
    obj: &QuadraticObjective,
    params: &MomentumParams,
    sigma: &SymMatrix,
    state: &GaussianChainState,
    steps: usize,
) -> Result<GaussianChainState> {
    check_dims(obj, sigma)?;
    if state.mean.len() != 2 * obj.dim() {
        return Err(Error::InvalidInput(
            "state dimension does not match objective".into(),
        ));
    }
    let a = closed_loop_matrix(obj, params)?.full;
    let star = stacked_minimizer(obj);
    let inj = injection(params.alpha, sigma);
    let mut dev: Vec<f64> = state.mean.iter().zip(&star).map(|(m, s)| m - s).collect();
    let mut cov = state.cov.clone();
    for _ in 0..steps {
        dev = a.matvec(&dev);
        cov = cov.congruence(&a).add(&inj);
    }
    Ok(GaussianChainState {
        mean: dev.iter().zip(&star).map(|(d, s)| d + s).collect(),
        cov,
        k: state.k + steps,
    })
}

/// Largest root modulus of `z^2 - p1 z - p2`.
fn block_radius(t: &Matrix) -> f64 {
    let (p1, p2) = (t[(0, 0)], t[(0, 1)]);
    let disc = p1 * p1 + 4.0 * p2;
    if disc >= 0.0 {
        let s = disc.sqrt();
        ((p1 + s) / 2.0).abs().max(((p1 - s) / 2.0).abs())
    } else {
        (-p2).sqrt()
    }
}

/// Stationary variance of `y_{k+1} = p1 y_k + p2 y_{k-1} + e` with `Var e = q`.
fn ar2_variance(t: &Matrix, q: f64) -> f64 {
    let (p1, p2) = (t[(0, 0)], t[(0, 1)]);
    q * (1.0 - p2) / ((1.0 + p2) * ((1.0 - p2).powi(2) - p1 * p1))
}

/// Per-eigenvalue trace terms of the published closed forms, with `c = 1`.
/// Heavy ball: `2 alpha (1+beta) / ((1-beta) l (2 + 2 beta - alpha l))`.
/// Accelerated gradient: `alpha / (l (1 - beta (1 - alpha l)))`.
pub fn published_trace_term(method: Method, lambda: f64, alpha: f64, beta: f64) -> Option<f64> {
    match method {
        Method::Hb | Method::Gd => {
            Some(2.0 * alpha * (1.0 + beta) / ((1.0 - beta) * lambda * (2.0 + 2.0 * beta - alpha * lambda)))
        }
        Method::Ag => Some(alpha / (lambda * (1.0 - beta * (1.0 - alpha * lambda)))),
        Method::Aspg => None,
    }
}

/// `Some(c^2)` when `Sigma = c^2 I` up to roundoff.
pub fn isotropic_level(sigma: &SymMatrix) -> Option<f64> {
    let d = sigma.dim();
    let c2 = sigma.trace() / d as f64;
    let tol = 1e-12 * c2.abs().max(f64::MIN_POSITIVE);
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { c2 } else { 0.0 };
            if (sigma[(i, j)] - target).abs() > tol {
                return None;
            }
        }
    }
    Some(c2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryReport {
    pub method: Method,
    /// Covariance of `xi_inf - xi*`.
    pub x: SymMatrix,
    pub trace: f64,
    /// Published closed form, defined when `Sigma = c^2 I`.
    pub trace_closed_form: Option<f64>,
    /// `c^2` times the published per-eigenvalue terms, when `Sigma = c^2 I`.
    pub per_eigenvalue_terms: Option<Vec<f64>>,
    /// Exact trace from the per-block AR(2) variance, valid for any `Sigma`.
    pub trace_exact_closed_form: f64,
    pub per_eigenvalue_exact: Vec<f64>,
    pub v_prefactor: Option<f64>,
}

/// Stationary covariance through the Hessian eigenbasis: one 4x4 Stein
/// system per eigenvalue pair instead of a `4d^2` dense solve.
pub fn stationary_cov(
    obj: &QuadraticObjective,
    params: &MomentumParams,
    sigma: &SymMatrix,
) -> Result<StationaryReport> {
    check_dims(obj, sigma)?;
    let d = obj.dim();
    let lambdas = obj.eigenvalues();
    let blocks = lambdas
        .iter()
        .map(|&l| closed_loop_block(params.method, l, params.alpha, params.beta))
        .collect::<Result<Vec<_>>>()?;
    let radius = blocks.iter().map(block_radius).fold(0.0, f64::max);
    if radius >= 1.0 - 1e-10 {
        return Err(Error::Unstable { radius });
    }

    let v = &obj.spectrum().eigenvectors;
    let sigma_hat = v.transpose().matmul(sigma.as_matrix()).matmul(v);
    let a2 = params.alpha * params.alpha;

    // covariance in eigen coordinates z = (V^T x, V^T x_prev)
    let mut xz = Matrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in i..d {
            let q = a2 * sigma_hat[(i, j)];
            if q == 0.0 {
                continue;
            }
            let c = Matrix::from_vec(2, 2, vec![q, 0.0, 0.0, 0.0])?;
            let xij = solve_stein(&blocks[i], &blocks[j], &c)?;
            for s in 0..2 {
                for t in 0..2 {
                    xz[(s * d + i, t * d + j)] = xij[(s, t)];
                    xz[(t * d + j, s * d + i)] = xij[(s, t)];
                }
            }
        }
    }
    let mut w = Matrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            w[(i, j)] = v[(i, j)];
            w[(d + i, d + j)] = v[(i, j)];
        }
    }
    let x = SymMatrix::from_matrix_symmetrized(&w.matmul(&xz).matmul(&w.transpose()));

    let per_eigenvalue_exact: Vec<f64> = blocks
        .iter()
        .enumerate()
        .map(|(i, t)| 2.0 * ar2_variance(t, a2 * sigma_hat[(i, i)]))
        .collect();
    let (trace_closed_form, per_eigenvalue_terms) = match isotropic_level(sigma) {
        Some(c2) => {
            let terms: Option<Vec<f64>> = lambdas
                .iter()
                .map(|&l| published_trace_term(params.method, l, params.alpha, params.beta).map(|t| c2 * t))
                .collect();
            (terms.as_ref().map(|t| t.iter().sum()), terms)
        }
        None => (None, None),
    };
    Ok(StationaryReport {
        method: params.method,
        trace: x.trace(),
        x,
        trace_closed_form,
        per_eigenvalue_terms,
        trace_exact_closed_form: per_eigenvalue_exact.iter().sum(),
        per_eigenvalue_exact,
        v_prefactor: None,
    })
}

/// Stationary covariance from the dense vectorized Lyapunov solve on the full `A_Q`.
pub fn stationary_cov_dense(
    obj: &QuadraticObjective,
    params: &MomentumParams,
    sigma: &SymMatrix,
) -> Result<SymMatrix> {
    check_dims(obj, sigma)?;
    let a = closed_loop_matrix(obj, params)?.full;
    solve_discrete_lyapunov(&a, &injection(params.alpha, sigma))
}

/// Initial law used by the `V` prefactor.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    Point(StateVec),
    Gaussian { mean: Vec<f64>, cov: SymMatrix },
}

/// `E||(xi0 - xi*)(xi0 - xi*)^T|| + alpha^2 ||Sigma|| / (1 - rho^2)`.
///
/// The rank-one norm equals `||xi0 - xi*||^2`, whose expectation under a
/// Gaussian start is `Tr(C) + ||m - xi*||^2`.
pub fn v_prefactor(
    obj: &QuadraticObjective,
    start: &InitialLaw,
    alpha: f64,
    sigma: &SymMatrix,
    rho: f64,
) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidInput(format!("rate must lie in [0,1), got {rho}")));
    }
    let star = stacked_minimizer(obj);
    let second_moment = match start {
        InitialLaw::Point(xi) => {
            let z = xi.offset_from(obj.minimizer());
            z.iter().map(|v| v * v).sum::<f64>()
        }
        InitialLaw::Gaussian { mean, cov } => {
            if mean.len() != star.len() || cov.dim() != star.len() {
                return Err(Error::InvalidInput("initial law has wrong dimension".into()));
            }
            cov.trace() + mean.iter().zip(&star).map(|(m, s)| (m - s).powi(2)).sum::<f64>()
        }
    };
    Ok(v_prefactor_raw(second_moment, alpha, sigma.norm(), rho))
}

pub fn v_prefactor_raw(second_moment: f64, alpha: f64, sigma_norm: f64, rho: f64) -> f64 {
    second_moment + alpha * alpha * sigma_norm / (1.0 - rho * rho)
}

/// `(L/2) Tr(X) + V C_k^2 rho^{2k}`.
pub fn subopt_bound_quadratic(k: usize, ell: f64, trace: f64, v: f64, c_k: f64, rho: f64) -> f64 {
    ell / 2.0 * trace + v * c_k * c_k * rho.powi(2 * k as i32)
}

/// Exact `E f(x_k) - f*` for a Gaussian state: `1/2 Tr(Q C_xx) + 1/2 (m_x - x*)^T Q (m_x - x*)`.
pub fn exact_expected_subopt(obj: &QuadraticObjective, state: &GaussianChainState) -> f64 {
    let d = obj.dim();
    let q = obj.hessian();
    let mut tr = 0.0;
    for i in 0..d {
        for j in 0..d {
            tr += q[(i, j)] * state.cov[(j, i)];
        }
    }
    let dev: Vec<f64> = state.mean[..d]
        .iter()
        .zip(obj.minimizer())
        .map(|(m, s)| m - s)
        .collect();
    0.5 * tr + 0.5 * q.quad_form(&dev)
}

/// Second moment `E[(xi - xi*)(xi - xi*)^T] = C + (m - xi*)(m - xi*)^T`.
pub fn second_moment(obj: &QuadraticObjective, state: &GaussianChainState) -> SymMatrix {
    let star = stacked_minimizer(obj);
    let dev: Vec<f64> = state.mean.iter().zip(&star).map(|(m, s)| m - s).collect();
    state.cov.add(&SymMatrix::outer(&dev, 1.0))
}

/// Eigenvalues of `X` as a sanity check that it is PSD.
pub fn min_eigenvalue(x: &SymMatrix) -> Result<f64> {
    Ok(sym_eig(x)?.min())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificates::{p_tilde_ag, preset_params, Preset};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn quad14() -> QuadraticObjective {
        QuadraticObjective::diagonal(&[1.0, 4.0], vec![0.0, 0.0], 0.0).unwrap()
    }

    #[test]
    fn lyapunov_value_examples() {
        let obj = quad14();
        let p = p_tilde_ag(1.0, 4.0).kron(&SymMatrix::identity(2));
        let xi = StateVec::at_rest(vec![1.0, 0.0]);
        assert_abs_diff_eq!(lyapunov_value(&obj, &p, &xi).unwrap(), 1.0, epsilon = 1e-14);
        let zero = StateVec::at_rest(vec![0.0, 0.0]);
        assert_eq!(lyapunov_value(&obj, &p, &zero).unwrap(), 0.0);
        assert_abs_diff_eq!(
            lyapunov_value(&obj, &SymMatrix::zeros(4), &xi).unwrap(),
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn first_step_injects_noise() {
        let obj = quad14();
        let params = preset_params(Preset::Ag, 1.0, 4.0).unwrap().momentum_params();
        let sigma = SymMatrix::identity(2);
        let s0 = GaussianChainState::point(&StateVec::at_rest(vec![0.0, 0.0]));
        let s1 = propagate_gaussian(&obj, &params, &sigma, &s0, 1).unwrap();
        assert_eq!(s1.cov, injection(0.25, &sigma));
        assert_eq!(s1.k, 1);
    }

    #[test]
    fn hb_mean_step() {
        let obj = QuadraticObjective::diagonal(&[1.0], vec![0.0], 0.0).unwrap();
        let params = MomentumParams::new(Method::Hb, 0.25, 0.25).unwrap();
        let s0 = GaussianChainState::new(vec![1.0, 1.0], SymMatrix::zeros(2)).unwrap();
        let s1 = propagate_gaussian(&obj, &params, &SymMatrix::zeros(1), &s0, 1).unwrap();
        assert_eq!(s1.mean, vec![0.75, 1.0]);
        assert_eq!(s1.cov, SymMatrix::zeros(2));
    }

    #[test]
    fn hb_trace_worked_example() {
        let obj = quad14();
        let params = preset_params(Preset::Hb, 1.0, 4.0).unwrap().momentum_params();
        let r = stationary_cov(&obj, &params, &SymMatrix::identity(2)).unwrap();
        assert_relative_eq!(r.trace, 1.25, max_relative = 1e-12);
        assert_relative_eq!(r.trace_closed_form.unwrap(), 1.25, max_relative = 1e-12);
        assert_relative_eq!(r.trace_exact_closed_form, 1.25, max_relative = 1e-12);
        for t in r.per_eigenvalue_terms.unwrap() {
            assert_relative_eq!(t, 0.625, max_relative = 1e-12);
        }
    }

    #[test]
    fn ag_star_trace_from_two_solvers() {
        // The published accelerated closed form disagrees with the Lyapunov
        // solution; the AR(2) form and the dense solve agree with each other.
        let obj = quad14();
        let params = preset_params(Preset::AgStar, 1.0, 4.0).unwrap().momentum_params();
        let r = stationary_cov(&obj, &params, &SymMatrix::identity(2)).unwrap();
        let dense = stationary_cov_dense(&obj, &params, &SymMatrix::identity(2)).unwrap();
        assert_relative_eq!(r.trace, dense.trace(), max_relative = 1e-12);
        assert_relative_eq!(r.trace, r.trace_exact_closed_form, max_relative = 1e-12);
        assert_abs_diff_eq!(r.trace, 0.651890, epsilon = 5e-6);
        assert_abs_diff_eq!(r.trace_closed_form.unwrap(), 0.455952, epsilon = 5e-6);
    }

    #[test]
    fn zero_noise_gives_zero_cov() {
        let obj = quad14();
        let params = preset_params(Preset::Ag, 1.0, 4.0).unwrap().momentum_params();
        let r = stationary_cov(&obj, &params, &SymMatrix::zeros(2)).unwrap();
        assert_eq!(r.trace, 0.0);
        assert_eq!(r.trace_exact_closed_form, 0.0);
    }

    #[test]
    fn unstable_rejected() {
        let obj = quad14();
        let params = MomentumParams::new(Method::Hb, 1.0, 0.9).unwrap();
        assert!(matches!(
            stationary_cov(&obj, &params, &SymMatrix::identity(2)),
            Err(Error::Unstable { .. })
        ));
    }

    #[test]
    fn v_prefactor_examples() {
        let obj = QuadraticObjective::diagonal(&[1.0], vec![0.0], 0.0).unwrap();
        let at_star = InitialLaw::Point(StateVec::at_rest(vec![0.0]));
        assert_eq!(
            v_prefactor(&obj, &at_star, 0.25, &SymMatrix::zeros(1), 0.5).unwrap(),
            0.0
        );
        let unit = InitialLaw::Point(StateVec::new(vec![1.0], vec![0.0]).unwrap());
        assert_abs_diff_eq!(
            v_prefactor(&obj, &unit, 0.25, &SymMatrix::identity(1), 0.5).unwrap(),
            1.0 + 0.0625 / 0.75,
            epsilon = 1e-15
        );
        let g = InitialLaw::Gaussian {
            mean: vec![1.0, 0.0],
            cov: SymMatrix::identity(2),
        };
        assert_abs_diff_eq!(
            v_prefactor(&obj, &g, 0.25, &SymMatrix::zeros(1), 0.5).unwrap(),
            3.0
        );
    }

    #[test]
    fn subopt_bound_examples() {
        assert_abs_diff_eq!(subopt_bound_quadratic(3, 4.0, 0.0, 1.0, 1.0, 0.5), 0.5f64.powi(6));
        assert!(subopt_bound_quadratic(100_000, 4.0, 1.25, 1.0, 2.0, 0.5) == 2.5);
    }

    #[test]
    fn propagation_reaches_stationary() {
        let obj = QuadraticObjective::diagonal(&[1.0, 3.0, 10.0], vec![0.5, -1.0, 2.0], 0.0).unwrap();
        let params = preset_params(Preset::Ag, 1.0, 10.0).unwrap().momentum_params();
        let sigma =
            SymMatrix::from_rows(&[vec![1.0, 0.2, 0.0], vec![0.2, 0.5, 0.1], vec![0.0, 0.1, 2.0]]).unwrap();
        let x = stationary_cov(&obj, &params, &sigma).unwrap().x;
        let s = propagate_gaussian(
            &obj,
            &params,
            &sigma,
            &GaussianChainState::point(&StateVec::at_rest(vec![1.0; 3])),
            2000,
        )
        .unwrap();
        assert!((s.cov.as_matrix() - x.as_matrix()).max_abs() <= 1e-8 * x.norm());
        assert!(min_eigenvalue(&x).unwrap() > -1e-12);
    }

    #[test]
    fn exact_subopt_below_bound() {
        let obj = quad14();
        let cert = preset_params(Preset::Hb, 1.0, 4.0).unwrap();
        let params = cert.momentum_params();
        let sigma = SymMatrix::identity(2);
        let rep = stationary_cov(&obj, &params, &sigma).unwrap();
        let xi0 = StateVec::at_rest(vec![1.0, 1.0]);
        let v = v_prefactor(
            &obj,
            &InitialLaw::Point(xi0.clone()),
            params.alpha,
            &sigma,
            cert.rho,
        )
        .unwrap();
        let mut s = GaussianChainState::point(&xi0);
        for k in 1..=50 {
            s = propagate_gaussian(&obj, &params, &sigma, &s, 1).unwrap();
            let ck = crate::certificates::prefactor_ck(
                crate::certificates::PrefactorMethod::Hb,
                k,
                1.0,
                4.0,
                obj.eigenvalues(),
            )
            .unwrap()
            .value;
            let bound = subopt_bound_quadratic(k, 4.0, rep.trace, v, ck, cert.rho);
            assert!(exact_expected_subopt(&obj, &s) <= bound, "k={k}");
        }
    }
}
