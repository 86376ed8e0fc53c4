//! Weighted norms and Wasserstein distances.
//!
//! The certified metric is `||z||_S^2 = z^T S z` with
//! `S = P~ (x) I_d + blockdiag(Q/2, 0)`. Distances between Gaussian laws are
//! exact through the Bures formula, and 1-D empirical laws use the sorted
//! coupling.

use serde::Serialize;

use crate::engines::{closed_loop_matrix, MomentumParams, StateVec};
use crate::error::{Error, Result};
use crate::gaussian::stationary_cov;
use crate::linalg::{psd_sqrt, sym_eig, Matrix, Spectrum, SymMatrix};
use crate::problems::{Objective, QuadraticObjective};

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedNorm {
    s: SymMatrix,
    sqrt_s: SymMatrix,
}

impl WeightedNorm {
    /// Any positive definite `S`.
    pub fn from_matrix(s: SymMatrix) -> Result<Self> {
        let spec = sym_eig(&s)?;
        if spec.min() <= 1e-12 * spec.max().abs().max(f64::MIN_POSITIVE) {
            return Err(Error::Degenerate(format!(
                "weight matrix is not positive definite (min eigenvalue {:e})",
                spec.min()
            )));
        }
        let sqrt_s = spec.map(f64::sqrt);
        Ok(Self { s, sqrt_s })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            s: SymMatrix::identity(n),
            sqrt_s: SymMatrix::identity(n),
        }
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.s
    }

    pub fn sqrt(&self) -> &SymMatrix {
        &self.sqrt_s
    }

    pub fn dim(&self) -> usize {
        self.s.dim()
    }

    pub fn norm(&self, z: &[f64]) -> f64 {
        self.s.quad_form(z).max(0.0).sqrt()
    }

    fn map_vec(&self, z: &[f64]) -> Vec<f64> {
        self.sqrt_s.as_matrix().matvec(z)
    }

    fn map_cov(&self, c: &SymMatrix) -> SymMatrix {
        c.congruence(self.sqrt_s.as_matrix())
    }
}

/// `S = P~ (x) I_d + blockdiag(Q/2, 0)`.
pub fn build_weighted_norm(p_tilde: &SymMatrix, obj: &QuadraticObjective) -> Result<WeightedNorm> {
    if p_tilde.dim() != 2 {
        return Err(Error::InvalidInput("P~ must be 2x2".into()));
    }
    if p_tilde[(1, 1)] == 0.0 {
        return Err(Error::DegenerateWeight);
    }
    let pmin = sym_eig(p_tilde)?.min();
    if pmin < -1e-12 * p_tilde.norm() {
        return Err(Error::NotPsd { min_eigenvalue: pmin });
    }
    let d = obj.dim();
    let mut s = p_tilde.kron(&SymMatrix::identity(d)).into_matrix();
    let q = obj.hessian();
    for i in 0..d {
        for j in 0..d {
            s[(i, j)] += 0.5 * q[(i, j)];
        }
    }
    WeightedNorm::from_matrix(SymMatrix::from_matrix_symmetrized(&s))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianMeasure {
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
}

impl GaussianMeasure {
    pub fn new(mean: Vec<f64>, cov: SymMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::InvalidInput(
                "mean and covariance dimensions differ".into(),
            ));
        }
        Ok(Self { mean, cov })
    }

    pub fn dirac(mean: Vec<f64>) -> Self {
        let n = mean.len();
        Self {
            mean,
            cov: SymMatrix::zeros(n),
        }
    }
}

/// `Tr(C1 + C2 - 2 (C2^{1/2} C1 C2^{1/2})^{1/2})`.
fn bures_sq_direct(c1: &SymMatrix, c2: &SymMatrix) -> Result<f64> {
    let r2 = psd_sqrt(c2)?;
    let cross = psd_sqrt(&c1.congruence(r2.as_matrix()))?;
    Ok((c1.trace() + c2.trace() - 2.0 * cross.trace()).max(0.0))
}

/// Squared 2-Wasserstein distance between Gaussians, optionally in the `S` geometry.
pub fn w2_gaussian_sq(
    g1: &GaussianMeasure,
    g2: &GaussianMeasure,
    weight: Option<&WeightedNorm>,
) -> Result<f64> {
    if g1.mean.len() != g2.mean.len() {
        return Err(Error::InvalidInput(
            "measures live in different dimensions".into(),
        ));
    }
    if let Some(w) = weight {
        if w.dim() != g1.mean.len() {
            return Err(Error::InvalidInput("weight dimension mismatch".into()));
        }
    }
    for g in [g1, g2] {
        let m = sym_eig(&g.cov)?.min();
        if m < -1e-10 * g.cov.norm().max(1.0) {
            return Err(Error::NotPsd { min_eigenvalue: m });
        }
    }
    let dm: Vec<f64> = g1.mean.iter().zip(&g2.mean).map(|(a, b)| a - b).collect();
    let (mean_sq, c1, c2) = match weight {
        Some(w) => (w.s.quad_form(&dm), w.map_cov(&g1.cov), w.map_cov(&g2.cov)),
        None => (dm.iter().map(|v| v * v).sum(), g1.cov.clone(), g2.cov.clone()),
    };
    Ok(mean_sq.max(0.0) + bures_sq_direct(&c1, &c2)?)
}

pub fn w2_gaussian(g1: &GaussianMeasure, g2: &GaussianMeasure, weight: Option<&WeightedNorm>) -> Result<f64> {
    w2_gaussian_sq(g1, g2, weight).map(f64::sqrt)
}

/// `Bures^2(B - E, B)` for small `E` without cancellation.
///
/// Writing `(B^{1/2}(B - E)B^{1/2})^{1/2} = B - D`, `D` solves
/// `BD + DB - D^2 = B^{1/2} E B^{1/2}` and the distance equals `Tr(B^{-1} D^2)`.
/// Returns `None` when `B` is near singular or the fixed point iteration
/// does not settle, leaving the caller to use the direct formula.
fn bures_sq_perturbative(b: &Spectrum, e: &SymMatrix) -> Option<f64> {
    let n = b.dim();
    let lam = &b.eigenvalues;
    if b.min() <= 1e-10 * b.max() {
        return None;
    }
    let u = &b.eigenvectors;
    let eh = u.transpose().matmul(e.as_matrix()).matmul(u);
    let mut f = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            f[(i, j)] = lam[i].sqrt() * eh[(i, j)] * lam[j].sqrt();
        }
    }
    let mut d = Matrix::zeros(n, n);
    for _ in 0..500 {
        let d2 = d.matmul(&d);
        let mut next = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                next[(i, j)] = (f[(i, j)] + d2[(i, j)]) / (lam[i] + lam[j]);
            }
        }
        let change = (&next - &d).max_abs();
        let size = next.max_abs();
        d = next;
        if !d.is_finite() || size > 0.5 * b.min() {
            return None;
        }
        if change <= 1e-15 * size || size == 0.0 {
            let d2 = d.matmul(&d);
            return Some((0..n).map(|i| d2[(i, i)] / lam[i]).sum::<f64>().max(0.0));
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionPoint {
    pub k: usize,
    pub w2_sq: f64,
    pub rho_pow_k: f64,
    /// `W2^2(nu_k, pi) / (rho^k W2^2(nu_0, pi))`; zero when `nu_0 = pi`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionCurve {
    pub rho: f64,
    pub points: Vec<ContractionPoint>,
    pub max_ratio: f64,
    /// Whether `W2(nu_k, pi) <= rho^k W2(nu_0, pi)` held at every `k` (up to `1e-9` relative).
    pub unsquared_holds: bool,
}

/// Exact `W2^2(nu_k, pi)` along a Gaussian chain started from `N(mean0, cov0)`.
///
/// Both the mean offset and `X - C_k` evolve as `A_Q (.) A_Q^T`, so they are
/// propagated directly instead of being recovered by subtraction.
pub fn contraction_curve(
    obj: &QuadraticObjective,
    params: &MomentumParams,
    sigma: &SymMatrix,
    start: &GaussianMeasure,
    k_max: usize,
    weight: Option<&WeightedNorm>,
) -> Result<ContractionCurve> {
    let rho = params.certified.as_ref().ok_or(Error::NoCertificate)?.rho;
    let d = obj.dim();
    if start.mean.len() != 2 * d {
        return Err(Error::InvalidInput(
            "start law must live on the stacked state".into(),
        ));
    }
    let a = closed_loop_matrix(obj, params)?.full;
    let x = stationary_cov(obj, params, sigma)?.x;
    let ident = WeightedNorm::identity(2 * d);
    let w = weight.unwrap_or(&ident);
    if w.dim() != 2 * d {
        return Err(Error::InvalidInput("weight dimension mismatch".into()));
    }
    let xs = w.map_cov(&x);
    let b = sym_eig(&xs)?;
    let star = StateVec::at_rest(obj.minimizer().to_vec()).stacked();

    let mut delta: Vec<f64> = start.mean.iter().zip(&star).map(|(m, s)| m - s).collect();
    let mut e = x.sub(&start.cov);
    let distance = |delta: &[f64], e: &SymMatrix| -> Result<f64> {
        let mean_sq = w.map_vec(delta).iter().map(|v| v * v).sum::<f64>();
        let es = w.map_cov(e);
        let direct = bures_sq_direct(&xs.sub(&es), &xs)?;
        let cov_sq = if direct > 1e-4 * xs.trace() {
            direct
        } else {
            bures_sq_perturbative(&b, &es).unwrap_or(direct)
        };
        Ok(mean_sq + cov_sq)
    };

    let w0 = distance(&delta, &e)?;
    let mut points = vec![ContractionPoint {
        k: 0,
        w2_sq: w0,
        rho_pow_k: 1.0,
        ratio: if w0 > 0.0 { 1.0 } else { 0.0 },
    }];
    let mut unsquared_holds = true;
    for k in 1..=k_max {
        delta = a.matvec(&delta);
        e = e.congruence(&a);
        let wk = distance(&delta, &e)?;
        let rk = rho.powi(k as i32);
        let ratio = if w0 > 0.0 { wk / (rk * w0) } else { 0.0 };
        if wk > rk * rk * w0 * (1.0 + 1e-9) {
            unsquared_holds = false;
        }
        points.push(ContractionPoint {
            k,
            w2_sq: wk,
            rho_pow_k: rk,
            ratio,
        });
    }
    let max_ratio = points[1..].iter().map(|p| p.ratio).fold(0.0, f64::max);
    Ok(ContractionCurve {
        rho,
        points,
        max_ratio,
        unsquared_holds,
    })
}

/// `((1/n) sum |x_(i) - y_(i)|^p)^{1/p}` over sorted samples.
pub fn wp_empirical_1d(xs: &[f64], ys: &[f64], p: f64) -> Result<f64> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "need equal non-empty sample counts, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidInput(format!("p must be >= 1, got {p}")));
    }
    let a = crate::stats::sort_finite(xs);
    let b = crate::stats::sort_finite(ys);
    let s = a.iter().zip(&b).map(|(x, y)| (x - y).abs().powf(p)).sum::<f64>() / a.len() as f64;
    Ok(s.powf(1.0 / p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct C0 {
    pub c0: f64,
    pub c_hat0: f64,
}

/// Smallest positive eigenvalue `c^_0` of `P~ + diag(mu/2, 0)` and `c0 = min{c^_0 psi, 1}`.
pub fn c0_constant(p_tilde: &SymMatrix, mu: f64, psi: f64) -> Result<C0> {
    if p_tilde.dim() != 2 {
        return Err(Error::InvalidInput("P~ must be 2x2".into()));
    }
    if !(psi > 0.0) {
        return Err(Error::InvalidInput("psi must be positive".into()));
    }
    let m = p_tilde.add(&SymMatrix::from_diag(&[mu / 2.0, 0.0]));
    let spec = sym_eig(&m)?;
    let floor = 1e-12 * spec.max().abs().max(f64::MIN_POSITIVE);
    let c_hat0 = spec
        .eigenvalues
        .iter()
        .copied()
        .find(|&l| l > floor)
        .ok_or_else(|| Error::Degenerate("no positive eigenvalue".into()))?;
    Ok(C0 {
        c0: (c_hat0 * psi).min(1.0),
        c_hat0,
    })
}

/// `sqrt(2) D_C d_psi^{1/p}`, using that `C x C` has diameter `sqrt(2) D_C`.
pub fn compact_wp_bound(d_psi: f64, diameter: f64, p: f64) -> Result<f64> {
    if !(d_psi >= 0.0) || !(p >= 1.0) {
        return Err(Error::InvalidInput("need d_psi >= 0 and p >= 1".into()));
    }
    Ok(std::f64::consts::SQRT_2 * diameter * d_psi.powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificates::{p_tilde_ag, preset_params, Preset};
    use approx::assert_abs_diff_eq;

    fn g1(m: f64, v: f64) -> GaussianMeasure {
        GaussianMeasure::new(vec![m], SymMatrix::from_diag(&[v])).unwrap()
    }

    #[test]
    fn weighted_norm_block_layout() {
        let obj = QuadraticObjective::diagonal(&[1.0, 4.0], vec![0.0; 2], 0.0).unwrap();
        let w = build_weighted_norm(&SymMatrix::identity(2), &obj).unwrap();
        assert_eq!(w.matrix(), &SymMatrix::from_diag(&[1.5, 3.0, 1.0, 1.0]));
        let ag = build_weighted_norm(&p_tilde_ag(1.0, 4.0), &obj);
        assert!(ag.is_ok());
        let bad = SymMatrix::from_diag(&[1.0, 0.0]);
        assert!(matches!(
            build_weighted_norm(&bad, &obj),
            Err(Error::DegenerateWeight)
        ));
    }

    #[test]
    fn identity_weight_is_euclidean() {
        let w = WeightedNorm::identity(2);
        assert_abs_diff_eq!(w.norm(&[3.0, 4.0]), 5.0);
    }

    #[test]
    fn gaussian_examples() {
        assert_abs_diff_eq!(
            w2_gaussian(&g1(0.0, 1.0), &g1(3.0, 1.0), None).unwrap(),
            3.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            w2_gaussian(&g1(0.0, 1.0), &g1(0.0, 4.0), None).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_eq!(w2_gaussian(&g1(1.0, 2.0), &g1(1.0, 2.0), None).unwrap(), 0.0);
    }

    #[test]
    fn empirical_examples() {
        assert_abs_diff_eq!(wp_empirical_1d(&[0.0, 1.0], &[1.0, 2.0], 1.0).unwrap(), 1.0);
        assert_abs_diff_eq!(wp_empirical_1d(&[0.0, 2.0], &[1.0, 1.0], 1.0).unwrap(), 1.0);
        assert_eq!(wp_empirical_1d(&[0.5, 0.2], &[0.2, 0.5], 2.0).unwrap(), 0.0);
        assert!(wp_empirical_1d(&[0.0], &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn c0_examples() {
        let r = c0_constant(&p_tilde_ag(1.0, 4.0), 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(r.c_hat0, 1.5 - 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.c0, 0.085786, epsilon = 5e-7);
        let big = c0_constant(&p_tilde_ag(1.0, 4.0), 1.0, 100.0).unwrap();
        assert_eq!(big.c0, 1.0);
        assert!(matches!(
            c0_constant(&SymMatrix::zeros(2), 0.0, 1.0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn compact_bound_examples() {
        assert_eq!(compact_wp_bound(0.0, 1.0, 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(compact_wp_bound(1.0, 1.0, 1.0).unwrap(), 2f64.sqrt());
        assert_abs_diff_eq!(
            compact_wp_bound(4.0, 1.0, 2.0).unwrap(),
            2.0 * 2f64.sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn perturbative_matches_direct_for_moderate_e() {
        let b = SymMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let e = SymMatrix::from_rows(&[vec![0.05, -0.01], vec![-0.01, 0.02]]).unwrap();
        let direct = bures_sq_direct(&b.sub(&e), &b).unwrap();
        let pert = bures_sq_perturbative(&sym_eig(&b).unwrap(), &e).unwrap();
        assert_abs_diff_eq!(pert, direct, epsilon = 1e-14);
    }

    #[test]
    fn stationary_start_has_zero_distance() {
        let obj = QuadraticObjective::diagonal(&[1.0, 4.0], vec![0.0; 2], 0.0).unwrap();
        let cert = preset_params(Preset::Ag, 1.0, 4.0).unwrap();
        let params = cert.momentum_params();
        let sigma = SymMatrix::identity(2);
        let x = stationary_cov(&obj, &params, &sigma).unwrap().x;
        let start = GaussianMeasure::new(vec![0.0; 4], x).unwrap();
        let w = build_weighted_norm(cert.p_tilde.as_ref().unwrap(), &obj).unwrap();
        let c = contraction_curve(&obj, &params, &sigma, &start, 20, Some(&w)).unwrap();
        assert!(c.points.iter().all(|p| p.w2_sq < 1e-20));
    }

    #[test]
    fn noiseless_chain_reduces_to_mean_norm() {
        let obj = QuadraticObjective::diagonal(&[1.0, 4.0], vec![0.0; 2], 0.0).unwrap();
        let cert = preset_params(Preset::Ag, 1.0, 4.0).unwrap();
        let params = cert.momentum_params();
        let w = build_weighted_norm(cert.p_tilde.as_ref().unwrap(), &obj).unwrap();
        let start = GaussianMeasure::dirac(vec![1.0, -1.0, 1.0, -1.0]);
        let c = contraction_curve(&obj, &params, &SymMatrix::zeros(2), &start, 30, Some(&w)).unwrap();
        let a = closed_loop_matrix(&obj, &params).unwrap().full;
        let mut z = start.mean.clone();
        for p in &c.points[1..] {
            z = a.matvec(&z);
            assert_abs_diff_eq!(p.w2_sq, w.matrix().quad_form(&z), epsilon = 1e-14);
        }
        assert!(c.max_ratio <= 1.0 + 1e-9);
    }

    #[test]
    fn ag_contracts_in_weighted_metric() {
        let obj = QuadraticObjective::diagonal(&[1.0, 4.0], vec![0.5, -0.5], 0.0).unwrap();
        let cert = preset_params(Preset::Ag, 1.0, 4.0).unwrap();
        let params = cert.momentum_params();
        let w = build_weighted_norm(cert.p_tilde.as_ref().unwrap(), &obj).unwrap();
        let start = GaussianMeasure::dirac(vec![2.0, 1.0, 2.0, 1.0]);
        let c = contraction_curve(&obj, &params, &SymMatrix::identity(2), &start, 100, Some(&w)).unwrap();
        assert!(c.max_ratio <= 1.0 + 1e-9, "{}", c.max_ratio);
    }
}
