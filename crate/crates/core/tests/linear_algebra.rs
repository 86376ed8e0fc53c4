use momentum_core::linalg::{
    power_norm_curve, psd_sqrt, solve_discrete_lyapunov, solve_linear, sym_eig, Matrix, SymMatrix,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut impl Rng, n: usize) -> Matrix {
    Matrix::from_vec(n, n, (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_spd(rng: &mut impl Rng, n: usize) -> SymMatrix {
    let b = random_matrix(rng, n);
    let m = &(&b * &b.transpose()) + &Matrix::identity(n).scale(0.1);
    SymMatrix::from_matrix_symmetrized(&m)
}

#[test]
fn lyapunov_residual_on_random_stable_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let n = rng.random_range(2..=20);
        let raw = random_matrix(&mut rng, n);
        let radius: f64 = rng.random_range(0.1..0.95);
        let a = raw.scale(radius / raw.spectral_norm());
        let q = random_spd(&mut rng, n);
        let x = solve_discrete_lyapunov(&a, &q).unwrap();
        let resid = &(&x.as_matrix().clone() - &(&(&a * x.as_matrix()) * &a.transpose())) - q.as_matrix();
        assert!(
            resid.max_abs() <= 1e-9 * x.as_matrix().max_abs().max(1.0),
            "n={n} residual {:e}",
            resid.max_abs()
        );
    }
}

#[test]
fn lyapunov_scalar_matches_geometric_series() {
    let a = Matrix::from_vec(1, 1, vec![0.6]).unwrap();
    let x = solve_discrete_lyapunov(&a, &SymMatrix::identity(1)).unwrap();
    approx::assert_relative_eq!(x[(0, 0)], 1.0 / (1.0 - 0.36), max_relative = 1e-14);
}

#[test]
fn power_norm_curve_starts_at_spectral_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random_matrix(&mut rng, 5).scale(0.3);
    let curve = power_norm_curve(&a, 10).unwrap();
    assert_eq!(curve.len(), 10);
    approx::assert_relative_eq!(curve[0], a.spectral_norm(), max_relative = 1e-10);
    for (k, w) in curve.windows(2).enumerate() {
        // submultiplicativity
        assert!(w[1] <= w[0] * curve[0] * (1.0 + 1e-10), "k={k}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigendecomposition_reconstructs(seed in any::<u64>(), n in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_matrix(&mut rng, n);
        let m = SymMatrix::from_matrix_symmetrized(&(&b + &b.transpose()));
        let spec = sym_eig(&m).unwrap();
        prop_assert!(spec.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        let diff = &spec.reconstruct().into_matrix() - m.as_matrix();
        prop_assert!(diff.max_abs() <= 1e-12 * m.as_matrix().max_abs().max(1.0));
        let vtv = &spec.eigenvectors.transpose() * &spec.eigenvectors;
        prop_assert!((&vtv - &Matrix::identity(n)).max_abs() <= 1e-12);
    }

    #[test]
    fn psd_sqrt_squares_back(seed in any::<u64>(), n in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_spd(&mut rng, n);
        let r = psd_sqrt(&m).unwrap();
        let sq = r.as_matrix() * r.as_matrix();
        prop_assert!((&sq - m.as_matrix()).max_abs() <= 1e-10 * m.as_matrix().max_abs());
        prop_assert!(sym_eig(&r).unwrap().min() >= 0.0);
    }

    #[test]
    fn linear_solve_inverts(seed in any::<u64>(), n in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spd(&mut rng, n).into_matrix();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = a.matvec(&x);
        let got = solve_linear(&a, &b).unwrap();
        for (g, e) in got.iter().zip(&x) {
            prop_assert!((g - e).abs() <= 1e-8);
        }
    }
}
