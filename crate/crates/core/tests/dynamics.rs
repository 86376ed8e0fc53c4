use momentum_core::engines::{
    closed_loop_matrix, path_rng, run_path, step, Method, MomentumParams, StateVec,
};
use momentum_core::linalg::{dot, norm2};
use momentum_core::problems::{make_test_objective, NoiseKind, NoiseOracle};
use momentum_core::{ConstraintSet, Objective, QuadraticObjective, SymMatrix};
use proptest::prelude::*;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn softplus() -> impl Objective {
    make_test_objective(
        3,
        0.5,
        vec![
            vec![1.0, -2.0, 0.5],
            vec![0.3, 1.0, 1.0],
            vec![-1.5, 0.0, 2.0],
            vec![0.0, 1.0, -1.0],
        ],
    )
    .unwrap()
}

#[test]
fn softplus_gradient_matches_finite_differences() {
    let f = softplus();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g = f.gradient(&x);
        for i in 0..3 {
            let h = 1e-6;
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            let fd = (f.value(&xp) - f.value(&xm)) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-6 * (1.0 + g[i].abs()),
                "coordinate {i}: {fd} vs {}",
                g[i]
            );
        }
    }
}

#[test]
fn softplus_minimizer_is_stationary_and_cocoercive() {
    let f = softplus();
    assert!(norm2(&f.gradient(f.minimizer())) <= 1e-9);
    assert!((f.value(f.minimizer()) - f.f_star()).abs() <= 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let dg: Vec<f64> = f
            .gradient(&x)
            .iter()
            .zip(f.gradient(&y))
            .map(|(a, b)| a - b)
            .collect();
        let dx: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let inner = dot(&dg, &dx);
        assert!(inner >= dot(&dg, &dg) / f.ell() - 1e-12);
        assert!(inner >= f.mu() * dot(&dx, &dx) - 1e-12);
    }
}

proptest! {
    #[test]
    fn projections_are_nonexpansive(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sets = [
            ConstraintSet::ball(vec![0.5, -0.5, 1.0], 1.5).unwrap(),
            ConstraintSet::boxed(vec![-1.0, 0.0, -2.0], vec![1.0, 0.5, 2.0]).unwrap(),
        ];
        for set in &sets {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let (px, py) = (set.project(&x).unwrap(), set.project(&y).unwrap());
            prop_assert!(set.contains(&px, 1e-12));
            let d = |a: &[f64], b: &[f64]| norm2(&a.iter().zip(b).map(|(u, v)| u - v).collect::<Vec<_>>());
            prop_assert!(d(&px, &py) <= d(&x, &y) + 1e-12);
            prop_assert!(d(&set.project(&px).unwrap(), &px) <= 1e-12);
        }
    }
}

#[test]
fn noise_oracles_have_zero_mean_and_stated_second_moment() {
    let cov = SymMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
    let kinds = [
        NoiseKind::Gaussian { cov },
        NoiseKind::ScaledRademacher { sigma: 1.5 },
        NoiseKind::UniformBall { sigma: 0.7 },
    ];
    let n = 200_000;
    for kind in kinds {
        let oracle = NoiseOracle::new(kind.clone(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut mean, mut sq) = ([0.0; 2], 0.0);
        for _ in 0..n {
            let e = oracle.sample(&mut rng);
            mean[0] += e[0];
            mean[1] += e[1];
            sq += dot(&e, &e);
        }
        let scale = oracle.sigma_sq().sqrt();
        for m in mean {
            assert!(
                (m / n as f64).abs() <= 5.0 * scale / (n as f64).sqrt(),
                "{kind:?}"
            );
        }
        let rel = (sq / n as f64 - oracle.sigma_sq()).abs() / oracle.sigma_sq();
        assert!(rel <= 0.02, "{kind:?}: relative second-moment error {rel}");
    }
}

#[test]
fn minimizer_is_a_fixed_point_without_noise() {
    let obj = QuadraticObjective::diagonal(&[1.0, 3.0, 9.0], vec![1.0, -2.0, 0.5], 0.0).unwrap();
    for method in [Method::Gd, Method::Hb, Method::Ag] {
        let beta = if method == Method::Gd { 0.0 } else { 0.4 };
        let params = MomentumParams::new(method, 0.1, beta).unwrap();
        let xi = StateVec::at_rest(obj.minimizer().to_vec());
        let next = step(&xi, &obj, &params, &[0.0; 3], None).unwrap();
        for (a, b) in next.x_curr.iter().zip(obj.minimizer()) {
            assert!((a - b).abs() <= 1e-14);
        }
    }
}

#[test]
fn step_matches_closed_loop_matrix() {
    let q = SymMatrix::from_rows(&[vec![2.0, 0.5, 0.0], vec![0.5, 1.0, 0.2], vec![0.0, 0.2, 4.0]]).unwrap();
    let obj = QuadraticObjective::from_matrix(&q, vec![0.3, -0.1, 0.7], 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for method in [Method::Hb, Method::Ag] {
        let params = MomentumParams::new(method, 0.2, 0.5).unwrap();
        let a = closed_loop_matrix(&obj, &params).unwrap().full;
        let xi = StateVec::new(
            (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let eps: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let next = step(&xi, &obj, &params, &eps, None).unwrap();
        let mut expect = a.matvec(&xi.offset_from(obj.minimizer()));
        for i in 0..3 {
            expect[i] -= params.alpha * eps[i];
        }
        for (got, want) in next.offset_from(obj.minimizer()).iter().zip(&expect) {
            assert!((got - want).abs() <= 1e-12, "{method:?}");
        }
    }
}

#[test]
fn projected_step_stays_feasible() {
    let obj = QuadraticObjective::diagonal(&[1.0, 4.0], vec![-5.0, 5.0], 0.0).unwrap();
    let set = ConstraintSet::ball(vec![0.0, 0.0], 1.0).unwrap();
    let params = MomentumParams::new(Method::Aspg, 0.25, 1.0 / 3.0).unwrap();
    let mut xi = StateVec::at_rest(vec![0.5, 0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let eps: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        xi = step(&xi, &obj, &params, &eps, Some(&set)).unwrap();
        assert!(set.contains(&xi.x_curr, 1e-12));
    }
}

#[test]
fn path_streams_are_reproducible_and_distinct() {
    let draw = |seed, path| {
        let mut r = path_rng(seed, path);
        (0..4).map(|_| r.next_u64()).collect::<Vec<_>>()
    };
    assert_eq!(draw(9, 3), draw(9, 3));
    assert_ne!(draw(9, 3), draw(9, 4));
    assert_ne!(draw(9, 3), draw(10, 3));
}

#[test]
fn run_path_records_gaps() {
    let obj = QuadraticObjective::diagonal(&[1.0, 2.0], vec![0.0; 2], 0.0).unwrap();
    let params = MomentumParams::new(Method::Hb, 0.3, 0.2).unwrap();
    let rec = run_path(
        &StateVec::at_rest(vec![1.0, 1.0]),
        &obj,
        &params,
        &NoiseOracle::zero(2),
        None,
        50,
        0,
        "diag12",
    )
    .unwrap();
    assert_eq!(rec.subopt.len(), 51);
    approx::assert_relative_eq!(rec.subopt[0], 1.5);
    assert!(rec.dist[50] < 1e-6 * rec.dist[0]);
    let mut csv = Vec::new();
    rec.write_csv(&mut csv, true).unwrap();
    assert!(String::from_utf8(csv)
        .unwrap()
        .starts_with("k,f_gap,x_norm_gap,x_0,x_1\n"));
}
