//! Helpers shared by the acceptance suite: seeded random instances, a
//! significant-figure comparator and a pass/fail reporter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use momentum_core::QuadraticObjective;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random diagonal quadratic with `mu = 1`, eigenvalues in `[1, L]` including
/// both ends, and a random minimizer.
pub fn random_quadratic(rng: &mut impl Rng, d_max: usize, l_max: f64) -> QuadraticObjective {
    let d = rng.random_range(2..=d_max);
    let ell = rng.random_range(1.5..=l_max);
    let mut eigs = vec![1.0, ell];
    eigs.extend((2..d).map(|_| rng.random_range(1.0..=ell)));
    let a: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    QuadraticObjective::diagonal(&eigs, a, 0.0).expect("valid spectrum")
}

pub fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

/// Whether `value` agrees with the decimal literal `expected` to the digits
/// the literal shows, capped at six significant figures.
pub fn agrees_to_sig_figs(value: f64, expected: &str) -> bool {
    let target: f64 = expected.parse().expect("numeric literal");
    if target == 0.0 {
        return value == 0.0;
    }
    let mantissa = expected.split(['e', 'E']).next().unwrap_or(expected);
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let shown = digits.trim_start_matches('0').len().clamp(1, 6) as i32;
    let exponent = target.abs().log10().floor() as i32;
    let half_ulp = 0.5 * 10f64.powi(exponent - shown + 1);
    (value - target).abs() <= half_ulp * (1.0 + 1e-12)
}

/// Collects one line per criterion and the overall verdict.
#[derive(Default)]
pub struct Report {
    failed: Vec<u32>,
}

impl Report {
    pub fn record(&mut self, id: u32, title: &str, pass: bool, detail: &str) {
        println!(
            "criterion {id} {}: {title} | {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            self.failed.push(id);
        }
    }

    pub fn failed(&self) -> &[u32] {
        &self.failed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig_fig_comparison() {
        assert!(agrees_to_sig_figs(2.2360679, "2.23607"));
        assert!(!agrees_to_sig_figs(2.23609, "2.23607"));
        assert!(agrees_to_sig_figs(0.0551748, "0.055175"));
        assert!(agrees_to_sig_figs(1.6609712e-6, "1.66097e-6"));
        assert!(!agrees_to_sig_figs(1.587587, "1.587642"));
        assert!(agrees_to_sig_figs(44.0, "44"));
        assert!(agrees_to_sig_figs(0.25, "0.25"));
    }
}
