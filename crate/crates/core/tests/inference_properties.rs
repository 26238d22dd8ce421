mod common;

use common::{config, counts};
use iud_core::inference::{
    canonical_covariance, confidence_interval, drift, homogeneity_chi2, information_step,
    limit_proportions, wald_statistic,
};
use iud_core::special::normal_quantile;
use iud_core::{AllocationRule, CountsTensor};
use proptest::collection::vec;
use proptest::prelude::*;

fn observed(c: &CountsTensor, h: usize) -> bool {
    (0..c.num_treatments()).all(|j| c.assignments(j, h) > 0)
}

fn permuted(c: &CountsTensor, shift: usize) -> CountsTensor {
    let j = c.num_treatments();
    let order: Vec<usize> = (0..j).map(|k| (k + shift) % j).collect();
    let s: Vec<Vec<u64>> = order.iter().map(|&k| c.successes_row(k).to_vec()).collect();
    let f: Vec<Vec<u64>> = order.iter().map(|&k| c.failures_row(k).to_vec()).collect();
    CountsTensor::from_rows(&s, &f).unwrap()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn chi2_equals_squared_wald_for_two_arms(c in counts(2, 4, 60), h in 0usize..4) {
        let h = h % c.num_strata();
        prop_assume!(observed(&c, h));
        let (Ok(u), Ok(chi)) = (wald_statistic(&c, 0, 1, h), homogeneity_chi2(&c, h)) else {
            return Ok(());
        };
        prop_assert!((u * u - chi).abs() <= 1e-10 * chi.max(1.0), "{} vs {}", u * u, chi);
    }

    #[test]
    fn chi2_ignores_reference_treatment(c in counts(5, 3, 60), h in 0usize..3, shift in 1usize..5) {
        let h = h % c.num_strata();
        prop_assume!(observed(&c, h));
        let (Ok(a), Ok(b)) = (homogeneity_chi2(&c, h), homogeneity_chi2(&permuted(&c, shift), h)) else {
            return Ok(());
        };
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-8 * a.max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn interval_excludes_zero_exactly_when_test_rejects(
        c in counts(3, 3, 60),
        h in 0usize..3,
        level in 0.5f64..0.999,
    ) {
        let h = h % c.num_strata();
        prop_assume!(observed(&c, h));
        let Ok(u) = wald_statistic(&c, 0, 1, h) else { return Ok(()); };
        let (lo, hi) = confidence_interval(&c, 0, 1, h, level).unwrap();
        let z = normal_quantile(1.0 - (1.0 - level) / 2.0);
        // Skip points within rounding of the rejection boundary.
        prop_assume!((u.abs() - z).abs() > 1e-9);
        prop_assert_eq!(lo > 0.0 || hi < 0.0, u.abs() > z);
    }

    #[test]
    fn wald_is_antisymmetric(c in counts(3, 3, 60), h in 0usize..3) {
        let h = h % c.num_strata();
        prop_assume!(observed(&c, h));
        if let (Ok(a), Ok(b)) = (wald_statistic(&c, 0, 1, h), wald_statistic(&c, 1, 0, h)) {
            prop_assert_eq!(a, -b);
        }
    }

    #[test]
    fn drift_is_antisymmetric_and_signed(
        theta in vec(vec(0.01f64..0.99, 3), 2..=4),
        weights in vec(0.1f64..1.0, 3),
    ) {
        let total: f64 = weights.iter().sum();
        let p: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let rule = AllocationRule::default();
        for h in 0..3 {
            let a = drift(&theta, &p, &rule, 0, 1, h).unwrap();
            let b = drift(&theta, &p, &rule, 1, 0, h).unwrap();
            prop_assert!((a + b).abs() <= 1e-12);
            prop_assert_eq!(a > 0.0, theta[0][h] > theta[1][h]);
            let pi = limit_proportions(&theta.iter().map(|r| r[h]).collect::<Vec<_>>(), &rule).unwrap();
            prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn canonical_covariance_is_a_correlation(t_i in 0.01f64..=1.0, t_j in 0.01f64..=1.0, n in 100u64..100_000) {
        let (lo, hi) = if t_i <= t_j { (t_i, t_j) } else { (t_j, t_i) };
        let r = canonical_covariance(lo, hi, n).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert_eq!(canonical_covariance(hi, hi, n).unwrap(), 1.0);
        prop_assert!(information_step(n, lo) <= information_step(n, hi));
        prop_assert_eq!(information_step(n, 1.0), n);
    }
}
