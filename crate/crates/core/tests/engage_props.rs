use proptest::prelude::*;
use rlhmm::engage::engagement_score;

proptest! {
    #[test]
    fn score_increases_with_each_gamma(g in prop::collection::vec(0.001..0.99f64, 2..20), k in 0usize..20, bump in 1e-6..0.005f64) {
        let k = k % g.len();
        let window: Vec<usize> = (1..=g.len()).collect();
        let mut h = g.clone();
        h[k] += bump;
        prop_assert!(engagement_score(&h, &window).unwrap() > engagement_score(&g, &window).unwrap());
    }

    #[test]
    fn disjoint_equal_windows_average(g in prop::collection::vec(0.001..0.999f64, 2..40)) {
        let half = g.len() / 2;
        let a: Vec<usize> = (1..=half).collect();
        let b: Vec<usize> = (half + 1..=2 * half).collect();
        let ab: Vec<usize> = (1..=2 * half).collect();
        let lhs = engagement_score(&g, &ab).unwrap();
        let rhs = (engagement_score(&g, &a).unwrap() + engagement_score(&g, &b).unwrap()) / 2.0;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }
}
