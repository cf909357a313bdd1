//! Cross-validation assembly and bootstrap bookkeeping.

use proptest::prelude::*;
use rlhmm::em::{fit, observed_log_likelihoods, FitConfig};
use rlhmm::engage::{engagement_report, quartile_windows};
use rlhmm::inference::{bootstrap, bootstrap_from, cross_validate, fold_assignment, BootstrapOptions, GridPoint};
use rlhmm::scalar::logit;
use rlhmm::sim::{generate, SimScenario};
use rlhmm::{BasisSpec, Dataset, PenaltySpec};

fn data(n: usize, horizon: usize, seed: u64) -> Dataset {
    generate(&SimScenario::case1(n, horizon, seed)).unwrap().dataset
}

fn quick() -> FitConfig {
    let mut c = FitConfig {
        penalty: PenaltySpec::fused(1.0, 1.0),
        ..FitConfig::default()
    };
    c.init.starts = 1;
    c
}

#[test]
fn leave_one_out_score_is_assembled_by_hand() {
    let d = data(3, 20, 31);
    let spec = BasisSpec::unit_linear_two_action();
    let cfg = quick();
    let grid = [GridPoint::new(1.0, 1.0)];
    let report = cross_validate::<f64>(&d, &spec, &cfg, &grid, 3).unwrap();
    let mut total = 0.0;
    for held in 0..3 {
        let train: Vec<usize> = (0..3).filter(|&i| i != held).collect();
        let fitted = fit::<f64>(&d.select(&train), &spec, &cfg).unwrap();
        total += observed_log_likelihoods(&fitted.params, &spec, &d.select(&[held])).unwrap()[0];
    }
    let expect = total / 60.0;
    assert!(
        (report.scores[0] - expect).abs() <= 1e-12,
        "{} vs {expect}",
        report.scores[0]
    );
    let mut folds = report.assignment.clone();
    folds.sort_unstable();
    assert_eq!(folds, vec![0, 1, 2]);
}

#[test]
fn ties_go_to_the_larger_penalty() {
    // With a single transition the difference operator is empty, so every
    // penalty gives the same fit.
    let d = data(4, 2, 3);
    let spec = BasisSpec::unit_linear_two_action();
    let grid = GridPoint::diagonal(&[0.0, 1.0, f64::INFINITY]);
    let report = cross_validate::<f64>(&d, &spec, &quick(), &grid, 2).unwrap();
    assert_eq!(report.scores[0], report.scores[2]);
    assert_eq!(report.best, 2);
    assert!(report.scores.iter().all(|s| s.is_finite()));
    let best = report.scores[report.best];
    assert!(report.scores.iter().all(|&s| s <= best + 1e-12 * best.abs()));
}

#[test]
fn cv_rejects_bad_folds() {
    let d = data(3, 10, 1);
    let spec = BasisSpec::unit_linear_two_action();
    let grid = [GridPoint::new(1.0, 1.0)];
    assert!(cross_validate::<f64>(&d, &spec, &quick(), &grid, 1).is_err());
    assert!(cross_validate::<f64>(&d, &spec, &quick(), &grid, 4).is_err());
    assert!(cross_validate::<f64>(&d, &spec, &quick(), &[], 2).is_err());
}

proptest! {
    #[test]
    fn folds_partition_subjects(n in 2usize..200, k in 2usize..10, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let a = fold_assignment(n, k, seed).unwrap();
        prop_assert_eq!(a.len(), n);
        let mut sizes = vec![0usize; k];
        for &f in &a {
            prop_assert!(f < k);
            sizes[f] += 1;
        }
        prop_assert!(sizes.iter().all(|&s| s == n / k || s == n / k + 1));
    }
}

#[test]
fn single_subject_bootstrap_is_degenerate() {
    let d = data(1, 16, 5);
    let spec = BasisSpec::unit_linear_two_action();
    let report = bootstrap::<f64>(&d, &spec, &quick(), &BootstrapOptions::quartiles(3, 16, 1)).unwrap();
    assert!(report.degenerate);
    assert!(report.se.iter().all(|&s| s == 0.0));
    assert!(report.resamples.iter().all(|r| r == &vec![0]));
}

#[test]
fn bootstrap_resamples_whole_sessions() {
    let d = data(8, 16, 6);
    let spec = BasisSpec::unit_linear_two_action();
    let cfg = quick();
    let full = fit::<f64>(&d, &spec, &cfg).unwrap();
    let report = bootstrap_from(&d, &spec, &cfg, &full, &BootstrapOptions::quartiles(6, 16, 2)).unwrap();
    assert_eq!(report.estimates.len() + report.failures.len(), 6);
    for idx in &report.resamples {
        assert_eq!(idx.len(), 8);
        let sample = d.select(idx);
        for (s, &i) in sample.sessions().iter().zip(idx) {
            assert_eq!(s, &d.sessions()[i]);
        }
    }
    assert_eq!(report.names.len(), report.estimate.len());
    for (k, name) in report.names.iter().enumerate() {
        let [lo, hi] = report.ci95[k];
        assert!(lo < hi, "{name}");
        if name == "pi1" {
            assert!(lo > 0.0 && hi < 1.0);
            let c = logit(report.estimate[k].clamp(1e-6, 1.0 - 1e-6));
            assert!(logit(lo) < c && c < logit(hi));
            assert!(((logit(lo) + logit(hi)) / 2.0 - c).abs() < 1e-9);
        } else {
            assert!(((lo + hi) / 2.0 - report.estimate[k]).abs() < 1e-12);
        }
    }
    let band = report.group_rate_band();
    let eng = engagement_report(
        &full.posteriors,
        &vec!["x".to_string(); 8],
        &quartile_windows(16).unwrap(),
    )
    .unwrap()
    .with_band(band.clone())
    .unwrap();
    for (r, b) in eng.group_rate.iter().zip(&band) {
        assert!(b[0] <= *r && *r <= b[1]);
    }
}

#[test]
fn bootstrap_options_validate() {
    let d = data(4, 16, 6);
    let spec = BasisSpec::unit_linear_two_action();
    let mut o = BootstrapOptions::quartiles(1, 16, 0);
    assert!(bootstrap::<f64>(&d, &spec, &quick(), &o).is_err());
    o.replicates = 2;
    o.targets = vec![16];
    assert!(bootstrap::<f64>(&d, &spec, &quick(), &o).is_err());
}
