//! K-fold cross-validation over penalty grids and the subject-level
//! nonparametric bootstrap.

use crate::basis::BasisSpec;
use crate::data::Dataset;
use crate::em::{fit, fit_from, observed_log_likelihoods, FitConfig, FitResult, ModelKind};
use crate::error::{Error, Result};
use crate::genlasso::PenaltySpec;
use crate::params::ModelParams;
use crate::scalar::{logistic, logit, Scalar};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One (λ₀, λ₁) pair; either may be `f64::INFINITY`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    #[serde(with = "crate::serde_ext::extended_f64")]
    pub lambda0: f64,
    #[serde(with = "crate::serde_ext::extended_f64")]
    pub lambda1: f64,
}

impl GridPoint {
    pub fn new(lambda0: f64, lambda1: f64) -> Self {
        GridPoint { lambda0, lambda1 }
    }

    pub fn diagonal(values: &[f64]) -> Vec<GridPoint> {
        values.iter().map(|&v| GridPoint::new(v, v)).collect()
    }

    /// Cartesian product `values × values`.
    pub fn product(values: &[f64]) -> Vec<GridPoint> {
        values
            .iter()
            .flat_map(|&a| values.iter().map(move |&b| GridPoint::new(a, b)))
            .collect()
    }

    fn penalty(&self, order: usize) -> PenaltySpec {
        PenaltySpec {
            order,
            lambda0: self.lambda0,
            lambda1: self.lambda1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub grid: Vec<GridPoint>,
    /// (nT)⁻¹ Σ_k Σ_{i ∈ fold k} held-out log-likelihood, per grid point.
    pub scores: Vec<f64>,
    /// Held-out log-likelihood sums, `fold_totals[point][fold]`.
    pub fold_totals: Vec<Vec<f64>>,
    pub folds: usize,
    pub fold_seed: u64,
    /// Fold index of each subject, in dataset order.
    pub assignment: Vec<usize>,
    pub best: usize,
    pub best_point: GridPoint,
    pub order: usize,
    pub model: ModelKind,
    pub note: String,
}

/// Seeded shuffle of subjects dealt round-robin into `k` folds.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("need K ≥ 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::Config(format!("{n} subjects cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok(assignment)
}

/// Scores every grid point by K-fold CV and picks the maximiser; exact ties
/// go to the larger (λ₀, λ₁).
pub fn cross_validate<T: Scalar>(
    data: &Dataset,
    spec: &BasisSpec,
    config: &FitConfig,
    grid: &[GridPoint],
    k: usize,
) -> Result<CvReport> {
    config.validate()?;
    if grid.is_empty() {
        return Err(Error::Config("penalty grid is empty".into()));
    }
    for g in grid {
        g.penalty(config.penalty.order).validate()?;
    }
    let n = data.n_subjects();
    let assignment = fold_assignment(n, k, config.seed)?;
    let members: Vec<(Vec<usize>, Vec<usize>)> = (0..k)
        .map(|f| {
            let test = (0..n).filter(|&i| assignment[i] == f).collect::<Vec<_>>();
            let train = (0..n).filter(|&i| assignment[i] != f).collect::<Vec<_>>();
            (train, test)
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..k).map(move |f| (g, f))).collect();
    let totals = jobs
        .par_iter()
        .map(|&(g, f)| {
            let (train, test) = &members[f];
            let cfg = FitConfig {
                penalty: grid[g].penalty(config.penalty.order),
                ..config.clone()
            };
            let fitted = fit::<T>(&data.select(train), spec, &cfg)?;
            let held = observed_log_likelihoods(&fitted.params, spec, &data.select(test))?;
            Ok(held.iter().map(|v| v.to_f64_lossy()).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;

    let denom = (n * data.horizon()) as f64;
    let fold_totals: Vec<Vec<f64>> = totals.chunks(k).map(|c| c.to_vec()).collect();
    let scores: Vec<f64> = fold_totals.iter().map(|c| c.iter().sum::<f64>() / denom).collect();
    if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numerical(format!("CV score not finite at grid point {bad}")));
    }
    let mut best = 0;
    for g in 1..grid.len() {
        let (a, b) = (scores[g], scores[best]);
        let tie = (a - b).abs() <= 1e-12 * b.abs().max(1.0);
        let larger = (grid[g].lambda0, grid[g].lambda1) > (grid[best].lambda0, grid[best].lambda1);
        if (!tie && a > b) || (tie && larger) {
            best = g;
        }
    }
    Ok(CvReport {
        grid: grid.to_vec(),
        scores,
        fold_totals,
        folds: k,
        fold_seed: config.seed,
        assignment,
        best,
        best_point: grid[best],
        order: config.penalty.order,
        model: config.model,
        note: "penalty weights scanned over a declared grid rather than solution-path knots".into(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapOptions {
    pub replicates: usize,
    /// 1-based transition indices at which ζ₀, ζ₁ are reported.
    pub targets: Vec<usize>,
    /// Refit every replicate from the configured starts instead of the
    /// full-data estimate.
    #[serde(default)]
    pub cold_start: bool,
    pub seed: u64,
}

impl BootstrapOptions {
    /// B replicates with ζ reported at T/4 and 3T/4.
    pub fn quartiles(replicates: usize, horizon: usize, seed: u64) -> Self {
        BootstrapOptions {
            replicates,
            targets: vec![(horizon / 4).max(1), (3 * horizon / 4).max(1)],
            cold_start: false,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub replicates: usize,
    pub seed: u64,
    pub names: Vec<String>,
    /// Full-data estimate.
    pub estimate: Vec<f64>,
    /// Successful replicates only, `estimates[b][parameter]`.
    pub estimates: Vec<Vec<f64>>,
    /// Resampled subject indices of every replicate.
    pub resamples: Vec<Vec<usize>>,
    pub failures: Vec<ReplicateFailure>,
    pub se: Vec<f64>,
    /// estimate ± 1.96·se; π₁ built on the logit scale.
    pub ci95: Vec<[f64; 2]>,
    pub targets: Vec<usize>,
    /// n⁻¹ Σᵢ γ_i1t of the full-data fit and its bootstrap standard error.
    pub group_rate: Vec<f64>,
    pub group_rate_se: Vec<f64>,
    pub degenerate: bool,
    pub cold_start: bool,
}

impl BootstrapReport {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Pointwise band for the group engagement rate, clamped to [0, 1].
    pub fn group_rate_band(&self) -> Vec<[f64; 2]> {
        self.group_rate
            .iter()
            .zip(&self.group_rate_se)
            .map(|(&r, &s)| [(r - Z95 * s).max(0.0), (r + Z95 * s).min(1.0)])
            .collect()
    }
}

pub const Z95: f64 = 1.959_963_984_540_054;
const MAX_FAILURE_RATE: f64 = 0.2;

/// Names of the reported coordinates, matching [`parameter_vector`].
pub fn parameter_names(nu_len: usize, model: ModelKind, targets: &[usize]) -> Vec<String> {
    let mut names = vec!["beta".to_string(), "rho".to_string()];
    names.extend((1..=nu_len).map(|k| format!("nu_{k}")));
    names.push("alpha".into());
    if model == ModelKind::Hmm {
        names.push("pi1".into());
        for j in 0..2 {
            names.extend(targets.iter().map(|t| format!("zeta{j}_t{t}")));
        }
    }
    names
}

pub fn parameter_vector<T: Scalar>(p: &ModelParams<T>, model: ModelKind, targets: &[usize]) -> Vec<f64> {
    let mut v = vec![p.beta.to_f64_lossy(), p.rho.to_f64_lossy()];
    v.extend(p.nu.iter().map(|x| x.to_f64_lossy()));
    v.push(p.alpha_scalar.to_f64_lossy());
    if model == ModelKind::Hmm {
        v.push(p.pi1.to_f64_lossy());
        for curve in [&p.zeta0, &p.zeta1] {
            v.extend(targets.iter().map(|&t| curve[t - 1].to_f64_lossy()));
        }
    }
    v
}

fn group_rate<T: Scalar>(r: &FitResult<T>) -> Vec<f64> {
    let rows = r.posteriors.engaged_rows();
    let n = rows.len() as f64;
    let horizon = rows.first().map_or(0, Vec::len);
    (0..horizon)
        .map(|t| rows.iter().map(|row| row[t].to_f64_lossy()).sum::<f64>() / n)
        .collect()
}

fn sample_sd(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let v: Vec<f64> = xs.collect();
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Fits the full data, then bootstraps around that fit.
pub fn bootstrap<T: Scalar>(
    data: &Dataset,
    spec: &BasisSpec,
    config: &FitConfig,
    opts: &BootstrapOptions,
) -> Result<BootstrapReport> {
    let full = fit::<T>(data, spec, config)?;
    bootstrap_from(data, spec, config, &full, opts)
}

/// Resamples whole sessions with replacement `B` times and refits each.
pub fn bootstrap_from<T: Scalar>(
    data: &Dataset,
    spec: &BasisSpec,
    config: &FitConfig,
    full: &FitResult<T>,
    opts: &BootstrapOptions,
) -> Result<BootstrapReport> {
    if opts.replicates < 2 {
        return Err(Error::Config(format!("need B ≥ 2 replicates, got {}", opts.replicates)));
    }
    let horizon = data.horizon();
    if opts.targets.iter().any(|&t| t == 0 || t >= horizon) {
        return Err(Error::Config(format!("ζ targets must lie in 1..{}", horizon - 1)));
    }
    let n = data.n_subjects();
    let model = config.model;
    let names = parameter_names(full.params.nu.len(), model, &opts.targets);
    let estimate = parameter_vector(&full.params, model, &opts.targets);

    let resamples: Vec<Vec<usize>> = (0..opts.replicates)
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(b as u64);
            (0..n).map(|_| rng.gen_range(0..n)).collect()
        })
        .collect();

    let outcomes: Vec<Result<(Vec<f64>, Vec<f64>)>> = resamples
        .par_iter()
        .map(|idx| {
            let sample = data.select(idx);
            let r = if opts.cold_start {
                fit::<T>(&sample, spec, config)?
            } else {
                fit_from(&sample, spec, config, &full.params)?
            };
            Ok((parameter_vector(&r.params, model, &opts.targets), group_rate(&r)))
        })
        .collect();

    let mut estimates = Vec::new();
    let mut rates = Vec::new();
    let mut failures = Vec::new();
    for (b, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok((v, g)) => {
                estimates.push(v);
                rates.push(g);
            }
            Err(e) => failures.push(ReplicateFailure {
                replicate: b,
                reason: e.to_string(),
            }),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_RATE * opts.replicates as f64 {
        return Err(Error::Numerical(format!(
            "{} of {} bootstrap replicates failed; first: replicate {}: {}",
            failures.len(),
            opts.replicates,
            failures[0].replicate,
            failures[0].reason
        )));
    }

    let degenerate = n == 1;
    let p = names.len();
    let pi_idx = names.iter().position(|s| s == "pi1");
    let mut se = vec![0.0; p];
    let mut ci95 = Vec::with_capacity(p);
    for k in 0..p {
        if Some(k) == pi_idx {
            let clamp = |x: f64| x.clamp(crate::em::PROB_CLAMP, 1.0 - crate::em::PROB_CLAMP);
            let se_logit = if degenerate {
                0.0
            } else {
                sample_sd(estimates.iter().map(|e| logit(clamp(e[k]))))
            };
            se[k] = if degenerate {
                0.0
            } else {
                sample_sd(estimates.iter().map(|e| e[k]))
            };
            let c = logit(clamp(estimate[k]));
            ci95.push([logistic(c - Z95 * se_logit), logistic(c + Z95 * se_logit)]);
        } else {
            se[k] = if degenerate {
                0.0
            } else {
                sample_sd(estimates.iter().map(|e| e[k]))
            };
            ci95.push([estimate[k] - Z95 * se[k], estimate[k] + Z95 * se[k]]);
        }
    }
    let gr = group_rate(full);
    let gr_se = (0..gr.len())
        .map(|t| {
            if degenerate {
                0.0
            } else {
                sample_sd(rates.iter().map(|r| r[t]))
            }
        })
        .collect();

    Ok(BootstrapReport {
        replicates: opts.replicates,
        seed: opts.seed,
        names,
        estimate,
        estimates,
        resamples,
        failures,
        se,
        ci95,
        targets: opts.targets.clone(),
        group_rate: gr,
        group_rate_se: gr_se,
        degenerate,
        cold_start: opts.cold_start,
    })
}
