//! Subcommand implementations.

use crate::config::{self, BasisFile, GridFile, ScenarioFile};
use crate::manifest::Recorder;
use crate::{BootstrapArgs, Cli, Command, CvArgs, DataArgs, EngageArgs, FitArgs, ModelArg, Preset, SimulateArgs};
use anyhow::{bail, Context, Result};
use rlhmm::engage::{engagement_report, engagement_report_rows, quartile_windows, EngagementReport};
use rlhmm::inference::{self, BootstrapOptions, BootstrapReport, GridPoint};
use rlhmm::report::{write_json, FitReport, ParamsReport};
use rlhmm::{em, hmm, sim, BasisSpec, Dataset, DatasetMeta, FitConfig, ModelKind, PenaltySpec};
use serde_json::json;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

/// 3 for numerical failures anywhere in the chain, 2 otherwise.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<rlhmm::Error>() {
            return match err {
                rlhmm::Error::Solver { .. } | rlhmm::Error::Probe { .. } | rlhmm::Error::Numerical(_) => EXIT_NUMERICAL,
                _ => EXIT_USAGE,
            };
        }
    }
    EXIT_USAGE
}

pub fn run(cli: &Cli) -> Result<u8> {
    std::fs::create_dir_all(&cli.out).with_context(|| format!("cannot create {}", cli.out.display()))?;
    let name = match &cli.command {
        Command::Simulate(_) => "simulate",
        Command::Fit(_) => "fit",
        Command::Cv(_) => "cv",
        Command::Bootstrap(_) => "bootstrap",
        Command::Engage(_) => "engage",
    };
    let mut rec = Recorder::new(name, &cli.out);
    let result = match &cli.command {
        Command::Simulate(a) => simulate(cli, a, &mut rec),
        Command::Fit(a) => fit(cli, a, &mut rec),
        Command::Cv(a) => cv(cli, a, &mut rec),
        Command::Bootstrap(a) => bootstrap(cli, a, &mut rec),
        Command::Engage(a) => engage(a, &mut rec),
    };
    let code = match &result {
        Ok(c) => *c,
        Err(e) => exit_code(e),
    };
    let written = rec.finish(code as i32);
    let code = result?;
    written?;
    Ok(code)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot write {}", path.display()))?,
    ))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn simulate(cli: &Cli, a: &SimulateArgs, rec: &mut Recorder) -> Result<u8> {
    let mut scenario = match (&a.scenario, a.preset) {
        (Some(path), _) => {
            rec.input(path);
            config::load_versioned::<ScenarioFile>(path)?.resolve()?
        }
        (None, Some(p)) => {
            let name = match p {
                Preset::Case1 => "case1",
                Preset::Case2 => "case2",
                Preset::Prt => "prt",
            };
            config::preset(name, a.n, a.horizon, 0)?
        }
        (None, None) => bail!("give --scenario or --preset"),
    };
    if let Some(s) = cli.seed {
        scenario.seed = s;
    }
    rec.seed(scenario.seed);
    rec.config(&scenario)?;
    let out = sim::generate(&scenario)?;

    rlhmm::data::write_dataset(rec.output("dataset.csv"), &out.dataset)?;
    out.dataset.meta().write(rec.output("dataset.json"))?;
    write_text(
        &rec.output("basis.json"),
        &config::versioned_json(&BasisFile::from_spec(&out.spec))?,
    )?;
    write_text(&rec.output("scenario.json"), &config::versioned_json(&scenario)?)?;
    sim::write_hidden_strategies_csv(
        create(&rec.output("hidden_strategies.csv"))?,
        &out.dataset,
        &out.hidden_strategies,
    )?;
    write_json(
        rec.output("truth.json"),
        &json!({
            "params": ParamsReport::from(&out.truth),
            "engaged_marginal": sim::engaged_marginal(&out.truth),
            "shortfalls": out.shortfalls,
        }),
    )?;
    if !out.shortfalls.is_empty() {
        eprintln!(
            "warning: {} reward-schedule shortfalls recorded in truth.json",
            out.shortfalls.len()
        );
    }
    Ok(0)
}

struct Inputs {
    data: Dataset,
    spec: BasisSpec,
    basis: BasisFile,
    config: FitConfig,
}

fn load_inputs(cli: &Cli, a: &DataArgs, rec: &mut Recorder) -> Result<Inputs> {
    let meta_path = a.meta.clone().unwrap_or_else(|| a.data.with_extension("json"));
    let meta = DatasetMeta::read(&meta_path)
        .with_context(|| format!("cannot load dataset metadata {}", meta_path.display()))?;
    let data = rlhmm::data::load_dataset(&a.data, &meta)
        .with_context(|| format!("cannot load dataset {}", a.data.display()))?;
    rec.input(&a.data);
    rec.input(&meta_path);

    let basis_path = a
        .basis
        .clone()
        .unwrap_or_else(|| a.data.parent().unwrap_or(Path::new(".")).join("basis.json"));
    let basis: BasisFile = config::load_versioned(&basis_path)?;
    rec.input(&basis_path);
    let spec = basis.build(&data)?;
    spec.check_compatible(&data)?;

    let mut config = match &a.config {
        Some(p) => {
            rec.input(p);
            config::load_versioned::<FitConfig>(p)?
        }
        None => FitConfig::default(),
    };
    match a.model {
        Some(ModelArg::RlOnly) => {
            config.model = ModelKind::RlOnly;
            config.penalty = PenaltySpec::fused(0.0, 0.0);
        }
        Some(ModelArg::Hmm) => config.model = ModelKind::Hmm,
        None => {}
    }
    if let Some(l) = &a.lambda {
        let v = rlhmm::serde_ext::parse_extended(l).with_context(|| format!("cannot parse --lambda `{l}`"))?;
        config.penalty.lambda0 = v;
        config.penalty.lambda1 = v;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    config.validate()?;
    rec.seed(config.seed);
    Ok(Inputs {
        data,
        spec,
        basis,
        config,
    })
}

fn write_engagement(rec: &mut Recorder, report: &EngagementReport) -> Result<()> {
    report.write_individual_csv(create(&rec.output("engagement_individual.csv"))?)?;
    report.write_group_csv(create(&rec.output("engagement_group.csv"))?)?;
    report.write_scores_csv(create(&rec.output("engagement_scores.csv"))?)?;
    Ok(())
}

fn subject_ids(data: &Dataset) -> Vec<String> {
    data.sessions().iter().map(|s| s.subject_id.clone()).collect()
}

fn fit(cli: &Cli, a: &FitArgs, rec: &mut Recorder) -> Result<u8> {
    let inp = load_inputs(cli, &a.data, rec)?;
    rec.config(&json!({ "fit": config_value(&inp.config)?, "basis": inp.basis }))?;
    let result = em::fit::<f64>(&inp.data, &inp.spec, &inp.config)?;

    write_json(rec.output("fit_result.json"), &FitReport::from(&result))?;
    hmm::write_posteriors_csv(create(&rec.output("posteriors.csv"))?, &inp.data, &result.posteriors)?;
    hmm::write_log_lik_csv(create(&rec.output("log_lik.csv"))?, &inp.data, &result.posteriors)?;
    let predicted = hmm::predict_strategies(&result.posteriors);
    sim::write_hidden_strategies_csv(create(&rec.output("predicted_strategies.csv"))?, &inp.data, &predicted)?;
    if inp.data.horizon() >= 4 {
        let report = engagement_report(
            &result.posteriors,
            &subject_ids(&inp.data),
            &quartile_windows(inp.data.horizon())?,
        )?;
        write_engagement(rec, &report)?;
    }
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    if !result.converged {
        eprintln!(
            "error: EM stopped after {} iterations without converging",
            result.iterations
        );
        return Ok(EXIT_NUMERICAL);
    }
    Ok(0)
}

fn config_value(c: &FitConfig) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(c)?)
}

fn cv(cli: &Cli, a: &CvArgs, rec: &mut Recorder) -> Result<u8> {
    let inp = load_inputs(cli, &a.data, rec)?;
    let grid = match (&a.grid, &a.lambdas) {
        (Some(p), _) => {
            rec.input(p);
            config::load_versioned::<GridFile>(p)?.points
        }
        (None, Some(l)) => {
            let values = config::parse_reals(l)?;
            if a.diagonal {
                GridPoint::diagonal(&values)
            } else {
                GridPoint::product(&values)
            }
        }
        (None, None) => bail!("give --grid or --lambdas"),
    };
    rec.config(&json!({
        "fit": config_value(&inp.config)?,
        "basis": inp.basis,
        "grid": grid,
        "folds": a.folds,
    }))?;
    let report = inference::cross_validate::<f64>(&inp.data, &inp.spec, &inp.config, &grid, a.folds)?;
    write_json(rec.output("cv_report.json"), &report)?;
    let mut w = csv::Writer::from_writer(create(&rec.output("cv_scores.csv"))?);
    w.write_record(["lambda0", "lambda1", "score", "selected"])?;
    for (k, (p, s)) in report.grid.iter().zip(&report.scores).enumerate() {
        w.write_record([
            p.lambda0.to_string(),
            p.lambda1.to_string(),
            s.to_string(),
            u8::from(k == report.best).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(0)
}

fn bootstrap(cli: &Cli, a: &BootstrapArgs, rec: &mut Recorder) -> Result<u8> {
    let inp = load_inputs(cli, &a.data, rec)?;
    let horizon = inp.data.horizon();
    let mut opts = BootstrapOptions::quartiles(a.replicates, horizon, inp.config.seed);
    if let Some(t) = &a.targets {
        opts.targets = config::parse_indices(t)?;
    }
    opts.cold_start = a.cold_start;
    rec.config(&json!({ "fit": config_value(&inp.config)?, "basis": inp.basis, "bootstrap": opts }))?;

    let full = em::fit::<f64>(&inp.data, &inp.spec, &inp.config)?;
    let report = inference::bootstrap_from(&inp.data, &inp.spec, &inp.config, &full, &opts)?;
    write_json(rec.output("fit_result.json"), &FitReport::from(&full))?;
    write_json(rec.output("bootstrap_report.json"), &report)?;
    write_bootstrap_tables(rec, &report)?;
    if horizon >= 4 && inp.config.model == ModelKind::Hmm {
        let eng = engagement_report(&full.posteriors, &subject_ids(&inp.data), &quartile_windows(horizon)?)?
            .with_band(report.group_rate_band())?;
        eng.write_group_csv(create(&rec.output("engagement_group.csv"))?)?;
    }
    if report.degenerate {
        eprintln!("warning: a single subject gives degenerate resamples; standard errors are zero");
    }
    if !report.failures.is_empty() {
        eprintln!(
            "warning: {} of {} replicates failed",
            report.failures.len(),
            report.replicates
        );
    }
    Ok(0)
}

fn write_bootstrap_tables(rec: &mut Recorder, report: &BootstrapReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(&rec.output("bootstrap_replicates.csv"))?);
    let mut header = vec!["replicate".to_string()];
    header.extend(report.names.iter().cloned());
    w.write_record(&header)?;
    for (b, row) in report.estimates.iter().enumerate() {
        let mut rec = vec![(b + 1).to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(&rec.output("bootstrap_summary.csv"))?);
    w.write_record(["parameter", "estimate", "se", "lower", "upper"])?;
    for (k, name) in report.names.iter().enumerate() {
        w.write_record([
            name.clone(),
            report.estimate[k].to_string(),
            report.se[k].to_string(),
            report.ci95[k][0].to_string(),
            report.ci95[k][1].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn engage(a: &EngageArgs, rec: &mut Recorder) -> Result<u8> {
    let post_path: PathBuf = a.fit_dir.join("posteriors.csv");
    let file = File::open(&post_path).with_context(|| format!("cannot open {}", post_path.display()))?;
    let rows = hmm::read_posteriors_csv(file)?;
    rec.input(&post_path);
    let (subjects, individual): (Vec<String>, Vec<Vec<f64>>) = rows.into_iter().unzip();
    let horizon = individual.first().map_or(0, Vec::len);
    let windows = match &a.windows {
        Some(w) => config::parse_windows(w)?,
        None => quartile_windows(horizon)?,
    };
    rec.config(&json!({ "windows": windows, "bootstrap": a.bootstrap }))?;
    let mut report = engagement_report_rows(&subjects, individual, &windows)?;
    if let Some(p) = &a.bootstrap {
        let boot: BootstrapReport =
            rlhmm::report::read_json(p).with_context(|| format!("cannot load {}", p.display()))?;
        rec.input(p);
        report = report.with_band(boot.group_rate_band())?;
    }
    write_engagement(rec, &report)?;
    Ok(0)
}
