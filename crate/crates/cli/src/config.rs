//! Versioned JSON configuration files.

use anyhow::{bail, Context, Result};
use rlhmm::basis::{BasisKind, BasisSpec};
use rlhmm::inference::GridPoint;
use rlhmm::report::SCHEMA_VERSION;
use rlhmm::sim::SimScenario;
use rlhmm::Dataset;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Reads `{"schema_version": 1, ...fields}` into `T`, rejecting unknown keys.
pub fn load_versioned<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_versioned(&text).with_context(|| format!("invalid config {}", path.display()))
}

pub fn parse_versioned<T: DeserializeOwned>(text: &str) -> Result<T> {
    let mut value: serde_json::Value = serde_json::from_str(text)?;
    let obj = value.as_object_mut().context("config must be a JSON object")?;
    match obj.remove("schema_version") {
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION as u64) => {}
        Some(v) => bail!("unsupported schema_version {v}; this build reads version {SCHEMA_VERSION}"),
        None => bail!("missing schema_version"),
    }
    Ok(serde_json::from_value(value)?)
}

/// JSON text of `value` with `schema_version` prepended.
pub fn versioned_json<T: Serialize>(value: &T) -> Result<String> {
    let mut obj = serde_json::Map::new();
    obj.insert("schema_version".into(), SCHEMA_VERSION.into());
    match serde_json::to_value(value)? {
        serde_json::Value::Object(m) => obj.extend(m),
        _ => bail!("config must serialize to an object"),
    }
    let mut s = serde_json::to_string_pretty(&serde_json::Value::Object(obj))?;
    s.push('\n');
    Ok(s)
}

/// Basis description; state bounds and levels come from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisFile {
    Indicator {
        alpha_pattern: Vec<f64>,
        nu_free: Vec<bool>,
    },
    Linear {
        alpha_pattern: Vec<f64>,
        nu_free: Vec<bool>,
    },
    Bspline {
        degree: usize,
        #[serde(default)]
        interior: Option<Vec<f64>>,
        #[serde(default)]
        n_interior: usize,
        alpha_pattern: Vec<f64>,
        nu_free: Vec<bool>,
    },
}

impl BasisFile {
    pub fn from_spec(spec: &BasisSpec) -> BasisFile {
        let alpha_pattern = spec.alpha_pattern().to_vec();
        let nu_free = spec.nu_free().to_vec();
        match spec.kind() {
            BasisKind::Indicator { .. } => BasisFile::Indicator { alpha_pattern, nu_free },
            BasisKind::Linear { .. } => BasisFile::Linear { alpha_pattern, nu_free },
            BasisKind::BSpline { degree, knots } => BasisFile::Bspline {
                degree: *degree,
                interior: Some(knots[degree + 1..knots.len() - degree - 1].to_vec()),
                n_interior: 0,
                alpha_pattern,
                nu_free,
            },
        }
    }

    pub fn build(&self, data: &Dataset) -> Result<BasisSpec> {
        let space = data.state_space().clone();
        let d = data.action_count();
        let spec = match self {
            BasisFile::Indicator { alpha_pattern, nu_free } => {
                let levels = space.levels().context("indicator basis needs a categorical state")?;
                BasisSpec::new(
                    BasisKind::Indicator { levels },
                    space,
                    d,
                    alpha_pattern.clone(),
                    nu_free.clone(),
                )?
            }
            BasisFile::Linear { alpha_pattern, nu_free } => {
                let state_dim = space.dim();
                BasisSpec::new(
                    BasisKind::Linear { state_dim },
                    space,
                    d,
                    alpha_pattern.clone(),
                    nu_free.clone(),
                )?
            }
            BasisFile::Bspline {
                degree,
                interior,
                n_interior,
                alpha_pattern,
                nu_free,
            } => BasisSpec::bspline(
                data,
                *degree,
                interior.clone(),
                *n_interior,
                alpha_pattern.clone(),
                nu_free.clone(),
            )?,
        };
        Ok(spec)
    }
}

/// Scenario file: a preset name with overrides, or a full scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioFile {
    Preset(PresetFile),
    Full(SimScenario),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetFile {
    pub preset: String,
    pub n: usize,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioFile {
    pub fn resolve(self) -> Result<SimScenario> {
        match self {
            ScenarioFile::Full(s) => Ok(s),
            ScenarioFile::Preset(p) => preset(&p.preset, p.n, p.horizon, p.seed),
        }
    }
}

pub fn preset(name: &str, n: usize, horizon: Option<usize>, seed: u64) -> Result<SimScenario> {
    Ok(match name {
        "case1" => SimScenario::case1(n, horizon.unwrap_or(100), seed),
        "case2" => SimScenario::case2(n, horizon.unwrap_or(100), seed),
        "prt" => {
            let mut s = SimScenario::prt(n, seed);
            if let Some(t) = horizon {
                s.horizon = t;
                if let Some(c) = s.chain.as_mut() {
                    *c = rlhmm::sim::ChainSpec::step_curves(c.pi1, t);
                }
            }
            s
        }
        other => bail!("unknown scenario preset `{other}` (expected case1, case2 or prt)"),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub points: Vec<GridPoint>,
}

/// Parses `0,1,inf` style lists.
pub fn parse_reals(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| rlhmm::serde_ext::parse_extended(s).with_context(|| format!("cannot parse `{s}` as a number")))
        .collect()
}

pub fn parse_indices(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .with_context(|| format!("cannot parse `{s}` as a trial index"))
        })
        .collect()
}

/// `1-25;26-50` or `1,2,3;4,5` into 1-based trial windows.
pub fn parse_windows(text: &str) -> Result<Vec<Vec<usize>>> {
    text.split(';')
        .map(|w| {
            let mut out = Vec::new();
            for part in w.split(',') {
                let part = part.trim();
                if let Some((a, b)) = part.split_once('-') {
                    let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
                    if b < a {
                        bail!("window range {part} is reversed");
                    }
                    out.extend(a..=b);
                } else if !part.is_empty() {
                    out.push(part.parse()?);
                }
            }
            Ok(out)
        })
        .collect()
}
