//! Trial records, sessions, datasets and their CSV/JSON on-disk form.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    Continuous,
    Categorical,
}

/// Declared state space: a box for continuous states, or `0..levels` codes
/// (stored as a single `[0, levels-1]` bound) for categorical ones.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace {
    pub kind: StateKind,
    pub bounds: Vec<(f64, f64)>,
}

impl StateSpace {
    pub fn continuous(bounds: Vec<(f64, f64)>) -> Result<Self> {
        let s = StateSpace {
            kind: StateKind::Continuous,
            bounds,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn unit_interval() -> Self {
        StateSpace {
            kind: StateKind::Continuous,
            bounds: vec![(0.0, 1.0)],
        }
    }

    pub fn categorical(levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::Config("categorical state space needs ≥ 1 level".into()));
        }
        Ok(StateSpace {
            kind: StateKind::Categorical,
            bounds: vec![(0.0, (levels - 1) as f64)],
        })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    /// Number of categorical levels, `None` for continuous spaces.
    pub fn levels(&self) -> Option<usize> {
        match self.kind {
            StateKind::Categorical => Some(self.bounds[0].1 as usize + 1),
            StateKind::Continuous => None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.bounds.is_empty() {
            return Err(Error::Config("state space needs at least one coordinate".into()));
        }
        for (k, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!(
                    "state bound {k} must be finite with lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        if self.kind == StateKind::Categorical {
            let (lo, hi) = self.bounds[0];
            if self.bounds.len() != 1 || lo != 0.0 || hi.fract() != 0.0 {
                return Err(Error::Config(
                    "categorical state bounds must be a single [0, levels-1] pair".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn check(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.dim() {
            return Err(Error::domain(
                "state",
                format!("expected {} coordinates, got {}", self.dim(), state.len()),
            ));
        }
        for (k, (&v, &(lo, hi))) in state.iter().zip(&self.bounds).enumerate() {
            if !(v >= lo && v <= hi) {
                return Err(Error::domain(
                    "state",
                    format!("coordinate {k} = {v} outside [{lo}, {hi}]"),
                ));
            }
            if self.kind == StateKind::Categorical && v.fract() != 0.0 {
                return Err(Error::domain(
                    "state",
                    format!("categorical code {v} is not an integer"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    /// 1-based trial index.
    pub trial: usize,
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub subject_id: String,
    pub trials: Vec<TrialRecord>,
}

impl Session {
    pub fn horizon(&self) -> usize {
        self.trials.len()
    }
}

/// JSON sidecar describing a dataset CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub action_count: usize,
    pub state_kind: StateKind,
    pub state_bounds: Vec<[f64; 2]>,
    pub horizon: usize,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
}

fn default_r_max() -> f64 {
    1.0
}

impl DatasetMeta {
    pub fn state_space(&self) -> Result<StateSpace> {
        let s = StateSpace {
            kind: self.state_kind,
            bounds: self.state_bounds.iter().map(|b| (b[0], b[1])).collect(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// A validated collection of sessions sharing one horizon, action set and
/// state space.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    sessions: Vec<Session>,
    state_space: StateSpace,
    action_count: usize,
    horizon: usize,
    r_max: f64,
}

impl Dataset {
    pub fn new(sessions: Vec<Session>, state_space: StateSpace, action_count: usize, r_max: f64) -> Result<Self> {
        state_space.validate()?;
        if action_count < 2 {
            return Err(Error::Config(format!("action_count must be ≥ 2, got {action_count}")));
        }
        if !(r_max.is_finite() && r_max > 0.0) {
            return Err(Error::Config(format!("r_max must be positive, got {r_max}")));
        }
        let first = sessions
            .first()
            .ok_or_else(|| Error::Config("dataset has no sessions".into()))?;
        let horizon = first.horizon();
        if horizon == 0 {
            return Err(Error::Config("sessions must contain at least one trial".into()));
        }
        for s in &sessions {
            if s.horizon() != horizon {
                return Err(Error::Config(format!(
                    "ragged horizons: subject {} has {} trials, expected {horizon}",
                    s.subject_id,
                    s.horizon()
                )));
            }
            for (k, tr) in s.trials.iter().enumerate() {
                if tr.trial != k + 1 {
                    return Err(Error::Config(format!(
                        "subject {}: trial indices must be 1..{horizon} in order",
                        s.subject_id
                    )));
                }
                check_trial(tr, &state_space, action_count, r_max)?;
            }
        }
        Ok(Dataset {
            sessions,
            state_space,
            action_count,
            horizon,
            r_max,
        })
    }

    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    pub fn n_subjects(&self) -> usize {
        self.sessions.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn state_space(&self) -> &StateSpace {
        &self.state_space
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            action_count: self.action_count,
            state_kind: self.state_space.kind,
            state_bounds: self.state_space.bounds.iter().map(|&(a, b)| [a, b]).collect(),
            horizon: self.horizon,
            r_max: self.r_max,
        }
    }

    /// Sessions at `indices` (repeats allowed), in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            sessions: indices.iter().map(|&i| self.sessions[i].clone()).collect(),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Dataset {
        Dataset {
            sessions: Vec::new(),
            state_space: self.state_space.clone(),
            action_count: self.action_count,
            horizon: self.horizon,
            r_max: self.r_max,
        }
    }
}

fn check_trial(tr: &TrialRecord, space: &StateSpace, d: usize, r_max: f64) -> Result<()> {
    if tr.action >= d {
        return Err(Error::domain("action", format!("{} not in 0..{d}", tr.action)));
    }
    if !(tr.reward >= 0.0 && tr.reward <= r_max) {
        return Err(Error::domain("reward", format!("{} outside [0, {r_max}]", tr.reward)));
    }
    space.check(&tr.state)
}

fn parse_cell<F: std::str::FromStr>(row: usize, name: &str, cell: &str) -> Result<F> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Err(Error::ingest(row, format!("missing `{name}`")));
    }
    cell.parse()
        .map_err(|_| Error::ingest(row, format!("cannot parse `{name}` value {cell:?}")))
}

/// Reads a session CSV validated against `meta`.
pub fn load_dataset(path: impl AsRef<Path>, meta: &DatasetMeta) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_dataset(file, meta)
}

pub fn read_dataset<R: std::io::Read>(reader: R, meta: &DatasetMeta) -> Result<Dataset> {
    let space = meta.state_space()?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let expected = expected_header(space.dim());
    if headers != expected {
        return Err(Error::ingest(
            0,
            format!("header must be `{}`, got `{}`", expected.join(","), headers.join(",")),
        ));
    }

    let d = meta.action_count;
    let mut order: Vec<String> = Vec::new();
    let mut by_subject: HashMap<String, (usize, Vec<TrialRecord>)> = HashMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let rec = rec?;
        let subject = rec[0].trim().to_owned();
        if subject.is_empty() {
            return Err(Error::ingest(row, "missing `subject`"));
        }
        let trial: usize = parse_cell(row, "trial", &rec[1])?;
        let ns = space.dim();
        let mut state = Vec::with_capacity(ns);
        for j in 0..ns {
            let v: f64 = parse_cell(row, &expected[2 + j], &rec[2 + j])?;
            if !v.is_finite() {
                return Err(Error::ingest(row, "state is not finite"));
            }
            state.push(v);
        }
        let action: usize = parse_cell(row, "action", &rec[2 + ns])?;
        let reward: f64 = parse_cell(row, "reward", &rec[3 + ns])?;
        if !reward.is_finite() {
            return Err(Error::ingest(row, "reward is not finite"));
        }
        let tr = TrialRecord {
            trial,
            state,
            action,
            reward,
        };
        check_trial(&tr, &space, d, meta.r_max).map_err(|e| Error::ingest(row, e.to_string()))?;
        let entry = by_subject.entry(subject.clone()).or_insert_with(|| {
            order.push(subject);
            (row, Vec::new())
        });
        entry.1.push(tr);
    }

    let mut sessions = Vec::with_capacity(order.len());
    let mut horizon = None;
    for id in order {
        let (first_row, mut trials) = by_subject.remove(&id).expect("subject recorded");
        trials.sort_by_key(|t| t.trial);
        let t_len = trials.len();
        if trials.iter().enumerate().any(|(k, t)| t.trial != k + 1) {
            return Err(Error::ingest(
                first_row,
                format!("subject {id}: trial indices are not a permutation of 1..{t_len}"),
            ));
        }
        match horizon {
            None => horizon = Some(t_len),
            Some(h) if h != t_len => {
                return Err(Error::ingest(
                    first_row,
                    format!("ragged horizons: subject {id} has {t_len} trials, others have {h}"),
                ))
            }
            _ => {}
        }
        sessions.push(Session { subject_id: id, trials });
    }
    if let Some(h) = horizon {
        if h != meta.horizon {
            return Err(Error::ingest(
                0,
                format!("sidecar declares horizon {} but sessions have {h} trials", meta.horizon),
            ));
        }
    }
    Dataset::new(sessions, space, d, meta.r_max)
}

fn expected_header(dim: usize) -> Vec<String> {
    let mut h = vec!["subject".to_owned(), "trial".to_owned()];
    if dim == 1 {
        h.push("state".to_owned());
    } else {
        h.extend((1..=dim).map(|k| format!("state_{k}")));
    }
    h.push("action".to_owned());
    h.push("reward".to_owned());
    h
}

pub fn write_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_dataset_to(file, data)
}

pub fn write_dataset_to<W: std::io::Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(expected_header(data.state_space.dim()))?;
    for s in &data.sessions {
        for t in &s.trials {
            let mut rec = vec![s.subject_id.clone(), t.trial.to_string()];
            rec.extend(t.state.iter().map(|v| v.to_string()));
            rec.push(t.action.to_string());
            rec.push(t.reward.to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(horizon: usize) -> DatasetMeta {
        DatasetMeta {
            action_count: 2,
            state_kind: StateKind::Continuous,
            state_bounds: vec![[0.0, 1.0]],
            horizon,
            r_max: 1.0,
        }
    }

    #[test]
    fn parses_two_by_three() {
        let csv = "subject,trial,state,action,reward\n\
                   a,2,0.5,1,1\na,1,0.1,0,0\na,3,0.9,1,0\n\
                   b,1,0.2,0,1\nb,3,0.3,1,1\nb,2,0.4,0,0\n";
        let d = read_dataset(csv.as_bytes(), &meta(3)).unwrap();
        assert_eq!(d.n_subjects(), 2);
        assert_eq!(d.horizon(), 3);
        assert_eq!(d.sessions()[0].trials[0].state, vec![0.1]);
        assert_eq!(d.sessions()[1].subject_id, "b");
    }

    #[test]
    fn rejects_unknown_action_with_row() {
        let csv = "subject,trial,state,action,reward\na,1,0.5,0,1\na,2,0.5,5,1\n";
        match read_dataset(csv.as_bytes(), &meta(2)) {
            Err(Error::Ingest { row, reason }) => {
                assert_eq!(row, 2);
                assert!(reason.contains("action"), "{reason}");
            }
            other => panic!("expected ingest error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_ragged_horizon() {
        let mut csv = String::from("subject,trial,state,action,reward\n");
        for t in 1..=100 {
            csv += &format!("a,{t},0.5,0,1\n");
        }
        for t in 1..=99 {
            csv += &format!("b,{t},0.5,0,1\n");
        }
        let err = read_dataset(csv.as_bytes(), &meta(100)).unwrap_err();
        assert!(err.to_string().contains("ragged"), "{err}");
    }

    #[test]
    fn rejects_nan_missing_and_out_of_range() {
        let m = meta(1);
        for body in [
            "a,1,NaN,0,1",
            "a,1,,0,1",
            "a,1,0.5,0,1.5",
            "a,1,1.5,0,1",
            "a,1,0.5,0,-0.1",
        ] {
            let csv = format!("subject,trial,state,action,reward\n{body}\n");
            assert!(
                matches!(read_dataset(csv.as_bytes(), &m), Err(Error::Ingest { row: 1, .. })),
                "{body}"
            );
        }
    }

    #[test]
    fn rejects_gapped_trials() {
        let csv = "subject,trial,state,action,reward\na,1,0.5,0,1\na,3,0.5,0,1\n";
        assert!(read_dataset(csv.as_bytes(), &meta(2)).is_err());
    }

    #[test]
    fn multi_coordinate_header() {
        let m = DatasetMeta {
            state_bounds: vec![[0.0, 1.0], [-1.0, 1.0]],
            horizon: 1,
            ..meta(1)
        };
        let csv = "subject,trial,state_1,state_2,action,reward\nx,1,0.5,-0.5,1,0\n";
        let d = read_dataset(csv.as_bytes(), &m).unwrap();
        assert_eq!(d.sessions()[0].trials[0].state, vec![0.5, -0.5]);
    }

    #[test]
    fn categorical_codes_must_be_integer() {
        let m = DatasetMeta {
            state_kind: StateKind::Categorical,
            state_bounds: vec![[0.0, 1.0]],
            horizon: 1,
            ..meta(1)
        };
        let ok = "subject,trial,state,action,reward\nx,1,1,1,0\n";
        assert!(read_dataset(ok.as_bytes(), &m).is_ok());
        let bad = "subject,trial,state,action,reward\nx,1,0.5,1,0\n";
        assert!(read_dataset(bad.as_bytes(), &m).is_err());
    }
}
