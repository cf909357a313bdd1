//! Engagement trajectories, group rates and window scores from posteriors.

use crate::error::{Error, Result};
use crate::hmm::PosteriorSet;
use crate::scalar::{logit, Scalar};
use serde::{Deserialize, Serialize};
use std::io::Write;

pub const GAMMA_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngagementReport {
    pub subjects: Vec<String>,
    /// γ_i1t per subject.
    pub individual: Vec<Vec<f64>>,
    /// n⁻¹ Σᵢ γ_i1t.
    pub group_rate: Vec<f64>,
    /// Optional pointwise (lower, upper) band for the group rate.
    pub group_band: Option<Vec<[f64; 2]>>,
    /// 1-based trial indices of each window.
    pub windows: Vec<Vec<usize>>,
    /// `scores[i][w]` = ES_i(window w).
    pub scores: Vec<Vec<f64>>,
}

/// Four contiguous windows splitting 1…T as evenly as possible.
pub fn quartile_windows(horizon: usize) -> Result<Vec<Vec<usize>>> {
    if horizon < 4 {
        return Err(Error::Config(format!("quartile windows need T ≥ 4, got {horizon}")));
    }
    Ok((0..4)
        .map(|q| (q * horizon / 4 + 1..=(q + 1) * horizon / 4).collect())
        .collect())
}

/// ES(𝒯) = |𝒯|⁻¹ Σ_{t∈𝒯} logit(γ_t), γ clamped to [1e−12, 1 − 1e−12].
pub fn engagement_score(gamma: &[f64], window: &[usize]) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::Config("engagement window is empty".into()));
    }
    let mut acc = 0.0;
    for &t in window {
        if t == 0 || t > gamma.len() {
            return Err(Error::Config(format!("window trial {t} outside 1..{}", gamma.len())));
        }
        acc += logit(gamma[t - 1].clamp(GAMMA_CLAMP, 1.0 - GAMMA_CLAMP));
    }
    Ok(acc / window.len() as f64)
}

pub fn engagement_report<T: Scalar>(
    posteriors: &PosteriorSet<T>,
    subjects: &[String],
    windows: &[Vec<usize>],
) -> Result<EngagementReport> {
    if subjects.len() != posteriors.entries.len() {
        return Err(Error::Dimension(format!(
            "{} subject ids for {} posterior rows",
            subjects.len(),
            posteriors.entries.len()
        )));
    }
    let individual: Vec<Vec<f64>> = posteriors
        .engaged_rows()
        .into_iter()
        .map(|r| r.into_iter().map(|g| g.to_f64_lossy()).collect())
        .collect();
    engagement_report_rows(subjects, individual, windows)
}

/// Same as [`engagement_report`] from raw γ_i1t rows.
pub fn engagement_report_rows(
    subjects: &[String],
    individual: Vec<Vec<f64>>,
    windows: &[Vec<usize>],
) -> Result<EngagementReport> {
    if subjects.len() != individual.len() {
        return Err(Error::Dimension("one row per subject required".into()));
    }
    if windows.is_empty() {
        return Err(Error::Config("no engagement windows given".into()));
    }
    let horizon = individual.first().map_or(0, Vec::len);
    if individual.iter().any(|r| r.len() != horizon) {
        return Err(Error::Dimension("engagement rows differ in length".into()));
    }
    if individual.iter().flatten().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(Error::domain("gamma", "engagement probabilities must lie in [0,1]"));
    }
    let n = individual.len() as f64;
    let group_rate = (0..horizon)
        .map(|t| individual.iter().map(|r| r[t]).sum::<f64>() / n)
        .collect();
    let scores = individual
        .iter()
        .map(|g| {
            windows
                .iter()
                .map(|w| engagement_score(g, w))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EngagementReport {
        subjects: subjects.to_vec(),
        individual,
        group_rate,
        group_band: None,
        windows: windows.to_vec(),
        scores,
    })
}

impl EngagementReport {
    pub fn with_band(mut self, band: Vec<[f64; 2]>) -> Result<Self> {
        if band.len() != self.group_rate.len() {
            return Err(Error::Dimension("band length differs from the horizon".into()));
        }
        self.group_band = Some(band);
        Ok(self)
    }

    /// `subject,trial,gamma_engaged`.
    pub fn write_individual_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["subject", "trial", "gamma_engaged"])?;
        for (s, row) in self.subjects.iter().zip(&self.individual) {
            for (t, g) in row.iter().enumerate() {
                out.write_record([s.as_str(), &(t + 1).to_string(), &g.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// `trial,rate` plus `lower,upper` when a band is attached.
    pub fn write_group_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        match &self.group_band {
            None => out.write_record(["trial", "rate"])?,
            Some(_) => out.write_record(["trial", "rate", "lower", "upper"])?,
        }
        for (t, r) in self.group_rate.iter().enumerate() {
            let mut rec = vec![(t + 1).to_string(), r.to_string()];
            if let Some(b) = &self.group_band {
                rec.push(b[t][0].to_string());
                rec.push(b[t][1].to_string());
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// `subject,es_1,…,es_W`.
    pub fn write_scores_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["subject".to_string()];
        header.extend((1..=self.windows.len()).map(|k| format!("es_{k}")));
        out.write_record(&header)?;
        for (s, row) in self.subjects.iter().zip(&self.scores) {
            let mut rec = vec![s.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::PosteriorEntry;

    fn set(rows: &[&[f64]]) -> PosteriorSet<f64> {
        PosteriorSet {
            entries: rows
                .iter()
                .map(|r| PosteriorEntry {
                    gamma: r.iter().map(|&g| [1.0 - g, g]).collect(),
                    xi: vec![],
                    log_lik: 0.0,
                    scale_factors: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn score_examples() {
        assert_eq!(engagement_score(&[0.5; 4], &[1, 2, 3]).unwrap(), 0.0);
        let es = engagement_score(&[0.9; 4], &[2, 4]).unwrap();
        assert!((es - 9f64.ln()).abs() < 1e-12 && (es - 2.1972).abs() < 1e-4);
        assert!(engagement_score(&[0.5; 4], &[]).is_err());
        assert!(engagement_score(&[0.5; 4], &[5]).is_err());
        assert!(engagement_score(&[0.0, 1.0], &[1, 2]).unwrap().is_finite());
    }

    #[test]
    fn group_rate_is_row_mean() {
        let p = set(&[&[0.2, 0.4], &[0.8, 0.6]]);
        let ids = vec!["a".to_string(), "b".to_string()];
        let r = engagement_report(&p, &ids, &[vec![1, 2]]).unwrap();
        assert!((r.group_rate[0] - 0.5).abs() < 1e-15);
        assert!((r.group_rate[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quartiles_cover_horizon() {
        let w = quartile_windows(10).unwrap();
        assert_eq!(w.len(), 4);
        let all: Vec<usize> = w.concat();
        assert_eq!(all, (1..=10).collect::<Vec<_>>());
        assert!(quartile_windows(3).is_err());
    }

    #[test]
    fn scores_csv_has_window_columns() {
        let p = set(&[&[0.9; 8]]);
        let r = engagement_report(&p, &["s".to_string()], &quartile_windows(8).unwrap()).unwrap();
        let mut buf = Vec::new();
        r.write_scores_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("subject,es_1,es_2,es_3,es_4\n"));
    }
}
