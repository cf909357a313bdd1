//! Two-state engaged/lapse chain: emissions, scaled forward–backward,
//! posterior export.

use crate::basis::BasisSpec;
use crate::data::{Dataset, Session};
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::rl::{check_effective_rate, observed_log_probs, SessionDesign};
use crate::scalar::Scalar;
use std::io::Write;

/// Per-transition probabilities of moving into the engaged state.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionCurve<T> {
    /// P(U_{t+1} = 1 | U_t = 1), t = 1…T−1.
    pub c11: Vec<T>,
    /// P(U_{t+1} = 1 | U_t = 0), t = 1…T−1.
    pub c01: Vec<T>,
}

impl<T: Scalar> TransitionCurve<T> {
    pub fn from_params(params: &ModelParams<T>) -> Self {
        TransitionCurve {
            c11: params.c11(),
            c01: params.c01(),
        }
    }

    pub fn len(&self) -> usize {
        self.c11.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c11.is_empty()
    }

    /// C^t_{jk} = P(U_{t+1} = k | U_t = j), `t` 0-based.
    #[inline]
    pub fn matrix(&self, t: usize) -> [[T; 2]; 2] {
        let (a, b) = (self.c01[t], self.c11[t]);
        [[T::one() - a, a], [T::one() - b, b]]
    }
}

/// Smoothed quantities for one subject. Index 0 is the lapse state, 1 the
/// engaged state.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorEntry<T> {
    /// γ_t(j) = P(U_t = j | A), length T.
    pub gamma: Vec<[T; 2]>,
    /// ξ_t(j, k) = P(U_t = j, U_{t+1} = k | A), length T−1.
    pub xi: Vec<[[T; 2]; 2]>,
    /// log P(A).
    pub log_lik: T,
    /// Forward normalisers c_t; Σ log c_t = log_lik.
    pub scale_factors: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSet<T> {
    pub entries: Vec<PosteriorEntry<T>>,
}

impl<T: Scalar> PosteriorSet<T> {
    pub fn total_log_lik(&self) -> T {
        self.entries.iter().fold(T::zero(), |acc, e| acc + e.log_lik)
    }

    pub fn n_subjects(&self) -> usize {
        self.entries.len()
    }

    pub fn engaged_rows(&self) -> Vec<Vec<T>> {
        self.entries
            .iter()
            .map(|e| e.gamma.iter().map(|g| g[1]).collect())
            .collect()
    }
}

/// Emission matrix: column 0 is 1/D, column 1 the softmax probability of
/// the observed action, floored at the smallest normal float so a saturated
/// policy cannot zero a row.
pub fn emission_probabilities<T: Scalar>(
    params: &ModelParams<T>,
    spec: &BasisSpec,
    session: &Session,
) -> Result<Vec<[T; 2]>> {
    let design = SessionDesign::new(spec, session)?;
    check_effective_rate(params.beta, design.max_observed_norm_sq())?;
    let mut out = vec![[T::zero(); 2]; design.horizon()];
    let init = params.initial_coefficients(spec);
    emissions_from_design(&design, params, &init, spec.action_count(), &mut out);
    Ok(out)
}

pub(crate) fn emissions_from_design<T: Scalar>(
    design: &SessionDesign<T>,
    params: &ModelParams<T>,
    init: &[T],
    action_count: usize,
    out: &mut [[T; 2]],
) {
    let mut logp = vec![T::zero(); design.horizon()];
    observed_log_probs(design, params, init, &mut logp);
    let lapse = T::one() / T::lit(action_count as f64);
    for (o, lp) in out.iter_mut().zip(logp) {
        *o = [lapse, lp.exp().max(T::min_positive_value())];
    }
}

fn check_inputs<T: Scalar>(emissions: &[[T; 2]], pi1: T, curve: &TransitionCurve<T>) -> Result<()> {
    if emissions.is_empty() {
        return Err(Error::Dimension("emission matrix has no rows".into()));
    }
    if curve.c01.len() != emissions.len() - 1 || curve.c11.len() != emissions.len() - 1 {
        return Err(Error::Dimension(format!(
            "transition curve has {} entries, expected T-1 = {}",
            curve.len(),
            emissions.len() - 1
        )));
    }
    if let Some((t, _)) = emissions
        .iter()
        .enumerate()
        .find(|(_, e)| !(e[0] > T::zero() && e[1] > T::zero()) || !e[0].is_finite() || !e[1].is_finite())
    {
        return Err(Error::domain(
            "emissions",
            format!("nonpositive or non-finite emission at trial {}", t + 1),
        ));
    }
    if !(pi1 >= T::zero() && pi1 <= T::one()) {
        return Err(Error::domain("pi1", format!("{pi1} not a probability")));
    }
    Ok(())
}

/// Scaled forward pass; returns the normalised forward variables and the
/// per-trial normalisers.
fn forward<T: Scalar>(emissions: &[[T; 2]], pi1: T, curve: &TransitionCurve<T>) -> Result<(Vec<[T; 2]>, Vec<T>)> {
    let n = emissions.len();
    let mut alpha = vec![[T::zero(); 2]; n];
    let mut scale = vec![T::zero(); n];
    let init = [T::one() - pi1, pi1];
    for t in 0..n {
        let mut a = [T::zero(); 2];
        if t == 0 {
            a = [init[0] * emissions[0][0], init[1] * emissions[0][1]];
        } else {
            let c = curve.matrix(t - 1);
            let prev = alpha[t - 1];
            for j in 0..2 {
                a[j] = (prev[0] * c[0][j] + prev[1] * c[1][j]) * emissions[t][j];
            }
        }
        let s = a[0] + a[1];
        if !(s > T::zero()) || !s.is_finite() {
            return Err(Error::Numerical(format!(
                "forward normaliser vanished at trial {}",
                t + 1
            )));
        }
        alpha[t] = [a[0] / s, a[1] / s];
        scale[t] = s;
    }
    Ok((alpha, scale))
}

/// log P(A) by the forward pass alone.
pub fn forward_log_likelihood<T: Scalar>(emissions: &[[T; 2]], pi1: T, curve: &TransitionCurve<T>) -> Result<T> {
    check_inputs(emissions, pi1, curve)?;
    let (_, scale) = forward(emissions, pi1, curve)?;
    Ok(scale.iter().map(|s| s.ln()).sum())
}

/// Scaled forward–backward smoother.
pub fn forward_backward<T: Scalar>(
    emissions: &[[T; 2]],
    pi1: T,
    curve: &TransitionCurve<T>,
) -> Result<PosteriorEntry<T>> {
    check_inputs(emissions, pi1, curve)?;
    let n = emissions.len();
    let (alpha, scale) = forward(emissions, pi1, curve)?;

    let mut beta = vec![[T::one(); 2]; n];
    for t in (0..n.saturating_sub(1)).rev() {
        let c = curve.matrix(t);
        let next = beta[t + 1];
        let e = emissions[t + 1];
        for j in 0..2 {
            beta[t][j] = (c[j][0] * e[0] * next[0] + c[j][1] * e[1] * next[1]) / scale[t + 1];
        }
    }

    let gamma = (0..n)
        .map(|t| {
            let g = [alpha[t][0] * beta[t][0], alpha[t][1] * beta[t][1]];
            let s = g[0] + g[1];
            [g[0] / s, g[1] / s]
        })
        .collect();

    let xi = (0..n.saturating_sub(1))
        .map(|t| {
            let c = curve.matrix(t);
            let e = emissions[t + 1];
            let mut x = [[T::zero(); 2]; 2];
            let mut s = T::zero();
            for j in 0..2 {
                for k in 0..2 {
                    x[j][k] = alpha[t][j] * c[j][k] * e[k] * beta[t + 1][k];
                    s = s + x[j][k];
                }
            }
            for row in x.iter_mut() {
                for v in row.iter_mut() {
                    *v = *v / s;
                }
            }
            x
        })
        .collect();

    Ok(PosteriorEntry {
        gamma,
        xi,
        log_lik: scale.iter().map(|s| s.ln()).sum(),
        scale_factors: scale,
    })
}

/// Û_t = 1 when γ_t(engaged) ≥ 0.5.
pub fn predict_strategies<T: Scalar>(posteriors: &PosteriorSet<T>) -> Vec<Vec<u8>> {
    let half = T::lit(0.5);
    posteriors
        .entries
        .iter()
        .map(|e| e.gamma.iter().map(|g| u8::from(g[1] >= half)).collect())
        .collect()
}

/// Long-format `subject,trial,gamma_engaged`.
pub fn write_posteriors_csv<T: Scalar, W: Write>(w: W, data: &Dataset, posteriors: &PosteriorSet<T>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["subject", "trial", "gamma_engaged"])?;
    for (s, e) in data.sessions().iter().zip(&posteriors.entries) {
        for (t, g) in e.gamma.iter().enumerate() {
            out.write_record([
                s.subject_id.clone(),
                (t + 1).to_string(),
                g[1].to_f64_lossy().to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Per-subject `subject,log_lik`.
pub fn write_log_lik_csv<T: Scalar, W: Write>(w: W, data: &Dataset, posteriors: &PosteriorSet<T>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["subject", "log_lik"])?;
    for (s, e) in data.sessions().iter().zip(&posteriors.entries) {
        out.write_record([s.subject_id.clone(), e.log_lik.to_f64_lossy().to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads `subject,trial,gamma_engaged` back into per-subject rows, in
/// first-appearance order.
pub fn read_posteriors_csv<R: std::io::Read>(r: R) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out: Vec<(String, Vec<(usize, f64)>)> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let subject = rec.get(0).unwrap_or_default().to_owned();
        let trial: usize = rec
            .get(1)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::ingest(row, "bad trial"))?;
        let g: f64 = rec
            .get(2)
            .and_then(|v| v.trim().parse().ok())
            .filter(|g: &f64| (0.0..=1.0).contains(g))
            .ok_or_else(|| Error::ingest(row, "bad gamma_engaged"))?;
        match out.iter_mut().find(|(s, _)| *s == subject) {
            Some((_, v)) => v.push((trial, g)),
            None => out.push((subject, vec![(trial, g)])),
        }
    }
    out.into_iter()
        .map(|(s, mut v)| {
            v.sort_by_key(|p| p.0);
            if v.iter().enumerate().any(|(k, p)| p.0 != k + 1) {
                return Err(Error::ingest(0, format!("subject {s}: trials not 1..T")));
            }
            Ok((s, v.into_iter().map(|p| p.1).collect()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(c11: &[f64], c01: &[f64]) -> TransitionCurve<f64> {
        TransitionCurve {
            c11: c11.to_vec(),
            c01: c01.to_vec(),
        }
    }

    #[test]
    fn single_trial_bayes_rule() {
        let e = [[0.5, 0.8]];
        let post = forward_backward(&e, 0.7, &curve(&[], &[])).unwrap();
        let z = 0.3 * 0.5 + 0.7 * 0.8;
        assert!((post.gamma[0][1] - 0.56 / z).abs() < 1e-15);
        assert!((post.log_lik - z.ln()).abs() < 1e-15);
        assert!(post.xi.is_empty());
    }

    #[test]
    fn absorbing_engaged_chain() {
        let e = [[0.5, 0.1], [0.5, 0.3], [0.5, 0.05]];
        let post = forward_backward(&e, 1.0, &curve(&[1.0, 1.0], &[0.2, 0.2])).unwrap();
        for g in &post.gamma {
            assert_eq!(g[1], 1.0);
        }
        assert!((post.log_lik - (0.1f64 * 0.3 * 0.05).ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_emission() {
        let e = [[0.5, 0.0]];
        assert!(matches!(
            forward_backward(&e, 0.5, &curve(&[], &[])),
            Err(Error::Domain { .. })
        ));
        let e = [[0.5, 0.4], [0.5, 0.4]];
        assert!(matches!(
            forward_backward(&e, 0.5, &curve(&[], &[])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn threshold_is_inclusive() {
        let set = PosteriorSet {
            entries: vec![PosteriorEntry {
                gamma: vec![[0.3, 0.7], [0.5, 0.5], [0.51, 0.49]],
                xi: vec![],
                log_lik: 0.0,
                scale_factors: vec![],
            }],
        };
        assert_eq!(predict_strategies(&set), vec![vec![1, 1, 0]]);
    }

    #[test]
    fn long_sequences_do_not_underflow() {
        let n = 100_000;
        let e: Vec<[f64; 2]> = (0..n).map(|t| [0.5, if t % 3 == 0 { 0.01 } else { 0.9 }]).collect();
        let c = curve(&vec![0.95; n - 1], &vec![0.1; n - 1]);
        let post = forward_backward(&e, 0.5, &c).unwrap();
        assert!(post.log_lik.is_finite() && post.log_lik < 0.0);
        assert!(post.gamma.iter().all(|g| (g[0] + g[1] - 1.0).abs() < 1e-10));
        let ll = forward_log_likelihood(&e, 0.5, &c).unwrap();
        assert_eq!(ll, post.log_lik);
    }

    #[test]
    fn posterior_csv_roundtrip() {
        use crate::data::{StateSpace, TrialRecord};
        let sess = |id: &str| Session {
            subject_id: id.into(),
            trials: (1..=2)
                .map(|t| TrialRecord {
                    trial: t,
                    state: vec![0.5],
                    action: 0,
                    reward: 1.0,
                })
                .collect(),
        };
        let data = Dataset::new(vec![sess("a"), sess("b")], StateSpace::unit_interval(), 2, 1.0).unwrap();
        let entry = |g: f64| PosteriorEntry {
            gamma: vec![[1.0 - g, g], [g, 1.0 - g]],
            xi: vec![],
            log_lik: -1.5,
            scale_factors: vec![],
        };
        let set = PosteriorSet {
            entries: vec![entry(0.25), entry(0.75)],
        };
        let mut buf = Vec::new();
        write_posteriors_csv(&mut buf, &data, &set).unwrap();
        let back = read_posteriors_csv(buf.as_slice()).unwrap();
        assert_eq!(
            back,
            vec![("a".into(), vec![0.25, 0.75]), ("b".into(), vec![0.75, 0.25])]
        );
    }
}
