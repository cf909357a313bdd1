//! Projected limited-memory BFGS on a box, with central-difference gradients.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::collections::VecDeque;

/// Closed per-coordinate bounds (±∞ allowed). Open constraints are
/// represented by pulling the bound in by a margin, see [`BoxSpec::open`].
#[derive(Clone, Debug, PartialEq)]
pub struct BoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension("box bounds differ in length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Config("box needs lower < upper in every coordinate".into()));
        }
        Ok(BoxSpec { lower, upper })
    }

    /// `(lower + margin, upper - margin)` for finite bounds.
    pub fn open(lower: Vec<f64>, upper: Vec<f64>, margin: f64) -> Result<Self> {
        let lo = lower
            .iter()
            .map(|&l| if l.is_finite() { l + margin } else { l })
            .collect();
        let hi = upper
            .iter()
            .map(|&u| if u.is_finite() { u - margin } else { u })
            .collect();
        BoxSpec::new(lo, hi)
    }

    pub fn unbounded(n: usize) -> Self {
        BoxSpec {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains<T: Scalar>(&self, x: &[T]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&l, &u))| v.to_f64_lossy() >= l && v.to_f64_lossy() <= u)
    }

    pub fn project<T: Scalar>(&self, x: &mut [T]) {
        for (v, (&l, &u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.max(T::lit(l)).min(T::lit(u));
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsOptions {
    pub max_iters: usize,
    /// Correction pairs kept.
    pub memory: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Stop when the projected gradient's max-norm falls below this.
    pub gtol: f64,
    /// Stop when the relative decrease of f falls below this.
    pub ftol: f64,
    pub max_halvings: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            max_iters: 100,
            memory: 10,
            armijo: 1e-4,
            gtol: 1e-8,
            ftol: 1e-14,
            max_halvings: 60,
        }
    }
}

/// Curvature pairs carried between calls, so repeated partial minimisations
/// of slowly changing objectives keep their Hessian model.
#[derive(Clone, Debug, Default)]
pub struct LbfgsMemory<T> {
    pairs: VecDeque<(Vec<T>, Vec<T>)>,
    last: Option<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> LbfgsMemory<T> {
    pub fn new() -> Self {
        LbfgsMemory {
            pairs: VecDeque::new(),
            last: None,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
        self.last = None;
    }

    fn record(&mut self, x: &[T], g: &[T], cap: usize) {
        if let Some((xp, gp)) = self.last.take() {
            if xp.len() == x.len() {
                let s: Vec<T> = x.iter().zip(&xp).map(|(&a, &b)| a - b).collect();
                let y: Vec<T> = g.iter().zip(&gp).map(|(&a, &b)| a - b).collect();
                let sy = dot(&s, &y);
                let yy = dot(&y, &y);
                if sy > T::lit(1e-12) * yy && sy > T::zero() {
                    if self.pairs.len() == cap {
                        self.pairs.pop_front();
                    }
                    self.pairs.push_back((s, y));
                }
            }
        }
        self.last = Some((x.to_vec(), g.to_vec()));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinimizeOutcome<T> {
    pub x: Vec<T>,
    pub f: T,
    pub converged: bool,
    pub iters: usize,
    pub evaluations: usize,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Central-difference gradient with steps `cbrt(eps)·max(1, |x_k|)`, each
/// probe clamped into the box.
pub fn numerical_gradient<T: Scalar, F: FnMut(&[T]) -> T>(
    objective: &mut F,
    x: &[T],
    bounds: &BoxSpec,
    evaluations: &mut usize,
) -> Result<Vec<T>> {
    let h0 = T::epsilon().cbrt();
    let mut probe = x.to_vec();
    let mut g = vec![T::zero(); x.len()];
    for k in 0..x.len() {
        let h = h0 * x[k].abs().max(T::one());
        let lo = T::lit(bounds.lower[k]);
        let hi = T::lit(bounds.upper[k]);
        let xp = (x[k] + h).min(hi);
        let xm = (x[k] - h).max(lo);
        probe[k] = xp;
        let fp = objective(&probe);
        probe[k] = xm;
        let fm = objective(&probe);
        probe[k] = x[k];
        *evaluations += 2;
        if !fp.is_finite() || !fm.is_finite() {
            let mut bad = x.to_vec();
            bad[k] = if fp.is_finite() { xm } else { xp };
            return Err(Error::Probe {
                point: bad.iter().map(|v| v.to_f64_lossy()).collect(),
            });
        }
        g[k] = (fp - fm) / (xp - xm);
    }
    Ok(g)
}

/// Minimises `objective` over the box starting from `x0`, running at most
/// `max_iters` quasi-Newton steps. `f(x*) ≤ f(x0)` always holds.
pub fn minimize_step<T: Scalar, F: FnMut(&[T]) -> T>(
    objective: F,
    x0: &[T],
    bounds: &BoxSpec,
    max_iters: usize,
) -> Result<MinimizeOutcome<T>> {
    let opts = LbfgsOptions {
        max_iters,
        ..LbfgsOptions::default()
    };
    minimize_with(objective, x0, bounds, &opts, &mut LbfgsMemory::new())
}

pub fn minimize_with<T: Scalar, F: FnMut(&[T]) -> T>(
    mut objective: F,
    x0: &[T],
    bounds: &BoxSpec,
    opts: &LbfgsOptions,
    memory: &mut LbfgsMemory<T>,
) -> Result<MinimizeOutcome<T>> {
    if x0.len() != bounds.dim() {
        return Err(Error::Dimension(format!(
            "start point has {} coordinates, box has {}",
            x0.len(),
            bounds.dim()
        )));
    }
    if !bounds.contains(x0) {
        return Err(Error::domain("x0", "start point outside the box"));
    }
    let mut evaluations = 1;
    let mut x = x0.to_vec();
    let mut f = objective(&x);
    if !f.is_finite() {
        return Err(Error::Probe {
            point: x.iter().map(|v| v.to_f64_lossy()).collect(),
        });
    }
    let n = x.len();
    let lo: Vec<T> = bounds.lower.iter().map(|&v| T::lit(v)).collect();
    let hi: Vec<T> = bounds.upper.iter().map(|&v| T::lit(v)).collect();
    let armijo = T::lit(opts.armijo);

    for iter in 0..opts.max_iters {
        let g = numerical_gradient(&mut objective, &x, bounds, &mut evaluations)?;
        memory.record(&x, &g, opts.memory);

        let pg = (0..n)
            .map(|k| (x[k] - (x[k] - g[k]).max(lo[k]).min(hi[k])).abs())
            .fold(T::zero(), T::max);
        if pg <= T::lit(opts.gtol) {
            return Ok(MinimizeOutcome {
                x,
                f,
                converged: true,
                iters: iter,
                evaluations,
            });
        }

        let free: Vec<bool> = (0..n)
            .map(|k| !((x[k] <= lo[k] && g[k] > T::zero()) || (x[k] >= hi[k] && g[k] < T::zero())))
            .collect();

        let mut accepted = None;
        for attempt in 0..2 {
            let use_memory = attempt == 0 && !memory.is_empty();
            let dir = if use_memory {
                two_loop(&memory.pairs, &g, &free)
            } else {
                let gn = g
                    .iter()
                    .zip(&free)
                    .filter(|(_, &f)| f)
                    .map(|(&v, _)| v * v)
                    .sum::<T>()
                    .sqrt();
                let scale = if gn > T::zero() {
                    T::one() / gn.max(T::one())
                } else {
                    T::one()
                };
                g.iter()
                    .zip(&free)
                    .map(|(&v, &f)| if f { -v * scale } else { T::zero() })
                    .collect()
            };
            if dot(&dir, &g) >= T::zero() {
                continue;
            }
            let mut t = T::one();
            for _ in 0..opts.max_halvings {
                let mut cand: Vec<T> = x.iter().zip(&dir).map(|(&a, &d)| a + t * d).collect();
                bounds.project(&mut cand);
                let step: Vec<T> = cand.iter().zip(&x).map(|(&a, &b)| a - b).collect();
                if step.iter().all(|v| *v == T::zero()) {
                    break;
                }
                let fc = objective(&cand);
                evaluations += 1;
                if fc.is_finite() && fc < f && fc <= f + armijo * dot(&g, &step) {
                    accepted = Some((cand, fc));
                    break;
                }
                t = t * T::lit(0.5);
            }
            if accepted.is_some() {
                break;
            }
            memory.pairs.clear();
        }

        match accepted {
            Some((xn, fnew)) => {
                let rel = (f - fnew) / f.abs().max(T::one());
                x = xn;
                f = fnew;
                if rel <= T::lit(opts.ftol) {
                    return Ok(MinimizeOutcome {
                        x,
                        f,
                        converged: true,
                        iters: iter + 1,
                        evaluations,
                    });
                }
            }
            None => {
                return Ok(MinimizeOutcome {
                    x,
                    f,
                    converged: false,
                    iters: iter,
                    evaluations,
                })
            }
        }
    }
    Ok(MinimizeOutcome {
        x,
        f,
        converged: false,
        iters: opts.max_iters,
        evaluations,
    })
}

/// −H g restricted to the free coordinates, H from the stored pairs.
fn two_loop<T: Scalar>(pairs: &VecDeque<(Vec<T>, Vec<T>)>, g: &[T], free: &[bool]) -> Vec<T> {
    let mask = |v: &[T]| -> Vec<T> {
        v.iter()
            .zip(free)
            .map(|(&a, &f)| if f { a } else { T::zero() })
            .collect()
    };
    let mut q = mask(g);
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y) in pairs.iter().rev() {
        let (s, y) = (mask(s), mask(y));
        let sy = dot(&s, &y);
        if sy <= T::zero() {
            alphas.push(None);
            continue;
        }
        let a = dot(&s, &q) / sy;
        q.iter_mut().zip(&y).for_each(|(qv, &yv)| *qv = *qv - a * yv);
        alphas.push(Some((a, sy)));
    }
    let gamma = pairs
        .back()
        .map(|(s, y)| {
            let (s, y) = (mask(s), mask(y));
            let yy = dot(&y, &y);
            if yy > T::zero() && dot(&s, &y) > T::zero() {
                dot(&s, &y) / yy
            } else {
                T::one()
            }
        })
        .unwrap_or(T::one());
    let mut r: Vec<T> = q.iter().map(|&v| v * gamma).collect();
    for ((s, y), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        if let Some((a, sy)) = a {
            let (s, y) = (mask(s), mask(y));
            let b = dot(&y, &r) / sy;
            r.iter_mut().zip(&s).for_each(|(rv, &sv)| *rv = *rv + (a - b) * sv);
        }
    }
    r.iter()
        .zip(free)
        .map(|(&v, &f)| if f { -v } else { T::zero() })
        .collect()
}
