//! Least-squares generalized lasso with a banded penalty matrix:
//! minimise ½‖y − x‖² + λ‖D x‖₁.
//!
//! Solved by over-relaxed ADMM on the split `z = D x`; the linear step reuses
//! one banded Cholesky factor of `I + τ DᵀD`. Whenever the sign pattern of `z`
//! changes, the candidate active set is polished by solving the
//! equality-constrained problem it implies, and a solution is accepted once a
//! primal–dual gap certifies it.

use crate::banded::{BandedCholesky, BandedMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};
use std::ops::Neg;

/// Trend-filtering order and the two penalty weights (`f64::INFINITY`
/// allowed).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySpec {
    pub order: usize,
    #[serde(with = "crate::serde_ext::extended_f64")]
    pub lambda0: f64,
    #[serde(with = "crate::serde_ext::extended_f64")]
    pub lambda1: f64,
}

impl PenaltySpec {
    pub fn fused(lambda0: f64, lambda1: f64) -> Self {
        PenaltySpec {
            order: 0,
            lambda0,
            lambda1,
        }
    }

    pub fn lambda(&self, state: usize) -> f64 {
        if state == 0 {
            self.lambda0
        } else {
            self.lambda1
        }
    }

    pub fn validate(&self) -> Result<()> {
        for l in [self.lambda0, self.lambda1] {
            if l.is_nan() || l < 0.0 {
                return Err(Error::Config(format!("penalty weight {l} must be ≥ 0 or inf")));
            }
        }
        Ok(())
    }

    /// Difference operator acting on a curve of length `m` (= T − 1).
    pub fn difference_operator<T>(&self, m: usize) -> Result<BandedMatrix<T>>
    where
        T: Num + Copy + Neg<Output = T> + FromPrimitive,
    {
        build_difference_operator(self.order, m)
    }
}

/// (r+1)-th order discrete difference operator of shape (m − r − 1) × m with
/// exact integer stencil `(−1)^{r+1−k} C(r+1, k)`.
pub fn build_difference_operator<T>(r: usize, m: usize) -> Result<BandedMatrix<T>>
where
    T: Num + Copy + Neg<Output = T> + FromPrimitive,
{
    if m < r + 2 {
        return Err(Error::Dimension(format!(
            "difference operator of order {r} needs at least {} points, got {m}",
            r + 2
        )));
    }
    let k = r + 1;
    let mut stencil = Vec::with_capacity(k + 1);
    let mut binom: i64 = 1;
    for j in 0..=k {
        let c = T::from_i64(binom).expect("binomial fits the scalar type");
        stencil.push(if (k - j) % 2 == 0 { c } else { -c });
        binom = binom * (k - j) as i64 / (j as i64 + 1);
    }
    let rows = m - r - 1;
    let values = (0..rows).flat_map(|_| stencil.iter().copied()).collect();
    BandedMatrix::from_rows(m, k + 1, (0..rows).collect(), values)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdmmOptions {
    pub tau: f64,
    pub relaxation: f64,
    pub max_iters: usize,
    /// Absolute primal/dual residual tolerance.
    pub abs_tol: f64,
    /// Accept when gap ≤ gap_tol · (1 + ‖y‖²).
    pub gap_tol: f64,
    pub max_restarts: usize,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        AdmmOptions {
            tau: 1.0,
            relaxation: 1.5,
            max_iters: 10_000,
            abs_tol: 1e-10,
            gap_tol: 1e-8,
            max_restarts: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LassoSolution<T> {
    pub x: Vec<T>,
    /// Dual certificate with y − x ≈ λ Dᵀ u, |u| ≤ 1.
    pub dual: Vec<T>,
    pub gap: T,
    pub iters: usize,
    pub polished: bool,
    /// Sign of each row of D x (0 = fused); reusable as a warm-start hint.
    pub pattern: Vec<i8>,
}

/// Solves ½‖y − x‖² + λ‖D x‖₁ with default options.
pub fn solve_generalized_lasso<T: Scalar>(y: &[T], d: &BandedMatrix<T>, lambda: T) -> Result<Vec<T>> {
    Ok(solve_generalized_lasso_with(y, d, lambda, &AdmmOptions::default())?.x)
}

/// ½‖y − x‖² + λ‖D x‖₁.
pub fn primal_objective<T: Scalar>(y: &[T], d: &BandedMatrix<T>, lambda: T, x: &[T]) -> T {
    let fit = y.iter().zip(x).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() * T::lit(0.5);
    if lambda == T::zero() {
        return fit;
    }
    fit + lambda * d.mul_vec(x).iter().map(|v| v.abs()).sum::<T>()
}

/// Primal objective at `x` minus the dual objective at `u` clipped to the
/// unit box. Non-negative by weak duality.
pub fn duality_gap<T: Scalar>(y: &[T], d: &BandedMatrix<T>, lambda: T, x: &[T], u: &[T]) -> T {
    let uc: Vec<T> = u.iter().map(|&v| v.max(-T::one()).min(T::one())).collect();
    let dtu = d.tmul_vec(&uc);
    let half = T::lit(0.5);
    let yy: T = y.iter().map(|&v| v * v).sum();
    let resid: T = y
        .iter()
        .zip(&dtu)
        .map(|(&a, &b)| (a - lambda * b) * (a - lambda * b))
        .sum();
    primal_objective(y, d, lambda, x) - (half * yy - half * resid)
}

/// Euclidean projection of `y` onto the null space of `D` (the λ = ∞ limit).
pub fn project_null_space<T: Scalar>(y: &[T], d: &BandedMatrix<T>) -> Result<Vec<T>> {
    if d.nrows() == 0 {
        return Ok(y.to_vec());
    }
    let chol = d.row_gram().cholesky()?;
    let mu = chol.solve(&d.mul_vec(y));
    let corr = d.tmul_vec(&mu);
    Ok(y.iter().zip(corr).map(|(&a, b)| a - b).collect())
}

pub fn solve_generalized_lasso_with<T: Scalar>(
    y: &[T],
    d: &BandedMatrix<T>,
    lambda: T,
    opts: &AdmmOptions,
) -> Result<LassoSolution<T>> {
    solve_generalized_lasso_hinted(y, d, lambda, opts, None)
}

/// As [`solve_generalized_lasso_with`], first trying the active set implied
/// by `hint` (typically the previous solution's pattern).
pub fn solve_generalized_lasso_hinted<T: Scalar>(
    y: &[T],
    d: &BandedMatrix<T>,
    lambda: T,
    opts: &AdmmOptions,
    hint: Option<&[i8]>,
) -> Result<LassoSolution<T>> {
    if d.ncols() != y.len() {
        return Err(Error::Dimension(format!(
            "penalty matrix has {} columns, y has length {}",
            d.ncols(),
            y.len()
        )));
    }
    if lambda.is_nan() || lambda < T::zero() {
        return Err(Error::Config(format!("lambda {lambda} must be ≥ 0 or inf")));
    }
    let m = d.nrows();
    if lambda == T::zero() || m == 0 {
        return Ok(LassoSolution {
            x: y.to_vec(),
            dual: vec![T::zero(); m],
            gap: T::zero(),
            iters: 0,
            polished: false,
            pattern: Vec::new(),
        });
    }
    if lambda.is_infinite() {
        return Ok(LassoSolution {
            x: project_null_space(y, d)?,
            dual: vec![T::zero(); m],
            gap: T::zero(),
            iters: 0,
            polished: false,
            pattern: vec![0; m],
        });
    }

    let yy: T = y.iter().map(|&v| v * v).sum();
    let gap_target = T::lit(opts.gap_tol) * (T::one() + yy);
    let abs_tol = T::lit(opts.abs_tol);
    let relax = T::lit(opts.relaxation);
    let mut tau = T::lit(opts.tau);
    let mut warm = None;
    if let Some(h) = hint.filter(|h| h.len() == m) {
        if let Some(sol) = polish(y, d, lambda, h)? {
            let gap = duality_gap(y, d, lambda, &sol.0, &sol.1);
            if gap <= gap_target && pattern_is_optimal(d, &sol.0, &sol.1, h) {
                return Ok(LassoSolution {
                    x: sol.0,
                    dual: sol.1,
                    gap,
                    iters: 0,
                    polished: true,
                    pattern: h.to_vec(),
                });
            }
            warm = Some(sol);
        }
    }
    let mut factor = d.normal_matrix(T::one(), tau).cholesky()?;

    // Warm start from the hinted active-set point and its clipped dual.
    let (mut x, mut w) = match warm {
        Some((x, u)) => {
            let w = u
                .iter()
                .map(|&v| v.max(-T::one()).min(T::one()) * lambda / tau)
                .collect();
            (x, w)
        }
        None => (y.to_vec(), vec![T::zero(); m]),
    };
    let mut z = d.mul_vec(&x);
    let mut last_pattern: Vec<i8> = Vec::new();
    let mut best_gap = T::infinity();
    let mut checkpoint_gap = T::infinity();
    let mut restarts = 0;

    for iter in 1..=opts.max_iters {
        x = admm_x_step(y, d, &factor, tau, &z, &w);
        let dx = d.mul_vec(&x);
        let z_old = std::mem::take(&mut z);
        let thresh = lambda / tau;
        z = Vec::with_capacity(m);
        for k in 0..m {
            let hat = relax * dx[k] + (T::one() - relax) * z_old[k];
            let v = hat + w[k];
            let zk = soft_threshold(v, thresh);
            w[k] = v - zk;
            z.push(zk);
        }

        let pattern: Vec<i8> = z.iter().map(|&v| sign_code(v)).collect();
        if pattern != last_pattern {
            if let Some(sol) = polish(y, d, lambda, &pattern)? {
                let gap = duality_gap(y, d, lambda, &sol.0, &sol.1);
                if gap <= gap_target && pattern_is_optimal(d, &sol.0, &sol.1, &pattern) {
                    return Ok(LassoSolution {
                        x: sol.0,
                        dual: sol.1,
                        gap,
                        iters: iter,
                        polished: true,
                        pattern,
                    });
                }
            }
            last_pattern = pattern;
        }

        let r_pri = dx.iter().zip(&z).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>().sqrt();
        let dz: Vec<T> = z.iter().zip(&z_old).map(|(&a, &b)| a - b).collect();
        let r_dual = tau * d.tmul_vec(&dz).iter().map(|&v| v * v).sum::<T>().sqrt();
        if iter % 10 == 0 || (r_pri <= abs_tol && r_dual <= abs_tol) {
            let u: Vec<T> = w.iter().map(|&v| tau * v / lambda).collect();
            let gap = duality_gap(y, d, lambda, &x, &u);
            best_gap = best_gap.min(gap);
            if gap <= gap_target || (r_pri <= abs_tol && r_dual <= abs_tol) {
                if let Some(sol) = round_and_polish(y, d, lambda, &dx, &u, gap_target)? {
                    return Ok(LassoSolution { iters: iter, ..sol });
                }
                return Ok(LassoSolution {
                    x,
                    dual: u.iter().map(|&v| v.max(-T::one()).min(T::one())).collect(),
                    gap,
                    iters: iter,
                    polished: false,
                    pattern: z.iter().map(|&v| sign_code(v)).collect(),
                });
            }
        }
        if iter % 500 == 0 {
            if best_gap > checkpoint_gap * T::lit(0.5) && restarts < opts.max_restarts {
                // Stalled: stiffen the consensus penalty, keeping the unscaled multiplier.
                let ten = T::lit(10.0);
                tau = tau * ten;
                w.iter_mut().for_each(|v| *v = *v / ten);
                factor = d.normal_matrix(T::one(), tau).cholesky()?;
                restarts += 1;
            }
            checkpoint_gap = best_gap;
        }
    }
    let u: Vec<T> = w.iter().map(|&v| tau * v / lambda).collect();
    let gap = duality_gap(y, d, lambda, &x, &u);
    if gap <= gap_target {
        if let Some(sol) = round_and_polish(y, d, lambda, &d.mul_vec(&x), &u, gap_target)? {
            return Ok(LassoSolution {
                iters: opts.max_iters,
                ..sol
            });
        }
        return Ok(LassoSolution {
            x,
            dual: u,
            gap,
            iters: opts.max_iters,
            polished: false,
            pattern: z.iter().map(|&v| sign_code(v)).collect(),
        });
    }
    Err(Error::Solver {
        iters: opts.max_iters,
        gap: gap.to_f64_lossy(),
    })
}

fn admm_x_step<T: Scalar>(
    y: &[T],
    d: &BandedMatrix<T>,
    factor: &BandedCholesky<T>,
    tau: T,
    z: &[T],
    w: &[T],
) -> Vec<T> {
    let zw: Vec<T> = z.iter().zip(w).map(|(&a, &b)| a - b).collect();
    let rhs: Vec<T> = y.iter().zip(d.tmul_vec(&zw)).map(|(&a, b)| a + tau * b).collect();
    factor.solve(&rhs)
}

#[inline]
fn soft_threshold<T: Scalar>(v: T, t: T) -> T {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        T::zero()
    }
}

#[inline]
fn sign_code<T: Scalar>(v: T) -> i8 {
    if v > T::zero() {
        1
    } else if v < T::zero() {
        -1
    } else {
        0
    }
}

/// Rounds an approximate ADMM point to an active set, once from the dual
/// (|u| < 1 means fused) and once from a thresholded `D x`, then runs a few
/// primal-dual active-set corrections. Keeps the first polished point that
/// is exactly optimal.
fn round_and_polish<T: Scalar>(
    y: &[T],
    d: &BandedMatrix<T>,
    lambda: T,
    dx: &[T],
    u: &[T],
    gap_target: T,
) -> Result<Option<LassoSolution<T>>> {
    let edge = T::one() - T::lit(1e-6);
    let from_dual: Vec<i8> = u
        .iter()
        .map(|&v| if v.abs() < edge { 0 } else { sign_code(v) })
        .collect();
    let scale = dx.iter().fold(T::one(), |m, &v| m.max(v.abs()));
    let cut = T::lit(1e-6) * scale;
    let from_primal: Vec<i8> = dx
        .iter()
        .map(|&v| if v.abs() <= cut { 0 } else { sign_code(v) })
        .collect();
    let slack = T::lit(1e-9);
    for mut pattern in [from_dual, from_primal] {
        for _ in 0..2 * pattern.len() + 2 {
            let Some((x, dual)) = polish(y, d, lambda, &pattern)? else {
                break;
            };
            let gap = duality_gap(y, d, lambda, &x, &dual);
            if gap <= gap_target && pattern_is_optimal(d, &x, &dual, &pattern) {
                return Ok(Some(LassoSolution {
                    x,
                    dual,
                    gap,
                    iters: 0,
                    polished: true,
                    pattern,
                }));
            }
            // Fuse rows whose sign flipped, release fused rows whose dual left the box.
            let dx = d.mul_vec(&x);
            let mut changed = false;
            for k in 0..pattern.len() {
                let next = match pattern[k] {
                    0 if dual[k].abs() > T::one() + slack => sign_code(dual[k]),
                    0 => 0,
                    s if dx[k] * T::lit(s as f64) < T::zero() => 0,
                    s => s,
                };
                changed |= next != pattern[k];
                pattern[k] = next;
            }
            if !changed {
                break;
            }
        }
    }
    Ok(None)
}

/// Subgradient conditions of a polished point: fused rows need |u| ≤ 1 and
/// signed rows must keep their sign. A small gap alone can hide an active
/// set that is slightly wrong.
fn pattern_is_optimal<T: Scalar>(d: &BandedMatrix<T>, x: &[T], dual: &[T], pattern: &[i8]) -> bool {
    let slack = T::lit(1e-9);
    let dx = d.mul_vec(x);
    let scale = x.iter().fold(T::one(), |m, &v| m.max(v.abs()));
    pattern.iter().zip(&dx).zip(dual).all(|((&s, &v), &u)| match s {
        0 => u.abs() <= T::one() + slack,
        _ => v * T::lit(s as f64) >= -slack * scale,
    })
}

/// Solves the problem restricted to the active set implied by `pattern`:
/// rows with a sign contribute λ·sign to the gradient, zero rows become
/// equality constraints. Returns the primal point and its dual vector.
fn polish<T: Scalar>(y: &[T], d: &BandedMatrix<T>, lambda: T, pattern: &[i8]) -> Result<Option<(Vec<T>, Vec<T>)>> {
    let signs: Vec<T> = pattern.iter().map(|&s| T::lit(s as f64)).collect();
    let shift = d.tmul_vec(&signs);
    let v: Vec<T> = y.iter().zip(shift).map(|(&a, b)| a - lambda * b).collect();
    let zero_rows: Vec<usize> = (0..pattern.len()).filter(|&k| pattern[k] == 0).collect();
    let mut dual = signs;
    if zero_rows.is_empty() {
        return Ok(Some((v, dual)));
    }
    let dz = d.select_rows(&zero_rows);
    let chol = match dz.row_gram().cholesky() {
        Ok(c) => c,
        Err(_) => return Ok(None),
    };
    let mu = chol.solve(&dz.mul_vec(&v));
    let corr = dz.tmul_vec(&mu);
    let x: Vec<T> = v.iter().zip(corr).map(|(&a, b)| a - b).collect();
    for (&k, &m) in zero_rows.iter().zip(&mu) {
        dual[k] = m / lambda;
    }
    Ok(Some((x, dual)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_differences() {
        let d = build_difference_operator::<i64>(0, 4).unwrap();
        assert_eq!(
            d.to_dense(),
            vec![vec![-1, 1, 0, 0], vec![0, -1, 1, 0], vec![0, 0, -1, 1]]
        );
        let d = build_difference_operator::<i64>(0, 2).unwrap();
        assert_eq!(d.to_dense(), vec![vec![-1, 1]]);
    }

    #[test]
    fn second_differences_compose_first() {
        let d2 = build_difference_operator::<i64>(1, 5).unwrap().to_dense();
        assert_eq!(d2[0], vec![1, -2, 1, 0, 0]);
        assert_eq!(d2.len(), 3);
        // D^(2) = D^(1)_{(m-2)×(m-1)} · D^(1)_{(m-1)×m}
        for r in 1..4usize {
            let m = 9;
            let hi = build_difference_operator::<i64>(r, m).unwrap().to_dense();
            let outer = build_difference_operator::<i64>(0, m - r).unwrap().to_dense();
            let inner = build_difference_operator::<i64>(r - 1, m).unwrap().to_dense();
            for i in 0..hi.len() {
                for j in 0..m {
                    let v: i64 = (0..inner.len()).map(|k| outer[i][k] * inner[k][j]).sum();
                    assert_eq!(hi[i][j], v, "r={r} i={i} j={j}");
                }
            }
        }
    }

    #[test]
    fn too_short_is_dimension_error() {
        assert!(matches!(
            build_difference_operator::<f64>(1, 2),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn trivial_penalties() {
        let d = build_difference_operator::<f64>(0, 2).unwrap();
        assert_eq!(solve_generalized_lasso(&[1.0, 3.0], &d, 0.0).unwrap(), vec![1.0, 3.0]);
        let x = solve_generalized_lasso(&[1.0, 3.0], &d, f64::INFINITY).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn three_point_fused() {
        let d = build_difference_operator::<f64>(0, 3).unwrap();
        let sol = solve_generalized_lasso_with(&[0.0, 4.0, 0.0], &d, 1.0, &AdmmOptions::default()).unwrap();
        for (a, b) in sol.x.iter().zip([1.0, 2.0, 1.0]) {
            assert!((a - b).abs() < 1e-12, "{:?}", sol.x);
        }
        assert!(sol.gap < 1e-12);
    }

    #[test]
    fn large_lambda_fuses_to_mean() {
        let d = build_difference_operator::<f64>(0, 5).unwrap();
        let y = [1.0, 5.0, -2.0, 0.5, 3.0];
        let x = solve_generalized_lasso(&y, &d, 100.0).unwrap();
        let mean = y.iter().sum::<f64>() / 5.0;
        assert!(x.iter().all(|v| (v - mean).abs() < 1e-9), "{x:?}");
    }

    #[test]
    fn f32_solver_runs() {
        let d = build_difference_operator::<f32>(0, 3).unwrap();
        let x = solve_generalized_lasso(&[0.0f32, 4.0, 0.0], &d, 1.0).unwrap();
        assert!((x[1] - 2.0).abs() < 1e-4);
    }
}
