//! Row-banded rectangular matrices and banded symmetric positive-definite
//! factorisation.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Each row `i` stores `width` consecutive entries starting at column
/// `starts[i]`. Row starts are strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct BandedMatrix<T> {
    nrows: usize,
    ncols: usize,
    width: usize,
    starts: Vec<usize>,
    values: Vec<T>,
}

impl<T: Copy> BandedMatrix<T> {
    pub fn from_rows(ncols: usize, width: usize, starts: Vec<usize>, values: Vec<T>) -> Result<Self> {
        if values.len() != starts.len() * width {
            return Err(Error::Dimension("banded values do not match rows × width".into()));
        }
        if starts.iter().any(|&s| s + width > ncols) || starts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Dimension(
                "banded row starts must increase and fit the column count".into(),
            ));
        }
        Ok(BandedMatrix {
            nrows: starts.len(),
            ncols,
            width,
            starts,
            values,
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row_start(&self, i: usize) -> usize {
        self.starts[i]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        BandedMatrix {
            nrows: rows.len(),
            ncols: self.ncols,
            width: self.width,
            starts: rows.iter().map(|&i| self.starts[i]).collect(),
            values: rows.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
        }
    }
}

impl<T: num_traits::Zero + Copy> BandedMatrix<T> {
    pub fn get(&self, i: usize, j: usize) -> T {
        let s = self.starts[i];
        if j >= s && j < s + self.width {
            self.row(i)[j - s]
        } else {
            T::zero()
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        (0..self.nrows)
            .map(|i| (0..self.ncols).map(|j| self.get(i, j)).collect())
            .collect()
    }
}

impl<T: Scalar> BandedMatrix<T> {
    /// D x.
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        (0..self.nrows)
            .map(|i| {
                let s = self.starts[i];
                self.row(i)
                    .iter()
                    .zip(&x[s..s + self.width])
                    .fold(T::zero(), |a, (&d, &v)| a + d * v)
            })
            .collect()
    }

    /// Dᵀ u.
    pub fn tmul_vec(&self, u: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.ncols];
        for (i, &ui) in u.iter().enumerate() {
            let s = self.starts[i];
            for (o, &d) in out[s..s + self.width].iter_mut().zip(self.row(i)) {
                *o = *o + d * ui;
            }
        }
        out
    }

    /// D · diag(w).
    pub fn scale_columns(&self, w: &[T]) -> Self {
        let mut m = self.clone();
        for i in 0..m.nrows {
            let s = m.starts[i];
            for (k, v) in m.values[i * m.width..(i + 1) * m.width].iter_mut().enumerate() {
                *v = *v * w[s + k];
            }
        }
        m
    }

    /// `shift * I + scale * DᵀD`.
    pub fn normal_matrix(&self, shift: T, scale: T) -> SymBanded<T> {
        let bw = self.width.saturating_sub(1);
        let mut a = SymBanded::zeros(self.ncols, bw);
        for j in 0..self.ncols {
            a.add(j, j, shift);
        }
        for i in 0..self.nrows {
            let s = self.starts[i];
            let r = self.row(i);
            for p in 0..self.width {
                for q in 0..=p {
                    a.add(s + p, s + q, scale * r[p] * r[q]);
                }
            }
        }
        a
    }

    /// D Dᵀ (rows overlap only within `width - 1` positions).
    pub fn row_gram(&self) -> SymBanded<T> {
        let bw = self.width.saturating_sub(1);
        let mut a = SymBanded::zeros(self.nrows, bw);
        for i in 0..self.nrows {
            for k in i.saturating_sub(bw)..=i {
                let (si, sk) = (self.starts[i], self.starts[k]);
                if si >= sk + self.width {
                    continue;
                }
                let off = si - sk;
                let ri = self.row(i);
                let rk = self.row(k);
                let v = (0..self.width - off).fold(T::zero(), |acc, p| acc + ri[p] * rk[p + off]);
                a.add(i, k, v);
            }
        }
        a
    }
}

/// Symmetric matrix with half-bandwidth `bw`, lower band stored row-wise.
#[derive(Clone, Debug)]
pub struct SymBanded<T> {
    n: usize,
    bw: usize,
    data: Vec<T>,
}

impl<T: Scalar> SymBanded<T> {
    pub fn zeros(n: usize, bw: usize) -> Self {
        SymBanded {
            n,
            bw,
            data: vec![T::zero(); n * (bw + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (i - j)
    }

    pub fn add(&mut self, i: usize, j: usize, v: T) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] = self.data[k] + v;
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            T::zero()
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// In-place Cholesky factorisation A = L Lᵀ.
    pub fn cholesky(mut self) -> Result<BandedCholesky<T>> {
        let n = self.n;
        let bw = self.bw;
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                let lo = i.saturating_sub(bw).max(j.saturating_sub(bw));
                let mut sum = self.data[self.idx(i, j)];
                for k in lo..j {
                    sum = sum - self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                let dst = self.idx(i, j);
                if i == j {
                    if !(sum > T::zero()) {
                        return Err(Error::Numerical(format!(
                            "banded matrix not positive definite at pivot {i}"
                        )));
                    }
                    self.data[dst] = sum.sqrt();
                } else {
                    self.data[dst] = sum / self.data[self.idx(j, j)];
                }
            }
        }
        Ok(BandedCholesky { l: self })
    }
}

#[derive(Clone, Debug)]
pub struct BandedCholesky<T> {
    l: SymBanded<T>,
}

impl<T: Scalar> BandedCholesky<T> {
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let l = &self.l;
        let n = l.n;
        let bw = l.bw;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s = s - l.data[l.idx(i, k)] * y[k];
            }
            y[i] = s / l.data[l.idx(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s = s - l.data[l.idx(k, i)] * y[k];
            }
            y[i] = s / l.data[l.idx(i, i)];
        }
        y
    }
}
