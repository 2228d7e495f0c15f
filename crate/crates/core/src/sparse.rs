//! Sparse matrices (CSR) and a banded direct solver.
//!
//! Row-major dof ordering on the uniform mesh makes every assembled operator
//! banded with half-bandwidth N_h, so the per-stage systems
//! (Mass + i tau gamma_i K) are factored once with a banded LU (partial
//! pivoting, LAPACK gbtrf-style band storage) and the factorization is reused
//! for every step while tau and K are unchanged.

use crate::error::{Error, Result};
use crate::C64;

/// Scalar admitted in matrices and solvers (f64 and Complex64).
pub trait Scalar:
    Copy
    + PartialEq
    + std::fmt::Debug
    + Send
    + Sync
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
{
    const ZERO: Self;
    const ONE: Self;
    /// Magnitude used for pivot selection (cheap |re| + |im| variant).
    fn pivot_mag(self) -> f64;
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn pivot_mag(self) -> f64 {
        self.abs()
    }
}

impl Scalar for C64 {
    const ZERO: Self = C64::new(0.0, 0.0);
    const ONE: Self = C64::new(1.0, 0.0);
    fn pivot_mag(self) -> f64 {
        self.re.abs() + self.im.abs()
    }
}

/// Compressed sparse rows. Column indices strictly increasing within a row.
#[derive(Debug, Clone)]
pub struct CsrMatrix<T> {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut entries: Vec<(usize, usize, T)> = triplets.to_vec();
        entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
        debug_assert!(entries.iter().all(|&(i, j, _)| i < n_rows && j < n_cols));

        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (i, j, v) in entries {
            if col_idx.len() > row_ptr[i] && *col_idx.last().unwrap() == j && row_ptr[i + 1] > 0 {
                let last = values.len() - 1;
                values[last] += v;
            } else {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr[i + 1] = col_idx.len();
        }
        // Rows without entries inherit the running offset.
        for i in 1..=n_rows {
            if row_ptr[i] < row_ptr[i - 1] {
                row_ptr[i] = row_ptr[i - 1];
            }
        }
        CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entry (i, j), zero if not stored.
    pub fn get(&self, i: usize, j: usize) -> T {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(k) => self.values[lo + k],
            Err(_) => T::ZERO,
        }
    }

    /// y = A x.
    pub fn matvec(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for i in 0..self.n_rows {
            let mut acc = T::ZERO;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    pub fn matvec_alloc(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::ZERO; self.n_rows];
        self.matvec(x, &mut y);
        y
    }

    /// Largest |i - j| over stored entries.
    pub fn bandwidth(&self) -> usize {
        let mut b = 0usize;
        for i in 0..self.n_rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                b = b.max(self.col_idx[k].abs_diff(i));
            }
        }
        b
    }
}

impl CsrMatrix<f64> {
    /// y = A x for a real matrix applied to a complex vector.
    pub fn matvec_c(&self, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for i in 0..self.n_rows {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += x[self.col_idx[k]] * self.values[k];
            }
            y[i] = acc;
        }
    }

    pub fn matvec_c_alloc(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.n_rows];
        self.matvec_c(x, &mut y);
        y
    }
}

/// LU factorization of a banded matrix with partial pivoting.
///
/// Band storage is row-major: row i holds columns [i - kl, i + kl + ku], the
/// extra kl superdiagonals absorbing pivot fill. Elimination and row swaps
/// operate on contiguous slices.
#[derive(Debug, Clone)]
pub struct BandedLu<T> {
    n: usize,
    kl: usize,
    /// Working upper bandwidth kl + ku.
    kv: usize,
    /// Row width 2 kl + ku + 1.
    w: usize,
    data: Vec<T>,
    ipiv: Vec<usize>,
}

impl<T: Scalar> BandedLu<T> {
    /// Factor a CSR matrix with lower/upper bandwidth kl/ku.
    pub fn from_csr(a: &CsrMatrix<T>, kl: usize, ku: usize) -> Result<Self> {
        if a.n_rows != a.n_cols {
            return Err(Error::Data(format!(
                "banded LU needs a square matrix, got {}x{}",
                a.n_rows, a.n_cols
            )));
        }
        let n = a.n_rows;
        let kv = kl + ku;
        let w = kl + kv + 1;
        let mut data = vec![T::ZERO; n * w];
        for i in 0..n {
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.col_idx[k];
                if j + kl < i || j > i + ku {
                    return Err(Error::Data(format!(
                        "entry ({i}, {j}) outside declared bandwidth kl={kl}, ku={ku}"
                    )));
                }
                data[i * w + (j + kl - i)] = a.values[k];
            }
        }
        let mut lu = BandedLu {
            n,
            kl,
            kv,
            w,
            data,
            ipiv: vec![0; n],
        };
        lu.factor()?;
        Ok(lu)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kv);
        i * self.w + (j + self.kl - i)
    }

    fn factor(&mut self) -> Result<()> {
        let n = self.n;
        for k in 0..n {
            let i_max = (k + self.kl).min(n - 1);
            // Partial pivot over the kl rows below the diagonal.
            let mut p = k;
            let mut best = self.data[self.idx(k, k)].pivot_mag();
            for i in k + 1..=i_max {
                let mag = self.data[self.idx(i, k)].pivot_mag();
                if mag > best {
                    best = mag;
                    p = i;
                }
            }
            self.ipiv[k] = p;
            if best == 0.0 {
                return Err(Error::Numerics(format!(
                    "banded LU: matrix singular at column {k}"
                )));
            }
            let j_max = (k + self.kv).min(n - 1);
            if p != k {
                for j in k..=j_max {
                    let (a, b) = (self.idx(k, j), self.idx(p, j));
                    self.data.swap(a, b);
                }
            }
            let piv = self.data[self.idx(k, k)];
            for i in k + 1..=i_max {
                let pos = self.idx(i, k);
                let l = self.data[pos] / piv;
                self.data[pos] = l;
                if l != T::ZERO && j_max > k {
                    let (dst0, src0) = (self.idx(i, k + 1), self.idx(k, k + 1));
                    let len = j_max - k;
                    // Contiguous row segments in band storage.
                    let (head, tail) = self.data.split_at_mut(dst0);
                    let src = &head[src0..src0 + len];
                    let dst = &mut tail[..len];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d -= l * *s;
                    }
                }
            }
        }
        Ok(())
    }

    /// Solve A x = b in place.
    pub fn solve_in_place(&self, b: &mut [T]) {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        // Forward: interleave row interchanges with the L multipliers, in the
        // order they were produced.
        for k in 0..n {
            let p = self.ipiv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != T::ZERO {
                let i_max = (k + self.kl).min(n - 1);
                for i in k + 1..=i_max {
                    let l = self.data[self.idx(i, k)];
                    b[i] -= l * bk;
                }
            }
        }
        // Back substitution with the banded U.
        for k in (0..n).rev() {
            let j_max = (k + self.kv).min(n - 1);
            let mut acc = b[k];
            for j in k + 1..=j_max {
                acc -= self.data[self.idx(k, j)] * b[j];
            }
            b[k] = acc / self.data[self.idx(k, k)];
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Complex inner product conjugating the first argument: sum conj(u_k) v_k.
pub fn dot_c(u: &[C64], v: &[C64]) -> C64 {
    debug_assert_eq!(u.len(), v.len());
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

/// Smallest generalized eigenpair of A v = lambda M v for symmetric positive
/// definite A, M, by inverse iteration with the banded solver.
///
/// Returns (lambda, v) with v normalized to unit M-norm; the residual
/// ||A v - lambda M v|| is driven below rtol * ||A v||.
pub fn smallest_eigenpair(
    a: &CsrMatrix<f64>,
    m: &CsrMatrix<f64>,
    rtol: f64,
    max_iters: usize,
) -> Result<(f64, Vec<f64>)> {
    let n = a.n_rows;
    let band = a.bandwidth();
    let lu = BandedLu::from_csr(a, band, band)?;
    let mut x = vec![1.0; n];
    for _ in 0..max_iters {
        let mx = m.matvec_alloc(&x);
        let y = lu.solve(&mx);
        let my = m.matvec_alloc(&y);
        let m_norm = y.iter().zip(&my).map(|(a, b)| a * b).sum::<f64>().sqrt();
        if !m_norm.is_finite() || m_norm == 0.0 {
            return Err(Error::Numerics("inverse iteration degenerated".into()));
        }
        x = y.iter().map(|v| v / m_norm).collect();
        let ax = a.matvec_alloc(&x);
        let mx2 = m.matvec_alloc(&x);
        let lambda = x.iter().zip(&ax).map(|(xi, ai)| xi * ai).sum::<f64>();
        let res: f64 = ax
            .iter()
            .zip(&mx2)
            .map(|(&ai, &mi)| (ai - lambda * mi).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = ax.iter().map(|v| v * v).sum::<f64>().sqrt();
        if res <= rtol * scale {
            return Ok((lambda, x));
        }
    }
    Err(Error::Numerics(format!(
        "inverse iteration: no convergence in {max_iters} iterations"
    )))
}
