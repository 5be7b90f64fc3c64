//! Small dense linear algebra: a row-major matrix and Householder QR.
//!
//! Everything here is sized for least-squares problems with a handful of
//! columns and up to a few thousand rows, so no blocking or pivoting.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// `Aᵀ v`
    pub fn tr_mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o = *o + a * vi;
            }
        }
        out
    }

    /// Keeps only the listed columns, in order.
    pub fn select_columns(&self, keep: &[usize]) -> Self {
        Self::from_fn(self.rows, keep.len(), |i, j| self.get(i, keep[j]))
    }
}

/// Householder QR factorization `A = QR` of a tall matrix (rows ≥ cols).
///
/// Q is kept implicitly as the sequence of reflectors.
#[derive(Debug, Clone)]
pub struct Qr<T> {
    /// Packed factor: R on and above the diagonal, reflector tails below.
    packed: Matrix<T>,
    /// Leading entry of each reflector.
    v_head: Vec<T>,
    /// 2 / vᵀv for each reflector, zero when the column was already zero.
    scale: Vec<T>,
    r_diag: Vec<T>,
}

impl<T: Scalar> Qr<T> {
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        let (m, n) = (a.rows(), a.cols());
        if m < n {
            return Err(Error::InvalidArgument(format!(
                "QR needs rows >= cols, got {m}x{n}"
            )));
        }
        let mut packed = a.clone();
        let mut v_head = vec![T::zero(); n];
        let mut scale = vec![T::zero(); n];
        let mut r_diag = vec![T::zero(); n];
        for k in 0..n {
            // scaled norm avoids overflow for large entries
            let amax = (k..m).fold(T::zero(), |acc, i| acc.max(packed.get(i, k).abs()));
            if amax == T::zero() {
                continue;
            }
            let norm = amax
                * (k..m)
                    .map(|i| {
                        let t = packed.get(i, k) / amax;
                        t * t
                    })
                    .sum::<T>()
                    .sqrt();
            let x0 = packed.get(k, k);
            let alpha = if x0 >= T::zero() { -norm } else { norm };
            let v0 = x0 - alpha;
            let vtv = v0 * v0 + (k + 1..m).map(|i| packed.get(i, k).powi(2)).sum::<T>();
            if vtv == T::zero() {
                r_diag[k] = alpha;
                continue;
            }
            let s = T::lit(2.0) / vtv;
            v_head[k] = v0;
            scale[k] = s;
            r_diag[k] = alpha;
            for j in k + 1..n {
                let dot = v0 * packed.get(k, j)
                    + (k + 1..m)
                        .map(|i| packed.get(i, k) * packed.get(i, j))
                        .sum::<T>();
                let f = s * dot;
                packed.set(k, j, packed.get(k, j) - f * v0);
                for i in k + 1..m {
                    let upd = packed.get(i, j) - f * packed.get(i, k);
                    packed.set(i, j, upd);
                }
            }
            packed.set(k, k, alpha);
        }
        Ok(Self {
            packed,
            v_head,
            scale,
            r_diag,
        })
    }

    pub fn cols(&self) -> usize {
        self.packed.cols()
    }

    pub fn r_diag(&self) -> &[T] {
        &self.r_diag
    }

    /// Ratio of largest to smallest |Rᵢᵢ|, a cheap condition estimate.
    pub fn condition_estimate(&self) -> f64 {
        let (lo, hi) = self
            .r_diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| {
                let a = d.abs().as_f64();
                (lo.min(a), hi.max(a))
            });
        if lo == 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    /// True when some |Rᵢᵢ| is negligible relative to the largest one.
    pub fn is_rank_deficient(&self, rel_tol: T) -> bool {
        let hi = self.r_diag.iter().fold(T::zero(), |a, d| a.max(d.abs()));
        hi == T::zero() || self.r_diag.iter().any(|d| d.abs() <= rel_tol * hi)
    }

    /// Overwrites `b` with `Qᵀ b`.
    pub fn apply_qt(&self, b: &mut [T]) {
        let (m, n) = (self.packed.rows(), self.packed.cols());
        assert_eq!(b.len(), m);
        for k in 0..n {
            let s = self.scale[k];
            if s == T::zero() {
                continue;
            }
            let v0 = self.v_head[k];
            let dot = v0 * b[k] + (k + 1..m).map(|i| self.packed.get(i, k) * b[i]).sum::<T>();
            let f = s * dot;
            b[k] = b[k] - f * v0;
            for (i, bi) in b.iter_mut().enumerate().skip(k + 1) {
                *bi = *bi - f * self.packed.get(i, k);
            }
        }
    }

    /// Solves `R x = c` for the leading `cols` entries of `c`.
    pub fn solve_r(&self, c: &[T]) -> Vec<T> {
        let n = self.cols();
        let mut x = vec![T::zero(); n];
        for i in (0..n).rev() {
            let mut acc = c[i];
            for j in i + 1..n {
                acc = acc - self.packed.get(i, j) * x[j];
            }
            x[i] = acc / self.packed.get(i, i);
        }
        x
    }

    /// Solves `Rᵀ w = c` by forward substitution.
    pub fn solve_rt(&self, c: &[T]) -> Vec<T> {
        let n = self.cols();
        assert_eq!(c.len(), n);
        let mut w = vec![T::zero(); n];
        for i in 0..n {
            let mut acc = c[i];
            for (j, wj) in w.iter().enumerate().take(i) {
                acc = acc - self.packed.get(j, i) * *wj;
            }
            w[i] = acc / self.packed.get(i, i);
        }
        w
    }
}

/// Relative tolerance on |Rᵢᵢ| below which a design is treated as singular.
pub(crate) fn rank_tol<T: Scalar>() -> T {
    T::epsilon() * T::lit(1e3)
}

/// Ordinary least squares `min ‖A c − b‖`, returning the coefficients and
/// the residual vector `b − A c`.
pub fn lstsq<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    if a.rows() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "lstsq: {} rows but {} observations",
            a.rows(),
            b.len()
        )));
    }
    let qr = Qr::new(a)?;
    if qr.is_rank_deficient(rank_tol()) {
        return Err(Error::SingularDesign(format!(
            "design matrix is rank deficient (condition estimate {:.3e})",
            qr.condition_estimate()
        )));
    }
    let mut qtb = b.to_vec();
    qr.apply_qt(&mut qtb);
    let coef = qr.solve_r(&qtb);
    let fitted = a.mul_vec(&coef);
    let resid = b.iter().zip(&fitted).map(|(&bi, &fi)| bi - fi).collect();
    Ok((coef, resid))
}
