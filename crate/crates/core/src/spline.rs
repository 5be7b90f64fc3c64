//! Natural cubic spline interpolation with first-crossing search.

use crate::error::{invalid, Result};
use crate::roots::bisect;
use crate::scalar::Scalar;

/// Interpolating cubic spline with zero second derivative at both ends.
#[derive(Debug, Clone)]
pub struct NaturalCubicSpline<T> {
    x: Vec<T>,
    y: Vec<T>,
    /// Second derivatives at the knots.
    m: Vec<T>,
}

impl<T: Scalar> NaturalCubicSpline<T> {
    pub fn new(x: &[T], y: &[T]) -> Result<Self> {
        let n = x.len();
        if n != y.len() {
            return Err(invalid("spline x and y lengths differ"));
        }
        if n < 3 {
            return Err(invalid("spline needs at least 3 knots"));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("spline knots must be strictly increasing"));
        }
        let h: Vec<T> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let six = T::lit(6.0);
        let two = T::lit(2.0);
        // Thomas algorithm on the interior equations
        let k = n - 2;
        let mut diag = vec![T::zero(); k];
        let mut rhs = vec![T::zero(); k];
        for i in 0..k {
            diag[i] = two * (h[i] + h[i + 1]);
            rhs[i] = six * ((y[i + 2] - y[i + 1]) / h[i + 1] - (y[i + 1] - y[i]) / h[i]);
        }
        for i in 1..k {
            let w = h[i] / diag[i - 1];
            diag[i] = diag[i] - w * h[i];
            rhs[i] = rhs[i] - w * rhs[i - 1];
        }
        let mut m = vec![T::zero(); n];
        for i in (0..k).rev() {
            let upper = if i + 1 < k {
                h[i + 1] * m[i + 2]
            } else {
                T::zero()
            };
            m[i + 1] = (rhs[i] - upper) / diag[i];
        }
        Ok(Self {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        })
    }

    /// Power-basis coefficients `(a, b, c, d)` of interval `i` in `t = x − xᵢ`.
    fn coefficients(&self, i: usize) -> [T; 4] {
        let h = self.x[i + 1] - self.x[i];
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let six = T::lit(6.0);
        [
            self.y[i],
            (self.y[i + 1] - self.y[i]) / h - h * (T::lit(2.0) * m0 + m1) / six,
            m0 / T::lit(2.0),
            (m1 - m0) / (six * h),
        ]
    }

    fn interval(&self, x: T) -> usize {
        let last = self.x.len() - 2;
        match self
            .x
            .binary_search_by(|k| k.partial_cmp(&x).expect("finite knots"))
        {
            Ok(i) => i.min(last),
            Err(0) => 0,
            Err(i) => (i - 1).min(last),
        }
    }

    pub fn eval(&self, x: T) -> T {
        let i = self.interval(x);
        let [a, b, c, d] = self.coefficients(i);
        let t = x - self.x[i];
        ((d * t + c) * t + b) * t + a
    }

    /// Smallest knot-range `x` where the spline falls from above `level` to
    /// `level` or below. Each interval's cubic is split at its critical
    /// points into monotone pieces, and the first piece with a sign change
    /// is bisected.
    pub fn first_crossing(&self, level: T) -> Option<T> {
        for i in 0..self.x.len() - 1 {
            let [a, b, c, d] = self.coefficients(i);
            let h = self.x[i + 1] - self.x[i];
            let poly = |t: T| ((d * t + c) * t + b) * t + a - level;
            let mut cuts = vec![T::zero()];
            let mut crit = quadratic_roots(T::lit(3.0) * d, T::lit(2.0) * c, b);
            crit.retain(|&t| t > T::zero() && t < h);
            crit.sort_by(|p, q| p.partial_cmp(q).expect("finite"));
            cuts.extend(crit);
            cuts.push(h);
            for w in cuts.windows(2) {
                let (lo, hi) = (w[0], w[1]);
                if poly(lo) > T::zero() && !(poly(hi) > T::zero()) {
                    return Some(self.x[i] + bisect(poly, lo, hi));
                }
            }
        }
        None
    }
}

/// Real roots of `a t² + b t + c`, degenerate cases included.
fn quadratic_roots<T: Scalar>(a: T, b: T, c: T) -> Vec<T> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == T::zero() {
        return Vec::new();
    }
    if a.abs() <= T::epsilon() * scale {
        return if b != T::zero() {
            vec![-c / b]
        } else {
            Vec::new()
        };
    }
    let disc = b * b - T::lit(4.0) * a * c;
    if disc < T::zero() {
        return Vec::new();
    }
    let sq = disc.sqrt();
    // numerically stable pair
    let q = -(b + b.signum() * sq) / T::lit(2.0);
    let mut roots = vec![q / a];
    if q != T::zero() {
        roots.push(c / q);
    }
    roots
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_knots_reproduce_the_line() {
        let x: Vec<f64> = (0..7).map(|i| 0.5 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 - 0.2 * v).collect();
        let s = NaturalCubicSpline::new(&x, &y).unwrap();
        assert!((s.eval(1.3) - (1.0 - 0.26)).abs() < 1e-14);
        let c = s.first_crossing(0.7).unwrap();
        assert!((c - 1.5).abs() < 1e-12);
    }

    #[test]
    fn interpolates_knots_and_has_natural_ends() {
        let x = [0.0f64, 0.4, 1.1, 1.5, 2.3, 3.0];
        let y = [1.0, 0.95, 0.93, 0.8, 0.5, 0.45];
        let s = NaturalCubicSpline::new(&x, &y).unwrap();
        for (xi, yi) in x.iter().zip(y) {
            assert!((s.eval(*xi) - yi).abs() < 1e-14);
        }
        assert_eq!(s.m[0], 0.0);
        assert_eq!(s.m[5], 0.0);
        // continuity of first derivative at an interior knot via one-sided differences
        let h = 1e-6;
        let left = (s.eval(1.1) - s.eval(1.1 - h)) / h;
        let right = (s.eval(1.1 + h) - s.eval(1.1)) / h;
        assert!((left - right).abs() < 1e-4);
    }

    #[test]
    fn matches_reference_natural_spline() {
        // reference second derivatives from a dense solve of the same system
        let x = [0.0f64, 1.0, 2.0, 3.0];
        let y = [0.0, 1.0, 0.0, 1.0];
        let s = NaturalCubicSpline::new(&x, &y).unwrap();
        // 4 M1 + M2 = -12, M1 + 4 M2 = 12  →  M1 = -4, M2 = 4
        assert!((s.m[1] + 4.0).abs() < 1e-14 && (s.m[2] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn no_crossing_above_minimum() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 0.95, 0.9, 0.86];
        let s = NaturalCubicSpline::new(&x, &y).unwrap();
        assert!(s.first_crossing(0.8).is_none());
    }

    #[test]
    fn rejects_unsorted_or_short_input() {
        assert!(NaturalCubicSpline::new(&[0.0, 1.0], &[1.0, 0.5]).is_err());
        assert!(NaturalCubicSpline::new(&[0.0, 2.0, 1.0], &[1.0, 0.5, 0.2]).is_err());
    }
}
