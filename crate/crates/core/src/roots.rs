//! First-passage root finding for scalar curves: bracket by doubling,
//! locate the first sign change on a uniform scan, then bisect to machine
//! precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseOptions<T> {
    /// Largest abscissa searched, in kilocycles.
    pub horizon: T,
    /// Uniform cells used to isolate the first sign change.
    pub scan_cells: usize,
}

impl<T: Scalar> Default for InverseOptions<T> {
    fn default() -> Self {
        Self {
            horizon: T::lit(1000.0),
            scan_cells: 1024,
        }
    }
}

/// A located crossing of a target level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing<T> {
    pub x: T,
    /// Set when the curve meets the target more than once on `[0, horizon]`.
    pub multiple_crossings: bool,
}

/// Smallest `x ≥ 0` with `curve(x) = target`, for a curve starting above the
/// target.
pub fn first_crossing<T: Scalar>(
    curve: impl Fn(T) -> T,
    target: T,
    opts: &InverseOptions<T>,
    check_multiple: bool,
) -> Result<Crossing<T>> {
    if !(opts.horizon > T::zero()) || opts.scan_cells == 0 {
        return Err(Error::InvalidArgument(
            "horizon must be positive and scan_cells nonzero".into(),
        ));
    }
    let above = |x: T| curve(x) - target;
    let initial = curve(T::zero());
    if !(initial > target) {
        return Err(Error::NoCrossing {
            target: target.as_f64(),
            initial: initial.as_f64(),
        });
    }

    let mut hi = T::one().min(opts.horizon);
    while above(hi) > T::zero() && hi < opts.horizon {
        hi = (hi + hi).min(opts.horizon);
    }

    let cells = T::from_usize_lossy(opts.scan_cells);
    let mut lo_x = T::zero();
    let mut bracket = None;
    for k in 1..=opts.scan_cells {
        let xk = hi * T::from_usize_lossy(k) / cells;
        if !(above(xk) > T::zero()) {
            bracket = Some((lo_x, xk));
            break;
        }
        lo_x = xk;
    }
    let (a, b) = bracket.ok_or(Error::HorizonExceeded {
        target: target.as_f64(),
        horizon: opts.horizon.as_f64(),
    })?;
    let x = bisect(above, a, b);

    let multiple_crossings = check_multiple && count_sign_changes(above, opts) > 1;
    Ok(Crossing {
        x,
        multiple_crossings,
    })
}

/// Bisection on `g` with `g(a) > 0 ≥ g(b)`, run until the bracket cannot
/// shrink further. Returns the endpoint with the smaller |g|.
pub(crate) fn bisect<T: Scalar>(g: impl Fn(T) -> T, mut a: T, mut b: T) -> T {
    let mut ga = g(a);
    let mut gb = g(b);
    for _ in 0..400 {
        let mid = a + (b - a) / T::lit(2.0);
        if !(mid > a && mid < b) {
            break;
        }
        let gm = g(mid);
        if gm > T::zero() {
            a = mid;
            ga = gm;
        } else {
            b = mid;
            gb = gm;
        }
    }
    if ga.abs() <= gb.abs() {
        a
    } else {
        b
    }
}

fn count_sign_changes<T: Scalar>(g: impl Fn(T) -> T, opts: &InverseOptions<T>) -> usize {
    let cells = opts.scan_cells * 4;
    let n = T::from_usize_lossy(cells);
    let mut prev = g(T::zero()) > T::zero();
    let mut changes = 0;
    for k in 1..=cells {
        let cur = g(opts.horizon * T::from_usize_lossy(k) / n) > T::zero();
        if cur != prev {
            changes += 1;
        }
        prev = cur;
    }
    changes
}
