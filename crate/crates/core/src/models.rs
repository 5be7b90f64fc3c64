//! Parametric capacity-fade curves.
//!
//! The cycle axis is in kilocycles and capacities in the trace's own unit.
//! Five families are supported:
//!
//! | family | curve | params |
//! |---|---|---|
//! | `SigmoidShifted` | `b1 − b2·x − g(x) + g(0)` | 5 |
//! | `SigmoidRaw` | `b1 − b2·x − g(x)` | 5 |
//! | `DoubleExponential` | `b1·e^(b2·x) + b3·e^(b4·x)` | 4 |
//! | `Polynomial2` | `b1·x² + b2·x + b3` | 3 |
//! | `Mixture` | `b1·e^(b2·x) + b3·x² + b4` | 4 |
//!
//! with the logistic component `g(x) = b3 / (1 + e^(−(x − b4)/b5))`.
//! In the shifted form `b1` is the capacity at `x = 0`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::roots::{first_crossing, Crossing, InverseOptions};
use crate::scalar::Scalar;

/// Relative floor on the logistic width, as a fraction of the cycle span.
pub const WIDTH_FLOOR_REL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    #[serde(rename = "sigmoid")]
    SigmoidShifted,
    SigmoidRaw,
    #[serde(rename = "double-exp")]
    DoubleExponential,
    #[serde(rename = "poly2")]
    Polynomial2,
    Mixture,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::SigmoidShifted,
        Family::SigmoidRaw,
        Family::DoubleExponential,
        Family::Polynomial2,
        Family::Mixture,
    ];

    pub const fn param_count(self) -> usize {
        match self {
            Family::SigmoidShifted | Family::SigmoidRaw => 5,
            Family::DoubleExponential | Family::Mixture => 4,
            Family::Polynomial2 => 3,
        }
    }

    pub const fn is_sigmoid(self) -> bool {
        matches!(self, Family::SigmoidShifted | Family::SigmoidRaw)
    }

    pub const fn name(self) -> &'static str {
        match self {
            Family::SigmoidShifted => "sigmoid",
            Family::SigmoidRaw => "sigmoid-raw",
            Family::DoubleExponential => "double-exp",
            Family::Polynomial2 => "poly2",
            Family::Mixture => "mixture",
        }
    }

    /// Curve value without any argument checking.
    pub fn eval<T: Scalar>(self, b: &[T], x: T) -> T {
        match self {
            Family::SigmoidShifted => {
                let t = (x - b[3]) / b[4];
                let t0 = -b[3] / b[4];
                b[0] - b[1] * x - b[2] * logistic(t) + b[2] * logistic(t0)
            }
            Family::SigmoidRaw => b[0] - b[1] * x - b[2] * logistic((x - b[3]) / b[4]),
            Family::DoubleExponential => b[0] * (b[1] * x).exp() + b[2] * (b[3] * x).exp(),
            Family::Polynomial2 => (b[0] * x + b[1]) * x + b[2],
            Family::Mixture => b[0] * (b[1] * x).exp() + b[2] * x * x + b[3],
        }
    }

    /// Analytic parameter gradient without any argument checking.
    pub fn grad<T: Scalar>(self, b: &[T], x: T) -> Vec<T> {
        match self {
            Family::SigmoidShifted | Family::SigmoidRaw => {
                let t = (x - b[3]) / b[4];
                let (s, ds) = (logistic(t), logistic_slope(t));
                let mut d3 = -s;
                let mut d4 = b[2] * ds / b[4];
                let mut d5 = b[2] * ds * t / b[4];
                if self == Family::SigmoidShifted {
                    let t0 = -b[3] / b[4];
                    let (s0, ds0) = (logistic(t0), logistic_slope(t0));
                    d3 = d3 + s0;
                    d4 = d4 - b[2] * ds0 / b[4];
                    d5 = d5 - b[2] * ds0 * t0 / b[4];
                }
                vec![T::one(), -x, d3, d4, d5]
            }
            Family::DoubleExponential => {
                let (e1, e2) = ((b[1] * x).exp(), (b[3] * x).exp());
                vec![e1, b[0] * x * e1, e2, b[2] * x * e2]
            }
            Family::Polynomial2 => vec![x * x, x, T::one()],
            Family::Mixture => {
                let e = (b[1] * x).exp();
                vec![e, b[0] * x * e, x * x, T::one()]
            }
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" | "sigmoid-shifted" => Ok(Family::SigmoidShifted),
            "sigmoid-raw" => Ok(Family::SigmoidRaw),
            "double-exp" | "double-exponential" => Ok(Family::DoubleExponential),
            "poly2" | "polynomial2" => Ok(Family::Polynomial2),
            "mixture" => Ok(Family::Mixture),
            other => Err(invalid(format!("unknown model family '{other}'"))),
        }
    }
}

/// Logistic function `1/(1+e^(−t))`, evaluated on the branch that never
/// overflows.
#[inline]
pub fn logistic<T: Scalar>(t: T) -> T {
    if t >= T::zero() {
        T::one() / (T::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (T::one() + e)
    }
}

/// Derivative of [`logistic`], `s(1−s) = e^(−|t|)/(1+e^(−|t|))²`.
#[inline]
pub fn logistic_slope<T: Scalar>(t: T) -> T {
    let e = (-t.abs()).exp();
    let d = T::one() + e;
    e / (d * d)
}

/// Closed interval constraint on one parameter. Infinite ends are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound<T> {
    pub lower: T,
    pub upper: T,
}

impl<T: Scalar> Bound<T> {
    pub fn free() -> Self {
        Self {
            lower: T::neg_infinity(),
            upper: T::infinity(),
        }
    }

    pub fn at_least(lower: T) -> Self {
        Self {
            lower,
            upper: T::infinity(),
        }
    }

    pub fn contains(&self, v: T) -> bool {
        v >= self.lower && v <= self.upper
    }

    pub fn clamp(&self, v: T) -> T {
        v.max(self.lower).min(self.upper)
    }
}

/// A model family together with its parameter bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec<T> {
    pub family: Family,
    bounds: Vec<Bound<T>>,
}

impl<T: Scalar> ModelSpec<T> {
    /// Default bounds: sigmoid families are nonnegative with a strictly
    /// positive width, the baselines are unconstrained.
    pub fn new(family: Family) -> Self {
        let bounds = if family.is_sigmoid() {
            let mut b = vec![Bound::at_least(T::zero()); 5];
            b[4] = Bound::at_least(T::min_positive_value());
            b
        } else {
            vec![Bound::free(); family.param_count()]
        };
        Self { family, bounds }
    }

    pub fn with_bounds(family: Family, bounds: Vec<Bound<T>>) -> Result<Self> {
        if bounds.len() != family.param_count() {
            return Err(invalid(format!(
                "{family} expects {} bounds, got {}",
                family.param_count(),
                bounds.len()
            )));
        }
        if bounds
            .iter()
            .any(|b| b.lower.is_nan() || b.upper.is_nan() || b.lower > b.upper)
        {
            return Err(invalid("bound with lower > upper or NaN"));
        }
        if family.is_sigmoid() {
            if bounds.iter().any(|b| b.lower < T::zero()) {
                return Err(invalid("sigmoid lower bounds must be nonnegative"));
            }
            if !(bounds[4].lower > T::zero()) {
                return Err(invalid("sigmoid width lower bound must be positive"));
            }
        }
        Ok(Self { family, bounds })
    }

    pub fn param_count(&self) -> usize {
        self.family.param_count()
    }

    pub fn bounds(&self) -> &[Bound<T>] {
        &self.bounds
    }

    pub fn check(&self, beta: &ParamVector<T>) -> Result<()> {
        if beta.family != self.family || beta.values.len() != self.param_count() {
            return Err(invalid(format!(
                "parameter vector for {} ({} values) does not match model {}",
                beta.family,
                beta.values.len(),
                self.family
            )));
        }
        Ok(())
    }

    pub fn is_feasible(&self, values: &[T]) -> bool {
        values.len() == self.bounds.len()
            && values.iter().zip(&self.bounds).all(|(&v, b)| b.contains(v))
    }
}

/// Parameter values of one family, in the family's slot order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector<T> {
    pub family: Family,
    pub values: Vec<T>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn new(family: Family, values: Vec<T>) -> Result<Self> {
        if values.len() != family.param_count() {
            return Err(invalid(format!(
                "{family} takes {} parameters, got {}",
                family.param_count(),
                values.len()
            )));
        }
        Ok(Self { family, values })
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    /// Curve value without re-validating.
    pub fn at(&self, x: T) -> T {
        self.family.eval(&self.values, x)
    }

    /// True for sigmoid parameters that make the curve strictly decreasing.
    pub fn is_strictly_decreasing(&self) -> bool {
        self.family.is_sigmoid()
            && self.values[1] > T::zero()
            && self.values[2] >= T::zero()
            && self.values[4] > T::zero()
    }
}

/// `f(x; β)`.
pub fn evaluate<T: Scalar>(spec: &ModelSpec<T>, beta: &ParamVector<T>, x: T) -> Result<T> {
    spec.check(beta)?;
    Ok(spec.family.eval(&beta.values, x))
}

/// `(∂f/∂β₁, …, ∂f/∂β_p)` at `x`.
pub fn gradient<T: Scalar>(spec: &ModelSpec<T>, beta: &ParamVector<T>, x: T) -> Result<Vec<T>> {
    spec.check(beta)?;
    Ok(spec.family.grad(&beta.values, x))
}

/// Smallest `x ≥ 0` where the curve falls to `y_target`.
///
/// Families that are not provably monotone for `beta` are additionally
/// scanned for further crossings, reported in [`Crossing::multiple_crossings`].
pub fn inverse<T: Scalar>(
    spec: &ModelSpec<T>,
    beta: &ParamVector<T>,
    y_target: T,
    opts: &InverseOptions<T>,
) -> Result<Crossing<T>> {
    spec.check(beta)?;
    let family = spec.family;
    let b = &beta.values;
    first_crossing(
        |x| family.eval(b, x),
        y_target,
        opts,
        !beta.is_strictly_decreasing(),
    )
}

/// Residual of the logistic ODE `g' = g(1 − g/β₃)/β₅` for the logistic
/// component with parameters `(β₃, β₄, β₅)`.
///
/// `g'` is taken from the closed-form derivative `β₃e^(−t)/(β₅(1+e^(−t))²)`,
/// independently of the `g·(1 − g/β₃)` product on the right.
pub fn verhulst_residual<T: Scalar>(logistic_params: [T; 3], x: T) -> Result<T> {
    let [b3, b4, b5] = logistic_params;
    if !(b3 > T::zero() && b5 > T::zero()) {
        return Err(invalid("Verhulst residual needs β3 > 0 and β5 > 0"));
    }
    let t = (x - b4) / b5;
    let e = (-t.abs()).exp();
    let g_prime = b3 * e / (b5 * (T::one() + e) * (T::one() + e));
    let g = b3 * logistic(t);
    Ok(g_prime - g * (T::one() - g / b3) / b5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const BATTERY_A: [f64; 5] = [1.82, 0.20, 1.06, 1.72, 0.21];

    fn sig(values: [f64; 5]) -> (ModelSpec<f64>, ParamVector<f64>) {
        (
            ModelSpec::new(Family::SigmoidShifted),
            ParamVector::new(Family::SigmoidShifted, values.to_vec()).unwrap(),
        )
    }

    #[test]
    fn shifted_sigmoid_starts_at_b1() {
        let (spec, beta) = sig(BATTERY_A);
        assert_eq!(evaluate(&spec, &beta, 0.0).unwrap(), 1.82);
    }

    #[test]
    fn zero_logistic_amplitude_is_a_line() {
        let (spec, beta) = sig([1.82, 0.20, 0.0, 1.72, 0.21]);
        assert!((evaluate(&spec, &beta, 2.0).unwrap() - 1.42).abs() < 1e-15);
    }

    #[test]
    fn value_at_inflection_matches_high_precision_oracle() {
        // 40-digit evaluation of b1 − b2·b4 − b3/2 + b3/(1+e^(b4/b5))
        let oracle = 0.946_293_837_246_944_3;
        let (spec, beta) = sig(BATTERY_A);
        assert!((evaluate(&spec, &beta, 1.72).unwrap() - oracle).abs() < 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let spec = ModelSpec::<f64>::new(Family::SigmoidShifted);
        let beta = ParamVector::new(Family::Polynomial2, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            evaluate(&spec, &beta, 1.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(ParamVector::new(Family::Mixture, vec![1.0f64; 5]).is_err());
    }

    #[test]
    fn first_two_gradient_slots_are_one_and_minus_x() {
        let (spec, beta) = sig(BATTERY_A);
        let g = gradient(&spec, &beta, 0.7).unwrap();
        assert_eq!(g[0], 1.0);
        assert_eq!(g[1], -0.7);
    }

    #[test]
    fn inverse_closed_form_on_line() {
        let (spec, beta) = sig([1.82, 0.20, 0.0, 1.72, 0.21]);
        let c = inverse(&spec, &beta, 0.91, &InverseOptions::default()).unwrap();
        assert!((c.x - 4.55).abs() < 1e-12);
        assert!(!c.multiple_crossings);
    }

    #[test]
    fn inverse_half_capacity_battery_a() {
        // 40-digit root of f(x) = 0.91
        let oracle = 1.744_851_402_903_679_5;
        let (spec, beta) = sig(BATTERY_A);
        let c = inverse(&spec, &beta, 0.91, &InverseOptions::default()).unwrap();
        assert!((c.x - oracle).abs() < 1e-9);
        assert!((beta.at(c.x) - 0.91).abs() <= 1e-9);
    }

    #[test]
    fn inverse_above_start_is_no_crossing() {
        let (spec, beta) = sig(BATTERY_A);
        assert!(matches!(
            inverse(&spec, &beta, 2.0, &InverseOptions::default()),
            Err(Error::NoCrossing { .. })
        ));
    }

    #[test]
    fn inverse_flags_nonmonotone_polynomial() {
        // 0.5x² − 2x + 2: dips to 0 at x = 2 and climbs again
        let spec = ModelSpec::new(Family::Polynomial2);
        let beta = ParamVector::new(Family::Polynomial2, vec![0.5f64, -2.0, 2.0]).unwrap();
        let opts = InverseOptions {
            horizon: 10.0,
            scan_cells: 512,
        };
        let c = inverse(&spec, &beta, 0.5, &opts).unwrap();
        assert!((c.x - 1.0).abs() < 1e-12);
        assert!(c.multiple_crossings);
    }

    #[test]
    fn verhulst_examples() {
        assert!(
            verhulst_residual([1.06f64, 1.72, 0.21], 1.72)
                .unwrap()
                .abs()
                < 1e-12
        );
        assert!(
            verhulst_residual([0.39f64, 0.37, 0.06], 0.37)
                .unwrap()
                .abs()
                < 1e-12
        );
        for k in 0..100 {
            let x = 5.0 * k as f64 / 99.0;
            assert!(verhulst_residual([1.06, 1.72, 0.21], x).unwrap().abs() < 1e-8);
        }
        assert!(verhulst_residual([0.0, 1.0, 1.0], 0.5).is_err());
    }

    #[test]
    fn logistic_is_exact_far_in_tails() {
        let t = 1e4f64;
        assert_eq!(logistic(t), 1.0);
        assert_eq!(logistic(-t), 0.0);
        assert!(logistic_slope(t) == 0.0 && logistic_slope(-t) == 0.0);
        assert!((logistic(-700.0f64) - (-700.0f64).exp()).abs() < 1e-300);
    }

    #[test]
    fn sigmoid_spec_bounds_are_positive_width() {
        let spec = ModelSpec::<f64>::new(Family::SigmoidShifted);
        assert!(spec.bounds().iter().all(|b| b.lower >= 0.0));
        assert!(spec.bounds()[4].lower > 0.0);
        let bad = vec![Bound::at_least(0.0); 5];
        assert!(ModelSpec::with_bounds(Family::SigmoidShifted, bad).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let spec = ModelSpec::<f32>::new(Family::SigmoidShifted);
        let beta =
            ParamVector::new(Family::SigmoidShifted, vec![1.82f32, 0.2, 1.06, 1.72, 0.21]).unwrap();
        assert_eq!(evaluate(&spec, &beta, 0.0).unwrap(), 1.82f32);
        let c = inverse(&spec, &beta, 0.91, &InverseOptions::default()).unwrap();
        assert!((c.x - 1.744_851_4).abs() < 1e-5);
    }

    fn sigmoid_params() -> impl Strategy<Value = [f64; 5]> {
        (
            0.5..2.5f64,
            0.01..0.5f64,
            0.0..1.5f64,
            0.2..3.0f64,
            0.05..0.6f64,
        )
            .prop_map(|(a, b, c, d, e)| [a, b, c, d, e])
    }

    proptest! {
        #[test]
        fn shift_between_raw_and_shifted_is_constant(b in sigmoid_params(), x in 0.0..5.0f64) {
            let diff = Family::SigmoidShifted.eval(&b, x) - Family::SigmoidRaw.eval(&b, x);
            let expect = b[2] / (1.0 + (b[3] / b[4]).exp());
            prop_assert!((diff - expect).abs() < 1e-13);
        }

        #[test]
        fn sigmoid_is_strictly_decreasing(b in sigmoid_params(), x in 0.0..5.0f64, dx in 1e-3..1.0f64) {
            for fam in [Family::SigmoidShifted, Family::SigmoidRaw] {
                prop_assert!(fam.eval(&b, x + dx) < fam.eval(&b, x));
            }
        }

        #[test]
        fn inverse_round_trips(b in sigmoid_params(), frac in 0.2..0.95f64) {
            let (spec, beta) = sig(b);
            let y = frac * b[0];
            let c = inverse(&spec, &beta, y, &InverseOptions::default()).unwrap();
            prop_assert!((beta.at(c.x) - y).abs() <= 1e-9);
        }
    }
}
