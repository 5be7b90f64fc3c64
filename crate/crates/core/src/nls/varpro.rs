//! Variable projection: every family is linear in a subset of its
//! parameters, so for fixed nonlinear parameters the linear ones come from
//! an ordinary least-squares solve and the search runs over the rest only.
//!
//! | family | nonlinear | linear | design columns |
//! |---|---|---|---|
//! | sigmoid (shifted) | β4, β5 | β1, β2, β3 | 1, −x, z |
//! | sigmoid (raw) | β4, β5 | β1, β2, β3 | 1, −x, −s |
//! | double exponential | β2, β4 | β1, β3 | e^(β2 x), e^(β4 x) |
//! | mixture | β2 | β1, β3, β4 | e^(β2 x), x², 1 |
//! | polynomial | none | β1, β2, β3 | x², x, 1 |
//!
//! The optimizer works in standardized coordinates where the observed cycle
//! span maps to `[0, 1]`.

use crate::error::{invalid, Error, Result};
use crate::linalg::{lstsq, Matrix};
use crate::models::{logistic, Bound, Family, ModelSpec, WIDTH_FLOOR_REL};
use crate::nls::lm::LsqProblem;
use crate::scalar::Scalar;

/// Design matrix `(1 | −x | z(x, θ))` of the shifted sigmoid for fixed
/// `θ = (β4, β5)`, with `z_j = 1/(1+e^(θ1/θ2)) − 1/(1+e^(−(x_j−θ1)/θ2))`.
#[derive(Debug, Clone)]
pub struct DesignMatrix<T> {
    pub theta: [T; 2],
    matrix: Matrix<T>,
}

impl<T: Scalar> DesignMatrix<T> {
    pub fn new(x: &[T], theta: [T; 2]) -> Result<Self> {
        if !(theta[1] > T::zero()) {
            return Err(invalid("logistic width θ2 must be positive"));
        }
        let s0 = logistic(-theta[0] / theta[1]);
        let matrix = Matrix::from_fn(x.len(), 3, |i, j| match j {
            0 => T::one(),
            1 => -x[i],
            _ => s0 - logistic((x[i] - theta[0]) / theta[1]),
        });
        Ok(Self { theta, matrix })
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn z(&self) -> Vec<T> {
        self.matrix.column(2)
    }
}

fn check_xy<T: Scalar>(x: &[T], y: &[T], min_n: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(invalid(format!(
            "x has {} values but y has {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < min_n {
        return Err(invalid(format!(
            "need at least {min_n} observations, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("observations must be finite"));
    }
    Ok(())
}

/// Least-squares `(β1, β2, β3)` of the shifted sigmoid for fixed `θ`.
pub fn gamma_hat<T: Scalar>(theta: [T; 2], x: &[T], y: &[T]) -> Result<[T; 3]> {
    check_xy(x, y, 3)?;
    let design = DesignMatrix::new(x, theta)?;
    let (c, _) = lstsq(design.matrix(), y)?;
    Ok([c[0], c[1], c[2]])
}

/// Sum of squared residuals after eliminating the linear parameters.
pub fn reduced_objective<T: Scalar>(theta: [T; 2], x: &[T], y: &[T]) -> Result<T> {
    check_xy(x, y, 3)?;
    let design = DesignMatrix::new(x, theta)?;
    let (_, r) = lstsq(design.matrix(), y)?;
    Ok(r.iter().map(|&v| v * v).sum())
}

/// Separable structure of one family on one dataset.
pub(crate) struct Projection<'a, T> {
    pub family: Family,
    pub x: &'a [T],
    pub y: &'a [T],
    xmin: T,
    xmax: T,
    span: T,
    width_floor: T,
    /// Spec bounds of the nonlinear slots.
    nl_bounds: Vec<Bound<T>>,
}

/// Half-width of the standardized search interval for exponential rates.
const RATE_BOX: f64 = 12.0;

impl<'a, T: Scalar> Projection<'a, T> {
    pub fn new(spec: &ModelSpec<T>, x: &'a [T], y: &'a [T]) -> Result<Self> {
        let xmin = x.iter().copied().fold(T::infinity(), T::min);
        let xmax = x.iter().copied().fold(T::neg_infinity(), T::max);
        let span = xmax - xmin;
        if !(span > T::zero()) {
            return Err(Error::SingularDesign("all cycle values are equal".into()));
        }
        let family = spec.family;
        let nl_bounds: Vec<Bound<T>> = nonlinear_slots(family)
            .iter()
            .map(|&i| spec.bounds()[i])
            .collect();
        let width_floor = if family.is_sigmoid() {
            nl_bounds[1].lower.max(T::lit(WIDTH_FLOOR_REL) * span)
        } else {
            T::zero()
        };
        Ok(Self {
            family,
            x,
            y,
            xmin,
            xmax,
            span,
            width_floor,
            nl_bounds,
        })
    }

    pub fn nonlinear_dim(&self) -> usize {
        nonlinear_slots(self.family).len()
    }

    /// Standardized → natural nonlinear parameters.
    pub fn to_natural(&self, u: &[T]) -> Vec<T> {
        match self.family {
            Family::SigmoidShifted | Family::SigmoidRaw => {
                vec![self.xmin + self.span * u[0], self.span * u[1]]
            }
            Family::DoubleExponential | Family::Mixture => {
                u.iter().map(|&v| v / self.span).collect()
            }
            Family::Polynomial2 => Vec::new(),
        }
    }

    pub fn to_standard(&self, phi: &[T]) -> Vec<T> {
        match self.family {
            Family::SigmoidShifted | Family::SigmoidRaw => {
                vec![(phi[0] - self.xmin) / self.span, phi[1] / self.span]
            }
            Family::DoubleExponential | Family::Mixture => {
                phi.iter().map(|&v| v * self.span).collect()
            }
            Family::Polynomial2 => Vec::new(),
        }
    }

    /// Box explored by the global stages, standardized.
    pub fn search_box(&self) -> Vec<Bound<T>> {
        let local = self.local_bounds();
        let raw: Vec<Bound<T>> = match self.family {
            Family::SigmoidShifted | Family::SigmoidRaw => {
                let lo = self.to_standard(&[self.xmin, self.width_floor]);
                let hi = self.to_standard(&[T::lit(2.0) * self.xmax, self.xmax.max(self.span)]);
                vec![
                    Bound {
                        lower: lo[0],
                        upper: hi[0],
                    },
                    Bound {
                        lower: lo[1],
                        upper: hi[1],
                    },
                ]
            }
            _ => vec![
                Bound {
                    lower: T::lit(-RATE_BOX),
                    upper: T::lit(RATE_BOX),
                };
                self.nonlinear_dim()
            ],
        };
        raw.iter()
            .zip(&local)
            .map(|(r, l)| {
                let lower = r.lower.max(l.lower);
                let upper = r.upper.min(l.upper).max(lower);
                Bound { lower, upper }
            })
            .collect()
    }

    /// Feasible set of the nonlinear parameters, standardized.
    pub fn local_bounds(&self) -> Vec<Bound<T>> {
        match self.family {
            Family::SigmoidShifted | Family::SigmoidRaw => {
                let b4 = self.nl_bounds[0];
                let lower = self.to_standard(&[b4.lower, self.width_floor]);
                let upper = self.to_standard(&[b4.upper, self.nl_bounds[1].upper]);
                vec![
                    Bound {
                        lower: lower[0],
                        upper: upper[0],
                    },
                    Bound {
                        lower: lower[1],
                        upper: upper[1],
                    },
                ]
            }
            _ => self
                .nl_bounds
                .iter()
                .map(|b| {
                    let (l, u) = (b.lower * self.span, b.upper * self.span);
                    Bound {
                        lower: l.min(u),
                        upper: l.max(u),
                    }
                })
                .collect(),
        }
    }

    pub fn columns(&self, phi: &[T]) -> Result<Matrix<T>> {
        let x = self.x;
        Ok(match self.family {
            Family::SigmoidShifted => DesignMatrix::new(x, [phi[0], phi[1]])?.matrix,
            Family::SigmoidRaw => {
                if !(phi[1] > T::zero()) {
                    return Err(invalid("logistic width must be positive"));
                }
                Matrix::from_fn(x.len(), 3, |i, j| match j {
                    0 => T::one(),
                    1 => -x[i],
                    _ => -logistic((x[i] - phi[0]) / phi[1]),
                })
            }
            Family::DoubleExponential => Matrix::from_fn(x.len(), 2, |i, j| (phi[j] * x[i]).exp()),
            Family::Mixture => Matrix::from_fn(x.len(), 3, |i, j| match j {
                0 => (phi[0] * x[i]).exp(),
                1 => x[i] * x[i],
                _ => T::one(),
            }),
            Family::Polynomial2 => Matrix::from_fn(x.len(), 3, |i, j| match j {
                0 => x[i] * x[i],
                1 => x[i],
                _ => T::one(),
            }),
        })
    }

    /// Linear coefficients and residual vector `y − fit` for natural `phi`.
    pub fn solve(&self, phi: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let cols = self.columns(phi)?;
        let (gamma, resid) = lstsq(&cols, self.y)?;
        if gamma.iter().chain(&resid).any(|v| !v.is_finite()) {
            return Err(Error::SingularDesign("non-finite projection".into()));
        }
        Ok((gamma, resid))
    }

    pub fn sse_standard(&self, u: &[T]) -> T {
        match self.solve(&self.to_natural(u)) {
            Ok((_, r)) => r.iter().map(|&v| v * v).sum(),
            Err(_) => T::infinity(),
        }
    }

    /// Full parameter vector in family slot order.
    pub fn assemble(&self, gamma: &[T], phi: &[T]) -> Vec<T> {
        let mut beta = vec![T::zero(); self.family.param_count()];
        for (&slot, &g) in linear_slots(self.family).iter().zip(gamma) {
            beta[slot] = g;
        }
        for (&slot, &p) in nonlinear_slots(self.family).iter().zip(phi) {
            beta[slot] = p;
        }
        beta
    }
}

pub(crate) fn nonlinear_slots(family: Family) -> &'static [usize] {
    match family {
        Family::SigmoidShifted | Family::SigmoidRaw => &[3, 4],
        Family::DoubleExponential => &[1, 3],
        Family::Mixture => &[1],
        Family::Polynomial2 => &[],
    }
}

pub(crate) fn linear_slots(family: Family) -> &'static [usize] {
    match family {
        Family::SigmoidShifted | Family::SigmoidRaw => &[0, 1, 2],
        Family::DoubleExponential => &[0, 2],
        Family::Mixture => &[0, 2, 3],
        Family::Polynomial2 => &[0, 1, 2],
    }
}

/// Reduced problem in standardized coordinates: residuals `y − P(θ) y`,
/// Jacobian by central differences of that residual vector.
pub(crate) struct ReducedProblem<'p, 'a, T> {
    pub proj: &'p Projection<'a, T>,
    pub bounds: &'p [Bound<T>],
}

impl<T: Scalar> LsqProblem<T> for ReducedProblem<'_, '_, T> {
    fn residuals(&self, u: &[T]) -> Option<Vec<T>> {
        self.proj
            .solve(&self.proj.to_natural(u))
            .ok()
            .map(|(_, r)| r)
    }

    fn jacobian(&self, u: &[T], r: &[T]) -> Option<Matrix<T>> {
        let n = r.len();
        let k = u.len();
        let mut jac = Matrix::zeros(n, k);
        // central differences balance truncation and rounding at ε^(1/3)
        let rel = T::epsilon().cbrt();
        for j in 0..k {
            let h = rel * u[j].abs().max(T::lit(1e-6));
            let b = &self.bounds[j];
            let mut up = u.to_vec();
            let mut dn = u.to_vec();
            up[j] = u[j] + h;
            dn[j] = u[j] - h;
            let (ru, rd, denom) = if dn[j] < b.lower {
                (self.residuals(&up)?, r.to_vec(), up[j] - u[j])
            } else if up[j] > b.upper {
                (r.to_vec(), self.residuals(&dn)?, u[j] - dn[j])
            } else {
                (self.residuals(&up)?, self.residuals(&dn)?, up[j] - dn[j])
            };
            for i in 0..n {
                jac.set(i, j, (ru[i] - rd[i]) / denom);
            }
        }
        Some(jac)
    }
}
