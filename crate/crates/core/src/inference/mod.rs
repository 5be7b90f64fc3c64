//! Pointwise uncertainty for fitted curves: the residual variance,
//! asymptotic (linearized) intervals and parametric-bootstrap intervals.

mod bootstrap;
mod tdist;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{rank_tol, Matrix, Qr};
use crate::models::{ModelSpec, ParamVector};
use crate::nls::FitResult;
use crate::scalar::Scalar;

pub use bootstrap::{bootstrap_band, bootstrap_ensemble, BootstrapEnsemble, BootstrapOptions};
pub use tdist::{incomplete_beta, ln_gamma, t_cdf, t_quantile};

/// Which quantity an interval covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interval {
    /// The mean curve `f(x0; β)`.
    Confidence,
    /// A new observation at `x0`.
    Prediction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BandKind {
    #[serde(rename = "asymptotic-ci")]
    AsymptoticCI,
    #[serde(rename = "asymptotic-pi")]
    AsymptoticPI,
    #[serde(rename = "bootstrap-ci")]
    BootstrapCI,
    #[serde(rename = "bootstrap-pi")]
    BootstrapPI,
}

impl BandKind {
    pub const ALL: [BandKind; 4] = [
        BandKind::AsymptoticCI,
        BandKind::AsymptoticPI,
        BandKind::BootstrapCI,
        BandKind::BootstrapPI,
    ];

    pub fn interval(self) -> Interval {
        match self {
            BandKind::AsymptoticCI | BandKind::BootstrapCI => Interval::Confidence,
            BandKind::AsymptoticPI | BandKind::BootstrapPI => Interval::Prediction,
        }
    }

    pub fn is_bootstrap(self) -> bool {
        matches!(self, BandKind::BootstrapCI | BandKind::BootstrapPI)
    }

    pub fn name(self) -> &'static str {
        match self {
            BandKind::AsymptoticCI => "asymptotic-ci",
            BandKind::AsymptoticPI => "asymptotic-pi",
            BandKind::BootstrapCI => "bootstrap-ci",
            BandKind::BootstrapPI => "bootstrap-pi",
        }
    }
}

impl std::fmt::Display for BandKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BandKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BandKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| invalid(format!("unknown band kind '{s}'")))
    }
}

/// Bootstrap settings recorded with a band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandMeta {
    #[serde(rename = "B")]
    pub b: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
    /// Replicates dropped because their refit failed.
    pub failed: usize,
}

/// Pointwise interval curves over a grid of kilocycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band<T> {
    pub x_grid: Vec<T>,
    pub center: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub level: T,
    pub kind: BandKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<BandMeta>,
}

impl<T: Scalar> Band<T> {
    pub fn len(&self) -> usize {
        self.x_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_grid.is_empty()
    }

    pub fn half_widths(&self) -> Vec<T> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| (u - l) / T::lit(2.0))
            .collect()
    }

    /// Writes `x,center,lower,upper` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,center,lower,upper")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{}",
                self.x_grid[i], self.center[i], self.lower[i], self.upper[i]
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// `SSE / (n − p)`.
pub fn sigma2_hat<T: Scalar>(residuals: &[T], n: usize, p: usize) -> Result<T> {
    if n <= p {
        return Err(invalid(format!(
            "sigma2_hat needs n > p, got n = {n}, p = {p}"
        )));
    }
    if residuals.len() != n {
        return Err(invalid(format!(
            "expected {n} residuals, got {}",
            residuals.len()
        )));
    }
    let sse: T = residuals.iter().map(|&r| r * r).sum();
    Ok(sse / T::from_usize_lossy(n - p))
}

/// Rows `∂f/∂β` at each design point.
pub fn jacobian<T: Scalar>(
    spec: &ModelSpec<T>,
    beta: &ParamVector<T>,
    x: &[T],
) -> Result<Matrix<T>> {
    spec.check(beta)?;
    let rows: Vec<Vec<T>> = x
        .iter()
        .map(|&xi| spec.family.grad(&beta.values, xi))
        .collect();
    Ok(Matrix::from_rows(&rows))
}

pub(crate) fn check_level<T: Scalar>(level: T) -> Result<()> {
    if level > T::zero() && level < T::one() {
        Ok(())
    } else {
        Err(invalid(format!("level {level} outside (0, 1)")))
    }
}

/// Empirical quantile by linear interpolation between order statistics
/// (position `p·(K − 1)` from zero). `sorted` must be ascending.
pub fn quantile_type7<T: Scalar>(sorted: &[T], p: T) -> T {
    let k = sorted.len();
    assert!(k > 0, "quantile of an empty sample");
    let h = p * T::from_usize_lossy(k - 1);
    let lo = h.floor().to_usize().unwrap_or(0).min(k - 1);
    let hi = (lo + 1).min(k - 1);
    let frac = h - T::from_usize_lossy(lo);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Linearized intervals `f(x0; β̂) ± t·σ̂·√(c + f_β⊤(F⊤F)⁻¹f_β)` with `c = 0`
/// for confidence and `c = 1` for prediction, `t = |t_{1−α/2}(n − p)|`.
///
/// The quadratic form is `‖R⁻⊤f_β‖²` from the QR factorization of `F`.
pub fn asymptotic_band<T: Scalar>(
    fit: &FitResult<T>,
    spec: &ModelSpec<T>,
    x: &[T],
    x_grid: &[T],
    level: T,
    interval: Interval,
) -> Result<Band<T>> {
    check_level(level)?;
    if !fit.converged {
        return Err(invalid("asymptotic band needs a converged fit"));
    }
    let p = spec.param_count();
    if x.len() != fit.n {
        return Err(invalid(format!(
            "fit used {} points but {} cycle values were given",
            fit.n,
            x.len()
        )));
    }
    if fit.n <= p {
        return Err(invalid("asymptotic band needs n > p"));
    }
    let f = jacobian(spec, &fit.beta_hat, x)?;
    let qr = Qr::new(&f)?;
    let condition = qr.condition_estimate();
    if qr.is_rank_deficient(rank_tol::<T>()) || !condition.is_finite() {
        return Err(Error::IllConditioned { condition });
    }
    let alpha = T::one() - level;
    let t = T::lit(
        t_quantile(
            (T::one() - alpha / T::lit(2.0)).as_f64(),
            (fit.n - p) as f64,
        )?
        .abs(),
    );
    let sigma = fit.sigma2_hat.sqrt();
    let extra = match interval {
        Interval::Confidence => T::zero(),
        Interval::Prediction => T::one(),
    };
    let mut band = Band {
        x_grid: x_grid.to_vec(),
        center: Vec::with_capacity(x_grid.len()),
        lower: Vec::with_capacity(x_grid.len()),
        upper: Vec::with_capacity(x_grid.len()),
        level,
        kind: match interval {
            Interval::Confidence => BandKind::AsymptoticCI,
            Interval::Prediction => BandKind::AsymptoticPI,
        },
        meta: None,
    };
    for &x0 in x_grid {
        let center = fit.beta_hat.at(x0);
        let g = spec.family.grad(&fit.beta_hat.values, x0);
        let w = qr.solve_rt(&g);
        let quad: T = w.iter().map(|&v| v * v).sum();
        let half = t * sigma * (extra + quad).sqrt();
        band.center.push(center);
        band.lower.push(center - half);
        band.upper.push(center + half);
    }
    Ok(band)
}
