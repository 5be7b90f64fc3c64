//! Parametric bootstrap: simulate from the fitted curve with Gaussian errors
//! of variance σ̂², refit every replicate, and read intervals off empirical
//! quantiles.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_level, quantile_type7, Band, BandKind, BandMeta, Interval};
use crate::error::{invalid, Error, Result};
use crate::models::{ModelSpec, ParamVector};
use crate::nls::{fit as refit, FitConfig, FitResult};
use crate::rng::{derive_seed, stream, TAG_BOOT_DATA, TAG_BOOT_FIT, TAG_BOOT_PRED};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions<T> {
    /// Replicates, at least 100.
    pub b: usize,
    /// Prediction-error draws per replicate.
    pub m: usize,
    pub seed: u64,
    /// Template for replicate refits; its seed and hints are replaced.
    pub fit: FitConfig<T>,
}

impl<T: Scalar> Default for BootstrapOptions<T> {
    fn default() -> Self {
        Self {
            b: 1000,
            m: 1,
            seed: 0,
            fit: FitConfig::default(),
        }
    }
}

impl<T: Scalar> BootstrapOptions<T> {
    pub fn new(b: usize, m: usize, seed: u64) -> Self {
        Self {
            b,
            m,
            seed,
            ..Self::default()
        }
    }
}

/// Refitted replicates of one fit, reusable for several bands and for
/// end-of-life intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEnsemble<T> {
    pub base: ParamVector<T>,
    pub sigma2: T,
    pub replicates: Vec<ParamVector<T>>,
    /// `ε_m(b) ~ N(0, σ̂²)` for each surviving replicate.
    pub prediction_draws: Vec<Vec<T>>,
    pub b: usize,
    pub m: usize,
    pub seed: u64,
    pub failed: usize,
}

/// Runs the `B` replicate refits.
///
/// Replicate `b` draws its data from its own stream keyed by `(seed, b)`
/// and seeds its refit from the original `θ̂` plus a fresh sweep.
pub fn bootstrap_ensemble<T: Scalar>(
    fit: &FitResult<T>,
    spec: &ModelSpec<T>,
    x: &[T],
    opts: &BootstrapOptions<T>,
) -> Result<BootstrapEnsemble<T>> {
    if opts.b < 100 {
        return Err(invalid(format!("bootstrap needs B >= 100, got {}", opts.b)));
    }
    if opts.m == 0 {
        return Err(invalid("bootstrap needs M >= 1"));
    }
    if !fit.converged {
        return Err(invalid("bootstrap needs a converged fit"));
    }
    spec.check(&fit.beta_hat)?;
    if x.len() != fit.n {
        return Err(invalid(format!(
            "fit used {} points but {} cycle values were given",
            fit.n,
            x.len()
        )));
    }
    let sigma = fit.sigma2_hat.sqrt();
    let mean: Vec<T> = x.iter().map(|&xi| fit.beta_hat.at(xi)).collect();
    let hint = fit.nonlinear_params();
    let outcomes: Vec<Option<(ParamVector<T>, Vec<T>)>> = (0..opts.b)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(opts.seed, TAG_BOOT_DATA, b as u64);
            let y_b: Vec<T> = mean
                .iter()
                .map(|&m| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + sigma * T::lit(z)
                })
                .collect();
            let mut config = opts.fit.clone();
            config.seed = derive_seed(opts.seed, TAG_BOOT_FIT, b as u64);
            config.theta_hints = if hint.is_empty() {
                Vec::new()
            } else {
                vec![hint.clone()]
            };
            let replicate = refit(spec, x, &y_b, &config).ok()?;
            let mut pred = stream(opts.seed, TAG_BOOT_PRED, b as u64);
            let draws = (0..opts.m)
                .map(|_| {
                    let z: f64 = pred.sample(StandardNormal);
                    sigma * T::lit(z)
                })
                .collect();
            Some((replicate.beta_hat, draws))
        })
        .collect();
    let failed = outcomes.iter().filter(|o| o.is_none()).count();
    if failed * 10 > opts.b {
        return Err(Error::BootstrapInstability {
            failed,
            total: opts.b,
        });
    }
    let (replicates, prediction_draws) = outcomes.into_iter().flatten().unzip();
    Ok(BootstrapEnsemble {
        base: fit.beta_hat.clone(),
        sigma2: fit.sigma2_hat,
        replicates,
        prediction_draws,
        b: opts.b,
        m: opts.m,
        seed: opts.seed,
        failed,
    })
}

impl<T: Scalar> BootstrapEnsemble<T> {
    fn sorted_curve_values(&self, x0: T) -> Vec<T> {
        let mut v: Vec<T> = self.replicates.iter().map(|r| r.at(x0)).collect();
        v.sort_by(|a, b| a.as_f64().total_cmp(&b.as_f64()));
        v
    }

    /// Empirical `p`-quantile of `f(x0; β̂(b))` over the replicates.
    pub fn curve_quantile(&self, x0: T, p: T) -> T {
        quantile_type7(&self.sorted_curve_values(x0), p)
    }

    /// `(lower, center, upper)` at one point.
    fn interval_at(&self, x0: T, level: T, interval: Interval) -> (T, T, T) {
        let alpha = T::one() - level;
        let lo_p = alpha / T::lit(2.0);
        let hi_p = T::one() - lo_p;
        let center = self.base.at(x0);
        match interval {
            Interval::Confidence => {
                let v = self.sorted_curve_values(x0);
                (quantile_type7(&v, lo_p), center, quantile_type7(&v, hi_p))
            }
            Interval::Prediction => {
                let mut e: Vec<T> = self
                    .replicates
                    .iter()
                    .zip(&self.prediction_draws)
                    .flat_map(|(r, draws)| {
                        let fb = r.at(x0);
                        draws.iter().map(move |&eps| fb - (center + eps))
                    })
                    .collect();
                e.sort_by(|a, b| a.as_f64().total_cmp(&b.as_f64()));
                let l = quantile_type7(&e, lo_p);
                let u = quantile_type7(&e, hi_p);
                (center - u, center, center - l)
            }
        }
    }

    pub fn band(&self, x_grid: &[T], level: T, interval: Interval) -> Result<Band<T>> {
        check_level(level)?;
        if self.replicates.is_empty() {
            return Err(invalid("bootstrap ensemble has no replicates"));
        }
        let rows: Vec<(T, T, T)> = x_grid
            .par_iter()
            .map(|&x0| self.interval_at(x0, level, interval))
            .collect();
        Ok(Band {
            x_grid: x_grid.to_vec(),
            center: rows.iter().map(|r| r.1).collect(),
            lower: rows.iter().map(|r| r.0).collect(),
            upper: rows.iter().map(|r| r.2).collect(),
            level,
            kind: match interval {
                Interval::Confidence => BandKind::BootstrapCI,
                Interval::Prediction => BandKind::BootstrapPI,
            },
            meta: Some(BandMeta {
                b: self.b,
                m: self.m,
                seed: self.seed,
                failed: self.failed,
            }),
        })
    }
}

/// Bootstrap confidence or prediction band over `x_grid`.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_band<T: Scalar>(
    fit: &FitResult<T>,
    spec: &ModelSpec<T>,
    x: &[T],
    y: &[T],
    x_grid: &[T],
    level: T,
    interval: Interval,
    opts: &BootstrapOptions<T>,
) -> Result<Band<T>> {
    check_level(level)?;
    if y.len() != x.len() {
        return Err(invalid("x and y lengths differ"));
    }
    bootstrap_ensemble(fit, spec, x, opts)?.band(x_grid, level, interval)
}
