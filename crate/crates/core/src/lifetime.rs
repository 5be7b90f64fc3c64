//! End-of-life prediction and its cross-validated accuracy.
//!
//! A battery reaches end of life `q` when its capacity first falls to
//! `q · y_init`. Predictions invert a fitted curve; reference failure times
//! come from a natural cubic spline through each battery's own measurements.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{censor, Dataset, Trace};
use crate::error::{invalid, Error, Result};
use crate::inference::BootstrapEnsemble;
use crate::models::{inverse, ModelSpec, ParamVector};
use crate::nls::{fit, FitConfig, FitError, FitResult};
use crate::rng::{derive_seed, stream, TAG_COMPLETE, TAG_CV_FIT, TAG_SPLIT};
use crate::roots::{first_crossing, InverseOptions};
use crate::scalar::Scalar;
use crate::spline::NaturalCubicSpline;

/// Cycle interval for the end-of-life point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EolInterval<T> {
    pub lower: T,
    pub upper: T,
    pub level: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EolReport<T> {
    pub q: T,
    pub y_init: T,
    /// `q · y_init`
    pub y_q: T,
    /// Kilocycles until the fitted curve reaches `y_q`.
    pub x_hat_q: T,
    pub multiple_crossings: bool,
    pub band: Option<EolInterval<T>>,
    pub source_fit: FitResult<T>,
}

fn check_fraction<T: Scalar>(q: T) -> Result<()> {
    if q > T::zero() && q < T::one() {
        Ok(())
    } else {
        Err(invalid(format!("end-of-life fraction {q} outside (0, 1)")))
    }
}

/// Predicted end of life `x̂_q = f⁻¹(q · y_init; β̂)`.
///
/// With `interval = Some((ensemble, level))` the bootstrap confidence band's
/// lower and upper curves are inverted at the same level, giving an interval
/// in kilocycles.
pub fn predict_eol<T: Scalar>(
    fit: &FitResult<T>,
    spec: &ModelSpec<T>,
    q: T,
    y_init: T,
    interval: Option<(&BootstrapEnsemble<T>, T)>,
    opts: &InverseOptions<T>,
) -> Result<EolReport<T>> {
    check_fraction(q)?;
    if !fit.converged {
        return Err(invalid("end-of-life prediction needs a converged fit"));
    }
    if !(y_init > T::zero()) {
        return Err(invalid("initial capacity must be positive"));
    }
    let y_q = q * y_init;
    let crossing = inverse(spec, &fit.beta_hat, y_q, opts)?;
    let band = match interval {
        None => None,
        Some((ens, level)) => {
            crate::inference::check_level(level)?;
            let lo_p = (T::one() - level) / T::lit(2.0);
            let hi_p = T::one() - lo_p;
            let lower = first_crossing(|x| ens.curve_quantile(x, lo_p), y_q, opts, false)?;
            let upper = first_crossing(|x| ens.curve_quantile(x, hi_p), y_q, opts, false)?;
            Some(EolInterval {
                lower: lower.x,
                upper: upper.x,
                level,
            })
        }
    };
    Ok(EolReport {
        q,
        y_init,
        y_q,
        x_hat_q: crossing.x,
        multiple_crossings: crossing.multiple_crossings,
        band,
        source_fit: fit.clone(),
    })
}

/// Observed failure time of one battery in kilocycles: the first point where
/// the spline through its measurements falls to `q` times its first
/// capacity.
pub fn true_failure_time(trace: &Trace, q: f64, cycle_scale: f64) -> Result<f64> {
    check_fraction(q)?;
    if trace.len() < 3 {
        return Err(invalid(format!(
            "battery {} needs at least 3 points for a spline, has {}",
            trace.battery_id,
            trace.len()
        )));
    }
    let y0 = trace.y_init().expect("nonempty trace");
    let spline = NaturalCubicSpline::new(&trace.kilocycles(cycle_scale), &trace.capacities())?;
    spline
        .first_crossing(q * y0)
        .ok_or_else(|| Error::NotObservedToEol {
            battery_id: trace.battery_id.clone(),
            threshold: q,
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub rmse: f64,
    pub me: f64,
    pub mae: f64,
}

pub fn metrics(errors: &[f64]) -> Result<Metrics> {
    if errors.is_empty() {
        return Err(invalid("metrics of an empty error set"));
    }
    let n = errors.len() as f64;
    let mse = errors.iter().map(|e| e * e).sum::<f64>() / n;
    Ok(Metrics {
        mse,
        rmse: mse.sqrt(),
        me: errors.iter().sum::<f64>() / n,
        mae: errors.iter().map(|e| e.abs()).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    /// Random training share of the batteries, redrawn every repeat.
    Fraction(f64),
    TrainingIds(Vec<String>),
}

/// Training traces are cut at `threshold · y_init` except `n_complete` of
/// them that reach below it, chosen at random.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Censoring {
    pub threshold: f64,
    pub n_complete: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub q: f64,
    pub split: Split,
    pub seed: u64,
    pub censoring: Option<Censoring>,
    pub repeats: usize,
    pub fit: FitConfig<f64>,
    pub inverse: InverseOptions<f64>,
}

impl CvOptions {
    pub fn new(q: f64, split: Split) -> Self {
        Self {
            q,
            split,
            seed: 0,
            censoring: None,
            repeats: 100,
            fit: FitConfig::default(),
            inverse: InverseOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringRecord {
    pub threshold: f64,
    pub complete_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryError {
    pub battery_id: String,
    /// Spline failure time in kilocycles.
    pub x_q: f64,
    /// `x̂_q − x_q`
    pub error: f64,
}

pub const Y_INIT_CONVENTION: &str =
    "prediction uses the pooled fit's f(0); failure times use each test battery's first capacity";

/// One train/test evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub q: f64,
    pub repeat: usize,
    pub training_ids: Vec<String>,
    pub testing_ids: Vec<String>,
    pub excluded_ids: Vec<String>,
    pub censoring: Option<CensoringRecord>,
    pub beta_hat: ParamVector<f64>,
    pub fit_converged: bool,
    /// `q · f(0; β̂)`
    pub y_q_model: f64,
    pub x_hat_q: f64,
    pub errors: Vec<BatteryError>,
    pub mse: f64,
    pub rmse: f64,
    pub me: f64,
    pub mae: f64,
    pub y_init_convention: String,
}

impl CvReport {
    pub fn metrics(&self) -> Metrics {
        Metrics {
            mse: self.mse,
            rmse: self.rmse,
            me: self.me,
            mae: self.mae,
        }
    }
}

/// Metrics averaged over repeats, one row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub q: f64,
    pub fraction: Option<f64>,
    pub censoring: Option<Censoring>,
    pub repeats: usize,
    pub seed: u64,
    pub mse: f64,
    pub rmse: f64,
    pub me: f64,
    pub mae: f64,
    pub reports: Vec<CvReport>,
}

impl CvSummary {
    pub const CSV_HEADER: &'static str = "q,fraction,censor_at,n_complete,repeats,mse,rmse,me,mae";

    pub fn csv_row(&self) -> String {
        let fraction = self.fraction.map_or(String::new(), |f| f.to_string());
        let (censor_at, n_complete) = self.censoring.map_or((String::new(), String::new()), |c| {
            (c.threshold.to_string(), c.n_complete.to_string())
        });
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.q,
            fraction,
            censor_at,
            n_complete,
            self.repeats,
            self.mse,
            self.rmse,
            self.me,
            self.mae
        )
    }
}

fn split_ids(
    dataset: &Dataset,
    split: &Split,
    seed: u64,
    repeat: usize,
) -> Result<(Vec<String>, Vec<String>)> {
    let all: Vec<String> = dataset.ids().into_iter().map(String::from).collect();
    let (train, test): (Vec<String>, Vec<String>) = match split {
        Split::Fraction(f) => {
            if !(*f > 0.0 && *f < 1.0) {
                return Err(Error::InvalidSplit(format!(
                    "training fraction {f} outside (0, 1)"
                )));
            }
            let mut shuffled = all.clone();
            shuffled.shuffle(&mut stream(seed, TAG_SPLIT, repeat as u64));
            let k = (f * all.len() as f64).round() as usize;
            let test = shuffled.split_off(k.min(shuffled.len()));
            (shuffled, test)
        }
        Split::TrainingIds(ids) => {
            if let Some(bad) = ids.iter().find(|id| !all.contains(id)) {
                return Err(Error::InvalidSplit(format!("unknown training id {bad}")));
            }
            all.into_iter().partition(|id| ids.contains(id))
        }
    };
    if train.is_empty() {
        return Err(Error::InvalidSplit("training set is empty".into()));
    }
    if test.is_empty() {
        return Err(Error::InvalidSplit("test set is empty".into()));
    }
    Ok((train, test))
}

fn run_once(
    dataset: &Dataset,
    spec: &ModelSpec<f64>,
    opts: &CvOptions,
    repeat: usize,
) -> Result<CvReport> {
    let (training_ids, testing_ids) = split_ids(dataset, &opts.split, opts.seed, repeat)?;
    let train_refs: Vec<&str> = training_ids.iter().map(String::as_str).collect();
    let mut training = dataset.subset(&train_refs)?;
    let censoring = match opts.censoring {
        None => None,
        Some(c) => {
            let mut candidates: Vec<String> = training
                .traces
                .iter()
                .filter(|t| match (t.min_capacity(), t.y_init()) {
                    (Some(m), Some(y0)) => m < c.threshold * y0,
                    _ => false,
                })
                .map(|t| t.battery_id.clone())
                .collect();
            candidates.shuffle(&mut stream(opts.seed, TAG_COMPLETE, repeat as u64));
            candidates.truncate(c.n_complete);
            training = censor(&training, c.threshold, &candidates)?;
            Some(CensoringRecord {
                threshold: c.threshold,
                complete_ids: candidates,
            })
        }
    };

    let (x, y) = training.pooled();
    let mut config = opts.fit.clone();
    config.seed = derive_seed(opts.seed, TAG_CV_FIT, repeat as u64);
    let (pooled, fit_converged) = match fit(spec, &x, &y, &config) {
        Ok(f) => (f, true),
        Err(FitError::NonConvergence(best)) => (*best, false),
        Err(FitError::Invalid(e)) => return Err(e),
    };
    let y_q_model = opts.q * pooled.beta_hat.at(0.0);
    let x_hat_q = inverse(spec, &pooled.beta_hat, y_q_model, &opts.inverse)?.x;

    let mut errors = Vec::new();
    let mut excluded_ids = Vec::new();
    for id in &testing_ids {
        let trace = dataset.trace(id).expect("split ids come from the dataset");
        match true_failure_time(trace, opts.q, dataset.cycle_scale) {
            Ok(x_q) => errors.push(BatteryError {
                battery_id: id.clone(),
                x_q,
                error: x_hat_q - x_q,
            }),
            Err(Error::NotObservedToEol { .. }) | Err(Error::InvalidArgument(_)) => {
                excluded_ids.push(id.clone())
            }
            Err(e) => return Err(e),
        }
    }
    if errors.is_empty() {
        return Err(Error::InvalidSplit(
            "no test battery is observed to the end-of-life threshold".into(),
        ));
    }
    let m = metrics(&errors.iter().map(|e| e.error).collect::<Vec<_>>())?;
    Ok(CvReport {
        q: opts.q,
        repeat,
        training_ids,
        testing_ids,
        excluded_ids,
        censoring,
        beta_hat: pooled.beta_hat,
        fit_converged,
        y_q_model,
        x_hat_q,
        errors,
        mse: m.mse,
        rmse: m.rmse,
        me: m.me,
        mae: m.mae,
        y_init_convention: Y_INIT_CONVENTION.into(),
    })
}

/// Cross-validated end-of-life accuracy of a pooled fit.
///
/// Each repeat draws its own split (and complete traces, under censoring)
/// from streams keyed by `(seed, repeat)`; repeats run in parallel and are
/// reduced in index order.
pub fn crossval(dataset: &Dataset, spec: &ModelSpec<f64>, opts: &CvOptions) -> Result<CvSummary> {
    check_fraction(opts.q)?;
    if dataset.len() < 2 {
        return Err(Error::InvalidSplit(
            "cross-validation needs at least 2 batteries".into(),
        ));
    }
    if opts.repeats == 0 {
        return Err(invalid("repeats must be at least 1"));
    }
    if let Some(c) = opts.censoring {
        if !(0.0..1.0).contains(&c.threshold) {
            return Err(invalid(format!(
                "censoring threshold {} outside [0, 1)",
                c.threshold
            )));
        }
    }
    let reports = (0..opts.repeats)
        .into_par_iter()
        .map(|r| run_once(dataset, spec, opts, r))
        .collect::<Result<Vec<_>>>()?;
    let n = reports.len() as f64;
    let mean = |f: fn(&CvReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(CvSummary {
        q: opts.q,
        fraction: match opts.split {
            Split::Fraction(f) => Some(f),
            Split::TrainingIds(_) => None,
        },
        censoring: opts.censoring,
        repeats: opts.repeats,
        seed: opts.seed,
        mse: mean(|r| r.mse),
        rmse: mean(|r| r.rmse),
        me: mean(|r| r.me),
        mae: mean(|r| r.mae),
        reports,
    })
}
