//! Nonlinear least-squares fitting of the capacity-fade families.
//!
//! Sigmoid fits run a three-stage cascade on the variable-projection
//! reduced objective:
//!
//! 1. Latin-hypercube sweep over the `(β4, β5)` box,
//! 2. simulated annealing from the sweep's best point,
//! 3. bound-constrained damped Gauss-Newton from the annealed point and the
//!    best few sweep points.
//!
//! If the projected linear parameters come out infeasible, the problem is
//! re-solved over all parameters with bounds enforced ([`fit_constrained`]).

mod lm;
mod search;
mod varpro;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{invalid, Error};
#[cfg(test)]
use crate::linalg::lstsq;
use crate::linalg::Matrix;
use crate::models::{Family, ModelSpec, ParamVector};
use crate::rng::{stream, TAG_FALLBACK};
use crate::scalar::Scalar;

use lm::{LmOptions, LsqProblem};
use search::{anneal, candidate_order, evaluate_all, latin_hypercube, AnnealSchedule, Candidate};
pub use varpro::{gamma_hat, reduced_objective, DesignMatrix};
use varpro::{Projection, ReducedProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig<T> {
    /// Latin-hypercube points in the global sweep.
    pub starts: usize,
    pub anneal_steps: usize,
    pub anneal_cooling: f64,
    /// Annealing proposal width as a fraction of the search box.
    pub anneal_step_frac: f64,
    pub max_local_iterations: usize,
    /// Projected-gradient tolerance of the local stage.
    pub gtol: T,
    /// Sweep points refined locally in addition to the annealed one.
    pub local_candidates: usize,
    pub fallback_starts: usize,
    pub seed: u64,
    /// Extra nonlinear-parameter starting points in natural units, e.g.
    /// `(β4, β5)` of an earlier fit.
    #[serde(default = "Vec::new")]
    pub theta_hints: Vec<Vec<T>>,
}

impl<T: Scalar> Default for FitConfig<T> {
    fn default() -> Self {
        Self {
            starts: 64,
            anneal_steps: 500,
            anneal_cooling: 0.95,
            anneal_step_frac: 0.05,
            max_local_iterations: 200,
            gtol: T::lit(1e-10),
            local_candidates: 4,
            fallback_starts: 16,
            seed: 0,
            theta_hints: Vec::new(),
        }
    }
}

impl<T: Scalar> FitConfig<T> {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord<T> {
    pub stage: String,
    pub objective: T,
    pub iterations: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<T> {
    pub beta_hat: ParamVector<T>,
    pub sse: T,
    pub sigma2_hat: T,
    /// `y − f(x; β̂)`
    pub residuals: Vec<T>,
    pub n: usize,
    pub converged: bool,
    pub used_fallback: bool,
    pub path: Vec<StageRecord<T>>,
    pub seed: u64,
}

impl<T: Scalar> FitResult<T> {
    pub fn family(&self) -> Family {
        self.beta_hat.family
    }

    /// Nonlinear parameters of the fit in natural units, e.g. `(β4, β5)`.
    pub fn nonlinear_params(&self) -> Vec<T> {
        varpro::nonlinear_slots(self.family())
            .iter()
            .map(|&i| self.beta_hat.values[i])
            .collect()
    }

    /// Objective after the named stage, if it ran.
    pub fn stage_objective(&self, stage: &str) -> Option<T> {
        self.path
            .iter()
            .find(|s| s.stage == stage)
            .map(|s| s.objective)
    }
}

#[derive(Debug, Error)]
pub enum FitError<T: Scalar> {
    #[error(transparent)]
    Invalid(#[from] Error),
    #[error("optimizer did not converge (best sse {})", .0.sse)]
    NonConvergence(Box<FitResult<T>>),
}

impl<T: Scalar> FitError<T> {
    /// Best incumbent of a fit that failed to converge.
    pub fn best(&self) -> Option<&FitResult<T>> {
        match self {
            FitError::NonConvergence(best) => Some(best),
            FitError::Invalid(_) => None,
        }
    }
}

impl<T: Scalar> From<FitError<T>> for Error {
    fn from(e: FitError<T>) -> Self {
        match e {
            FitError::Invalid(e) => e,
            FitError::NonConvergence(best) => Error::NonConvergence {
                sse: best.sse.as_f64(),
                iterations: best.path.iter().map(|s| s.iterations).sum(),
            },
        }
    }
}

fn validate<T: Scalar>(spec: &ModelSpec<T>, x: &[T], y: &[T]) -> Result<(), Error> {
    if x.len() != y.len() {
        return Err(invalid(format!(
            "x has {} values but y has {}",
            x.len(),
            y.len()
        )));
    }
    let p = spec.param_count();
    if x.len() <= p {
        return Err(invalid(format!(
            "{} needs more than {p} observations, got {}",
            spec.family,
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite() || *v < T::zero()) {
        return Err(invalid("cycle values must be finite and nonnegative"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(invalid("capacity values must be finite"));
    }
    let mut distinct: Vec<T> = x.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(invalid("need at least 3 distinct cycle values"));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finish<T: Scalar>(
    spec: &ModelSpec<T>,
    x: &[T],
    y: &[T],
    values: Vec<T>,
    path: Vec<StageRecord<T>>,
    converged: bool,
    used_fallback: bool,
    seed: u64,
) -> Result<FitResult<T>, FitError<T>> {
    let beta_hat = ParamVector::new(spec.family, values)?;
    let residuals: Vec<T> = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| yi - beta_hat.at(xi))
        .collect();
    let sse: T = residuals.iter().map(|&r| r * r).sum();
    let dof = T::from_usize_lossy(x.len() - spec.param_count());
    let result = FitResult {
        beta_hat,
        sse,
        sigma2_hat: sse / dof,
        residuals,
        n: x.len(),
        converged,
        used_fallback,
        path,
        seed,
    };
    if converged {
        Ok(result)
    } else {
        Err(FitError::NonConvergence(Box::new(result)))
    }
}

/// Least-squares fit of `spec`'s family to `(x, y)`.
///
/// Sigmoid families go through the projected cascade with constrained
/// fallback; the baselines are delegated to [`fit_baselines`].
pub fn fit<T: Scalar>(
    spec: &ModelSpec<T>,
    x: &[T],
    y: &[T],
    config: &FitConfig<T>,
) -> Result<FitResult<T>, FitError<T>> {
    validate(spec, x, y)?;
    fit_projected(spec, x, y, config)
}

/// Fits one of the baseline families: the quadratic by ordinary least
/// squares, the exponential families by projection over their rates.
pub fn fit_baselines<T: Scalar>(
    spec: &ModelSpec<T>,
    x: &[T],
    y: &[T],
    config: &FitConfig<T>,
) -> Result<FitResult<T>, FitError<T>> {
    if spec.family.is_sigmoid() {
        return Err(invalid("fit_baselines does not handle sigmoid families").into());
    }
    validate(spec, x, y)?;
    fit_projected(spec, x, y, config)
}

struct Cascade<T> {
    phi: Vec<T>,
    path: Vec<StageRecord<T>>,
    sweep: Vec<Candidate<T>>,
    converged: bool,
}

fn run_cascade<T: Scalar>(
    proj: &Projection<'_, T>,
    config: &FitConfig<T>,
) -> Result<Cascade<T>, Error> {
    let search_box = proj.search_box();
    let local_bounds = proj.local_bounds();
    let objective = |u: &[T]| proj.sse_standard(u);

    let mut points = latin_hypercube(&search_box, config.starts.max(1), config.seed);
    for hint in &config.theta_hints {
        if hint.len() == proj.nonlinear_dim() {
            let u = proj.to_standard(hint);
            points.push(
                u.iter()
                    .zip(&local_bounds)
                    .map(|(&v, b)| b.clamp(v))
                    .collect(),
            );
        }
    }
    let evaluations = points.len();
    let sweep = evaluate_all(points, &objective);
    let first = sweep[0].clone();
    if !first.sse.is_finite() {
        return Err(Error::SingularDesign(
            "reduced objective undefined at every starting point".into(),
        ));
    }
    let mut path = vec![StageRecord {
        stage: "lhs".into(),
        objective: first.sse,
        iterations: 0,
        evaluations,
    }];

    let schedule = AnnealSchedule {
        steps: config.anneal_steps,
        cooling: config.anneal_cooling,
        step_frac: config.anneal_step_frac,
    };
    let (annealed, anneal_evals) = anneal(&first, &search_box, schedule, config.seed, objective);
    path.push(StageRecord {
        stage: "anneal".into(),
        objective: annealed.sse,
        iterations: config.anneal_steps,
        evaluations: anneal_evals,
    });

    let mut starts = vec![annealed.clone()];
    for c in sweep.iter().filter(|c| c.sse.is_finite()) {
        if starts.len() > config.local_candidates {
            break;
        }
        if starts.iter().all(|s| s.u != c.u) {
            starts.push(c.clone());
        }
    }
    let problem = ReducedProblem {
        proj,
        bounds: &local_bounds,
    };
    let opts = LmOptions::with_gtol(config.max_local_iterations, config.gtol);
    let outcomes: Vec<_> = starts
        .par_iter()
        .map(|s| lm::minimize(&problem, &s.u, &local_bounds, &opts))
        .collect();
    let mut best: Option<(Candidate<T>, bool, usize)> = None;
    let mut total_iters = 0;
    for out in outcomes.into_iter().flatten() {
        total_iters += out.iterations;
        let cand = Candidate {
            u: out.params,
            sse: out.sse,
        };
        let better = match &best {
            None => true,
            Some((b, _, _)) => candidate_order(&cand, b).is_lt(),
        };
        if better {
            best = Some((cand, out.converged, out.iterations));
        }
    }
    let (best, converged) = match best {
        Some((c, conv, _)) if c.sse <= annealed.sse => (c, conv),
        _ => (annealed, false),
    };
    path.push(StageRecord {
        stage: "local".into(),
        objective: best.sse,
        iterations: total_iters,
        evaluations: starts.len(),
    });
    Ok(Cascade {
        phi: proj.to_natural(&best.u),
        path,
        sweep,
        converged,
    })
}

fn fit_projected<T: Scalar>(
    spec: &ModelSpec<T>,
    x: &[T],
    y: &[T],
    config: &FitConfig<T>,
) -> Result<FitResult<T>, FitError<T>> {
    let proj = Projection::new(spec, x, y)?;
    if proj.nonlinear_dim() == 0 {
        let (gamma, resid) = proj.solve(&[])?;
        let sse = resid.iter().map(|&r| r * r).sum();
        let path = vec![StageRecord {
            stage: "ols".into(),
            objective: sse,
            iterations: 0,
            evaluations: 1,
        }];
        let values = proj.assemble(&gamma, &[]);
        return finish(spec, x, y, values, path, true, false, config.seed);
    }

    let cascade = run_cascade(&proj, config)?;
    let (gamma, _) = proj.solve(&cascade.phi)?;
    let mut values = proj.assemble(&gamma, &cascade.phi);
    if spec.family == Family::DoubleExponential && values[1] < values[3] {
        // slower rate first
        values = vec![values[2], values[3], values[0], values[1]];
    }

    if spec.is_feasible(&values) {
        return finish(
            spec,
            x,
            y,
            values,
            cascade.path,
            cascade.converged,
            false,
            config.seed,
        );
    }

    let starts = fallback_starts(spec, &proj, &values, &cascade.sweep, config);
    let mut path = cascade.path;
    let outcome = constrained_multistart(spec, x, y, config, &starts)?;
    path.push(StageRecord {
        stage: "fallback".into(),
        objective: outcome.sse,
        iterations: outcome.iterations,
        evaluations: starts.len(),
    });
    finish(
        spec,
        x,
        y,
        outcome.params,
        path,
        outcome.converged,
        true,
        config.seed,
    )
}

fn fallback_starts<T: Scalar>(
    spec: &ModelSpec<T>,
    proj: &Projection<'_, T>,
    unconstrained: &[T],
    sweep: &[Candidate<T>],
    config: &FitConfig<T>,
) -> Vec<Vec<T>> {
    let clamp = |v: &[T]| -> Vec<T> {
        v.iter()
            .zip(spec.bounds())
            .map(|(&p, b)| b.clamp(p))
            .collect()
    };
    let total = config.fallback_starts.max(1);
    let projected = clamp(unconstrained);
    let mut starts = vec![projected.clone()];
    for c in sweep
        .iter()
        .filter(|c| c.sse.is_finite())
        .take(config.local_candidates)
    {
        if starts.len() >= total {
            break;
        }
        let phi = proj.to_natural(&c.u);
        if let Ok((gamma, _)) = proj.solve(&phi) {
            starts.push(clamp(&proj.assemble(&gamma, &phi)));
        }
    }
    let mut rng = stream(config.seed, TAG_FALLBACK, 0);
    while starts.len() < total {
        let jittered: Vec<T> = projected
            .iter()
            .map(|&p| {
                let z: f64 = rng.sample(StandardNormal);
                p + T::lit(0.1 * z) * p.abs().max(T::lit(0.05))
            })
            .collect();
        starts.push(clamp(&jittered));
    }
    starts
}

/// Full-parameter problem: residuals `f(x; β) − y`, analytic Jacobian.
struct FullProblem<'a, T> {
    family: Family,
    x: &'a [T],
    y: &'a [T],
}

impl<T: Scalar> LsqProblem<T> for FullProblem<'_, T> {
    fn residuals(&self, p: &[T]) -> Option<Vec<T>> {
        let r: Vec<T> = self
            .x
            .iter()
            .zip(self.y)
            .map(|(&xi, &yi)| self.family.eval(p, xi) - yi)
            .collect();
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self, p: &[T], _r: &[T]) -> Option<Matrix<T>> {
        let rows: Vec<Vec<T>> = self.x.iter().map(|&xi| self.family.grad(p, xi)).collect();
        rows.iter()
            .flatten()
            .all(|v| v.is_finite())
            .then(|| Matrix::from_rows(&rows))
    }
}

struct Constrained<T> {
    params: Vec<T>,
    sse: T,
    iterations: usize,
    converged: bool,
}

fn constrained_multistart<T: Scalar>(
    spec: &ModelSpec<T>,
    x: &[T],
    y: &[T],
    config: &FitConfig<T>,
    starts: &[Vec<T>],
) -> Result<Constrained<T>, Error> {
    let p = spec.param_count();
    if starts.is_empty() || starts.iter().any(|s| s.len() != p) {
        return Err(invalid(format!(
            "constrained fit needs starts of length {p}"
        )));
    }
    let mut bounds = spec.bounds().to_vec();
    if spec.family.is_sigmoid() {
        let span = x.iter().copied().fold(T::neg_infinity(), T::max)
            - x.iter().copied().fold(T::infinity(), T::min);
        bounds[4].lower = bounds[4]
            .lower
            .max(T::lit(crate::models::WIDTH_FLOOR_REL) * span);
    }
    let problem = FullProblem {
        family: spec.family,
        x,
        y,
    };
    let opts = LmOptions::with_gtol(config.max_local_iterations, config.gtol);
    let outcomes: Vec<_> = starts
        .par_iter()
        .map(|s| lm::minimize(&problem, s, &bounds, &opts))
        .collect();
    let mut best: Option<Constrained<T>> = None;
    let mut iterations = 0;
    for out in outcomes.into_iter().flatten() {
        iterations += out.iterations;
        let better = match &best {
            None => true,
            Some(b) => {
                let a = Candidate {
                    u: tie_key(spec.family, &out.params),
                    sse: out.sse,
                };
                let c = Candidate {
                    u: tie_key(spec.family, &b.params),
                    sse: b.sse,
                };
                candidate_order(&a, &c).is_lt()
            }
        };
        if better {
            best = Some(Constrained {
                params: out.params,
                sse: out.sse,
                iterations: 0,
                converged: out.converged,
            });
        }
    }
    let mut best = best
        .ok_or_else(|| Error::SingularDesign("constrained fit undefined at every start".into()))?;
    best.iterations = iterations;
    Ok(best)
}

/// Nonlinear parameters first, so ties resolve on `(β4, β5)` for sigmoids.
fn tie_key<T: Scalar>(family: Family, params: &[T]) -> Vec<T> {
    let mut key: Vec<T> = varpro::nonlinear_slots(family)
        .iter()
        .map(|&i| params[i])
        .collect();
    key.extend(varpro::linear_slots(family).iter().map(|&i| params[i]));
    key
}

/// Direct bound-constrained least squares over all parameters, run from
/// each of `starts` (full parameter vectors); the lowest SSE wins.
pub fn fit_constrained<T: Scalar>(
    spec: &ModelSpec<T>,
    x: &[T],
    y: &[T],
    config: &FitConfig<T>,
    starts: &[Vec<T>],
) -> Result<FitResult<T>, FitError<T>> {
    validate(spec, x, y)?;
    let out = constrained_multistart(spec, x, y, config, starts)?;
    let path = vec![StageRecord {
        stage: "constrained".into(),
        objective: out.sse,
        iterations: out.iterations,
        evaluations: starts.len(),
    }];
    finish(
        spec,
        x,
        y,
        out.params,
        path,
        out.converged,
        false,
        config.seed,
    )
}
