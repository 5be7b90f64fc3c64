//! Global stages on the reduced objective: a Latin-hypercube sweep followed
//! by a short simulated-annealing walk from the best sweep point.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::models::Bound;
use crate::rng::{stream, TAG_ANNEAL, TAG_LHS};
use crate::scalar::Scalar;

/// An evaluated point in standardized coordinates.
#[derive(Debug, Clone)]
pub(crate) struct Candidate<T> {
    pub u: Vec<T>,
    pub sse: T,
}

/// Orders by objective, then lexicographically by coordinates.
pub(crate) fn candidate_order<T: Scalar>(a: &Candidate<T>, b: &Candidate<T>) -> std::cmp::Ordering {
    let key = |v: T| if v.is_nan() { T::infinity() } else { v };
    key(a.sse)
        .partial_cmp(&key(b.sse))
        .unwrap_or(std::cmp::Ordering::Equal)
        .then_with(|| {
            a.u.iter()
                .zip(&b.u)
                .map(|(x, y)| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
}

pub(crate) fn latin_hypercube<T: Scalar>(bx: &[Bound<T>], count: usize, seed: u64) -> Vec<Vec<T>> {
    let mut rng = stream(seed, TAG_LHS, 0);
    let d = bx.len();
    let perms: Vec<Vec<usize>> = (0..d)
        .map(|_| {
            let mut p: Vec<usize> = (0..count).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    let n = T::from_usize_lossy(count);
    (0..count)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let cell = T::from_usize_lossy(perms[j][i]);
                    let jitter = T::lit(rng.random::<f64>());
                    let frac = (cell + jitter) / n;
                    bx[j].lower + (bx[j].upper - bx[j].lower) * frac
                })
                .collect()
        })
        .collect()
}

/// Evaluates all points (in parallel, order preserved) and returns them sorted.
pub(crate) fn evaluate_all<T: Scalar>(
    points: Vec<Vec<T>>,
    objective: &(impl Fn(&[T]) -> T + Sync),
) -> Vec<Candidate<T>> {
    let mut evaluated: Vec<Candidate<T>> = points
        .into_par_iter()
        .map(|u| {
            let sse = objective(&u);
            Candidate { u, sse }
        })
        .collect();
    evaluated.sort_by(candidate_order);
    evaluated
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AnnealSchedule {
    pub steps: usize,
    pub cooling: f64,
    pub step_frac: f64,
}

/// Metropolis walk with geometric cooling `T_k = cooling^k · T_0`,
/// `T_0` the starting objective. Returns the best point visited.
pub(crate) fn anneal<T: Scalar>(
    start: &Candidate<T>,
    bx: &[Bound<T>],
    schedule: AnnealSchedule,
    seed: u64,
    objective: impl Fn(&[T]) -> T,
) -> (Candidate<T>, usize) {
    let mut rng = stream(seed, TAG_ANNEAL, 0);
    let widths: Vec<f64> = bx
        .iter()
        .map(|b| schedule.step_frac * (b.upper - b.lower).as_f64())
        .collect();
    let t0 = start.sse.as_f64();
    let mut current = start.clone();
    let mut best = start.clone();
    let mut evaluations = 0;
    let mut temp = t0;
    for _ in 0..schedule.steps {
        let proposal: Vec<T> = current
            .u
            .iter()
            .zip(bx)
            .zip(&widths)
            .map(|((&u, b), &w)| {
                let z: f64 = rng.sample(StandardNormal);
                b.clamp(u + T::lit(w * z))
            })
            .collect();
        let sse = objective(&proposal);
        evaluations += 1;
        let accept_draw: f64 = rng.random();
        let delta = (sse - current.sse).as_f64();
        let accept = sse.is_finite()
            && (delta <= 0.0 || (temp > 0.0 && accept_draw < (-delta / temp).exp()));
        if accept {
            current = Candidate { u: proposal, sse };
            if candidate_order(&current, &best).is_lt() {
                best = current.clone();
            }
        }
        temp *= schedule.cooling;
    }
    (best, evaluations)
}
