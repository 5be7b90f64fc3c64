//! Bound-constrained damped least squares (Levenberg-Marquardt with
//! Marquardt column scaling). Variables sitting on a bound with the
//! gradient pointing outward are frozen for the step; the step is then
//! projected back onto the box and accepted only if the objective drops.

use crate::linalg::{Matrix, Qr};
use crate::models::Bound;
use crate::scalar::Scalar;

pub(crate) trait LsqProblem<T> {
    fn residuals(&self, p: &[T]) -> Option<Vec<T>>;
    fn jacobian(&self, p: &[T], r: &[T]) -> Option<Matrix<T>>;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmOptions<T> {
    pub max_iterations: usize,
    pub gtol: T,
    pub ftol: T,
    pub xtol: T,
}

impl<T: Scalar> LmOptions<T> {
    pub fn with_gtol(max_iterations: usize, gtol: T) -> Self {
        Self {
            max_iterations,
            gtol,
            ftol: T::epsilon() * T::lit(10.0),
            xtol: T::epsilon() * T::lit(100.0),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LmOutcome<T> {
    pub params: Vec<T>,
    pub sse: T,
    pub iterations: usize,
    pub converged: bool,
}

fn sum_sq<T: Scalar>(r: &[T]) -> T {
    r.iter().map(|&v| v * v).sum()
}

pub(crate) fn minimize<T: Scalar, P: LsqProblem<T>>(
    problem: &P,
    start: &[T],
    bounds: &[Bound<T>],
    opts: &LmOptions<T>,
) -> Option<LmOutcome<T>> {
    let k = start.len();
    let mut p: Vec<T> = start.iter().zip(bounds).map(|(&v, b)| b.clamp(v)).collect();
    let mut r = problem.residuals(&p)?;
    let mut sse = sum_sq(&r);
    if !sse.is_finite() {
        return None;
    }
    let mut diag = vec![T::zero(); k];
    let mut lambda: Option<T> = None;
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < opts.max_iterations {
        iterations += 1;
        if sse == T::zero() {
            converged = true;
            break;
        }
        let Some(jac) = problem.jacobian(&p, &r) else {
            break;
        };
        let g = jac.tr_mul_vec(&r);
        for (j, d) in diag.iter_mut().enumerate() {
            let norm = (0..jac.rows())
                .map(|i| jac.get(i, j).powi(2))
                .sum::<T>()
                .sqrt();
            *d = d.max(norm);
        }
        let free: Vec<usize> = (0..k)
            .filter(|&i| {
                let b = &bounds[i];
                !((p[i] <= b.lower && g[i] > T::zero()) || (p[i] >= b.upper && g[i] < T::zero()))
            })
            .collect();
        let pg = free.iter().fold(T::zero(), |acc, &i| acc.max(g[i].abs()));
        if free.is_empty() || pg < opts.gtol {
            converged = true;
            break;
        }
        let dfree: Vec<T> = free
            .iter()
            .map(|&i| {
                if diag[i] > T::zero() {
                    diag[i]
                } else {
                    T::one()
                }
            })
            .collect();
        let mut lam = lambda
            .unwrap_or_else(|| T::lit(1e-3) * dfree.iter().fold(T::zero(), |a, &d| a.max(d * d)));
        let jf = jac.select_columns(&free);
        let n = jf.rows();
        let m = free.len();
        loop {
            let sq = lam.sqrt();
            let aug = Matrix::from_fn(n + m, m, |i, j| {
                if i < n {
                    jf.get(i, j)
                } else if i - n == j {
                    sq * dfree[j]
                } else {
                    T::zero()
                }
            });
            let mut rhs: Vec<T> = r.iter().map(|&v| -v).collect();
            rhs.extend(std::iter::repeat_n(T::zero(), m));
            let step = Qr::new(&aug).ok().and_then(|qr| {
                if qr.r_diag().iter().any(|d| *d == T::zero()) {
                    return None;
                }
                qr.apply_qt(&mut rhs);
                Some(qr.solve_r(&rhs))
            });
            if let Some(step) = step.filter(|s| s.iter().all(|v| v.is_finite())) {
                let mut trial = p.clone();
                for (&i, &s) in free.iter().zip(&step) {
                    trial[i] = bounds[i].clamp(p[i] + s);
                }
                if let Some(rt) = problem.residuals(&trial) {
                    let st = sum_sq(&rt);
                    if st.is_finite() && st < sse {
                        let reduction = (sse - st) / sse;
                        let pnorm = p.iter().fold(T::zero(), |a, v| a.max(v.abs()));
                        let dnorm = p
                            .iter()
                            .zip(&trial)
                            .fold(T::zero(), |a, (u, v)| a.max((*u - *v).abs()));
                        p = trial;
                        r = rt;
                        sse = st;
                        lambda = Some((lam * T::lit(0.3)).max(T::lit(1e-30)));
                        if reduction <= opts.ftol || dnorm <= opts.xtol * (pnorm + opts.xtol) {
                            converged = true;
                            break 'outer;
                        }
                        continue 'outer;
                    }
                }
            }
            lam = lam * T::lit(10.0);
            if !(lam < T::lit(1e30)) || !lam.is_finite() {
                // no descent left along any damped direction
                converged = true;
                break 'outer;
            }
        }
    }
    Some(LmOutcome {
        params: p,
        sse,
        iterations,
        converged,
    })
}
