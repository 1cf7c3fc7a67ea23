//! Limited-memory BFGS for smooth unconstrained problems.
//!
//! Steps are accepted only when they satisfy the sufficient-decrease
//! condition, so the cost sequence over accepted iterates never increases.
//! The line search brackets a weak Wolfe point by bisection/extrapolation,
//! which copes with objectives that are only once differentiable.

use std::collections::VecDeque;

use thiserror::Error;

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsConfig<T> {
    /// Stop when the largest gradient component falls below this.
    pub g_tol: T,
    /// Stop when the relative cost decrease of an iteration falls below this.
    pub f_tol: T,
    pub max_iterations: usize,
    /// Number of correction pairs kept.
    pub history: usize,
    /// Sufficient decrease constant.
    pub c1: T,
    /// Curvature constant.
    pub c2: T,
    pub max_line_search: usize,
}

impl<T: Real> Default for LbfgsConfig<T> {
    fn default() -> Self {
        Self {
            g_tol: T::lit(1e-6),
            f_tol: T::lit(1e-8),
            max_iterations: 200,
            history: 8,
            c1: T::lit(1e-4),
            c2: T::lit(0.9),
            max_line_search: 40,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    CostTolerance,
    MaxIterations,
    /// No step along the search direction decreased the cost.
    LineSearch,
}

#[derive(Clone, Debug)]
pub struct Outcome<T> {
    pub x: Vec<T>,
    pub f: T,
    pub gradient: Vec<T>,
    pub iterations: usize,
    pub evaluations: usize,
    pub reason: StopReason,
    /// Cost after each accepted iteration, starting with the initial cost.
    pub trace: Vec<T>,
}

#[derive(Debug, Error)]
pub enum OptimizeError<T: std::fmt::Debug> {
    #[error("non-finite cost or gradient after {iterations} iterations")]
    NonFinite {
        last_finite: Vec<T>,
        iterations: usize,
    },
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

fn max_abs<T: Real>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

fn all_finite<T: Real>(f: T, g: &[T]) -> bool {
    f.is_finite() && g.iter().all(|v| v.is_finite())
}

/// Minimises `objective`, which writes the gradient into its second argument
/// and returns the cost.
pub fn minimize<T, F>(
    x0: Vec<T>,
    cfg: &LbfgsConfig<T>,
    objective: F,
) -> Result<Outcome<T>, OptimizeError<T>>
where
    T: Real,
    F: FnMut(&[T], &mut [T]) -> T,
{
    minimize_observed(x0, cfg, objective, |_, _, _| {})
}

/// Like [`minimize`], calling `observer(iteration, x, f)` for the initial
/// point and after every accepted step.
pub fn minimize_observed<T, F, O>(
    x0: Vec<T>,
    cfg: &LbfgsConfig<T>,
    mut objective: F,
    mut observer: O,
) -> Result<Outcome<T>, OptimizeError<T>>
where
    T: Real,
    F: FnMut(&[T], &mut [T]) -> T,
    O: FnMut(usize, &[T], T),
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![T::zero(); n];
    let mut f = objective(&x, &mut g);
    let mut evaluations = 1;
    if !all_finite(f, &g) {
        return Err(OptimizeError::NonFinite {
            last_finite: x,
            iterations: 0,
        });
    }
    let mut trace = vec![f];
    observer(0, &x, f);
    let mut pairs: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(cfg.history);
    let mut dir = vec![T::zero(); n];
    let mut x_new = vec![T::zero(); n];
    let mut g_new = vec![T::zero(); n];
    let mut alpha = vec![T::zero(); cfg.history.max(1)];
    let mut iterations = 0;

    let reason = loop {
        if n == 0 || max_abs(&g) < cfg.g_tol {
            break StopReason::GradientTolerance;
        }
        if iterations >= cfg.max_iterations {
            break StopReason::MaxIterations;
        }

        // Two-loop recursion.
        dir.copy_from_slice(&g);
        for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
            let a = *rho * dot(s, &dir);
            alpha[k] = a;
            for (d, yv) in dir.iter_mut().zip(y) {
                *d -= a * *yv;
            }
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= gamma);
        }
        for (k, (s, y, rho)) in pairs.iter().enumerate() {
            let b = *rho * dot(y, &dir);
            for (d, sv) in dir.iter_mut().zip(s) {
                *d += (alpha[k] - b) * *sv;
            }
        }
        dir.iter_mut().for_each(|d| *d = -*d);
        let mut slope = dot(&g, &dir);
        if !(slope < T::zero()) {
            // Lost descent; restart from steepest descent.
            pairs.clear();
            for (d, gv) in dir.iter_mut().zip(&g) {
                *d = -*gv;
            }
            slope = dot(&g, &dir);
        }

        let mut step = if pairs.is_empty() {
            T::one() / max_abs(&dir).max(T::one())
        } else {
            T::one()
        };
        let mut lo = T::zero();
        let mut hi = T::infinity();
        let mut accepted: Option<(T, T)> = None;
        let mut best_armijo: Option<T> = None;
        let mut saw_non_finite = false;
        for _ in 0..cfg.max_line_search {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            let f_new = objective(&x_new, &mut g_new);
            evaluations += 1;
            if !all_finite(f_new, &g_new) {
                saw_non_finite = true;
                hi = step;
            } else if f_new > f + cfg.c1 * step * slope || f_new >= f {
                hi = step;
            } else if dot(&g_new, &dir) < cfg.c2 * slope {
                best_armijo = Some(step);
                lo = step;
            } else {
                accepted = Some((step, f_new));
                break;
            }
            step = if hi.is_finite() {
                (lo + hi) * T::lit(0.5)
            } else {
                step * T::lit(2.0)
            };
            if hi.is_finite() && hi - lo <= T::epsilon() * hi {
                break;
            }
        }
        let (step, f_new) = match accepted {
            Some(a) => a,
            None => match best_armijo {
                Some(s) => {
                    for i in 0..n {
                        x_new[i] = x[i] + s * dir[i];
                    }
                    let fv = objective(&x_new, &mut g_new);
                    evaluations += 1;
                    (s, fv)
                }
                None => {
                    if saw_non_finite {
                        return Err(OptimizeError::NonFinite {
                            last_finite: x,
                            iterations,
                        });
                    }
                    break StopReason::LineSearch;
                }
            },
        };

        let s: Vec<T> = dir.iter().map(|d| *d * step).collect();
        let y: Vec<T> = g_new.iter().zip(&g).map(|(a, b)| *a - *b).collect();
        let sy = dot(&s, &y);
        if sy > T::epsilon() * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if pairs.len() == cfg.history {
                pairs.pop_front();
            }
            if cfg.history > 0 {
                pairs.push_back((s, y, T::one() / sy));
            }
        }
        let f_prev = f;
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
        iterations += 1;
        trace.push(f);
        observer(iterations, &x, f);
        let scale = f_prev.abs().max(f.abs()).max(T::one());
        if (f_prev - f) / scale < cfg.f_tol {
            break StopReason::CostTolerance;
        }
    };

    Ok(Outcome {
        x,
        f,
        gradient: g,
        iterations,
        evaluations,
        reason,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let cfg = LbfgsConfig {
            max_iterations: 500,
            f_tol: 0.0,
            g_tol: 1e-9,
            ..LbfgsConfig::default()
        };
        let out = minimize(vec![-1.2f64, 1.0], &cfg, |x, g| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        })
        .unwrap();
        assert!(
            (out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6,
            "{out:?}"
        );
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let cfg = LbfgsConfig::default();
        let out = minimize(vec![0.0f64; 4], &cfg, |x, g| {
            for i in 0..x.len() {
                g[i] = 2.0 * x[i];
            }
            x.iter().map(|v| v * v).sum()
        })
        .unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.reason, StopReason::GradientTolerance);
    }

    #[test]
    fn non_finite_start_is_error() {
        let cfg = LbfgsConfig::default();
        let r = minimize(vec![1.0f64], &cfg, |_, g| {
            g[0] = 0.0;
            f64::NAN
        });
        assert!(matches!(r, Err(OptimizeError::NonFinite { .. })));
    }

    #[test]
    fn quadratic_converges_tightly() {
        let cfg = LbfgsConfig {
            g_tol: 1e-10,
            f_tol: 0.0,
            ..LbfgsConfig::default()
        };
        let diag = [1.0, 10.0, 100.0, 0.5, 3.0];
        let out = minimize(vec![1.0f64; 5], &cfg, |x, g| {
            let mut f = 0.0;
            for i in 0..5 {
                g[i] = diag[i] * (x[i] - i as f64);
                f += 0.5 * diag[i] * (x[i] - i as f64).powi(2);
            }
            f
        })
        .unwrap();
        for i in 0..5 {
            assert!((out.x[i] - i as f64).abs() < 1e-9);
        }
    }
}
