//! Limited-memory BFGS with Armijo backtracking.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    /// Stop once ‖∇f‖∞ falls to this value.
    pub grad_tol: f64,
    pub memory: usize,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            max_iter: 200,
            grad_tol: 1e-5,
            memory: 10,
            max_backtracks: 40,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsReport<T> {
    pub x: Vec<T>,
    pub value: T,
    pub grad_norm: T,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the start point and after every accepted step.
    pub history: Vec<T>,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

fn inf_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

/// Minimize `f`, which returns the objective and its gradient.
pub fn minimize<T, F>(x0: Vec<T>, mut f: F, opts: &LbfgsOptions) -> Result<LbfgsReport<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> (T, Vec<T>),
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training("non-finite loss at iteration 0".into()));
    }
    let c1 = T::of(1e-4);
    let mut mem: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(opts.memory);
    let mut history = vec![fx];
    let mut iterations = 0;
    let mut converged = false;

    loop {
        if inf_norm(&g) <= T::of(opts.grad_tol) {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }

        // two-loop recursion for d = -H g
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = *rho * dot(s, &q);
            for (qi, &yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = match mem.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => T::one() / inf_norm(&g).max(T::one()),
        };
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for ((s, y, rho), a) in mem.iter().zip(alphas.into_iter().rev()) {
            let b = *rho * dot(y, &q);
            for (qi, &si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut d: Vec<T> = q.into_iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if !(slope < T::zero()) {
            mem.clear();
            d = g.iter().map(|&v| -v).collect();
            slope = dot(&g, &d);
        }

        let mut step = T::one();
        let mut accepted = None;
        let mut saw_non_finite = false;
        for _ in 0..opts.max_backtracks {
            let trial: Vec<T> = x.iter().zip(&d).map(|(&xi, &di)| xi + step * di).collect();
            let (ft, gt) = f(&trial);
            if ft.is_finite() && gt.iter().all(|v| v.is_finite()) {
                if ft <= fx + c1 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            } else {
                saw_non_finite = true;
            }
            step *= T::of(0.5);
        }
        iterations += 1;
        let Some((x_new, f_new, g_new)) = accepted else {
            if saw_non_finite {
                return Err(Error::Training(format!("non-finite loss at iteration {iterations}")));
            }
            // no decrease representable along d: treat as converged to working precision
            log::debug!("line search stalled at iteration {iterations}");
            break;
        };

        let s: Vec<T> = x_new.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = g_new.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > T::of(1e-10) * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, T::one() / sy));
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        history.push(fx);
    }

    Ok(LbfgsReport {
        grad_norm: inf_norm(&g),
        x,
        value: fx,
        iterations,
        converged,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let rosen = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            (f, g)
        };
        let opts = LbfgsOptions {
            max_iter: 500,
            ..Default::default()
        };
        let r = minimize(vec![-1.2, 1.0], rosen, &opts).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4);
        for w in r.history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let r = minimize(vec![0.0f64], |_| (f64::NAN, vec![0.0]), &LbfgsOptions::default());
        assert!(matches!(r, Err(Error::Training(_))));
    }
}
