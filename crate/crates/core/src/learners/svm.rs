//! Linear soft-margin SVM trained by SMO on the dual problem.
//!
//! Primal: minimize ½‖w‖² + C Σ max(0, 1 − zᵢ(w·xᵢ + b)) with b unregularized.
//! The solver works on the dual with the equality constraint Σ zᵢαᵢ = 0,
//! picking working pairs by the second-order rule, and keeps w explicit so
//! each step costs two passes over the data. It stops when the maximal KKT
//! violation falls below `tol`.

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::scalar::Scalar;

const TAU: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub tol: f64,
    /// `None` picks max(10⁷, 100·rows).
    pub max_iter: Option<usize>,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            tol: 1e-3,
            max_iter: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LinearSvmModel<T> {
    pub w: Vec<T>,
    pub b: T,
    pub c: T,
}

/// Per-iteration dual objective values and the stopping state.
#[derive(Clone, Debug, Default)]
pub struct SvmTrace {
    pub dual_objective: Vec<f64>,
    pub iterations: usize,
    pub final_violation: f64,
    pub converged: bool,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

impl<T: Scalar> LinearSvmModel<T> {
    pub fn train(matrix: &FeatureMatrix<T>, cfg: &SvmConfig) -> Result<Self> {
        Self::train_traced(matrix, cfg).map(|(m, _)| m)
    }

    pub fn train_traced(matrix: &FeatureMatrix<T>, cfg: &SvmConfig) -> Result<(Self, SvmTrace)> {
        if !(cfg.c.is_finite() && cfg.c > 0.0) {
            return Err(Error::config(format!("SVM C must be positive, got {}", cfg.c)));
        }
        let n = matrix.len();
        let pos = matrix.count(Label::Malware);
        if pos == 0 || pos == n {
            return Err(Error::Training("SVM needs rows of both classes".into()));
        }
        let dim = matrix.dim();
        let c = T::of(cfg.c);
        let tol = T::of(cfg.tol);
        let tau = T::of(TAU);
        let max_iter = cfg.max_iter.unwrap_or(10_000_000usize.max(100 * n));

        let y: Vec<T> = matrix.labels().iter().map(|l| T::of(f64::from(l.sign()))).collect();
        let x = |i: usize| matrix.row(i);
        let qd: Vec<T> = (0..n).map(|i| dot(x(i), x(i))).collect();
        let mut alpha = vec![T::zero(); n];
        let mut grad = vec![-T::one(); n];
        let mut w = vec![T::zero(); dim];
        let mut alpha_sum = T::zero();
        let mut ki = vec![T::zero(); n];
        let mut trace = SvmTrace::default();

        let upper = |a: T| a >= c;
        let lower = |a: T| a <= T::zero();

        let mut iter = 0;
        loop {
            // i: maximal violator among the "up" set
            let mut gmax = T::neg_infinity();
            let mut i_sel = None;
            for t in 0..n {
                if y[t] > T::zero() {
                    if !upper(alpha[t]) && -grad[t] >= gmax {
                        gmax = -grad[t];
                        i_sel = Some(t);
                    }
                } else if !lower(alpha[t]) && grad[t] >= gmax {
                    gmax = grad[t];
                    i_sel = Some(t);
                }
            }
            let mut gmax2 = T::neg_infinity();
            let mut j_sel = None;
            if let Some(i) = i_sel {
                let xi = x(i);
                for (t, k) in ki.iter_mut().enumerate() {
                    *k = dot(xi, x(t));
                }
                let mut obj_min = T::infinity();
                for t in 0..n {
                    let quad = qd[i] + qd[t] - (ki[t] + ki[t]);
                    let quad = if quad > T::zero() { quad } else { tau };
                    if y[t] > T::zero() {
                        if !lower(alpha[t]) {
                            let diff = gmax + grad[t];
                            if grad[t] >= gmax2 {
                                gmax2 = grad[t];
                            }
                            if diff > T::zero() {
                                let obj = -(diff * diff) / quad;
                                if obj <= obj_min {
                                    obj_min = obj;
                                    j_sel = Some(t);
                                }
                            }
                        }
                    } else if !upper(alpha[t]) {
                        let diff = gmax - grad[t];
                        if -grad[t] >= gmax2 {
                            gmax2 = -grad[t];
                        }
                        if diff > T::zero() {
                            let obj = -(diff * diff) / quad;
                            if obj <= obj_min {
                                obj_min = obj;
                                j_sel = Some(t);
                            }
                        }
                    }
                }
            }
            trace.final_violation = (gmax + gmax2).as_f64();
            let (i, j) = match (i_sel, j_sel) {
                (Some(i), Some(j)) if gmax + gmax2 >= tol => (i, j),
                _ => {
                    trace.converged = true;
                    break;
                }
            };
            if iter >= max_iter {
                log::warn!("SVM stopped at max_iter = {max_iter} with violation {}", trace.final_violation);
                break;
            }
            iter += 1;

            let (old_i, old_j) = (alpha[i], alpha[j]);
            let kij = ki[j];
            // ‖xᵢ − xⱼ‖², the curvature along the pair direction for either sign pattern
            let quad = qd[i] + qd[j] - (kij + kij);
            let quad = if quad > T::zero() { quad } else { tau };
            if y[i] != y[j] {
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > T::zero() {
                    if alpha[j] < T::zero() {
                        alpha[j] = T::zero();
                        alpha[i] = diff;
                    }
                } else if alpha[i] < T::zero() {
                    alpha[i] = T::zero();
                    alpha[j] = -diff;
                }
                if diff > T::zero() {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = c - diff;
                    }
                } else if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            } else {
                let delta = (grad[i] - grad[j]) / quad;
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > c {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = sum - c;
                    }
                } else if alpha[j] < T::zero() {
                    alpha[j] = T::zero();
                    alpha[i] = sum;
                }
                if sum > c {
                    if alpha[j] > c {
                        alpha[j] = c;
                        alpha[i] = sum - c;
                    }
                } else if alpha[i] < T::zero() {
                    alpha[i] = T::zero();
                    alpha[j] = sum;
                }
            }

            let di = (alpha[i] - old_i) * y[i];
            let dj = (alpha[j] - old_j) * y[j];
            alpha_sum += alpha[i] - old_i + alpha[j] - old_j;
            let mut dw = vec![T::zero(); dim];
            for (f, d) in dw.iter_mut().enumerate() {
                *d = di * x(i)[f] + dj * x(j)[f];
                w[f] += *d;
            }
            for t in 0..n {
                grad[t] += y[t] * dot(x(t), &dw);
            }
            let obj = T::of(0.5) * dot(&w, &w) - alpha_sum;
            trace.dual_objective.push(obj.as_f64());
        }
        trace.iterations = iter;

        // bias from the KKT conditions: mean over free vectors, else midpoint of the feasible interval
        let (mut ub, mut lb) = (T::infinity(), T::neg_infinity());
        let (mut n_free, mut sum_free) = (0usize, T::zero());
        for t in 0..n {
            let yg = y[t] * grad[t];
            if upper(alpha[t]) {
                if y[t] < T::zero() {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if lower(alpha[t]) {
                if y[t] > T::zero() {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        let rho = if n_free > 0 {
            sum_free / T::of_usize(n_free)
        } else {
            (ub + lb) * T::of(0.5)
        };
        let model = LinearSvmModel { w, b: -rho, c };
        if !model.b.is_finite() || model.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training("SVM produced non-finite parameters".into()));
        }
        Ok((model, trace))
    }

    /// Decision value w·x + b.
    pub fn score(&self, x: &[T]) -> T {
        dot(&self.w, x) + self.b
    }

    pub fn predict(&self, x: &[T]) -> Label {
        if self.score(x) > T::zero() {
            Label::Malware
        } else {
            Label::Benign
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// Primal objective ½‖w‖² + C Σ hinge on `matrix`, evaluated in f64.
    pub fn objective(&self, matrix: &FeatureMatrix<T>) -> f64 {
        let reg: f64 = self.w.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() * 0.5;
        let hinge: f64 = (0..matrix.len())
            .map(|i| {
                let z = f64::from(matrix.labels()[i].sign());
                (1.0 - z * self.score(matrix.row(i)).as_f64()).max(0.0)
            })
            .sum();
        reg + self.c.as_f64() * hinge
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: Vec<Vec<f64>>, signs: &[i8]) -> FeatureMatrix<f64> {
        FeatureMatrix::from_rows(rows, signs.iter().map(|&s| Label::from_sign(s).unwrap()).collect()).unwrap()
    }

    #[test]
    fn two_point_separable() {
        let m = matrix(vec![vec![0.0, 0.0], vec![1.0, 1.0]], &[-1, 1]);
        let svm = LinearSvmModel::train(&m, &SvmConfig::default()).unwrap();
        assert_eq!(svm.predict(&[0.0, 0.0]), Label::Benign);
        assert_eq!(svm.predict(&[1.0, 1.0]), Label::Malware);
        // boundary passes between the two points
        assert!(svm.score(&[0.5, 0.5]).abs() < 1e-6);
        // hard-margin optimum: w = (1, 1), b = -1
        assert!((svm.w[0] - 1.0).abs() < 1e-3 && (svm.w[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn symmetric_inseparable_data_scores_near_zero() {
        let pts = [vec![0.2, 0.8], vec![0.5, 0.5], vec![0.9, 0.1]];
        let rows: Vec<Vec<f64>> = pts.iter().cloned().chain(pts.iter().cloned()).collect();
        let m = matrix(rows, &[-1, -1, -1, 1, 1, 1]);
        let svm = LinearSvmModel::train(&m, &SvmConfig::default()).unwrap();
        for p in &pts {
            assert!(svm.score(p).abs() < 1e-2, "{}", svm.score(p));
        }
    }

    #[test]
    fn single_class_is_an_error() {
        let m = matrix(vec![vec![0.0], vec![1.0]], &[1, 1]);
        assert!(matches!(LinearSvmModel::train(&m, &SvmConfig::default()), Err(Error::Training(_))));
    }

    #[test]
    fn score_is_affine() {
        let svm: LinearSvmModel<f64> = LinearSvmModel { w: vec![2.0, -1.0], b: 0.5, c: 1.0 };
        assert_eq!(svm.score(&[0.0, 0.0]), 0.5);
        let x = [0.3, 0.7];
        let x2 = [0.6, 1.4];
        assert!((svm.score(&x2) - (2.0 * (svm.score(&x) - 0.5) + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn dual_objective_never_increases() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let t = i as f64 / 40.0;
                vec![t, ((i * 7) % 11) as f64 / 11.0]
            })
            .collect();
        let signs: Vec<i8> = (0..40).map(|i| if (i * 3) % 5 < 2 { 1 } else { -1 }).collect();
        let m = matrix(rows, &signs);
        let (_, trace) = LinearSvmModel::train_traced(&m, &SvmConfig::default()).unwrap();
        assert!(trace.converged);
        for w in trace.dual_objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }
}
