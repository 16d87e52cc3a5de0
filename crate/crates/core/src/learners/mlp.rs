//! Feed-forward network: rectifier hidden layers, one logistic output unit,
//! trained full-batch with L-BFGS on L2-regularized log loss.
//!
//! Loss = mean log loss + α/(2n)·Σ‖W‖² over weight matrices (biases are not
//! penalized). Parameters live in one flat vector, per layer: the
//! `out × in` weight matrix row-major, then the `out` biases.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::learners::lbfgs::{minimize, LbfgsOptions, LbfgsReport};
use crate::scalar::Scalar;
use crate::seed::rng_from;

/// Rows per partial-gradient block. Fixed so the summation order, and hence the
/// result, is independent of thread count.
const BLOCK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub alpha: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![100],
            alpha: 1e-5,
            max_iter: 200,
            tol: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MlpModel<T> {
    sizes: Vec<usize>,
    params: Vec<T>,
    alpha: f64,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

fn sigmoid<T: Scalar>(l: T) -> T {
    if l >= T::zero() {
        T::one() / (T::one() + (-l).exp())
    } else {
        let e = l.exp();
        e / (T::one() + e)
    }
}

/// log(1 + e^l) − y·l without overflow.
fn log_loss<T: Scalar>(l: T, y: T) -> T {
    l.max(T::zero()) + (-l.abs()).exp().ln_1p() - y * l
}

struct Net<'a, T> {
    sizes: &'a [usize],
    params: &'a [T],
    // per layer, weights transposed to input-major so the forward pass is a
    // sum of scaled columns
    columns: Vec<Vec<T>>,
    offsets: Vec<usize>,
}

impl<'a, T: Scalar> Net<'a, T> {
    fn new(sizes: &'a [usize], params: &'a [T]) -> Self {
        let mut columns = Vec::with_capacity(sizes.len() - 1);
        let mut offsets = Vec::with_capacity(sizes.len() - 1);
        let mut off = 0;
        for w in sizes.windows(2) {
            offsets.push(off);
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut t = vec![T::zero(); fan_in * fan_out];
            for o in 0..fan_out {
                for i in 0..fan_in {
                    t[i * fan_out + o] = params[off + o * fan_in + i];
                }
            }
            columns.push(t);
            off += fan_in * fan_out + fan_out;
        }
        Net {
            sizes,
            params,
            columns,
            offsets,
        }
    }

    /// Forward pass keeping every layer's activations in `acts`; returns the logit.
    fn forward(&self, x: &[T], acts: &mut Vec<Vec<T>>) -> T {
        if acts.len() != self.sizes.len() {
            *acts = self.sizes.iter().map(|&s| vec![T::zero(); s]).collect();
        }
        acts[0].copy_from_slice(x);
        let layers = self.sizes.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offsets[l] + fan_in * fan_out;
            let (head, tail) = acts.split_at_mut(l + 1);
            let out = &mut tail[0];
            out.copy_from_slice(&self.params[off..off + fan_out]);
            for (i, &xi) in head[l].iter().enumerate() {
                if xi == T::zero() {
                    continue;
                }
                let col = &self.columns[l][i * fan_out..(i + 1) * fan_out];
                for (z, &wi) in out.iter_mut().zip(col) {
                    *z += wi * xi;
                }
            }
            if l + 1 < layers {
                for z in out.iter_mut() {
                    *z = z.max(T::zero());
                }
            }
        }
        acts[layers][0]
    }

    /// Adds this row's unscaled log loss gradient into `grad`; returns the row loss.
    fn accumulate(&self, x: &[T], y: T, scratch: &mut Scratch<T>, grad: &mut [T]) -> T {
        let logit = self.forward(x, &mut scratch.acts);
        let acts = &scratch.acts;
        let (delta, prev) = (&mut scratch.delta, &mut scratch.prev);
        delta.clear();
        delta.push(sigmoid(logit) - y);
        for l in (0..self.sizes.len() - 1).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offsets[l];
            let input = &acts[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                let gw = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
                for (g, &xi) in gw.iter_mut().zip(input) {
                    *g += d * xi;
                }
                grad[off + fan_in * fan_out + o] += d;
            }
            if l > 0 {
                let w = &self.params[off..off + fan_in * fan_out];
                prev.clear();
                prev.resize(fan_in, T::zero());
                for (o, &d) in delta.iter().enumerate() {
                    if d == T::zero() {
                        continue;
                    }
                    for (p, &wi) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *p += wi * d;
                    }
                }
                // rectifier derivative: zero where the unit was inactive
                for (p, &a) in prev.iter_mut().zip(input) {
                    if a <= T::zero() {
                        *p = T::zero();
                    }
                }
                std::mem::swap(delta, prev);
            }
        }
        log_loss(logit, y)
    }
}

struct Scratch<T> {
    acts: Vec<Vec<T>>,
    delta: Vec<T>,
    prev: Vec<T>,
}

impl<T> Default for Scratch<T> {
    fn default() -> Self {
        Scratch {
            acts: Vec::new(),
            delta: Vec::new(),
            prev: Vec::new(),
        }
    }
}

fn weight_mask(sizes: &[usize]) -> Vec<bool> {
    let mut mask = Vec::with_capacity(param_count(sizes));
    for w in sizes.windows(2) {
        mask.extend(std::iter::repeat_n(true, w[0] * w[1]));
        mask.extend(std::iter::repeat_n(false, w[1]));
    }
    mask
}

/// Regularized loss and its gradient over all rows of `matrix`.
pub fn loss_and_gradient<T: Scalar>(
    sizes: &[usize],
    params: &[T],
    alpha: f64,
    matrix: &FeatureMatrix<T>,
) -> (T, Vec<T>) {
    let net = Net::new(sizes, params);
    let n = matrix.len();
    let p = params.len();
    let targets: Vec<T> = matrix
        .labels()
        .iter()
        .map(|&l| if l == Label::Malware { T::one() } else { T::zero() })
        .collect();
    let block = |b: usize| {
        let mut grad = vec![T::zero(); p];
        let mut scratch = Scratch::default();
        let mut loss = T::zero();
        for r in b * BLOCK..((b + 1) * BLOCK).min(n) {
            loss += net.accumulate(matrix.row(r), targets[r], &mut scratch, &mut grad);
        }
        (loss, grad)
    };
    let blocks = n.div_ceil(BLOCK);
    let parts: Vec<(T, Vec<T>)> = if blocks > 2 {
        (0..blocks).into_par_iter().map(block).collect()
    } else {
        (0..blocks).map(block).collect()
    };
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); p];
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let inv_n = T::one() / T::of_usize(n.max(1));
    let a = T::of(alpha);
    let mut penalty = T::zero();
    for ((g, &w), is_weight) in grad.iter_mut().zip(params).zip(weight_mask(sizes)) {
        *g *= inv_n;
        if is_weight {
            *g += a * w * inv_n;
            penalty += w * w;
        }
    }
    (loss * inv_n + a * T::of(0.5) * penalty * inv_n, grad)
}

impl<T: Scalar> MlpModel<T> {
    /// Glorot-uniform initialization (gain √2 narrower for the logistic output layer).
    pub fn initialized(sizes: Vec<usize>, alpha: f64, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) || *sizes.last().unwrap() != 1 {
            return Err(Error::config(format!("invalid layer sizes {sizes:?}")));
        }
        let mut rng = rng_from(seed);
        let mut params = Vec::with_capacity(param_count(&sizes));
        let layers = sizes.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let factor = if l + 1 == layers { 2.0 } else { 6.0 };
            let bound = (factor / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out + fan_out {
                params.push(T::of(rng.gen::<f64>() * 2.0 * bound - bound));
            }
        }
        Ok(MlpModel { sizes, params, alpha })
    }

    pub fn from_params(sizes: Vec<usize>, params: Vec<T>, alpha: f64) -> Result<Self> {
        if sizes.len() < 2 || *sizes.last().unwrap() != 1 || params.len() != param_count(&sizes) {
            return Err(Error::contract("parameter vector does not match layer sizes"));
        }
        Ok(MlpModel { sizes, params, alpha })
    }

    pub fn train(matrix: &FeatureMatrix<T>, cfg: &MlpConfig, seed: u64) -> Result<Self> {
        Self::train_traced(matrix, cfg, seed).map(|(m, _)| m)
    }

    pub fn train_traced(
        matrix: &FeatureMatrix<T>,
        cfg: &MlpConfig,
        seed: u64,
    ) -> Result<(Self, LbfgsReport<T>)> {
        if !(cfg.alpha >= 0.0 && cfg.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be non-negative, got {}", cfg.alpha)));
        }
        if cfg.hidden.is_empty() || cfg.hidden.contains(&0) {
            return Err(Error::config("MLP needs at least one non-empty hidden layer"));
        }
        if matrix.is_empty() {
            return Err(Error::Training("MLP needs at least one training row".into()));
        }
        let mut sizes = vec![matrix.dim()];
        sizes.extend(&cfg.hidden);
        sizes.push(1);
        let init = Self::initialized(sizes, cfg.alpha, seed)?;
        let opts = LbfgsOptions {
            max_iter: cfg.max_iter,
            grad_tol: cfg.tol,
            ..Default::default()
        };
        let report = minimize(
            init.params.clone(),
            |p| loss_and_gradient(&init.sizes, p, cfg.alpha, matrix),
            &opts,
        )?;
        let model = MlpModel {
            sizes: init.sizes,
            params: report.x.clone(),
            alpha: cfg.alpha,
        };
        Ok((model, report))
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn loss_and_gradient(&self, matrix: &FeatureMatrix<T>) -> (T, Vec<T>) {
        loss_and_gradient(&self.sizes, &self.params, self.alpha, matrix)
    }

    /// Pre-sigmoid output.
    pub fn logit(&self, x: &[T]) -> T {
        Net::new(&self.sizes, &self.params).forward(x, &mut Vec::new())
    }

    pub fn predict(&self, x: &[T]) -> Label {
        if self.logit(x) > T::zero() {
            Label::Malware
        } else {
            Label::Benign
        }
    }
}
