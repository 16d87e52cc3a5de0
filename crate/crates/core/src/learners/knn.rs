//! Brute-force k-nearest-neighbor classifier.
//!
//! The score is the mean ±1 label of the k nearest training rows, so the
//! decision rule is a signed vote over the query's k-neighborhood. Rows at
//! equal distance are ordered by training-row index.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Manhattan,
    Cosine,
}

impl Metric {
    /// Dissimilarity used for ranking. Euclidean returns the squared distance,
    /// which orders rows identically without a square root.
    pub fn dissimilarity<T: Scalar>(self, a: &[T], b: &[T]) -> T {
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| (x - y) * (x - y))
                .fold(T::zero(), |s, v| s + v),
            Metric::Manhattan => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| (x - y).abs())
                .fold(T::zero(), |s, v| s + v),
            Metric::Cosine => {
                let (mut dot, mut na, mut nb) = (T::zero(), T::zero(), T::zero());
                for (&x, &y) in a.iter().zip(b) {
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                if na == T::zero() && nb == T::zero() {
                    T::zero()
                } else if na == T::zero() || nb == T::zero() {
                    T::one()
                } else {
                    T::one() - dot / (na.sqrt() * nb.sqrt())
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct KnnModel<T> {
    k: usize,
    metric: Metric,
    dim: usize,
    data: Vec<T>,
    labels: Vec<i8>,
}

impl<T: Scalar> KnnModel<T> {
    pub fn fit(matrix: &FeatureMatrix<T>, k: usize, metric: Metric) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        if k > matrix.len() {
            return Err(Error::Training(format!(
                "k = {k} exceeds the {} training rows",
                matrix.len()
            )));
        }
        Ok(KnnModel {
            k,
            metric,
            dim: matrix.dim(),
            data: matrix.data().to_vec(),
            labels: matrix.labels().iter().map(|l| l.sign()).collect(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Indices of the k nearest training rows, nearest first.
    pub fn neighbors(&self, x: &[T]) -> Vec<usize> {
        let mut d: Vec<(T, usize)> = (0..self.labels.len())
            .map(|i| {
                let row = &self.data[i * self.dim..(i + 1) * self.dim];
                (self.metric.dissimilarity(row, x), i)
            })
            .collect();
        let order = |a: &(T, usize), b: &(T, usize)| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
        };
        if self.k < d.len() {
            d.select_nth_unstable_by(self.k - 1, order);
            d.truncate(self.k);
        }
        d.sort_by(order);
        d.into_iter().map(|(_, i)| i).collect()
    }

    /// Mean label of the k nearest neighbors, in [-1, 1].
    pub fn score(&self, x: &[T]) -> T {
        let votes: i64 = self
            .neighbors(x)
            .into_iter()
            .map(|i| i64::from(self.labels[i]))
            .sum();
        T::of(votes as f64) / T::of_usize(self.k)
    }

    /// +1 when the vote is positive; an even split goes to benign.
    pub fn predict(&self, x: &[T]) -> Label {
        if self.score(x) > T::zero() {
            Label::Malware
        } else {
            Label::Benign
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: Vec<Vec<f64>>, signs: &[i8]) -> FeatureMatrix<f64> {
        FeatureMatrix::from_rows(rows, signs.iter().map(|&s| Label::from_sign(s).unwrap()).collect()).unwrap()
    }

    #[test]
    fn one_nn_on_training_point() {
        let m = matrix(vec![vec![0.0, 1.0], vec![1.0, 0.0]], &[1, -1]);
        let knn = KnnModel::fit(&m, 1, Metric::Euclidean).unwrap();
        assert_eq!(knn.score(&[0.0, 1.0]), 1.0);
        assert_eq!(knn.predict(&[0.0, 1.0]), Label::Malware);
    }

    #[test]
    fn five_nn_majority() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).chain([vec![100.0]]).collect();
        let m = matrix(rows, &[1, 1, 1, -1, -1, -1]);
        let knn = KnnModel::fit(&m, 5, Metric::Euclidean).unwrap();
        assert!((knn.score(&[0.0]) - 0.2).abs() < 1e-15);
        assert_eq!(knn.predict(&[0.0]), Label::Malware);
    }

    #[test]
    fn even_tie_goes_benign_and_index_breaks_distance_ties() {
        let m = matrix(vec![vec![1.0], vec![-1.0], vec![1.0]], &[1, -1, -1]);
        let knn = KnnModel::fit(&m, 2, Metric::Euclidean).unwrap();
        // all three rows at distance 1 from the origin: rows 0 and 1 win the tie
        assert_eq!(knn.neighbors(&[0.0]), vec![0, 1]);
        assert_eq!(knn.score(&[0.0]), 0.0);
        assert_eq!(knn.predict(&[0.0]), Label::Benign);
    }

    #[test]
    fn k_must_fit_training_set() {
        let m = matrix(vec![vec![1.0]], &[1]);
        assert!(KnnModel::fit(&m, 2, Metric::Euclidean).is_err());
        assert!(KnnModel::fit(&m, 0, Metric::Euclidean).is_err());
    }

    #[test]
    fn alternative_metrics() {
        assert_eq!(Metric::Manhattan.dissimilarity(&[0.0, 0.0], &[1.0, -2.0]), 3.0);
        assert_eq!(Metric::Cosine.dissimilarity(&[1.0, 0.0], &[2.0, 0.0]), 0.0);
        assert_eq!(Metric::Cosine.dissimilarity(&[1.0, 0.0], &[0.0, 0.0]), 1.0);
    }
}
