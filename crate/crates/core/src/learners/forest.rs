//! Bagged CART forest with Gini splits.
//!
//! Each leaf keeps the (bootstrap) training rows that reached it. A tree's
//! vote on a query is the sign of Σ zᵢ over the rows sharing the query's leaf,
//! with a zero sum going to benign, so every tree is a neighborhood classifier
//! whose neighborhood is its leaf.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::scalar::Scalar;
use crate::seed::{derive_seed, fisher_yates, rng_from, uniform_index, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or hold a single row.
    pub max_depth: Option<usize>,
    /// Features tried per split; `None` means ⌈√m⌉.
    pub max_features: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 10,
            max_depth: Some(10),
            max_features: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub enum Node<T> {
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Training-row indices in this leaf, with bootstrap multiplicity.
        rows: Vec<usize>,
        /// Σ zᵢ over `rows`.
        score: i64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DecisionTree<T> {
    pub nodes: Vec<Node<T>>,
}

impl<T: Scalar> DecisionTree<T> {
    /// Index of the leaf node `x` falls into.
    pub fn leaf_of(&self, x: &[T]) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { .. } => return at,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk<T>(nodes: &[Node<T>], at: usize) -> usize {
            match &nodes[at] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_score(&self, x: &[T]) -> i64 {
        match &self.nodes[self.leaf_of(x)] {
            Node::Leaf { score, .. } => *score,
            Node::Split { .. } => unreachable!("leaf_of returns a leaf"),
        }
    }

    pub fn vote(&self, x: &[T]) -> Label {
        if self.leaf_score(x) > 0 {
            Label::Malware
        } else {
            Label::Benign
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RandomForestModel<T> {
    trees: Vec<DecisionTree<T>>,
    max_depth: Option<usize>,
    max_features: usize,
    bootstraps: Vec<Vec<usize>>,
    train_labels: Vec<i8>,
    dim: usize,
}

struct Grower<'a, T> {
    matrix: &'a FeatureMatrix<T>,
    z: &'a [i8],
    max_depth: Option<usize>,
    max_features: usize,
    rng: SeededRng,
    nodes: Vec<Node<T>>,
}

struct BestSplit<T> {
    feature: usize,
    threshold: T,
    purity: f64,
}

impl<T: Scalar> Grower<'_, T> {
    fn leaf(&self, rows: Vec<usize>) -> Node<T> {
        let score = rows.iter().map(|&r| i64::from(self.z[r])).sum();
        Node::Leaf { rows, score }
    }

    /// Best Gini split of `rows` on feature `f`, scored by Σ_child (pos² + neg²)/size
    /// (larger means lower weighted impurity). `None` when `f` is constant on the node.
    fn best_on_feature(&self, rows: &[usize], f: usize) -> Option<(T, f64)> {
        let mut vals: Vec<(T, i8)> = rows
            .iter()
            .map(|&r| (self.matrix.row(r)[f], self.z[r]))
            .collect();
        vals.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
        let total_pos = vals.iter().filter(|v| v.1 > 0).count() as f64;
        let total = vals.len() as f64;
        let (mut lp, mut ln) = (0.0f64, 0.0f64);
        let mut best: Option<(T, f64)> = None;
        for i in 0..vals.len() - 1 {
            if vals[i].1 > 0 {
                lp += 1.0;
            } else {
                ln += 1.0;
            }
            let (a, b) = (vals[i].0, vals[i + 1].0);
            if a == b {
                continue;
            }
            let (rp, rn) = (total_pos - lp, total - total_pos - ln);
            let purity = (lp * lp + ln * ln) / (lp + ln) + (rp * rp + rn * rn) / (rp + rn);
            if best.is_none_or(|(_, p)| purity > p) {
                let mut t = (a + b) * T::of(0.5);
                if !(t >= a && t < b) {
                    t = a;
                }
                best = Some((t, purity));
            }
        }
        best
    }

    fn find_split(&mut self, rows: &[usize]) -> Option<BestSplit<T>> {
        let mut features: Vec<usize> = (0..self.matrix.dim()).collect();
        fisher_yates(&mut features, &mut self.rng);
        let mut best: Option<BestSplit<T>> = None;
        for (tried, &f) in features.iter().enumerate() {
            // keep drawing past max_features only while no usable split has been seen
            if tried >= self.max_features && best.is_some() {
                break;
            }
            if let Some((threshold, purity)) = self.best_on_feature(rows, f) {
                if best.as_ref().is_none_or(|b| purity > b.purity) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        purity,
                    });
                }
            }
        }
        best
    }

    fn grow(mut self, rows: Vec<usize>) -> Vec<Node<T>> {
        // explicit stack of (node slot, rows, depth)
        self.nodes.push(self.leaf(Vec::new()));
        let mut stack = vec![(0usize, rows, 0usize)];
        while let Some((slot, rows, depth)) = stack.pop() {
            let pure = rows.iter().all(|&r| self.z[r] == self.z[rows[0]]);
            let at_depth = self.max_depth.is_some_and(|d| depth >= d);
            if rows.len() < 2 || pure || at_depth {
                self.nodes[slot] = self.leaf(rows);
                continue;
            }
            let Some(split) = self.find_split(&rows) else {
                self.nodes[slot] = self.leaf(rows);
                continue;
            };
            let (l, r): (Vec<usize>, Vec<usize>) = rows
                .iter()
                .partition(|&&i| self.matrix.row(i)[split.feature] <= split.threshold);
            let left = self.nodes.len();
            self.nodes.push(self.leaf(Vec::new()));
            let right = self.nodes.len();
            self.nodes.push(self.leaf(Vec::new()));
            self.nodes[slot] = Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                left,
                right,
            };
            stack.push((right, r, depth + 1));
            stack.push((left, l, depth + 1));
        }
        self.nodes
    }
}

impl<T: Scalar> RandomForestModel<T> {
    pub fn train(matrix: &FeatureMatrix<T>, cfg: &ForestConfig, seed: u64) -> Result<Self> {
        if cfg.n_trees == 0 {
            return Err(Error::config("forest needs at least one tree"));
        }
        if cfg.max_depth == Some(0) {
            return Err(Error::config("max_depth must be at least 1"));
        }
        if matrix.is_empty() {
            return Err(Error::Training("forest needs at least one training row".into()));
        }
        let dim = matrix.dim();
        let max_features = cfg
            .max_features
            .unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize)
            .clamp(1, dim.max(1));
        let z: Vec<i8> = matrix.labels().iter().map(|l| l.sign()).collect();
        if z.iter().all(|&s| s == z[0]) {
            log::warn!("forest trained on a single class; every tree is a single leaf");
        }
        let n = matrix.len();
        let built: Vec<(DecisionTree<T>, Vec<usize>)> = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_from(derive_seed(seed, &[t as u64]));
                let bootstrap: Vec<usize> = (0..n).map(|_| uniform_index(&mut rng, n)).collect();
                let grower = Grower {
                    matrix,
                    z: &z,
                    max_depth: cfg.max_depth,
                    max_features,
                    rng,
                    nodes: Vec::new(),
                };
                let nodes = grower.grow(bootstrap.clone());
                (DecisionTree { nodes }, bootstrap)
            })
            .collect();
        let (trees, bootstraps) = built.into_iter().unzip();
        Ok(RandomForestModel {
            trees,
            max_depth: cfg.max_depth,
            max_features,
            bootstraps,
            train_labels: z,
            dim,
        })
    }

    pub fn trees(&self) -> &[DecisionTree<T>] {
        &self.trees
    }

    /// Bootstrap row indices drawn for tree `t`.
    pub fn bootstrap(&self, t: usize) -> &[usize] {
        &self.bootstraps[t]
    }

    pub fn training_labels(&self) -> &[i8] {
        &self.train_labels
    }

    pub fn max_depth(&self) -> Option<usize> {
        self.max_depth
    }

    pub fn max_features(&self) -> usize {
        self.max_features
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Σ zᵢ over training rows sharing `x`'s leaf in tree `t`.
    pub fn neighborhood_score(&self, t: usize, x: &[T]) -> i64 {
        self.trees[t].leaf_score(x)
    }

    pub fn tree_vote(&self, t: usize, x: &[T]) -> Label {
        self.trees[t].vote(x)
    }

    /// Fraction of trees voting malware.
    pub fn score(&self, x: &[T]) -> T {
        let pos = self
            .trees
            .iter()
            .filter(|t| t.vote(x) == Label::Malware)
            .count();
        T::of_usize(pos) / T::of_usize(self.trees.len())
    }

    pub fn predict(&self, x: &[T]) -> Label {
        if self.score(x) > T::of(0.5) {
            Label::Malware
        } else {
            Label::Benign
        }
    }
}
