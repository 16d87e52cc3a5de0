//! The four classifiers behind one configuration/model facade.
//!
//! | variant         | score                      | predicts malware when |
//! |-----------------|----------------------------|-----------------------|
//! | `knn`           | mean neighbor label        | score > 0             |
//! | `linear_svm`    | w·x + b                    | score > 0             |
//! | `random_forest` | fraction of malware votes  | score > 0.5           |
//! | `mlp`           | output logit               | score > 0             |
//!
//! Every threshold tie resolves to benign.

pub mod forest;
pub mod knn;
pub mod lbfgs;
pub mod mlp;
pub mod svm;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::scalar::Scalar;

pub use forest::{DecisionTree, ForestConfig, Node, RandomForestModel};
pub use knn::{KnnModel, Metric};
pub use mlp::{MlpConfig, MlpModel};
pub use svm::{LinearSvmModel, SvmConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Knn,
    LinearSvm,
    RandomForest,
    Mlp,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 4] = [
        LearnerKind::Knn,
        LearnerKind::LinearSvm,
        LearnerKind::RandomForest,
        LearnerKind::Mlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Knn => "knn",
            LearnerKind::LinearSvm => "linear_svm",
            LearnerKind::RandomForest => "random_forest",
            LearnerKind::Mlp => "mlp",
        }
    }

    /// Accepts the canonical names plus the short forms `svm`, `rf`.
    pub fn parse(s: &str) -> Option<LearnerKind> {
        match s {
            "knn" => Some(LearnerKind::Knn),
            "linear_svm" | "svm" => Some(LearnerKind::LinearSvm),
            "random_forest" | "rf" => Some(LearnerKind::RandomForest),
            "mlp" => Some(LearnerKind::Mlp),
            _ => None,
        }
    }
}

impl std::fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters of one learner. Scalar-independent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum LearnerConfig {
    Knn { k: usize, metric: Metric },
    LinearSvm(SvmConfig),
    RandomForest(ForestConfig),
    Mlp(MlpConfig),
}

impl LearnerConfig {
    pub fn default_for(kind: LearnerKind) -> LearnerConfig {
        match kind {
            LearnerKind::Knn => LearnerConfig::Knn {
                k: 5,
                metric: Metric::Euclidean,
            },
            LearnerKind::LinearSvm => LearnerConfig::LinearSvm(SvmConfig::default()),
            LearnerKind::RandomForest => LearnerConfig::RandomForest(ForestConfig::default()),
            LearnerKind::Mlp => LearnerConfig::Mlp(MlpConfig::default()),
        }
    }

    /// kNN (k = 5), linear SVM (C = 1), forest (10 trees, depth 10), MLP (100 hidden, α = 1e-5).
    pub fn defaults() -> Vec<LearnerConfig> {
        LearnerKind::ALL.iter().map(|&k| Self::default_for(k)).collect()
    }

    /// Reject hyperparameters no training set could accept.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(msg));
        match self {
            LearnerConfig::Knn { k, .. } if *k == 0 => bad("knn: k must be at least 1".into()),
            LearnerConfig::LinearSvm(c) if !(c.c > 0.0 && c.c.is_finite()) => {
                bad(format!("linear_svm: C must be positive, got {}", c.c))
            }
            LearnerConfig::LinearSvm(c) if !(c.tol > 0.0) => bad(format!("linear_svm: tol must be positive, got {}", c.tol)),
            LearnerConfig::LinearSvm(SvmConfig { max_iter: Some(0), .. }) => bad("linear_svm: max_iter must be at least 1".into()),
            LearnerConfig::RandomForest(f) if f.n_trees == 0 => bad("random_forest: needs at least one tree".into()),
            LearnerConfig::RandomForest(f) if f.max_depth == Some(0) => {
                bad("random_forest: max_depth must be at least 1".into())
            }
            LearnerConfig::RandomForest(f) if f.max_features == Some(0) => {
                bad("random_forest: max_features must be at least 1".into())
            }
            LearnerConfig::Mlp(c) if c.hidden.is_empty() || c.hidden.contains(&0) => {
                bad(format!("mlp: invalid hidden layers {:?}", c.hidden))
            }
            LearnerConfig::Mlp(c) if !(c.alpha >= 0.0 && c.alpha.is_finite()) => {
                bad(format!("mlp: alpha must be non-negative, got {}", c.alpha))
            }
            LearnerConfig::Mlp(c) if c.max_iter == 0 || !(c.tol > 0.0) => {
                bad("mlp: max_iter must be at least 1 and tol positive".into())
            }
            _ => Ok(()),
        }
    }

    pub fn kind(&self) -> LearnerKind {
        match self {
            LearnerConfig::Knn { .. } => LearnerKind::Knn,
            LearnerConfig::LinearSvm(_) => LearnerKind::LinearSvm,
            LearnerConfig::RandomForest(_) => LearnerKind::RandomForest,
            LearnerConfig::Mlp(_) => LearnerKind::Mlp,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "state", rename_all = "snake_case")]
#[serde(bound = "T: Scalar")]
pub enum TrainedModel<T> {
    Knn(KnnModel<T>),
    LinearSvm(LinearSvmModel<T>),
    RandomForest(RandomForestModel<T>),
    Mlp(MlpModel<T>),
}

/// Fit `config` on every row of `matrix`. `seed` drives the forest's bagging
/// and the MLP's initialization; kNN and SVM are seed-independent.
pub fn train<T: Scalar>(
    config: &LearnerConfig,
    matrix: &FeatureMatrix<T>,
    seed: u64,
) -> Result<TrainedModel<T>> {
    Ok(match config {
        LearnerConfig::Knn { k, metric } => TrainedModel::Knn(KnnModel::fit(matrix, *k, *metric)?),
        LearnerConfig::LinearSvm(c) => TrainedModel::LinearSvm(LinearSvmModel::train(matrix, c)?),
        LearnerConfig::RandomForest(c) => {
            TrainedModel::RandomForest(RandomForestModel::train(matrix, c, seed)?)
        }
        LearnerConfig::Mlp(c) => TrainedModel::Mlp(MlpModel::train(matrix, c, seed)?),
    })
}

impl<T: Scalar> TrainedModel<T> {
    pub fn kind(&self) -> LearnerKind {
        match self {
            TrainedModel::Knn(_) => LearnerKind::Knn,
            TrainedModel::LinearSvm(_) => LearnerKind::LinearSvm,
            TrainedModel::RandomForest(_) => LearnerKind::RandomForest,
            TrainedModel::Mlp(_) => LearnerKind::Mlp,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            TrainedModel::Knn(m) => m.dim(),
            TrainedModel::LinearSvm(m) => m.dim(),
            TrainedModel::RandomForest(m) => m.dim(),
            TrainedModel::Mlp(m) => m.dim(),
        }
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() != self.feature_dim() {
            return Err(Error::contract(format!(
                "{} model expects {} features, got {}",
                self.kind(),
                self.feature_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    pub fn score(&self, x: &[T]) -> Result<T> {
        self.check_dim(x)?;
        Ok(match self {
            TrainedModel::Knn(m) => m.score(x),
            TrainedModel::LinearSvm(m) => m.score(x),
            TrainedModel::RandomForest(m) => m.score(x),
            TrainedModel::Mlp(m) => m.logit(x),
        })
    }

    /// Decision threshold on [`score`](Self::score); ties go to benign.
    pub fn threshold(&self) -> T {
        match self {
            TrainedModel::RandomForest(_) => T::of(0.5),
            _ => T::zero(),
        }
    }

    pub fn predict(&self, x: &[T]) -> Result<Label> {
        let s = self.score(x)?;
        Ok(if s > self.threshold() {
            Label::Malware
        } else {
            Label::Benign
        })
    }

    pub fn score_batch(&self, matrix: &FeatureMatrix<T>) -> Result<Vec<T>> {
        matrix.rows().map(|x| self.score(x)).collect()
    }

    pub fn predict_batch(&self, matrix: &FeatureMatrix<T>) -> Result<Vec<Label>> {
        matrix.rows().map(|x| self.predict(x)).collect()
    }
}

pub const MODEL_FORMAT: &str = "bytegram-model";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct ModelDoc<T> {
    format: String,
    version: u32,
    scalar: String,
    model: TrainedModel<T>,
}

fn scalar_name<T: Scalar>() -> &'static str {
    if std::mem::size_of::<T>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

pub fn model_to_string<T: Scalar>(model: &TrainedModel<T>) -> String {
    let doc = ModelDoc {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        scalar: scalar_name::<T>().into(),
        model: model.clone(),
    };
    serde_json::to_string(&doc).expect("model serializes")
}

pub fn model_from_str<T: Scalar>(text: &str, origin: &str) -> Result<TrainedModel<T>> {
    let doc: ModelDoc<T> =
        serde_json::from_str(text).map_err(|e| Error::parse(origin, e.line(), e.to_string()))?;
    if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
        return Err(Error::parse(origin, 1, "unsupported model format"));
    }
    if doc.scalar != scalar_name::<T>() {
        return Err(Error::parse(
            origin,
            1,
            format!("model stores {} parameters, expected {}", doc.scalar, scalar_name::<T>()),
        ));
    }
    Ok(doc.model)
}

pub fn save_model<T: Scalar>(model: &TrainedModel<T>, path: &Path) -> Result<()> {
    crate::write_atomic(path, model_to_string(model).as_bytes())
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<TrainedModel<T>> {
    let text = fs::read_to_string(path)?;
    model_from_str(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> FeatureMatrix<f64> {
        let rows: Vec<Vec<f64>> = (0..24)
            .map(|i| {
                let t = (i % 12) as f64 / 12.0;
                if i < 12 {
                    vec![t * 0.4, 1.0 - t * 0.4]
                } else {
                    vec![0.6 + t * 0.4, 0.4 - t * 0.4]
                }
            })
            .collect();
        let labels = (0..24)
            .map(|i| if i < 12 { Label::Benign } else { Label::Malware })
            .collect();
        FeatureMatrix::from_rows(rows, labels).unwrap()
    }

    #[test]
    fn facade_is_consistent_with_thresholds() {
        let m = data();
        for cfg in LearnerConfig::defaults() {
            let model = train(&cfg, &m, 1).unwrap();
            let scores = model.score_batch(&m).unwrap();
            let preds = model.predict_batch(&m).unwrap();
            for (s, p) in scores.iter().zip(&preds) {
                assert_eq!(*p == Label::Malware, *s > model.threshold());
            }
            for (i, x) in m.rows().enumerate() {
                assert_eq!(model.predict(x).unwrap(), preds[i]);
            }
            assert!(model.score(&[0.5]).is_err());
        }
    }

    #[test]
    fn save_load_reproduces_scores() {
        let m = data();
        for cfg in LearnerConfig::defaults() {
            let model = train(&cfg, &m, 7).unwrap();
            let text = model_to_string(&model);
            let back: TrainedModel<f64> = model_from_str(&text, "t").unwrap();
            assert_eq!(back, model);
            assert_eq!(back.score_batch(&m).unwrap(), model.score_batch(&m).unwrap());
            assert!(model_from_str::<f32>(&text, "t").is_err());
        }
    }

    #[test]
    fn kind_names_parse() {
        for k in LearnerKind::ALL {
            assert_eq!(LearnerKind::parse(k.name()), Some(k));
        }
        assert_eq!(LearnerKind::parse("rf"), Some(LearnerKind::RandomForest));
        assert_eq!(LearnerKind::parse("tree"), None);
    }

    #[test]
    fn validation_rejects_degenerate_settings() {
        for cfg in LearnerConfig::defaults() {
            cfg.validate().unwrap();
        }
        let bad = [
            LearnerConfig::Knn { k: 0, metric: Metric::Euclidean },
            LearnerConfig::LinearSvm(SvmConfig { c: 0.0, ..Default::default() }),
            LearnerConfig::RandomForest(ForestConfig { max_depth: Some(0), ..Default::default() }),
            LearnerConfig::Mlp(MlpConfig { hidden: vec![], ..Default::default() }),
            LearnerConfig::Mlp(MlpConfig { alpha: f64::NAN, ..Default::default() }),
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
    }
}
