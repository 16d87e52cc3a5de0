//! Stratified cross-validation, balanced accuracy, ROC/AUC and summary statistics.
//!
//! Ratio metrics are formed from integer numerators and denominators and
//! divided once, so any two metrics that are equal as fractions are equal
//! as floats too.

use std::io::Write;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::learners::{self, LearnerConfig};
use crate::scalar::Scalar;
use crate::seed::{derive_seed, fisher_yates, rng_from, tag};

pub const DEFAULT_FOLDS: usize = 5;

/// Fold index for every row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    n_folds: usize,
    assignment: Vec<usize>,
    seed: u64,
}

impl FoldPlan {
    pub fn n_folds(&self) -> usize {
        self.n_folds
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Held-out rows of `fold`, ascending.
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    /// Training rows of `fold`, ascending.
    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] != fold).collect()
    }
}

/// Shuffle each class with its own seeded stream, then deal its rows
/// round-robin into the folds starting from fold 0.
pub fn stratified_folds(labels: &[Label], n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 2 {
        return Err(Error::config(format!("need at least 2 folds, got {n_folds}")));
    }
    let mut assignment = vec![0; labels.len()];
    for class in [Label::Benign, Label::Malware] {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if rows.len() < n_folds {
            return Err(Error::config(format!(
                "class {class:?} has {} rows, fewer than {n_folds} folds",
                rows.len()
            )));
        }
        let mut rng = rng_from(derive_seed(seed, &[tag(class.name())]));
        fisher_yates(&mut rows, &mut rng);
        for (p, r) in rows.into_iter().enumerate() {
            assignment[r] = p % n_folds;
        }
    }
    Ok(FoldPlan {
        n_folds,
        assignment,
        seed,
    })
}

/// Confusion counts (malware is the positive class) plus held-out scores.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutcome<T> {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    pub scores: Vec<(Label, T)>,
}

impl<T: Scalar> Default for EvalOutcome<T> {
    fn default() -> Self {
        EvalOutcome {
            tp: 0,
            tn: 0,
            fp: 0,
            fn_: 0,
            scores: Vec::new(),
        }
    }
}

fn ratio_as<T: Scalar>(num: u128, den: u128) -> T {
    // exact below 2^53, which covers any realistic count product
    T::of(num as f64 / den as f64)
}

impl<T: Scalar> EvalOutcome<T> {
    pub fn from_counts(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        EvalOutcome {
            tp,
            tn,
            fp,
            fn_,
            scores: Vec::new(),
        }
    }

    pub fn record(&mut self, truth: Label, predicted: Label, score: T) {
        match (truth, predicted) {
            (Label::Malware, Label::Malware) => self.tp += 1,
            (Label::Malware, Label::Benign) => self.fn_ += 1,
            (Label::Benign, Label::Benign) => self.tn += 1,
            (Label::Benign, Label::Malware) => self.fp += 1,
        }
        self.scores.push((truth, score));
    }

    /// Add another outcome's counts and scores.
    pub fn absorb(&mut self, other: &EvalOutcome<T>) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.scores.extend_from_slice(&other.scores);
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn total(&self) -> u64 {
        self.positives() + self.negatives()
    }

    pub fn accuracy(&self) -> Result<T> {
        if self.total() == 0 {
            return Err(Error::UndefinedMetric("accuracy of an empty outcome".into()));
        }
        Ok(ratio_as(
            u128::from(self.tp + self.tn),
            u128::from(self.total()),
        ))
    }

    fn check_both_classes(&self) -> Result<(u64, u64)> {
        let (p, n) = (self.positives(), self.negatives());
        if p == 0 || n == 0 {
            return Err(Error::UndefinedMetric(format!(
                "balanced accuracy needs both classes (P={p}, N={n})"
            )));
        }
        Ok((p, n))
    }

    /// ½(TP/P + TN/N).
    pub fn balanced_accuracy(&self) -> Result<T> {
        let (p, n) = self.check_both_classes()?;
        let (p, n) = (u128::from(p), u128::from(n));
        let num = u128::from(self.tp) * n + u128::from(self.tn) * p;
        Ok(ratio_as(num, 2 * p * n))
    }

    /// ½(TP/P + TN/N) as a reduced fraction.
    pub fn balanced_accuracy_exact(&self) -> Result<Ratio<u64>> {
        let (p, n) = self.check_both_classes()?;
        Ok((Ratio::new(self.tp, p) + Ratio::new(self.tn, n)) / 2)
    }
}

pub fn balanced_accuracy<T: Scalar>(outcome: &EvalOutcome<T>) -> Result<T> {
    outcome.balanced_accuracy()
}

/// Per-fold outcomes and their pooled sum.
#[derive(Clone, Debug, PartialEq)]
pub struct CvResult<T> {
    pub pooled: EvalOutcome<T>,
    pub folds: Vec<EvalOutcome<T>>,
}

impl<T: Scalar> CvResult<T> {
    /// Mean of the per-fold balanced accuracies.
    pub fn fold_mean_balanced_accuracy(&self) -> Result<T> {
        let vals = self
            .folds
            .iter()
            .map(|f| f.balanced_accuracy().map(|v| v.as_f64()))
            .collect::<Result<Vec<f64>>>()?;
        Ok(T::of(vals.iter().sum::<f64>() / vals.len() as f64))
    }
}

/// Train on every fold's complement and score the fold. Learner randomness
/// for fold `f` is seeded with `derive_seed(seed, [f])`.
pub fn cross_validate<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    config: &LearnerConfig,
    plan: &FoldPlan,
    seed: u64,
) -> Result<CvResult<T>> {
    if plan.len() != matrix.len() {
        return Err(Error::contract(format!(
            "fold plan covers {} rows but the matrix has {}",
            plan.len(),
            matrix.len()
        )));
    }
    cross_validate_with(plan, config, seed, |_, train, test| {
        Ok((matrix.subset(train), matrix.subset(test)))
    })
}

/// Like [`cross_validate`], but `split(fold, train_rows, test_rows)` builds
/// the two matrices, e.g. to select features from the training rows only.
pub fn cross_validate_with<T, F>(
    plan: &FoldPlan,
    config: &LearnerConfig,
    seed: u64,
    split: F,
) -> Result<CvResult<T>>
where
    T: Scalar,
    F: Fn(usize, &[usize], &[usize]) -> Result<(FeatureMatrix<T>, FeatureMatrix<T>)> + Sync,
{
    let run_fold = |f: usize| -> Result<EvalOutcome<T>> {
        let (train, test) = split(f, &plan.train_rows(f), &plan.test_rows(f))?;
        let model = learners::train(config, &train, derive_seed(seed, &[f as u64]))?;
        let mut out = EvalOutcome::default();
        for (x, &truth) in test.rows().zip(test.labels()) {
            let s = model.score(x)?;
            let pred = if s > model.threshold() {
                Label::Malware
            } else {
                Label::Benign
            };
            out.record(truth, pred, s);
        }
        Ok(out)
    };
    let folds = (0..plan.n_folds())
        .into_par_iter()
        .map(|f| {
            run_fold(f).map_err(|e| Error::Fold {
                fold: f,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pooled = EvalOutcome::default();
    for f in &folds {
        pooled.absorb(f);
    }
    Ok(CvResult { pooled, folds })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve<T> {
    /// (FPR, TPR) from (0,0) to (1,1), one point per distinct score.
    pub points: Vec<(T, T)>,
    pub auc: T,
    pub auc_exact: Ratio<u64>,
}

/// Sweep the threshold down through the distinct scores. The trapezoid area is
/// accumulated in integer units of 1/(2PN), so tied scores count one half.
pub fn roc_auc<T: Scalar>(scored: &[(Label, T)]) -> Result<RocCurve<T>> {
    if scored.iter().any(|(_, s)| s.is_nan()) {
        return Err(Error::contract("ROC scores must not be NaN"));
    }
    let p = scored.iter().filter(|(l, _)| *l == Label::Malware).count() as u64;
    let n = scored.len() as u64 - p;
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric(format!(
            "ROC needs both classes (P={p}, N={n})"
        )));
    }
    let mut sorted: Vec<(Label, T)> = scored.to_vec();
    sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("no NaN"));

    let point = |fp: u64, tp: u64| (ratio_as::<T>(fp.into(), n.into()), ratio_as::<T>(tp.into(), p.into()));
    let mut points = vec![point(0, 0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let (tp0, fp0) = (tp, fp);
        let s = sorted[i].1;
        while i < sorted.len() && sorted[i].1 == s {
            match sorted[i].0 {
                Label::Malware => tp += 1,
                Label::Benign => fp += 1,
            }
            i += 1;
        }
        twice_area += u128::from(fp - fp0) * u128::from(tp + tp0);
        points.push(point(fp, tp));
    }
    let den = 2 * u128::from(p) * u128::from(n);
    let auc_exact = Ratio::new(
        u64::try_from(twice_area).map_err(|_| Error::contract("AUC numerator overflows u64"))?,
        u64::try_from(den).map_err(|_| Error::contract("AUC denominator overflows u64"))?,
    );
    Ok(RocCurve {
        points,
        auc: ratio_as(twice_area, den),
        auc_exact,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DistributionStats<T> {
    pub min: T,
    pub q1: T,
    pub median: T,
    pub q3: T,
    pub max: T,
    pub mean: T,
    pub range: T,
}

/// Quantile of sorted data by linear interpolation between closest ranks:
/// position h = (len − 1)·q, value x[⌊h⌋] + (h − ⌊h⌋)(x[⌊h⌋+1] − x[⌊h⌋]).
pub fn quantile_sorted<T: Scalar>(sorted: &[T], q: f64) -> T {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= sorted.len() || frac == 0.0 {
        return sorted[lo];
    }
    sorted[lo] + T::of(frac) * (sorted[lo + 1] - sorted[lo])
}

pub fn distribution_stats<T: Scalar>(values: &[T]) -> Result<DistributionStats<T>> {
    if values.is_empty() {
        return Err(Error::UndefinedMetric("statistics of an empty list".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::contract("statistics input contains NaN"));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let (min, max) = (v[0], v[v.len() - 1]);
    let mean = T::of(v.iter().map(|x| x.as_f64()).sum::<f64>() / v.len() as f64);
    Ok(DistributionStats {
        min,
        q1: quantile_sorted(&v, 0.25),
        median: quantile_sorted(&v, 0.5),
        q3: quantile_sorted(&v, 0.75),
        max,
        mean,
        range: max - min,
    })
}

/// One line of a per-level results CSV.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct OutcomeRow {
    pub level: usize,
    pub combo_id: usize,
    pub learner: String,
    /// Fold index, or `pooled`.
    pub fold: String,
    #[serde(rename = "TP")]
    pub tp: u64,
    #[serde(rename = "TN")]
    pub tn: u64,
    #[serde(rename = "FP")]
    pub fp: u64,
    #[serde(rename = "FN")]
    pub fn_: u64,
    pub acc: f64,
    pub bal_acc: f64,
}

impl OutcomeRow {
    pub fn new<T: Scalar>(
        level: usize,
        combo_id: usize,
        learner: &str,
        fold: String,
        o: &EvalOutcome<T>,
    ) -> Result<OutcomeRow> {
        Ok(OutcomeRow {
            level,
            combo_id,
            learner: learner.to_string(),
            fold,
            tp: o.tp,
            tn: o.tn,
            fp: o.fp,
            fn_: o.fn_,
            acc: o.accuracy()?.as_f64(),
            bal_acc: o.balanced_accuracy()?.as_f64(),
        })
    }
}

pub fn write_outcome_rows<W: Write>(rows: &[OutcomeRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wr.write_record(["level", "combo_id", "learner", "fold", "TP", "TN", "FP", "FN", "acc", "bal_acc"])?;
    }
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// `# auc=<value>` line, then `fpr,tpr` rows.
pub fn write_roc_csv<T: Scalar, W: Write>(curve: &RocCurve<T>, mut w: W) -> Result<()> {
    writeln!(w, "# auc={}", curve.auc.as_f64())?;
    writeln!(w, "fpr,tpr")?;
    for (x, y) in &curve.points {
        writeln!(w, "{},{}", x.as_f64(), y.as_f64())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(benign: usize, malware: usize) -> Vec<Label> {
        let mut v = vec![Label::Benign; benign];
        v.extend(vec![Label::Malware; malware]);
        v
    }

    fn fold_sizes(plan: &FoldPlan, labels: &[Label], class: Label) -> Vec<usize> {
        (0..plan.n_folds())
            .map(|f| plan.test_rows(f).iter().filter(|&&r| labels[r] == class).count())
            .collect()
    }

    #[test]
    fn folds_split_evenly() {
        let l = labels(10, 10);
        let plan = stratified_folds(&l, 5, 3).unwrap();
        assert_eq!(fold_sizes(&plan, &l, Label::Benign), vec![2; 5]);
        assert_eq!(fold_sizes(&plan, &l, Label::Malware), vec![2; 5]);
    }

    #[test]
    fn remainder_goes_to_leading_folds() {
        let l = labels(11, 10);
        let plan = stratified_folds(&l, 5, 3).unwrap();
        assert_eq!(fold_sizes(&plan, &l, Label::Benign), vec![3, 2, 2, 2, 2]);
    }

    #[test]
    fn small_class_is_rejected() {
        assert!(matches!(stratified_folds(&labels(4, 10), 5, 0), Err(Error::Config(_))));
        assert!(matches!(stratified_folds(&labels(10, 10), 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn hand_computed_balanced_accuracy() {
        let o = EvalOutcome::<f64>::from_counts(900, 800, 200, 100);
        assert_eq!(o.balanced_accuracy().unwrap(), 0.85);
        assert_eq!(o.balanced_accuracy_exact().unwrap(), Ratio::new(17, 20));
        let skewed = EvalOutcome::<f64>::from_counts(0, 19000, 0, 1000);
        assert_eq!(skewed.balanced_accuracy().unwrap(), 0.5);
        assert_eq!(skewed.accuracy().unwrap(), 0.95);
        let perfect = EvalOutcome::<f64>::from_counts(5, 7, 0, 0);
        assert_eq!(perfect.balanced_accuracy().unwrap(), 1.0);
    }

    #[test]
    fn missing_class_is_undefined() {
        let o = EvalOutcome::<f64>::from_counts(3, 0, 0, 2);
        assert!(matches!(o.balanced_accuracy(), Err(Error::UndefinedMetric(_))));
        assert!(matches!(o.balanced_accuracy_exact(), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn auc_edge_cases() {
        let ordered = [(Label::Malware, 0.9), (Label::Malware, 0.8), (Label::Benign, 0.1)];
        assert_eq!(roc_auc(&ordered).unwrap().auc, 1.0);
        let flat = [(Label::Malware, 0.5), (Label::Benign, 0.5), (Label::Benign, 0.5)];
        let c = roc_auc(&flat).unwrap();
        assert_eq!(c.auc, 0.5);
        assert_eq!(c.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert!(matches!(roc_auc(&[(Label::Benign, 0.3)]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn quartiles() {
        let s = distribution_stats(&[5.0, 1.0, 4.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (2.0, 3.0, 4.0));
        assert_eq!((s.min, s.max, s.range, s.mean), (1.0, 5.0, 4.0, 3.0));
        let one = distribution_stats(&[0.7]).unwrap();
        assert_eq!((one.min, one.q1, one.median, one.q3, one.max), (0.7, 0.7, 0.7, 0.7, 0.7));
        assert!(distribution_stats::<f64>(&[]).is_err());
        let even = distribution_stats(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((even.q1, even.median, even.q3), (1.75, 2.5, 3.25));
    }

    #[test]
    fn constant_predictor_scores_half() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let l = labels(10, 10);
        let m = FeatureMatrix::from_rows(rows, l.clone()).unwrap();
        let plan = stratified_folds(&l, 5, 1).unwrap();
        // every training fold is balanced 8/8, so kNN with k = all rows ties and votes benign
        let cfg = LearnerConfig::Knn {
            k: 16,
            metric: crate::learners::Metric::Euclidean,
        };
        let cv = cross_validate(&m, &cfg, &plan, 0).unwrap();
        assert_eq!(cv.pooled.balanced_accuracy().unwrap(), 0.5);
        assert_eq!(cv.pooled.positives(), 10);
        assert_eq!(cv.folds.len(), 5);
    }

    #[test]
    fn fold_errors_name_the_fold() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let l = labels(10, 10);
        let m = FeatureMatrix::from_rows(rows, l.clone()).unwrap();
        let plan = stratified_folds(&l, 5, 1).unwrap();
        let cfg = LearnerConfig::Knn {
            k: 17,
            metric: crate::learners::Metric::Euclidean,
        };
        let err = cross_validate(&m, &cfg, &plan, 0).unwrap_err();
        assert!(matches!(err, Error::Fold { fold: 0, .. }), "{err}");
    }

    #[test]
    fn roc_csv_layout() {
        let c = roc_auc(&[(Label::Malware, 1.0), (Label::Benign, 0.0)]).unwrap();
        let mut buf = Vec::new();
        write_roc_csv(&c, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "# auc=1\nfpr,tpr\n0,0\n0,1\n1,1\n");
    }
}
