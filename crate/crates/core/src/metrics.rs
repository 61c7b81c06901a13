//! AUROC, balanced accuracy, MSE, macro aggregation and normal-approximation
//! confidence intervals.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mann–Whitney AUROC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auroc", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("auroc scores".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("auroc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // doubled numerator keeps everything integral: 2·concordant + ties
    let mut numerator: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        numerator += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        i = j;
    }
    Ok(numerator as f64 / (2 * n_pos * n_neg) as f64)
}

/// Mean of sensitivity and specificity.
pub fn balanced_accuracy(predictions: &[bool], labels: &[bool]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::shape("balanced_accuracy", labels.len(), predictions.len()));
    }
    let (mut tp, mut tn, mut p, mut n) = (0usize, 0usize, 0usize, 0usize);
    for (&pred, &label) in predictions.iter().zip(labels) {
        if label {
            p += 1;
            tp += pred as usize;
        } else {
            n += 1;
            tn += (!pred) as usize;
        }
    }
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric("balanced accuracy needs both classes".into()));
    }
    Ok((tp as f64 / p as f64 + tn as f64 / n as f64) / 2.0)
}

pub fn mse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::contract(format!(
            "mse over {} predictions and {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::contract("mse of empty vectors"));
    }
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / predictions.len() as f64)
}

/// One-vs-rest AUROC averaged over classes that have both positives and negatives.
pub fn macro_auroc(probabilities: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<f64> {
    let mut per_class = Vec::with_capacity(classes);
    for c in 0..classes {
        let scores: Vec<f64> = probabilities.iter().map(|p| p[c]).collect();
        let is_c: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        match auroc(&scores, &is_c) {
            Ok(v) => per_class.push(v),
            Err(Error::UndefinedMetric(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if per_class.is_empty() {
        return Err(Error::UndefinedMetric("no class has both positives and negatives".into()));
    }
    macro_over_tasks(&per_class)
}

/// Mean per-class recall of argmax predictions over the classes present.
pub fn macro_balanced_accuracy(predicted: &[usize], labels: &[usize], classes: usize) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::shape("macro_balanced_accuracy", labels.len(), predicted.len()));
    }
    let mut hits = vec![0usize; classes];
    let mut totals = vec![0usize; classes];
    for (&p, &l) in predicted.iter().zip(labels) {
        totals[l] += 1;
        hits[l] += (p == l) as usize;
    }
    let recalls: Vec<f64> = hits
        .iter()
        .zip(&totals)
        .filter(|(_, &t)| t > 0)
        .map(|(&h, &t)| h as f64 / t as f64)
        .collect();
    if recalls.len() < 2 {
        return Err(Error::UndefinedMetric("balanced accuracy needs two classes present".into()));
    }
    macro_over_tasks(&recalls)
}

pub fn macro_over_tasks(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::contract("macro average of no values"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn half_width(&self) -> f64 {
        (self.high - self.low) / 2.0
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.low <= other.high && other.low <= self.high
    }
}

/// `mean ± 1.96·sd/√n` with the sample standard deviation.
pub fn ci95(values: &[f64]) -> Result<Interval> {
    if values.len() < 2 {
        return Err(Error::contract(format!(
            "ci95 needs at least two values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.iter().all(|&v| v == values[0]) {
        return Ok(Interval {
            mean: values[0],
            low: values[0],
            high: values[0],
        });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let half = 1.96 * var.sqrt() / n.sqrt();
    Ok(Interval {
        mean,
        low: mean - half,
        high: mean + half,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub estimate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<[f64; 2]>,
    /// Per-fold/seed values the estimate was pooled from.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
}

impl MetricValue {
    pub fn point(estimate: f64) -> Self {
        Self {
            estimate,
            ci: None,
            values: Vec::new(),
        }
    }

    pub fn interval(&self) -> Option<Interval> {
        self.ci.map(|[low, high]| Interval {
            mean: self.estimate,
            low,
            high,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    /// Metric name (`auroc`, `bac`, `mse`) to value; undefined metrics are absent.
    pub metrics: BTreeMap<String, MetricValue>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tasks: Vec<TaskMetrics>,
    /// Labels of the folds/seeds behind pooled values.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<String>,
}

impl MetricsReport {
    pub fn get(&self, task: &str, metric: &str) -> Option<&MetricValue> {
        self.tasks
            .iter()
            .find(|t| t.task == task)
            .and_then(|t| t.metrics.get(metric))
    }

    pub fn estimate(&self, task: &str, metric: &str) -> Option<f64> {
        self.get(task, metric).map(|m| m.estimate)
    }

    /// Pools per-fold/seed reports: the estimate is the mean and the interval
    /// is `ci95` over the reports in which the metric was defined.
    pub fn pool(reports: &[MetricsReport], provenance: Vec<String>) -> Result<MetricsReport> {
        let Some(first) = reports.first() else {
            return Err(Error::contract("cannot pool zero reports"));
        };
        let mut tasks = Vec::with_capacity(first.tasks.len());
        for t in &first.tasks {
            let mut names: Vec<&String> = reports
                .iter()
                .filter_map(|r| r.tasks.iter().find(|x| x.task == t.task))
                .flat_map(|x| x.metrics.keys())
                .collect();
            names.sort();
            names.dedup();
            let mut metrics = BTreeMap::new();
            for name in names {
                let values: Vec<f64> = reports
                    .iter()
                    .filter_map(|r| r.estimate(&t.task, name))
                    .collect();
                let value = if values.len() >= 2 {
                    let ci = ci95(&values)?;
                    MetricValue {
                        estimate: ci.mean,
                        ci: Some([ci.low, ci.high]),
                        values,
                    }
                } else {
                    MetricValue {
                        estimate: values[0],
                        ci: None,
                        values,
                    }
                };
                metrics.insert(name.clone(), value);
            }
            tasks.push(TaskMetrics {
                task: t.task.clone(),
                metrics,
            });
        }
        Ok(MetricsReport { tasks, provenance })
    }

    /// Task columns, metric rows, cells `estimate ± half-width`.
    pub fn to_table_csv(&self) -> String {
        let mut metric_names: Vec<&String> =
            self.tasks.iter().flat_map(|t| t.metrics.keys()).collect();
        metric_names.sort();
        metric_names.dedup();
        let mut out = String::from("metric");
        for t in &self.tasks {
            let _ = write!(out, ",{}", t.task);
        }
        out.push('\n');
        for name in metric_names {
            out.push_str(name);
            for t in &self.tasks {
                out.push(',');
                if let Some(v) = t.metrics.get(name) {
                    match v.interval() {
                        Some(ci) => {
                            let _ = write!(out, "{:.4} ± {:.4}", v.estimate, ci.half_width());
                        }
                        None => {
                            let _ = write!(out, "{:.4}", v.estimate);
                        }
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    /// O(n²) pair-counting reference.
    pub(crate) fn auroc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
        let mut credit = 0.0;
        let mut pairs = 0u64;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1;
                if scores[i] > scores[j] {
                    credit += 1.0;
                } else if scores[i] == scores[j] {
                    credit += 0.5;
                }
            }
        }
        credit / pairs as f64
    }

    #[test]
    fn auroc_examples() {
        let l = [true, true, false, false];
        assert_eq!(auroc(&[0.9, 0.8, 0.3, 0.2], &l).unwrap(), 1.0);
        assert_eq!(auroc(&[0.4; 4], &l).unwrap(), 0.5);
        assert_eq!(
            auroc(&[0.9, 0.2, 0.8, 0.3], &[true, false, false, true]).unwrap(),
            0.75
        );
        assert!(matches!(
            auroc(&[0.1, 0.2], &[true, true]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn bac_examples() {
        let l = [true, true, false, false];
        assert_eq!(balanced_accuracy(&l, &l).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&[true; 4], &l).unwrap(), 0.5);
        let labels = [true, true, false, false, false, false];
        let preds = [true, false, false, false, false, true];
        assert_eq!(balanced_accuracy(&preds, &labels).unwrap(), 0.625);
        assert!(balanced_accuracy(&[true], &[false]).is_err());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.5], &[0.0]).unwrap(), 0.25);
        assert!((mse(&[1.0, 2.0, 3.0], &[2.0, 2.0, 5.0]).unwrap() - 5.0 / 3.0).abs() < 1e-15);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn ci95_examples() {
        assert_eq!(
            ci95(&[0.3, 0.3, 0.3]).unwrap(),
            Interval { mean: 0.3, low: 0.3, high: 0.3 }
        );
        let ci = ci95(&[0.0, 1.0]).unwrap();
        assert_eq!(ci.mean, 0.5);
        assert!((ci.half_width() - 0.98).abs() < 1e-9);
        assert!(((ci.high - ci.mean) - (ci.mean - ci.low)).abs() < 1e-15);
        assert!(ci95(&[1.0]).is_err());
    }

    #[test]
    fn macro_examples() {
        assert_eq!(macro_over_tasks(&[0.42]).unwrap(), 0.42);
        assert!((macro_over_tasks(&[0.8, 0.6]).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(
            macro_over_tasks(&[0.1, 0.5, 0.9]).unwrap(),
            macro_over_tasks(&[0.9, 0.1, 0.5]).unwrap()
        );
    }

    #[test]
    fn multiclass_macro_metrics() {
        let probs = vec![
            vec![0.8, 0.1, 0.1],
            vec![0.1, 0.8, 0.1],
            vec![0.1, 0.1, 0.8],
            vec![0.6, 0.3, 0.1],
        ];
        let labels = [0, 1, 2, 0];
        assert_eq!(macro_auroc(&probs, &labels, 3).unwrap(), 1.0);
        assert_eq!(macro_balanced_accuracy(&[0, 1, 2, 1], &labels, 3).unwrap(), (0.5 + 1.0 + 1.0) / 3.0);
    }

    #[test]
    fn pooled_report_and_table() {
        let one = |v: f64| MetricsReport {
            tasks: vec![TaskMetrics {
                task: "y".into(),
                metrics: BTreeMap::from([("auroc".to_owned(), MetricValue::point(v))]),
            }],
            provenance: vec![],
        };
        let pooled = MetricsReport::pool(&[one(0.0), one(1.0)], vec!["a".into(), "b".into()]).unwrap();
        let v = pooled.get("y", "auroc").unwrap();
        assert_eq!(v.estimate, 0.5);
        assert!(v.ci.unwrap()[0] <= 0.5 && v.ci.unwrap()[1] >= 0.5);
        let table = pooled.to_table_csv();
        assert!(table.starts_with("metric,y\nauroc,0.5000 ± 0.9800"), "{table}");
    }

    proptest! {
        #[test]
        fn auroc_matches_pair_oracle(
            data in prop::collection::vec((0u8..20, any::<bool>()), 2..200)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 7.0).collect();
            let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc_pairs(&scores, &labels));
        }

        #[test]
        fn auroc_invariant_under_monotone_transform(
            data in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..100)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s).collect();
            let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let transformed: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() + 3.0).collect();
            prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&transformed, &labels).unwrap());
        }

        #[test]
        fn bac_invariant_under_permutation(
            data in prop::collection::vec((any::<bool>(), any::<bool>()), 2..60),
            seed in any::<u64>()
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let preds: Vec<bool> = data.iter().map(|d| d.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let mut idx: Vec<usize> = (0..data.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let p2: Vec<bool> = idx.iter().map(|&i| preds[i]).collect();
            let l2: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            prop_assert_eq!(balanced_accuracy(&preds, &labels).unwrap(), balanced_accuracy(&p2, &l2).unwrap());
        }

        #[test]
        fn mse_is_symmetric_and_zero_on_diagonal(
            a in prop::collection::vec(-10.0f64..10.0, 1..30)
        ) {
            let b: Vec<f64> = a.iter().map(|x| x * 0.5 - 1.0).collect();
            prop_assert_eq!(mse(&a, &a).unwrap(), 0.0);
            prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        }
    }
}
