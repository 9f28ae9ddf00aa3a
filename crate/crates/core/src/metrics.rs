//! Confusion matrices, macro-averaged metrics and mean±std aggregation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Conventions printed at the top of every text report.
pub const REPORT_CONVENTIONS: &str = "accuracy = trace/total (micro); precision, recall and F1 are unweighted macro \
averages over classes; an undefined per-class ratio counts as 0 and is flagged; std is the sample standard \
deviation (n-1), reported as 0 and flagged when n = 1; evaluation is per patch";

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_keys: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn size(&self) -> usize {
        self.class_keys.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Relabels class `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let c = self.size();
        let mut counts = vec![vec![0; c]; c];
        let mut keys = vec![String::new(); c];
        for i in 0..c {
            keys[perm[i]] = self.class_keys[i].clone();
            for j in 0..c {
                counts[perm[i]][perm[j]] = self.counts[i][j];
            }
        }
        Self { class_keys: keys, counts }
    }
}

pub fn confusion(preds: &[usize], labels: &[usize], class_keys: &[String]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Data(format!("{} predictions but {} labels", preds.len(), labels.len())));
    }
    let c = class_keys.len();
    let mut counts = vec![vec![0u64; c]; c];
    for (i, (&p, &t)) in preds.iter().zip(labels).enumerate() {
        if p >= c || t >= c {
            return Err(Error::Data(format!("sample {i}: index out of range for {c} classes (true {t}, predicted {p})")));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { class_keys: class_keys.to_vec(), counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Classes whose precision or recall had a zero denominator.
    #[serde(default)]
    pub undefined: Vec<String>,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<RunMetrics> {
    let total = cm.total();
    if total == 0 || cm.size() == 0 {
        return Err(Error::Data("metrics of an empty confusion matrix".into()));
    }
    let c = cm.size();
    let trace: u64 = (0..c).map(|i| cm.counts[i][i]).sum();
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    let mut undefined = Vec::new();
    for k in 0..c {
        let tp = cm.counts[k][k] as f64;
        let predicted: u64 = (0..c).map(|i| cm.counts[i][k]).sum();
        let actual: u64 = cm.counts[k].iter().sum();
        if predicted == 0 || actual == 0 {
            undefined.push(cm.class_keys[k].clone());
        }
        let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let r = if actual == 0 { 0.0 } else { tp / actual as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        p_sum += p;
        r_sum += r;
        f_sum += f;
    }
    let n = c as f64;
    Ok(RunMetrics {
        accuracy: trace as f64 / total as f64,
        precision: p_sum / n,
        recall: r_sum / n,
        f1: f_sum / n,
        undefined,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3}±{:.3}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub strategy: String,
    pub subset: String,
    pub dataset: String,
    pub n_runs: usize,
    pub runs: Vec<RunMetrics>,
    pub accuracy: Summary,
    pub precision: Summary,
    pub recall: Summary,
    pub f1: Summary,
    /// Set when `n_runs == 1` and the std column is 0 by convention.
    pub single_run: bool,
}

pub fn aggregate(strategy: &str, subset: &str, dataset: &str, runs: Vec<RunMetrics>) -> Result<MetricsReport> {
    if runs.is_empty() {
        return Err(Error::Data(format!("no runs to aggregate for {strategy}/{subset}")));
    }
    let col = |f: fn(&RunMetrics) -> f64| Summary::of(&runs.iter().map(f).collect::<Vec<_>>());
    Ok(MetricsReport {
        strategy: strategy.into(),
        subset: subset.into(),
        dataset: dataset.into(),
        n_runs: runs.len(),
        accuracy: col(|r| r.accuracy),
        precision: col(|r| r.precision),
        recall: col(|r| r.recall),
        f1: col(|r| r.f1),
        single_run: runs.len() == 1,
        runs,
    })
}

/// One row of the strategy × subset table; failed cells keep their error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub strategy: String,
    pub subset: String,
    pub dataset: String,
    pub report: Option<MetricsReport>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<TableRow>,
}

impl ResultsTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["strategy", "dataset", "subset", "n_runs", "accuracy", "precision", "recall", "f1", "flags"])?;
        for row in &self.rows {
            let cells: Vec<String> = match &row.report {
                Some(r) => {
                    let mut flags = Vec::new();
                    if r.single_run {
                        flags.push("single_run_std_zero".to_string());
                    }
                    if !row.failures.is_empty() {
                        flags.push(format!("failed_runs={}", row.failures.len()));
                    }
                    vec![
                        r.n_runs.to_string(),
                        r.accuracy.to_string(),
                        r.precision.to_string(),
                        r.recall.to_string(),
                        r.f1.to_string(),
                        flags.join(";"),
                    ]
                }
                None => {
                    let mut v = vec!["0".to_string()];
                    v.extend(std::iter::repeat_n("-".to_string(), 4));
                    v.push(format!("failed: {}", row.failures.join(" | ")));
                    v
                }
            };
            let mut rec = vec![row.strategy.clone(), row.dataset.clone(), row.subset.clone()];
            rec.extend(cells);
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_text(&self) -> String {
        let header = ["Strategy", "Dataset", "Subset", "Accuracy", "Precision", "Recall", "F1-Score"];
        let mut lines: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for row in &self.rows {
            let mut line = vec![row.strategy.clone(), row.dataset.clone(), row.subset.clone()];
            match &row.report {
                Some(r) => line.extend([r.accuracy, r.precision, r.recall, r.f1].iter().map(|s| s.to_string())),
                None => line.extend(std::iter::repeat_n("failed".to_string(), 4)),
            }
            lines.push(line);
        }
        let widths: Vec<usize> =
            (0..header.len()).map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = format!("# {REPORT_CONVENTIONS}\n");
        for l in &lines {
            let cells: Vec<String> = l.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("k{i}")).collect()
    }

    #[test]
    fn perfect_is_diagonal_and_all_ones() {
        let labels: Vec<usize> = (0..60).map(|i| i % 6).collect();
        let cm = confusion(&labels, &labels, &keys(6)).unwrap();
        assert!(cm.counts.iter().enumerate().all(|(i, r)| r[i] == 10 && r.iter().sum::<u64>() == 10));
        let m = metrics(&cm).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn two_class_fixture() {
        let cm = ConfusionMatrix { class_keys: keys(2), counts: vec![vec![8, 2], vec![3, 7]] };
        let m = metrics(&cm).unwrap();
        assert!((m.accuracy - 0.75).abs() < 1e-15);
        assert!((m.precision - (8.0 / 11.0 + 7.0 / 9.0) / 2.0).abs() < 1e-15);
        assert!((m.precision - 0.7525).abs() < 1e-4);
        assert!((m.recall - 0.75).abs() < 1e-15);
    }

    #[test]
    fn never_predicted_class_is_zero_and_flagged() {
        let cm = ConfusionMatrix { class_keys: keys(2), counts: vec![vec![5, 0], vec![5, 0]] };
        let m = metrics(&cm).unwrap();
        assert_eq!(m.undefined, vec!["k1".to_string()]);
        assert!(m.precision.is_finite());
        assert!((m.precision - 0.25).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_and_empty_error() {
        assert!(confusion(&[0], &[0, 1], &keys(2)).is_err());
        let cm = confusion(&[], &[], &keys(2)).unwrap();
        assert!(metrics(&cm).is_err());
    }

    #[test]
    fn aggregate_formats() {
        let run = |a| RunMetrics { accuracy: a, precision: a, recall: a, f1: a, undefined: vec![] };
        let r = aggregate("s", "surface", "B", vec![run(0.8), run(0.8), run(0.8)]).unwrap();
        assert_eq!(r.accuracy.to_string(), "0.800±0.000");
        let r = aggregate("s", "surface", "B", vec![run(0.7), run(0.9)]).unwrap();
        assert_eq!(r.accuracy.to_string(), "0.800±0.141");
        let r = aggregate("s", "surface", "B", vec![run(0.832)]).unwrap();
        assert!(r.single_run);
        assert_eq!(r.accuracy.std, 0.0);
    }

    #[test]
    fn summary_matches_table_style() {
        let s = Summary { mean: 0.8321, std: 0.01249 };
        assert_eq!(s.to_string(), "0.832±0.012");
    }
}
