//! Evaluation metrics and a consistency check over the bundled published
//! results tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{GaisError, Result};

/// Published per-dataset results bundled with the crate. Columns: dataset,
/// original training size, reduced-data AC/PR/RE/F1, original-data
/// AC/PR/RE/F1, reduction rate, effectiveness.
pub const TABLE_II_CSV: &str = include_str!("../data/tableII.csv");

/// Published per-dataset effectiveness column for the same thirteen datasets.
pub const TABLE_III_CSV: &str = include_str!("../data/tableIII.csv");

/// Rows whose recomputed effectiveness differs from the reported value by
/// more than this are flagged as inconsistent. The threshold sits between
/// the largest rounding residue of a consistent row (1.4e-4, Coil-2000) and
/// the smallest genuine mismatch (4.0e-4, Ring-norm).
pub const CROSSCHECK_FLAG_TOLERANCE: f64 = 2e-4;

/// How per-class precision, recall, and F1 are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Class 1 is the positive class.
    Binary,
    /// Unweighted mean of one-vs-rest scores over all observed classes.
    Macro,
}

impl Averaging {
    /// Two-class data keeps the positive-class convention; anything wider
    /// averages.
    pub fn for_class_count(class_count: usize) -> Self {
        if class_count <= 2 {
            Averaging::Binary
        } else {
            Averaging::Macro
        }
    }
}

/// Accuracy, precision, recall, and F1 for one prediction vector.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClassificationScores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub averaging: Averaging,
}

/// Full evaluation record for one selection-plus-classification run.
/// Effectiveness always equals accuracy times reduction rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub reduction_rate: f64,
    pub effectiveness: f64,
    pub t_is_seconds: f64,
    pub averaging: Averaging,
    /// Maximum accuracy loss versus the full-data model before the run
    /// counts as failed. Only meaningful when a full-data reference exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[serde(default)]
    pub tolerance: Option<f64>,
}

impl MetricsReport {
    pub fn new(
        scores: &ClassificationScores,
        n_selected: usize,
        n_original: usize,
        t_is_seconds: f64,
    ) -> Self {
        let r = reduction_rate(n_selected, n_original);
        MetricsReport {
            accuracy: scores.accuracy,
            precision: scores.precision,
            recall: scores.recall,
            f1: scores.f1,
            reduction_rate: r,
            effectiveness: effectiveness(scores.accuracy, r),
            t_is_seconds,
            averaging: scores.averaging,
            tolerance: None,
        }
    }

    pub fn with_tolerance(mut self, phi: f64) -> Self {
        self.tolerance = Some(phi);
        self
    }

    /// Whether reduced-data accuracy stayed within the configured tolerance
    /// of the full-data accuracy. None when no tolerance was configured.
    pub fn meets_tolerance(&self, full_data_accuracy: f64) -> Option<bool> {
        self.tolerance
            .map(|phi| full_data_accuracy - self.accuracy <= phi)
    }
}

fn ratio_or_zero(numerator: f64, denominator: f64) -> f64 {
    if denominator == 0.0 {
        0.0
    } else {
        numerator / denominator
    }
}

fn harmonic_f1(precision: f64, recall: f64) -> f64 {
    ratio_or_zero(2.0 * precision * recall, precision + recall)
}

fn one_vs_rest(y_true: &[usize], y_pred: &[usize], positive: usize) -> (f64, f64, f64) {
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t == positive, p == positive) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = ratio_or_zero(tp as f64, (tp + fp) as f64);
    let recall = ratio_or_zero(tp as f64, (tp + fn_) as f64);
    (precision, recall, harmonic_f1(precision, recall))
}

/// Accuracy plus averaged precision/recall/F1. Zero-denominator scores are
/// zero rather than undefined.
pub fn classification_metrics(
    y_true: &[usize],
    y_pred: &[usize],
    averaging: Averaging,
) -> Result<ClassificationScores> {
    if y_true.len() != y_pred.len() {
        return Err(GaisError::ShapeError(format!(
            "prediction length {} does not match truth length {}",
            y_pred.len(),
            y_true.len()
        )));
    }
    if y_true.is_empty() {
        return Err(GaisError::ShapeError(
            "metrics need at least one instance".into(),
        ));
    }
    let matches = y_true.iter().zip(y_pred).filter(|(t, p)| t == p).count();
    let accuracy = matches as f64 / y_true.len() as f64;
    let (precision, recall, f1) = match averaging {
        Averaging::Binary => one_vs_rest(y_true, y_pred, 1),
        Averaging::Macro => {
            let mut classes: Vec<usize> = y_true.iter().chain(y_pred).copied().collect();
            classes.sort_unstable();
            classes.dedup();
            let mut sums = (0.0, 0.0, 0.0);
            for &class in &classes {
                let (p, r, f) = one_vs_rest(y_true, y_pred, class);
                sums.0 += p;
                sums.1 += r;
                sums.2 += f;
            }
            let k = classes.len() as f64;
            (sums.0 / k, sums.1 / k, sums.2 / k)
        }
    };
    Ok(ClassificationScores {
        accuracy,
        precision,
        recall,
        f1,
        averaging,
    })
}

/// Fraction of instances removed by selection.
pub fn reduction_rate(n_selected: usize, n_original: usize) -> f64 {
    debug_assert!(n_original >= 1 && n_selected <= n_original);
    1.0 - n_selected as f64 / n_original as f64
}

pub fn effectiveness(accuracy: f64, reduction: f64) -> f64 {
    accuracy * reduction
}

/// One row of the bundled published results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PublishedRow {
    pub dataset: String,
    pub tr_a: u64,
    pub ac_red: f64,
    pub pr_red: f64,
    pub re_red: f64,
    pub f1_red: f64,
    pub ac_orig: f64,
    pub pr_orig: f64,
    pub re_orig: f64,
    pub f1_orig: f64,
    pub r: f64,
    pub e: f64,
}

/// Per-row outcome of recomputing effectiveness from the published accuracy
/// and reduction rate.
#[derive(Debug, Clone, Serialize)]
pub struct CrosscheckRow {
    pub dataset: String,
    pub reported: f64,
    pub recomputed: f64,
    pub deviation: f64,
    pub flagged: bool,
    /// Effectiveness for the same dataset from the second published table,
    /// when that table lists it.
    pub reference: Option<f64>,
    pub reference_deviation: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrosscheckReport {
    pub rows: Vec<CrosscheckRow>,
}

impl CrosscheckReport {
    pub fn flagged_datasets(&self) -> Vec<&str> {
        self.rows
            .iter()
            .filter(|row| row.flagged)
            .map(|row| row.dataset.as_str())
            .collect()
    }
}

fn parse_published_rows(csv_text: &str) -> Result<Vec<PublishedRow>> {
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        rows.push(record?);
    }
    Ok(rows)
}

fn parse_reference_column(csv_text: &str) -> Result<BTreeMap<String, f64>> {
    #[derive(Deserialize)]
    struct ReferenceRow {
        dataset: String,
        gais: f64,
    }
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let mut column = BTreeMap::new();
    for record in reader.deserialize() {
        let row: ReferenceRow = record?;
        column.insert(row.dataset, row.gais);
    }
    Ok(column)
}

/// Recompute effectiveness for every row of a results table and flag rows
/// whose reported value disagrees beyond rounding.
pub fn crosscheck_tables(results_csv: &str, reference_csv: &str) -> Result<CrosscheckReport> {
    let reference = parse_reference_column(reference_csv)?;
    let mut rows = Vec::new();
    for published in parse_published_rows(results_csv)? {
        let recomputed = effectiveness(published.ac_red, published.r);
        let deviation = (recomputed - published.e).abs();
        let reference_value = reference.get(&published.dataset).copied();
        rows.push(CrosscheckRow {
            reported: published.e,
            recomputed,
            deviation,
            flagged: deviation > CROSSCHECK_FLAG_TOLERANCE,
            reference: reference_value,
            reference_deviation: reference_value.map(|v| (recomputed - v).abs()),
            dataset: published.dataset,
        });
    }
    Ok(CrosscheckReport { rows })
}

/// Cross-check over the tables bundled with the crate.
pub fn crosscheck_published_tables() -> Result<CrosscheckReport> {
    crosscheck_tables(TABLE_II_CSV, TABLE_III_CSV)
}
