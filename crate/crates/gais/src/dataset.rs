//! Tabular data loading, preprocessing, splitting, chunking, and the two
//! bundled synthetic benchmark generators.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GaisError, Result};

/// Per-column type: drives encoding vs scaling during preprocessing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// A parsed CSV table before any encoding or scaling.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub columns: Vec<String>,
    pub column_kinds: Vec<ColumnKind>,
    pub target_column: String,
    /// Row-major cell values; empty string means missing.
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn target_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| *c == self.target_column)
            .expect("target column checked at construction")
    }

    /// Indices of the feature columns in original order.
    pub fn feature_indices(&self) -> Vec<usize> {
        let t = self.target_index();
        (0..self.columns.len()).filter(|&i| i != t).collect()
    }
}

/// Loads a CSV file with a header row. Columns are inferred numeric when
/// every non-empty value parses as a real number, categorical otherwise;
/// `kind_overrides` pins specific columns. Rows with a missing target value
/// are dropped.
pub fn load_csv(
    path: &Path,
    target: &str,
    kind_overrides: &[(String, ColumnKind)],
) -> Result<RawTable> {
    let file = std::fs::File::open(path).map_err(|source| GaisError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);

    let columns: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if !columns.iter().any(|c| c == target) {
        return Err(GaisError::MissingTarget(target.to_string()));
    }
    let target_idx = columns.iter().position(|c| c == target).unwrap();

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != columns.len() {
            return Err(GaisError::RaggedRow {
                row: i + 2, // 1-based, counting the header line
                got: record.len(),
                expected: columns.len(),
            });
        }
        let row: Vec<String> = record.iter().map(|v| v.trim().to_string()).collect();
        if row[target_idx].is_empty() {
            continue; // missing target: row rejected
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(GaisError::EmptyTable);
    }

    let mut column_kinds = vec![ColumnKind::Numeric; columns.len()];
    for (c, kind) in column_kinds.iter_mut().enumerate() {
        if let Some((_, k)) = kind_overrides.iter().find(|(name, _)| *name == columns[c]) {
            *kind = *k;
        } else {
            let all_numeric = rows
                .iter()
                .map(|r| r[c].as_str())
                .filter(|v| !v.is_empty())
                .all(|v| v.parse::<f64>().is_ok());
            *kind = if all_numeric {
                ColumnKind::Numeric
            } else {
                ColumnKind::Categorical
            };
        }
    }

    let distinct_targets: std::collections::BTreeSet<&str> =
        rows.iter().map(|r| r[target_idx].as_str()).collect();
    if distinct_targets.len() < 2 {
        return Err(GaisError::DegenerateTarget);
    }

    Ok(RawTable {
        columns,
        column_kinds,
        target_column: target.to_string(),
        rows,
    })
}

/// Fitted state for one feature column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ColumnTransform {
    /// Minimum/maximum fitted on the training portion; missing values filled
    /// with the fitted median before scaling.
    Numeric { min: f64, max: f64, median: f64 },
    /// Lexicographic value→code map fitted on the training portion; missing
    /// values filled with the fitted mode. Codes are rescaled to [0,1].
    Categorical { codes: BTreeMap<String, usize>, mode: String },
}

/// A fully preprocessed dataset: unit-interval features, integer labels,
/// and the fitted transforms needed to map held-out rows the same way.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub feature_names: Vec<String>,
    pub transforms: Vec<ColumnTransform>,
    /// Distinct target values in lexicographic order; the code is the index.
    pub target_values: Vec<String>,
}

impl Dataset {
    pub fn n_instances(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// Applies the fitted transforms to another table with the same schema.
    /// Returns (features, labels). Unseen categorical feature values and
    /// unseen target values are errors.
    pub fn transform_table(&self, raw: &RawTable) -> Result<(Array2<f64>, Vec<usize>)> {
        let feature_idx = raw.feature_indices();
        if feature_idx.len() != self.feature_names.len() {
            return Err(GaisError::ShapeError(format!(
                "table has {} feature columns, expected {}",
                feature_idx.len(),
                self.feature_names.len()
            )));
        }
        for (k, &c) in feature_idx.iter().enumerate() {
            if raw.columns[c] != self.feature_names[k] {
                return Err(GaisError::ShapeError(format!(
                    "feature column {k} is {:?}, expected {:?}",
                    raw.columns[c], self.feature_names[k]
                )));
            }
        }

        let n = raw.n_rows();
        let p = feature_idx.len();
        let mut features = Array2::zeros((n, p));
        for (k, &c) in feature_idx.iter().enumerate() {
            for (i, row) in raw.rows.iter().enumerate() {
                features[[i, k]] =
                    transform_cell(&self.transforms[k], &row[c], &self.feature_names[k])?;
            }
        }

        let target_idx = raw.target_index();
        let mut labels = Vec::with_capacity(n);
        for row in &raw.rows {
            let value = row[target_idx].as_str();
            match self.target_values.iter().position(|v| v == value) {
                Some(code) => labels.push(code),
                None => {
                    return Err(GaisError::UnseenCategory {
                        column: raw.target_column.clone(),
                        value: value.to_string(),
                    })
                }
            }
        }
        Ok((features, labels))
    }
}

fn transform_cell(transform: &ColumnTransform, cell: &str, column: &str) -> Result<f64> {
    match transform {
        ColumnTransform::Numeric { min, max, median } => {
            let v = if cell.is_empty() {
                *median
            } else {
                cell.parse::<f64>().unwrap_or(*median)
            };
            if max > min {
                Ok(((v - min) / (max - min)).clamp(0.0, 1.0))
            } else {
                Ok(0.0) // constant column
            }
        }
        ColumnTransform::Categorical { codes, mode } => {
            let v = if cell.is_empty() { mode.as_str() } else { cell };
            let code = codes.get(v).ok_or_else(|| GaisError::UnseenCategory {
                column: column.to_string(),
                value: v.to_string(),
            })?;
            let k = codes.len();
            if k > 1 {
                Ok(*code as f64 / (k - 1) as f64)
            } else {
                Ok(0.0)
            }
        }
    }
}

/// Fits encoders and scalers on the `fit_on` rows only and transforms the
/// whole table. Categorical codes follow lexicographic order of the distinct
/// values seen during fitting; numeric columns are min-max scaled with
/// out-of-range held-out values clamped to [0,1]. Missing features are
/// imputed with the fitted median (numeric) or mode (categorical). The
/// target is label-encoded lexicographically over all rows.
pub fn preprocess(raw: &RawTable, fit_on: &[usize]) -> Result<Dataset> {
    if fit_on.is_empty() {
        return Err(GaisError::InvalidConfig("fit_on index list is empty".into()));
    }
    if let Some(&bad) = fit_on.iter().find(|&&i| i >= raw.n_rows()) {
        return Err(GaisError::ShapeError(format!(
            "fit index {bad} out of range for {} rows",
            raw.n_rows()
        )));
    }

    let feature_idx = raw.feature_indices();
    let mut transforms = Vec::with_capacity(feature_idx.len());
    let mut feature_names = Vec::with_capacity(feature_idx.len());

    for &c in &feature_idx {
        feature_names.push(raw.columns[c].clone());
        let fit_cells: Vec<&str> = fit_on.iter().map(|&i| raw.rows[i][c].as_str()).collect();
        let transform = match raw.column_kinds[c] {
            ColumnKind::Numeric => {
                let mut values: Vec<f64> = fit_cells
                    .iter()
                    .filter_map(|v| v.parse::<f64>().ok())
                    .collect();
                values.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let median = if values.is_empty() {
                    0.0
                } else if values.len() % 2 == 1 {
                    values[values.len() / 2]
                } else {
                    0.5 * (values[values.len() / 2 - 1] + values[values.len() / 2])
                };
                let fit_values = fit_cells.iter().map(|v| v.parse::<f64>().unwrap_or(median));
                let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
                for v in fit_values {
                    min = min.min(v);
                    max = max.max(v);
                }
                ColumnTransform::Numeric { min, max, median }
            }
            ColumnKind::Categorical => {
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for v in fit_cells.iter().filter(|v| !v.is_empty()) {
                    *counts.entry(v).or_insert(0) += 1;
                }
                // Lexicographically smallest among the most frequent values.
                let mode = counts
                    .iter()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                    .map(|(v, _)| v.to_string())
                    .unwrap_or_default();
                let mut distinct: std::collections::BTreeSet<String> = counts
                    .keys()
                    .map(|v| v.to_string())
                    .collect();
                if counts.is_empty() {
                    distinct.insert(mode.clone());
                }
                let codes: BTreeMap<String, usize> = distinct
                    .into_iter()
                    .enumerate()
                    .map(|(code, v)| (v, code))
                    .collect();
                ColumnTransform::Categorical { codes, mode }
            }
        };
        transforms.push(transform);
    }

    let target_idx = raw.target_index();
    let target_values: Vec<String> = raw
        .rows
        .iter()
        .map(|r| r[target_idx].clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let class_count = target_values.len();

    let n = raw.n_rows();
    let p = feature_idx.len();
    let mut features = Array2::zeros((n, p));
    for (k, &c) in feature_idx.iter().enumerate() {
        for (i, row) in raw.rows.iter().enumerate() {
            features[[i, k]] = transform_cell(&transforms[k], &row[c], &feature_names[k])?;
        }
    }
    let labels: Vec<usize> = raw
        .rows
        .iter()
        .map(|r| {
            target_values
                .iter()
                .position(|v| *v == r[target_idx])
                .unwrap()
        })
        .collect();

    Ok(Dataset {
        features,
        labels,
        class_count,
        feature_names,
        transforms,
        target_values,
    })
}

/// Disjoint train/validation/test index lists for one seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSplit {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

/// Cuts a seeded uniform permutation of `0..n` into 80% train, 10%
/// validation, and the remainder test (floor/floor/remainder sizes).
pub fn split(n: usize, seed: u64) -> Result<DataSplit> {
    if n < 10 {
        return Err(GaisError::TooFewInstances { got: n, min: 10 });
    }
    let perm = shuffle_indices(n, seed);
    let n_train = n * 4 / 5;
    let n_val = n / 10;
    Ok(DataSplit {
        train_idx: perm[..n_train].to_vec(),
        val_idx: perm[n_train..n_train + n_val].to_vec(),
        test_idx: perm[n_train + n_val..].to_vec(),
        seed,
    })
}

/// Seeded uniform permutation of `0..n`.
pub fn shuffle_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx
}

/// Overlapping-window chunking parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkSpec {
    pub window: usize,
    pub overlap: usize,
}

impl ChunkSpec {
    pub fn new(window: usize, overlap: usize) -> Result<Self> {
        if window == 0 || overlap >= window {
            return Err(GaisError::InvalidOverlap { window, overlap });
        }
        Ok(Self { window, overlap })
    }
}

impl Default for ChunkSpec {
    fn default() -> Self {
        Self { window: 8000, overlap: 1000 }
    }
}

/// One window over the shuffled training order: positions `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub ordinal: usize,
    pub start: usize,
    pub end: usize,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    /// Positions into the shuffled training order covered by this chunk.
    pub fn positions(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// Cuts `n` shuffled positions into overlapping windows. Chunk `j`
/// (0-based) covers `[j(w-o), min(j(w-o)+w, n))`; when `n <= w` there is a
/// single chunk.
pub fn make_chunks(n: usize, spec: &ChunkSpec) -> Result<Vec<Chunk>> {
    let (w, o) = (spec.window, spec.overlap);
    if w == 0 || o >= w {
        return Err(GaisError::InvalidOverlap { window: w, overlap: o });
    }
    if n == 0 {
        return Err(GaisError::TooFewInstances { got: 0, min: 1 });
    }
    if n <= w {
        return Ok(vec![Chunk { ordinal: 0, start: 0, end: n }]);
    }
    let count = (n - o).div_ceil(w - o);
    Ok((0..count)
        .map(|j| {
            let start = j * (w - o);
            Chunk { ordinal: j, start, end: (start + w).min(n) }
        })
        .collect())
}

const SYNTHETIC_DIM: usize = 20;

/// Two-norm benchmark: class 0 is a unit-variance spherical Gaussian at
/// `+a·1`, class 1 at `-a·1`, with `a = 2/sqrt(20)` in 20 dimensions.
/// Features are min-max scaled to [0,1]. Odd `n` rounds down per class.
pub fn generate_twonorm(n: usize, seed: u64) -> Result<Dataset> {
    generate_gaussian_pair(n, seed, |rng, label| {
        let a = 2.0 / (SYNTHETIC_DIM as f64).sqrt();
        let mean = if label == 0 { a } else { -a };
        (0..SYNTHETIC_DIM)
            .map(|_| mean + sample_normal(rng))
            .collect()
    })
}

/// Ring-norm benchmark: class 0 is a zero-mean Gaussian with covariance
/// `4·I`, class 1 a unit-covariance Gaussian at `a·1`, `a = 2/sqrt(20)`,
/// in 20 dimensions. Features are min-max scaled to [0,1].
pub fn generate_ringnorm(n: usize, seed: u64) -> Result<Dataset> {
    generate_gaussian_pair(n, seed, |rng, label| {
        let a = 2.0 / (SYNTHETIC_DIM as f64).sqrt();
        (0..SYNTHETIC_DIM)
            .map(|_| {
                if label == 0 {
                    2.0 * sample_normal(rng)
                } else {
                    a + sample_normal(rng)
                }
            })
            .collect()
    })
}

fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn generate_gaussian_pair(
    n: usize,
    seed: u64,
    sample_row: impl Fn(&mut ChaCha8Rng, usize) -> Vec<f64>,
) -> Result<Dataset> {
    if n < 4 {
        return Err(GaisError::TooFewInstances { got: n, min: 4 });
    }
    let per_class = n / 2;
    let total = per_class * 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut features = Array2::zeros((total, SYNTHETIC_DIM));
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        let label = i % 2;
        let row = sample_row(&mut rng, label);
        for (j, v) in row.into_iter().enumerate() {
            features[[i, j]] = v;
        }
        labels.push(label);
    }

    // Column-wise min-max scale to [0,1]; the fit spans all generated rows.
    let mut transforms = Vec::with_capacity(SYNTHETIC_DIM);
    for j in 0..SYNTHETIC_DIM {
        let col = features.column(j);
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in col.iter() {
            min = min.min(v);
            max = max.max(v);
        }
        for i in 0..total {
            features[[i, j]] = if max > min {
                (features[[i, j]] - min) / (max - min)
            } else {
                0.0
            };
        }
        transforms.push(ColumnTransform::Numeric { min, max, median: 0.5 * (min + max) });
    }

    Ok(Dataset {
        features,
        labels,
        class_count: 2,
        feature_names: (1..=SYNTHETIC_DIM).map(|j| format!("x{j}")).collect(),
        transforms,
        target_values: vec!["0".into(), "1".into()],
    })
}

/// Copies the given rows of a feature matrix into a new dense matrix.
pub fn gather_rows(features: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), features.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&features.row(i));
    }
    out
}

/// Copies the given labels into a new vector.
pub fn gather_labels(labels: &[usize], idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| labels[i]).collect()
}

/// Writes a preprocessed dataset as CSV: feature columns under their names
/// plus the encoded target in a final `class` column.
pub fn write_dataset_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for name in &ds.feature_names {
        out.push_str(name);
        out.push(',');
    }
    out.push_str("class\n");
    for i in 0..ds.n_instances() {
        for j in 0..ds.n_features() {
            out.push_str(&format_float(ds.features[[i, j]]));
            out.push(',');
        }
        out.push_str(&ds.labels[i].to_string());
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

/// Writes the selected rows of a raw table in its original column format.
pub fn write_selected_rows_csv(raw: &RawTable, selected: &[usize], path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&raw.columns.join(","));
    out.push('\n');
    for &i in selected {
        out.push_str(&raw.rows[i].join(","));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|source| GaisError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(bytes).map_err(|source| GaisError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Shortest decimal representation that round-trips exactly.
pub fn format_float(v: f64) -> String {
    let mut buffer = ryu_format(v);
    if buffer.ends_with(".0") {
        buffer.truncate(buffer.len() - 2);
    }
    buffer
}

fn ryu_format(v: f64) -> String {
    // serde_json uses ryu internally; route through it for exact round-trips.
    serde_json::to_string(&v).expect("finite float")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn temp_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_basic_csv() {
        let f = temp_csv("a,b,class\n1,2,x\n3,4,y\n5,6,x\n");
        let t = load_csv(f.path(), "class", &[]).unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.feature_indices().len(), 2);
        assert_eq!(t.column_kinds[0], ColumnKind::Numeric);
    }

    #[test]
    fn load_infers_categorical_on_non_numeric_value() {
        let f = temp_csv("a,b,class\n1,2,u\n3,x,v\n5,6,u\n");
        let t = load_csv(f.path(), "class", &[]).unwrap();
        assert_eq!(t.column_kinds[1], ColumnKind::Categorical);
        assert_eq!(t.column_kinds[0], ColumnKind::Numeric);
    }

    #[test]
    fn load_missing_target_errors() {
        let f = temp_csv("a,b,class\n1,2,x\n");
        let err = load_csv(f.path(), "label", &[]).unwrap_err();
        assert!(matches!(err, GaisError::MissingTarget(_)));
    }

    #[test]
    fn load_ragged_row_errors() {
        let f = temp_csv("a,b,class\n1,2,x\n3,4\n");
        let err = load_csv(f.path(), "class", &[]).unwrap_err();
        assert!(matches!(err, GaisError::RaggedRow { row: 3, .. }));
    }

    #[test]
    fn load_drops_rows_with_missing_target() {
        let f = temp_csv("a,class\n1,x\n2,\n3,y\n");
        let t = load_csv(f.path(), "class", &[]).unwrap();
        assert_eq!(t.n_rows(), 2);
    }

    #[test]
    fn preprocess_minmax_scales_numeric() {
        let f = temp_csv("a,class\n2,x\n4,y\n6,x\n");
        let t = load_csv(f.path(), "class", &[]).unwrap();
        let ds = preprocess(&t, &[0, 1, 2]).unwrap();
        let col: Vec<f64> = ds.features.column(0).to_vec();
        assert_eq!(col, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn preprocess_encodes_categorical_lexicographically() {
        let f = temp_csv("c,class\nred,x\ngreen,y\nred,x\n");
        let t = load_csv(f.path(), "class", &[]).unwrap();
        let ds = preprocess(&t, &[0, 1, 2]).unwrap();
        // green=0, red=1; two categories so codes already span [0,1]
        let col: Vec<f64> = ds.features.column(0).to_vec();
        assert_eq!(col, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn preprocess_constant_column_maps_to_zero() {
        let f = temp_csv("a,class\n5,x\n5,y\n5,x\n");
        let t = load_csv(f.path(), "class", &[]).unwrap();
        let ds = preprocess(&t, &[0, 1, 2]).unwrap();
        assert_eq!(ds.features.column(0).to_vec(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn preprocess_clamps_outside_fitted_range() {
        let f = temp_csv("a,class\n2,x\n4,y\n100,x\n-7,y\n");
        let t = load_csv(f.path(), "class", &[]).unwrap();
        let ds = preprocess(&t, &[0, 1]).unwrap();
        let col: Vec<f64> = ds.features.column(0).to_vec();
        assert_eq!(col, vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn preprocess_unseen_category_errors() {
        let f = temp_csv("c,class\nred,x\ngreen,y\nblue,x\n");
        let t = load_csv(f.path(), "class", &[]).unwrap();
        let err = preprocess(&t, &[0, 1]).unwrap_err();
        assert!(matches!(err, GaisError::UnseenCategory { .. }));
    }

    #[test]
    fn preprocess_imputes_missing_numeric_with_median() {
        let f = temp_csv("a,class\n1,x\n3,y\n,x\n9,y\n");
        let t = load_csv(f.path(), "class", &[]).unwrap();
        let ds = preprocess(&t, &[0, 1, 2, 3]).unwrap();
        // median of {1,3,9} = 3 → scaled (3-1)/8 = 0.25
        assert_eq!(ds.features[[2, 0]], 0.25);
    }

    #[test]
    fn split_sizes_follow_floor_floor_remainder() {
        let s = split(100, 1).unwrap();
        assert_eq!((s.train_idx.len(), s.val_idx.len(), s.test_idx.len()), (80, 10, 10));
        let s = split(303, 1).unwrap();
        assert_eq!((s.train_idx.len(), s.val_idx.len(), s.test_idx.len()), (242, 30, 31));
    }

    #[test]
    fn split_is_deterministic() {
        let a = split(97, 42).unwrap();
        let b = split(97, 42).unwrap();
        assert_eq!(a.train_idx, b.train_idx);
        assert_eq!(a.test_idx, b.test_idx);
    }

    #[test]
    fn split_too_small_errors() {
        assert!(matches!(split(9, 0), Err(GaisError::TooFewInstances { .. })));
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let p = shuffle_indices(1000, 3);
        let mut sorted = p.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..1000).collect::<Vec<_>>());
        assert_eq!(shuffle_indices(1, 9), vec![0]);
    }

    #[test]
    fn shuffle_seeds_differ() {
        // Collision probability for two seeds over 1000! orderings is negligible.
        assert_ne!(shuffle_indices(1000, 1), shuffle_indices(1000, 2));
    }

    #[test]
    fn chunks_match_worked_example() {
        let spec = ChunkSpec::new(8, 2).unwrap();
        let chunks = make_chunks(20, &spec).unwrap();
        let spans: Vec<(usize, usize)> = chunks.iter().map(|c| (c.start, c.end)).collect();
        assert_eq!(spans, vec![(0, 8), (6, 14), (12, 20)]);
    }

    #[test]
    fn single_chunk_when_n_fits_window() {
        let spec = ChunkSpec::new(8000, 0).unwrap();
        let chunks = make_chunks(8000, &spec).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!((chunks[0].start, chunks[0].end), (0, 8000));
    }

    #[test]
    fn chunk_count_matches_ceiling_formula() {
        // Independent evaluation of ⌈(n−o)/(w−o)⌉ with integer arithmetic.
        let (n, w, o) = (100_968usize, 8000usize, 1000usize);
        let expected = (n - o + (w - o) - 1) / (w - o);
        assert_eq!(expected, 15);
        let chunks = make_chunks(n, &ChunkSpec::new(w, o).unwrap()).unwrap();
        assert_eq!(chunks.len(), 15);
    }

    #[test]
    fn invalid_overlap_errors() {
        assert!(matches!(
            ChunkSpec::new(8, 8),
            Err(GaisError::InvalidOverlap { .. })
        ));
        assert!(matches!(
            make_chunks(100, &ChunkSpec { window: 4, overlap: 9 }),
            Err(GaisError::InvalidOverlap { .. })
        ));
    }

    #[test]
    fn twonorm_shape_balance_and_determinism() {
        let ds = generate_twonorm(100, 7).unwrap();
        assert_eq!(ds.n_instances(), 100);
        assert_eq!(ds.n_features(), 20);
        assert_eq!(ds.labels.iter().filter(|&&l| l == 0).count(), 50);
        let again = generate_twonorm(100, 7).unwrap();
        assert_eq!(ds.features, again.features);
        assert!(ds.features.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn ringnorm_rejects_tiny_n_and_rounds_odd() {
        assert!(generate_ringnorm(3, 0).is_err());
        let ds = generate_ringnorm(101, 0).unwrap();
        assert_eq!(ds.n_instances(), 100);
    }

    #[test]
    fn twonorm_nearest_neighbor_is_accurate() {
        // Monte Carlo check: two-norm is near-linearly-separable, so 1-NN
        // against a held-out fold should clear 0.90 by a wide margin.
        let ds = generate_twonorm(20_000, 11).unwrap();
        let holdout = 2000;
        let n = ds.n_instances();
        let mut correct = 0usize;
        for q in n - holdout..n {
            let qrow = ds.features.row(q);
            let mut best = (f64::INFINITY, 0usize);
            for t in 0..n - holdout {
                let d: f64 = ds
                    .features
                    .row(t)
                    .iter()
                    .zip(qrow.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best.0 {
                    best = (d, ds.labels[t]);
                }
            }
            if best.1 == ds.labels[q] {
                correct += 1;
            }
        }
        let accuracy = correct as f64 / holdout as f64;
        assert!(accuracy >= 0.90, "1-NN accuracy {accuracy} below 0.90");
    }

    proptest! {
        #[test]
        fn chunks_tile_with_exact_overlap(n in 1usize..3000, w in 2usize..200, o_frac in 0.0f64..1.0) {
            let o = ((w as f64 - 1.0) * o_frac) as usize;
            let spec = ChunkSpec::new(w, o).unwrap();
            let chunks = make_chunks(n, &spec).unwrap();
            if n > w {
                let expected = (n - o + (w - o) - 1) / (w - o);
                prop_assert_eq!(chunks.len(), expected);
            } else {
                prop_assert_eq!(chunks.len(), 1);
            }
            let mut covered = vec![false; n];
            for c in &chunks {
                prop_assert!(c.len() <= w);
                for i in c.positions() {
                    covered[i] = true;
                }
            }
            prop_assert!(covered.iter().all(|&b| b));
            for pair in chunks.windows(2) {
                let shared = pair[0].end.saturating_sub(pair[1].start);
                prop_assert_eq!(shared, o);
            }
        }

        #[test]
        fn splits_are_disjoint_and_exhaustive(n in 10usize..2000, seed in 0u64..1000) {
            let s = split(n, seed).unwrap();
            let mut all: Vec<usize> = s
                .train_idx
                .iter()
                .chain(&s.val_idx)
                .chain(&s.test_idx)
                .copied()
                .collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn transform_after_fit_is_idempotent(values in proptest::collection::vec(-1e6f64..1e6, 2..40)) {
            let mut csv = String::from("a,class\n");
            for (i, v) in values.iter().enumerate() {
                csv.push_str(&format!("{v},{}\n", i % 2));
            }
            let f = temp_csv(&csv);
            let t = load_csv(f.path(), "class", &[]).unwrap();
            let fit: Vec<usize> = (0..values.len()).collect();
            let ds = preprocess(&t, &fit).unwrap();
            prop_assert!(ds.features.iter().all(|&v| (0.0..=1.0).contains(&v)));

            // Re-fitting on the already scaled values must reproduce them.
            let mut csv2 = String::from("a,class\n");
            for i in 0..ds.n_instances() {
                csv2.push_str(&format!("{},{}\n", format_float(ds.features[[i, 0]]), i % 2));
            }
            let f2 = temp_csv(&csv2);
            let t2 = load_csv(f2.path(), "class", &[]).unwrap();
            let ds2 = preprocess(&t2, &fit).unwrap();
            for i in 0..ds.n_instances() {
                prop_assert!((ds.features[[i, 0]] - ds2.features[[i, 0]]).abs() < 1e-12);
            }
        }
    }
}
