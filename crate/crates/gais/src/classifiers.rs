//! Downstream classifiers used to evaluate selected subsets: k-nearest
//! neighbors, Gaussian naive Bayes, and one-vs-rest logistic regression.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{GaisError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierKind {
    Knn { k: usize },
    GaussianNb,
    LogisticRegression { learning_rate: f64, epochs: usize, l2: f64 },
}

impl ClassifierKind {
    pub fn knn_default() -> Self {
        ClassifierKind::Knn { k: 3 }
    }

    pub fn logistic_default() -> Self {
        ClassifierKind::LogisticRegression { learning_rate: 0.1, epochs: 500, l2: 1e-4 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ClassifierKind::Knn { k } if k < 1 => {
                Err(GaisError::InvalidConfig("knn requires k >= 1".into()))
            }
            ClassifierKind::LogisticRegression { learning_rate, epochs, l2 }
                if !(learning_rate > 0.0) || epochs < 1 || l2 < 0.0 =>
            {
                Err(GaisError::InvalidConfig(
                    "logistic regression requires lr > 0, epochs >= 1, l2 >= 0".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = GaisError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "knn" => Ok(ClassifierKind::knn_default()),
            "gaussian_nb" | "nb" => Ok(ClassifierKind::GaussianNb),
            "logistic" | "logistic_regression" => Ok(ClassifierKind::logistic_default()),
            other => Err(GaisError::InvalidConfig(format!(
                "unknown classifier {other:?}; expected knn, gaussian_nb, or logistic"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum FittedModel {
    Knn { k: usize, features: Array2<f64>, labels: Vec<usize>, classes: usize },
    GaussianNb { means: Array2<f64>, variances: Array2<f64>, log_priors: Vec<f64> },
    Logistic { weights: Array2<f64>, bias: Array1<f64> },
}

const VARIANCE_FLOOR: f64 = 1e-9;

pub fn fit(
    kind: &ClassifierKind,
    features: ArrayView2<f64>,
    labels: &[usize],
) -> Result<FittedModel> {
    kind.validate()?;
    let n = features.nrows();
    if n == 0 {
        return Err(GaisError::TooFewInstances { got: 0, min: 1 });
    }
    if labels.len() != n {
        return Err(GaisError::ShapeError(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }
    let classes = labels.iter().max().unwrap() + 1;

    match *kind {
        ClassifierKind::Knn { k } => {
            if n < k {
                return Err(GaisError::TooFewInstances { got: n, min: k });
            }
            Ok(FittedModel::Knn {
                k,
                features: features.to_owned(),
                labels: labels.to_vec(),
                classes,
            })
        }
        ClassifierKind::GaussianNb => {
            let p = features.ncols();
            let mut counts = vec![0usize; classes];
            for &y in labels {
                counts[y] += 1;
            }
            if let Some(empty) = counts.iter().position(|&c| c == 0) {
                return Err(GaisError::EmptyClass(empty));
            }
            let mut means = Array2::zeros((classes, p));
            for (i, &y) in labels.iter().enumerate() {
                for j in 0..p {
                    means[[y, j]] += features[[i, j]];
                }
            }
            for c in 0..classes {
                for j in 0..p {
                    means[[c, j]] /= counts[c] as f64;
                }
            }
            let mut variances: Array2<f64> = Array2::zeros((classes, p));
            for (i, &y) in labels.iter().enumerate() {
                for j in 0..p {
                    let d = features[[i, j]] - means[[y, j]];
                    variances[[y, j]] += d * d;
                }
            }
            for c in 0..classes {
                for j in 0..p {
                    variances[[c, j]] = (variances[[c, j]] / counts[c] as f64).max(VARIANCE_FLOOR);
                }
            }
            let log_priors = counts
                .iter()
                .map(|&c| (c as f64 / n as f64).ln())
                .collect();
            Ok(FittedModel::GaussianNb { means, variances, log_priors })
        }
        ClassifierKind::LogisticRegression { learning_rate, epochs, l2 } => {
            let mut counts = vec![0usize; classes];
            for &y in labels {
                counts[y] += 1;
            }
            if let Some(empty) = counts.iter().position(|&c| c == 0) {
                return Err(GaisError::EmptyClass(empty));
            }
            let (weights, bias, _) =
                fit_logistic(features, labels, classes, learning_rate, epochs, l2);
            Ok(FittedModel::Logistic { weights, bias })
        }
    }
}

/// One-vs-rest full-batch gradient descent from zero weights. Deterministic
/// with no random state: the zero start and whole-batch updates make the
/// result independent of instance and feature order. Returns per-epoch
/// mean losses summed over the class columns.
fn fit_logistic(
    features: ArrayView2<f64>,
    labels: &[usize],
    classes: usize,
    learning_rate: f64,
    epochs: usize,
    l2: f64,
) -> (Array2<f64>, Array1<f64>, Vec<f64>) {
    let n = features.nrows();
    let p = features.ncols();
    let mut weights: Array2<f64> = Array2::zeros((classes, p));
    let mut bias: Array1<f64> = Array1::zeros(classes);
    let mut losses = Vec::with_capacity(epochs);

    for _ in 0..epochs {
        // scores (n, classes) = X·Wᵀ + b
        let mut scores = features.dot(&weights.t());
        for mut row in scores.rows_mut() {
            row += &bias;
        }
        let mut epoch_loss = 0.0;
        // residual = σ(score) − target
        let mut residual = scores;
        for (i, mut row) in residual.rows_mut().into_iter().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                let target = if labels[i] == c { 1.0 } else { 0.0 };
                let z = *v;
                // log(1 + e^{-|z|}) + max(z,0) − z·t is the stable form of
                // the logistic loss.
                epoch_loss += (-z.abs()).exp().ln_1p() + z.max(0.0) - z * target;
                *v = sigmoid(z) - target;
            }
        }
        losses.push(epoch_loss / n as f64);
        let grad_w = residual.t().dot(&features) / n as f64; // (classes, p)
        let grad_b = residual.sum_axis(ndarray::Axis(0)) / n as f64;
        weights.zip_mut_with(&grad_w, |w, &g| *w -= learning_rate * (g + l2 * *w));
        bias.zip_mut_with(&grad_b, |b, &g| *b -= learning_rate * g);
    }
    (weights, bias, losses)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn model_input_dim(model: &FittedModel) -> usize {
    match model {
        FittedModel::Knn { features, .. } => features.ncols(),
        FittedModel::GaussianNb { means, .. } => means.ncols(),
        FittedModel::Logistic { weights, .. } => weights.ncols(),
    }
}

pub fn predict(model: &FittedModel, features: ArrayView2<f64>) -> Result<Vec<usize>> {
    let expected = model_input_dim(model);
    if features.ncols() != expected {
        return Err(GaisError::ShapeError(format!(
            "model expects {expected} features, got {}",
            features.ncols()
        )));
    }
    let out = match model {
        FittedModel::Knn { k, features: train, labels, classes } => features
            .rows()
            .into_iter()
            .map(|q| knn_vote(train.view(), labels, *classes, q, *k))
            .collect(),
        FittedModel::GaussianNb { means, variances, log_priors } => features
            .rows()
            .into_iter()
            .map(|q| {
                let mut best = (f64::NEG_INFINITY, 0usize);
                for c in 0..means.nrows() {
                    let mut log_p = log_priors[c];
                    for j in 0..means.ncols() {
                        let var = variances[[c, j]];
                        let d = q[j] - means[[c, j]];
                        log_p += -0.5 * (2.0 * std::f64::consts::PI * var).ln()
                            - d * d / (2.0 * var);
                    }
                    if log_p > best.0 {
                        best = (log_p, c);
                    }
                }
                best.1
            })
            .collect(),
        FittedModel::Logistic { weights, bias } => {
            let mut scores = features.dot(&weights.t());
            for mut row in scores.rows_mut() {
                row += bias;
            }
            scores
                .rows()
                .into_iter()
                .map(|row| {
                    let mut best = (f64::NEG_INFINITY, 0usize);
                    for (c, &v) in row.iter().enumerate() {
                        if v > best.0 {
                            best = (v, c);
                        }
                    }
                    best.1
                })
                .collect()
        }
    };
    Ok(out)
}

/// Majority vote over the k nearest stored rows; distance ties prefer the
/// lower stored index, vote ties the smallest class id.
fn knn_vote(
    train: ArrayView2<f64>,
    labels: &[usize],
    classes: usize,
    query: ArrayView1<f64>,
    k: usize,
) -> usize {
    let mut order: Vec<(f64, usize)> = train
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let d: f64 = row
                .iter()
                .zip(query.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d, i)
        })
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut votes = vec![0usize; classes];
    for &(_, i) in order.iter().take(k) {
        votes[labels[i]] += 1;
    }
    let mut best = (0usize, 0usize);
    for (c, &v) in votes.iter().enumerate() {
        if v > best.0 {
            best = (v, c);
        }
    }
    best.1
}

/// Fraction of matching labels.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}
