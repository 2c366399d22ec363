//! Hyperparameter search: sequential Bayesian optimization with a
//! Gaussian-process surrogate over an encoded search space.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::{self, ClassifierKind};
use crate::dataset::{gather_labels, gather_rows, ChunkSpec};
use crate::error::{GaisError, Result};
use crate::gat::GatHyperParams;
use crate::graph::DistanceMetric;
use crate::trainer::{derived_seed, gais_select};
use ndarray::ArrayView2;

/// Random trials evaluated before the surrogate takes over.
pub const WARMUP_TRIALS: usize = 8;
/// Uniform candidates scored per suggestion step.
pub const CANDIDATE_COUNT: usize = 1024;
/// Default exploration weight for the confidence-bound acquisition.
pub const DEFAULT_KAPPA: f64 = 2.0;

// Seed streams 1 and 2 belong to graph construction and dropout.
const WARMUP_STREAM: u64 = 3;
const SUGGEST_STREAM: u64 = 4;

/// Tunable subset of the hyperparameters, with inclusive bounds. Fields not
/// listed here (learning rate, epochs, weight decay, training seed) are
/// copied from a base configuration unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub hidden_dim: (usize, usize),
    pub input_heads: (usize, usize),
    pub output_heads: (usize, usize),
    pub dropout: (f64, f64),
    pub theta_r: (f64, f64),
    pub theta_s: (f64, f64),
    pub theta_c: (f64, f64),
    /// Candidate metrics in encoding order.
    pub metrics: Vec<DistanceMetric>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            hidden_dim: (4, 16),
            input_heads: (5, 15),
            output_heads: (1, 4),
            dropout: (0.005, 0.67),
            theta_r: (0.0, 0.95),
            theta_s: (0.0, 0.95),
            theta_c: (0.5, 0.95),
            metrics: vec![
                DistanceMetric::Manhattan,
                DistanceMetric::Euclidean,
                DistanceMetric::Cosine,
            ],
        }
    }
}

fn ordered(bounds: (f64, f64)) -> bool {
    bounds.0.is_finite() && bounds.1.is_finite() && bounds.0 <= bounds.1
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let scalar_ok = self.hidden_dim.0 >= 1
            && self.hidden_dim.0 <= self.hidden_dim.1
            && self.input_heads.0 >= 1
            && self.input_heads.0 <= self.input_heads.1
            && self.output_heads.0 >= 1
            && self.output_heads.0 <= self.output_heads.1;
        let continuous_ok = ordered(self.dropout)
            && self.dropout.0 >= 0.0
            && self.dropout.1 < 1.0
            && ordered(self.theta_r)
            && self.theta_r.0 >= 0.0
            && ordered(self.theta_s)
            && self.theta_s.0 >= 0.0
            && ordered(self.theta_c)
            && self.theta_c.0 >= 0.0;
        if !scalar_ok || !continuous_ok || self.metrics.is_empty() {
            return Err(GaisError::InvalidConfig(
                "search space needs ordered bounds and at least one metric".into(),
            ));
        }
        Ok(())
    }

    /// Encoded dimensionality: one coordinate per scalar plus a one-hot
    /// block for the metric.
    pub fn dims(&self) -> usize {
        7 + self.metrics.len()
    }

    /// Uniform draw from the space. Scalar fields and the metric are drawn
    /// in encoding order; everything else is copied from `base`.
    pub fn sample(&self, base: &GatHyperParams, rng: &mut ChaCha8Rng) -> GatHyperParams {
        let mut hp = *base;
        hp.hidden_dim = rng.random_range(self.hidden_dim.0..=self.hidden_dim.1);
        hp.input_heads = rng.random_range(self.input_heads.0..=self.input_heads.1);
        hp.output_heads = rng.random_range(self.output_heads.0..=self.output_heads.1);
        hp.dropout = uniform_in(self.dropout, rng);
        hp.theta_r = uniform_in(self.theta_r, rng);
        hp.theta_s = uniform_in(self.theta_s, rng);
        hp.theta_c = uniform_in(self.theta_c, rng);
        hp.metric = self.metrics[rng.random_range(0..self.metrics.len())];
        hp
    }
}

fn uniform_in(bounds: (f64, f64), rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random();
    bounds.0 + u * (bounds.1 - bounds.0)
}

fn unit_coordinate(value: f64, bounds: (f64, f64), name: &str) -> Result<f64> {
    let (lo, hi) = bounds;
    if !value.is_finite() || value < lo || value > hi {
        return Err(GaisError::OutOfSpace {
            name: name.into(),
            value: value.to_string(),
        });
    }
    if hi == lo {
        return Ok(0.0);
    }
    Ok((value - lo) / (hi - lo))
}

/// Maps hyperparameters onto the unit hypercube: scalars min-max scaled in
/// a fixed order, then a one-hot metric block.
pub fn encode(hp: &GatHyperParams, space: &SearchSpace) -> Result<Vec<f64>> {
    let int = |v: usize, b: (usize, usize), name| {
        unit_coordinate(v as f64, (b.0 as f64, b.1 as f64), name)
    };
    let mut x = Vec::with_capacity(space.dims());
    x.push(int(hp.hidden_dim, space.hidden_dim, "hidden_dim")?);
    x.push(int(hp.input_heads, space.input_heads, "input_heads")?);
    x.push(int(hp.output_heads, space.output_heads, "output_heads")?);
    x.push(unit_coordinate(hp.dropout, space.dropout, "dropout")?);
    x.push(unit_coordinate(hp.theta_r, space.theta_r, "theta_r")?);
    x.push(unit_coordinate(hp.theta_s, space.theta_s, "theta_s")?);
    x.push(unit_coordinate(hp.theta_c, space.theta_c, "theta_c")?);
    let slot = space
        .metrics
        .iter()
        .position(|&m| m == hp.metric)
        .ok_or_else(|| GaisError::OutOfSpace {
            name: "metric".into(),
            value: hp.metric.name().to_string(),
        })?;
    for i in 0..space.metrics.len() {
        x.push(if i == slot { 1.0 } else { 0.0 });
    }
    Ok(x)
}

// Hyperparameter grids for the marginal-likelihood fit. Observations are
// standardized, so the signal scale stays near one.
const LENGTH_SCALE_GRID: [f64; 6] = [0.1, 0.2, 0.4, 0.8, 1.6, 3.2];
const SIGNAL_STD_GRID: [f64; 3] = [0.5, 1.0, 2.0];
const BASE_JITTER: f64 = 1e-6;
const MAX_JITTER: f64 = 1e-2;

fn squared_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn rbf(a: &[f64], b: &[f64], length_scale: f64, signal_variance: f64) -> f64 {
    signal_variance * (-squared_norm_diff(a, b) / (2.0 * length_scale * length_scale)).exp()
}

/// Lower Cholesky factor, or None when the matrix is not positive definite.
fn cholesky(matrix: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = matrix.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = matrix[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

fn solve_lower(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i][k] * x[k];
        }
        x[i] = sum / l[i][i];
    }
    x
}

fn solve_lower_transpose(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = b[i];
        for k in i + 1..n {
            sum -= l[k][i] * x[k];
        }
        x[i] = sum / l[i][i];
    }
    x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Zero-mean Gaussian-process posterior on standardized objectives with an
/// RBF kernel over encoded points.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    points: Vec<Vec<f64>>,
    chol: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    length_scale: f64,
    signal_variance: f64,
    jitter: f64,
    y_mean: f64,
    y_scale: f64,
}

impl GpPosterior {
    /// Posterior mean and standard deviation at one encoded point, on the
    /// original objective scale.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let k_star: Vec<f64> = self
            .points
            .iter()
            .map(|p| rbf(p, x, self.length_scale, self.signal_variance))
            .collect();
        let mean = dot(&k_star, &self.alpha);
        let v = solve_lower(&self.chol, &k_star);
        let variance = (self.signal_variance - dot(&v, &v)).max(0.0);
        (
            self.y_mean + self.y_scale * mean,
            self.y_scale * variance.sqrt(),
        )
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn signal_std(&self) -> f64 {
        self.signal_variance.sqrt()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn observation_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn observation_scale(&self) -> f64 {
        self.y_scale
    }
}

/// Fits length scale and signal amplitude by grid-searched log marginal
/// likelihood on standardized values. A singular kernel matrix escalates
/// the diagonal jitter tenfold per retry before giving up.
pub fn gp_fit(points: &[Vec<f64>], values: &[f64]) -> Result<GpPosterior> {
    if points.is_empty() || points.len() != values.len() {
        return Err(GaisError::ShapeError(format!(
            "{} points with {} values",
            points.len(),
            values.len()
        )));
    }
    let dims = points[0].len();
    if points.iter().any(|p| p.len() != dims) {
        return Err(GaisError::ShapeError("ragged point encodings".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(GaisError::NonFiniteInput);
    }
    let n = points.len();
    let y_mean = values.iter().sum::<f64>() / n as f64;
    let variance = values.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64;
    let y_scale = if variance.sqrt() > 1e-12 {
        variance.sqrt()
    } else {
        1.0
    };
    let standardized: Vec<f64> = values.iter().map(|v| (v - y_mean) / y_scale).collect();

    let mut best: Option<(f64, GpPosterior)> = None;
    for &length_scale in &LENGTH_SCALE_GRID {
        for &signal_std in &SIGNAL_STD_GRID {
            let signal_variance = signal_std * signal_std;
            let mut kernel = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..=i {
                    let k = rbf(&points[i], &points[j], length_scale, signal_variance);
                    kernel[i][j] = k;
                    kernel[j][i] = k;
                }
            }
            let mut jitter = BASE_JITTER;
            let factored = loop {
                let mut damped = kernel.clone();
                for (i, row) in damped.iter_mut().enumerate() {
                    row[i] += jitter;
                }
                if let Some(chol) = cholesky(&damped) {
                    break Some((chol, jitter));
                }
                if jitter >= MAX_JITTER {
                    break None;
                }
                jitter *= 10.0;
            };
            let Some((chol, jitter)) = factored else {
                continue;
            };
            let alpha = solve_lower_transpose(&chol, &solve_lower(&chol, &standardized));
            let log_det_half: f64 = (0..n).map(|i| chol[i][i].ln()).sum();
            let lml = -0.5 * dot(&standardized, &alpha)
                - log_det_half
                - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
            if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                best = Some((
                    lml,
                    GpPosterior {
                        points: points.to_vec(),
                        chol,
                        alpha,
                        length_scale,
                        signal_variance,
                        jitter,
                        y_mean,
                        y_scale,
                    },
                ));
            }
        }
    }
    best.map(|(_, model)| model).ok_or_else(|| {
        GaisError::NumericalFailure("kernel matrix stayed singular at maximum jitter".into())
    })
}

fn erf(x: f64) -> f64 {
    // Abramowitz-Stegun 7.1.26 rational approximation, absolute error
    // below 1.5e-7.
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Expected improvement of a Gaussian belief over the incumbent. The exact
/// expression is nonnegative; the erf approximation can dip a hair below
/// zero deep in the left tail, so the result is clamped.
pub fn expected_improvement(mean: f64, stddev: f64, f_best: f64) -> f64 {
    if stddev <= 0.0 {
        return (mean - f_best).max(0.0);
    }
    let z = (mean - f_best) / stddev;
    ((mean - f_best) * normal_cdf(z) + stddev * normal_pdf(z)).max(0.0)
}

pub fn upper_confidence_bound(mean: f64, stddev: f64, kappa: f64) -> f64 {
    mean + kappa * stddev
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Acquisition {
    ExpectedImprovement,
    UpperConfidenceBound { kappa: f64 },
}

impl Default for Acquisition {
    fn default() -> Self {
        Acquisition::ExpectedImprovement
    }
}

impl Acquisition {
    pub fn score(&self, mean: f64, stddev: f64, f_best: f64) -> f64 {
        match *self {
            Acquisition::ExpectedImprovement => expected_improvement(mean, stddev, f_best),
            Acquisition::UpperConfidenceBound { kappa } => {
                upper_confidence_bound(mean, stddev, kappa)
            }
        }
    }
}

impl std::str::FromStr for Acquisition {
    type Err = GaisError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ei" | "expected_improvement" => Ok(Acquisition::ExpectedImprovement),
            "ucb" | "upper_confidence_bound" => Ok(Acquisition::UpperConfidenceBound {
                kappa: DEFAULT_KAPPA,
            }),
            other => Err(GaisError::InvalidConfig(format!(
                "unknown acquisition {other:?}; expected ei or ucb"
            ))),
        }
    }
}

/// First argmax of the acquisition over freshly sampled candidates.
fn argmax_candidate<T>(
    posterior: &GpPosterior,
    acquisition: Acquisition,
    f_best: f64,
    rng: &mut ChaCha8Rng,
    sample: &mut dyn FnMut(&mut ChaCha8Rng) -> T,
    encode_point: &mut dyn FnMut(&T) -> Result<Vec<f64>>,
) -> Result<T> {
    let mut best: Option<(f64, T)> = None;
    for _ in 0..CANDIDATE_COUNT {
        let candidate = sample(rng);
        let x = encode_point(&candidate)?;
        let (mean, stddev) = posterior.predict(&x);
        let score = acquisition.score(mean, stddev, f_best);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, candidate));
        }
    }
    Ok(best.expect("candidate count is positive").1)
}

/// Proposes the next hyperparameters: seeded uniform candidates scored by
/// the acquisition under the posterior, first tie wins. `f_best` is the
/// best objective observed so far.
pub fn suggest_next(
    posterior: &GpPosterior,
    space: &SearchSpace,
    base: &GatHyperParams,
    acquisition: Acquisition,
    f_best: f64,
    seed: u64,
) -> Result<GatHyperParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    argmax_candidate(
        posterior,
        acquisition,
        f_best,
        &mut rng,
        &mut |r| space.sample(base, r),
        &mut |hp| encode(hp, space),
    )
}

/// Sequential Bayesian optimization over an arbitrary point type: seeded
/// random warm-up, then surrogate-guided proposals. Returns every
/// evaluated (point, objective) pair in order.
pub fn bo_maximize<T, S, E, F>(
    budget: usize,
    seed: u64,
    acquisition: Acquisition,
    mut sample: S,
    mut encode_point: E,
    mut objective: F,
) -> Result<Vec<(T, f64)>>
where
    T: Clone,
    S: FnMut(&mut ChaCha8Rng) -> T,
    E: FnMut(&T) -> Result<Vec<f64>>,
    F: FnMut(&T) -> f64,
{
    if budget < 1 {
        return Err(GaisError::InvalidConfig("budget must be at least 1".into()));
    }
    let warmup = budget.min(WARMUP_TRIALS);
    let mut history: Vec<(T, f64)> = Vec::with_capacity(budget);
    let mut encoded: Vec<Vec<f64>> = Vec::with_capacity(budget);
    let mut warmup_rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, WARMUP_STREAM, 0));
    for step in 0..budget {
        let point = if step < warmup {
            sample(&mut warmup_rng)
        } else {
            let values: Vec<f64> = history.iter().map(|(_, v)| *v).collect();
            let posterior = gp_fit(&encoded, &values)?;
            let f_best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut rng =
                ChaCha8Rng::seed_from_u64(derived_seed(seed, SUGGEST_STREAM, step as u64));
            argmax_candidate(
                &posterior,
                acquisition,
                f_best,
                &mut rng,
                &mut sample,
                &mut encode_point,
            )?
        };
        encoded.push(encode_point(&point)?);
        let value = objective(&point);
        history.push((point, value));
    }
    Ok(history)
}

/// Training and validation data for one tuning run.
pub struct TuneData<'a> {
    pub train_features: ArrayView2<'a, f64>,
    pub train_labels: &'a [usize],
    pub val_features: ArrayView2<'a, f64>,
    pub val_labels: &'a [usize],
    pub class_count: usize,
    pub chunks: ChunkSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub hyperparams: GatHyperParams,
    pub objective: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneReport {
    pub best: TrialRecord,
    pub trials: Vec<TrialRecord>,
}

/// Objective for one trial: select with the candidate hyperparameters, fit
/// the default classifier on the selected subset, and score validation
/// accuracy times the reduction rate.
fn trial_objective(data: &TuneData, hp: &GatHyperParams) -> Result<f64> {
    let (_, _, selection) = gais_select(
        data.train_features,
        data.train_labels,
        data.class_count,
        hp,
        &data.chunks,
        0.0,
    )?;
    if selection.selected_idx.is_empty() {
        return Ok(0.0);
    }
    let kept_x = gather_rows(data.train_features, &selection.selected_idx);
    let kept_y = gather_labels(data.train_labels, &selection.selected_idx);
    let model = classifiers::fit(&ClassifierKind::knn_default(), kept_x.view(), &kept_y)?;
    let predicted = classifiers::predict(&model, data.val_features)?;
    let accuracy = classifiers::accuracy(&predicted, data.val_labels);
    Ok(accuracy * selection.reduction_rate)
}

/// Tunes the searchable hyperparameters within `space`. The first
/// min(budget, 8) trials are random; trials that fail to train score zero
/// and stay in the history, so the history always has `budget` entries.
pub fn tune(
    data: &TuneData,
    space: &SearchSpace,
    base: &GatHyperParams,
    budget: usize,
    acquisition: Acquisition,
    seed: u64,
) -> Result<TuneReport> {
    space.validate()?;
    let mut durations: Vec<f64> = Vec::with_capacity(budget);
    let history = bo_maximize(
        budget,
        seed,
        acquisition,
        |rng| space.sample(base, rng),
        |hp| encode(hp, space),
        |hp| {
            let started = Instant::now();
            let value = trial_objective(data, hp).unwrap_or(0.0);
            durations.push(started.elapsed().as_secs_f64());
            value
        },
    )?;
    let trials: Vec<TrialRecord> = history
        .into_iter()
        .zip(durations)
        .map(|((hyperparams, objective), seconds)| TrialRecord {
            hyperparams,
            objective,
            seconds,
        })
        .collect();
    let mut best = trials[0].clone();
    for trial in &trials[1..] {
        if trial.objective > best.objective {
            best = trial.clone();
        }
    }
    Ok(TuneReport { best, trials })
}
