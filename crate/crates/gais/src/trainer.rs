//! Sequential per-chunk GAT training and confidence-threshold selection.

use std::time::Instant;

use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{gather_labels, gather_rows, make_chunks, shuffle_indices, ChunkSpec};
use crate::error::{GaisError, Result};
use crate::gat::{
    compute_gradients, confidence_scores, model_forward, GatGradients, GatHyperParams, GatModel,
};
use crate::graph::{build_graph, pairwise_distance, to_similarity, NeighborList};

/// Distinct random streams derived from one user seed. The SplitMix64
/// finalizer decorrelates (seed, stream, index) triples; graph streams must
/// be reproducible later so selection can rebuild identical graphs.
pub(crate) fn derived_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const GRAPH_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub per_chunk_losses: Vec<Vec<f64>>,
    pub epochs_run: usize,
    pub graph_build_seconds: f64,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Indices into the training set the model was fitted on, ascending.
    pub selected_idx: Vec<usize>,
    pub reduction_rate: f64,
    /// Confidence threshold used; absent for the classical baselines.
    pub theta_c: Option<f64>,
    pub t_is_seconds: f64,
}

impl SelectionResult {
    /// Wraps an index list, stamping R = 1 − |selected|/n.
    pub fn from_indices(selected_idx: Vec<usize>, n: usize, t_is_seconds: f64) -> Self {
        let reduction_rate = 1.0 - selected_idx.len() as f64 / n as f64;
        Self { selected_idx, reduction_rate, theta_c: None, t_is_seconds }
    }
}

/// Adam with L2 weight decay folded into the gradient. Moment buffers and
/// the step counter persist for the lifetime of the optimizer, so training
/// continues smoothly across chunks.
pub struct Adam {
    learning_rate: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &GatModel, learning_rate: f64, weight_decay: f64) -> Self {
        let shapes: Vec<Vec<f64>> = (0..model.tensor_count())
            .map(|t| vec![0.0; model.tensor(t).len()])
            .collect();
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    pub fn apply(&mut self, model: &mut GatModel, grads: &GatGradients) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for t in 0..model.tensor_count() {
            let params = model.tensor_mut(t);
            let gs = grads.tensor(t);
            let (ms, vs) = (&mut self.m[t], &mut self.v[t]);
            for k in 0..params.len() {
                let g = gs[k] + self.weight_decay * params[k];
                ms[k] = self.beta1 * ms[k] + (1.0 - self.beta1) * g;
                vs[k] = self.beta2 * vs[k] + (1.0 - self.beta2) * g * g;
                let m_hat = ms[k] / bc1;
                let v_hat = vs[k] / bc2;
                params[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

fn chunk_graph(
    x: ArrayView2<f64>,
    hp: &GatHyperParams,
    ordinal: usize,
) -> Result<NeighborList> {
    let d = pairwise_distance(x, hp.metric)?;
    let s = to_similarity(d, hp.metric);
    let g = build_graph(
        s.view(),
        hp.theta_s,
        hp.theta_r,
        derived_seed(hp.seed, GRAPH_STREAM, ordinal as u64),
    )?;
    Ok(g.neighbor_list())
}

/// Trains one GAT over the training set: shuffles the row order, cuts it
/// into overlapping chunks, and for each chunk in sequence builds the
/// similarity graph and runs full-batch Adam epochs on the weighted loss.
/// Parameters and optimizer state persist across chunks. Confidence
/// weights start at 1 for a chunk's first epoch and are refreshed each
/// epoch from eval-mode predictions, held constant inside the gradient.
pub fn train_sequential(
    features: ArrayView2<f64>,
    labels: &[usize],
    class_count: usize,
    hp: &GatHyperParams,
    chunks: &ChunkSpec,
) -> Result<(GatModel, TrainReport)> {
    hp.validate()?;
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
    if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
        return Err(GaisError::InvalidLabel { label: bad, classes: class_count });
    }

    let order = shuffle_indices(n, hp.seed);
    let chunk_list = make_chunks(n, chunks)?;
    let mut model = GatModel::init(features.ncols(), class_count, hp)?;
    let mut adam = Adam::new(&model, hp.learning_rate, hp.weight_decay);

    let mut report = TrainReport {
        per_chunk_losses: Vec::with_capacity(chunk_list.len()),
        epochs_run: 0,
        graph_build_seconds: 0.0,
        train_seconds: 0.0,
    };

    for chunk in &chunk_list {
        let idx: Vec<usize> = chunk.positions().map(|p| order[p]).collect();
        let x = gather_rows(features, &idx);
        let y = gather_labels(labels, &idx);

        let t_graph = Instant::now();
        let nl = chunk_graph(x.view(), hp, chunk.ordinal)?;
        report.graph_build_seconds += t_graph.elapsed().as_secs_f64();

        let t_train = Instant::now();
        let mut dropout_rng =
            ChaCha8Rng::seed_from_u64(derived_seed(hp.seed, DROPOUT_STREAM, chunk.ordinal as u64));
        let mut s = vec![1.0; x.nrows()];
        let mut losses = Vec::with_capacity(hp.epochs_per_chunk);
        for epoch in 0..hp.epochs_per_chunk {
            if epoch > 0 {
                let probs = model_forward(x.view(), &nl, &model, hp.dropout, false, None)?;
                s = confidence_scores(probs.view());
            }
            let (grads, loss) = compute_gradients(
                &model,
                x.view(),
                &nl,
                &y,
                &s,
                hp.dropout,
                Some(&mut dropout_rng),
            )?;
            if !loss.is_finite() || !grads.squared_norm().is_finite() {
                return Err(GaisError::DivergedTraining { chunk: chunk.ordinal });
            }
            adam.apply(&mut model, &grads);
            losses.push(loss);
            report.epochs_run += 1;
        }
        report.train_seconds += t_train.elapsed().as_secs_f64();
        report.per_chunk_losses.push(losses);
    }

    Ok((model, report))
}

/// Instances whose score clears the threshold, ascending.
pub fn threshold_selection(scores: &[f64], theta_c: f64) -> Vec<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= theta_c)
        .map(|(i, _)| i)
        .collect()
}

/// Scores every training instance with the trained model and keeps those
/// with confidence ≥ θ_c. Chunk graphs are rebuilt with the training-time
/// seeds; an instance covered by several chunks keeps its maximum score.
/// `prior_seconds` carries wall-clock already spent on earlier pipeline
/// phases into the reported t_is_seconds.
pub fn select_instances(
    model: &GatModel,
    features: ArrayView2<f64>,
    hp: &GatHyperParams,
    chunks: &ChunkSpec,
    prior_seconds: f64,
) -> Result<SelectionResult> {
    let started = Instant::now();
    let n = features.nrows();
    let order = shuffle_indices(n, hp.seed);
    let chunk_list = make_chunks(n, chunks)?;

    let mut best = vec![f64::NEG_INFINITY; n];
    for chunk in &chunk_list {
        let idx: Vec<usize> = chunk.positions().map(|p| order[p]).collect();
        let x = gather_rows(features, &idx);
        let nl = chunk_graph(x.view(), hp, chunk.ordinal)?;
        let probs = model_forward(x.view(), &nl, model, hp.dropout, false, None)?;
        let scores = confidence_scores(probs.view());
        for (local, &orig) in idx.iter().enumerate() {
            best[orig] = best[orig].max(scores[local]);
        }
    }

    let selected_idx = threshold_selection(&best, hp.theta_c);
    let mut result = SelectionResult::from_indices(
        selected_idx,
        n,
        prior_seconds + started.elapsed().as_secs_f64(),
    );
    result.theta_c = Some(hp.theta_c);
    Ok(result)
}

/// Full GAIS pass over a training set: train, then select. The returned
/// t_is_seconds covers `prior_seconds` plus training and selection.
pub fn gais_select(
    features: ArrayView2<f64>,
    labels: &[usize],
    class_count: usize,
    hp: &GatHyperParams,
    chunks: &ChunkSpec,
    prior_seconds: f64,
) -> Result<(GatModel, TrainReport, SelectionResult)> {
    let started = Instant::now();
    let (model, report) = train_sequential(features, labels, class_count, hp, chunks)?;
    let selection = select_instances(
        &model,
        features,
        hp,
        chunks,
        prior_seconds + started.elapsed().as_secs_f64(),
    )?;
    Ok((model, report, selection))
}
