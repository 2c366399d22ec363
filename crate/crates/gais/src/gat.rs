//! Two-layer multi-head graph attention network with exact analytic
//! gradients of the confidence-weighted negative log-likelihood.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GaisError, Result};
use crate::graph::{DistanceMetric, NeighborList};

const LEAKY_SLOPE: f64 = 0.2;
const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatHyperParams {
    pub hidden_dim: usize,
    pub input_heads: usize,
    pub output_heads: usize,
    pub dropout: f64,
    pub metric: DistanceMetric,
    pub theta_r: f64,
    pub theta_s: f64,
    pub theta_c: f64,
    pub learning_rate: f64,
    pub epochs_per_chunk: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for GatHyperParams {
    fn default() -> Self {
        Self {
            hidden_dim: 8,
            input_heads: 8,
            output_heads: 1,
            dropout: 0.1,
            metric: DistanceMetric::Euclidean,
            theta_r: 0.2,
            theta_s: 0.5,
            theta_c: 0.7,
            learning_rate: 0.005,
            epochs_per_chunk: 200,
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

impl GatHyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim < 1 || self.input_heads < 1 || self.output_heads < 1 {
            return Err(GaisError::InvalidConfig(
                "hidden_dim and head counts must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(GaisError::InvalidConfig(format!(
                "dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        // theta_s above 1 disables all non-self edges and theta_r above 1
        // removes every candidate; both are meaningful, so only reject
        // non-finite or negative thresholds.
        for (name, v) in [("theta_r", self.theta_r), ("theta_s", self.theta_s)] {
            if !v.is_finite() || v < 0.0 {
                return Err(GaisError::InvalidConfig(format!(
                    "{name} must be a finite nonnegative value"
                )));
            }
        }
        if !self.theta_c.is_finite() || self.theta_c < 0.0 {
            return Err(GaisError::InvalidConfig("theta_c must be finite and nonnegative".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(GaisError::InvalidConfig(
                "learning_rate must be positive and weight_decay nonnegative".into(),
            ));
        }
        if self.epochs_per_chunk == 0 {
            return Err(GaisError::InvalidConfig("epochs_per_chunk must be at least 1".into()));
        }
        Ok(())
    }
}

/// One attention head: a linear map and the attention vector split as
/// a = [a_src ∥ a_dst], each half of length `w.nrows()`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w: Array2<f64>,
    pub a: Array1<f64>,
}

/// Two-layer model: layer-1 heads concatenate, layer-2 heads average.
#[derive(Debug, Clone, PartialEq)]
pub struct GatModel {
    pub input_dim: usize,
    pub class_count: usize,
    pub layer1: Vec<HeadParams>,
    pub layer2: Vec<HeadParams>,
}

impl GatModel {
    /// Glorot-uniform initialization, deterministic in the seed. Draw order
    /// is layer 1 head by head (w row-major, then a), then layer 2.
    pub fn init(input_dim: usize, class_count: usize, hp: &GatHyperParams) -> Result<GatModel> {
        hp.validate()?;
        if input_dim == 0 || class_count < 2 {
            return Err(GaisError::InvalidConfig(format!(
                "need input_dim >= 1 and class_count >= 2, got {input_dim} and {class_count}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        let h = hp.hidden_dim;
        let layer1 = (0..hp.input_heads)
            .map(|_| sample_head(h, input_dim, &mut rng))
            .collect();
        let layer2 = (0..hp.output_heads)
            .map(|_| sample_head(class_count, h * hp.input_heads, &mut rng))
            .collect();
        Ok(GatModel { input_dim, class_count, layer1, layer2 })
    }

    pub fn hidden_dim(&self) -> usize {
        self.layer1[0].w.nrows()
    }

    pub(crate) fn tensor_count(&self) -> usize {
        2 * (self.layer1.len() + self.layer2.len())
    }

    pub(crate) fn tensor(&self, t: usize) -> &[f64] {
        let (layer, head, is_a) = tensor_index(t, self.layer1.len());
        let hp = if layer == 0 { &self.layer1[head] } else { &self.layer2[head] };
        if is_a {
            hp.a.as_slice().unwrap()
        } else {
            hp.w.as_slice().unwrap()
        }
    }

    pub(crate) fn tensor_mut(&mut self, t: usize) -> &mut [f64] {
        let (layer, head, is_a) = tensor_index(t, self.layer1.len());
        let hp = if layer == 0 { &mut self.layer1[head] } else { &mut self.layer2[head] };
        if is_a {
            hp.a.as_slice_mut().unwrap()
        } else {
            hp.w.as_slice_mut().unwrap()
        }
    }
}

fn tensor_index(t: usize, n_layer1: usize) -> (usize, usize, bool) {
    let (layer, local) = if t < 2 * n_layer1 { (0, t) } else { (1, t - 2 * n_layer1) };
    (layer, local / 2, local % 2 == 1)
}

fn sample_head(d_out: usize, d_in: usize, rng: &mut ChaCha8Rng) -> HeadParams {
    let limit_w = (6.0 / (d_in + d_out) as f64).sqrt();
    let w = Array2::from_shape_fn((d_out, d_in), |_| rng.random_range(-limit_w..limit_w));
    let limit_a = (6.0 / (2 * d_out + 1) as f64).sqrt();
    let a = Array1::from_shape_fn(2 * d_out, |_| rng.random_range(-limit_a..limit_a));
    HeadParams { w, a }
}

/// Per-instance confidence weights in [1/C, 1].
pub type ConfidenceScores = Vec<f64>;

/// s_i = max class probability of row i.
pub fn confidence_scores(probs: ArrayView2<f64>) -> ConfidenceScores {
    probs
        .rows()
        .into_iter()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// L_w = (1/m) Σ_i s_i · (−log ŷ_{i,y_i}), with the log argument clamped
/// at 1e-12.
pub fn weighted_nll_loss(probs: ArrayView2<f64>, labels: &[usize], s: &[f64]) -> Result<f64> {
    let (m, c) = (probs.nrows(), probs.ncols());
    if labels.len() != m || s.len() != m {
        return Err(GaisError::ShapeError(format!(
            "loss over {m} rows given {} labels and {} weights",
            labels.len(),
            s.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..m {
        if labels[i] >= c {
            return Err(GaisError::InvalidLabel { label: labels[i], classes: c });
        }
        total += s[i] * -(probs[[i, labels[i]]].max(LOG_CLAMP)).ln();
    }
    Ok(total / m as f64)
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn elu_prime(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

fn leaky_relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_relu_prime(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

fn row_softmax_inplace(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Inverted-dropout keep factors: 0 with probability δ, else 1/(1−δ).
fn keep_factor(delta: f64, rng: &mut ChaCha8Rng) -> f64 {
    if rng.random::<f64>() < delta {
        0.0
    } else {
        1.0 / (1.0 - delta)
    }
}

fn keep_matrix(rows: usize, cols: usize, delta: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| keep_factor(delta, rng))
}

fn keep_slots(count: usize, delta: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..count).map(|_| keep_factor(delta, rng)).collect()
}

struct HeadCache {
    /// Linearly transformed inputs, one row per node.
    g: Array2<f64>,
    /// Pre-LeakyReLU attention scores per slot.
    u: Vec<f64>,
    /// Post-softmax coefficients per slot, before attention dropout.
    alpha: Vec<f64>,
    /// Keep factors per slot in train mode; absent in eval.
    att_keep: Option<Vec<f64>>,
    /// Aggregated head output, one row per node.
    out: Array2<f64>,
}

struct ForwardCache {
    x_dropped: Array2<f64>,
    l1: Vec<HeadCache>,
    p1: Array2<f64>,
    z1_dropped: Array2<f64>,
    mask_z: Option<Array2<f64>>,
    l2: Vec<HeadCache>,
}

fn head_forward(
    x: ArrayView2<f64>,
    nl: &NeighborList,
    w: &Array2<f64>,
    a: &Array1<f64>,
    att_keep: Option<Vec<f64>>,
) -> Result<HeadCache> {
    let d_out = w.nrows();
    if x.ncols() != w.ncols() {
        return Err(GaisError::ShapeError(format!(
            "head expects {} input columns, got {}",
            w.ncols(),
            x.ncols()
        )));
    }
    if a.len() != 2 * d_out {
        return Err(GaisError::ShapeError(format!(
            "attention vector length {} does not match 2x{d_out}",
            a.len()
        )));
    }
    let m = x.nrows();
    if nl.node_count() != m {
        return Err(GaisError::ShapeError(format!(
            "graph has {} nodes, features have {m} rows",
            nl.node_count()
        )));
    }

    let g = x.dot(&w.t());
    let a_src = a.slice(s![..d_out]);
    let a_dst = a.slice(s![d_out..]);
    let su = g.dot(&a_src);
    let tu = g.dot(&a_dst);

    let slots = nl.slot_count();
    let mut u = vec![0.0; slots];
    let mut alpha = vec![0.0; slots];
    for i in 0..m {
        let range = nl.slots(i);
        let mut max = f64::NEG_INFINITY;
        for e in range.clone() {
            u[e] = su[i] + tu[nl.targets[e]];
            max = max.max(leaky_relu(u[e]));
        }
        let mut sum = 0.0;
        for e in range.clone() {
            let v = (leaky_relu(u[e]) - max).exp();
            alpha[e] = v;
            sum += v;
        }
        for e in range {
            alpha[e] /= sum;
        }
    }

    let mut out = Array2::zeros((m, d_out));
    for i in 0..m {
        for e in nl.slots(i) {
            let j = nl.targets[e];
            let coeff = match &att_keep {
                Some(keep) => alpha[e] * keep[e],
                None => alpha[e],
            };
            if coeff != 0.0 {
                let gj = g.row(j);
                let mut oi = out.row_mut(i);
                for (o, &v) in oi.iter_mut().zip(gj.iter()) {
                    *o += coeff * v;
                }
            }
        }
    }

    Ok(HeadCache { g, u, alpha, att_keep, out })
}

/// Post-softmax attention coefficients per directed slot of the graph's
/// neighbor list (slot order). In train mode with δ > 0, dropout is applied
/// after the softmax without renormalization, so rows then sum to less
/// than 1 in expectation.
pub fn attention_coefficients(
    x: ArrayView2<f64>,
    nl: &NeighborList,
    w: &Array2<f64>,
    a: &Array1<f64>,
    delta: f64,
    train_mode: bool,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GaisError::NonFiniteInput);
    }
    let att_keep = dropout_slots(nl.slot_count(), delta, train_mode, rng)?;
    let cache = head_forward(x, nl, w, a, att_keep)?;
    Ok(match cache.att_keep {
        Some(keep) => cache.alpha.iter().zip(&keep).map(|(a, k)| a * k).collect(),
        None => cache.alpha,
    })
}

fn dropout_slots(
    count: usize,
    delta: f64,
    train_mode: bool,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Option<Vec<f64>>> {
    if !train_mode || delta == 0.0 {
        return Ok(None);
    }
    match rng {
        Some(rng) => Ok(Some(keep_slots(count, delta, rng))),
        None => Err(GaisError::InvalidConfig(
            "train-mode dropout requires a random stream".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMode {
    Concat,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Elu,
    None,
}

/// One attention layer over an arbitrary head list. Input dropout precedes
/// the linear map and attention dropout follows the softmax, both only in
/// train mode.
pub fn gat_layer_forward(
    x: ArrayView2<f64>,
    nl: &NeighborList,
    heads: &[HeadParams],
    mode: HeadMode,
    activation: Activation,
    delta: f64,
    train_mode: bool,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Array2<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GaisError::NonFiniteInput);
    }
    if heads.is_empty() {
        return Err(GaisError::InvalidConfig("layer needs at least one head".into()));
    }
    let x_in = if train_mode && delta > 0.0 {
        let rng = rng
            .as_mut()
            .ok_or_else(|| GaisError::InvalidConfig("train-mode dropout requires a random stream".into()))?;
        &x * &keep_matrix(x.nrows(), x.ncols(), delta, rng)
    } else {
        x.to_owned()
    };

    let d_out = heads[0].w.nrows();
    let m = x.nrows();
    let mut out = match mode {
        HeadMode::Concat => Array2::zeros((m, d_out * heads.len())),
        HeadMode::Average => Array2::zeros((m, d_out)),
    };
    for (k, head) in heads.iter().enumerate() {
        if head.w.nrows() != d_out {
            return Err(GaisError::ShapeError("head output dims differ".into()));
        }
        let att_keep = dropout_slots(
            nl.slot_count(),
            delta,
            train_mode,
            rng.as_mut().map(|r| &mut **r),
        )?;
        let cache = head_forward(x_in.view(), nl, &head.w, &head.a, att_keep)?;
        match mode {
            HeadMode::Concat => out
                .slice_mut(s![.., k * d_out..(k + 1) * d_out])
                .assign(&cache.out),
            HeadMode::Average => out += &cache.out,
        }
    }
    if mode == HeadMode::Average {
        out /= heads.len() as f64;
    }
    if activation == Activation::Elu {
        out.mapv_inplace(elu);
    }
    Ok(out)
}

fn forward_full(
    x: ArrayView2<f64>,
    nl: &NeighborList,
    model: &GatModel,
    delta: f64,
    train_mode: bool,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(Array2<f64>, ForwardCache)> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GaisError::NonFiniteInput);
    }
    if x.ncols() != model.input_dim {
        return Err(GaisError::ShapeError(format!(
            "model expects {} features, got {}",
            model.input_dim,
            x.ncols()
        )));
    }
    let dropping = train_mode && delta > 0.0;
    if dropping && rng.is_none() {
        return Err(GaisError::InvalidConfig(
            "train-mode dropout requires a random stream".into(),
        ));
    }
    let m = x.nrows();
    let h = model.hidden_dim();

    let x_dropped = if dropping {
        let rng = rng.as_mut().unwrap();
        &x * &keep_matrix(m, x.ncols(), delta, rng)
    } else {
        x.to_owned()
    };

    let mut l1 = Vec::with_capacity(model.layer1.len());
    for head in &model.layer1 {
        let att_keep = dropout_slots(
            nl.slot_count(),
            delta,
            train_mode,
            rng.as_mut().map(|r| &mut **r),
        )?;
        l1.push(head_forward(x_dropped.view(), nl, &head.w, &head.a, att_keep)?);
    }

    let mut p1 = Array2::zeros((m, h * model.layer1.len()));
    for (k, cache) in l1.iter().enumerate() {
        p1.slice_mut(s![.., k * h..(k + 1) * h]).assign(&cache.out);
    }
    let z1 = p1.mapv(elu);

    let (z1_dropped, mask_z) = if dropping {
        let rng = rng.as_mut().unwrap();
        let mask = keep_matrix(m, z1.ncols(), delta, rng);
        (&z1 * &mask, Some(mask))
    } else {
        (z1, None)
    };

    let mut l2 = Vec::with_capacity(model.layer2.len());
    let mut logits = Array2::zeros((m, model.class_count));
    for head in &model.layer2 {
        let att_keep = dropout_slots(
            nl.slot_count(),
            delta,
            train_mode,
            rng.as_mut().map(|r| &mut **r),
        )?;
        let cache = head_forward(z1_dropped.view(), nl, &head.w, &head.a, att_keep)?;
        logits += &cache.out;
        l2.push(cache);
    }
    logits /= model.layer2.len() as f64;
    row_softmax_inplace(&mut logits);

    Ok((logits, ForwardCache { x_dropped, l1, p1, z1_dropped, mask_z, l2 }))
}

/// Class probabilities per node: softmax over layer-2 head-averaged logits.
pub fn model_forward(
    x: ArrayView2<f64>,
    nl: &NeighborList,
    model: &GatModel,
    delta: f64,
    train_mode: bool,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Array2<f64>> {
    forward_full(x, nl, model, delta, train_mode, rng).map(|(probs, _)| probs)
}

/// Gradients of every parameter tensor, shaped like the model.
#[derive(Debug, Clone)]
pub struct GatGradients {
    pub layer1: Vec<HeadParams>,
    pub layer2: Vec<HeadParams>,
}

impl GatGradients {
    pub(crate) fn tensor(&self, t: usize) -> &[f64] {
        let (layer, head, is_a) = tensor_index(t, self.layer1.len());
        let hp = if layer == 0 { &self.layer1[head] } else { &self.layer2[head] };
        if is_a {
            hp.a.as_slice().unwrap()
        } else {
            hp.w.as_slice().unwrap()
        }
    }

    /// Sum of squared entries over all tensors.
    pub fn squared_norm(&self) -> f64 {
        self.layer1
            .iter()
            .chain(&self.layer2)
            .map(|h| h.w.iter().map(|v| v * v).sum::<f64>() + h.a.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}

struct HeadBackward {
    dw: Array2<f64>,
    da: Array1<f64>,
    dx: Option<Array2<f64>>,
}

fn head_backward(
    w: &Array2<f64>,
    a: &Array1<f64>,
    cache: &HeadCache,
    x_in: ArrayView2<f64>,
    dout: ArrayView2<f64>,
    nl: &NeighborList,
    want_dx: bool,
) -> HeadBackward {
    let m = x_in.nrows();
    let d_out = cache.g.ncols();
    let a_src = a.slice(s![..d_out]);
    let a_dst = a.slice(s![d_out..]);

    let mut dg: Array2<f64> = Array2::zeros((m, d_out));
    let slots = nl.slot_count();
    let mut dalpha = vec![0.0; slots];

    // Aggregation: out_i = Σ_e α'_e g_j with α' the post-dropout coefficient.
    for i in 0..m {
        let di = dout.row(i);
        for e in nl.slots(i) {
            let j = nl.targets[e];
            let coeff = match &cache.att_keep {
                Some(keep) => cache.alpha[e] * keep[e],
                None => cache.alpha[e],
            };
            let gj = cache.g.row(j);
            dalpha[e] = di.iter().zip(gj.iter()).map(|(d, g)| d * g).sum();
            if coeff != 0.0 {
                let mut dgj = dg.row_mut(j);
                for (t, &d) in dgj.iter_mut().zip(di.iter()) {
                    *t += coeff * d;
                }
            }
        }
    }

    // Through attention dropout: scale by the same keep factor.
    if let Some(keep) = &cache.att_keep {
        for (d, k) in dalpha.iter_mut().zip(keep) {
            *d *= k;
        }
    }

    // Softmax rows, then the LeakyReLU on the raw scores.
    let mut du = vec![0.0; slots];
    for i in 0..m {
        let range = nl.slots(i);
        let inner: f64 = range.clone().map(|e| cache.alpha[e] * dalpha[e]).sum();
        for e in range {
            let de = cache.alpha[e] * (dalpha[e] - inner);
            du[e] = de * leaky_relu_prime(cache.u[e]);
        }
    }

    // u_e = a_src·g_i + a_dst·g_j splits into per-source and per-target sums.
    let mut dsum_src = Array1::zeros(m);
    let mut dsum_dst = Array1::zeros(m);
    for i in 0..m {
        for e in nl.slots(i) {
            dsum_src[i] += du[e];
            dsum_dst[nl.targets[e]] += du[e];
        }
    }

    let da_src = cache.g.t().dot(&dsum_src);
    let da_dst = cache.g.t().dot(&dsum_dst);
    let mut da = Array1::zeros(2 * d_out);
    da.slice_mut(s![..d_out]).assign(&da_src);
    da.slice_mut(s![d_out..]).assign(&da_dst);

    for i in 0..m {
        let (si, ti) = (dsum_src[i], dsum_dst[i]);
        if si != 0.0 || ti != 0.0 {
            let mut dgi = dg.row_mut(i);
            for (t, (&asv, &adv)) in dgi.iter_mut().zip(a_src.iter().zip(a_dst.iter())) {
                *t += si * asv + ti * adv;
            }
        }
    }

    let dw = dg.t().dot(&x_in);
    let dx = want_dx.then(|| dg.dot(w));
    HeadBackward { dw, da, dx }
}

/// Exact gradients of the weighted loss for a train-mode forward pass.
/// Confidence weights are constants: no gradient flows through them.
/// Returns the loss of the same pass.
pub fn compute_gradients(
    model: &GatModel,
    x: ArrayView2<f64>,
    nl: &NeighborList,
    labels: &[usize],
    s: &[f64],
    delta: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(GatGradients, f64)> {
    let (probs, cache) = forward_full(x, nl, model, delta, true, rng)?;
    let loss = weighted_nll_loss(probs.view(), labels, s)?;

    let m = x.nrows();
    let c = model.class_count;
    // d loss / d logits for the mean of s_i · (−log softmax). Rows whose
    // true-class probability hit the log clamp are locally constant.
    let mut dlogits = Array2::zeros((m, c));
    for i in 0..m {
        if probs[[i, labels[i]]] <= LOG_CLAMP {
            continue;
        }
        let scale = s[i] / m as f64;
        for k in 0..c {
            let one = if k == labels[i] { 1.0 } else { 0.0 };
            dlogits[[i, k]] = scale * (probs[[i, k]] - one);
        }
    }
    dlogits /= model.layer2.len() as f64;

    let mut dz1_dropped: Array2<f64> = Array2::zeros(cache.z1_dropped.raw_dim());
    let mut layer2_grads = Vec::with_capacity(model.layer2.len());
    for (head, hc) in model.layer2.iter().zip(&cache.l2) {
        let hb = head_backward(
            &head.w,
            &head.a,
            hc,
            cache.z1_dropped.view(),
            dlogits.view(),
            nl,
            true,
        );
        dz1_dropped += &hb.dx.unwrap();
        layer2_grads.push(HeadParams { w: hb.dw, a: hb.da });
    }

    let mut dp1 = dz1_dropped;
    if let Some(mask) = &cache.mask_z {
        dp1 *= mask;
    }
    ndarray::Zip::from(&mut dp1).and(&cache.p1).for_each(|d, &p| *d *= elu_prime(p));

    let h = model.hidden_dim();
    let mut layer1_grads = Vec::with_capacity(model.layer1.len());
    for (k, (head, hc)) in model.layer1.iter().zip(&cache.l1).enumerate() {
        let dout = dp1.slice(s![.., k * h..(k + 1) * h]);
        let hb = head_backward(&head.w, &head.a, hc, cache.x_dropped.view(), dout, nl, false);
        layer1_grads.push(HeadParams { w: hb.dw, a: hb.da });
    }

    Ok((GatGradients { layer1: layer1_grads, layer2: layer2_grads }, loss))
}

/// Central finite-difference verification of `compute_gradients` with δ=0.
/// Returns the worst relative error over every parameter, with the
/// denominator floored at 1e-5 so near-zero gradients compare by absolute
/// difference.
pub fn max_relative_fd_error(
    model: &GatModel,
    x: ArrayView2<f64>,
    nl: &NeighborList,
    labels: &[usize],
    s: &[f64],
    eps: f64,
) -> Result<f64> {
    let (grads, _) = compute_gradients(model, x, nl, labels, s, 0.0, None)?;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for t in 0..model.tensor_count() {
        for k in 0..model.tensor(t).len() {
            let orig = probe.tensor(t)[k];
            probe.tensor_mut(t)[k] = orig + eps;
            let lp = eval_loss(&probe, x, nl, labels, s)?;
            probe.tensor_mut(t)[k] = orig - eps;
            let lm = eval_loss(&probe, x, nl, labels, s)?;
            probe.tensor_mut(t)[k] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let an = grads.tensor(t)[k];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-5);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn eval_loss(
    model: &GatModel,
    x: ArrayView2<f64>,
    nl: &NeighborList,
    labels: &[usize],
    s: &[f64],
) -> Result<f64> {
    let probs = model_forward(x, nl, model, 0.0, false, None)?;
    weighted_nll_loss(probs.view(), labels, s)
}

#[derive(Serialize, Deserialize)]
struct TensorBits {
    shape: Vec<usize>,
    bits: Vec<u64>,
}

impl TensorBits {
    fn from_matrix(m: &Array2<f64>) -> Self {
        Self {
            shape: vec![m.nrows(), m.ncols()],
            bits: m.iter().map(|v| v.to_bits()).collect(),
        }
    }

    fn from_vector(v: &Array1<f64>) -> Self {
        Self { shape: vec![v.len()], bits: v.iter().map(|x| x.to_bits()).collect() }
    }

    fn to_matrix(&self) -> Result<Array2<f64>> {
        if self.shape.len() != 2 || self.shape[0] * self.shape[1] != self.bits.len() {
            return Err(GaisError::InvalidConfig("checkpoint tensor shape mismatch".into()));
        }
        Array2::from_shape_vec(
            (self.shape[0], self.shape[1]),
            self.bits.iter().map(|b| f64::from_bits(*b)).collect(),
        )
        .map_err(|e| GaisError::ShapeError(e.to_string()))
    }

    fn to_vector(&self) -> Result<Array1<f64>> {
        if self.shape.len() != 1 || self.shape[0] != self.bits.len() {
            return Err(GaisError::InvalidConfig("checkpoint tensor shape mismatch".into()));
        }
        Ok(Array1::from_vec(self.bits.iter().map(|b| f64::from_bits(*b)).collect()))
    }
}

#[derive(Serialize, Deserialize)]
struct HeadBits {
    w: TensorBits,
    a: TensorBits,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    hyperparams: GatHyperParams,
    input_dim: usize,
    class_count: usize,
    layer1: Vec<HeadBits>,
    layer2: Vec<HeadBits>,
}

/// Serializes parameters with exact f64 bit patterns; loading reproduces
/// the model bit for bit.
pub fn save_checkpoint(model: &GatModel, hp: &GatHyperParams, path: &Path) -> Result<()> {
    let file = CheckpointFile {
        hyperparams: *hp,
        input_dim: model.input_dim,
        class_count: model.class_count,
        layer1: model
            .layer1
            .iter()
            .map(|h| HeadBits { w: TensorBits::from_matrix(&h.w), a: TensorBits::from_vector(&h.a) })
            .collect(),
        layer2: model
            .layer2
            .iter()
            .map(|h| HeadBits { w: TensorBits::from_matrix(&h.w), a: TensorBits::from_vector(&h.a) })
            .collect(),
    };
    let text = serde_json::to_string(&file)
        .map_err(|e| GaisError::InvalidConfig(format!("checkpoint encode: {e}")))?;
    std::fs::write(path, text).map_err(|source| GaisError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<(GatModel, GatHyperParams)> {
    let text = std::fs::read_to_string(path).map_err(|source| GaisError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| GaisError::InvalidConfig(format!("checkpoint parse: {e}")))?;
    let rebuild = |heads: &[HeadBits]| -> Result<Vec<HeadParams>> {
        heads
            .iter()
            .map(|h| Ok(HeadParams { w: h.w.to_matrix()?, a: h.a.to_vector()? }))
            .collect()
    };
    let model = GatModel {
        input_dim: file.input_dim,
        class_count: file.class_count,
        layer1: rebuild(&file.layer1)?,
        layer2: rebuild(&file.layer2)?,
    };
    if model.layer1.is_empty()
        || model.layer2.is_empty()
        || model.layer1.iter().any(|h| h.a.len() != 2 * h.w.nrows())
        || model.layer2.iter().any(|h| h.a.len() != 2 * h.w.nrows())
        || model.layer1[0].w.ncols() != model.input_dim
        || model.layer2[0].w.ncols() != model.hidden_dim() * model.layer1.len()
        || model.layer2[0].w.nrows() != model.class_count
    {
        return Err(GaisError::InvalidConfig("checkpoint shapes are inconsistent".into()));
    }
    Ok((model, file.hyperparams))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, pairwise_distance, to_similarity, Graph};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn complete_graph(n: usize) -> NeighborList {
        let edges = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j, 1.0)))
            .collect();
        Graph { node_count: n, edges }.neighbor_list()
    }

    fn random_model(p: usize, c: usize, h: usize, n_in: usize, n_out: usize, seed: u64) -> GatModel {
        let hp = GatHyperParams {
            hidden_dim: h,
            input_heads: n_in,
            output_heads: n_out,
            seed,
            ..GatHyperParams::default()
        };
        GatModel::init(p, c, &hp).unwrap()
    }

    fn random_case(
        seed: u64,
        m: usize,
        p: usize,
        c: usize,
    ) -> (Array2<f64>, NeighborList, Vec<usize>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((m, p), |_| rng.random::<f64>());
        let d = pairwise_distance(x.view(), DistanceMetric::Euclidean).unwrap();
        let s = to_similarity(d, DistanceMetric::Euclidean);
        let g = build_graph(s.view(), 0.3, 0.2, seed ^ 0x5c).unwrap();
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..c)).collect();
        let weights: Vec<f64> = (0..m)
            .map(|_| 1.0 / c as f64 + rng.random::<f64>() * (1.0 - 1.0 / c as f64))
            .collect();
        (x, g.neighbor_list(), labels, weights)
    }

    #[test]
    fn lone_node_attends_to_itself() {
        let g = Graph { node_count: 1, edges: vec![] };
        let nl = g.neighbor_list();
        let x = array![[0.3, 0.7]];
        let w = array![[0.5, -0.2], [0.1, 0.4]];
        let a = array![0.3, -0.1, 0.2, 0.6];
        let alpha = attention_coefficients(x.view(), &nl, &w, &a, 0.0, false, None).unwrap();
        assert_eq!(alpha, vec![1.0]);
    }

    #[test]
    fn identical_neighbors_split_attention_evenly() {
        let g = Graph { node_count: 2, edges: vec![(0, 1, 1.0)] };
        let nl = g.neighbor_list();
        let x = array![[0.4, 0.9], [0.4, 0.9]];
        let w = array![[0.5, -0.2], [0.1, 0.4]];
        let a = array![0.3, -0.1, 0.2, 0.6];
        let alpha = attention_coefficients(x.view(), &nl, &w, &a, 0.0, false, None).unwrap();
        for &v in &alpha {
            assert_abs_diff_eq!(v, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        for seed in 0..5u64 {
            let (x, nl, _, _) = random_case(seed, 9, 4, 2);
            let model = random_model(4, 2, 3, 2, 1, seed);
            let alpha = attention_coefficients(
                x.view(),
                &nl,
                &model.layer1[0].w,
                &model.layer1[0].a,
                0.0,
                false,
                None,
            )
            .unwrap();
            for i in 0..nl.node_count() {
                let sum: f64 = nl.slots(i).map(|e| alpha[e]).sum();
                assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn identity_head_passes_features_through() {
        let g = Graph { node_count: 1, edges: vec![] };
        let nl = g.neighbor_list();
        let x = array![[0.3, -0.8]];
        let heads = [HeadParams { w: Array2::eye(2), a: Array1::zeros(4) }];
        let out = gat_layer_forward(
            x.view(),
            &nl,
            &heads,
            HeadMode::Concat,
            Activation::None,
            0.0,
            false,
            None,
        )
        .unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn elu_matches_definition() {
        let g = Graph { node_count: 1, edges: vec![] };
        let nl = g.neighbor_list();
        let x = array![[1.0]];
        let heads = [HeadParams { w: array![[-1.0]], a: Array1::zeros(2) }];
        let out = gat_layer_forward(
            x.view(),
            &nl,
            &heads,
            HeadMode::Concat,
            Activation::Elu,
            0.0,
            false,
            None,
        )
        .unwrap();
        assert_abs_diff_eq!(out[[0, 0]], (-1.0f64).exp() - 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[[0, 0]], -0.6321, epsilon = 1e-4);
    }

    #[test]
    fn concat_mode_stacks_head_columns() {
        let nl = complete_graph(3);
        let x = Array2::from_shape_fn((3, 5), |(i, j)| (i + j) as f64 * 0.1);
        let head = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            HeadParams {
                w: Array2::from_shape_fn((4, 5), |_| rng.random::<f64>() - 0.5),
                a: Array1::from_shape_fn(8, |_| rng.random::<f64>() - 0.5),
            }
        };
        let heads = [head(1), head(2)];
        let out = gat_layer_forward(
            x.view(),
            &nl,
            &heads,
            HeadMode::Concat,
            Activation::Elu,
            0.0,
            false,
            None,
        )
        .unwrap();
        assert_eq!(out.shape(), &[3, 8]);
    }

    #[test]
    fn zero_parameters_predict_uniform() {
        let nl = complete_graph(4);
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64 * 0.05);
        let mut model = random_model(3, 3, 4, 2, 2, 0);
        for t in 0..model.tensor_count() {
            model.tensor_mut(t).iter_mut().for_each(|v| *v = 0.0);
        }
        let probs = model_forward(x.view(), &nl, &model, 0.0, false, None).unwrap();
        for v in probs.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn probability_rows_sum_to_one() {
        for seed in 0..5u64 {
            let (x, nl, _, _) = random_case(seed + 20, 10, 5, 3);
            let model = random_model(5, 3, 4, 2, 2, seed);
            let probs = model_forward(x.view(), &nl, &model, 0.0, false, None).unwrap();
            for row in probs.rows() {
                assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let (x, nl, _, _) = random_case(3, 8, 4, 2);
        let model = random_model(4, 2, 3, 2, 1, 3);
        let p1 = model_forward(x.view(), &nl, &model, 0.3, false, None).unwrap();
        let p2 = model_forward(x.view(), &nl, &model, 0.3, false, None).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn train_mode_dropout_needs_rng_and_perturbs_output() {
        let (x, nl, _, _) = random_case(4, 8, 4, 2);
        let model = random_model(4, 2, 3, 2, 1, 4);
        assert!(matches!(
            model_forward(x.view(), &nl, &model, 0.5, true, None),
            Err(GaisError::InvalidConfig(_))
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p_train = model_forward(x.view(), &nl, &model, 0.5, true, Some(&mut rng)).unwrap();
        let p_eval = model_forward(x.view(), &nl, &model, 0.5, false, None).unwrap();
        assert_ne!(p_train, p_eval);
        for row in p_train.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn loss_matches_hand_values() {
        let probs = array![[0.5, 0.5]];
        let l = weighted_nll_loss(probs.view(), &[0], &[1.0]).unwrap();
        assert_abs_diff_eq!(l, 0.6931, epsilon = 1e-4);
        let l = weighted_nll_loss(probs.view(), &[0], &[0.5]).unwrap();
        assert_abs_diff_eq!(l, 0.3466, epsilon = 1e-4);
        let perfect = array![[1.0, 0.0]];
        let l = weighted_nll_loss(perfect.view(), &[0], &[1.0]).unwrap();
        assert_abs_diff_eq!(l, 0.0);
    }

    #[test]
    fn loss_rejects_out_of_range_label() {
        let probs = array![[0.5, 0.5]];
        assert!(matches!(
            weighted_nll_loss(probs.view(), &[2], &[1.0]),
            Err(GaisError::InvalidLabel { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn unit_weights_reduce_to_mean_nll() {
        let (x, nl, labels, _) = random_case(9, 10, 4, 3);
        let model = random_model(4, 3, 4, 2, 1, 9);
        let probs = model_forward(x.view(), &nl, &model, 0.0, false, None).unwrap();
        let ones = vec![1.0; 10];
        let weighted = weighted_nll_loss(probs.view(), &labels, &ones).unwrap();
        let mean_nll: f64 = (0..10)
            .map(|i| -probs[[i, labels[i]]].max(1e-12).ln())
            .sum::<f64>()
            / 10.0;
        assert_eq!(weighted, mean_nll);
    }

    #[test]
    fn confidence_is_row_max() {
        let probs = array![[0.7, 0.3], [0.5, 0.5], [1.0, 0.0]];
        assert_eq!(confidence_scores(probs.view()), vec![0.7, 0.5, 1.0]);
        let (x, nl, _, _) = random_case(12, 9, 4, 3);
        let model = random_model(4, 3, 4, 2, 1, 12);
        let probs = model_forward(x.view(), &nl, &model, 0.0, false, None).unwrap();
        for s in confidence_scores(probs.view()) {
            assert!((1.0 / 3.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37) + 11);
            let m = rng.random_range(3..=12);
            let p = rng.random_range(1..=5);
            let c = rng.random_range(2..=3);
            let h = rng.random_range(1..=4);
            let n_in = rng.random_range(1..=2);
            let n_out = rng.random_range(1..=2);
            let (x, nl, labels, weights) = random_case(seed + 40, m, p, c);
            let model = random_model(p, c, h, n_in, n_out, seed + 7);
            let err =
                max_relative_fd_error(&model, x.view(), &nl, &labels, &weights, 1e-5).unwrap();
            assert!(err <= 1e-4, "seed {seed}: max relative error {err}");
        }
    }

    #[test]
    fn zero_attention_symmetric_pair_gradcheck() {
        // With a = 0 every raw score sits at the LeakyReLU kink, where the
        // loss has different one-sided slopes in `a` unless the node
        // features coincide. The symmetric pair keeps attention pinned at
        // 1/2 on both sides of the kink, so all gradients are well defined.
        let g = Graph { node_count: 2, edges: vec![(0, 1, 1.0)] };
        let nl = g.neighbor_list();
        let x = array![[0.4, 0.9], [0.4, 0.9]];
        let mut model = random_model(2, 2, 3, 1, 1, 5);
        for head in model.layer1.iter_mut().chain(model.layer2.iter_mut()) {
            head.a.fill(0.0);
        }
        let (grads, _) =
            compute_gradients(&model, x.view(), &nl, &[0, 1], &[1.0, 1.0], 0.0, None).unwrap();
        assert!(grads.squared_norm().is_finite());
        assert!(grads.squared_norm() > 0.0);
        let err =
            max_relative_fd_error(&model, x.view(), &nl, &[0, 1], &[1.0, 1.0], 1e-5).unwrap();
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_output_weights_still_learn_class_frequencies() {
        let nl = complete_graph(6);
        let x = Array2::from_shape_fn((6, 3), |(i, j)| ((i * 7 + j * 3) % 10) as f64 * 0.1);
        let mut model = random_model(3, 2, 4, 2, 1, 6);
        for head in model.layer2.iter_mut() {
            head.w.fill(0.0);
            head.a.fill(0.0);
        }
        let labels = [0, 0, 0, 0, 1, 1];
        let weights = vec![1.0; 6];
        let (grads, _) =
            compute_gradients(&model, x.view(), &nl, &labels, &weights, 0.0, None).unwrap();
        let w2_norm: f64 = grads.layer2[0].w.iter().map(|v| v * v).sum();
        assert!(w2_norm > 0.0, "layer-2 weight gradient vanished");
        let err =
            max_relative_fd_error(&model, x.view(), &nl, &labels, &weights, 1e-5).unwrap();
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn disconnected_twin_copies_leave_gradients_unchanged() {
        let (x, nl, labels, weights) = random_case(77, 5, 3, 2);
        let model = random_model(3, 2, 3, 2, 1, 77);
        let (g_single, _) =
            compute_gradients(&model, x.view(), &nl, &labels, &weights, 0.0, None).unwrap();

        // Duplicate nodes into a second disconnected component.
        let m = x.nrows();
        let mut x2 = Array2::zeros((2 * m, x.ncols()));
        x2.slice_mut(s![..m, ..]).assign(&x);
        x2.slice_mut(s![m.., ..]).assign(&x);
        let mut edges = Vec::new();
        for i in 0..m {
            for e in nl.slots(i) {
                let j = nl.targets[e];
                if j > i {
                    edges.push((i, j, 1.0));
                    edges.push((i + m, j + m, 1.0));
                }
            }
        }
        let nl2 = Graph { node_count: 2 * m, edges }.neighbor_list();
        let labels2: Vec<usize> = labels.iter().chain(&labels).copied().collect();
        let weights2: Vec<f64> = weights.iter().chain(&weights).copied().collect();
        let (g_double, _) =
            compute_gradients(&model, x2.view(), &nl2, &labels2, &weights2, 0.0, None).unwrap();

        for t in 0..model.tensor_count() {
            for (a, b) in g_single.tensor(t).iter().zip(g_double.tensor(t)) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn permuting_nodes_permutes_outputs() {
        let (x, nl, _, _) = random_case(31, 9, 4, 3);
        let model = random_model(4, 3, 4, 2, 2, 31);
        let probs = model_forward(x.view(), &nl, &model, 0.0, false, None).unwrap();

        let m = x.nrows();
        let perm: Vec<usize> = crate::dataset::shuffle_indices(m, 99);
        let mut inv = vec![0usize; m];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let xp = crate::dataset::gather_rows(x.view(), &perm);
        let mut edges = Vec::new();
        for i in 0..m {
            for e in nl.slots(i) {
                let j = nl.targets[e];
                if j > i {
                    let (pi, pj) = (inv[i], inv[j]);
                    edges.push((pi.min(pj), pi.max(pj), 1.0));
                }
            }
        }
        let nlp = Graph { node_count: m, edges }.neighbor_list();
        let probs_p = model_forward(xp.view(), &nlp, &model, 0.0, false, None).unwrap();
        for old in 0..m {
            for c in 0..3 {
                assert_abs_diff_eq!(probs_p[[inv[old], c]], probs[[old, c]], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let hp = GatHyperParams { hidden_dim: 5, input_heads: 3, output_heads: 2, seed: 13, ..Default::default() };
        let model = GatModel::init(7, 4, &hp).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(&model, &hp, f.path()).unwrap();
        let (loaded, hp2) = load_checkpoint(f.path()).unwrap();
        assert_eq!(hp, hp2);
        assert_eq!(model, loaded);
        for t in 0..model.tensor_count() {
            for (a, b) in model.tensor(t).iter().zip(loaded.tensor(t)) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn non_finite_features_rejected() {
        let nl = complete_graph(2);
        let x = array![[f64::INFINITY, 0.0], [0.0, 1.0]];
        let model = random_model(2, 2, 2, 1, 1, 0);
        assert!(matches!(
            model_forward(x.view(), &nl, &model, 0.0, false, None),
            Err(GaisError::NonFiniteInput)
        ));
    }

    #[test]
    fn invalid_hyperparams_rejected() {
        let hp = GatHyperParams { dropout: 1.0, ..Default::default() };
        assert!(hp.validate().is_err());
        let hp = GatHyperParams { hidden_dim: 0, ..Default::default() };
        assert!(GatModel::init(3, 2, &hp).is_err());
        let hp = GatHyperParams { epochs_per_chunk: 0, ..Default::default() };
        assert!(hp.validate().is_err());
    }
}
