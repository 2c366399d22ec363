//! Similarity-thresholded graph construction over chunk features.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GaisError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    Manhattan,
    Euclidean,
    Cosine,
}

impl DistanceMetric {
    pub const ALL: [DistanceMetric; 3] = [
        DistanceMetric::Manhattan,
        DistanceMetric::Euclidean,
        DistanceMetric::Cosine,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DistanceMetric::Manhattan => "manhattan",
            DistanceMetric::Euclidean => "euclidean",
            DistanceMetric::Cosine => "cosine",
        }
    }
}

impl std::str::FromStr for DistanceMetric {
    type Err = GaisError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "manhattan" => Ok(DistanceMetric::Manhattan),
            "euclidean" => Ok(DistanceMetric::Euclidean),
            "cosine" => Ok(DistanceMetric::Cosine),
            other => Err(GaisError::InvalidConfig(format!(
                "unknown metric {other:?}; expected manhattan, euclidean, or cosine"
            ))),
        }
    }
}

impl std::fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Symmetric pairwise distances with a zero diagonal. Cosine distance is
/// 1 − cos(angle); a zero-norm row is at distance 1 from everything except
/// itself.
pub fn pairwise_distance(x: ArrayView2<f64>, metric: DistanceMetric) -> Result<Array2<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GaisError::NonFiniteInput);
    }
    let m = x.nrows();
    let mut d = Array2::zeros((m, m));
    let norms: Vec<f64> = match metric {
        DistanceMetric::Cosine => x
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect(),
        _ => Vec::new(),
    };
    for i in 0..m {
        for j in i + 1..m {
            let (ri, rj) = (x.row(i), x.row(j));
            let dist = match metric {
                DistanceMetric::Manhattan => {
                    ri.iter().zip(rj.iter()).map(|(a, b)| (a - b).abs()).sum()
                }
                DistanceMetric::Euclidean => ri
                    .iter()
                    .zip(rj.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
                DistanceMetric::Cosine => {
                    if norms[i] == 0.0 || norms[j] == 0.0 {
                        1.0
                    } else {
                        let dot: f64 = ri.iter().zip(rj.iter()).map(|(a, b)| a * b).sum();
                        1.0 - (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
                    }
                }
            };
            d[[i, j]] = dist;
            d[[j, i]] = dist;
        }
    }
    Ok(d)
}

/// Maps distances to similarities in [0,1] with a unit diagonal: 1 − D for
/// cosine (negative similarities floor at 0), 1/(1+D) otherwise.
pub fn to_similarity(mut d: Array2<f64>, metric: DistanceMetric) -> Array2<f64> {
    d.mapv_inplace(|v| match metric {
        DistanceMetric::Cosine => (1.0 - v).clamp(0.0, 1.0),
        _ => 1.0 / (1.0 + v),
    });
    for i in 0..d.nrows() {
        d[[i, i]] = 1.0;
    }
    d
}

/// Undirected graph over chunk instances. Non-self edges are stored once
/// with i < j; self-loops are implicit with weight 1.
#[derive(Debug, Clone)]
pub struct Graph {
    pub node_count: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

/// Builds the chunk graph: every pair i < j with S[i,j] ≥ θ_s is a
/// candidate, scanned in row-major order, and each candidate is
/// independently dropped with probability θ_r. Random draws happen only
/// for candidates, so the kept set is reproducible from (S, θ_s, θ_r, seed).
pub fn build_graph(s: ArrayView2<f64>, theta_s: f64, theta_r: f64, seed: u64) -> Result<Graph> {
    if s.nrows() != s.ncols() {
        return Err(GaisError::ShapeError(format!(
            "similarity matrix is {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(GaisError::NonFiniteInput);
    }
    let m = s.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            if s[[i, j]] >= theta_s {
                let u: f64 = rng.random();
                if u >= theta_r {
                    edges.push((i, j, s[[i, j]]));
                }
            }
        }
    }
    Ok(Graph { node_count: m, edges })
}

impl Graph {
    /// Average non-self degree, counting each undirected edge at both ends.
    pub fn mean_degree(&self) -> f64 {
        if self.node_count == 0 {
            0.0
        } else {
            2.0 * self.edges.len() as f64 / self.node_count as f64
        }
    }

    /// CSR adjacency over directed slots, self-loops included.
    pub fn neighbor_list(&self) -> NeighborList {
        let n = self.node_count;
        let mut degree = vec![1usize; n]; // self-loop
        for &(i, j, _) in &self.edges {
            degree[i] += 1;
            degree[j] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let total = *offsets.last().unwrap();
        let mut targets = vec![0usize; total];
        let mut cursor = offsets[..n].to_vec();
        for i in 0..n {
            targets[cursor[i]] = i;
            cursor[i] += 1;
        }
        for &(i, j, _) in &self.edges {
            targets[cursor[i]] = j;
            cursor[i] += 1;
            targets[cursor[j]] = i;
            cursor[j] += 1;
        }
        for i in 0..n {
            targets[offsets[i]..offsets[i + 1]].sort_unstable();
        }
        NeighborList { offsets, targets }
    }

    /// Writes one "i j weight" line per stored edge, nodes 0-based.
    pub fn dump_edge_list(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for &(i, j, w) in &self.edges {
            out.push_str(&format!("{i} {j} {}\n", crate::dataset::format_float(w)));
        }
        std::fs::write(path, out).map_err(|source| GaisError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Compressed sparse adjacency including self-loops. Slot e holds the
/// directed pair (source(e) → targets[e]); per-node slots are sorted by
/// target id, which fixes every summation order in the network.
#[derive(Debug, Clone)]
pub struct NeighborList {
    pub offsets: Vec<usize>,
    pub targets: Vec<usize>,
}

impl NeighborList {
    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn slot_count(&self) -> usize {
        self.targets.len()
    }

    pub fn slots(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }
}
