//! Subcommand implementations behind the `gais` binary.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::Serialize;
use serde_json::Value;

use gais::baselines::{
    cnn_select, enn_select, ldis_select, random_select, rmhc_select, BaselineConfig,
};
use gais::classifiers::{self, ClassifierKind};
use gais::dataset::{
    self, format_float, gather_labels, gather_rows, generate_ringnorm, generate_twonorm, load_csv,
    preprocess, write_dataset_csv, write_selected_rows_csv, ChunkSpec, DataSplit, Dataset,
    RawTable,
};
use gais::gat::GatHyperParams;
use gais::graph::DistanceMetric;
use gais::hpo::{self, Acquisition, SearchSpace, TuneData};
use gais::metrics::{
    classification_metrics, crosscheck_published_tables, effectiveness, Averaging,
    ClassificationScores, MetricsReport,
};
use gais::trainer::{gais_select, SelectionResult};
use gais::{GaisError, Result};

use crate::config::{pick, pick_opt, pick_required, FileConfig};

/// Instance selection methods reachable from the command line. `Full` keeps
/// every row and anchors benchmark tables with a no-selection reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Gais,
    Cnn,
    Enn,
    Ldis,
    Rmhc,
    Random,
    Full,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gais => "gais",
            Method::Cnn => "cnn",
            Method::Enn => "enn",
            Method::Ldis => "ldis",
            Method::Rmhc => "rmhc",
            Method::Random => "random",
            Method::Full => "full",
        }
    }
}

impl FromStr for Method {
    type Err = GaisError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gais" => Ok(Method::Gais),
            "cnn" => Ok(Method::Cnn),
            "enn" => Ok(Method::Enn),
            "ldis" => Ok(Method::Ldis),
            "rmhc" => Ok(Method::Rmhc),
            "random" => Ok(Method::Random),
            "full" => Ok(Method::Full),
            other => Err(GaisError::InvalidConfig(format!(
                "unknown method {other:?}; expected gais, cnn, enn, ldis, rmhc, random, or full"
            ))),
        }
    }
}

/// Graph and attention hyperparameters shared by select, benchmark, and tune.
#[derive(clap::Args, Debug, Default)]
pub struct HpFlags {
    /// Hidden units per input-layer attention head.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Attention heads in the input layer.
    #[arg(long)]
    pub heads_in: Option<usize>,
    /// Attention heads in the output layer.
    #[arg(long)]
    pub heads_out: Option<usize>,
    /// Dropout probability in [0, 1).
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Distance metric: manhattan, euclidean, or cosine.
    #[arg(long)]
    pub metric: Option<String>,
    /// Similarity threshold for graph edges.
    #[arg(long)]
    pub theta_s: Option<f64>,
    /// Edge drop probability during graph construction.
    #[arg(long)]
    pub theta_r: Option<f64>,
    /// Confidence threshold for keeping instances.
    #[arg(long)]
    pub theta_c: Option<f64>,
    /// Training epochs per chunk.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// L2 penalty added to every gradient.
    #[arg(long)]
    pub weight_decay: Option<f64>,
}

/// Chunking of large training sets.
#[derive(clap::Args, Debug, Default)]
pub struct ChunkFlags {
    /// Rows per training chunk.
    #[arg(long)]
    pub window: Option<usize>,
    /// Rows shared by consecutive chunks.
    #[arg(long)]
    pub overlap: Option<usize>,
}

/// Settings for the classical baselines. `k` also sets the neighbor count
/// of a knn evaluation classifier.
#[derive(clap::Args, Debug, Default)]
pub struct BaselineFlags {
    /// Neighbor count for enn, ldis, and the knn classifier.
    #[arg(long)]
    pub k: Option<usize>,
    /// Fraction of rows kept by rmhc and random selection.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Hill-climbing iterations for rmhc.
    #[arg(long)]
    pub iterations: Option<usize>,
}

fn resolve_hyperparams(flags: &HpFlags, cfg: &FileConfig, seed: u64) -> Result<GatHyperParams> {
    let d = GatHyperParams::default();
    let metric = match pick_opt(flags.metric.clone(), cfg.string("metric"))? {
        Some(name) => name.parse::<DistanceMetric>()?,
        None => d.metric,
    };
    let hp = GatHyperParams {
        hidden_dim: pick(flags.hidden, cfg.usize("hidden"), d.hidden_dim)?,
        input_heads: pick(flags.heads_in, cfg.usize("heads_in"), d.input_heads)?,
        output_heads: pick(flags.heads_out, cfg.usize("heads_out"), d.output_heads)?,
        dropout: pick(flags.dropout, cfg.f64("dropout"), d.dropout)?,
        metric,
        theta_r: pick(flags.theta_r, cfg.f64("theta_r"), d.theta_r)?,
        theta_s: pick(flags.theta_s, cfg.f64("theta_s"), d.theta_s)?,
        theta_c: pick(flags.theta_c, cfg.f64("theta_c"), d.theta_c)?,
        learning_rate: pick(flags.lr, cfg.f64("lr"), d.learning_rate)?,
        epochs_per_chunk: pick(flags.epochs, cfg.usize("epochs"), d.epochs_per_chunk)?,
        weight_decay: pick(flags.weight_decay, cfg.f64("weight_decay"), d.weight_decay)?,
        seed,
    };
    hp.validate()?;
    Ok(hp)
}

fn resolve_chunks(flags: &ChunkFlags, cfg: &FileConfig) -> Result<ChunkSpec> {
    let d = ChunkSpec::default();
    ChunkSpec::new(
        pick(flags.window, cfg.usize("window"), d.window)?,
        pick(flags.overlap, cfg.usize("overlap"), d.overlap)?,
    )
}

fn resolve_baseline(flags: &BaselineFlags, cfg: &FileConfig, seed: u64) -> Result<BaselineConfig> {
    let d = BaselineConfig::default();
    let baseline = BaselineConfig {
        k: pick(flags.k, cfg.usize("k"), d.k)?,
        subset_fraction: pick(flags.ratio, cfg.f64("ratio"), d.subset_fraction)?,
        iterations: pick(flags.iterations, cfg.usize("iterations"), d.iterations)?,
        seed,
    };
    baseline.validate()?;
    Ok(baseline)
}

fn resolve_classifier(
    name: Option<String>,
    k: Option<usize>,
    cfg: &FileConfig,
) -> Result<ClassifierKind> {
    let name = pick(name, cfg.string("classifier"), "knn".to_string())?;
    let mut kind: ClassifierKind = name.parse()?;
    if let ClassifierKind::Knn { k: neighbors } = &mut kind {
        if let Some(k) = pick_opt(k, cfg.usize("k"))? {
            *neighbors = k;
        }
    }
    kind.validate()?;
    Ok(kind)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| GaisError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Pretty JSON to a file, or to stdout when no path was given.
fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("reports hold plain finite values");
    text.push('\n');
    match path {
        Some(path) => write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// A loaded CSV with its train/validation/test split and the preprocessing
/// state fitted on the training portion.
struct PreparedData {
    raw: RawTable,
    dataset: Dataset,
    split: DataSplit,
    /// Load plus preprocessing time, charged to selection.
    seconds: f64,
}

fn prepare(input: &Path, target: &str, seed: u64) -> Result<PreparedData> {
    let started = Instant::now();
    let raw = load_csv(input, target, &[])?;
    let split = dataset::split(raw.n_rows(), seed)?;
    let dataset = preprocess(&raw, &split.train_idx)?;
    Ok(PreparedData { raw, dataset, split, seconds: started.elapsed().as_secs_f64() })
}

/// Result of one selection run: kept training-set indices, per-chunk loss
/// curves (empty for non-gais methods), and the settings that produced it.
struct MethodOutcome {
    selection: SelectionResult,
    per_chunk_losses: Vec<Vec<f64>>,
    hyperparams: Value,
}

#[allow(clippy::too_many_arguments)]
fn run_method(
    method: Method,
    features: ArrayView2<f64>,
    labels: &[usize],
    class_count: usize,
    hp: &GatHyperParams,
    baseline: &BaselineConfig,
    chunks: &ChunkSpec,
    prior_seconds: f64,
) -> Result<MethodOutcome> {
    let from_baseline = |mut selection: SelectionResult| {
        selection.t_is_seconds += prior_seconds;
        MethodOutcome {
            selection,
            per_chunk_losses: Vec::new(),
            hyperparams: serde_json::to_value(baseline).expect("plain struct"),
        }
    };
    match method {
        Method::Gais => {
            let (_, report, selection) =
                gais_select(features, labels, class_count, hp, chunks, prior_seconds)?;
            Ok(MethodOutcome {
                selection,
                per_chunk_losses: report.per_chunk_losses,
                hyperparams: serde_json::to_value(hp).expect("plain struct"),
            })
        }
        Method::Cnn => Ok(from_baseline(cnn_select(features, labels, baseline.seed)?)),
        Method::Enn => Ok(from_baseline(enn_select(features, labels, baseline.k)?)),
        Method::Ldis => Ok(from_baseline(ldis_select(features, labels, baseline.k)?)),
        Method::Rmhc => Ok(from_baseline(rmhc_select(
            features,
            labels,
            baseline.subset_fraction,
            baseline.iterations,
            baseline.seed,
        )?)),
        Method::Random => Ok(from_baseline(random_select(
            labels.len(),
            baseline.subset_fraction,
            baseline.seed,
        )?)),
        Method::Full => {
            let n = labels.len();
            Ok(MethodOutcome {
                selection: SelectionResult::from_indices((0..n).collect(), n, prior_seconds),
                per_chunk_losses: Vec::new(),
                hyperparams: Value::Object(serde_json::Map::new()),
            })
        }
    }
}

/// Synthetic dataset generation.
#[derive(clap::Args, Debug)]
pub struct GenerateArgs {
    /// Generator name: twonorm or ringnorm.
    #[arg(long)]
    pub name: Option<String>,
    /// Number of rows to generate.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn generate(args: &GenerateArgs, cfg: &FileConfig) -> Result<()> {
    let name = pick_required(args.name.clone(), cfg.string("name"), "name")?;
    let n = pick_required(args.n, cfg.usize("n"), "n")?;
    let seed = pick(args.seed, cfg.u64("seed"), 0)?;
    let out = pick_required(args.out.clone(), cfg.path("out"), "out")?;
    let dataset = match name.as_str() {
        "twonorm" => generate_twonorm(n, seed)?,
        "ringnorm" => generate_ringnorm(n, seed)?,
        other => {
            return Err(GaisError::InvalidConfig(format!(
                "unknown generator {other:?}; expected twonorm or ringnorm"
            )))
        }
    };
    write_dataset_csv(&dataset, &out)?;
    println!("wrote {} rows to {}", dataset.n_instances(), out.display());
    Ok(())
}

/// Instance selection over one CSV.
#[derive(clap::Args, Debug)]
pub struct SelectArgs {
    /// Input CSV path.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Target column name.
    #[arg(long)]
    pub target: Option<String>,
    /// Selection method: gais, cnn, enn, ldis, rmhc, random, or full.
    #[arg(long)]
    pub method: Option<String>,
    /// Classifier scored on the test split: knn, gaussian_nb, or logistic.
    #[arg(long)]
    pub classifier: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub chunks: ChunkFlags,
    #[command(flatten)]
    pub hp: HpFlags,
    #[command(flatten)]
    pub baseline: BaselineFlags,
    /// Accuracy drop tolerated relative to training on the full data.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Output CSV path for the selected rows.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Record elapsed times as zero so outputs are byte-stable.
    #[arg(long)]
    pub no_timing: bool,
}

/// JSON report for one selection run. `metrics` scores the configured
/// classifier, trained on the selected rows, against the test split; it is
/// absent when nothing was selected.
#[derive(Serialize)]
struct SelectionReport {
    method: String,
    seed: u64,
    hyperparams: Value,
    n_original: usize,
    n_selected: usize,
    reduction_rate: f64,
    t_is_seconds: f64,
    per_chunk_losses: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<MetricsReport>,
}

pub fn select(args: &SelectArgs, cfg: &FileConfig) -> Result<()> {
    let input = pick_required(args.input.clone(), cfg.path("input"), "input")?;
    let target = pick(args.target.clone(), cfg.string("target"), "class".to_string())?;
    let method: Method =
        pick(args.method.clone(), cfg.string("method"), "gais".to_string())?.parse()?;
    let seed = pick(args.seed, cfg.u64("seed"), 0)?;
    let out = pick_required(args.out.clone(), cfg.path("out"), "out")?;
    let report_path = pick_opt(args.report.clone(), cfg.path("report"))?;
    let tolerance = pick_opt(args.tolerance, cfg.f64("tolerance"))?;
    let no_timing = args.no_timing || cfg.flag("no_timing")?;
    let chunks = resolve_chunks(&args.chunks, cfg)?;
    let hp = resolve_hyperparams(&args.hp, cfg, seed)?;
    let baseline = resolve_baseline(&args.baseline, cfg, seed)?;
    let classifier = resolve_classifier(args.classifier.clone(), args.baseline.k, cfg)?;

    let data = prepare(&input, &target, seed)?;
    let train_x = gather_rows(data.dataset.features.view(), &data.split.train_idx);
    let train_y = gather_labels(&data.dataset.labels, &data.split.train_idx);
    let outcome = run_method(
        method,
        train_x.view(),
        &train_y,
        data.dataset.class_count,
        &hp,
        &baseline,
        &chunks,
        data.seconds,
    )?;

    // Selected indices point into the training split; map them back to the
    // original file rows for output.
    let mut original_rows: Vec<usize> = outcome
        .selection
        .selected_idx
        .iter()
        .map(|&i| data.split.train_idx[i])
        .collect();
    original_rows.sort_unstable();
    write_selected_rows_csv(&data.raw, &original_rows, &out)?;

    let t_is = if no_timing { 0.0 } else { outcome.selection.t_is_seconds };
    let metrics = if outcome.selection.selected_idx.is_empty() {
        None
    } else {
        let kept_x = gather_rows(train_x.view(), &outcome.selection.selected_idx);
        let kept_y = gather_labels(&train_y, &outcome.selection.selected_idx);
        let model = classifiers::fit(&classifier, kept_x.view(), &kept_y)?;
        let test_x = gather_rows(data.dataset.features.view(), &data.split.test_idx);
        let test_y = gather_labels(&data.dataset.labels, &data.split.test_idx);
        let predicted = classifiers::predict(&model, test_x.view())?;
        let averaging = Averaging::for_class_count(data.dataset.class_count);
        let scores = classification_metrics(&test_y, &predicted, averaging)?;
        let report =
            MetricsReport::new(&scores, outcome.selection.selected_idx.len(), train_y.len(), t_is);
        Some(match tolerance {
            Some(phi) => report.with_tolerance(phi),
            None => report,
        })
    };

    let report = SelectionReport {
        method: method.name().to_string(),
        seed,
        hyperparams: outcome.hyperparams,
        n_original: train_y.len(),
        n_selected: outcome.selection.selected_idx.len(),
        reduction_rate: outcome.selection.reduction_rate,
        t_is_seconds: t_is,
        per_chunk_losses: outcome.per_chunk_losses,
        metrics,
    };
    write_json(&report, report_path.as_deref())
}

/// Classifier evaluation between two CSV files.
#[derive(clap::Args, Debug)]
pub struct EvaluateArgs {
    /// Training CSV path.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Test CSV path; must share the training file's schema.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Target column name.
    #[arg(long)]
    pub target: Option<String>,
    /// Classifier: knn, gaussian_nb, or logistic.
    #[arg(long)]
    pub classifier: Option<String>,
    /// Neighbor count for the knn classifier.
    #[arg(long)]
    pub k: Option<usize>,
    /// Training-set size before selection, for reduction and effectiveness.
    #[arg(long)]
    pub n_original: Option<usize>,
    /// Accuracy drop tolerated relative to training on the full data.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn evaluate(args: &EvaluateArgs, cfg: &FileConfig) -> Result<()> {
    let train = pick_required(args.train.clone(), cfg.path("train"), "train")?;
    let test = pick_required(args.test.clone(), cfg.path("test"), "test")?;
    let target = pick(args.target.clone(), cfg.string("target"), "class".to_string())?;
    let classifier = resolve_classifier(args.classifier.clone(), args.k, cfg)?;
    let n_original = pick_opt(args.n_original, cfg.usize("n_original"))?;
    let tolerance = pick_opt(args.tolerance, cfg.f64("tolerance"))?;
    let report_path = pick_opt(args.report.clone(), cfg.path("report"))?;

    let raw_train = load_csv(&train, &target, &[])?;
    let all_rows: Vec<usize> = (0..raw_train.n_rows()).collect();
    let fitted = preprocess(&raw_train, &all_rows)?;
    let raw_test = load_csv(&test, &target, &[])?;
    let (test_x, test_y) = fitted.transform_table(&raw_test)?;

    let model = classifiers::fit(&classifier, fitted.features.view(), &fitted.labels)?;
    let predicted = classifiers::predict(&model, test_x.view())?;
    let averaging = Averaging::for_class_count(fitted.class_count);
    let scores = classification_metrics(&test_y, &predicted, averaging)?;

    let n_train = fitted.n_instances();
    let n_original = n_original.unwrap_or(n_train);
    if n_original < n_train {
        return Err(GaisError::InvalidConfig(format!(
            "--n-original ({n_original}) is smaller than the training set ({n_train})"
        )));
    }
    // No selection happened here, so no selection time is reported.
    let report = MetricsReport::new(&scores, n_train, n_original, 0.0);
    let report = match tolerance {
        Some(phi) => report.with_tolerance(phi),
        None => report,
    };
    write_json(&report, report_path.as_deref())
}

/// Method comparison across seeds.
#[derive(clap::Args, Debug)]
pub struct BenchmarkArgs {
    /// Input CSV path.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Target column name.
    #[arg(long)]
    pub target: Option<String>,
    /// Comma-separated methods, e.g. gais,cnn,enn.
    #[arg(long)]
    pub methods: Option<String>,
    /// Comma-separated seeds, e.g. 0,1,2.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Classifier scored on the test split: knn, gaussian_nb, or logistic.
    #[arg(long)]
    pub classifier: Option<String>,
    #[command(flatten)]
    pub chunks: ChunkFlags,
    #[command(flatten)]
    pub hp: HpFlags,
    #[command(flatten)]
    pub baseline: BaselineFlags,
    /// Output CSV path for the results table.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Record elapsed times as zero so outputs are byte-stable.
    #[arg(long)]
    pub no_timing: bool,
}

const BENCHMARK_HEADER: &str = "method,seed,n_train,n_selected,ac_red,pr_red,re_red,f1_red,\
ac_orig,pr_orig,re_orig,f1_orig,r,e,t_is_seconds,status";

/// Numeric cells of one successful benchmark run, in table column order.
#[derive(Clone, Copy)]
struct RunMetrics {
    n_train: f64,
    n_selected: f64,
    reduced: [f64; 4],
    full: [f64; 4],
    r: f64,
    e: f64,
    t_is: f64,
}

impl RunMetrics {
    fn cells(&self) -> Vec<String> {
        let mut cells = vec![format_float(self.n_train), format_float(self.n_selected)];
        cells.extend(self.reduced.iter().map(|&v| format_float(v)));
        cells.extend(self.full.iter().map(|&v| format_float(v)));
        cells.push(format_float(self.r));
        cells.push(format_float(self.e));
        cells.push(format_float(self.t_is));
        cells
    }

    fn mean_of(runs: &[RunMetrics]) -> RunMetrics {
        let k = runs.len() as f64;
        let mut sum = RunMetrics {
            n_train: 0.0,
            n_selected: 0.0,
            reduced: [0.0; 4],
            full: [0.0; 4],
            r: 0.0,
            e: 0.0,
            t_is: 0.0,
        };
        for run in runs {
            sum.n_train += run.n_train;
            sum.n_selected += run.n_selected;
            for i in 0..4 {
                sum.reduced[i] += run.reduced[i];
                sum.full[i] += run.full[i];
            }
            sum.r += run.r;
            sum.e += run.e;
            sum.t_is += run.t_is;
        }
        sum.n_train /= k;
        sum.n_selected /= k;
        for i in 0..4 {
            sum.reduced[i] /= k;
            sum.full[i] /= k;
        }
        sum.r /= k;
        sum.e /= k;
        sum.t_is /= k;
        sum
    }
}

fn benchmark_row(method: Method, seed: &str, metrics: Option<&RunMetrics>) -> String {
    match metrics {
        Some(m) => format!("{},{},{},ok", method.name(), seed, m.cells().join(",")),
        None => format!("{},{},{},failed", method.name(), seed, vec![""; 13].join(",")),
    }
}

/// One seed's prepared split, evaluation data, and full-data reference
/// scores, shared across every method.
struct SeedContext {
    train_x: Array2<f64>,
    train_y: Vec<usize>,
    test_x: Array2<f64>,
    test_y: Vec<usize>,
    class_count: usize,
    averaging: Averaging,
    prep_seconds: f64,
    full_scores: ClassificationScores,
}

fn seed_context(
    input: &Path,
    target: &str,
    seed: u64,
    classifier: &ClassifierKind,
) -> Result<SeedContext> {
    let data = prepare(input, target, seed)?;
    let train_x = gather_rows(data.dataset.features.view(), &data.split.train_idx);
    let train_y = gather_labels(&data.dataset.labels, &data.split.train_idx);
    let test_x = gather_rows(data.dataset.features.view(), &data.split.test_idx);
    let test_y = gather_labels(&data.dataset.labels, &data.split.test_idx);
    let averaging = Averaging::for_class_count(data.dataset.class_count);
    let model = classifiers::fit(classifier, train_x.view(), &train_y)?;
    let predicted = classifiers::predict(&model, test_x.view())?;
    let full_scores = classification_metrics(&test_y, &predicted, averaging)?;
    Ok(SeedContext {
        train_x,
        train_y,
        test_x,
        test_y,
        class_count: data.dataset.class_count,
        averaging,
        prep_seconds: data.seconds,
        full_scores,
    })
}

fn run_benchmark_cell(
    method: Method,
    ctx: &SeedContext,
    hp: &GatHyperParams,
    baseline: &BaselineConfig,
    chunks: &ChunkSpec,
    classifier: &ClassifierKind,
) -> Result<RunMetrics> {
    let outcome = run_method(
        method,
        ctx.train_x.view(),
        &ctx.train_y,
        ctx.class_count,
        hp,
        baseline,
        chunks,
        ctx.prep_seconds,
    )?;
    let kept = &outcome.selection.selected_idx;
    if kept.is_empty() {
        return Err(GaisError::TooFewInstances { got: 0, min: 1 });
    }
    let kept_x = gather_rows(ctx.train_x.view(), kept);
    let kept_y = gather_labels(&ctx.train_y, kept);
    let model = classifiers::fit(classifier, kept_x.view(), &kept_y)?;
    let predicted = classifiers::predict(&model, ctx.test_x.view())?;
    let scores = classification_metrics(&ctx.test_y, &predicted, ctx.averaging)?;
    let r = outcome.selection.reduction_rate;
    let f = &ctx.full_scores;
    Ok(RunMetrics {
        n_train: ctx.train_y.len() as f64,
        n_selected: kept.len() as f64,
        reduced: [scores.accuracy, scores.precision, scores.recall, scores.f1],
        full: [f.accuracy, f.precision, f.recall, f.f1],
        r,
        e: effectiveness(scores.accuracy, r),
        t_is: outcome.selection.t_is_seconds,
    })
}

pub fn benchmark(args: &BenchmarkArgs, cfg: &FileConfig) -> Result<()> {
    let input = pick_required(args.input.clone(), cfg.path("input"), "input")?;
    let target = pick(args.target.clone(), cfg.string("target"), "class".to_string())?;
    let methods_text = pick_required(args.methods.clone(), cfg.string("methods"), "methods")?;
    let methods: Vec<Method> =
        methods_text.split(',').map(Method::from_str).collect::<Result<_>>()?;
    let seeds_text = pick(args.seeds.clone(), cfg.string("seeds"), "0".to_string())?;
    let seeds: Vec<u64> = seeds_text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| GaisError::InvalidConfig(format!("invalid seed {s:?}")))
        })
        .collect::<Result<_>>()?;
    let out = pick_required(args.out.clone(), cfg.path("out"), "out")?;
    let no_timing = args.no_timing || cfg.flag("no_timing")?;
    let chunks = resolve_chunks(&args.chunks, cfg)?;
    let classifier = resolve_classifier(args.classifier.clone(), args.baseline.k, cfg)?;
    // Seed 0 stands in for validation; each run restamps its own seed.
    let base_hp = resolve_hyperparams(&args.hp, cfg, 0)?;
    let base_baseline = resolve_baseline(&args.baseline, cfg, 0)?;

    let mut first_error: Option<GaisError> = None;
    let note_failure = |error: GaisError, slot: &mut Option<GaisError>| {
        eprintln!("warning: {error}");
        if slot.is_none() {
            *slot = Some(error);
        }
    };

    // Data prep and the full-train reference fit happen once per seed.
    let mut contexts: Vec<(u64, Option<SeedContext>)> = Vec::new();
    for &seed in &seeds {
        match seed_context(&input, &target, seed, &classifier) {
            Ok(ctx) => contexts.push((seed, Some(ctx))),
            Err(error) => {
                note_failure(error, &mut first_error);
                contexts.push((seed, None));
            }
        }
    }

    let mut lines = vec![BENCHMARK_HEADER.to_string()];
    let mut per_method_runs: Vec<Vec<RunMetrics>> = vec![Vec::new(); methods.len()];
    for (m, &method) in methods.iter().enumerate() {
        for (seed, ctx) in &contexts {
            let run = match ctx {
                None => None,
                Some(ctx) => {
                    let hp = GatHyperParams { seed: *seed, ..base_hp };
                    let baseline = BaselineConfig { seed: *seed, ..base_baseline };
                    match run_benchmark_cell(method, ctx, &hp, &baseline, &chunks, &classifier) {
                        Ok(mut metrics) => {
                            if no_timing {
                                metrics.t_is = 0.0;
                            }
                            per_method_runs[m].push(metrics);
                            Some(metrics)
                        }
                        Err(error) => {
                            note_failure(error, &mut first_error);
                            None
                        }
                    }
                }
            };
            lines.push(benchmark_row(method, &seed.to_string(), run.as_ref()));
        }
    }
    for (m, &method) in methods.iter().enumerate() {
        let runs = &per_method_runs[m];
        let mean = if runs.is_empty() { None } else { Some(RunMetrics::mean_of(runs)) };
        lines.push(benchmark_row(method, "mean", mean.as_ref()));
    }

    let mut text = lines.join("\n");
    text.push('\n');
    write_text(&out, &text)?;
    println!("wrote {} rows to {}", lines.len() - 1, out.display());

    let succeeded = per_method_runs.iter().any(|runs| !runs.is_empty());
    match (succeeded, first_error) {
        (false, Some(error)) => Err(error),
        _ => Ok(()),
    }
}

/// Hyperparameter search.
#[derive(clap::Args, Debug)]
pub struct TuneArgs {
    /// Input CSV path.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Target column name.
    #[arg(long)]
    pub target: Option<String>,
    /// Number of tuning trials.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Acquisition function: ei or ucb.
    #[arg(long)]
    pub acquisition: Option<String>,
    #[command(flatten)]
    pub chunks: ChunkFlags,
    /// Training epochs per chunk for every trial.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate for every trial.
    #[arg(long)]
    pub lr: Option<f64>,
    /// L2 penalty for every trial.
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn tune(args: &TuneArgs, cfg: &FileConfig) -> Result<()> {
    let input = pick_required(args.input.clone(), cfg.path("input"), "input")?;
    let target = pick(args.target.clone(), cfg.string("target"), "class".to_string())?;
    let budget = pick(args.budget, cfg.usize("budget"), 25)?;
    let seed = pick(args.seed, cfg.u64("seed"), 0)?;
    let acquisition = match pick_opt(args.acquisition.clone(), cfg.string("acquisition"))? {
        Some(name) => name.parse::<Acquisition>()?,
        None => Acquisition::default(),
    };
    let chunks = resolve_chunks(&args.chunks, cfg)?;
    let out = pick_opt(args.out.clone(), cfg.path("out"))?;

    let d = GatHyperParams::default();
    let base = GatHyperParams {
        learning_rate: pick(args.lr, cfg.f64("lr"), d.learning_rate)?,
        epochs_per_chunk: pick(args.epochs, cfg.usize("epochs"), d.epochs_per_chunk)?,
        weight_decay: pick(args.weight_decay, cfg.f64("weight_decay"), d.weight_decay)?,
        seed,
        ..d
    };
    base.validate()?;

    let data = prepare(&input, &target, seed)?;
    let train_x = gather_rows(data.dataset.features.view(), &data.split.train_idx);
    let train_y = gather_labels(&data.dataset.labels, &data.split.train_idx);
    let val_x = gather_rows(data.dataset.features.view(), &data.split.val_idx);
    let val_y = gather_labels(&data.dataset.labels, &data.split.val_idx);
    let tune_data = TuneData {
        train_features: train_x.view(),
        train_labels: &train_y,
        val_features: val_x.view(),
        val_labels: &val_y,
        class_count: data.dataset.class_count,
        chunks,
    };
    let report = hpo::tune(&tune_data, &SearchSpace::default(), &base, budget, acquisition, seed)?;
    write_json(&report, out.as_deref())
}

/// Consistency check of the bundled published results.
#[derive(clap::Args, Debug)]
pub struct CrosscheckArgs {
    /// JSON report path; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn crosscheck(args: &CrosscheckArgs, cfg: &FileConfig) -> Result<()> {
    let report_path = pick_opt(args.report.clone(), cfg.path("report"))?;
    let report = crosscheck_published_tables()?;
    write_json(&report, report_path.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn methods_parse_by_name() {
        for (name, method) in [
            ("gais", Method::Gais),
            ("CNN", Method::Cnn),
            (" enn ", Method::Enn),
            ("ldis", Method::Ldis),
            ("rmhc", Method::Rmhc),
            ("random", Method::Random),
            ("full", Method::Full),
        ] {
            assert_eq!(name.parse::<Method>().unwrap(), method);
            assert_eq!(method.name(), method.name().to_ascii_lowercase());
        }
        assert!("knn".parse::<Method>().is_err());
    }

    #[test]
    fn classifier_k_override_applies_only_to_knn() {
        let cfg = FileConfig::empty();
        let knn = resolve_classifier(None, Some(7), &cfg).unwrap();
        assert_eq!(knn, ClassifierKind::Knn { k: 7 });
        let nb = resolve_classifier(Some("nb".into()), Some(7), &cfg).unwrap();
        assert_eq!(nb, ClassifierKind::GaussianNb);
    }

    #[test]
    fn default_classifier_is_three_nearest_neighbors() {
        let cfg = FileConfig::empty();
        let kind = resolve_classifier(None, None, &cfg).unwrap();
        assert_eq!(kind, ClassifierKind::Knn { k: 3 });
    }

    #[test]
    fn hyperparameters_default_and_validate() {
        let cfg = FileConfig::empty();
        let hp = resolve_hyperparams(&HpFlags::default(), &cfg, 9).unwrap();
        assert_eq!(hp.seed, 9);
        assert_eq!(hp.hidden_dim, GatHyperParams::default().hidden_dim);

        let bad = HpFlags { dropout: Some(1.5), ..HpFlags::default() };
        assert!(resolve_hyperparams(&bad, &cfg, 0).is_err());
    }

    #[test]
    fn failed_benchmark_rows_keep_the_column_count() {
        let columns = BENCHMARK_HEADER.split(',').count();
        let failed = benchmark_row(Method::Gais, "3", None);
        assert_eq!(failed.split(',').count(), columns);
        assert!(failed.ends_with(",failed"));
        let ok = benchmark_row(
            Method::Full,
            "mean",
            Some(&RunMetrics {
                n_train: 10.0,
                n_selected: 10.0,
                reduced: [1.0; 4],
                full: [1.0; 4],
                r: 0.0,
                e: 0.0,
                t_is: 0.0,
            }),
        );
        assert_eq!(ok.split(',').count(), columns);
        assert!(ok.ends_with(",ok"));
    }

    #[test]
    fn mean_averages_every_cell() {
        let a = RunMetrics {
            n_train: 100.0,
            n_selected: 20.0,
            reduced: [0.8, 0.6, 0.4, 0.2],
            full: [0.9, 0.9, 0.9, 0.9],
            r: 0.8,
            e: 0.64,
            t_is: 1.0,
        };
        let b = RunMetrics { n_selected: 40.0, t_is: 3.0, ..a };
        let mean = RunMetrics::mean_of(&[a, b]);
        assert_eq!(mean.n_selected, 30.0);
        assert_eq!(mean.t_is, 2.0);
        assert_eq!(mean.reduced, a.reduced);
    }
}
