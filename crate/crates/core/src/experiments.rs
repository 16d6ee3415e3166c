//! Transductive edge split, training with early stopping, F1 evaluation,
//! repeated runs, paired permutation tests and width grid search.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{DyadGraph, Label};
use crate::models::{batch_gradient, predict, ModelConfig, ModelError, ModelInputs, ModelParams, Variant};
use crate::par::Execution;
use crate::tensor::{AdamConfig, AdamState, Matrix, Parameters, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid split: {0}")]
    Split(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Fractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for Fractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            validation: 0.3,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub fractions: Fractions,
    pub seed: u64,
}

/// Seeded shuffle of all edge indices, then contiguous train/validation/test
/// blocks. Validation and test sizes are floored; train takes the rest.
pub fn split_edges(edge_count: usize, fractions: Fractions, seed: u64) -> Result<SplitSpec, ExperimentError> {
    let sum = fractions.train + fractions.validation + fractions.test;
    if (sum - 1.0).abs() > 1e-9
        || [fractions.train, fractions.validation, fractions.test]
            .iter()
            .any(|f| *f < 0.0)
    {
        return Err(ExperimentError::Split(format!("fractions sum to {sum}")));
    }
    if edge_count < 10 {
        return Err(ExperimentError::Split(format!(
            "{edge_count} edges; at least 10 required"
        )));
    }
    let n_val = (fractions.validation * edge_count as f64 + 1e-9).floor() as usize;
    let n_test = (fractions.test * edge_count as f64 + 1e-9).floor() as usize;
    let n_train = edge_count - n_val - n_test;
    let mut order: Vec<usize> = (0..edge_count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = order[..n_train].to_vec();
    let mut validation = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(SplitSpec {
        train,
        validation,
        test,
        fractions,
        seed,
    })
}

impl SplitSpec {
    /// `true` for training edges.
    pub fn observed_mask(&self, edge_count: usize) -> Vec<bool> {
        let mut mask = vec![false; edge_count];
        for &e in &self.train {
            mask[e] = true;
        }
        mask
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Average {
    /// F1 of the ALLIES class.
    #[default]
    Binary,
    /// Unweighted mean of per-class F1.
    Macro,
    /// Per-class F1 weighted by gold support.
    Weighted,
}

fn class_f1(pred: &[Label], gold: &[Label], positive: Label) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &g) in pred.iter().zip(gold) {
        match (p == positive, g == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// F1 over aligned prediction and gold vectors; 0 for an empty input.
pub fn f1_score(pred: &[Label], gold: &[Label], average: F1Average) -> f64 {
    assert_eq!(pred.len(), gold.len(), "prediction and gold lengths differ");
    if gold.is_empty() {
        return 0.0;
    }
    let allies = class_f1(pred, gold, Label::Allies);
    match average {
        F1Average::Binary => allies,
        F1Average::Macro => (allies + class_f1(pred, gold, Label::Enemies)) / 2.0,
        F1Average::Weighted => {
            let n_allies = gold.iter().filter(|l| l.is_allies()).count() as f64;
            let n = gold.len() as f64;
            (n_allies * allies + (n - n_allies) * class_f1(pred, gold, Label::Enemies)) / n
        }
    }
}

/// Patience-based stop on a metric that must strictly improve.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, metric: f64) -> StopDecision {
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub threshold: f64,
    pub f1_average: F1Average,
    pub fractions: Fractions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            patience: 3,
            batch_size: 512,
            adam: AdamConfig::default(),
            threshold: 0.5,
            f1_average: F1Average::Binary,
            fractions: Fractions::default(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ExperimentError> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(ExperimentError::Config(
                "epochs, batch_size and patience must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Graph and feature rows shared by every run.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub graph: &'a DyadGraph,
    pub node_x: &'a Matrix,
    pub edge_x: &'a Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: Variant,
    pub seed: u64,
    pub train_loss: Vec<f64>,
    pub validation_f1: Vec<f64>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub early_stopped: bool,
    pub best_validation_f1: f64,
    pub test_f1: f64,
    pub test_ally_fraction: f64,
    pub test_predictions: Vec<Label>,
    pub wall_time_s: f64,
}

fn to_labels(probs: &[f64], threshold: f64) -> Vec<Label> {
    probs
        .iter()
        .map(|&p| if p >= threshold { Label::Allies } else { Label::Enemies })
        .collect()
}

fn gold(graph: &DyadGraph, edges: &[usize]) -> Vec<Label> {
    edges.iter().map(|&e| graph.edge(e).label).collect()
}

/// Predicted labels for `targets` with only training edges observable.
pub fn evaluate(
    params: &ModelParams,
    data: &TrainData<'_>,
    split: &SplitSpec,
    targets: &[usize],
    threshold: f64,
    exec: Execution,
) -> Result<Vec<Label>, ExperimentError> {
    let observed = split.observed_mask(data.graph.edge_count());
    let inputs = ModelInputs {
        graph: data.graph,
        node_x: data.node_x,
        edge_x: data.edge_x,
        observed: Some(&observed),
    };
    Ok(to_labels(&predict(params, &inputs, targets, exec)?, threshold))
}

fn ally_fraction(labels: &[Label]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    labels.iter().filter(|l| l.is_allies()).count() as f64 / labels.len() as f64
}

/// Trains one model. Loss is computed on training edges only; message
/// passing sees training edges only; the parameters of the best validation
/// epoch are restored before testing. MAJ skips training.
pub fn train(
    model: &ModelConfig,
    cfg: &TrainConfig,
    data: &TrainData<'_>,
    split: &SplitSpec,
    exec: Execution,
) -> Result<(TrainReport, Option<ModelParams>), ExperimentError> {
    cfg.validate()?;
    let start = Instant::now();
    let test_gold = gold(data.graph, &split.test);
    if model.variant == Variant::Maj {
        let val_gold = gold(data.graph, &split.validation);
        let val_f1 = f1_score(&vec![Label::Allies; val_gold.len()], &val_gold, cfg.f1_average);
        let preds = vec![Label::Allies; test_gold.len()];
        return Ok((
            TrainReport {
                variant: model.variant,
                seed: model.seed,
                train_loss: Vec::new(),
                validation_f1: vec![val_f1],
                stopped_epoch: 0,
                best_epoch: 0,
                early_stopped: false,
                best_validation_f1: val_f1,
                test_f1: f1_score(&preds, &test_gold, cfg.f1_average),
                test_ally_fraction: ally_fraction(&test_gold),
                test_predictions: preds,
                wall_time_s: start.elapsed().as_secs_f64(),
            },
            None,
        ));
    }

    let observed = split.observed_mask(data.graph.edge_count());
    let inputs = ModelInputs {
        graph: data.graph,
        node_x: data.node_x,
        edge_x: data.edge_x,
        observed: Some(&observed),
    };
    let mut params = ModelParams::init(model, data.node_x.cols(), data.edge_x.cols())?;
    let sizes: Vec<usize> = params.named_tensors().iter().map(|t| t.data.len()).collect();
    let mut adam = AdamState::new(cfg.adam, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    rng.set_stream(1);
    let val_gold = gold(data.graph, &split.validation);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut train_loss = Vec::new();
    let mut validation_f1 = Vec::new();
    let mut early_stopped = false;
    let mut order: Vec<(usize, f64)> = split
        .train
        .iter()
        .map(|&e| (e, if data.graph.edge(e).label.is_allies() { 1.0 } else { 0.0 }))
        .collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, mut grads) = batch_gradient(&params, &inputs, batch, exec)?;
            if !loss.is_finite() {
                return Err(ExperimentError::NonFiniteLoss { epoch, batch: b });
            }
            epoch_loss += loss * batch.len() as f64;
            let g: Vec<&[f64]> = grads.tensors_mut().into_iter().map(|s| &*s).collect();
            adam.step(&mut params.tensors_mut(), &g)?;
        }
        train_loss.push(epoch_loss / order.len().max(1) as f64);
        let preds = to_labels(&predict(&params, &inputs, &split.validation, exec)?, cfg.threshold);
        let f1 = f1_score(&preds, &val_gold, cfg.f1_average);
        validation_f1.push(f1);
        match stopper.update(epoch, f1) {
            StopDecision::Improved => best = params.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                early_stopped = true;
                break;
            }
        }
    }
    let stopped_epoch = validation_f1.len();
    let preds = to_labels(&predict(&best, &inputs, &split.test, exec)?, cfg.threshold);
    Ok((
        TrainReport {
            variant: model.variant,
            seed: model.seed,
            train_loss,
            validation_f1,
            stopped_epoch,
            best_epoch: stopper.best_epoch(),
            early_stopped,
            best_validation_f1: stopper.best().unwrap_or(0.0),
            test_f1: f1_score(&preds, &test_gold, cfg.f1_average),
            test_ally_fraction: ally_fraction(&test_gold),
            test_predictions: preds,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        Some(best),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub variant: Variant,
    pub f1: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl AggregateResult {
    pub fn from_scores(variant: Variant, f1: Vec<f64>) -> Self {
        let (mean, sd) = mean_sd(&f1);
        Self { variant, f1, mean, sd }
    }
}

/// `n_runs` independent runs; run `i` uses seed `seed_base + i` for both
/// its split and its initialization.
pub fn run_repeated(
    model: &ModelConfig,
    cfg: &TrainConfig,
    data: &TrainData<'_>,
    n_runs: usize,
    seed_base: u64,
    exec: Execution,
) -> Result<(AggregateResult, Vec<TrainReport>), ExperimentError> {
    if n_runs < 2 {
        return Err(ExperimentError::Config("at least two runs are needed".into()));
    }
    let results = exec.map_range(n_runs, |i| {
        let seed = seed_base + i as u64;
        let split = split_edges(data.graph.edge_count(), cfg.fractions, seed)?;
        let run_model = ModelConfig { seed, ..model.clone() };
        train(&run_model, cfg, data, &split, exec).map(|(report, _)| report)
    });
    let reports = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let scores = reports.iter().map(|r| r.test_f1).collect();
    Ok((AggregateResult::from_scores(model.variant, scores), reports))
}

fn disparity(a: &[Label], b: &[Label], gold: &[Label], average: F1Average) -> f64 {
    (f1_score(a, gold, average) - f1_score(b, gold, average)).abs()
}

/// Tolerance for comparing resampled statistics with the observed one.
const STAT_TOLERANCE: f64 = 1e-12;

/// Paired approximate-randomization test on `|F1(a) − F1(b)|`. Each
/// resample swaps the two systems' predictions independently per edge with
/// probability 1/2; resample `i` draws from its own seeded stream.
pub fn permutation_test(
    a: &[Label],
    b: &[Label],
    gold: &[Label],
    n_resamples: usize,
    seed: u64,
    average: F1Average,
    exec: Execution,
) -> f64 {
    assert!(a.len() == gold.len() && b.len() == gold.len(), "unaligned predictions");
    let observed = disparity(a, b, gold, average);
    let hits = exec.map_range(n_resamples, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut x = a.to_vec();
        let mut y = b.to_vec();
        for k in 0..gold.len() {
            if rng.gen_bool(0.5) {
                std::mem::swap(&mut x[k], &mut y[k]);
            }
        }
        disparity(&x, &y, gold, average) >= observed - STAT_TOLERANCE
    });
    let count = hits.into_iter().filter(|&h| h).count();
    (1 + count) as f64 / (1 + n_resamples) as f64
}

/// Exact randomization p-value over all `2^n` swap patterns.
pub fn permutation_test_exact(a: &[Label], b: &[Label], gold: &[Label], average: F1Average) -> f64 {
    let n = gold.len();
    assert!(n <= 24, "exhaustive enumeration is limited to 24 edges");
    let observed = disparity(a, b, gold, average);
    let mut count = 0usize;
    for pattern in 0..(1usize << n) {
        let mut x = a.to_vec();
        let mut y = b.to_vec();
        for k in 0..n {
            if pattern >> k & 1 == 1 {
                std::mem::swap(&mut x[k], &mut y[k]);
            }
        }
        if disparity(&x, &y, gold, average) >= observed - STAT_TOLERANCE {
            count += 1;
        }
    }
    count as f64 / (1usize << n) as f64
}

/// Final-layer widths to try for the node encoder, edge encoder and
/// classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimGrid {
    pub node: Vec<usize>,
    pub edge: Vec<usize>,
    pub classifier: Vec<usize>,
}

impl Default for DimGrid {
    fn default() -> Self {
        Self {
            node: vec![32, 64, 128],
            edge: vec![32, 64, 128],
            classifier: vec![32, 64, 128],
        }
    }
}

fn with_last(dims: &[usize], last: usize) -> Vec<usize> {
    let mut out = dims.to_vec();
    match out.last_mut() {
        Some(l) => *l = last,
        None => out.push(last),
    }
    out
}

impl DimGrid {
    /// Grid points applied to `template`, skipping combinations the variant
    /// cannot use (edge and node widths must agree when averaged together).
    pub fn configs(&self, template: &ModelConfig) -> Vec<ModelConfig> {
        let uses_edges = template.variant.mask().needs_edge_encoder();
        let mut out = Vec::new();
        for &n in &self.node {
            for &e in &self.edge {
                if uses_edges && e != n {
                    continue;
                }
                for &c in &self.classifier {
                    let cfg = ModelConfig {
                        node_encoder_dims: with_last(&template.node_encoder_dims, n),
                        edge_encoder_dims: with_last(&template.edge_encoder_dims, if uses_edges { e } else { n }),
                        classifier_dims: with_last(&template.classifier_dims, c),
                        ..template.clone()
                    };
                    if !out.contains(&cfg) {
                        out.push(cfg);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub config: ModelConfig,
    pub validation_f1: Vec<f64>,
    pub mean_validation_f1: f64,
    pub parameter_count: usize,
}

fn config_key(c: &ModelConfig) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    (
        c.node_encoder_dims.clone(),
        c.edge_encoder_dims.clone(),
        c.classifier_dims.clone(),
    )
}

/// Highest mean validation F1; ties go to the smaller parameter count, then
/// to the lexicographically smaller (node, edge, classifier) dims.
pub fn select_best(points: &[GridPoint]) -> Option<&GridPoint> {
    points.iter().min_by(|a, b| {
        b.mean_validation_f1
            .total_cmp(&a.mean_validation_f1)
            .then(a.parameter_count.cmp(&b.parameter_count))
            .then_with(|| config_key(&a.config).cmp(&config_key(&b.config)))
    })
}

pub fn parameter_count(model: &ModelConfig, node_in: usize, edge_in: usize) -> Result<usize, ExperimentError> {
    if model.variant == Variant::Maj {
        return Ok(0);
    }
    Ok(ModelParams::init(model, node_in, edge_in)?.parameter_count())
}

/// Evaluates every configuration with `runs` seeded runs (seeds
/// `seed_base..seed_base + runs`) and returns all points plus the best.
pub fn grid_search(
    configs: &[ModelConfig],
    cfg: &TrainConfig,
    data: &TrainData<'_>,
    runs: usize,
    seed_base: u64,
    exec: Execution,
) -> Result<(Vec<GridPoint>, ModelConfig), ExperimentError> {
    if configs.is_empty() {
        return Err(ExperimentError::Config("empty grid".into()));
    }
    let mut points = Vec::with_capacity(configs.len());
    for config in configs {
        let scores = exec.map_range(runs, |i| {
            let seed = seed_base + i as u64;
            let split = split_edges(data.graph.edge_count(), cfg.fractions, seed)?;
            let run = ModelConfig { seed, ..config.clone() };
            train(&run, cfg, data, &split, exec).map(|(r, _)| r.best_validation_f1)
        });
        let validation_f1 = scores.into_iter().collect::<Result<Vec<_>, _>>()?;
        let (mean, _) = mean_sd(&validation_f1);
        points.push(GridPoint {
            config: config.clone(),
            mean_validation_f1: mean,
            validation_f1,
            parameter_count: parameter_count(config, data.node_x.cols(), data.edge_x.cols())?,
        });
    }
    let best = select_best(&points).expect("non-empty grid").config.clone();
    Ok((points, best))
}
