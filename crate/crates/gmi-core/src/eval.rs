//! Downstream evaluation heads.
//!
//! Embeddings are frozen inputs here. Node classification trains an
//! L2-regularized multinomial logistic regression on the train-mask rows and
//! scores the test rows; link prediction scores node pairs with
//! `sigmoid(h_i . h_j)` and reports an exact rank-statistic AUC against
//! sampled non-edges. Both heads repeat over seeded runs and report
//! mean and standard deviation.

use std::collections::HashSet;
use std::time::Instant;

use rand::Rng;
use serde_json::json;
use thiserror::Error;

use crate::diffmath::{stable_sigmoid, Matrix};
use crate::graph::Graph;
use crate::seeding::{indexed_stream_rng, streams};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("train and test masks overlap at node {node}")]
    MaskOverlap { node: usize },
    #[error("mask length {mask} does not match {expected} embedding rows")]
    MaskLength { mask: usize, expected: usize },
    #[error("class {class} has no training nodes")]
    ClassMissingFromTrain { class: u32 },
    #[error("no nodes selected by the {which} mask")]
    EmptyMask { which: &'static str },
    #[error("need at least one evaluation run")]
    NoRuns,
    #[error("no removed edges to score")]
    NoPositives,
    #[error("graph has only {available} non-adjacent pairs, need {needed}")]
    NotEnoughNonEdges { available: usize, needed: usize },
    #[error("prediction and label lengths differ: {pred} vs {truth}")]
    LengthMismatch { pred: usize, truth: usize },
}

/// Which downstream task a report describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTask {
    Classification,
    LinkPrediction,
}

impl EvalTask {
    pub fn name(self) -> &'static str {
        match self {
            EvalTask::Classification => "classification",
            EvalTask::LinkPrediction => "linkpred",
        }
    }
}

/// One metric aggregated over repeated runs. `std` is the population
/// standard deviation, so a single run reports 0.
#[derive(Debug, Clone)]
pub struct MetricSummary {
    pub name: &'static str,
    pub per_run: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl MetricSummary {
    fn new(name: &'static str, per_run: Vec<f64>) -> Self {
        let n = per_run.len().max(1) as f64;
        let mean = per_run.iter().sum::<f64>() / n;
        let var = per_run.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MetricSummary { name, per_run, mean, std: var.sqrt() }
    }
}

/// Evaluation outcome: per-run metric values plus their aggregates, the
/// configuration that produced them, and elapsed wall-clock time.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub task: EvalTask,
    pub metrics: Vec<MetricSummary>,
    pub config_echo: String,
    pub wall_clock_seconds: f64,
}

impl EvalReport {
    pub fn runs(&self) -> usize {
        self.metrics.first().map_or(0, |m| m.per_run.len())
    }

    /// Flat `key = value` text rendering.
    pub fn text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("task = {}\n", self.task.name()));
        out.push_str(&format!("runs = {}\n", self.runs()));
        for m in &self.metrics {
            out.push_str(&format!("{}_mean = {:.6}\n", m.name, m.mean));
            out.push_str(&format!("{}_std = {:.6}\n", m.name, m.std));
        }
        out.push_str(&format!("config = {}\n", self.config_echo));
        out.push_str(&format!("wall_clock_seconds = {:.3}\n", self.wall_clock_seconds));
        out
    }

    /// Newline-delimited JSON: one record per run, then one aggregate record.
    pub fn ndjson(&self) -> String {
        let mut out = String::new();
        for run in 0..self.runs() {
            let mut obj = json!({
                "record": "run",
                "task": self.task.name(),
                "run": run,
            });
            for m in &self.metrics {
                obj[m.name] = json!(m.per_run[run]);
            }
            out.push_str(&obj.to_string());
            out.push('\n');
        }
        let mut agg = json!({
            "record": "aggregate",
            "task": self.task.name(),
            "runs": self.runs(),
            "config": self.config_echo,
            "wall_clock_seconds": self.wall_clock_seconds,
        });
        for m in &self.metrics {
            agg[format!("{}_mean", m.name)] = json!(m.mean);
            agg[format!("{}_std", m.name)] = json!(m.std);
        }
        out.push_str(&agg.to_string());
        out.push('\n');
        out
    }
}

/// Column z-scoring: each column ends with mean 0 and standard deviation 1;
/// zero-variance columns become all zeros.
pub fn standardize(embeddings: &Matrix) -> Matrix {
    let (n, d) = embeddings.shape();
    let mut out = embeddings.clone();
    if n == 0 {
        return out;
    }
    for j in 0..d {
        let mut mean = 0.0;
        for i in 0..n {
            mean += embeddings.get(i, j);
        }
        mean /= n as f64;
        let mut var = 0.0;
        for i in 0..n {
            let c = embeddings.get(i, j) - mean;
            var += c * c;
        }
        var /= n as f64;
        let std = var.sqrt();
        for i in 0..n {
            let v = if std == 0.0 { 0.0 } else { (embeddings.get(i, j) - mean) / std };
            out.set(i, j, v);
        }
    }
    out
}

/// Classifier hyper-parameters: full-batch gradient descent on softmax
/// cross-entropy with an L2 penalty on the weights (not the bias).
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticConfig {
    pub l2: f64,
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig { l2: 0.01, steps: 300, learning_rate: 0.1 }
    }
}

fn check_masks(
    n: usize,
    train_mask: &[bool],
    test_mask: &[bool],
) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    if train_mask.len() != n {
        return Err(EvalError::MaskLength { mask: train_mask.len(), expected: n });
    }
    if test_mask.len() != n {
        return Err(EvalError::MaskLength { mask: test_mask.len(), expected: n });
    }
    if let Some(node) = (0..n).find(|&i| train_mask[i] && test_mask[i]) {
        return Err(EvalError::MaskOverlap { node });
    }
    let train: Vec<usize> = (0..n).filter(|&i| train_mask[i]).collect();
    let test: Vec<usize> = (0..n).filter(|&i| test_mask[i]).collect();
    if train.is_empty() {
        return Err(EvalError::EmptyMask { which: "train" });
    }
    if test.is_empty() {
        return Err(EvalError::EmptyMask { which: "test" });
    }
    Ok((train, test))
}

/// One logistic-regression fit and its argmax predictions on `test`.
fn fit_and_predict(
    embeddings: &Matrix,
    labels: &[u32],
    train: &[usize],
    test: &[usize],
    n_classes: usize,
    config: &LogisticConfig,
    rng: &mut impl Rng,
) -> Vec<u32> {
    let d = embeddings.shape().1;
    let c = n_classes;
    let nt = train.len();
    let mut w = Matrix::zeros(d, c);
    for i in 0..d {
        for j in 0..c {
            w.set(i, j, rng.gen_range(-0.01..0.01));
        }
    }
    let mut bias = vec![0.0f64; c];

    let mut logits = vec![0.0f64; c];
    let mut grad_w = Matrix::zeros(d, c);
    let mut grad_b = vec![0.0f64; c];
    for _ in 0..config.steps {
        grad_w.fill(0.0);
        grad_b.iter_mut().for_each(|g| *g = 0.0);
        for &i in train {
            let x = embeddings.row(i);
            for k in 0..c {
                let mut z = bias[k];
                for (f, &xv) in x.iter().enumerate() {
                    z += xv * w.get(f, k);
                }
                logits[k] = z;
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for z in logits.iter_mut() {
                *z = (*z - max).exp();
                total += *z;
            }
            let y = labels[i] as usize;
            for k in 0..c {
                let err = logits[k] / total - if k == y { 1.0 } else { 0.0 };
                grad_b[k] += err;
                for (f, &xv) in x.iter().enumerate() {
                    let g = grad_w.get(f, k) + err * xv;
                    grad_w.set(f, k, g);
                }
            }
        }
        let scale = 1.0 / nt as f64;
        for f in 0..d {
            for k in 0..c {
                let g = grad_w.get(f, k) * scale + config.l2 * w.get(f, k);
                w.set(f, k, w.get(f, k) - config.learning_rate * g);
            }
        }
        for k in 0..c {
            bias[k] -= config.learning_rate * grad_b[k] * scale;
        }
    }

    test.iter()
        .map(|&i| {
            let x = embeddings.row(i);
            let mut best = 0usize;
            let mut best_z = f64::NEG_INFINITY;
            for k in 0..c {
                let mut z = bias[k];
                for (f, &xv) in x.iter().enumerate() {
                    z += xv * w.get(f, k);
                }
                if z > best_z {
                    best_z = z;
                    best = k;
                }
            }
            best as u32
        })
        .collect()
}

/// Fraction of matching entries.
pub fn accuracy(pred: &[u32], truth: &[u32]) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch { pred: pred.len(), truth: truth.len() });
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Micro-averaged F1 over aligned binary decisions:
/// `2 TP / (2 TP + FP + FN)`. An all-true-negative slate scores 0.
pub fn micro_f1(pred: &[bool], truth: &[bool]) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch { pred: pred.len(), truth: truth.len() });
    }
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fne = 0u64;
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fne;
    if denom == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / denom as f64)
}

/// Micro-F1 of single-label predictions, treating each (node, class) pair
/// as one binary decision. With argmax predictions this equals accuracy.
pub fn micro_f1_from_classes(
    pred: &[u32],
    truth: &[u32],
    n_classes: usize,
) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch { pred: pred.len(), truth: truth.len() });
    }
    let mut p = Vec::with_capacity(pred.len() * n_classes);
    let mut t = Vec::with_capacity(pred.len() * n_classes);
    for i in 0..pred.len() {
        for k in 0..n_classes as u32 {
            p.push(pred[i] == k);
            t.push(truth[i] == k);
        }
    }
    micro_f1(&p, &t)
}

/// Trains a logistic-regression probe `runs` times with per-run seeds and
/// reports test accuracy and micro-F1. Embeddings are read-only; callers
/// decide whether to standardize first.
pub fn logistic_eval(
    embeddings: &Matrix,
    labels: &[u32],
    train_mask: &[bool],
    test_mask: &[bool],
    runs: usize,
    seed: u64,
    config: &LogisticConfig,
) -> Result<EvalReport, EvalError> {
    let started = Instant::now();
    if runs == 0 {
        return Err(EvalError::NoRuns);
    }
    let n = embeddings.shape().0;
    if labels.len() != n {
        return Err(EvalError::MaskLength { mask: labels.len(), expected: n });
    }
    let (train, test) = check_masks(n, train_mask, test_mask)?;
    let n_classes = train
        .iter()
        .chain(&test)
        .map(|&i| labels[i] + 1)
        .max()
        .unwrap_or(1) as usize;
    let train_classes: HashSet<u32> = train.iter().map(|&i| labels[i]).collect();
    for &i in &test {
        if !train_classes.contains(&labels[i]) {
            return Err(EvalError::ClassMissingFromTrain { class: labels[i] });
        }
    }
    let truth: Vec<u32> = test.iter().map(|&i| labels[i]).collect();

    let mut accs = Vec::with_capacity(runs);
    let mut f1s = Vec::with_capacity(runs);
    for run in 0..runs {
        let mut rng = indexed_stream_rng(seed, streams::EVAL, run as u64);
        let pred = fit_and_predict(embeddings, labels, &train, &test, n_classes, config, &mut rng);
        accs.push(accuracy(&pred, &truth)?);
        f1s.push(micro_f1_from_classes(&pred, &truth, n_classes)?);
    }
    Ok(EvalReport {
        task: EvalTask::Classification,
        metrics: vec![MetricSummary::new("accuracy", accs), MetricSummary::new("micro_f1", f1s)],
        config_echo: format!(
            "l2 = {}, steps = {}, lr = {}, seed = {}",
            config.l2, config.steps, config.learning_rate, seed
        ),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Single-number probe for an early-stopping monitor: mean test-mask
/// accuracy of one deterministic classifier fit.
pub fn probe_accuracy(
    embeddings: &Matrix,
    labels: &[u32],
    train_mask: &[bool],
    test_mask: &[bool],
    seed: u64,
) -> Result<f64, EvalError> {
    let report = logistic_eval(
        embeddings,
        labels,
        train_mask,
        test_mask,
        1,
        seed,
        &LogisticConfig::default(),
    )?;
    Ok(report.metrics[0].mean)
}

/// Exact AUC by rank statistics with average ranks on ties: the probability
/// that a random positive outscores a random negative, ties counting 0.5.
pub fn rank_auc(positives: &[f64], negatives: &[f64]) -> Result<f64, EvalError> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(EvalError::NoPositives);
    }
    let mut scored: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores must not be NaN"));
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j < scored.len() && scored[j].0 == scored[i].0 {
            j += 1;
        }
        // Ranks are 1-based; a tie block [i, j) shares the average rank.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for item in &scored[i..j] {
            if item.1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let p = positives.len() as f64;
    let n = negatives.len() as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Scores removed edges against sampled never-connected pairs. Negatives are
/// drawn uniformly among unordered pairs absent from `original` (removed
/// positives were edges there, so they can never be drawn), one fresh draw
/// per run.
pub fn link_auc(
    embeddings: &Matrix,
    removed_edges: &[(u32, u32)],
    original: &Graph,
    seed: u64,
    runs: usize,
) -> Result<EvalReport, EvalError> {
    let started = Instant::now();
    if runs == 0 {
        return Err(EvalError::NoRuns);
    }
    if removed_edges.is_empty() {
        return Err(EvalError::NoPositives);
    }
    let n = original.n_nodes();
    let edges: HashSet<(u32, u32)> = original.edge_list().into_iter().collect();
    let available = n * (n - 1) / 2 - edges.len();
    if available < removed_edges.len() {
        return Err(EvalError::NotEnoughNonEdges {
            available,
            needed: removed_edges.len(),
        });
    }

    let score = |i: u32, j: u32| {
        let mut dot = 0.0;
        for (&a, &b) in embeddings.row(i as usize).iter().zip(embeddings.row(j as usize)) {
            dot += a * b;
        }
        stable_sigmoid(dot)
    };
    let positives: Vec<f64> = removed_edges.iter().map(|&(i, j)| score(i, j)).collect();

    let mut aucs = Vec::with_capacity(runs);
    for run in 0..runs {
        let mut rng = indexed_stream_rng(seed, streams::EVAL, run as u64);
        let mut drawn: HashSet<(u32, u32)> = HashSet::with_capacity(removed_edges.len());
        while drawn.len() < removed_edges.len() {
            let u = rng.gen_range(0..n as u32);
            let v = rng.gen_range(0..n as u32);
            if u == v {
                continue;
            }
            let key = (u.min(v), u.max(v));
            if edges.contains(&key) {
                continue;
            }
            drawn.insert(key);
        }
        let negatives: Vec<f64> = drawn.iter().map(|&(i, j)| score(i, j)).collect();
        aucs.push(rank_auc(&positives, &negatives)?);
    }
    Ok(EvalReport {
        task: EvalTask::LinkPrediction,
        metrics: vec![MetricSummary::new("auc", aucs)],
        config_echo: format!("positives = {}, seed = {}", removed_edges.len(), seed),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}
