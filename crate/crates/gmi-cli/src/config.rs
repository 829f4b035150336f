//! Run configuration: defaults, then a flat `key = value` file, then flag
//! overrides, in that order. The fully resolved result is echoed next to a
//! command's outputs so any run can be reproduced from one diff-able file.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use gmi_core::encoder::EncoderConfig;
use gmi_core::objective::{GmiConfig, WeightMode};
use gmi_core::trainer::{Monitor, SubsampleConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub hidden_dim: usize,
    pub depth: usize,
    pub residual: bool,
    pub dense_gmi: bool,
    pub weight_mode: WeightMode,
    pub alpha: f64,
    pub beta: f64,
    pub negatives: usize,
    pub compressed_input: bool,
    pub topology_negatives_per_edge: usize,
    pub shared_discriminator: bool,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub early_stop_window: usize,
    pub fixed_epochs: Option<usize>,
    pub monitor: Monitor,
    pub subsample_fanout_1: Option<usize>,
    pub subsample_fanout_2: Option<usize>,
    pub subsample_batch_size: Option<usize>,
    /// Evaluation repetitions; each subcommand fills its own default before
    /// echoing the config.
    pub runs: Option<usize>,
    pub standardize: bool,
    pub ratio: f64,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let encoder = EncoderConfig::default();
        let gmi = GmiConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            dataset: None,
            out: None,
            seed: train.seed,
            hidden_dim: encoder.hidden_dim,
            depth: encoder.depth,
            residual: encoder.residual,
            dense_gmi: encoder.dense_gmi,
            weight_mode: gmi.weight_mode,
            alpha: gmi.alpha,
            beta: gmi.beta,
            negatives: gmi.negatives,
            compressed_input: gmi.compressed_input,
            topology_negatives_per_edge: gmi.topology_negatives_per_edge,
            shared_discriminator: gmi.shared_discriminator,
            learning_rate: train.learning_rate,
            max_epochs: train.max_epochs,
            early_stop_window: train.early_stop_window,
            fixed_epochs: None,
            monitor: train.monitor,
            subsample_fanout_1: None,
            subsample_fanout_2: None,
            subsample_batch_size: None,
            runs: None,
            standardize: true,
            ratio: 0.2,
            embeddings: None,
            checkpoint: None,
        }
    }
}

pub fn weight_mode_name(mode: WeightMode) -> &'static str {
    match mode {
        WeightMode::Mean => "mean",
        WeightMode::Adaptive => "adaptive",
    }
}

pub fn parse_weight_mode(value: &str) -> Result<WeightMode> {
    match value {
        "mean" => Ok(WeightMode::Mean),
        "adaptive" => Ok(WeightMode::Adaptive),
        other => Err(anyhow!("weight_mode must be mean or adaptive, got {other:?}")),
    }
}

pub fn monitor_name(monitor: Monitor) -> &'static str {
    match monitor {
        Monitor::TrainLoss => "train-loss",
        Monitor::ValidationAccuracy => "validation-accuracy",
    }
}

pub fn parse_monitor(value: &str) -> Result<Monitor> {
    match value {
        "train-loss" => Ok(Monitor::TrainLoss),
        "validation-accuracy" => Ok(Monitor::ValidationAccuracy),
        other => {
            Err(anyhow!("monitor must be train-loss or validation-accuracy, got {other:?}"))
        }
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(anyhow!("{key} must be true or false, got {other:?}")),
    }
}

fn parse_num<T>(key: &str, value: &str) -> Result<T>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| anyhow!("{key}: cannot parse {value:?}: {e}"))
}

impl RunConfig {
    /// Applies one config file on top of the current values. Lines are
    /// `key = value`; blank lines and lines starting with `#` are skipped;
    /// a repeated key is an error rather than silently last-wins.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let mut seen: HashSet<String> = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = || format!("{}:{}", path.display(), lineno + 1);
            let (key, value) =
                line.split_once('=').ok_or_else(|| anyhow!("{}: expected `key = value`", at()))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                bail!("{}: duplicate key {key:?}", at());
            }
            self.set(key, value).with_context(at)?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = Some(value.to_string()),
            "out" => self.out = Some(PathBuf::from(value)),
            "seed" => self.seed = parse_num(key, value)?,
            "hidden_dim" => self.hidden_dim = parse_num(key, value)?,
            "depth" => self.depth = parse_num(key, value)?,
            "residual" => self.residual = parse_bool(key, value)?,
            "dense_gmi" => self.dense_gmi = parse_bool(key, value)?,
            "weight_mode" => self.weight_mode = parse_weight_mode(value)?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "beta" => self.beta = parse_num(key, value)?,
            "negatives" => self.negatives = parse_num(key, value)?,
            "compressed_input" => self.compressed_input = parse_bool(key, value)?,
            "topology_negatives_per_edge" => {
                self.topology_negatives_per_edge = parse_num(key, value)?
            }
            "shared_discriminator" => self.shared_discriminator = parse_bool(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "max_epochs" => self.max_epochs = parse_num(key, value)?,
            "early_stop_window" => self.early_stop_window = parse_num(key, value)?,
            "fixed_epochs" => self.fixed_epochs = Some(parse_num(key, value)?),
            "monitor" => self.monitor = parse_monitor(value)?,
            "subsample_fanout_1" => self.subsample_fanout_1 = Some(parse_num(key, value)?),
            "subsample_fanout_2" => self.subsample_fanout_2 = Some(parse_num(key, value)?),
            "subsample_batch_size" => self.subsample_batch_size = Some(parse_num(key, value)?),
            "runs" => self.runs = Some(parse_num(key, value)?),
            "standardize" => self.standardize = parse_bool(key, value)?,
            "ratio" => self.ratio = parse_num(key, value)?,
            "embeddings" => self.embeddings = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    /// The echoed form; parsing it back yields an identical RunConfig.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("# run\n");
        if let Some(dataset) = &self.dataset {
            let _ = writeln!(out, "dataset = {dataset}");
        }
        if let Some(dir) = &self.out {
            let _ = writeln!(out, "out = {}", dir.display());
        }
        let _ = writeln!(out, "seed = {}", self.seed);
        out.push_str("\n# encoder\n");
        let _ = writeln!(out, "hidden_dim = {}", self.hidden_dim);
        let _ = writeln!(out, "depth = {}", self.depth);
        let _ = writeln!(out, "residual = {}", self.residual);
        let _ = writeln!(out, "dense_gmi = {}", self.dense_gmi);
        out.push_str("\n# objective\n");
        let _ = writeln!(out, "weight_mode = {}", weight_mode_name(self.weight_mode));
        let _ = writeln!(out, "alpha = {}", self.alpha);
        let _ = writeln!(out, "beta = {}", self.beta);
        let _ = writeln!(out, "negatives = {}", self.negatives);
        let _ = writeln!(out, "compressed_input = {}", self.compressed_input);
        let _ = writeln!(
            out,
            "topology_negatives_per_edge = {}",
            self.topology_negatives_per_edge
        );
        let _ = writeln!(out, "shared_discriminator = {}", self.shared_discriminator);
        out.push_str("\n# trainer\n");
        let _ = writeln!(out, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(out, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(out, "early_stop_window = {}", self.early_stop_window);
        if let Some(n) = self.fixed_epochs {
            let _ = writeln!(out, "fixed_epochs = {n}");
        }
        let _ = writeln!(out, "monitor = {}", monitor_name(self.monitor));
        if let Some(n) = self.subsample_fanout_1 {
            let _ = writeln!(out, "subsample_fanout_1 = {n}");
        }
        if let Some(n) = self.subsample_fanout_2 {
            let _ = writeln!(out, "subsample_fanout_2 = {n}");
        }
        if let Some(n) = self.subsample_batch_size {
            let _ = writeln!(out, "subsample_batch_size = {n}");
        }
        out.push_str("\n# eval\n");
        if let Some(n) = self.runs {
            let _ = writeln!(out, "runs = {n}");
        }
        let _ = writeln!(out, "standardize = {}", self.standardize);
        let _ = writeln!(out, "ratio = {}", self.ratio);
        if let Some(path) = &self.embeddings {
            let _ = writeln!(out, "embeddings = {}", path.display());
        }
        if let Some(path) = &self.checkpoint {
            let _ = writeln!(out, "checkpoint = {}", path.display());
        }
        out
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            hidden_dim: self.hidden_dim,
            depth: self.depth,
            residual: self.residual,
            dense_gmi: self.dense_gmi,
        }
    }

    pub fn gmi_config(&self) -> GmiConfig {
        GmiConfig {
            weight_mode: self.weight_mode,
            negatives: self.negatives,
            alpha: self.alpha,
            beta: self.beta,
            compressed_input: self.compressed_input,
            topology_negatives_per_edge: self.topology_negatives_per_edge,
            shared_discriminator: self.shared_discriminator,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let subsample = match (
            self.subsample_fanout_1,
            self.subsample_fanout_2,
            self.subsample_batch_size,
        ) {
            (Some(fanout_1), Some(fanout_2), Some(batch_size)) => {
                Some(SubsampleConfig { fanout_1, fanout_2, batch_size })
            }
            _ => None,
        };
        TrainConfig {
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            early_stop_window: self.early_stop_window,
            seed: self.seed,
            fixed_epochs: self.fixed_epochs,
            subsample,
            monitor: self.monitor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder_config().validate()?;
        self.gmi_config().validate()?;
        self.train_config().validate()?;
        let subsample_keys = [
            self.subsample_fanout_1.is_some(),
            self.subsample_fanout_2.is_some(),
            self.subsample_batch_size.is_some(),
        ];
        if subsample_keys.iter().any(|&k| k) && !subsample_keys.iter().all(|&k| k) {
            bail!(
                "subsampling needs all of subsample_fanout_1, subsample_fanout_2, \
                 subsample_batch_size"
            );
        }
        if !(0.0..1.0).contains(&self.ratio) {
            bail!("ratio must be in [0, 1), got {}", self.ratio);
        }
        if self.runs == Some(0) {
            bail!("runs must be at least 1");
        }
        Ok(())
    }
}
