//! The optimization loop: Adam over encoder and discriminator parameters,
//! per-epoch negative redraws, early stopping on the monitored metric, and
//! resumable checkpoints.
//!
//! One training run owns its parameters exclusively. All randomness flows
//! from the run's root seed through named streams, so a finished run is a
//! pure function of (seed, configs, dataset).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index::sample as index_sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diffmath::{DiffError, Matrix, Tape};
use crate::encoder::{encode, EncoderConfig, EncoderError, EncoderParams};
use crate::eval::{probe_accuracy, standardize, EvalError};
use crate::graph::{induced_subgraph, Graph, GraphError, InducedSubgraph};
use crate::objective::{
    build_loss, draw_step_samples, expected_discriminators, Discriminator, GmiConfig, LossInputs,
    ObjectiveError,
};
use crate::seeding::{stream_rng, streams};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("bad config: {detail}")]
    Config { detail: String },
    #[error("non-finite value at epoch {epoch} in {detail}")]
    NonFinite { epoch: usize, detail: String },
    #[error("parameter {index} has shape {param:?} but its gradient is {grad:?}")]
    GradShape { index: usize, param: (usize, usize), grad: (usize, usize) },
    #[error("subsampling needs at least one root node")]
    EmptyRoots,
    #[error("the validation-accuracy monitor needs labels and split masks")]
    MonitorNeedsLabels,
    #[error("checkpoint: {detail}")]
    Checkpoint { detail: String },
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Per-epoch neighborhood subsampling for graphs too large to propagate
/// whole: `batch_size` roots, up to `fanout_1` one-hop neighbors each, up to
/// `fanout_2` two-hop neighbors of each of those.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubsampleConfig {
    pub fanout_1: usize,
    pub fanout_2: usize,
    pub batch_size: usize,
}

/// What early stopping watches. Training loss is the label-free default;
/// the validation monitor fits a logistic probe per epoch and needs labels
/// and masks on the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monitor {
    TrainLoss,
    ValidationAccuracy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub early_stop_window: usize,
    pub seed: u64,
    /// Run exactly this many epochs with no early stopping.
    pub fixed_epochs: Option<usize>,
    pub subsample: Option<SubsampleConfig>,
    pub monitor: Monitor,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            max_epochs: 600,
            early_stop_window: 20,
            seed: 1,
            fixed_epochs: None,
            subsample: None,
            monitor: Monitor::TrainLoss,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config {
                detail: format!("learning_rate {} must be > 0", self.learning_rate),
            });
        }
        if self.early_stop_window == 0 {
            return Err(TrainError::Config { detail: "early_stop_window must be >= 1".into() });
        }
        if let Some(s) = &self.subsample {
            if s.fanout_1 == 0 || s.fanout_2 == 0 || s.batch_size == 0 {
                return Err(TrainError::Config {
                    detail: "subsample fanouts and batch size must be >= 1".into(),
                });
            }
        }
        Ok(())
    }

    /// Total epoch budget for one run.
    pub fn epoch_budget(&self) -> usize {
        self.fixed_epochs.unwrap_or(self.max_epochs)
    }
}

/// Adam moment estimates, one pair per parameter tensor, plus the shared
/// step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &[Matrix]) -> Self {
        let zeros: Vec<Matrix> =
            params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        AdamState { m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn t(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [Matrix],
    grads: &[Matrix],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::Config {
            detail: format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        });
    }
    for (index, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(TrainError::GradShape { index, param: p.shape(), grad: g.shape() });
        }
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for (((p, g), m), v) in
        params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v)
    {
        for ((pv, &gv), (mv, vv)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()))
        {
            *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
            *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
    }
    Ok(())
}

/// One epoch's reportable numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub fmi: f64,
    pub topology: f64,
}

/// Loss-history rendering: one `epoch<TAB>loss<TAB>fmi<TAB>topology` line
/// per epoch.
pub fn history_lines(history: &[EpochStats]) -> String {
    let mut out = String::new();
    for e in history {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", e.epoch, e.loss, e.fmi, e.topology));
    }
    out
}

/// Parameters frozen at the best monitored epoch.
#[derive(Debug, Clone)]
pub struct BestSnapshot {
    pub epoch: usize,
    /// Monitor score, oriented so larger is better.
    pub metric: f64,
    pub encoder: EncoderParams,
    pub discs: Vec<Discriminator>,
}

/// Everything a run carries between epochs; checkpoints serialize exactly
/// this. The negatives generator is part of the state so a resumed run draws
/// the same samples the uninterrupted run would have.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub encoder: EncoderParams,
    pub discs: Vec<Discriminator>,
    pub adam: AdamState,
    pub next_epoch: usize,
    pub history: Vec<EpochStats>,
    pub best: Option<BestSnapshot>,
    pub seed: u64,
    neg_rng: ChaCha8Rng,
}

fn flat_params(encoder: &EncoderParams, discs: &[Discriminator]) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(encoder.layers().len() * 2 + discs.len());
    for layer in encoder.layers() {
        out.push(layer.weight.clone());
        out.push(layer.prelu_slope.clone());
    }
    out.extend(discs.iter().map(|d| d.theta.clone()));
    out
}

impl TrainerState {
    /// Draws fresh encoder and discriminator parameters from the run's
    /// "init" stream and zeroed optimizer state.
    pub fn init(
        graph: &Graph,
        encoder_config: &EncoderConfig,
        gmi_config: &GmiConfig,
        train_config: &TrainConfig,
    ) -> Result<Self, TrainError> {
        encoder_config.validate()?;
        gmi_config.validate()?;
        train_config.validate()?;
        let mut init_rng = stream_rng(train_config.seed, streams::INIT);
        let encoder = EncoderParams::init(
            graph.n_features(),
            encoder_config.hidden_dim,
            encoder_config.depth,
            encoder_config.residual,
            encoder_config.dense_gmi,
            &mut init_rng,
        )?;
        let d_x = if gmi_config.compressed_input {
            encoder_config.hidden_dim
        } else {
            graph.n_features()
        };
        let discs: Vec<Discriminator> = (0..expected_discriminators(&encoder, gmi_config))
            .map(|_| Discriminator::init(encoder_config.hidden_dim, d_x, &mut init_rng))
            .collect();
        let adam = AdamState::new(&flat_params(&encoder, &discs));
        Ok(TrainerState {
            encoder,
            discs,
            adam,
            next_epoch: 0,
            history: Vec::new(),
            best: None,
            seed: train_config.seed,
            neg_rng: stream_rng(train_config.seed, streams::NEGATIVES),
        })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), TrainError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        write_u32(w, CHECKPOINT_VERSION)?;
        write_u64(w, self.seed)?;
        self.encoder.write_to(w)?;
        write_discs(w, &self.discs)?;
        write_u64(w, self.adam.t)?;
        write_u64(w, self.adam.m.len() as u64)?;
        for m in self.adam.m.iter().chain(&self.adam.v) {
            write_matrix(w, m)?;
        }
        write_u64(w, self.next_epoch as u64)?;
        write_u64(w, self.history.len() as u64)?;
        for e in &self.history {
            write_u64(w, e.epoch as u64)?;
            write_f64(w, e.loss)?;
            write_f64(w, e.fmi)?;
            write_f64(w, e.topology)?;
        }
        match &self.best {
            None => w.write_all(&[0u8])?,
            Some(b) => {
                w.write_all(&[1u8])?;
                write_u64(w, b.epoch as u64)?;
                write_f64(w, b.metric)?;
                b.encoder.write_to(w)?;
                write_discs(w, &b.discs)?;
            }
        }
        w.write_all(&self.neg_rng.get_seed())?;
        let pos = self.neg_rng.get_word_pos();
        write_u64(w, pos as u64)?;
        write_u64(w, (pos >> 64) as u64)?;
        write_u64(w, self.neg_rng.get_stream())?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, TrainError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(TrainError::Checkpoint { detail: "bad magic bytes".into() });
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(TrainError::Checkpoint {
                detail: format!("unsupported version {version}"),
            });
        }
        let seed = read_u64(r)?;
        let encoder = EncoderParams::read_from(r)?;
        let discs = read_discs(r)?;
        let t = read_u64(r)?;
        let n_params = read_u64(r)? as usize;
        let expected = encoder.layers().len() * 2 + discs.len();
        if n_params != expected {
            return Err(TrainError::Checkpoint {
                detail: format!("{n_params} moment slots for {expected} parameters"),
            });
        }
        let mut moments = Vec::with_capacity(2 * n_params);
        for _ in 0..2 * n_params {
            moments.push(read_matrix(r)?);
        }
        let v = moments.split_off(n_params);
        let adam = AdamState { m: moments, v, t };
        let next_epoch = read_u64(r)? as usize;
        let n_history = read_u64(r)? as usize;
        if n_history > 100_000_000 {
            return Err(TrainError::Checkpoint {
                detail: format!("implausible history length {n_history}"),
            });
        }
        let mut history = Vec::with_capacity(n_history);
        for _ in 0..n_history {
            history.push(EpochStats {
                epoch: read_u64(r)? as usize,
                loss: read_f64(r)?,
                fmi: read_f64(r)?,
                topology: read_f64(r)?,
            });
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let best = if flag[0] == 1 {
            let epoch = read_u64(r)? as usize;
            let metric = read_f64(r)?;
            let encoder = EncoderParams::read_from(r)?;
            let discs = read_discs(r)?;
            Some(BestSnapshot { epoch, metric, encoder, discs })
        } else if flag[0] == 0 {
            None
        } else {
            return Err(TrainError::Checkpoint {
                detail: format!("bad snapshot flag {}", flag[0]),
            });
        };
        let mut rng_seed = [0u8; 32];
        r.read_exact(&mut rng_seed)?;
        let lo = read_u64(r)? as u128;
        let hi = read_u64(r)? as u128;
        let stream = read_u64(r)?;
        let mut neg_rng = <ChaCha8Rng as rand::SeedableRng>::from_seed(rng_seed);
        neg_rng.set_stream(stream);
        neg_rng.set_word_pos(lo | (hi << 64));
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(TrainError::Checkpoint { detail: "trailing bytes".into() });
        }
        Ok(TrainerState {
            encoder,
            discs,
            adam,
            next_epoch,
            history,
            best,
            seed,
            neg_rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"GMIC";
const CHECKPOINT_VERSION: u32 = 1;

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f64(w: &mut impl Write, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn write_matrix(w: &mut impl Write, m: &Matrix) -> std::io::Result<()> {
    write_u64(w, m.rows() as u64)?;
    write_u64(w, m.cols() as u64)?;
    for &v in m.data() {
        write_f64(w, v)?;
    }
    Ok(())
}

fn read_matrix(r: &mut impl Read) -> Result<Matrix, TrainError> {
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    if rows.saturating_mul(cols) > 1 << 32 {
        return Err(TrainError::Checkpoint {
            detail: format!("implausible tensor shape {rows}x{cols}"),
        });
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(read_f64(r)?);
    }
    Matrix::from_vec(rows, cols, data)
        .map_err(|e| TrainError::Checkpoint { detail: e.to_string() })
}

fn write_discs(w: &mut impl Write, discs: &[Discriminator]) -> std::io::Result<()> {
    write_u64(w, discs.len() as u64)?;
    for d in discs {
        write_matrix(w, &d.theta)?;
    }
    Ok(())
}

fn read_discs(r: &mut impl Read) -> Result<Vec<Discriminator>, TrainError> {
    let n = read_u64(r)? as usize;
    if n > 1024 {
        return Err(TrainError::Checkpoint {
            detail: format!("implausible discriminator count {n}"),
        });
    }
    (0..n).map(|_| Ok(Discriminator { theta: read_matrix(r)? })).collect()
}

/// Why an epoch loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The epoch budget was used up.
    BudgetExhausted,
    /// The monitored metric failed to improve for a full window.
    EarlyStopped,
}

/// A finished run: parameters from the best monitored epoch (initial
/// parameters if no epoch ran), the full loss history, and the final state
/// for checkpointing.
#[derive(Debug)]
pub struct TrainOutcome {
    pub encoder: EncoderParams,
    pub discs: Vec<Discriminator>,
    pub history: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    pub stop: StopReason,
    pub state: TrainerState,
}

fn monitor_metric(
    graph: &Graph,
    encoder: &EncoderParams,
    loss: f64,
    monitor: Monitor,
    seed: u64,
) -> Result<f64, TrainError> {
    match monitor {
        Monitor::TrainLoss => Ok(-loss),
        Monitor::ValidationAccuracy => {
            let labels = graph.labels().ok_or(TrainError::MonitorNeedsLabels)?;
            let masks = graph.masks().ok_or(TrainError::MonitorNeedsLabels)?;
            let (h, _) = encode(graph, encoder)?;
            let h = standardize(&h);
            Ok(probe_accuracy(&h, labels, &masks.train, &masks.val, seed)?)
        }
    }
}

/// Runs epochs until the budget or the early-stopping window is exhausted.
/// `state.next_epoch` names the next epoch to execute, so calling again with
/// a larger budget continues the same trajectory.
pub fn train_epochs(
    state: &mut TrainerState,
    graph: &Graph,
    gmi_config: &GmiConfig,
    train_config: &TrainConfig,
) -> Result<StopReason, TrainError> {
    gmi_config.validate()?;
    train_config.validate()?;
    let budget = train_config.epoch_budget();
    let early_stop = train_config.fixed_epochs.is_none();
    let full_inputs = if train_config.subsample.is_none() {
        Some(LossInputs::new(graph))
    } else {
        None
    };

    while state.next_epoch < budget {
        let epoch = state.next_epoch;
        let sub_inputs;
        let inputs = match (&full_inputs, &train_config.subsample) {
            (Some(inputs), _) => inputs,
            (None, Some(sub)) => {
                let n = graph.n_nodes();
                let take = sub.batch_size.min(n);
                let roots: Vec<u32> = index_sample(&mut state.neg_rng, n, take)
                    .into_iter()
                    .map(|i| i as u32)
                    .collect();
                let sub_seed = state.neg_rng.gen::<u64>();
                let induced = subsample_neighborhood(
                    graph,
                    &roots,
                    (sub.fanout_1, sub.fanout_2),
                    sub_seed,
                )?;
                sub_inputs = LossInputs::new(&induced.graph);
                &sub_inputs
            }
            (None, None) => unreachable!("inputs precomputed unless subsampling"),
        };

        let samples = draw_step_samples(inputs, gmi_config, &mut state.neg_rng)?;
        let mut tape = Tape::new();
        let handles =
            build_loss(&mut tape, inputs, &state.encoder, &state.discs, gmi_config, &samples)
                .map_err(|e| lift_non_finite(e.into(), epoch))?;
        let loss = tape.value(handles.loss).item()?;
        let fmi = tape.value(handles.fmi).item()?;
        let topology = tape.value(handles.topology).item()?;
        state.history.push(EpochStats { epoch, loss, fmi, topology });

        let metric =
            monitor_metric(graph, &state.encoder, loss, train_config.monitor, state.seed)?;
        let improved = state.best.as_ref().map_or(true, |b| metric > b.metric);
        if improved {
            state.best = Some(BestSnapshot {
                epoch,
                metric,
                encoder: state.encoder.clone(),
                discs: state.discs.clone(),
            });
        }

        let var_ids: Vec<_> = handles
            .encoder
            .layers
            .iter()
            .flat_map(|&(w, s)| [w, s])
            .chain(handles.discs.iter().copied())
            .collect();
        let mut grads = tape.backward(handles.loss).map_err(|e| lift_non_finite(e.into(), epoch))?;
        let mut params = flat_params(&state.encoder, &state.discs);
        let grad_list: Vec<Matrix> = var_ids
            .iter()
            .zip(&params)
            .map(|(&id, p)| grads.take(id).unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols())))
            .collect();
        adam_step(&mut params, &grad_list, &mut state.adam, train_config.learning_rate)?;
        let disc_values = params.split_off(state.encoder.layers().len() * 2);
        state.encoder.replace_from(params)?;
        for (d, theta) in state.discs.iter_mut().zip(disc_values) {
            d.theta = theta;
        }

        state.next_epoch += 1;
        if early_stop {
            let best_epoch = state.best.as_ref().expect("set on first epoch").epoch;
            if epoch >= best_epoch + train_config.early_stop_window {
                return Ok(StopReason::EarlyStopped);
            }
        }
    }
    Ok(StopReason::BudgetExhausted)
}

fn lift_non_finite(e: TrainError, epoch: usize) -> TrainError {
    match e {
        TrainError::Objective(ObjectiveError::Diff(DiffError::NonFinite { op }))
        | TrainError::Diff(DiffError::NonFinite { op }) => {
            TrainError::NonFinite { epoch, detail: op.to_string() }
        }
        other => other,
    }
}

/// Packages a finished state, pulling out the best-epoch parameters.
pub fn finish(state: TrainerState, stop: StopReason) -> TrainOutcome {
    let (encoder, discs, best_epoch) = match &state.best {
        Some(b) => (b.encoder.clone(), b.discs.clone(), Some(b.epoch)),
        None => (state.encoder.clone(), state.discs.clone(), None),
    };
    TrainOutcome { encoder, discs, history: state.history.clone(), best_epoch, stop, state }
}

/// Fresh end-to-end run from a root seed.
pub fn train(
    graph: &Graph,
    encoder_config: &EncoderConfig,
    gmi_config: &GmiConfig,
    train_config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let mut state = TrainerState::init(graph, encoder_config, gmi_config, train_config)?;
    let stop = train_epochs(&mut state, graph, gmi_config, train_config)?;
    Ok(finish(state, stop))
}

/// Continues a checkpointed run under the same configs (possibly with a
/// larger epoch budget).
pub fn resume(
    graph: &Graph,
    gmi_config: &GmiConfig,
    train_config: &TrainConfig,
    mut state: TrainerState,
) -> Result<TrainOutcome, TrainError> {
    if state.seed != train_config.seed {
        return Err(TrainError::Config {
            detail: format!(
                "checkpoint was trained with seed {}, config says {}",
                state.seed, train_config.seed
            ),
        });
    }
    let stop = train_epochs(&mut state, graph, gmi_config, train_config)?;
    Ok(finish(state, stop))
}

/// Uniform neighborhood sample: per root, up to `fanout_1` shuffled one-hop
/// neighbors, then up to `fanout_2` neighbors of each of those. Returns the
/// induced subgraph plus the index maps between old and new node ids.
pub fn subsample_neighborhood(
    graph: &Graph,
    roots: &[u32],
    fanouts: (usize, usize),
    seed: u64,
) -> Result<InducedSubgraph, TrainError> {
    if roots.is_empty() {
        return Err(TrainError::EmptyRoots);
    }
    if fanouts.0 == 0 || fanouts.1 == 0 {
        return Err(TrainError::Config { detail: "fanouts must be >= 1".into() });
    }
    let n = graph.n_nodes();
    for &r in roots {
        if r as usize >= n {
            return Err(TrainError::Config {
                detail: format!("root {r} outside graph of {n} nodes"),
            });
        }
    }
    let mut rng = stream_rng(seed, streams::SUBSAMPLE);
    let mut selected: Vec<u32> = roots.to_vec();
    for &root in roots {
        let mut hop1: Vec<u32> = graph.neighbors(root as usize).to_vec();
        hop1.shuffle(&mut rng);
        hop1.truncate(fanouts.0);
        for &mid in &hop1 {
            let mut hop2: Vec<u32> = graph.neighbors(mid as usize).to_vec();
            hop2.shuffle(&mut rng);
            hop2.truncate(fanouts.1);
            selected.extend_from_slice(&hop2);
        }
        selected.extend_from_slice(&hop1);
    }
    Ok(induced_subgraph(graph, &selected)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::graph_from_edges;
    use crate::synth::toy_graph;

    fn small_encoder() -> EncoderConfig {
        EncoderConfig { hidden_dim: 4, depth: 2, residual: false, dense_gmi: false }
    }

    fn small_gmi() -> GmiConfig {
        GmiConfig { negatives: 2, ..GmiConfig::default() }
    }

    #[test]
    fn adam_zero_gradient_leaves_params_alone() {
        let mut params = vec![Matrix::from_rows(&[vec![1.0, -2.0]]).unwrap()];
        let before = params[0].clone();
        let grads = vec![Matrix::zeros(1, 2)];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.1).unwrap();
        assert_eq!(params[0], before);
        assert_eq!(state.t(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr_toward_minus_gradient() {
        let mut params = vec![Matrix::scalar(0.0)];
        let grads = vec![Matrix::scalar(3.7)];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.01).unwrap();
        // Bias correction makes m_hat/sqrt(v_hat) = sign(g) at t=1.
        assert!((params[0].get(0, 0) + 0.01).abs() < 1e-6);
    }

    #[test]
    fn adam_descends_a_quadratic_like_the_textbook_recurrence() {
        let lr = 0.1;
        let mut params = vec![Matrix::scalar(1.0)];
        let mut state = AdamState::new(&params);

        // Independent scalar simulation of the same recurrence.
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = 2.0 * params[0].get(0, 0);
            adam_step(&mut params, &[Matrix::scalar(g)], &mut state, lr).unwrap();

            let g_ref = 2.0 * w;
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g_ref;
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g_ref * g_ref;
            let m_hat = m / (1.0 - ADAM_BETA1.powi(t));
            let v_hat = v / (1.0 - ADAM_BETA2.powi(t));
            let prev = w;
            w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
            assert!(w < prev, "step {t} failed to descend");
            assert!((params[0].get(0, 0) - w).abs() < 1e-12);
        }
        assert!(w < 0.5);
    }

    #[test]
    fn adam_rejects_mismatched_shapes() {
        let mut params = vec![Matrix::zeros(2, 2)];
        let grads = vec![Matrix::zeros(2, 3)];
        let mut state = AdamState::new(&params);
        let err = adam_step(&mut params, &grads, &mut state, 0.1).unwrap_err();
        assert!(matches!(err, TrainError::GradShape { index: 0, .. }));
    }

    #[test]
    fn zero_epoch_budget_returns_initial_params() {
        let graph = toy_graph();
        let tc = TrainConfig { max_epochs: 0, ..TrainConfig::default() };
        let outcome = train(&graph, &small_encoder(), &small_gmi(), &tc).unwrap();
        assert!(outcome.history.is_empty());
        assert_eq!(outcome.best_epoch, None);
        let fresh = TrainerState::init(&graph, &small_encoder(), &small_gmi(), &tc).unwrap();
        assert_eq!(outcome.encoder, fresh.encoder);
        assert_eq!(outcome.discs, fresh.discs);
    }

    #[test]
    fn fixed_seed_runs_twice_bitwise_identical() {
        let graph = toy_graph();
        let tc = TrainConfig { fixed_epochs: Some(8), ..TrainConfig::default() };
        let a = train(&graph, &small_encoder(), &small_gmi(), &tc).unwrap();
        let b = train(&graph, &small_encoder(), &small_gmi(), &tc).unwrap();
        assert_eq!(a.history.len(), 8);
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.loss.to_bits(), y.loss.to_bits());
            assert_eq!(x.fmi.to_bits(), y.fmi.to_bits());
            assert_eq!(x.topology.to_bits(), y.topology.to_bits());
        }
        assert_eq!(a.encoder, b.encoder);
    }

    #[test]
    fn toy_training_descends() {
        let graph = toy_graph();
        let tc = TrainConfig { fixed_epochs: Some(200), ..TrainConfig::default() };
        let outcome = train(&graph, &small_encoder(), &small_gmi(), &tc).unwrap();
        let first = outcome.history.first().unwrap().loss;
        let last = outcome.history.last().unwrap().loss;
        assert!(last < first, "loss went {first} -> {last}");
    }

    #[test]
    fn toy_training_descends_on_average_across_seeds() {
        let graph = toy_graph();
        for seed in 1..=5 {
            let tc = TrainConfig {
                fixed_epochs: Some(200),
                seed,
                ..TrainConfig::default()
            };
            let outcome = train(&graph, &small_encoder(), &small_gmi(), &tc).unwrap();
            let head: f64 =
                outcome.history[..10].iter().map(|e| e.loss).sum::<f64>() / 10.0;
            let tail: f64 =
                outcome.history[190..].iter().map(|e| e.loss).sum::<f64>() / 10.0;
            assert!(tail < head, "seed {seed}: mean loss went {head} -> {tail}");
        }
    }

    #[test]
    fn early_stopping_respects_the_window() {
        let graph = toy_graph();
        let tc = TrainConfig {
            max_epochs: 600,
            early_stop_window: 5,
            ..TrainConfig::default()
        };
        let outcome = train(&graph, &small_encoder(), &small_gmi(), &tc).unwrap();
        let best = outcome.best_epoch.unwrap();
        assert!(outcome.history.len() <= best + 1 + tc.early_stop_window);
        if outcome.stop == StopReason::EarlyStopped {
            assert_eq!(outcome.history.len(), best + 1 + tc.early_stop_window);
        }
    }

    #[test]
    fn checkpoint_roundtrip_continues_the_same_trajectory() {
        let graph = toy_graph();
        let full = TrainConfig { fixed_epochs: Some(24), ..TrainConfig::default() };
        let uninterrupted = train(&graph, &small_encoder(), &small_gmi(), &full).unwrap();

        let half = TrainConfig { fixed_epochs: Some(12), ..full.clone() };
        let partial = train(&graph, &small_encoder(), &small_gmi(), &half).unwrap();
        let mut buf = Vec::new();
        partial.state.write_to(&mut buf).unwrap();
        let restored = TrainerState::read_from(&mut buf.as_slice()).unwrap();
        let resumed = resume(&graph, &small_gmi(), &full, restored).unwrap();

        assert_eq!(resumed.history.len(), uninterrupted.history.len());
        for (a, b) in resumed.history.iter().zip(&uninterrupted.history) {
            assert!((a.loss - b.loss).abs() < 1e-9, "epoch {}: {} vs {}", a.epoch, a.loss, b.loss);
            assert!((a.fmi - b.fmi).abs() < 1e-9);
            assert!((a.topology - b.topology).abs() < 1e-9);
        }
        assert_eq!(resumed.encoder, uninterrupted.encoder);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let graph = toy_graph();
        let tc = TrainConfig { fixed_epochs: Some(2), ..TrainConfig::default() };
        let outcome = train(&graph, &small_encoder(), &small_gmi(), &tc).unwrap();
        let mut buf = Vec::new();
        outcome.state.write_to(&mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(
            TrainerState::read_from(&mut buf.as_slice()),
            Err(TrainError::Checkpoint { .. })
        ));
        let mut truncated = Vec::new();
        outcome.state.write_to(&mut truncated).unwrap();
        truncated.truncate(truncated.len() - 3);
        assert!(TrainerState::read_from(&mut truncated.as_slice()).is_err());
    }

    #[test]
    fn divergence_reports_the_epoch() {
        let graph = toy_graph();
        let tc = TrainConfig {
            learning_rate: 1e200,
            fixed_epochs: Some(5),
            ..TrainConfig::default()
        };
        let err = train(&graph, &small_encoder(), &small_gmi(), &tc).unwrap_err();
        match err {
            TrainError::NonFinite { epoch, .. } => assert!(epoch >= 1),
            other => panic!("expected NonFinite, got {other}"),
        }
    }

    #[test]
    fn validation_monitor_tracks_accuracy() {
        let graph = toy_graph();
        let tc = TrainConfig {
            fixed_epochs: Some(3),
            monitor: Monitor::ValidationAccuracy,
            ..TrainConfig::default()
        };
        let outcome = train(&graph, &small_encoder(), &small_gmi(), &tc).unwrap();
        let best = outcome.state.best.unwrap();
        assert!((0.0..=1.0).contains(&best.metric));

        // A graph without labels cannot feed the monitor.
        let unlabeled = graph_from_edges(4, &[(0, 1), (1, 2), (2, 3)], 3);
        let err = train(&unlabeled, &small_encoder(), &small_gmi(), &tc).unwrap_err();
        assert!(matches!(err, TrainError::MonitorNeedsLabels));
    }

    #[test]
    fn subsampled_training_runs() {
        let graph = toy_graph();
        let tc = TrainConfig {
            fixed_epochs: Some(4),
            subsample: Some(SubsampleConfig { fanout_1: 2, fanout_2: 2, batch_size: 3 }),
            ..TrainConfig::default()
        };
        let outcome = train(&graph, &small_encoder(), &small_gmi(), &tc).unwrap();
        assert_eq!(outcome.history.len(), 4);
        let rerun = train(&graph, &small_encoder(), &small_gmi(), &tc).unwrap();
        assert_eq!(outcome.history, rerun.history);
    }

    #[test]
    fn star_center_subsample_keeps_three_leaves() {
        let star = graph_from_edges(6, &[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5)], 2);
        let sub = subsample_neighborhood(&star, &[0], (3, 2), 7).unwrap();
        assert_eq!(sub.graph.n_nodes(), 4);
        assert_eq!(sub.from_original[0], Some(sub.to_original.iter().position(|&v| v == 0).unwrap() as u32));
        // Remap round-trips bijectively.
        for (new, &old) in sub.to_original.iter().enumerate() {
            assert_eq!(sub.from_original[old as usize], Some(new as u32));
        }
    }

    #[test]
    fn low_degree_root_keeps_all_neighbors() {
        let path = graph_from_edges(4, &[(0, 1), (1, 2), (2, 3)], 2);
        let sub = subsample_neighborhood(&path, &[1], (5, 5), 3).unwrap();
        // Node 1's whole one-hop set {0, 2} stays, and 2's neighbors pull
        // in 3.
        assert_eq!(sub.graph.n_nodes(), 4);
        assert!(matches!(
            subsample_neighborhood(&path, &[], (2, 2), 3),
            Err(TrainError::EmptyRoots)
        ));
    }
}
