//! The mutual-information training objective.
//!
//! Two ingredients are maximized jointly. The feature side scores every
//! (node, support-member) pair with a bilinear discriminator and estimates a
//! local MI per pair with the Jensen-Shannon form
//! `-sp(-pos) - mean_k sp(neg_k)`; pair terms are combined with either
//! uniform support weights (1 / i_n) or trainable attention weights
//! `sigmoid(h_i . h_j)`. The topology side is a cross-entropy that pushes
//! `sigmoid(h_i . h_j)` toward the adjacency: edges contribute
//! `log sigmoid(z)`, sampled non-adjacent pairs contribute
//! `log(1 - sigmoid(z))`, both in stable softplus form. The training loss is
//! the negative of the weighted sum of the two terms.

use std::collections::HashSet;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::diffmath::{stable_sigmoid, stable_softplus, CsrMatrix, DiffError, Matrix, Tape, VarId};
use crate::encoder::{propagate, EncoderParams, EncoderVars, glorot_with_rng};
use crate::graph::{build_support_index, normalized_adjacency, Graph, SupportGraphIndex};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("local MI needs at least one negative sample")]
    NoNegatives,
    #[error("topology term needs a graph with at least one edge")]
    NoEdges,
    #[error("graph has no non-adjacent pairs to sample")]
    NoNonEdges,
    #[error("bad config: {detail}")]
    Config { detail: String },
    #[error("expected {expected} sampled {kind}, got {found}")]
    BadSampleCount { kind: &'static str, expected: usize, found: usize },
    #[error("expected {expected} discriminators, got {found}")]
    BadDiscCount { expected: usize, found: usize },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// How support pairs are weighted in the feature-MI sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// w_ij = 1 / i_n, a constant.
    Mean,
    /// w_ij = sigmoid(h_i . h_j), trained along with everything else.
    Adaptive,
}

/// Objective settings. `alpha` scales the feature term, `beta` the topology
/// term; both live in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GmiConfig {
    pub weight_mode: WeightMode,
    /// Negative feature samples per positive pair.
    pub negatives: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Score support members against the first-layer projection X W_1
    /// instead of raw feature rows.
    pub compressed_input: bool,
    pub topology_negatives_per_edge: usize,
    /// With a dense-GMI encoder, reuse one discriminator for every layer
    /// instead of training one per layer.
    pub shared_discriminator: bool,
}

impl Default for GmiConfig {
    fn default() -> Self {
        GmiConfig {
            weight_mode: WeightMode::Mean,
            negatives: 5,
            alpha: 1.0,
            beta: 1.0,
            compressed_input: true,
            topology_negatives_per_edge: 1,
            shared_discriminator: false,
        }
    }
}

impl GmiConfig {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return Err(ObjectiveError::Config {
                detail: format!("alpha {} and beta {} must lie in [0, 1]", self.alpha, self.beta),
            });
        }
        if self.negatives == 0 {
            return Err(ObjectiveError::Config { detail: "negatives must be >= 1".into() });
        }
        if self.topology_negatives_per_edge == 0 {
            return Err(ObjectiveError::Config {
                detail: "topology_negatives_per_edge must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// Bilinear pair scorer: score(h, x) = h' Theta x.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub theta: Matrix,
}

impl Discriminator {
    /// Glorot-initialized scorer, same scheme as encoder weights.
    pub fn init(d_h: usize, d_x: usize, rng: &mut impl Rng) -> Self {
        Discriminator { theta: glorot_with_rng(d_h, d_x, rng) }
    }
}

/// Raw bilinear score h' Theta x for one pair of rows.
pub fn bilinear_logit(h: &[f64], x: &[f64], disc: &Discriminator) -> Result<f64, ObjectiveError> {
    let theta = &disc.theta;
    if h.len() != theta.rows() || x.len() != theta.cols() {
        return Err(ObjectiveError::Diff(DiffError::DimMismatch {
            op: "bilinear_logit",
            lhs: (1, h.len()),
            rhs: theta.shape(),
        }));
    }
    let mut score = 0.0;
    for (i, &hv) in h.iter().enumerate() {
        if hv == 0.0 {
            continue;
        }
        let row = theta.row(i);
        let mut acc = 0.0;
        for (&t, &xv) in row.iter().zip(x) {
            acc += t * xv;
        }
        score += hv * acc;
    }
    Ok(score)
}

/// Jensen-Shannon local MI estimate from one positive logit and its negative
/// logits: `-sp(-pos) - mean_k sp(neg_k)`. Always <= 0 for finite logits; its
/// supremum 0 is approached as positives and negatives separate.
pub fn jsd_local_mi(pos_logit: f64, neg_logits: &[f64]) -> Result<f64, ObjectiveError> {
    if neg_logits.is_empty() {
        return Err(ObjectiveError::NoNegatives);
    }
    let neg_mean =
        neg_logits.iter().map(|&z| stable_softplus(z)).sum::<f64>() / neg_logits.len() as f64;
    Ok(-stable_softplus(-pos_logit) - neg_mean)
}

/// Per-pair weights for the feature-MI sum, in support-pair order. The mean
/// mode is constant; the adaptive mode reads the current embeddings.
pub fn weights(h: &Matrix, support: &SupportGraphIndex, mode: WeightMode) -> Vec<f64> {
    let mut out = Vec::with_capacity(support.total_members());
    for i in 0..support.n_nodes() {
        match mode {
            WeightMode::Mean => {
                let w = 1.0 / support.count(i) as f64;
                out.extend(std::iter::repeat(w).take(support.count(i)));
            }
            WeightMode::Adaptive => {
                for &j in support.members(i) {
                    let mut dot = 0.0;
                    for (&a, &b) in h.row(i).iter().zip(h.row(j as usize)) {
                        dot += a * b;
                    }
                    out.push(stable_sigmoid(dot));
                }
            }
        }
    }
    out
}

/// Everything about a graph the loss needs, precomputed once per run.
pub struct LossInputs {
    pub a_hat: Rc<CsrMatrix>,
    pub features_sparse: Rc<CsrMatrix>,
    pub features_dense: Matrix,
    /// (center, member) support pairs in index order.
    pub pos_pairs: Vec<(u32, u32)>,
    /// 1 / i_n per pair, aligned with `pos_pairs`.
    pub mean_weights: Vec<f64>,
    /// Undirected edges (i < j).
    pub edges: Vec<(u32, u32)>,
    edge_set: HashSet<(u32, u32)>,
    pub n_nodes: usize,
}

impl LossInputs {
    pub fn new(graph: &Graph) -> Self {
        let support = build_support_index(graph);
        let pos_pairs = support.positive_pairs();
        let mut mean_weights = Vec::with_capacity(pos_pairs.len());
        for i in 0..support.n_nodes() {
            let w = 1.0 / support.count(i) as f64;
            mean_weights.extend(std::iter::repeat(w).take(support.count(i)));
        }
        let edges = graph.edge_list();
        let edge_set = edges.iter().copied().collect();
        LossInputs {
            a_hat: Rc::new(normalized_adjacency(graph)),
            features_sparse: Rc::new(CsrMatrix::from_dense(graph.features())),
            features_dense: graph.features().clone(),
            pos_pairs,
            mean_weights,
            edges,
            edge_set,
            n_nodes: graph.n_nodes(),
        }
    }

    pub fn has_edge(&self, i: u32, j: u32) -> bool {
        let key = (i.min(j), i.max(j));
        self.edge_set.contains(&key)
    }

    /// Non-adjacent unordered pairs available for topology negatives.
    pub fn non_edge_count(&self) -> usize {
        self.n_nodes * (self.n_nodes - 1) / 2 - self.edges.len()
    }
}

/// One step's random draws, explicit so tests can inject and permute them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepSamples {
    /// Negative feature-row indices, pair-major: pair p's K negatives sit at
    /// [p * K .. (p + 1) * K].
    pub feature_negatives: Vec<u32>,
    /// Sampled non-adjacent (i, j) pairs for the topology term.
    pub topology_negatives: Vec<(u32, u32)>,
}

/// Draws a step's negatives. Feature negatives realize K independent row
/// shuffles: negative k of pair (i, j) is row perm_k[j]. Topology negatives
/// are uniform over all non-adjacent unordered pairs, so dense near-cliques
/// are rejected rather than looped on forever.
pub fn draw_step_samples(
    inputs: &LossInputs,
    config: &GmiConfig,
    rng: &mut impl Rng,
) -> Result<StepSamples, ObjectiveError> {
    config.validate()?;
    let n = inputs.n_nodes;
    let k = config.negatives;
    let mut perms: Vec<Vec<u32>> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut perm: Vec<u32> = (0..n as u32).collect();
        perm.shuffle(rng);
        perms.push(perm);
    }
    let mut feature_negatives = Vec::with_capacity(inputs.pos_pairs.len() * k);
    for &(_, j) in &inputs.pos_pairs {
        for perm in &perms {
            feature_negatives.push(perm[j as usize]);
        }
    }

    let needed = inputs.edges.len() * config.topology_negatives_per_edge;
    let mut topology_negatives = Vec::with_capacity(needed);
    if needed > 0 {
        if inputs.non_edge_count() == 0 {
            return Err(ObjectiveError::NoNonEdges);
        }
        let mut attempts = 0usize;
        let cap = needed.saturating_mul(10_000);
        while topology_negatives.len() < needed {
            attempts += 1;
            if attempts > cap {
                return Err(ObjectiveError::NoNonEdges);
            }
            let u = rng.gen_range(0..n as u32);
            let v = rng.gen_range(0..n as u32);
            if u == v || inputs.has_edge(u, v) {
                continue;
            }
            topology_negatives.push((u, v));
        }
    }
    Ok(StepSamples { feature_negatives, topology_negatives })
}

/// How many discriminators a parameter/config combination trains: one per
/// scored layer under dense GMI (unless shared), otherwise one.
pub fn expected_discriminators(params: &EncoderParams, config: &GmiConfig) -> usize {
    if params.dense_gmi() && !config.shared_discriminator {
        params.depth()
    } else {
        1
    }
}

/// Tape handles produced by [`build_loss`]: the scalar loss, its two
/// reportable components, and every trainable leaf.
pub struct LossHandles {
    pub loss: VarId,
    pub fmi: VarId,
    pub topology: VarId,
    pub encoder: EncoderVars,
    pub discs: Vec<VarId>,
}

/// Records the feature-MI term for one embedding layer. `u = H Theta` is
/// shared between the positive and negative pair scores.
fn fmi_term_on_tape(
    tape: &mut Tape,
    h: VarId,
    xeff: VarId,
    disc: VarId,
    inputs: &LossInputs,
    config: &GmiConfig,
    samples: &StepSamples,
) -> Result<VarId, ObjectiveError> {
    let p = inputs.pos_pairs.len();
    let k = config.negatives;
    if samples.feature_negatives.len() != p * k {
        return Err(ObjectiveError::BadSampleCount {
            kind: "feature negatives",
            expected: p * k,
            found: samples.feature_negatives.len(),
        });
    }
    let u = tape.matmul(h, disc)?;
    let pos = tape.pair_dot(u, xeff, inputs.pos_pairs.clone())?;

    let mut neg_pairs = Vec::with_capacity(p * k);
    for (pair_idx, &(i, _)) in inputs.pos_pairs.iter().enumerate() {
        for kk in 0..k {
            neg_pairs.push((i, samples.feature_negatives[pair_idx * k + kk]));
        }
    }
    let neg = tape.pair_dot(u, xeff, neg_pairs)?;
    let sp_neg = tape.softplus(neg)?;
    let sp_neg = tape.reshape(sp_neg, p, k)?;
    let neg_mean = tape.mean_rows(sp_neg)?;

    let minus_pos = tape.neg(pos)?;
    let sp_minus_pos = tape.softplus(minus_pos)?;
    // sp(-pos) + mean_k sp(neg) is the NEGATED local MI; the final scale by
    // -1/N restores the sign.
    let neg_local = tape.add(sp_minus_pos, neg_mean)?;

    let weighted = match config.weight_mode {
        WeightMode::Mean => {
            let w = tape.constant(Matrix::from_vec(p, 1, inputs.mean_weights.clone())?);
            tape.mul(w, neg_local)?
        }
        WeightMode::Adaptive => {
            let dots = tape.pair_dot(h, h, inputs.pos_pairs.clone())?;
            let w = tape.sigmoid(dots)?;
            tape.mul(w, neg_local)?
        }
    };
    let total = tape.sum_all(weighted)?;
    Ok(tape.scale(total, -1.0 / inputs.n_nodes as f64)?)
}

/// Records the topology cross-entropy: the mean over all scored pairs of
/// `log sigmoid(z)` on edges and `log(1 - sigmoid(z))` on sampled non-edges,
/// via the identities `log sigmoid(z) = -sp(-z)` and
/// `log(1 - sigmoid(z)) = -sp(z)`.
pub fn topology_term_on_tape(
    tape: &mut Tape,
    h: VarId,
    edges: &[(u32, u32)],
    non_edges: &[(u32, u32)],
) -> Result<VarId, ObjectiveError> {
    if edges.is_empty() {
        return Err(ObjectiveError::NoEdges);
    }
    let z_edge = tape.pair_dot(h, h, edges.to_vec())?;
    let minus_z = tape.neg(z_edge)?;
    let sp_edge = tape.softplus(minus_z)?;
    let mut total = tape.sum_all(sp_edge)?;
    if !non_edges.is_empty() {
        let z_non = tape.pair_dot(h, h, non_edges.to_vec())?;
        let sp_non = tape.softplus(z_non)?;
        let non_total = tape.sum_all(sp_non)?;
        total = tape.add(total, non_total)?;
    }
    let count = (edges.len() + non_edges.len()) as f64;
    Ok(tape.scale(total, -1.0 / count)?)
}

/// Records the full training loss on `tape`:
/// `loss = -(alpha * fmi + beta * topology)`.
///
/// With `dense_gmi` the feature term is averaged over every layer's output,
/// one discriminator per layer unless `shared_discriminator` collapses them
/// into one (adaptive weights, when selected, also come from that layer's
/// embeddings); the topology term always reads the final embeddings. Under
/// `compressed_input` the member rows are X W_1 taken from
/// the same first-layer weight leaf the encoder uses, so gradients reach W_1
/// through both paths.
pub fn build_loss(
    tape: &mut Tape,
    inputs: &LossInputs,
    params: &EncoderParams,
    discs: &[Discriminator],
    config: &GmiConfig,
    samples: &StepSamples,
) -> Result<LossHandles, ObjectiveError> {
    config.validate()?;
    let expected_discs = expected_discriminators(params, config);
    if discs.len() != expected_discs {
        return Err(ObjectiveError::BadDiscCount { expected: expected_discs, found: discs.len() });
    }
    let expected_topo = inputs.edges.len() * config.topology_negatives_per_edge;
    if samples.topology_negatives.len() != expected_topo {
        return Err(ObjectiveError::BadSampleCount {
            kind: "topology negatives",
            expected: expected_topo,
            found: samples.topology_negatives.len(),
        });
    }

    let encoder_vars = params.to_tape(tape, true);
    let disc_vars: Vec<VarId> =
        discs.iter().map(|d| tape.leaf(d.theta.clone(), true)).collect();
    let (h_final, per_layer) =
        propagate(tape, &inputs.a_hat, &inputs.features_sparse, &encoder_vars, params.residual())?;

    let xeff = if config.compressed_input {
        tape.spmm(Rc::clone(&inputs.features_sparse), encoder_vars.layers[0].0)?
    } else {
        tape.constant(inputs.features_dense.clone())
    };

    let scored_layers: Vec<VarId> =
        if params.dense_gmi() { per_layer.clone() } else { vec![h_final] };
    let mut fmi_sum: Option<VarId> = None;
    for (idx, layer_h) in scored_layers.iter().enumerate() {
        let disc_var = disc_vars[idx.min(disc_vars.len() - 1)];
        let term = fmi_term_on_tape(tape, *layer_h, xeff, disc_var, inputs, config, samples)?;
        fmi_sum = Some(match fmi_sum {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let fmi = tape.scale(fmi_sum.expect("depth >= 1"), 1.0 / scored_layers.len() as f64)?;

    let topology =
        topology_term_on_tape(tape, h_final, &inputs.edges, &samples.topology_negatives)?;

    let scaled_fmi = tape.scale(fmi, config.alpha)?;
    let scaled_topo = tape.scale(topology, config.beta)?;
    let gain = tape.add(scaled_fmi, scaled_topo)?;
    let loss = tape.neg(gain)?;
    Ok(LossHandles { loss, fmi, topology, encoder: encoder_vars, discs: disc_vars })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::grad_check;
    use crate::synth::toy_graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    #[test]
    fn bilinear_logit_examples() {
        let zero = Discriminator { theta: Matrix::zeros(3, 3) };
        assert_eq!(bilinear_logit(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], &zero).unwrap(), 0.0);

        let eye = Discriminator { theta: identity(3) };
        assert_eq!(bilinear_logit(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &eye).unwrap(), 1.0);

        let theta = Matrix::from_rows(&[
            vec![0.5, -1.0, 2.0],
            vec![1.5, 0.25, -0.5],
            vec![-2.0, 1.0, 0.75],
        ])
        .unwrap();
        let disc = Discriminator { theta: theta.clone() };
        let h = [0.3, -0.7, 1.1];
        let x = [2.0, 0.5, -1.5];
        let mut expected = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                expected += h[i] * theta.get(i, j) * x[j];
            }
        }
        let got = bilinear_logit(&h, &x, &disc).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn jsd_local_mi_examples() {
        assert!((jsd_local_mi(0.0, &[0.0]).unwrap() + 2.0 * LN2).abs() < 1e-12);
        assert!(jsd_local_mi(50.0, &[-50.0, -50.0]).unwrap().abs() < 1e-9);
        let v = jsd_local_mi(1.0, &[-1.0, 0.0]).unwrap();
        assert!((v + 0.816466).abs() < 1e-6, "got {v}");
        assert!(matches!(jsd_local_mi(1.0, &[]), Err(ObjectiveError::NoNegatives)));
    }

    #[test]
    fn jsd_local_mi_never_exceeds_zero() {
        for pos in [-30.0, -1.0, 0.0, 0.5, 4.0, 30.0] {
            for neg in [-30.0, -2.0, 0.0, 1.0, 30.0] {
                assert!(jsd_local_mi(pos, &[neg, -neg]).unwrap() <= 0.0);
            }
        }
    }

    #[test]
    fn weight_examples() {
        // Star: center 0 with three leaves has i_n = 4.
        let star = crate::graph::tests::graph_from_edges(4, &[(0, 1), (0, 2), (0, 3)], 2);
        let support = build_support_index(&star);
        let h = Matrix::zeros(4, 2);
        let w = weights(&h, &support, WeightMode::Mean);
        assert_eq!(w[0], 0.25);

        let mut h = Matrix::zeros(4, 2);
        h.set(0, 0, 1.0);
        h.set(1, 1, 1.0);
        let w = weights(&h, &support, WeightMode::Adaptive);
        // Pair order for node 0 is members [0, 1, 2, 3]; h_0 . h_1 = 0.
        assert_eq!(w[1], 0.5);

        let mut h = Matrix::zeros(4, 2);
        h.set(0, 0, 2.0);
        h.set(1, 0, 2.0);
        let w = weights(&h, &support, WeightMode::Adaptive);
        assert!((w[1] - 0.982014).abs() < 1e-6);
    }

    fn toy_setup(
        config: &GmiConfig,
        depth: usize,
        dense_gmi: bool,
        seed: u64,
    ) -> (LossInputs, EncoderParams, Vec<Discriminator>, StepSamples) {
        let graph = toy_graph();
        let inputs = LossInputs::new(&graph);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params =
            EncoderParams::init(graph.n_features(), 5, depth, false, dense_gmi, &mut rng).unwrap();
        let d_x = if config.compressed_input { 5 } else { graph.n_features() };
        let n_discs = if dense_gmi { depth } else { 1 };
        let discs: Vec<Discriminator> =
            (0..n_discs).map(|_| Discriminator::init(5, d_x, &mut rng)).collect();
        let samples = draw_step_samples(&inputs, config, &mut rng).unwrap();
        (inputs, params, discs, samples)
    }

    fn eval_loss(
        inputs: &LossInputs,
        params: &EncoderParams,
        discs: &[Discriminator],
        config: &GmiConfig,
        samples: &StepSamples,
    ) -> (f64, f64, f64) {
        let mut tape = Tape::new();
        let handles = build_loss(&mut tape, inputs, params, discs, config, samples).unwrap();
        (
            tape.value(handles.loss).item().unwrap(),
            tape.value(handles.fmi).item().unwrap(),
            tape.value(handles.topology).item().unwrap(),
        )
    }

    #[test]
    fn zero_discriminator_gives_constant_local_terms() {
        let config = GmiConfig { negatives: 2, ..GmiConfig::default() };
        let (inputs, params, _, samples) = toy_setup(&config, 2, false, 1);
        let discs = vec![Discriminator { theta: Matrix::zeros(5, 5) }];
        let (_, fmi, _) = eval_loss(&inputs, &params, &discs, &config, &samples);
        // Every local term is -2 ln 2; mean weights sum to 1 per node.
        let expected = -2.0 * LN2 * inputs.mean_weights.iter().sum::<f64>() / 6.0;
        assert!((fmi - expected).abs() < 1e-12, "fmi {fmi} expected {expected}");
    }

    #[test]
    fn alpha_beta_zero_select_single_terms() {
        let base = GmiConfig { negatives: 2, ..GmiConfig::default() };
        let (inputs, params, discs, samples) = toy_setup(&base, 2, false, 2);

        let only_fmi = GmiConfig { beta: 0.0, ..base.clone() };
        let (loss, fmi, _) = eval_loss(&inputs, &params, &discs, &only_fmi, &samples);
        assert!((loss + fmi).abs() < 1e-15);

        let only_topo = GmiConfig { alpha: 0.0, ..base };
        let (loss, _, topo) = eval_loss(&inputs, &params, &discs, &only_topo, &samples);
        assert!((loss + topo).abs() < 1e-15);
    }

    #[test]
    fn fmi_matches_straight_loop_reference() {
        // 3-node path, raw features, mean weights: recompute the term with
        // plain nested loops over the definition.
        let graph = crate::graph::tests::graph_from_edges(3, &[(0, 1), (1, 2)], 3);
        let inputs = LossInputs::new(&graph);
        let config = GmiConfig {
            negatives: 2,
            compressed_input: false,
            ..GmiConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = EncoderParams::init(3, 4, 1, false, false, &mut rng).unwrap();
        let discs = vec![Discriminator::init(4, 3, &mut rng)];
        let samples = draw_step_samples(&inputs, &config, &mut rng).unwrap();

        let (_, fmi, _) = eval_loss(&inputs, &params, &discs, &config, &samples);

        let (h, _) = crate::encoder::encode(&graph, &params).unwrap();
        let x = graph.features();
        let support = build_support_index(&graph);
        let w = weights(&h, &support, WeightMode::Mean);
        let mut expected = 0.0;
        for (p, &(i, j)) in inputs.pos_pairs.iter().enumerate() {
            let pos =
                bilinear_logit(h.row(i as usize), x.row(j as usize), &discs[0]).unwrap();
            let negs: Vec<f64> = (0..config.negatives)
                .map(|k| {
                    let neg_row = samples.feature_negatives[p * config.negatives + k] as usize;
                    bilinear_logit(h.row(i as usize), x.row(neg_row), &discs[0]).unwrap()
                })
                .collect();
            expected += w[p] * jsd_local_mi(pos, &negs).unwrap();
        }
        expected /= graph.n_nodes() as f64;
        assert!((fmi - expected).abs() < 1e-12, "fmi {fmi} expected {expected}");
    }

    #[test]
    fn topology_term_matches_hand_computation() {
        // Path 0-1-2: edges score log sigmoid(z), the only non-adjacent pair
        // (0, 2) scores log(1 - sigmoid(z)).
        let mut tape = Tape::new();
        let h = tape.leaf(
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap(),
            true,
        );
        let term =
            topology_term_on_tape(&mut tape, h, &[(0, 1), (1, 2)], &[(0, 2)]).unwrap();
        let got = tape.value(term).item().unwrap();
        let expected = (2.0 * (-LN2) + (1.0 - stable_sigmoid(2.0)).ln()) / 3.0;
        assert!((got - expected).abs() < 1e-12, "got {got} expected {expected}");
        assert!(got <= 0.0);
    }

    #[test]
    fn topology_term_saturates_to_zero_when_separated() {
        let mut tape = Tape::new();
        // Embeddings engineered so edge logits are +40 and the non-edge
        // logit is -40.
        let s = 40.0f64.sqrt();
        let h = tape.leaf(
            Matrix::from_rows(&[vec![s, 0.0], vec![s, s], vec![0.0, s], vec![-s, 0.0]]).unwrap(),
            true,
        );
        let term = topology_term_on_tape(&mut tape, h, &[(0, 1), (1, 2)], &[(0, 3)]).unwrap();
        let got = tape.value(term).item().unwrap();
        assert!(got.abs() < 1e-9, "got {got}");
    }

    #[test]
    fn topology_term_requires_edges() {
        let mut tape = Tape::new();
        let h = tape.leaf(Matrix::zeros(2, 2), true);
        assert!(matches!(
            topology_term_on_tape(&mut tape, h, &[], &[(0, 1)]),
            Err(ObjectiveError::NoEdges)
        ));
    }

    #[test]
    fn loss_is_finite_for_bounded_params() {
        let config = GmiConfig { weight_mode: WeightMode::Adaptive, negatives: 2, ..GmiConfig::default() };
        let (inputs, params, mut discs, samples) = toy_setup(&config, 2, false, 3);
        // Push parameters to the corners of [-10, 10].
        let mut layers = params.layers().to_vec();
        for (li, layer) in layers.iter_mut().enumerate() {
            layer.weight = layer.weight.map(|v| if v > 0.0 { 10.0 } else { -10.0 });
            layer.prelu_slope = Matrix::scalar(if li % 2 == 0 { 10.0 } else { -10.0 });
        }
        let params = EncoderParams::new(layers, false, false).unwrap();
        discs[0].theta = discs[0].theta.map(|v| if v > 0.0 { 10.0 } else { -10.0 });
        let (loss, fmi, topo) = eval_loss(&inputs, &params, &discs, &config, &samples);
        assert!(loss.is_finite() && fmi.is_finite() && topo.is_finite());
    }

    #[test]
    fn mean_weight_fmi_ignores_neighbor_order() {
        let config = GmiConfig { negatives: 2, ..GmiConfig::default() };
        let (inputs, params, discs, samples) = toy_setup(&config, 1, false, 7);
        let (_, fmi, _) = eval_loss(&inputs, &params, &discs, &config, &samples);

        // Reverse each node's member block, carrying the negatives along.
        let mut shuffled = inputs;
        let mut start = 0;
        let mut pairs = Vec::with_capacity(shuffled.pos_pairs.len());
        let mut negs = Vec::with_capacity(samples.feature_negatives.len());
        let k = config.negatives;
        while start < shuffled.pos_pairs.len() {
            let i = shuffled.pos_pairs[start].0;
            let end = start
                + shuffled.pos_pairs[start..]
                    .iter()
                    .take_while(|&&(c, _)| c == i)
                    .count();
            for p in (start..end).rev() {
                pairs.push(shuffled.pos_pairs[p]);
                negs.extend_from_slice(&samples.feature_negatives[p * k..(p + 1) * k]);
            }
            start = end;
        }
        shuffled.pos_pairs = pairs;
        let shuffled_samples =
            StepSamples { feature_negatives: negs, topology_negatives: samples.topology_negatives.clone() };
        let (_, fmi_shuffled, _) = eval_loss(&shuffled, &params, &discs, &config, &shuffled_samples);
        assert!((fmi - fmi_shuffled).abs() < 1e-12);
    }

    #[test]
    fn full_loss_passes_gradient_check() {
        // Mean weights, single discriminator, compressed input: the most
        // common configuration. The acceptance suite sweeps the rest.
        let config = GmiConfig { negatives: 2, ..GmiConfig::default() };
        let (inputs, params, discs, samples) = toy_setup(&config, 2, false, 11);

        let mut tape = Tape::new();
        let handles = build_loss(&mut tape, &inputs, &params, &discs, &config, &samples).unwrap();
        let mut flat: Vec<Matrix> = Vec::new();
        for layer in params.layers() {
            flat.push(layer.weight.clone());
            flat.push(layer.prelu_slope.clone());
        }
        flat.push(discs[0].theta.clone());
        let var_ids: Vec<_> = handles
            .encoder
            .layers
            .iter()
            .flat_map(|&(w, s)| [w, s])
            .chain(handles.discs.iter().copied())
            .collect();
        let mut grads = tape.backward(handles.loss).unwrap();
        let analytic: Vec<Matrix> = var_ids
            .iter()
            .zip(&flat)
            .map(|(&id, p)| {
                grads.take(id).unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols()))
            })
            .collect();

        let f = |ps: &[Matrix]| {
            let layers = vec![
                crate::encoder::Layer { weight: ps[0].clone(), prelu_slope: ps[1].clone() },
                crate::encoder::Layer { weight: ps[2].clone(), prelu_slope: ps[3].clone() },
            ];
            let params = EncoderParams::new(layers, false, false)
                .map_err(|_| DiffError::NonFinite { op: "rebuild" })?;
            let discs = vec![Discriminator { theta: ps[4].clone() }];
            let mut tape = Tape::new();
            let handles = build_loss(&mut tape, &inputs, &params, &discs, &config, &samples)
                .map_err(|_| DiffError::NonFinite { op: "rebuild" })?;
            tape.value(handles.loss).item()
        };
        let report = grad_check(f, &flat, &analytic, 1e-5).unwrap();
        assert!(
            report.max_rel_err < 1e-4,
            "gradient check failed: {:?}",
            report.worst
        );
    }

    #[test]
    fn dense_gmi_scores_each_layer_and_honors_sharing() {
        let config = GmiConfig { negatives: 2, ..GmiConfig::default() };
        let (inputs, params, discs, samples) = toy_setup(&config, 2, true, 17);
        assert_eq!(discs.len(), 2);
        let (loss, fmi, _) = eval_loss(&inputs, &params, &discs, &config, &samples);
        assert!(loss.is_finite() && fmi.is_finite());

        let shared = GmiConfig { shared_discriminator: true, ..config.clone() };
        assert_eq!(expected_discriminators(&params, &shared), 1);
        let mut tape = Tape::new();
        // Two discriminators no longer fit the shared configuration.
        assert!(matches!(
            build_loss(&mut tape, &inputs, &params, &discs, &shared, &samples),
            Err(ObjectiveError::BadDiscCount { expected: 1, found: 2 })
        ));
        let one = vec![discs[0].clone()];
        let (loss, fmi, _) = eval_loss(&inputs, &params, &one, &shared, &samples);
        assert!(loss.is_finite() && fmi.is_finite());
    }

    #[test]
    fn sample_count_mismatches_are_rejected() {
        let config = GmiConfig { negatives: 2, ..GmiConfig::default() };
        let (inputs, params, discs, mut samples) = toy_setup(&config, 2, false, 13);
        samples.feature_negatives.pop();
        let mut tape = Tape::new();
        assert!(matches!(
            build_loss(&mut tape, &inputs, &params, &discs, &config, &samples),
            Err(ObjectiveError::BadSampleCount { .. })
        ));
    }

    #[test]
    fn config_bounds_are_enforced() {
        let bad = GmiConfig { alpha: 1.5, ..GmiConfig::default() };
        assert!(bad.validate().is_err());
        let bad = GmiConfig { negatives: 0, ..GmiConfig::default() };
        assert!(bad.validate().is_err());
        let good = GmiConfig::default();
        assert!(good.validate().is_ok());
    }

    #[test]
    fn complete_graph_has_no_topology_negatives() {
        let g = crate::graph::tests::graph_from_edges(3, &[(0, 1), (0, 2), (1, 2)], 2);
        let inputs = LossInputs::new(&g);
        let config = GmiConfig { negatives: 1, ..GmiConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            draw_step_samples(&inputs, &config, &mut rng),
            Err(ObjectiveError::NoNonEdges)
        ));
    }
}
