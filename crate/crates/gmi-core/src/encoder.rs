//! Graph-convolutional encoder.
//!
//! Each layer propagates with the normalized adjacency and a learnable
//! weight, then applies a parametric ReLU with one learnable slope per layer:
//! `H_{l} = prelu(Â H_{l-1} W_l)`, `H_0 = X`. There are no bias terms. With
//! residual shortcuts enabled, every second layer starting at the third adds
//! the activation from two layers back (the first layer changes width, so the
//! earliest identity shortcut lands on layer 3).

use std::io::{Read, Write};
use std::rc::Rc;

use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diffmath::{CsrMatrix, DiffError, Matrix, Tape, VarId};
use crate::graph::{normalized_adjacency, Graph};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("encoder needs at least one layer")]
    Empty,
    #[error("layer {layer} consumes {found} inputs but the previous layer emits {expected}")]
    DimChain { layer: usize, found: usize, expected: usize },
    #[error("graph features have {found} columns but the first layer expects {expected}")]
    InputDim { found: usize, expected: usize },
    #[error("prelu slope of layer {layer} must be 1x1")]
    BadSlope { layer: usize },
    #[error("parameter file: {detail}")]
    Params { detail: String },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One layer's trainable state.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub prelu_slope: Matrix,
}

/// Full encoder state plus the structural flags that alter propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    layers: Vec<Layer>,
    residual: bool,
    dense_gmi: bool,
}

/// Tape handles for every trainable encoder tensor, in checkpoint order.
pub struct EncoderVars {
    pub layers: Vec<(VarId, VarId)>,
}

/// Uniform Glorot bound sqrt(6 / (d_in + d_out)).
pub fn glorot_bound(d_in: usize, d_out: usize) -> f64 {
    (6.0 / (d_in + d_out) as f64).sqrt()
}

pub fn glorot_with_rng(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Matrix {
    let bound = glorot_bound(d_in, d_out);
    let dist = Uniform::new_inclusive(-bound, bound);
    let data = (0..d_in * d_out).map(|_| rng.sample(dist)).collect();
    Matrix::from_vec(d_in, d_out, data).expect("constructed with matching length")
}

/// Glorot-uniform weight matrix, deterministic under `seed`.
pub fn glorot_init(d_in: usize, d_out: usize, seed: u64) -> Matrix {
    glorot_with_rng(d_in, d_out, &mut ChaCha8Rng::seed_from_u64(seed))
}

const PRELU_SLOPE_INIT: f64 = 0.25;

/// Architecture settings from which fresh parameters are drawn. The defaults
/// are the transductive citation-graph shape: two 512-wide layers, no
/// shortcuts, final-layer scoring only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    pub depth: usize,
    pub residual: bool,
    pub dense_gmi: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { hidden_dim: 512, depth: 2, residual: false, dense_gmi: false }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.hidden_dim == 0 {
            return Err(EncoderError::Params { detail: "hidden_dim must be >= 1".into() });
        }
        if self.depth == 0 {
            return Err(EncoderError::Empty);
        }
        Ok(())
    }
}

impl EncoderParams {
    pub fn new(layers: Vec<Layer>, residual: bool, dense_gmi: bool) -> Result<Self, EncoderError> {
        if layers.is_empty() {
            return Err(EncoderError::Empty);
        }
        for l in 1..layers.len() {
            let expected = layers[l - 1].weight.cols();
            let found = layers[l].weight.rows();
            if found != expected {
                return Err(EncoderError::DimChain { layer: l, found, expected });
            }
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.prelu_slope.shape() != (1, 1) {
                return Err(EncoderError::BadSlope { layer: l });
            }
        }
        Ok(EncoderParams { layers, residual, dense_gmi })
    }

    /// Fresh Glorot-initialized parameters drawn from `rng` in layer order.
    pub fn init(
        input_dim: usize,
        hidden_dim: usize,
        depth: usize,
        residual: bool,
        dense_gmi: bool,
        rng: &mut impl Rng,
    ) -> Result<Self, EncoderError> {
        if depth == 0 {
            return Err(EncoderError::Empty);
        }
        let mut layers = Vec::with_capacity(depth);
        let mut d_in = input_dim;
        for _ in 0..depth {
            layers.push(Layer {
                weight: glorot_with_rng(d_in, hidden_dim, rng),
                prelu_slope: Matrix::scalar(PRELU_SLOPE_INIT),
            });
            d_in = hidden_dim;
        }
        EncoderParams::new(layers, residual, dense_gmi)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers.last().unwrap().weight.cols()
    }

    pub fn residual(&self) -> bool {
        self.residual
    }

    pub fn dense_gmi(&self) -> bool {
        self.dense_gmi
    }

    /// Records every parameter on `tape`. Trainable leaves during training;
    /// constants when only values are needed.
    pub fn to_tape(&self, tape: &mut Tape, trainable: bool) -> EncoderVars {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                (
                    tape.leaf(l.weight.clone(), trainable),
                    tape.leaf(l.prelu_slope.clone(), trainable),
                )
            })
            .collect();
        EncoderVars { layers }
    }

    /// Replaces parameter values from gradient-step output, preserving order.
    pub fn replace_from(&mut self, values: Vec<Matrix>) -> Result<(), EncoderError> {
        if values.len() != self.layers.len() * 2 {
            return Err(EncoderError::Params {
                detail: format!(
                    "{} tensors for {} layers",
                    values.len(),
                    self.layers.len()
                ),
            });
        }
        let mut it = values.into_iter();
        for layer in &mut self.layers {
            let w = it.next().unwrap();
            let s = it.next().unwrap();
            if w.shape() != layer.weight.shape() || s.shape() != (1, 1) {
                return Err(EncoderError::Params { detail: "tensor shape changed".into() });
            }
            layer.weight = w;
            layer.prelu_slope = s;
        }
        Ok(())
    }

    /// Serializes to a little-endian stream: flags, then per layer a shape
    /// header and values.
    pub fn write_to(&self, w: &mut impl Write) -> Result<(), EncoderError> {
        w.write_all(&(self.layers.len() as u64).to_le_bytes())?;
        w.write_all(&[self.residual as u8, self.dense_gmi as u8])?;
        for layer in &self.layers {
            w.write_all(&(layer.weight.rows() as u64).to_le_bytes())?;
            w.write_all(&(layer.weight.cols() as u64).to_le_bytes())?;
            for &v in layer.weight.data() {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&layer.prelu_slope.data()[0].to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, EncoderError> {
        let depth = read_u64(r)? as usize;
        if depth == 0 || depth > 1024 {
            return Err(EncoderError::Params { detail: format!("implausible depth {depth}") });
        }
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags)?;
        let mut layers = Vec::with_capacity(depth);
        for _ in 0..depth {
            let rows = read_u64(r)? as usize;
            let cols = read_u64(r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(read_f64(r)?);
            }
            let weight = Matrix::from_vec(rows, cols, data)
                .map_err(|e| EncoderError::Params { detail: e.to_string() })?;
            let prelu_slope = Matrix::scalar(read_f64(r)?);
            layers.push(Layer { weight, prelu_slope });
        }
        EncoderParams::new(layers, flags[0] != 0, flags[1] != 0)
    }
}

fn read_u64(r: &mut impl Read) -> Result<u64, EncoderError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64, EncoderError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Records the propagation `H_l = prelu(Â H_{l-1} W_l)` on the tape and
/// returns the final embedding plus every layer's output (the per-layer list
/// feeds the variant that scores all depths).
///
/// The feature matrix enters as a constant sparse operand, so the first
/// layer's product exploits feature sparsity.
pub fn propagate(
    tape: &mut Tape,
    a_hat: &Rc<CsrMatrix>,
    features: &Rc<CsrMatrix>,
    vars: &EncoderVars,
    residual: bool,
) -> Result<(VarId, Vec<VarId>), DiffError> {
    let mut per_layer = Vec::with_capacity(vars.layers.len());
    let mut h: Option<VarId> = None;
    for (l, &(weight, slope)) in vars.layers.iter().enumerate() {
        let xw = match h {
            None => tape.spmm(Rc::clone(features), weight)?,
            Some(prev) => tape.matmul(prev, weight)?,
        };
        let propagated = tape.spmm(Rc::clone(a_hat), xw)?;
        let mut out = tape.prelu(propagated, slope)?;
        // Identity shortcut from two layers back, active on layers 3, 5, ...
        // (1-based); layer 1 changes width so no earlier source exists.
        if residual && l >= 2 && (l - 2) % 2 == 0 {
            out = tape.add(out, per_layer[l - 2])?;
        }
        per_layer.push(out);
        h = Some(out);
    }
    Ok((h.expect("depth >= 1 enforced at construction"), per_layer))
}

fn check_input(graph: &Graph, params: &EncoderParams) -> Result<(), EncoderError> {
    if graph.n_features() != params.input_dim() {
        return Err(EncoderError::InputDim {
            found: graph.n_features(),
            expected: params.input_dim(),
        });
    }
    Ok(())
}

/// Runs the encoder outside training: embeddings plus per-layer outputs.
pub fn encode(graph: &Graph, params: &EncoderParams) -> Result<(Matrix, Vec<Matrix>), EncoderError> {
    check_input(graph, params)?;
    let a_hat = Rc::new(normalized_adjacency(graph));
    let features = Rc::new(CsrMatrix::from_dense(graph.features()));
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape, false);
    let (h, per_layer) = propagate(&mut tape, &a_hat, &features, &vars, params.residual)?;
    let outputs = per_layer.iter().map(|&id| tape.value(id).clone()).collect();
    Ok((tape.value(h).clone(), outputs))
}

/// The compressed input `X W_1`: first-layer projection without propagation
/// or activation. Stands in for raw features on the structure-blind side of
/// the feature discriminator.
pub fn compressed_input(graph: &Graph, params: &EncoderParams) -> Result<Matrix, EncoderError> {
    check_input(graph, params)?;
    let features = CsrMatrix::from_dense(graph.features());
    Ok(features.mul_dense(&params.layers[0].weight)?)
}
