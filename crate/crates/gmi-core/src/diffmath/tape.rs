use std::rc::Rc;

use super::{stable_sigmoid, stable_softplus, CsrMatrix, DiffError, Matrix};

/// Handle to a node on a [`Tape`].
///
/// Only meaningful for the tape that issued it; ids are dense indices in
/// recording order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

enum Op {
    Leaf,
    MatMul(VarId, VarId),
    Spmm(Rc<CsrMatrix>, VarId),
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Scale(VarId, f64),
    SumAll(VarId),
    MeanAll(VarId),
    MeanRows(VarId),
    Transpose(VarId),
    Sigmoid(VarId),
    Softplus(VarId),
    Log(VarId),
    Prelu(VarId, VarId),
    PairDot(VarId, VarId, Vec<(u32, u32)>),
    Reshape(VarId),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Define-by-run gradient tape.
///
/// Every operation records its output value and enough structure to run the
/// chain rule backwards. Recording order doubles as topological order, so
/// [`Tape::backward`] is a single reverse sweep. The tape is rebuilt for every
/// loss evaluation; `backward` consumes it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients keyed by the [`VarId`]s of the tape that produced them.
///
/// Nodes that the loss does not reach have no entry; callers that need a
/// dense update treat a missing gradient as zero.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: VarId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: VarId) -> Option<Matrix> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Records an input. Trainable leaves receive gradients in `backward`;
    /// constants are never differentiated through.
    pub fn leaf(&mut self, value: Matrix, trainable: bool) -> VarId {
        let id = VarId(self.nodes.len());
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: trainable });
        id
    }

    pub fn constant(&mut self, value: Matrix) -> VarId {
        self.leaf(value, false)
    }

    fn push(&mut self, name: &'static str, value: Matrix, op: Op, needs_grad: bool) -> Result<VarId, DiffError> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite { op: name });
        }
        let id = VarId(self.nodes.len());
        self.nodes.push(Node { value, op, needs_grad });
        Ok(id)
    }

    fn needs(&self, id: VarId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId, DiffError> {
        let value = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        self.push("matmul", value, Op::MatMul(a, b), needs)
    }

    /// Sparse-dense product with a constant left operand. Gradients flow only
    /// into the dense right operand.
    pub fn spmm(&mut self, a: Rc<CsrMatrix>, b: VarId) -> Result<VarId, DiffError> {
        let value = a.mul_dense(self.value(b))?;
        let needs = self.needs(b);
        self.push("spmm", value, Op::Spmm(a, b), needs)
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: VarId,
        b: VarId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<VarId, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(DiffError::DimMismatch { op: name, lhs: va.shape(), rhs: vb.shape() });
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Matrix::from_vec(va.rows(), va.cols(), data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(name, value, op, needs)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId, DiffError> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId, DiffError> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product; shapes must match exactly.
    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId, DiffError> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> Result<VarId, DiffError> {
        let value = self.value(a).map(|v| c * v);
        let needs = self.needs(a);
        self.push("scale", value, Op::Scale(a, c), needs)
    }

    pub fn neg(&mut self, a: VarId) -> Result<VarId, DiffError> {
        self.scale(a, -1.0)
    }

    pub fn sum_all(&mut self, a: VarId) -> Result<VarId, DiffError> {
        let s: f64 = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push("sum_all", Matrix::scalar(s), Op::SumAll(a), needs)
    }

    pub fn mean_all(&mut self, a: VarId) -> Result<VarId, DiffError> {
        let va = self.value(a);
        if va.is_empty() {
            return Err(DiffError::BadShape { op: "mean_all", detail: "empty input".into() });
        }
        let s: f64 = va.data().iter().sum();
        let m = s / va.len() as f64;
        let needs = self.needs(a);
        self.push("mean_all", Matrix::scalar(m), Op::MeanAll(a), needs)
    }

    /// Row means: maps R x C to R x 1.
    pub fn mean_rows(&mut self, a: VarId) -> Result<VarId, DiffError> {
        let va = self.value(a);
        if va.cols() == 0 {
            return Err(DiffError::BadShape { op: "mean_rows", detail: "zero columns".into() });
        }
        let mut out = Matrix::zeros(va.rows(), 1);
        for i in 0..va.rows() {
            let s: f64 = va.row(i).iter().sum();
            out.set(i, 0, s / va.cols() as f64);
        }
        let needs = self.needs(a);
        self.push("mean_rows", out, Op::MeanRows(a), needs)
    }

    pub fn transpose(&mut self, a: VarId) -> Result<VarId, DiffError> {
        let value = self.value(a).transpose();
        let needs = self.needs(a);
        self.push("transpose", value, Op::Transpose(a), needs)
    }

    pub fn sigmoid(&mut self, a: VarId) -> Result<VarId, DiffError> {
        let value = self.value(a).map(stable_sigmoid);
        let needs = self.needs(a);
        self.push("sigmoid", value, Op::Sigmoid(a), needs)
    }

    pub fn softplus(&mut self, a: VarId) -> Result<VarId, DiffError> {
        let value = self.value(a).map(stable_softplus);
        let needs = self.needs(a);
        self.push("softplus", value, Op::Softplus(a), needs)
    }

    pub fn log(&mut self, a: VarId) -> Result<VarId, DiffError> {
        let va = self.value(a);
        if let Some(&bad) = va.data().iter().find(|v| **v <= 0.0) {
            return Err(DiffError::LogDomain { value: bad });
        }
        let value = va.map(f64::ln);
        let needs = self.needs(a);
        self.push("log", value, Op::Log(a), needs)
    }

    /// Parametric ReLU with a single learnable slope for the negative part.
    /// `slope` must be a 1x1 node.
    pub fn prelu(&mut self, x: VarId, slope: VarId) -> Result<VarId, DiffError> {
        let s = self.value(slope).item().map_err(|_| DiffError::BadShape {
            op: "prelu",
            detail: format!("slope must be 1x1, got {:?}", self.value(slope).shape()),
        })?;
        let value = self.value(x).map(|v| if v >= 0.0 { v } else { s * v });
        let needs = self.needs(x) || self.needs(slope);
        self.push("prelu", value, Op::Prelu(x, slope), needs)
    }

    /// Row-pair dot products: output `p` is `dot(a[i_p], b[j_p])` as a P x 1
    /// column. `a` and `b` must have equal widths.
    pub fn pair_dot(&mut self, a: VarId, b: VarId, pairs: Vec<(u32, u32)>) -> Result<VarId, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(DiffError::DimMismatch { op: "pair_dot", lhs: va.shape(), rhs: vb.shape() });
        }
        let mut out = Matrix::zeros(pairs.len(), 1);
        for (p, &(i, j)) in pairs.iter().enumerate() {
            if i as usize >= va.rows() || j as usize >= vb.rows() {
                return Err(DiffError::PairOutOfBounds {
                    pair: (i, j),
                    lhs_rows: va.rows(),
                    rhs_rows: vb.rows(),
                });
            }
            let ra = va.row(i as usize);
            let rb = vb.row(j as usize);
            let mut acc = 0.0;
            for (&x, &y) in ra.iter().zip(rb) {
                acc += x * y;
            }
            out.set(p, 0, acc);
        }
        let needs = self.needs(a) || self.needs(b);
        self.push("pair_dot", out, Op::PairDot(a, b, pairs), needs)
    }

    /// Reinterprets the element buffer under a new shape (row-major order).
    pub fn reshape(&mut self, a: VarId, rows: usize, cols: usize) -> Result<VarId, DiffError> {
        let va = self.value(a);
        if va.len() != rows * cols {
            return Err(DiffError::BadShape {
                op: "reshape",
                detail: format!("{}x{} to {rows}x{cols}", va.rows(), va.cols()),
            });
        }
        let value = Matrix::from_vec(rows, cols, va.data().to_vec())?;
        let needs = self.needs(a);
        self.push("reshape", value, Op::Reshape(a), needs)
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape and returns
    /// gradients for every trainable leaf the loss reaches.
    pub fn backward(self, loss: VarId) -> Result<Gradients, DiffError> {
        let loss_shape = self.value(loss).shape();
        if loss_shape != (1, 1) {
            return Err(DiffError::NonScalarLoss { rows: loss_shape.0, cols: loss_shape.1 });
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Matrix>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.0].needs_grad {
            grads[loss.0] = Some(Matrix::scalar(1.0));
        }

        fn acc(
            grads: &mut [Option<Matrix>],
            nodes: &[Node],
            id: VarId,
            delta: Matrix,
        ) -> Result<(), DiffError> {
            if !nodes[id.0].needs_grad {
                return Ok(());
            }
            match &mut grads[id.0] {
                Some(g) => g.add_scaled(&delta, 1.0)?,
                slot @ None => *slot = Some(delta),
            }
            Ok(())
        }

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {
                    // Keep leaf gradients for the caller.
                    grads[id] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if nodes[a.0].needs_grad {
                        let da = g.matmul_nt(&nodes[b.0].value)?;
                        acc(&mut grads, &nodes, *a, da)?;
                    }
                    if nodes[b.0].needs_grad {
                        let db = nodes[a.0].value.matmul_tn(&g)?;
                        acc(&mut grads, &nodes, *b, db)?;
                    }
                }
                Op::Spmm(s, b) => {
                    if nodes[b.0].needs_grad {
                        let db = s.tr_mul_dense(&g)?;
                        acc(&mut grads, &nodes, *b, db)?;
                    }
                }
                Op::Add(a, b) => {
                    if nodes[a.0].needs_grad {
                        acc(&mut grads, &nodes, *a, g.clone())?;
                    }
                    acc(&mut grads, &nodes, *b, g)?;
                }
                Op::Sub(a, b) => {
                    if nodes[b.0].needs_grad {
                        acc(&mut grads, &nodes, *b, g.map(|v| -v))?;
                    }
                    acc(&mut grads, &nodes, *a, g)?;
                }
                Op::Mul(a, b) => {
                    if nodes[a.0].needs_grad {
                        let vb = &nodes[b.0].value;
                        let da = Matrix::from_vec(
                            g.rows(),
                            g.cols(),
                            g.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect(),
                        )?;
                        acc(&mut grads, &nodes, *a, da)?;
                    }
                    if nodes[b.0].needs_grad {
                        let va = &nodes[a.0].value;
                        let db = Matrix::from_vec(
                            g.rows(),
                            g.cols(),
                            g.data().iter().zip(va.data()).map(|(&x, &y)| x * y).collect(),
                        )?;
                        acc(&mut grads, &nodes, *b, db)?;
                    }
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    acc(&mut grads, &nodes, *a, g.map(|v| c * v))?;
                }
                Op::SumAll(a) => {
                    let seed = g.item()?;
                    let (r, c) = nodes[a.0].value.shape();
                    acc(&mut grads, &nodes, *a, Matrix::from_vec(r, c, vec![seed; r * c])?)?;
                }
                Op::MeanAll(a) => {
                    let (r, c) = nodes[a.0].value.shape();
                    let seed = g.item()? / (r * c) as f64;
                    acc(&mut grads, &nodes, *a, Matrix::from_vec(r, c, vec![seed; r * c])?)?;
                }
                Op::MeanRows(a) => {
                    let (r, c) = nodes[a.0].value.shape();
                    let mut da = Matrix::zeros(r, c);
                    for i in 0..r {
                        let gi = g.get(i, 0) / c as f64;
                        for v in da.row_mut(i) {
                            *v = gi;
                        }
                    }
                    acc(&mut grads, &nodes, *a, da)?;
                }
                Op::Transpose(a) => {
                    acc(&mut grads, &nodes, *a, g.transpose())?;
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let da = Matrix::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(y.data()).map(|(&gv, &yv)| gv * yv * (1.0 - yv)).collect(),
                    )?;
                    acc(&mut grads, &nodes, *a, da)?;
                }
                Op::Softplus(a) => {
                    let x = &nodes[a.0].value;
                    let da = Matrix::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data()
                            .iter()
                            .zip(x.data())
                            .map(|(&gv, &xv)| gv * stable_sigmoid(xv))
                            .collect(),
                    )?;
                    acc(&mut grads, &nodes, *a, da)?;
                }
                Op::Log(a) => {
                    let x = &nodes[a.0].value;
                    let da = Matrix::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(x.data()).map(|(&gv, &xv)| gv / xv).collect(),
                    )?;
                    acc(&mut grads, &nodes, *a, da)?;
                }
                Op::Prelu(x, slope) => {
                    let vx = &nodes[x.0].value;
                    let s = nodes[slope.0].value.item()?;
                    if nodes[x.0].needs_grad {
                        let dx = Matrix::from_vec(
                            g.rows(),
                            g.cols(),
                            g.data()
                                .iter()
                                .zip(vx.data())
                                .map(|(&gv, &xv)| gv * if xv >= 0.0 { 1.0 } else { s })
                                .collect(),
                        )?;
                        acc(&mut grads, &nodes, *x, dx)?;
                    }
                    if nodes[slope.0].needs_grad {
                        let mut ds = 0.0;
                        for (&gv, &xv) in g.data().iter().zip(vx.data()) {
                            if xv < 0.0 {
                                ds += gv * xv;
                            }
                        }
                        acc(&mut grads, &nodes, *slope, Matrix::scalar(ds))?;
                    }
                }
                Op::PairDot(a, b, pairs) => {
                    let rows_a = nodes[a.0].value.shape();
                    let rows_b = nodes[b.0].value.shape();
                    if nodes[a.0].needs_grad {
                        let mut da = Matrix::zeros(rows_a.0, rows_a.1);
                        let vb = &nodes[b.0].value;
                        for (p, &(i, j)) in pairs.iter().enumerate() {
                            let gv = g.get(p, 0);
                            let dst = da.row_mut(i as usize);
                            for (d, &y) in dst.iter_mut().zip(vb.row(j as usize)) {
                                *d += gv * y;
                            }
                        }
                        acc(&mut grads, &nodes, *a, da)?;
                    }
                    if nodes[b.0].needs_grad {
                        let mut db = Matrix::zeros(rows_b.0, rows_b.1);
                        let va = &nodes[a.0].value;
                        for (p, &(i, j)) in pairs.iter().enumerate() {
                            let gv = g.get(p, 0);
                            let dst = db.row_mut(j as usize);
                            for (d, &x) in dst.iter_mut().zip(va.row(i as usize)) {
                                *d += gv * x;
                            }
                        }
                        acc(&mut grads, &nodes, *b, db)?;
                    }
                }
                Op::Reshape(a) => {
                    let (r, c) = nodes[a.0].value.shape();
                    acc(&mut grads, &nodes, *a, Matrix::from_vec(r, c, g.data().to_vec())?)?;
                }
            }
        }

        // Drop everything but leaf gradients so callers cannot observe
        // internal intermediates.
        for (id, slot) in grads.iter_mut().enumerate() {
            if !matches!(nodes[id].op, Op::Leaf) {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }
}
