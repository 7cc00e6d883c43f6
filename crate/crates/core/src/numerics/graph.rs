//! Tape-based reverse-mode differentiation over small dense tensors.
//!
//! A [`Graph`] records a forward computation as a flat list of nodes; node
//! ids are creation-ordered, so the list is already topologically sorted and
//! [`Graph::backward`] is a single reverse sweep. Each graph is consumed by
//! one backward call. Gradients are accumulated only through subtrees that
//! reach a trainable leaf.

use crate::error::{Error, Result};
use crate::numerics::param::{ParamSet, TensorValue};
use crate::numerics::tensor::{axpy, dot_slices, Tensor1D, Tensor2D};
use std::collections::BTreeMap;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Value carried by a node.
#[derive(Clone, Debug)]
pub enum Value {
    Scalar(f64),
    Vector(Tensor1D),
    Matrix(Tensor2D),
}

impl Value {
    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            Value::Scalar(s) => Some(*s),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&Tensor1D> {
        match self {
            Value::Vector(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_matrix(&self) -> Option<&Tensor2D> {
        match self {
            Value::Matrix(m) => Some(m),
            _ => None,
        }
    }

    pub fn into_tensor_value(self) -> Option<TensorValue> {
        match self {
            Value::Scalar(_) => None,
            Value::Vector(v) => Some(TensorValue::Vector(v)),
            Value::Matrix(m) => Some(TensorValue::Matrix(m)),
        }
    }
}

impl From<TensorValue> for Value {
    fn from(t: TensorValue) -> Self {
        match t {
            TensorValue::Vector(v) => Value::Vector(v),
            TensorValue::Matrix(m) => Value::Matrix(m),
        }
    }
}

/// Elementwise nonlinearities available to MLP layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Selu,
    Gelu,
    Tanh,
}

// Canonical self-normalizing constants.
const SELU_LAMBDA: f64 = 1.0507009873554805;
const SELU_ALPHA: f64 = 1.6732632423543772;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
                }
            }
            Activation::Gelu => {
                // tanh approximation
                let u = (2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            }
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp()
                }
            }
            Activation::Gelu => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                let u = c * (x + 0.044715 * x * x * x);
                let t = u.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

enum Op {
    Leaf,
    /// C = A · B
    MatMul(NodeId, NodeId),
    MatAdd(NodeId, NodeId),
    MatScale(NodeId, f64),
    /// y_ij = m_ij * v_i
    RowScale(NodeId, NodeId),
    /// y_ij = m_ij * v_j
    ColScale(NodeId, NodeId),
    /// y = M · x
    MatVec(NodeId, NodeId),
    VecAdd(NodeId, NodeId),
    /// Y = X · Wᵀ (+ bias broadcast over rows)
    LinearBatch {
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
    },
    /// Y rows gathered from a table.
    EmbedRows {
        table: NodeId,
        indices: Vec<usize>,
    },
    /// Column-wise concatenation of matrices with equal row counts.
    ConcatCols(Vec<NodeId>),
    Activation(NodeId, Activation),
    /// y = gamma ⊙ (x - mean)/sqrt(var + eps) + beta
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    },
    L2Normalize(NodeId),
    Dot(NodeId, NodeId),
    /// y = x ⊙ c for a constant vector c.
    VecScaleElems(NodeId, Tensor1D),
    VecSoftplus(NodeId),
    VecSum(NodeId),
    ScalarAdd(NodeId, NodeId),
    ScalarScale(NodeId, f64),
    /// Mean squared error against a constant target.
    MseLoss {
        pred: NodeId,
        target: Tensor2D,
    },
    /// Mean over samples of cross-entropy across stacked per-class score
    /// vectors. `sims[i]` holds class i's scores for every sample; a `None`
    /// target contributes only its log-partition term.
    BatchCrossEntropy {
        sims: Vec<NodeId>,
        targets: Vec<Option<usize>>,
        temperature: f64,
    },
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Gradients for trainable leaves, keyed by node id.
pub struct Gradients {
    by_node: BTreeMap<usize, Value>,
}

impl Gradients {
    pub fn for_node(&self, id: NodeId) -> Option<&Value> {
        self.by_node.get(&id.0)
    }
}

/// Recorded forward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Value, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ---- leaves ----------------------------------------------------------

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.push(Value::Scalar(v), Op::Leaf, false)
    }

    pub fn vector(&mut self, t: Tensor1D) -> NodeId {
        self.push(Value::Vector(t), Op::Leaf, false)
    }

    pub fn matrix(&mut self, t: Tensor2D) -> NodeId {
        self.push(Value::Matrix(t), Op::Leaf, false)
    }

    pub fn param_vector(&mut self, t: Tensor1D) -> NodeId {
        self.push(Value::Vector(t), Op::Leaf, true)
    }

    pub fn param_matrix(&mut self, t: Tensor2D) -> NodeId {
        self.push(Value::Matrix(t), Op::Leaf, true)
    }

    /// Create one leaf per parameter, trainable flags carried over.
    pub fn bind(&mut self, params: &ParamSet) -> ParamBinding {
        let mut ids = BTreeMap::new();
        for (name, param) in params.iter() {
            let value: Value = param.value.clone().into();
            let id = self.push(value, Op::Leaf, param.trainable);
            ids.insert(name.clone(), id);
        }
        ParamBinding { ids }
    }

    // ---- value accessors -------------------------------------------------

    pub fn value(&self, id: NodeId) -> &Value {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> Result<f64> {
        self.nodes[id.0]
            .value
            .as_scalar()
            .ok_or_else(|| Error::contract("node is not a scalar"))
    }

    pub fn vector_value(&self, id: NodeId) -> Result<&Tensor1D> {
        self.nodes[id.0]
            .value
            .as_vector()
            .ok_or_else(|| Error::contract("node is not a vector"))
    }

    pub fn matrix_value(&self, id: NodeId) -> Result<&Tensor2D> {
        self.nodes[id.0]
            .value
            .as_matrix()
            .ok_or_else(|| Error::contract("node is not a matrix"))
    }

    // ---- operations ------------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.matrix_value(a)?.matmul(self.matrix_value(b)?)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Value::Matrix(out), Op::MatMul(a, b), ng))
    }

    pub fn mat_add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.matrix_value(a)?.add(self.matrix_value(b)?)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Value::Matrix(out), Op::MatAdd(a, b), ng))
    }

    pub fn mat_scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let out = self.matrix_value(a)?.scale(c);
        let ng = self.needs(a);
        Ok(self.push(Value::Matrix(out), Op::MatScale(a, c), ng))
    }

    pub fn row_scale(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let mat = self.matrix_value(m)?;
        let vec = self.vector_value(v)?;
        if mat.rows() != vec.len() {
            return Err(Error::shape(
                "row_scale",
                format!("{}x{} rows vs vector {}", mat.rows(), mat.cols(), vec.len()),
            ));
        }
        let mut out = mat.clone();
        for r in 0..out.rows() {
            let s = vec.as_slice()[r];
            for x in out.row_mut(r) {
                *x *= s;
            }
        }
        let ng = self.needs(m) || self.needs(v);
        Ok(self.push(Value::Matrix(out), Op::RowScale(m, v), ng))
    }

    pub fn col_scale(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let mat = self.matrix_value(m)?;
        let vec = self.vector_value(v)?;
        if mat.cols() != vec.len() {
            return Err(Error::shape(
                "col_scale",
                format!("{}x{} cols vs vector {}", mat.rows(), mat.cols(), vec.len()),
            ));
        }
        let mut out = mat.clone();
        for r in 0..out.rows() {
            for (x, s) in out.row_mut(r).iter_mut().zip(vec.as_slice()) {
                *x *= s;
            }
        }
        let ng = self.needs(m) || self.needs(v);
        Ok(self.push(Value::Matrix(out), Op::ColScale(m, v), ng))
    }

    pub fn mat_vec(&mut self, m: NodeId, x: NodeId) -> Result<NodeId> {
        let out = self.matrix_value(m)?.matvec(self.vector_value(x)?)?;
        let ng = self.needs(m) || self.needs(x);
        Ok(self.push(Value::Vector(out), Op::MatVec(m, x), ng))
    }

    pub fn vec_add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.vector_value(a)?.add(self.vector_value(b)?)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Value::Vector(out), Op::VecAdd(a, b), ng))
    }

    /// Batched affine map: rows of `x` times `w` transposed, plus bias.
    pub fn linear_batch(&mut self, x: NodeId, w: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let xm = self.matrix_value(x)?;
        let wm = self.matrix_value(w)?;
        let mut out = xm.matmul_nt(wm)?;
        if let Some(b) = bias {
            let bv = self.vector_value(b)?;
            if bv.len() != out.cols() {
                return Err(Error::shape(
                    "linear_batch",
                    format!("bias {} vs output cols {}", bv.len(), out.cols()),
                ));
            }
            for r in 0..out.rows() {
                for (o, &bi) in out.row_mut(r).iter_mut().zip(bv.as_slice()) {
                    *o += bi;
                }
            }
        }
        let ng = self.needs(x) || self.needs(w) || bias.map_or(false, |b| self.needs(b));
        Ok(self.push(Value::Matrix(out), Op::LinearBatch { x, w, bias }, ng))
    }

    pub fn embed_rows(&mut self, table: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let t = self.matrix_value(table)?;
        if indices.is_empty() {
            return Err(Error::contract("embed_rows needs at least one index"));
        }
        let mut out = Tensor2D::zeros(indices.len(), t.cols());
        for (r, &idx) in indices.iter().enumerate() {
            if idx >= t.rows() {
                return Err(Error::contract(format!(
                    "embedding index {idx} out of range ({} rows)",
                    t.rows()
                )));
            }
            out.row_mut(r).copy_from_slice(t.row(idx));
        }
        let ng = self.needs(table);
        Ok(self.push(Value::Matrix(out), Op::EmbedRows { table, indices }, ng))
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::contract("concat_cols needs at least one part"));
        }
        let rows = self.matrix_value(parts[0])?.rows();
        let mut total_cols = 0;
        for &p in &parts {
            let m = self.matrix_value(p)?;
            if m.rows() != rows {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row counts differ: {} vs {}", m.rows(), rows),
                ));
            }
            total_cols += m.cols();
        }
        let mut out = Tensor2D::zeros(rows, total_cols);
        let mut offset = 0;
        for &p in &parts {
            let m = self.matrix_value(p)?.clone();
            for r in 0..rows {
                out.row_mut(r)[offset..offset + m.cols()].copy_from_slice(m.row(r));
            }
            offset += m.cols();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Value::Matrix(out), Op::ConcatCols(parts), ng))
    }

    pub fn activation(&mut self, x: NodeId, kind: Activation) -> Result<NodeId> {
        let out = match &self.nodes[x.0].value {
            Value::Vector(v) => {
                let data: Vec<f64> = v.as_slice().iter().map(|&a| kind.apply(a)).collect();
                Value::Vector(Tensor1D::from_vec(data)?)
            }
            Value::Matrix(m) => {
                let mut out = m.clone();
                for a in out.as_mut_slice() {
                    *a = kind.apply(*a);
                }
                Value::Matrix(out)
            }
            Value::Scalar(_) => return Err(Error::contract("activation on scalar node")),
        };
        let ng = self.needs(x);
        Ok(self.push(out, Op::Activation(x, kind), ng))
    }

    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let xv = self.vector_value(x)?;
        let g = self.vector_value(gamma)?;
        let b = self.vector_value(beta)?;
        let n = xv.len();
        if g.len() != n || b.len() != n {
            return Err(Error::shape(
                "layer_norm",
                format!("x {} gamma {} beta {}", n, g.len(), b.len()),
            ));
        }
        let mean = xv.as_slice().iter().sum::<f64>() / n as f64;
        let var = xv
            .as_slice()
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n as f64;
        let s = (var + eps).sqrt();
        let data: Vec<f64> = xv
            .as_slice()
            .iter()
            .zip(g.as_slice())
            .zip(b.as_slice())
            .map(|((&xi, &gi), &bi)| gi * (xi - mean) / s + bi)
            .collect();
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            Value::Vector(Tensor1D::from_vec(data)?),
            Op::LayerNorm { x, gamma, beta, eps },
            ng,
        ))
    }

    pub fn l2_normalize(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.vector_value(x)?;
        let n = xv.norm();
        if n == 0.0 {
            return Err(Error::Domain("l2_normalize of zero vector".into()));
        }
        let out = xv.scale(1.0 / n);
        let ng = self.needs(x);
        Ok(self.push(Value::Vector(out), Op::L2Normalize(x), ng))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.vector_value(a)?.dot(self.vector_value(b)?)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Value::Scalar(out), Op::Dot(a, b), ng))
    }

    pub fn vec_scale_elems(&mut self, x: NodeId, coeffs: Tensor1D) -> Result<NodeId> {
        let xv = self.vector_value(x)?;
        if xv.len() != coeffs.len() {
            return Err(Error::shape(
                "vec_scale_elems",
                format!("{} vs {}", xv.len(), coeffs.len()),
            ));
        }
        let data: Vec<f64> = xv
            .as_slice()
            .iter()
            .zip(coeffs.as_slice())
            .map(|(a, c)| a * c)
            .collect();
        let ng = self.needs(x);
        Ok(self.push(
            Value::Vector(Tensor1D::from_vec(data)?),
            Op::VecScaleElems(x, coeffs),
            ng,
        ))
    }

    pub fn vec_softplus(&mut self, x: NodeId) -> Result<NodeId> {
        let data: Vec<f64> = self
            .vector_value(x)?
            .as_slice()
            .iter()
            .map(|&a| softplus(a))
            .collect();
        let ng = self.needs(x);
        Ok(self.push(
            Value::Vector(Tensor1D::from_vec(data)?),
            Op::VecSoftplus(x),
            ng,
        ))
    }

    pub fn vec_sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.vector_value(x)?.as_slice().iter().sum();
        let ng = self.needs(x);
        Ok(self.push(Value::Scalar(s), Op::VecSum(x), ng))
    }

    pub fn scalar_add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.scalar_value(a)? + self.scalar_value(b)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Value::Scalar(s), Op::ScalarAdd(a, b), ng))
    }

    pub fn scalar_scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let s = self.scalar_value(a)? * c;
        let ng = self.needs(a);
        Ok(self.push(Value::Scalar(s), Op::ScalarScale(a, c), ng))
    }

    pub fn mse_loss(&mut self, pred: NodeId, target: Tensor2D) -> Result<NodeId> {
        let p = self.matrix_value(pred)?;
        if p.shape() != target.shape() {
            return Err(Error::shape(
                "mse_loss",
                format!("{:?} vs {:?}", p.shape(), target.shape()),
            ));
        }
        let n = (p.rows() * p.cols()) as f64;
        let loss = p
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let ng = self.needs(pred);
        Ok(self.push(Value::Scalar(loss), Op::MseLoss { pred, target }, ng))
    }

    /// Mean cross-entropy over samples, with per-class score vectors stacked
    /// along the class axis. A `None` target adds only the log-partition of
    /// its sample (used by expert-batched training where the true class may
    /// fall outside the batch).
    pub fn batch_cross_entropy(
        &mut self,
        sims: Vec<NodeId>,
        targets: Vec<Option<usize>>,
        temperature: f64,
    ) -> Result<NodeId> {
        if sims.is_empty() {
            return Err(Error::contract("cross-entropy needs at least one class"));
        }
        if temperature <= 0.0 {
            return Err(Error::Domain("temperature must be positive".into()));
        }
        let batch = self.vector_value(sims[0])?.len();
        for &s in &sims {
            if self.vector_value(s)?.len() != batch {
                return Err(Error::shape("batch_cross_entropy", "ragged sim vectors"));
            }
        }
        if targets.len() != batch {
            return Err(Error::contract(format!(
                "targets {} vs batch {batch}",
                targets.len()
            )));
        }
        for t in targets.iter().flatten() {
            if *t >= sims.len() {
                return Err(Error::contract(format!(
                    "target index {t} out of range ({} classes)",
                    sims.len()
                )));
            }
        }
        let mut total = 0.0;
        for b in 0..batch {
            let logits: Vec<f64> = sims
                .iter()
                .map(|&s| self.nodes[s.0].value.as_vector().unwrap().as_slice()[b] / temperature)
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
            total += lse;
            if let Some(t) = targets[b] {
                total -= logits[t];
            }
        }
        let loss = total / batch as f64;
        let ng = sims.iter().any(|&s| self.needs(s));
        Ok(self.push(
            Value::Scalar(loss),
            Op::BatchCrossEntropy {
                sims,
                targets,
                temperature,
            },
            ng,
        ))
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar loss. Consumes the graph; a second call
    /// is a usage error.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        self.consumed = true;
        if self.nodes[loss.0].value.as_scalar().is_none() {
            return Err(Error::contract("backward requires a scalar loss node"));
        }

        let mut grads: Vec<Option<Value>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Value::Scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let grad = grads[i].take().unwrap();
            self.backprop_node(i, &grad, &mut grads)?;
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(grad);
            }
        }

        let mut by_node = BTreeMap::new();
        for (i, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                if matches!(self.nodes[i].op, Op::Leaf) && self.nodes[i].needs_grad {
                    by_node.insert(i, g);
                }
            }
        }
        Ok(Gradients { by_node })
    }

    fn accumulate(&self, grads: &mut [Option<Value>], target: NodeId, delta: Value) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        match &mut grads[target.0] {
            slot @ None => *slot = Some(delta),
            Some(existing) => match (existing, delta) {
                (Value::Scalar(a), Value::Scalar(b)) => *a += b,
                (Value::Vector(a), Value::Vector(b)) => {
                    for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                        *x += y;
                    }
                }
                (Value::Matrix(a), Value::Matrix(b)) => {
                    for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                        *x += y;
                    }
                }
                _ => unreachable!("gradient rank mismatch"),
            },
        }
    }

    fn backprop_node(
        &self,
        idx: usize,
        grad: &Value,
        grads: &mut [Option<Value>],
    ) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let g = grad.as_matrix().unwrap();
                let av = self.nodes[a.0].value.as_matrix().unwrap();
                let bv = self.nodes[b.0].value.as_matrix().unwrap();
                if self.needs(*a) {
                    self.accumulate(grads, *a, Value::Matrix(g.matmul_nt(bv)?));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, Value::Matrix(av.matmul_tn(g)?));
                }
            }
            Op::MatAdd(a, b) => {
                for t in [a, b] {
                    if self.needs(*t) {
                        self.accumulate(grads, *t, grad.clone());
                    }
                }
            }
            Op::MatScale(a, c) => {
                if self.needs(*a) {
                    let g = grad.as_matrix().unwrap();
                    self.accumulate(grads, *a, Value::Matrix(g.scale(*c)));
                }
            }
            Op::RowScale(m, v) => {
                let g = grad.as_matrix().unwrap();
                let mv = self.nodes[m.0].value.as_matrix().unwrap();
                let vv = self.nodes[v.0].value.as_vector().unwrap();
                if self.needs(*m) {
                    let mut dm = g.clone();
                    for r in 0..dm.rows() {
                        let s = vv.as_slice()[r];
                        for x in dm.row_mut(r) {
                            *x *= s;
                        }
                    }
                    self.accumulate(grads, *m, Value::Matrix(dm));
                }
                if self.needs(*v) {
                    let mut dv = vec![0.0; vv.len()];
                    for (r, d) in dv.iter_mut().enumerate() {
                        *d = dot_slices(g.row(r), mv.row(r));
                    }
                    self.accumulate(grads, *v, Value::Vector(Tensor1D::from_vec(dv)?));
                }
            }
            Op::ColScale(m, v) => {
                let g = grad.as_matrix().unwrap();
                let mv = self.nodes[m.0].value.as_matrix().unwrap();
                let vv = self.nodes[v.0].value.as_vector().unwrap();
                if self.needs(*m) {
                    let mut dm = g.clone();
                    for r in 0..dm.rows() {
                        for (x, s) in dm.row_mut(r).iter_mut().zip(vv.as_slice()) {
                            *x *= s;
                        }
                    }
                    self.accumulate(grads, *m, Value::Matrix(dm));
                }
                if self.needs(*v) {
                    let mut dv = vec![0.0; vv.len()];
                    for r in 0..mv.rows() {
                        for ((d, &gi), &mi) in dv.iter_mut().zip(g.row(r)).zip(mv.row(r)) {
                            *d += gi * mi;
                        }
                    }
                    self.accumulate(grads, *v, Value::Vector(Tensor1D::from_vec(dv)?));
                }
            }
            Op::MatVec(m, x) => {
                let g = grad.as_vector().unwrap();
                let mv = self.nodes[m.0].value.as_matrix().unwrap();
                let xv = self.nodes[x.0].value.as_vector().unwrap();
                if self.needs(*m) {
                    let mut dm = Tensor2D::zeros(mv.rows(), mv.cols());
                    for (r, &gi) in g.as_slice().iter().enumerate() {
                        axpy(gi, xv.as_slice(), dm.row_mut(r));
                    }
                    self.accumulate(grads, *m, Value::Matrix(dm));
                }
                if self.needs(*x) {
                    self.accumulate(grads, *x, Value::Vector(mv.matvec_transposed(g)?));
                }
            }
            Op::VecAdd(a, b) => {
                for t in [a, b] {
                    if self.needs(*t) {
                        self.accumulate(grads, *t, grad.clone());
                    }
                }
            }
            Op::LinearBatch { x, w, bias } => {
                let g = grad.as_matrix().unwrap();
                let xv = self.nodes[x.0].value.as_matrix().unwrap();
                let wv = self.nodes[w.0].value.as_matrix().unwrap();
                if self.needs(*x) {
                    self.accumulate(grads, *x, Value::Matrix(g.matmul(wv)?));
                }
                if self.needs(*w) {
                    self.accumulate(grads, *w, Value::Matrix(g.matmul_tn(xv)?));
                }
                if let Some(b) = bias {
                    if self.needs(*b) {
                        let mut db = vec![0.0; g.cols()];
                        for r in 0..g.rows() {
                            for (d, &gi) in db.iter_mut().zip(g.row(r)) {
                                *d += gi;
                            }
                        }
                        self.accumulate(grads, *b, Value::Vector(Tensor1D::from_vec(db)?));
                    }
                }
            }
            Op::EmbedRows { table, indices } => {
                if self.needs(*table) {
                    let g = grad.as_matrix().unwrap();
                    let t = self.nodes[table.0].value.as_matrix().unwrap();
                    let mut dt = Tensor2D::zeros(t.rows(), t.cols());
                    for (r, &idx) in indices.iter().enumerate() {
                        for (d, &gi) in dt.row_mut(idx).iter_mut().zip(g.row(r)) {
                            *d += gi;
                        }
                    }
                    self.accumulate(grads, *table, Value::Matrix(dt));
                }
            }
            Op::ConcatCols(parts) => {
                let g = grad.as_matrix().unwrap();
                let mut offset = 0;
                for &p in parts {
                    let cols = self.nodes[p.0].value.as_matrix().unwrap().cols();
                    if self.needs(p) {
                        let mut dp = Tensor2D::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        self.accumulate(grads, p, Value::Matrix(dp));
                    }
                    offset += cols;
                }
            }
            Op::Activation(x, kind) => {
                if self.needs(*x) {
                    let delta = match (&self.nodes[x.0].value, grad) {
                        (Value::Vector(xv), Value::Vector(g)) => {
                            let data: Vec<f64> = xv
                                .as_slice()
                                .iter()
                                .zip(g.as_slice())
                                .map(|(&xi, &gi)| gi * kind.derivative(xi))
                                .collect();
                            Value::Vector(Tensor1D::from_vec(data)?)
                        }
                        (Value::Matrix(xm), Value::Matrix(g)) => {
                            let mut out = g.clone();
                            for (o, &xi) in out.as_mut_slice().iter_mut().zip(xm.as_slice()) {
                                *o *= kind.derivative(xi);
                            }
                            Value::Matrix(out)
                        }
                        _ => unreachable!(),
                    };
                    self.accumulate(grads, *x, delta);
                }
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let g = grad.as_vector().unwrap();
                let xv = self.nodes[x.0].value.as_vector().unwrap();
                let gv = self.nodes[gamma.0].value.as_vector().unwrap();
                let n = xv.len() as f64;
                let mean = xv.as_slice().iter().sum::<f64>() / n;
                let var = xv
                    .as_slice()
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>()
                    / n;
                let s = (var + eps).sqrt();
                let zhat: Vec<f64> = xv.as_slice().iter().map(|&xi| (xi - mean) / s).collect();
                if self.needs(*x) {
                    let dz: Vec<f64> = g
                        .as_slice()
                        .iter()
                        .zip(gv.as_slice())
                        .map(|(&gi, &ga)| gi * ga)
                        .collect();
                    let mean_dz = dz.iter().sum::<f64>() / n;
                    let mean_dz_z = dz.iter().zip(&zhat).map(|(d, z)| d * z).sum::<f64>() / n;
                    let dx: Vec<f64> = dz
                        .iter()
                        .zip(&zhat)
                        .map(|(&d, &z)| (d - mean_dz - z * mean_dz_z) / s)
                        .collect();
                    self.accumulate(grads, *x, Value::Vector(Tensor1D::from_vec(dx)?));
                }
                if self.needs(*gamma) {
                    let dg: Vec<f64> = g
                        .as_slice()
                        .iter()
                        .zip(&zhat)
                        .map(|(&gi, &z)| gi * z)
                        .collect();
                    self.accumulate(grads, *gamma, Value::Vector(Tensor1D::from_vec(dg)?));
                }
                if self.needs(*beta) {
                    self.accumulate(grads, *beta, grad.clone());
                }
            }
            Op::L2Normalize(x) => {
                if self.needs(*x) {
                    let g = grad.as_vector().unwrap();
                    let xv = self.nodes[x.0].value.as_vector().unwrap();
                    let n = xv.norm();
                    let y: Vec<f64> = xv.as_slice().iter().map(|&v| v / n).collect();
                    let gy = g
                        .as_slice()
                        .iter()
                        .zip(&y)
                        .map(|(&gi, &yi)| gi * yi)
                        .sum::<f64>();
                    let dx: Vec<f64> = g
                        .as_slice()
                        .iter()
                        .zip(&y)
                        .map(|(&gi, &yi)| (gi - gy * yi) / n)
                        .collect();
                    self.accumulate(grads, *x, Value::Vector(Tensor1D::from_vec(dx)?));
                }
            }
            Op::Dot(a, b) => {
                let g = grad.as_scalar().unwrap();
                if self.needs(*a) {
                    let bv = self.nodes[b.0].value.as_vector().unwrap();
                    self.accumulate(grads, *a, Value::Vector(bv.scale(g)));
                }
                if self.needs(*b) {
                    let av = self.nodes[a.0].value.as_vector().unwrap();
                    self.accumulate(grads, *b, Value::Vector(av.scale(g)));
                }
            }
            Op::VecScaleElems(x, coeffs) => {
                if self.needs(*x) {
                    let g = grad.as_vector().unwrap();
                    let data: Vec<f64> = g
                        .as_slice()
                        .iter()
                        .zip(coeffs.as_slice())
                        .map(|(&gi, &c)| gi * c)
                        .collect();
                    self.accumulate(grads, *x, Value::Vector(Tensor1D::from_vec(data)?));
                }
            }
            Op::VecSoftplus(x) => {
                if self.needs(*x) {
                    let g = grad.as_vector().unwrap();
                    let xv = self.nodes[x.0].value.as_vector().unwrap();
                    let data: Vec<f64> = g
                        .as_slice()
                        .iter()
                        .zip(xv.as_slice())
                        .map(|(&gi, &xi)| gi * sigmoid(xi))
                        .collect();
                    self.accumulate(grads, *x, Value::Vector(Tensor1D::from_vec(data)?));
                }
            }
            Op::VecSum(x) => {
                if self.needs(*x) {
                    let g = grad.as_scalar().unwrap();
                    let len = self.nodes[x.0].value.as_vector().unwrap().len();
                    self.accumulate(grads, *x, Value::Vector(Tensor1D::filled(len, g)));
                }
            }
            Op::ScalarAdd(a, b) => {
                for t in [a, b] {
                    if self.needs(*t) {
                        self.accumulate(grads, *t, grad.clone());
                    }
                }
            }
            Op::ScalarScale(a, c) => {
                if self.needs(*a) {
                    let g = grad.as_scalar().unwrap();
                    self.accumulate(grads, *a, Value::Scalar(g * c));
                }
            }
            Op::MseLoss { pred, target } => {
                if self.needs(*pred) {
                    let g = grad.as_scalar().unwrap();
                    let p = self.nodes[pred.0].value.as_matrix().unwrap();
                    let n = (p.rows() * p.cols()) as f64;
                    let mut dp = p.clone();
                    for (d, &t) in dp.as_mut_slice().iter_mut().zip(target.as_slice()) {
                        *d = g * 2.0 * (*d - t) / n;
                    }
                    self.accumulate(grads, *pred, Value::Matrix(dp));
                }
            }
            Op::BatchCrossEntropy {
                sims,
                targets,
                temperature,
            } => {
                let g = grad.as_scalar().unwrap();
                let batch = targets.len();
                let scale = g / (*temperature * batch as f64);
                let mut deltas: Vec<Vec<f64>> = sims
                    .iter()
                    .map(|&s| vec![0.0; self.nodes[s.0].value.as_vector().unwrap().len()])
                    .collect();
                for b in 0..batch {
                    let logits: Vec<f64> = sims
                        .iter()
                        .map(|&s| {
                            self.nodes[s.0].value.as_vector().unwrap().as_slice()[b] / temperature
                        })
                        .collect();
                    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    for (i, e) in exps.iter().enumerate() {
                        let mut d = e / z;
                        if targets[b] == Some(i) {
                            d -= 1.0;
                        }
                        deltas[i][b] = d * scale;
                    }
                }
                for (&s, delta) in sims.iter().zip(deltas) {
                    if self.needs(s) {
                        self.accumulate(grads, s, Value::Vector(Tensor1D::from_vec(delta)?));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Map from parameter names to their graph leaves.
pub struct ParamBinding {
    ids: BTreeMap<String, NodeId>,
}

impl ParamBinding {
    pub fn node(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("no bound parameter named {name}")))
    }

    /// Assemble a gradient ParamSet for the trainable parameters of `params`.
    /// Trainable parameters that did not reach the loss get zero gradients;
    /// frozen parameters are omitted entirely.
    pub fn param_grads(&self, grads: &Gradients, params: &ParamSet) -> Result<ParamSet> {
        let mut out = ParamSet::new();
        for (name, param) in params.iter() {
            if !param.trainable {
                continue;
            }
            let id = self.node(name)?;
            let value = match grads.for_node(id) {
                Some(v) => v
                    .clone()
                    .into_tensor_value()
                    .ok_or_else(|| Error::contract("scalar gradient for tensor parameter"))?,
                None => param.value.zeros_like(),
            };
            out.insert(name.clone(), value, true)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::SeededRng;
    use approx::assert_relative_eq;

    #[test]
    fn sum_of_matvec_has_outer_product_gradient() {
        // loss = sum(W x): dL/dW = 1 xᵀ per row.
        let mut g = Graph::new();
        let w = g.param_matrix(
            Tensor2D::from_rows(vec![vec![0.5, -1.0], vec![2.0, 0.25]]).unwrap(),
        );
        let x = g.vector(Tensor1D::from_vec(vec![3.0, -2.0]).unwrap());
        let y = g.mat_vec(w, x).unwrap();
        let loss = g.vec_sum(y).unwrap();
        let grads = g.backward(loss).unwrap();
        let dw = grads.for_node(w).unwrap().as_matrix().unwrap();
        assert_eq!(dw.as_slice(), &[3.0, -2.0, 3.0, -2.0]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut params = ParamSet::new();
        params
            .insert("used", Tensor1D::from_vec(vec![1.0, 2.0]).unwrap(), true)
            .unwrap();
        params
            .insert("unused", Tensor1D::from_vec(vec![5.0]).unwrap(), true)
            .unwrap();
        params
            .insert("frozen", Tensor1D::from_vec(vec![7.0]).unwrap(), false)
            .unwrap();

        let mut g = Graph::new();
        let binding = g.bind(&params);
        let used = binding.node("used").unwrap();
        let loss = g.vec_sum(used).unwrap();
        let grads = g.backward(loss).unwrap();
        let pg = binding.param_grads(&grads, &params).unwrap();
        assert_eq!(pg.vector("used").unwrap().as_slice(), &[1.0, 1.0]);
        assert_eq!(pg.vector("unused").unwrap().as_slice(), &[0.0]);
        assert!(pg.get("frozen").is_none());
    }

    #[test]
    fn backward_twice_is_usage_error() {
        let mut g = Graph::new();
        let x = g.param_vector(Tensor1D::from_vec(vec![1.0]).unwrap());
        let loss = g.vec_sum(x).unwrap();
        g.backward(loss).unwrap();
        assert!(matches!(g.backward(loss), Err(Error::GraphConsumed)));
    }

    #[test]
    fn selu_fixed_point_at_origin() {
        assert_eq!(Activation::Selu.apply(0.0), 0.0);
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        let h = 1e-6;
        for kind in [Activation::Selu, Activation::Gelu, Activation::Tanh] {
            let mut rng = SeededRng::new(3);
            for _ in 0..50 {
                let x = rng.normal() * 2.0;
                let fd = (kind.apply(x + h) - kind.apply(x - h)) / (2.0 * h);
                assert_relative_eq!(kind.derivative(x), fd, epsilon = 1e-6, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn batch_cross_entropy_matches_scalar_formula() {
        // Two classes, one sample, target class 0, s = [2, 0], T = 1:
        // loss = log(1 + e^{-2}).
        let mut g = Graph::new();
        let s0 = g.param_vector(Tensor1D::from_vec(vec![2.0]).unwrap());
        let s1 = g.param_vector(Tensor1D::from_vec(vec![0.0]).unwrap());
        let loss = g
            .batch_cross_entropy(vec![s0, s1], vec![Some(0)], 1.0)
            .unwrap();
        assert_relative_eq!(
            g.scalar_value(loss).unwrap(),
            (1.0 + (-2.0_f64).exp()).ln(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn l2_normalize_gradient_is_tangent() {
        // d/dx of ||x/|x|||^2 must vanish: gradient of any function of the
        // normalized vector is orthogonal to x.
        let mut g = Graph::new();
        let x = g.param_vector(Tensor1D::from_vec(vec![1.0, 2.0, -0.5]).unwrap());
        let y = g.l2_normalize(x).unwrap();
        let probe = g.vector(Tensor1D::from_vec(vec![0.3, -0.7, 1.1]).unwrap());
        let loss = g.dot(y, probe).unwrap();
        let grads = g.backward(loss).unwrap();
        let dx = grads.for_node(x).unwrap().as_vector().unwrap();
        let xv = [1.0, 2.0, -0.5];
        let along: f64 = dx.as_slice().iter().zip(xv).map(|(d, x)| d * x).sum();
        assert!(along.abs() < 1e-12, "gradient not tangent: {along}");
    }
}
