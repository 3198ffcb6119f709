use std::fmt;

use super::tensor::{gemm_new, Tensor};
use super::NumError;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Exp,
    Tanh,
    Relu,
    Scale(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// A differentiable operation defined outside this module.
///
/// `backward` receives the input values, the cached output and the upstream
/// gradient, and returns one gradient per input (same shapes as the inputs).
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        relu: bool,
    },
    Binary(BinaryOp, NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Unary(UnaryOp, NodeId),
    Reduce(Reduction, NodeId),
    SelectCols(NodeId, Vec<usize>),
    ConcatCols(NodeId, NodeId),
    Custom(Box<dyn CustomOp>, Vec<NodeId>),
}

impl fmt::Debug for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Leaf => write!(f, "Leaf"),
            Op::MatMul(a, b) => write!(f, "MatMul({}, {})", a.0, b.0),
            Op::Linear { x, w, b, relu } => write!(f, "Linear({}, {}, {}, relu={relu})", x.0, w.0, b.0),
            Op::Binary(op, a, b) => write!(f, "{op:?}({}, {})", a.0, b.0),
            Op::AddRow(a, b) => write!(f, "AddRow({}, {})", a.0, b.0),
            Op::Unary(op, a) => write!(f, "{op:?}({})", a.0),
            Op::Reduce(op, a) => write!(f, "{op:?}({})", a.0),
            Op::SelectCols(a, c) => write!(f, "SelectCols({}, {c:?})", a.0),
            Op::ConcatCols(a, b) => write!(f, "ConcatCols({}, {})", a.0, b.0),
            Op::Custom(op, ids) => write!(f, "{}({ids:?})", op.name()),
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Binary(_, a, b) | Op::AddRow(a, b) | Op::ConcatCols(a, b) => vec![*a, *b],
            Op::Linear { x, w, b, .. } => vec![*x, *w, *b],
            Op::Unary(_, a) | Op::Reduce(_, a) | Op::SelectCols(a, _) => vec![*a],
            Op::Custom(_, ids) => ids.clone(),
        }
    }
}

/// Append-only tape of evaluated operations.
///
/// Every operation evaluates eagerly and caches its output; node ids are
/// assigned in evaluation order, so inputs always precede their consumers.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the root w.r.t. `id`; all zeros when `id` does not reach the root.
    pub fn get(&self, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[id.0];
                Tensor::zeros(r, c)
            }
        }
    }

    /// Moves the gradient out, leaving `None` behind.
    pub fn take(&mut self, id: NodeId) -> Tensor {
        match self.grads[id.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[id.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a differentiable input, such as a parameter.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Records an input that needs no gradient. Work feeding only into
    /// constants is skipped by [`Graph::backward`].
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.data()[0]
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    /// Fused `x · w + b` (bias `1 × cols`), optionally followed by ReLU.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId, relu: bool) -> Result<NodeId, NumError> {
        let value = super::affine(self.value(x), self.value(w), self.value(b), relu)?;
        Ok(self.push(Op::Linear { x, w, b, relu }, value))
    }

    pub fn binary(&mut self, op: BinaryOp, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            let name = match op {
                BinaryOp::Add => "add",
                BinaryOp::Sub => "sub",
                BinaryOp::Mul => "mul",
            };
            return Err(NumError::Dimension {
                op: name,
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let value = match op {
            BinaryOp::Add => va.zip_map(vb, |x, y| x + y),
            BinaryOp::Sub => va.zip_map(vb, |x, y| x - y),
            BinaryOp::Mul => va.zip_map(vb, |x, y| x * y),
        };
        Ok(self.push(Op::Binary(op, a, b), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        self.binary(BinaryOp::Mul, a, b)
    }

    /// Adds a 1 × cols row (a bias) to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, NumError> {
        let value = self.value(a).add_row(self.value(bias))?;
        Ok(self.push(Op::AddRow(a, bias), value))
    }

    pub fn unary(&mut self, op: UnaryOp, a: NodeId) -> NodeId {
        let va = self.value(a);
        let value = match op {
            UnaryOp::Exp => va.map(f64::exp),
            UnaryOp::Tanh => va.map(f64::tanh),
            UnaryOp::Relu => va.map(|x| if x > 0.0 { x } else { 0.0 }),
            UnaryOp::Scale(c) => va.map(|x| c * x),
        };
        self.push(Op::Unary(op, a), value)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(UnaryOp::Scale(c), a)
    }

    pub fn reduce(&mut self, op: Reduction, a: NodeId) -> Result<NodeId, NumError> {
        let va = self.value(a);
        if va.is_empty() {
            return Err(NumError::Empty {
                op: match op {
                    Reduction::Sum => "sum",
                    Reduction::Mean => "mean",
                },
            });
        }
        let s = va.sum();
        let value = match op {
            Reduction::Sum => s,
            Reduction::Mean => s / va.len() as f64,
        };
        Ok(self.push(Op::Reduce(op, a), Tensor::scalar(value)))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, NumError> {
        self.reduce(Reduction::Sum, a)
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, NumError> {
        self.reduce(Reduction::Mean, a)
    }

    pub fn select_cols(&mut self, a: NodeId, cols: &[usize]) -> Result<NodeId, NumError> {
        let va = self.value(a);
        if let Some(&bad) = cols.iter().find(|&&c| c >= va.cols()) {
            return Err(NumError::Index {
                op: "select_cols",
                index: bad,
                shape: va.shape(),
            });
        }
        let value = va.select_cols(cols);
        Ok(self.push(Op::SelectCols(a, cols.to_vec()), value))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let value = self.value(a).concat_cols(self.value(b))?;
        Ok(self.push(Op::ConcatCols(a, b), value))
    }

    /// Records an externally evaluated operation. `value` must be the op's output.
    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[NodeId], value: Tensor) -> NodeId {
        self.push(Op::Custom(op, inputs.to_vec()), value)
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: NodeId) -> Result<Gradients, NumError> {
        let root_shape = self.value(root).shape();
        if root_shape != (1, 1) {
            return Err(NumError::NotScalar { shape: root_shape });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let Some(mut grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                // leaves keep their gradient for the caller
                grads[idx] = Some(grad);
                continue;
            }
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let va = self.value(*a);
                    let vb = self.value(*b);
                    if self.requires_grad(*a) {
                        self.accumulate(&mut grads, *a, gemm_new(&grad, false, vb, true));
                    }
                    if self.requires_grad(*b) {
                        self.accumulate(&mut grads, *b, gemm_new(va, true, &grad, false));
                    }
                }
                Op::Linear { x, w, b, relu } => {
                    if *relu {
                        // relu(z) > 0 exactly where z > 0
                        for (g, &y) in grad.data_mut().iter_mut().zip(node.value.data()) {
                            *g = if y > 0.0 { *g } else { 0.0 };
                        }
                    }
                    if self.requires_grad(*b) {
                        let mut db = vec![0.0; grad.cols()];
                        for row in grad.iter_rows() {
                            for (acc, g) in db.iter_mut().zip(row) {
                                *acc += *g;
                            }
                        }
                        self.accumulate(&mut grads, *b, Tensor::row_vector(db));
                    }
                    let vx = self.value(*x);
                    let vw = self.value(*w);
                    if self.requires_grad(*w) {
                        self.accumulate(&mut grads, *w, gemm_new(vx, true, &grad, false));
                    }
                    if self.requires_grad(*x) {
                        self.accumulate(&mut grads, *x, gemm_new(&grad, false, vw, true));
                    }
                }
                Op::Binary(op, a, b) => match op {
                    BinaryOp::Add => {
                        self.accumulate(&mut grads, *a, grad.clone());
                        self.accumulate(&mut grads, *b, grad);
                    }
                    BinaryOp::Sub => {
                        self.accumulate(&mut grads, *b, grad.map(|g| -g));
                        self.accumulate(&mut grads, *a, grad);
                    }
                    BinaryOp::Mul => {
                        let da = grad.zip_map(self.value(*b), |g, y| g * y);
                        let db = grad.zip_map(self.value(*a), |g, x| g * x);
                        self.accumulate(&mut grads, *a, da);
                        self.accumulate(&mut grads, *b, db);
                    }
                },
                Op::AddRow(a, bias) => {
                    let cols = grad.cols();
                    let mut db = vec![0.0; cols];
                    for row in grad.iter_rows() {
                        for (acc, g) in db.iter_mut().zip(row) {
                            *acc += *g;
                        }
                    }
                    self.accumulate(&mut grads, *bias, Tensor::row_vector(db));
                    self.accumulate(&mut grads, *a, grad);
                }
                Op::Unary(op, a) => {
                    let da = match op {
                        UnaryOp::Exp => grad.zip_map(&node.value, |g, y| g * y),
                        UnaryOp::Tanh => grad.zip_map(&node.value, |g, y| g * (1.0 - y * y)),
                        UnaryOp::Relu => {
                            grad.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 })
                        }
                        UnaryOp::Scale(c) => grad.map(|g| c * g),
                    };
                    self.accumulate(&mut grads, *a, da);
                }
                Op::Reduce(op, a) => {
                    let va = self.value(*a);
                    let g = grad.data()[0];
                    let fill = match op {
                        Reduction::Sum => g,
                        Reduction::Mean => g / va.len() as f64,
                    };
                    self.accumulate(&mut grads, *a, Tensor::filled(va.rows(), va.cols(), fill));
                }
                Op::SelectCols(a, cols) => {
                    let va = self.value(*a);
                    let mut da = Tensor::zeros(va.rows(), va.cols());
                    for r in 0..grad.rows() {
                        for (j, &c) in cols.iter().enumerate() {
                            let cur = da.get(r, c);
                            da.set(r, c, cur + grad.get(r, j));
                        }
                    }
                    self.accumulate(&mut grads, *a, da);
                }
                Op::ConcatCols(a, b) => {
                    let wa = self.value(*a).cols();
                    let left: Vec<usize> = (0..wa).collect();
                    let right: Vec<usize> = (wa..grad.cols()).collect();
                    self.accumulate(&mut grads, *a, grad.select_cols(&left));
                    self.accumulate(&mut grads, *b, grad.select_cols(&right));
                }
                Op::Custom(op, inputs) => {
                    let values: Vec<&Tensor> = inputs.iter().map(|&i| self.value(i)).collect();
                    let input_grads = op.backward(&values, &node.value, &grad);
                    debug_assert_eq!(input_grads.len(), inputs.len());
                    for (&i, g) in inputs.iter().zip(input_grads) {
                        self.accumulate(&mut grads, i, g);
                    }
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }
}

impl Graph {
    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}
