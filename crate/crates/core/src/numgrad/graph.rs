use std::collections::{BTreeMap, BTreeSet};

use super::tensor::{matmul_a_bt, matmul_at_b, matmul_raw, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Dropout { input: NodeId, mask: Tensor, rate: f64 },
    Square(NodeId),
    Sqrt(NodeId),
    Softplus(NodeId),
    ClampMin(NodeId, f64),
    Sum(NodeId),
    Mean(NodeId),
    SumAxis(NodeId, usize),
    MaxAxis(NodeId, usize),
    RowNorm(NodeId),
    RowDot(NodeId, NodeId),
    PairwiseSqDist(NodeId, NodeId),
    SoftmaxCrossEntropy { logits: NodeId, labels: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Dropout { .. } => "dropout",
            Op::Square(_) => "square",
            Op::Sqrt(_) => "sqrt",
            Op::Softplus(_) => "softplus",
            Op::ClampMin(..) => "clamp_min",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumAxis(..) => "sum_axis",
            Op::MaxAxis(..) => "max_axis",
            Op::RowNorm(_) => "row_norm",
            Op::RowDot(..) => "row_dot",
            Op::PairwiseSqDist(..) => "pairwise_sq_dist",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::RowDot(a, b)
            | Op::PairwiseSqDist(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Softplus(a)
            | Op::ClampMin(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumAxis(a, _)
            | Op::MaxAxis(a, _)
            | Op::RowNorm(a) => vec![*a],
            Op::Dropout { input, .. } => vec![*input],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Option<Tensor>,
}

/// Define-then-run computation graph with reverse-mode differentiation.
///
/// Nodes are appended in topological order: every builder method only
/// accepts ids that already exist, so the graph is acyclic by construction.
/// Leaves carry their values; every other node is (re)computed by
/// [`Graph::forward`].
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeSet<NodeId>,
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

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        let id = self.push_leaf(value);
        self.params.insert(id);
        id
    }

    pub fn parameters(&self) -> &BTreeSet<NodeId> {
        &self.params
    }

    /// Replace a leaf value. Cached intermediate values are dropped.
    pub fn set_value(&mut self, id: NodeId, value: Tensor) -> Result<()> {
        let node = self
            .nodes
            .get_mut(id.0)
            .ok_or_else(|| Error::contract(format!("node {} does not exist", id.0)))?;
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::contract(format!(
                "node {} is `{}`, only leaves can be assigned",
                id.0,
                node.op.name()
            )));
        }
        node.value = Some(value);
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Leaf) {
                node.value = None;
            }
        }
        Ok(())
    }

    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes.get(id.0).and_then(|n| n.value.as_ref())
    }

    /// The most recently added node.
    pub fn output(&self) -> Option<NodeId> {
        self.nodes.len().checked_sub(1).map(NodeId)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Transpose(a))
    }

    /// Elementwise sum; size-1 dimensions broadcast.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Div(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(a, factor))
    }

    /// ReLU with subgradient 0 at the kink.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }

    /// Inverted dropout: `a * mask / (1 - rate)` with a caller-drawn 0/1 mask.
    pub fn dropout(&mut self, a: NodeId, mask: Tensor, rate: f64) -> NodeId {
        self.push(Op::Dropout {
            input: a,
            mask,
            rate,
        })
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Square(a))
    }

    /// Square root; the derivative at exactly 0 is taken as 0.
    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sqrt(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softplus(a))
    }

    pub fn clamp_min(&mut self, a: NodeId, min: f64) -> NodeId {
        self.push(Op::ClampMin(a, min))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a))
    }

    /// Axis 0 collapses rows (`[r, c] -> [1, c]`), axis 1 collapses columns
    /// (`[r, c] -> [r, 1]`).
    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> NodeId {
        self.push(Op::SumAxis(a, axis))
    }

    /// Maximum along an axis; ties route the gradient to the first maximum.
    pub fn max_axis(&mut self, a: NodeId, axis: usize) -> NodeId {
        self.push(Op::MaxAxis(a, axis))
    }

    /// Euclidean norm of each row, `[r, c] -> [r, 1]`.
    pub fn row_norm(&mut self, a: NodeId) -> NodeId {
        self.push(Op::RowNorm(a))
    }

    /// Dot product of matching rows, `[r, c] x [r, c] -> [r, 1]`.
    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::RowDot(a, b))
    }

    /// Squared Euclidean distance between every row of `a: [n, m]` and every
    /// row of `b: [k, m]`, giving `[n, k]`.
    pub fn pairwise_sq_dist(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::PairwiseSqDist(a, b))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: Vec<usize>) -> NodeId {
        self.push(Op::SoftmaxCrossEntropy { logits, labels })
    }

    fn push_leaf(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Some(value),
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> NodeId {
        for input in op.inputs() {
            assert!(
                input.0 < self.nodes.len(),
                "`{}` references node {} which does not precede it",
                op.name(),
                input.0
            );
        }
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Leaf) {
                node.value = None;
            }
        }
        self.nodes.push(Node { op, value: None });
        NodeId(self.nodes.len() - 1)
    }

    /// Evaluate every node in order and return the value of the last one.
    pub fn forward(&mut self) -> Result<&Tensor> {
        if self.nodes.is_empty() {
            return Err(Error::contract("forward on an empty graph"));
        }
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let value = self.eval_node(i)?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    op: self.nodes[i].op.name(),
                });
            }
            self.nodes[i].value = Some(value);
        }
        Ok(self.nodes.last().and_then(|n| n.value.as_ref()).unwrap())
    }

    fn val(&self, id: NodeId) -> &Tensor {
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("inputs are evaluated before their consumers")
    }

    fn eval_node(&self, i: usize) -> Result<Tensor> {
        let op = &self.nodes[i].op;
        let name = op.name();
        Ok(match op {
            Op::Leaf => unreachable!(),
            Op::MatMul(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                let ((r, k), (k2, c)) = (a.dims2(), b.dims2());
                if k != k2 {
                    return Err(Error::shape(
                        name,
                        format!("{:?} x {:?}: inner dimensions differ", a.shape(), b.shape()),
                    ));
                }
                Tensor::matrix(r, c, matmul_raw(a.data(), b.data(), r, k, c))?
            }
            Op::Transpose(a) => self.val(*a).transpose(),
            Op::Add(a, b) => broadcast(name, self.val(*a), self.val(*b), |x, y| x + y)?,
            Op::Sub(a, b) => broadcast(name, self.val(*a), self.val(*b), |x, y| x - y)?,
            Op::Mul(a, b) => broadcast(name, self.val(*a), self.val(*b), |x, y| x * y)?,
            Op::Div(a, b) => broadcast(name, self.val(*a), self.val(*b), |x, y| x / y)?,
            Op::Scale(a, f) => self.val(*a).map(|x| x * f),
            Op::Relu(a) => self.val(*a).map(|x| if x > 0.0 { x } else { 0.0 }),
            Op::Dropout { input, mask, rate } => {
                let x = self.val(*input);
                if mask.shape() != x.shape() {
                    return Err(Error::shape(
                        name,
                        format!("mask {:?} vs input {:?}", mask.shape(), x.shape()),
                    ));
                }
                if !(0.0..1.0).contains(rate) {
                    return Err(Error::contract(format!("dropout rate {rate} outside [0, 1)")));
                }
                let keep = 1.0 / (1.0 - rate);
                let data = x
                    .data()
                    .iter()
                    .zip(mask.data())
                    .map(|(v, m)| v * m * keep)
                    .collect();
                Tensor::new(x.shape().to_vec(), data)?
            }
            Op::Square(a) => self.val(*a).map(|x| x * x),
            Op::Sqrt(a) => self.val(*a).map(f64::sqrt),
            Op::Softplus(a) => self.val(*a).map(softplus),
            Op::ClampMin(a, min) => self.val(*a).map(|x| if x > *min { x } else { *min }),
            Op::Sum(a) => Tensor::scalar(self.val(*a).data().iter().sum()),
            Op::Mean(a) => {
                let x = self.val(*a);
                if x.numel() == 0 {
                    return Err(Error::shape(name, "mean of an empty tensor"));
                }
                Tensor::scalar(x.data().iter().sum::<f64>() / x.numel() as f64)
            }
            Op::SumAxis(a, axis) => {
                let x = self.val(*a);
                let (r, c) = x.dims2();
                match axis {
                    0 => {
                        let mut out = vec![0.0; c];
                        for i in 0..r {
                            for (o, v) in out.iter_mut().zip(x.row(i)) {
                                *o += v;
                            }
                        }
                        Tensor::matrix(1, c, out)?
                    }
                    1 => Tensor::matrix(r, 1, (0..r).map(|i| x.row(i).iter().sum()).collect())?,
                    _ => return Err(Error::shape(name, format!("axis {axis} out of range"))),
                }
            }
            Op::MaxAxis(a, axis) => {
                let x = self.val(*a);
                let (r, c) = x.dims2();
                let arg = argmax_axis(name, x, *axis)?;
                match axis {
                    0 => Tensor::matrix(1, c, arg.iter().map(|&i| x.data()[i]).collect())?,
                    _ => Tensor::matrix(r, 1, arg.iter().map(|&i| x.data()[i]).collect())?,
                }
            }
            Op::RowNorm(a) => {
                let x = self.val(*a);
                let r = x.rows();
                Tensor::matrix(
                    r,
                    1,
                    (0..r)
                        .map(|i| x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
                        .collect(),
                )?
            }
            Op::RowDot(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                if a.dims2() != b.dims2() {
                    return Err(Error::shape(
                        name,
                        format!("{:?} vs {:?}", a.shape(), b.shape()),
                    ));
                }
                let r = a.rows();
                Tensor::matrix(
                    r,
                    1,
                    (0..r)
                        .map(|i| a.row(i).iter().zip(b.row(i)).map(|(x, y)| x * y).sum())
                        .collect(),
                )?
            }
            Op::PairwiseSqDist(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                let ((n, m), (k, m2)) = (a.dims2(), b.dims2());
                if m != m2 {
                    return Err(Error::shape(
                        name,
                        format!("row widths differ: {:?} vs {:?}", a.shape(), b.shape()),
                    ));
                }
                let mut out = Vec::with_capacity(n * k);
                for i in 0..n {
                    let ai = a.row(i);
                    for j in 0..k {
                        out.push(ai.iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum());
                    }
                }
                Tensor::matrix(n, k, out)?
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let x = self.val(*logits);
                let (n, k) = x.dims2();
                check_labels(name, labels, n, k)?;
                if n == 0 {
                    return Err(Error::shape(name, "empty batch"));
                }
                let mut total = 0.0;
                for (i, &label) in labels.iter().enumerate() {
                    let row = x.row(i);
                    total += log_sum_exp(row) - row[label];
                }
                Tensor::scalar(total / n as f64)
            }
        })
    }

    /// Gradient of the last node with respect to each node in `wrt`.
    pub fn gradient(&self, wrt: &[NodeId]) -> Result<BTreeMap<NodeId, Tensor>> {
        let root = self
            .output()
            .ok_or_else(|| Error::contract("gradient of an empty graph"))?;
        self.gradient_of(root, wrt)
    }

    /// Gradient of the scalar node `root` with respect to each node in `wrt`.
    pub fn gradient_of(&self, root: NodeId, wrt: &[NodeId]) -> Result<BTreeMap<NodeId, Tensor>> {
        let n = self.nodes.len();
        if root.0 >= n {
            return Err(Error::contract(format!("node {} does not exist", root.0)));
        }
        for id in wrt {
            if id.0 >= n {
                return Err(Error::contract(format!("node {} does not exist", id.0)));
            }
        }
        let root_value = self.nodes[root.0]
            .value
            .as_ref()
            .ok_or_else(|| Error::contract("gradient requested before forward"))?;
        if root_value.numel() != 1 {
            return Err(Error::contract(format!(
                "gradient needs a scalar output, node {} has shape {:?}",
                root.0,
                root_value.shape()
            )));
        }

        // Only nodes on a path from a requested input to the root need work.
        let mut needed = vec![false; n];
        for id in wrt {
            needed[id.0] = true;
        }
        for i in 0..=root.0 {
            if !needed[i] && self.nodes[i].op.inputs().iter().any(|j| needed[j.0]) {
                needed[i] = true;
            }
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if !needed[i] {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backward_node(i, &g, &needed, &mut grads);
            grads[i] = Some(g);
        }

        let mut out = BTreeMap::new();
        for id in wrt {
            let shape = self.nodes[id.0]
                .value
                .as_ref()
                .map(|v| v.shape().to_vec())
                .unwrap_or_default();
            let numel = shape.iter().product();
            let data = grads[id.0].clone().unwrap_or_else(|| vec![0.0; numel]);
            let grad = Tensor::new(shape, data)?;
            if !grad.is_finite() {
                return Err(Error::NonFinite { op: "gradient" });
            }
            out.insert(*id, grad);
        }
        Ok(out)
    }

    fn backward_node(
        &self,
        i: usize,
        g: &[f64],
        needed: &[bool],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let node = &self.nodes[i];
        let out = node.value.as_ref().expect("forward ran");
        let mut acc = |id: NodeId, local: Vec<f64>| {
            if !needed[id.0] {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => {
                    for (e, l) in existing.iter_mut().zip(local) {
                        *e += l;
                    }
                }
                slot @ None => *slot = Some(local),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let ((r, k), (_, c)) = (av.dims2(), bv.dims2());
                if needed[a.0] {
                    acc(*a, matmul_a_bt(g, bv.data(), r, c, k));
                }
                if needed[b.0] {
                    acc(*b, matmul_at_b(av.data(), g, r, k, c));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = out.dims2();
                let gt = Tensor::matrix(r, c, g.to_vec()).unwrap().transpose();
                acc(*a, gt.into_data());
            }
            Op::Add(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                acc(*a, reduce_to(out, av, g, |_, _| 1.0, av, bv));
                acc(*b, reduce_to(out, bv, g, |_, _| 1.0, av, bv));
            }
            Op::Sub(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                acc(*a, reduce_to(out, av, g, |_, _| 1.0, av, bv));
                acc(*b, reduce_to(out, bv, g, |_, _| -1.0, av, bv));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                acc(*a, reduce_to(out, av, g, |_, y| y, av, bv));
                acc(*b, reduce_to(out, bv, g, |x, _| x, av, bv));
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                acc(*a, reduce_to(out, av, g, |_, y| 1.0 / y, av, bv));
                acc(*b, reduce_to(out, bv, g, |x, y| -x / (y * y), av, bv));
            }
            Op::Scale(a, f) => acc(*a, g.iter().map(|v| v * f).collect()),
            Op::Relu(a) => {
                let x = self.val(*a).data();
                acc(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                        .collect(),
                );
            }
            Op::Dropout { input, mask, rate } => {
                let keep = 1.0 / (1.0 - rate);
                acc(
                    *input,
                    g.iter().zip(mask.data()).map(|(gv, m)| gv * m * keep).collect(),
                );
            }
            Op::Square(a) => {
                let x = self.val(*a).data();
                acc(*a, g.iter().zip(x).map(|(gv, xv)| 2.0 * xv * gv).collect());
            }
            Op::Sqrt(a) => {
                acc(
                    *a,
                    g.iter()
                        .zip(out.data())
                        .map(|(gv, &s)| if s > 0.0 { 0.5 * gv / s } else { 0.0 })
                        .collect(),
                );
            }
            Op::Softplus(a) => {
                let x = self.val(*a).data();
                acc(*a, g.iter().zip(x).map(|(gv, &xv)| gv * sigmoid(xv)).collect());
            }
            Op::ClampMin(a, min) => {
                let x = self.val(*a).data();
                acc(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(gv, &xv)| if xv > *min { *gv } else { 0.0 })
                        .collect(),
                );
            }
            Op::Sum(a) => acc(*a, vec![g[0]; self.val(*a).numel()]),
            Op::Mean(a) => {
                let n = self.val(*a).numel();
                acc(*a, vec![g[0] / n as f64; n]);
            }
            Op::SumAxis(a, axis) => {
                let (r, c) = self.val(*a).dims2();
                let mut local = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        local[i * c + j] = if *axis == 0 { g[j] } else { g[i] };
                    }
                }
                acc(*a, local);
            }
            Op::MaxAxis(a, axis) => {
                let x = self.val(*a);
                let arg = argmax_axis("max_axis", x, *axis).expect("validated in forward");
                let mut local = vec![0.0; x.numel()];
                for (gv, idx) in g.iter().zip(arg) {
                    local[idx] += gv;
                }
                acc(*a, local);
            }
            Op::RowNorm(a) => {
                let x = self.val(*a);
                let c = x.cols();
                let mut local = vec![0.0; x.numel()];
                for (i, (gv, &norm)) in g.iter().zip(out.data()).enumerate() {
                    if norm > 0.0 {
                        for j in 0..c {
                            local[i * c + j] = gv * x.data()[i * c + j] / norm;
                        }
                    }
                }
                acc(*a, local);
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let c = av.cols();
                let scaled = |other: &Tensor| -> Vec<f64> {
                    (0..other.numel()).map(|idx| g[idx / c] * other.data()[idx]).collect()
                };
                let ga = scaled(bv);
                let gb = scaled(av);
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::PairwiseSqDist(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let ((n, m), (k, _)) = (av.dims2(), bv.dims2());
                let mut ga = vec![0.0; n * m];
                let mut gb = vec![0.0; k * m];
                for i in 0..n {
                    let ai = av.row(i);
                    for j in 0..k {
                        let w = 2.0 * g[i * k + j];
                        if w == 0.0 {
                            continue;
                        }
                        let bj = bv.row(j);
                        for t in 0..m {
                            let diff = w * (ai[t] - bj[t]);
                            ga[i * m + t] += diff;
                            gb[j * m + t] -= diff;
                        }
                    }
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let x = self.val(*logits);
                let (n, k) = x.dims2();
                let scale = g[0] / n as f64;
                let mut local = vec![0.0; n * k];
                for (i, &label) in labels.iter().enumerate() {
                    let row = x.row(i);
                    let lse = log_sum_exp(row);
                    for j in 0..k {
                        let p = (row[j] - lse).exp();
                        let target = if j == label { 1.0 } else { 0.0 };
                        local[i * k + j] = scale * (p - target);
                    }
                }
                acc(*logits, local);
            }
        }
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_labels(op: &'static str, labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::shape(
            op,
            format!("{} labels for {n} rows", labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::contract(format!("label {bad} out of range for {k} classes")));
    }
    Ok(())
}

/// Flat indices of the first maximum along `axis`.
fn argmax_axis(op: &'static str, x: &Tensor, axis: usize) -> Result<Vec<usize>> {
    let (r, c) = x.dims2();
    let pick = |indices: &mut dyn Iterator<Item = usize>| -> usize {
        let mut best = usize::MAX;
        for idx in indices {
            if best == usize::MAX || x.data()[idx] > x.data()[best] {
                best = idx;
            }
        }
        best
    };
    match axis {
        0 if r > 0 => Ok((0..c).map(|j| pick(&mut (0..r).map(|i| i * c + j))).collect()),
        1 if c > 0 => Ok((0..r).map(|i| pick(&mut (0..c).map(|j| i * c + j))).collect()),
        0 | 1 => Err(Error::shape(op, "max over an empty axis")),
        _ => Err(Error::shape(op, format!("axis {axis} out of range"))),
    }
}

fn broadcast_dim(op: &'static str, a: usize, b: usize) -> Result<usize> {
    match (a, b) {
        _ if a == b => Ok(a),
        (1, _) => Ok(b),
        (_, 1) => Ok(a),
        _ => Err(Error::shape(op, format!("cannot broadcast {a} against {b}"))),
    }
}

fn broadcast(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let ((ra, ca), (rb, cb)) = (a.dims2(), b.dims2());
    let r = broadcast_dim(op, ra, rb)
        .map_err(|_| Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())))?;
    let c = broadcast_dim(op, ca, cb)
        .map_err(|_| Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())))?;
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        let ia = if ra == 1 { 0 } else { i };
        let ib = if rb == 1 { 0 } else { i };
        for j in 0..c {
            let ja = if ca == 1 { 0 } else { j };
            let jb = if cb == 1 { 0 } else { j };
            data.push(f(a.data()[ia * ca + ja], b.data()[ib * cb + jb]));
        }
    }
    let shape = match a.rank().max(b.rank()) {
        0 => vec![],
        1 if r == 1 => vec![c],
        _ => vec![r, c],
    };
    Tensor::new(shape, data)
}

/// Accumulate `g * local(a, b)` over the broadcast output back onto the
/// shape of `target`.
fn reduce_to(
    out: &Tensor,
    target: &Tensor,
    g: &[f64],
    local: impl Fn(f64, f64) -> f64,
    a: &Tensor,
    b: &Tensor,
) -> Vec<f64> {
    let (r, c) = out.dims2();
    let ((ra, ca), (rb, cb)) = (a.dims2(), b.dims2());
    let (rt, ct) = target.dims2();
    let mut res = vec![0.0; rt * ct];
    for i in 0..r {
        let ia = if ra == 1 { 0 } else { i };
        let ib = if rb == 1 { 0 } else { i };
        let it = if rt == 1 { 0 } else { i };
        for j in 0..c {
            let ja = if ca == 1 { 0 } else { j };
            let jb = if cb == 1 { 0 } else { j };
            let jt = if ct == 1 { 0 } else { j };
            let x = a.data()[ia * ca + ja];
            let y = b.data()[ib * cb + jb];
            res[it * ct + jt] += g[i * c + j] * local(x, y);
        }
    }
    res
}
