//! Cross-entropy, margin and Fisher losses and their weighted total.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, DropoutMasks, Mode, ModelParams, ParamNodes};
use crate::numgrad::{Graph, NodeId, Tensor};

/// Added to the within-class scatter so collapsed classes stay defined.
pub const FISHER_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            lambda: 1.0,
            beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("alpha", self.alpha), ("lambda", self.lambda), ("beta", self.beta)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("{name} = {w} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub margin: f64,
    pub fisher: f64,
    pub total: f64,
    pub weights: LossWeights,
}

fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::contract(format!("{} labels for {n} samples", labels.len())));
    }
    if n == 0 {
        return Err(Error::contract("loss over an empty batch"));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::contract(format!("label {bad} out of range for {k} classes")));
    }
    Ok(())
}

/// Mean `-log softmax(logits)[label]`.
pub fn ce_node(g: &mut Graph, logits: NodeId, labels: &[usize]) -> NodeId {
    g.softmax_cross_entropy(logits, labels.to_vec())
}

fn one_hot(labels: &[usize], k: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * k];
    for (i, &l) in labels.iter().enumerate() {
        data[i * k + l] = 1.0;
    }
    Tensor::matrix(labels.len(), k, data).expect("sized from labels")
}

/// `mean_i max(d_e(z_i, P^{y_i}) − softplus(raw_{y_i}), 0)`.
///
/// `euclidean` is the `[N, K]` normalized squared distance node.
pub fn margin_node(
    g: &mut Graph,
    euclidean: NodeId,
    raw_margins: NodeId,
    labels: &[usize],
    k: usize,
) -> NodeId {
    let onehot = g.constant(one_hot(labels, k));
    let own = g.mul(euclidean, onehot);
    let own = g.sum_axis(own, 1);
    let radius = g.softplus(raw_margins);
    let own_radius = g.mul(onehot, radius);
    let own_radius = g.sum_axis(own_radius, 1);
    let excess = g.sub(own, own_radius);
    let hinge = g.clamp_min(excess, 0.0);
    g.mean(hinge)
}

/// `1 / (1 + S_b / (S_w + ε))` over the classes present in the batch.
pub fn fisher_node(g: &mut Graph, z: NodeId, labels: &[usize]) -> NodeId {
    let present: BTreeMap<usize, usize> = labels.iter().fold(BTreeMap::new(), |mut acc, &l| {
        *acc.entry(l).or_insert(0) += 1;
        acc
    });
    let slot: BTreeMap<usize, usize> = present.keys().enumerate().map(|(i, &l)| (l, i)).collect();
    let n = labels.len();
    let kp = present.len();

    let mut assign = vec![0.0; n * kp];
    let mut averaging = vec![0.0; kp * n];
    for (i, l) in labels.iter().enumerate() {
        let s = slot[l];
        assign[i * kp + s] = 1.0;
        averaging[s * n + i] = 1.0 / present[l] as f64;
    }
    let counts: Vec<f64> = present.values().map(|&c| c as f64).collect();

    let assign = g.constant(Tensor::matrix(n, kp, assign).unwrap());
    let averaging = g.constant(Tensor::matrix(kp, n, averaging).unwrap());
    let counts = g.constant(Tensor::matrix(kp, 1, counts).unwrap());
    let global_avg = g.constant(Tensor::filled(&[1, n], 1.0 / n as f64));

    let class_means = g.matmul(averaging, z);
    let own_mean = g.matmul(assign, class_means);
    let within = g.sub(z, own_mean);
    let within = g.square(within);
    let s_w = g.sum(within);

    let global_mean = g.matmul(global_avg, z);
    let between = g.sub(class_means, global_mean);
    let between = g.square(between);
    let between = g.mul(counts, between);
    let s_b = g.sum(between);

    let eps = g.constant(Tensor::scalar(FISHER_EPS));
    let one = g.constant(Tensor::scalar(1.0));
    let s_w = g.add(s_w, eps);
    let ratio = g.div(s_b, s_w);
    let denom = g.add(one, ratio);
    g.div(one, denom)
}

#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub logits: NodeId,
    pub ce: NodeId,
    pub margin: NodeId,
    pub fisher: NodeId,
    pub total: NodeId,
}

/// A forward-evaluated training objective with its parameter handles.
#[derive(Debug)]
pub struct LossGraph {
    pub graph: Graph,
    pub params: ParamNodes,
    pub nodes: LossNodes,
    pub weights: LossWeights,
}

impl LossGraph {
    pub fn breakdown(&self) -> LossBreakdown {
        let v = |id| self.graph.value(id).and_then(Tensor::item).expect("forward ran");
        LossBreakdown {
            ce: v(self.nodes.ce),
            margin: v(self.nodes.margin),
            fisher: v(self.nodes.fisher),
            total: v(self.nodes.total),
            weights: self.weights,
        }
    }

    pub fn logits(&self) -> &Tensor {
        self.graph.value(self.nodes.logits).expect("forward ran")
    }

    /// Gradients of the total, in [`ModelParams::trainables`] order.
    pub fn gradients(&self) -> Result<Vec<Tensor>> {
        let ids = self.params.all();
        let mut grads = self.graph.gradient_of(self.nodes.total, &ids)?;
        Ok(ids.iter().map(|id| grads.remove(id).unwrap()).collect())
    }
}

/// Build and evaluate `α·CE + λ·margin + β·Fisher` for one batch.
pub fn total_loss(
    x: &Tensor,
    labels: &[usize],
    params: &ModelParams,
    weights: LossWeights,
    mode: Mode,
    dropout: Option<&DropoutMasks>,
) -> Result<LossGraph> {
    weights.validate()?;
    let k = params.num_classes();
    check_labels(labels, x.rows(), k)?;
    let mut g = Graph::new();
    let pn = params.bind(&mut g);
    let xn = g.constant(x.clone());
    let z = model::embed_node(&mut g, &pn, xn, mode, dropout)?;
    let dist = model::distance_nodes(&mut g, z, pn.points, params.embed_dim());
    let logits = g.scale(dist.hybrid, params.gamma);

    let ce = ce_node(&mut g, logits, labels);
    let margin = margin_node(&mut g, dist.euclidean, pn.raw_margins, labels, k);
    let fisher = fisher_node(&mut g, z, labels);

    let wce = g.scale(ce, weights.alpha);
    let wmargin = g.scale(margin, weights.lambda);
    let wfisher = g.scale(fisher, weights.beta);
    let partial = g.add(wce, wmargin);
    let total = g.add(partial, wfisher);
    g.forward()?;
    Ok(LossGraph {
        graph: g,
        params: pn,
        nodes: LossNodes {
            logits,
            ce,
            margin,
            fisher,
            total,
        },
        weights,
    })
}

pub fn ce_loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (n, k) = logits.dims2();
    check_labels(labels, n, k)?;
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    ce_node(&mut g, l, labels);
    Ok(g.forward()?.item().unwrap())
}

pub fn margin_loss(embeddings: &Tensor, labels: &[usize], params: &ModelParams) -> Result<f64> {
    let k = params.num_classes();
    check_labels(labels, embeddings.rows(), k)?;
    if embeddings.cols() != params.embed_dim() {
        return Err(Error::shape(
            "margin_loss",
            format!("embeddings {:?}, expected width {}", embeddings.shape(), params.embed_dim()),
        ));
    }
    let mut g = Graph::new();
    let z = g.constant(embeddings.clone());
    let points = g.constant(params.reciprocal_points.clone());
    let raw = g.constant(params.raw_margins.clone());
    let dist = model::distance_nodes(&mut g, z, points, params.embed_dim());
    margin_node(&mut g, dist.euclidean, raw, labels, k);
    Ok(g.forward()?.item().unwrap())
}

pub fn fisher_loss(embeddings: &Tensor, labels: &[usize]) -> Result<f64> {
    let n = embeddings.rows();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    check_labels(labels, n, k)?;
    let mut g = Graph::new();
    let z = g.constant(embeddings.clone());
    fisher_node(&mut g, z, labels);
    Ok(g.forward()?.item().unwrap())
}
