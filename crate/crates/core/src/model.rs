//! Feature extractor, reciprocal points and the hybrid distance logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numgrad::{softplus, Graph, NodeId, Tensor};
use crate::rng::{self, Generator};

pub use crate::dataio::Dataset;

/// Lower bound on vector norms in the cosine term.
pub const NORM_FLOOR: f64 = 1e-12;

/// Std of the normal draw for reciprocal point initialization.
const POINT_INIT_STD: f64 = 0.1;

/// `softplus(x) = 1` at this value, so margins start at `R^k = 1`.
pub fn raw_margin_for(margin: f64) -> f64 {
    // inverse softplus: ln(e^R - 1)
    margin.exp_m1().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `[inputs, outputs]`
    pub weight: Tensor,
    /// `[outputs]`
    pub bias: Tensor,
}

/// Complete learnable state plus the label vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Extractor layers; all but the last are followed by ReLU and dropout.
    pub layers: Vec<Dense>,
    /// `[K, m]`, one reciprocal point per known class.
    pub reciprocal_points: Tensor,
    /// `[K]`; margins are `softplus(raw)`.
    pub raw_margins: Tensor,
    pub gamma: f64,
    pub labels: Vec<String>,
}

impl ModelParams {
    /// He-initialized extractor, `N(0, 0.1)` points, unit margins.
    pub fn init(
        input_dim: usize,
        hidden_dims: &[usize],
        embed_dim: usize,
        labels: Vec<String>,
        gamma: f64,
        rng: &mut Generator,
    ) -> Result<Self> {
        if input_dim == 0 || embed_dim == 0 || hidden_dims.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if labels.is_empty() {
            return Err(Error::Config("at least one known class is required".into()));
        }
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden_dims);
        widths.push(embed_dim);
        let layers = widths
            .windows(2)
            .map(|w| Dense {
                weight: rng::normal_tensor(rng, &[w[0], w[1]], 0.0, (2.0 / w[0] as f64).sqrt()),
                bias: Tensor::zeros(&[w[1]]),
            })
            .collect();
        let k = labels.len();
        let params = ModelParams {
            layers,
            reciprocal_points: rng::normal_tensor(rng, &[k, embed_dim], 0.0, POINT_INIT_STD),
            raw_margins: Tensor::filled(&[k], raw_margin_for(1.0)),
            gamma,
            labels,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.reciprocal_points.cols()
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.weight.cols())
            .collect()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    /// `R^k = softplus(raw_k)`.
    pub fn margins(&self) -> Vec<f64> {
        self.raw_margins.data().iter().map(|&r| softplus(r)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Contract(format!("model parameters: {msg}")));
        if self.layers.is_empty() {
            return bad("no extractor layers".into());
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].weight.cols() != pair[1].weight.rows() {
                return bad(format!("layer {i} output does not feed layer {}", i + 1));
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.weight.rank() != 2 || layer.bias.shape() != [layer.weight.cols()] {
                return bad(format!("layer {i} has malformed weight/bias shapes"));
            }
        }
        let k = self.labels.len();
        let m = self.layers.last().unwrap().weight.cols();
        if self.reciprocal_points.shape() != [k, m] {
            return bad(format!(
                "reciprocal points {:?}, expected [{k}, {m}]",
                self.reciprocal_points.shape()
            ));
        }
        if self.raw_margins.shape() != [k] {
            return bad(format!("margins {:?}, expected [{k}]", self.raw_margins.shape()));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return bad(format!("gamma {} must be finite and > 0", self.gamma));
        }
        if !self.trainables().iter().all(|t| t.is_finite()) {
            return bad("non-finite value".into());
        }
        if self.margins().iter().any(|&r| r <= 0.0) {
            return bad("margin underflowed to zero".into());
        }
        Ok(())
    }

    /// Trainable tensors in a fixed order: layer weights/biases, points, margins.
    pub fn trainables(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        for layer in &self.layers {
            out.push(&layer.weight);
            out.push(&layer.bias);
        }
        out.push(&self.reciprocal_points);
        out.push(&self.raw_margins);
        out
    }

    pub fn trainables_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out.push(&mut self.reciprocal_points);
        out.push(&mut self.raw_margins);
        out
    }

    /// Register every trainable tensor as a parameter leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> ParamNodes {
        let layers = self
            .layers
            .iter()
            .map(|l| (g.param(l.weight.clone()), g.param(l.bias.clone())))
            .collect();
        ParamNodes {
            layers,
            points: g.param(self.reciprocal_points.clone()),
            raw_margins: g.param(self.raw_margins.clone()),
        }
    }
}

/// Graph handles for the tensors of a bound [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ParamNodes {
    pub layers: Vec<(NodeId, NodeId)>,
    pub points: NodeId,
    pub raw_margins: NodeId,
}

impl ParamNodes {
    /// Same order as [`ModelParams::trainables`].
    pub fn all(&self) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self.layers.iter().flat_map(|&(w, b)| [w, b]).collect();
        out.push(self.points);
        out.push(self.raw_margins);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// One 0/1 keep-mask per hidden layer, each shaped `[batch, width]`.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    pub rate: f64,
    pub masks: Vec<Tensor>,
}

impl DropoutMasks {
    /// `None` when `rate == 0`, matching the "masks iff dropout" contract.
    pub fn draw(
        rng: &mut Generator,
        batch: usize,
        hidden_dims: &[usize],
        rate: f64,
    ) -> Option<DropoutMasks> {
        (rate > 0.0).then(|| DropoutMasks {
            rate,
            masks: hidden_dims
                .iter()
                .map(|&h| rng::bernoulli_mask(rng, &[batch, h], rate))
                .collect(),
        })
    }
}

/// `z = W_L(...Drop(ReLU(W_1 x + b_1))...) + b_L` as graph nodes.
pub fn embed_node(
    g: &mut Graph,
    nodes: &ParamNodes,
    x: NodeId,
    mode: Mode,
    dropout: Option<&DropoutMasks>,
) -> Result<NodeId> {
    let hidden = nodes.layers.len() - 1;
    match (mode, dropout) {
        (Mode::Infer, Some(_)) => {
            return Err(Error::contract("dropout masks supplied in inference mode"));
        }
        (Mode::Train, Some(d)) if d.masks.len() != hidden => {
            return Err(Error::contract(format!(
                "{} dropout masks for {hidden} hidden layers",
                d.masks.len()
            )));
        }
        _ => {}
    }
    let mut h = x;
    for (i, &(w, b)) in nodes.layers.iter().enumerate() {
        let xw = g.matmul(h, w);
        h = g.add(xw, b);
        if i < hidden {
            h = g.relu(h);
            if let Some(d) = dropout {
                h = g.dropout(h, d.masks[i].clone(), d.rate);
            }
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy)]
pub struct DistanceNodes {
    /// `‖z − P^k‖² / m`, `[N, K]`.
    pub euclidean: NodeId,
    /// Euclidean term minus cosine similarity, `[N, K]`.
    pub hybrid: NodeId,
}

pub fn distance_nodes(g: &mut Graph, z: NodeId, points: NodeId, embed_dim: usize) -> DistanceNodes {
    let sq = g.pairwise_sq_dist(z, points);
    let euclidean = g.scale(sq, 1.0 / embed_dim as f64);
    let pt = g.transpose(points);
    let dot = g.matmul(z, pt);
    let zn = g.row_norm(z);
    let zn = g.clamp_min(zn, NORM_FLOOR);
    let pn = g.row_norm(points);
    let pn = g.clamp_min(pn, NORM_FLOOR);
    let pnt = g.transpose(pn);
    let denom = g.matmul(zn, pnt);
    let cosine = g.div(dot, denom);
    let hybrid = g.sub(euclidean, cosine);
    DistanceNodes { euclidean, hybrid }
}

fn check_width(x: &Tensor, params: &ModelParams) -> Result<()> {
    if x.rank() != 2 || x.cols() != params.input_dim() {
        return Err(Error::Shape {
            op: "embed",
            detail: format!(
                "input {:?}, model expects rows of width {}",
                x.shape(),
                params.input_dim()
            ),
        });
    }
    Ok(())
}

/// Rows per inference graph; bounds memory on large inputs.
const INFER_CHUNK: usize = 4096;

/// Evaluate `build` on row chunks of `x` and stack the results.
fn chunked(
    x: &Tensor,
    params: &ModelParams,
    build: impl Fn(&mut Graph, &ParamNodes, NodeId) -> Result<NodeId>,
) -> Result<Tensor> {
    check_width(x, params)?;
    let n = x.rows();
    let mut data = Vec::new();
    let mut start = 0;
    let cols = loop {
        let end = (start + INFER_CHUNK).min(n);
        let rows: Vec<usize> = (start..end).collect();
        let mut g = Graph::new();
        let nodes = params.bind(&mut g);
        let xn = g.constant(x.select_rows(&rows));
        build(&mut g, &nodes, xn)?;
        let out = g.forward()?;
        data.extend_from_slice(out.data());
        start = end;
        if start >= n {
            break out.cols();
        }
    };
    Tensor::matrix(n, cols, data)
}

/// Batch embeddings, `[N, m]`.
pub fn embed(
    x: &Tensor,
    params: &ModelParams,
    mode: Mode,
    dropout: Option<&DropoutMasks>,
) -> Result<Tensor> {
    if dropout.is_some() {
        // Masks are shaped to the whole batch, so evaluate it in one graph.
        check_width(x, params)?;
        let mut g = Graph::new();
        let nodes = params.bind(&mut g);
        let xn = g.constant(x.clone());
        embed_node(&mut g, &nodes, xn, mode, dropout)?;
        return Ok(g.forward()?.clone());
    }
    chunked(x, params, |g, nodes, xn| embed_node(g, nodes, xn, mode, None))
}

/// Hybrid distance to every reciprocal point, `[N, K]`, inference mode.
pub fn distances(x: &Tensor, params: &ModelParams) -> Result<Tensor> {
    chunked(x, params, |g, nodes, xn| {
        let z = embed_node(g, nodes, xn, Mode::Infer, None)?;
        Ok(distance_nodes(g, z, nodes.points, params.embed_dim()).hybrid)
    })
}

/// `logit_k = γ · d(φ(x), P^k)`, `[N, K]`.
pub fn logits(
    x: &Tensor,
    params: &ModelParams,
    mode: Mode,
    dropout: Option<&DropoutMasks>,
) -> Result<Tensor> {
    if dropout.is_some() {
        check_width(x, params)?;
        let mut g = Graph::new();
        let nodes = params.bind(&mut g);
        let xn = g.constant(x.clone());
        let z = embed_node(&mut g, &nodes, xn, mode, dropout)?;
        let d = distance_nodes(&mut g, z, nodes.points, params.embed_dim());
        g.scale(d.hybrid, params.gamma);
        return Ok(g.forward()?.clone());
    }
    chunked(x, params, |g, nodes, xn| {
        let z = embed_node(g, nodes, xn, mode, None)?;
        let d = distance_nodes(g, z, nodes.points, params.embed_dim());
        Ok(g.scale(d.hybrid, params.gamma))
    })
}

/// `‖z − p‖²/m − zᵀp / (‖z‖‖p‖)` for a single pair, `m = z.len()`.
pub fn rp_distance(z: &[f64], p: &[f64]) -> f64 {
    assert_eq!(z.len(), p.len(), "embedding and point widths differ");
    let m = z.len() as f64;
    let sq: f64 = z.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
    let dot: f64 = z.iter().zip(p).map(|(a, b)| a * b).sum();
    let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
    let pn = p.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
    sq / m - dot / (zn * pn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    fn random_params(seed: u64, d: usize, m: usize, k: usize) -> ModelParams {
        let mut rng = rng::generator(seed);
        let mut p = ModelParams::init(d, &[6, 5], m, labels(k), 1.0, &mut rng).unwrap();
        for layer in &mut p.layers {
            layer.bias = rng::normal_tensor(&mut rng, layer.bias.shape(), 0.0, 0.3);
        }
        p
    }

    #[test]
    fn rp_distance_hand_values() {
        assert!((rp_distance(&[0.3, -0.4], &[0.3, -0.4]) + 1.0).abs() < 1e-15);
        assert_eq!(rp_distance(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(rp_distance(&[1.0, 0.0], &[-1.0, 0.0]), 3.0);
    }

    #[test]
    fn rp_distance_with_zero_embedding_is_finite() {
        let d = rp_distance(&[0.0, 0.0], &[1.0, 1.0]);
        assert_eq!(d, 1.0);
    }

    #[test]
    fn zero_weights_embed_to_zero() {
        let mut p = random_params(1, 4, 3, 2);
        for layer in &mut p.layers {
            layer.weight = Tensor::zeros(layer.weight.shape());
            layer.bias = Tensor::zeros(layer.bias.shape());
        }
        let x = Tensor::from_rows(&[[1.0, -2.0, 3.0, 0.5], [0.0, 9.0, -1.0, 2.0]]).unwrap();
        let z = embed(&x, &p, Mode::Infer, None).unwrap();
        assert_eq!(z.shape(), &[2, 3]);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_extractor_passes_non_negative_inputs() {
        let d = 3;
        let eye: Vec<f64> = (0..d * d).map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 }).collect();
        let layer = || Dense {
            weight: Tensor::matrix(d, d, eye.clone()).unwrap(),
            bias: Tensor::zeros(&[d]),
        };
        let p = ModelParams {
            layers: vec![layer(), layer(), layer()],
            reciprocal_points: Tensor::ones(&[1, d]),
            raw_margins: Tensor::zeros(&[1]),
            gamma: 1.0,
            labels: labels(1),
        };
        let x = Tensor::from_rows(&[[0.5, 2.0, 0.0]]).unwrap();
        assert_eq!(embed(&x, &p, Mode::Infer, None).unwrap().data(), x.data());
    }

    #[test]
    fn identical_rows_embed_identically() {
        let p = random_params(2, 4, 3, 2);
        let x = Tensor::from_rows(&[[0.1, 0.2, -0.3, 1.0], [0.1, 0.2, -0.3, 1.0]]).unwrap();
        let z = embed(&x, &p, Mode::Infer, None).unwrap();
        assert_eq!(z.row(0), z.row(1));
    }

    #[test]
    fn width_mismatch_is_a_shape_error() {
        let p = random_params(3, 4, 3, 2);
        let x = Tensor::zeros(&[2, 5]);
        assert!(matches!(
            embed(&x, &p, Mode::Infer, None),
            Err(Error::Shape { op: "embed", .. })
        ));
    }

    #[test]
    fn masks_rejected_in_inference() {
        let p = random_params(4, 4, 3, 2);
        let x = Tensor::zeros(&[1, 4]);
        let masks = DropoutMasks::draw(&mut rng::generator(0), 1, &p.hidden_dims(), 0.5);
        assert!(embed(&x, &p, Mode::Infer, masks.as_ref()).is_err());
        assert!(embed(&x, &p, Mode::Train, masks.as_ref()).is_ok());
    }

    #[test]
    fn logit_at_reciprocal_point_is_minus_gamma() {
        // Single linear layer (no hidden) so the embedding is easy to place.
        let mut p = ModelParams {
            layers: vec![Dense {
                weight: Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(),
                bias: Tensor::zeros(&[2]),
            }],
            reciprocal_points: Tensor::from_rows(&[[0.5, 0.5], [-3.0, 1.0]]).unwrap(),
            raw_margins: Tensor::zeros(&[2]),
            gamma: 1.0,
            labels: labels(2),
        };
        let x = Tensor::from_rows(&[[0.5, 0.5]]).unwrap();
        let l1 = logits(&x, &p, Mode::Infer, None).unwrap();
        assert!((l1.get(0, 0) + 1.0).abs() < 1e-15);
        p.gamma = 2.0;
        let l2 = logits(&x, &p, Mode::Infer, None).unwrap();
        for (a, b) in l1.data().iter().zip(l2.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn graph_distances_match_scalar_formula() {
        let p = random_params(5, 4, 3, 3);
        let x = rng::normal_tensor(&mut rng::generator(9), &[6, 4], 0.0, 1.0);
        let z = embed(&x, &p, Mode::Infer, None).unwrap();
        let d = distances(&x, &p).unwrap();
        for i in 0..6 {
            for k in 0..3 {
                let direct = rp_distance(z.row(i), p.reciprocal_points.row(k));
                assert!((d.get(i, k) - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn initial_margins_are_one() {
        let p = random_params(6, 2, 2, 4);
        for r in p.margins() {
            assert!((r - 1.0).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn rp_distance_is_at_least_minus_one(
            z in proptest::collection::vec(-5.0f64..5.0, 4),
            p in proptest::collection::vec(-5.0f64..5.0, 4),
        ) {
            prop_assert!(rp_distance(&z, &p) >= -1.0 - 1e-12);
        }

        #[test]
        fn argmax_is_invariant_to_gamma(gamma in 0.01f64..50.0, seed in 0u64..1000) {
            let mut p = random_params(seed, 4, 3, 3);
            let x = rng::normal_tensor(&mut rng::generator(seed + 1), &[5, 4], 0.0, 1.0);
            let base = logits(&x, &p, Mode::Infer, None).unwrap();
            p.gamma = gamma;
            let scaled = logits(&x, &p, Mode::Infer, None).unwrap();
            for i in 0..5 {
                prop_assert_eq!(argmax(base.row(i)), argmax(scaled.row(i)));
            }
        }

        #[test]
        fn logits_permute_with_points(seed in 0u64..1000) {
            let p = random_params(seed, 4, 3, 3);
            let perm = [2usize, 0, 1];
            let mut q = p.clone();
            q.reciprocal_points = p.reciprocal_points.select_rows(&perm);
            q.labels = perm.iter().map(|&i| p.labels[i].clone()).collect();
            let x = rng::normal_tensor(&mut rng::generator(seed + 7), &[4, 4], 0.0, 1.0);
            let a = logits(&x, &p, Mode::Infer, None).unwrap();
            let b = logits(&x, &q, Mode::Infer, None).unwrap();
            for i in 0..4 {
                for (j, &src) in perm.iter().enumerate() {
                    prop_assert_eq!(b.get(i, j), a.get(i, src));
                }
            }
        }

        #[test]
        fn embedding_rows_do_not_depend_on_batch_order(seed in 0u64..1000) {
            let p = random_params(seed, 4, 3, 2);
            let x = rng::normal_tensor(&mut rng::generator(seed + 3), &[5, 4], 0.0, 1.0);
            let order = [4usize, 2, 0, 3, 1];
            let z = embed(&x, &p, Mode::Infer, None).unwrap();
            let zp = embed(&x.select_rows(&order), &p, Mode::Infer, None).unwrap();
            for (new, &old) in order.iter().enumerate() {
                prop_assert_eq!(zp.row(new), z.row(old));
            }
        }
    }

    fn argmax(row: &[f64]) -> usize {
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = i;
            }
        }
        best
    }
}
