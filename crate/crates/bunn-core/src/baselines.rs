//! Message-passing baselines: per-node MLP, GCN (self-inclusive mean
//! aggregation),
//! GraphSAGE, and single-head GAT, plus a small stacked model over them.
//!
//! Each layer primitive returns its pre-activation output; the stacked
//! [`BaselineModel`] applies ReLU between layers and finishes with a linear
//! readout.

use std::rc::Rc;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{glorot, ParamStore};
use crate::tensor::Var;

/// Negative-side slope of the attention score nonlinearity.
pub const GAT_LEAKY_SLOPE: f64 = 0.2;

/// Mean aggregation D⁻¹A·x, via x − 𝓛x with the random-walk Laplacian.
pub fn mean_aggregate(g: &Rc<Graph>, x: &Var) -> Result<Var> {
    x.sub(&x.lap_rw_apply(g)?)
}

/// Self-inclusive mean aggregation (D+I)⁻¹(A+I)·x: each node averages its own
/// state together with its neighbors'.
pub fn mean_aggregate_with_self(g: &Rc<Graph>, x: &Var) -> Result<Var> {
    let (n, c) = x.shape();
    if n != g.node_count() {
        return Err(Error::ShapeMismatch(format!(
            "self-inclusive mean: {n} rows for {} nodes",
            g.node_count()
        )));
    }
    let summed = x.add(&x.adj_sum_apply(g)?)?;
    let scale = Array2::from_shape_fn((n, c), |(v, _)| 1.0 / (g.degree(v) as f64 + 1.0));
    summed.hadamard(&x.tape().constant(scale))
}

/// GCN update (pre-activation): (D+I)⁻¹(A+I)·x·W + b, the standard
/// self-loop-augmented mean-normalized convolution.
pub fn gcn_layer(g: &Rc<Graph>, x: &Var, w: &Var, b: &Var) -> Result<Var> {
    mean_aggregate_with_self(g, x)?.matmul(w)?.add(b)
}

/// GraphSAGE update (pre-activation): x·W_s + (D⁻¹A·x)·W_n + b.
pub fn sage_layer(
    g: &Rc<Graph>,
    x: &Var,
    ws: &Var,
    wn: &Var,
    b: &Var,
) -> Result<Var> {
    let own = x.matmul(ws)?;
    let agg = mean_aggregate(g, x)?.matmul(wn)?;
    own.add(&agg)?.add(b)
}

/// Neighborhood attention weights of a single-head additive-attention GAT:
/// row u holds softmax_{v∈N(u)} leaky_relu(a_srcᵀh_u + a_dstᵀh_v) with
/// h = x·W. Rows sum to one over each neighborhood.
pub fn gat_attention(
    g: &Rc<Graph>,
    h: &Var,
    a_src: &Var,
    a_dst: &Var,
) -> Result<Var> {
    let n = g.node_count();
    if h.shape().0 != n {
        return Err(Error::ShapeMismatch(format!(
            "gat attention: {} rows for {n} nodes",
            h.shape().0
        )));
    }
    let tape = h.tape();
    let s_src = h.matmul(a_src)?; // n×1
    let s_dst = h.matmul(a_dst)?; // n×1
    let ones_row = tape.constant(Array2::from_elem((1, n), 1.0));
    let ones_col = tape.constant(Array2::from_elem((n, 1), 1.0));
    let scores = s_src
        .matmul(&ones_row)?
        .add(&ones_col.matmul(&s_dst.transpose())?)?
        .leaky_relu(GAT_LEAKY_SLOPE);
    scores.masked_row_softmax(g)
}

/// GAT update (pre-activation): attention-weighted neighbor sum of h = x·W,
/// plus bias.
pub fn gat_layer(
    g: &Rc<Graph>,
    x: &Var,
    w: &Var,
    a_src: &Var,
    a_dst: &Var,
    b: &Var,
) -> Result<Var> {
    let h = x.matmul(w)?;
    let att = gat_attention(g, &h, a_src, a_dst)?;
    att.matmul(&h)?.add(b)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Mlp,
    Gcn,
    Sage,
    Gat,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    /// Number of message-passing (or dense, for MLP) layers before the
    /// linear readout.
    pub layers: usize,
}

enum LayerParams {
    Dense { w: usize, b: usize },
    Gcn { w: usize, b: usize },
    Sage { ws: usize, wn: usize, b: usize },
    Gat { w: usize, a_src: usize, a_dst: usize, b: usize },
}

/// `layers` graph layers with ReLU in between, then a linear readout.
pub struct BaselineModel {
    pub config: BaselineConfig,
    pub store: ParamStore,
    layers: Vec<LayerParams>,
    readout: (usize, usize),
}

impl BaselineModel {
    pub fn new(config: BaselineConfig, rng: &mut ChaCha8Rng) -> Result<BaselineModel> {
        if config.layers == 0 {
            return Err(Error::InvalidParameter("need at least one layer".into()));
        }
        let mut store = ParamStore::default();
        let mut layers = Vec::new();
        let mut din = config.in_dim;
        for _ in 0..config.layers {
            let dout = config.hidden;
            let b = store.add(Array2::zeros((1, dout)));
            layers.push(match config.kind {
                BaselineKind::Mlp => LayerParams::Dense {
                    w: store.add(glorot(rng, din, dout)),
                    b,
                },
                BaselineKind::Gcn => LayerParams::Gcn {
                    w: store.add(glorot(rng, din, dout)),
                    b,
                },
                BaselineKind::Sage => LayerParams::Sage {
                    ws: store.add(glorot(rng, din, dout)),
                    wn: store.add(glorot(rng, din, dout)),
                    b,
                },
                BaselineKind::Gat => LayerParams::Gat {
                    w: store.add(glorot(rng, din, dout)),
                    a_src: store.add(glorot(rng, dout, 1)),
                    a_dst: store.add(glorot(rng, dout, 1)),
                    b,
                },
            });
            din = dout;
        }
        let readout = (
            store.add(glorot(rng, din, config.out_dim)),
            store.add(Array2::zeros((1, config.out_dim))),
        );
        Ok(BaselineModel {
            config,
            store,
            layers,
            readout,
        })
    }

    /// Node-level output, n×out_dim. `vars` must come from
    /// `store.leaf_all` (or constants in the same order).
    pub fn forward(&self, vars: &[Var], g: &Rc<Graph>, x: &Var) -> Result<Var> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                LayerParams::Dense { w, b } => h.matmul(&vars[*w])?.add(&vars[*b])?,
                LayerParams::Gcn { w, b } => gcn_layer(g, &h, &vars[*w], &vars[*b])?,
                LayerParams::Sage { ws, wn, b } => {
                    sage_layer(g, &h, &vars[*ws], &vars[*wn], &vars[*b])?
                }
                LayerParams::Gat { w, a_src, a_dst, b } => {
                    gat_layer(g, &h, &vars[*w], &vars[*a_src], &vars[*a_dst], &vars[*b])?
                }
            };
            h = h.relu();
        }
        h.matmul(&vars[self.readout.0])?.add(&vars[self.readout.1])
    }
}
