//! The bundle diffusion layer and full model.
//!
//! One layer computes, per node v:
//!
//! 1. maps: O_v = φ(graph, positional encodings [, features], v) — a small
//!    MLP or sum-aggregation GNN emitting one angle per bundle;
//! 2. encode: h_v = O_vᵀ·W·O_v·x_v + bias, with W acting on the flattened
//!    b·d·p vector and the bias added in local coordinates;
//! 3. diffuse: heat(t) applied in the synchronized frame;
//! 4. activate: x' = σ(z), with optional skip connection.
//!
//! The module also houses two closed-form parameter constructions used to
//! verify the layer's sensitivity structure: a receptive-field mask whose
//! layer Jacobian is zero at chosen nodes, and a single-layer parameter set
//! (lift / block bundle / lookup weight / pool) that reproduces arbitrary
//! linear feature transformations over a finite graph family with injective
//! positional encodings.

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::BundleAssignment;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::heat::{bundle_heat_apply, heat_kernel_dense, HeatOperator};
use crate::tensor::{Tape, Var};

/// Flat list of trainable arrays; models reference entries by index so one
/// vector drives tape leafing, the optimizer, and serialization.
#[derive(Default, Clone)]
pub struct ParamStore {
    pub arrays: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn add(&mut self, a: Array2<f64>) -> usize {
        self.arrays.push(a);
        self.arrays.len() - 1
    }

    /// Registers every array as a differentiable leaf, in storage order.
    pub fn leaf_all(&self, tape: &Tape) -> Vec<Var> {
        self.arrays.iter().map(|a| tape.leaf(a.clone())).collect()
    }
}

/// Uniform ±√(6/(fan_in+fan_out)) initialization.
pub fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
    Identity,
}

impl Activation {
    pub fn apply(&self, x: &Var) -> Var {
        match self {
            Activation::Relu => x.relu(),
            Activation::Gelu => x.gelu(),
            Activation::Identity => x.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhiKind {
    /// Per-node MLP on the positional encoding (optionally features).
    Mlp,
    /// Stacked sum-aggregation layers σ(W_s·x_v + W_n·Σ_{u∈N(v)} x_u + b).
    SumGnn,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhiConfig {
    pub kind: PhiKind,
    pub hidden: Vec<usize>,
    /// One φ for all layers instead of one per layer.
    pub shared: bool,
    /// Feed current features alongside the positional encoding.
    pub use_features: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipMode {
    None,
    /// x' = σ(z) + x — the default.
    PostActivation,
    /// x' = σ(z + x) — the variant that keeps the skip inside the
    /// nonlinearity.
    PreActivation,
}

/// Bundle-map network: emits one angle per bundle per node. Weights are
/// stored input-major (y = x·W + b); the output layer is zero-initialized so
/// the initial bundle is trivial.
pub struct PhiNet {
    layers: Vec<PhiLayer>,
    pub in_dim: usize,
    pub out_dim: usize,
}

enum PhiLayer {
    Dense { w: usize, b: usize },
    SumAgg { ws: usize, wn: usize, b: usize },
}

impl PhiNet {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        kind: PhiKind,
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
    ) -> PhiNet {
        let mut layers = Vec::new();
        let mut prev = in_dim;
        let widths: Vec<usize> = hidden.iter().cloned().chain([out_dim]).collect();
        for (i, &w) in widths.iter().enumerate() {
            let last = i + 1 == widths.len();
            let init = |rng: &mut ChaCha8Rng| {
                if last {
                    Array2::zeros((prev, w))
                } else {
                    glorot(rng, prev, w)
                }
            };
            let bias = store.add(Array2::zeros((1, w)));
            layers.push(match kind {
                PhiKind::Mlp => PhiLayer::Dense {
                    w: store.add(init(rng)),
                    b: bias,
                },
                PhiKind::SumGnn => PhiLayer::SumAgg {
                    ws: store.add(init(rng)),
                    wn: store.add(init(rng)),
                    b: bias,
                },
            });
            prev = w;
        }
        PhiNet {
            layers,
            in_dim,
            out_dim,
        }
    }

    /// Per-node angles, n×out_dim. `g` is only consulted by sum-aggregation
    /// layers.
    pub fn forward(&self, vars: &[Var], g: &Rc<Graph>, input: &Var) -> Result<Var> {
        if input.shape().1 != self.in_dim {
            return Err(Error::ShapeMismatch(format!(
                "bundle-map net expects width {}, got {}",
                self.in_dim,
                input.shape().1
            )));
        }
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = match layer {
                PhiLayer::Dense { w, b } => x.matmul(&vars[*w])?.add(&vars[*b])?,
                PhiLayer::SumAgg { ws, wn, b } => {
                    let own = x.matmul(&vars[*ws])?;
                    let agg = x.adj_sum_apply(g)?.matmul(&vars[*wn])?;
                    own.add(&agg)?.add(&vars[*b])?
                }
            };
            if i + 1 < self.layers.len() {
                x = x.relu();
            }
        }
        Ok(x)
    }
}

/// Bundle-aware affine encoder: h_v = O_vᵀ·W·O_v·x_v + bias, with `w` a
/// (b·d·p)×(b·d·p) matrix acting on the flattened signal and the bias added
/// after desynchronization.
pub fn bunn_encode(bundle: &BundleAssignment, w: &Var, bias: &Var, x: &Var) -> Result<Var> {
    let c = x.shape().1;
    if w.shape() != (c, c) {
        return Err(Error::ShapeMismatch(format!(
            "encoder weight {:?} for signal width {c}",
            w.shape()
        )));
    }
    let synced = bundle.synchronize(x)?;
    // row convention: y_v = W·x_v ⇔ Y = X·Wᵀ
    let mixed = synced.matmul(&w.transpose())?;
    let local = bundle.desynchronize(&mixed)?;
    local.add(bias)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BunnModelConfig {
    pub in_dim: usize,
    pub pe_dim: usize,
    pub out_dim: usize,
    pub bundles: usize,
    pub dim: usize,
    pub channels: usize,
    pub layers: usize,
    /// Per-layer diffusion time; `None` is the infinite-time limit.
    pub t: Vec<Option<f64>>,
    pub activation: Activation,
    pub phi: PhiConfig,
    pub skip: SkipMode,
}

impl BunnModelConfig {
    /// Hidden width b·d·p.
    pub fn hidden(&self) -> usize {
        self.bundles * self.dim * self.channels
    }

    fn validate(&self) -> Result<()> {
        if self.dim != 2 {
            return Err(Error::InvalidParameter(
                "trained models use the d=2 angle parameterization".into(),
            ));
        }
        if self.bundles == 0 || self.channels == 0 {
            return Err(Error::InvalidParameter("zero-width hidden signal".into()));
        }
        if self.t.len() != self.layers {
            return Err(Error::InvalidParameter(format!(
                "{} diffusion times for {} layers",
                self.t.len(),
                self.layers
            )));
        }
        Ok(())
    }
}

struct BunnLayer {
    phi: Option<PhiNet>,
    w: usize,
    bias: usize,
    t: Option<f64>,
}

/// Encoder → L diffusion layers → decoder, with all parameters in one
/// [`ParamStore`].
pub struct BunnModel {
    pub config: BunnModelConfig,
    pub store: ParamStore,
    encoder: (usize, usize),
    decoder: (usize, usize),
    shared_phi: Option<PhiNet>,
    layers: Vec<BunnLayer>,
}

impl BunnModel {
    pub fn new(config: BunnModelConfig, rng: &mut ChaCha8Rng) -> Result<BunnModel> {
        config.validate()?;
        let c = config.hidden();
        let mut store = ParamStore::default();
        let encoder = (
            store.add(glorot(rng, config.in_dim, c)),
            store.add(Array2::zeros((1, c))),
        );
        let phi_in = config.pe_dim + if config.phi.use_features { c } else { 0 };
        let mut shared_phi = None;
        if config.phi.shared {
            shared_phi = Some(PhiNet::new(
                &mut store,
                rng,
                config.phi.kind,
                phi_in,
                &config.phi.hidden,
                config.bundles,
            ));
        }
        let mut layers = Vec::new();
        for l in 0..config.layers {
            let phi = if config.phi.shared {
                None
            } else {
                Some(PhiNet::new(
                    &mut store,
                    rng,
                    config.phi.kind,
                    phi_in,
                    &config.phi.hidden,
                    config.bundles,
                ))
            };
            layers.push(BunnLayer {
                phi,
                w: store.add(glorot(rng, c, c)),
                bias: store.add(Array2::zeros((1, c))),
                t: config.t[l],
            });
        }
        let decoder = (
            store.add(glorot(rng, c, config.out_dim)),
            store.add(Array2::zeros((1, config.out_dim))),
        );
        Ok(BunnModel {
            config,
            store,
            encoder,
            decoder,
            shared_phi,
            layers,
        })
    }

    /// Precomputes one diffusion operator per layer for a graph. Reused
    /// across every forward pass on that graph.
    pub fn prepare(&self, g: &Rc<Graph>) -> Result<Vec<HeatOperator>> {
        self.layers
            .iter()
            .map(|l| HeatOperator::auto(g.clone(), l.t))
            .collect()
    }

    /// Node-level output, n×out_dim. `vars` must come from
    /// `store.leaf_all` (or constants in the same order).
    pub fn forward(
        &self,
        vars: &[Var],
        g: &Rc<Graph>,
        ops: &[HeatOperator],
        pe: &Var,
        x: &Var,
    ) -> Result<Var> {
        if ops.len() != self.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} operators for {} layers",
                ops.len(),
                self.layers.len()
            )));
        }
        let mut h = x.matmul(&vars[self.encoder.0])?.add(&vars[self.encoder.1])?;
        for (layer, op) in self.layers.iter().zip(ops.iter()) {
            let phi = layer
                .phi
                .as_ref()
                .or(self.shared_phi.as_ref())
                .expect("layer without bundle-map net");
            let phi_in = if self.config.phi.use_features {
                Var::concat_cols(&[pe.clone(), h.clone()])?
            } else {
                pe.clone()
            };
            let angles = phi.forward(vars, g, &phi_in)?;
            let bundle = BundleAssignment::from_angles(&angles)?;
            let encoded = bunn_encode(&bundle, &vars[layer.w], &vars[layer.bias], &h)?;
            let z = bundle_heat_apply(&bundle, op, &encoded)?;
            h = match self.config.skip {
                SkipMode::None => self.config.activation.apply(&z),
                SkipMode::PostActivation => self.config.activation.apply(&z).add(&h)?,
                SkipMode::PreActivation => self.config.activation.apply(&z.add(&h)?),
            };
        }
        h.matmul(&vars[self.decoder.0])?.add(&vars[self.decoder.1])
    }

    /// Serializes config and parameters as JSON. Parameter values survive
    /// the round trip bit-identically (shortest-representation decimal).
    pub fn to_json(&self) -> Result<String> {
        let params: Vec<Vec<Vec<f64>>> = self
            .store
            .arrays
            .iter()
            .map(|a| a.rows().into_iter().map(|r| r.to_vec()).collect())
            .collect();
        let doc = serde_json::json!({
            "format": "bunn-model-v1",
            "config": &self.config,
            "params": params,
        });
        serde_json::to_string(&doc).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<BunnModel> {
        #[derive(Deserialize)]
        struct Doc {
            format: String,
            config: BunnModelConfig,
            params: Vec<Vec<Vec<f64>>>,
        }
        let doc: Doc = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if doc.format != "bunn-model-v1" {
            return Err(Error::Parse(format!("unknown format {:?}", doc.format)));
        }
        let mut rng = crate::rng::stream(0, "model-skeleton");
        let mut model = BunnModel::new(doc.config, &mut rng)?;
        if doc.params.len() != model.store.arrays.len() {
            return Err(Error::Parse(format!(
                "{} parameter arrays, expected {}",
                doc.params.len(),
                model.store.arrays.len()
            )));
        }
        for (slot, rows) in model.store.arrays.iter_mut().zip(doc.params.iter()) {
            let (r, c) = (slot.nrows(), slot.ncols());
            if rows.len() != r || rows.iter().any(|row| row.len() != c) {
                return Err(Error::Parse("parameter shape mismatch".into()));
            }
            for (i, row) in rows.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    slot[[i, j]] = v;
                }
            }
        }
        Ok(model)
    }
}

/// Hand-set single-bundle d=2 parameters that shrink node `v`'s receptive
/// field channel-wise: swap maps at `u` and `v`, identity elsewhere, and a
/// weight matrix `[[w11, w12], [0, 0]]`. The first output channel of `v`
/// then ignores every node, and with `w11 = 0` the layer at `v` is blind to
/// the first input channel of all nodes except `u`, whose first channel it
/// still reads with weight H(t,v,u)·w12. Returns (maps tensor n×4, weight
/// 2×2).
pub fn receptive_field_params(
    n: usize,
    u: usize,
    v: usize,
    w11: f64,
    w12: f64,
) -> (Array2<f64>, Array2<f64>) {
    let mut maps = crate::bundle::identity_maps(n, 1, 2);
    for node in [u, v] {
        maps[[node, 0]] = 0.0;
        maps[[node, 1]] = 1.0;
        maps[[node, 2]] = 1.0;
        maps[[node, 3]] = 0.0;
    }
    let w = ndarray::array![[w11, w12], [0.0, 0.0]];
    (maps, w)
}

/// Parameters reproducing arbitrary per-graph linear maps with one linear
/// diffusion layer over a finite family. Hidden width is 2·c·k for k total
/// nodes across the family.
pub struct UniversalLinearParams {
    pub c: usize,
    /// Total node count across the family.
    pub k: usize,
    pub t: f64,
    /// (2ck)×c node-wise lift applied before the layer.
    pub lift: Array2<f64>,
    /// c×(2ck) node-wise pooling applied after the layer.
    pub pool: Array2<f64>,
    /// (2ck)×(2ck) lookup weight matrix.
    pub w: Array2<f64>,
    graphs: Vec<Rc<Graph>>,
    kernels: Vec<Array2<f64>>,
    offsets: Vec<usize>,
}

impl UniversalLinearParams {
    /// `targets[i]` is the dense (n_i·c)×(n_i·c) matrix of the linear map on
    /// graph i's node-major flattened features.
    pub fn build(
        graphs: &[Rc<Graph>],
        targets: &[Array2<f64>],
        c: usize,
        t: f64,
    ) -> Result<UniversalLinearParams> {
        if graphs.len() != targets.len() || graphs.is_empty() {
            return Err(Error::InvalidParameter(
                "need one target per graph".into(),
            ));
        }
        if t <= 0.0 {
            return Err(Error::InvalidParameter(
                "finite positive time required for invertible kernel weights".into(),
            ));
        }
        let mut offsets = Vec::new();
        let mut k = 0;
        for (g, tgt) in graphs.iter().zip(targets.iter()) {
            if !g.is_connected() {
                return Err(Error::Disconnected);
            }
            let nc = g.node_count() * c;
            if tgt.nrows() != nc || tgt.ncols() != nc {
                return Err(Error::ShapeMismatch(format!(
                    "target {}x{}, expected {nc}x{nc}",
                    tgt.nrows(),
                    tgt.ncols()
                )));
            }
            offsets.push(k);
            k += g.node_count();
        }
        let m = 2 * c * k;

        let mut lift = Array2::zeros((m, c));
        let mut pool = Array2::zeros((c, m));
        for slot in 0..k {
            for j in 0..c {
                lift[[slot * 2 * c + j, j]] = 1.0;
                pool[[j, slot * 2 * c + j]] = 1.0;
            }
        }

        let mut w = Array2::zeros((m, m));
        let mut kernels = Vec::new();
        for (gi, (g, tgt)) in graphs.iter().zip(targets.iter()).enumerate() {
            let kernel = heat_kernel_dense(g, t)?;
            let o = offsets[gi];
            for u in 0..g.node_count() {
                for v in 0..g.node_count() {
                    let h = kernel[[u, v]];
                    for i in 0..c {
                        for j in 0..c {
                            // second-half rows/cols of the (slot u, slot v)
                            // block carry the target Jacobian over 1/H
                            w[[(o + u) * 2 * c + c + i, (o + v) * 2 * c + c + j]] =
                                tgt[[u * c + i, v * c + j]] / h;
                        }
                    }
                }
            }
            kernels.push(kernel);
        }

        Ok(UniversalLinearParams {
            c,
            k,
            t,
            lift,
            pool,
            w,
            graphs: graphs.to_vec(),
            kernels,
            offsets,
        })
    }

    /// Node `slot`'s bundle map: identity except the own 2c-block, which
    /// swaps the two c-halves.
    fn node_map(&self, slot: usize) -> Array2<f64> {
        let m = 2 * self.c * self.k;
        let mut o = Array2::eye(m);
        let base = slot * 2 * self.c;
        for j in 0..self.c {
            o[[base + j, base + j]] = 0.0;
            o[[base + self.c + j, base + self.c + j]] = 0.0;
            o[[base + j, base + self.c + j]] = 1.0;
            o[[base + self.c + j, base + j]] = 1.0;
        }
        o
    }

    /// Evaluates pool ∘ diffused layer ∘ lift on graph `graph_index` with
    /// node features `x` (n×c), via the kernel double sum.
    pub fn apply(&self, graph_index: usize, x: &Array2<f64>) -> Result<Array2<f64>> {
        let g = self
            .graphs
            .get(graph_index)
            .ok_or_else(|| Error::InvalidParameter("graph index out of range".into()))?;
        let n = g.node_count();
        if x.nrows() != n || x.ncols() != self.c {
            return Err(Error::ShapeMismatch(format!(
                "features {}x{}, expected {n}x{}",
                x.nrows(),
                x.ncols(),
                self.c
            )));
        }
        let kernel = &self.kernels[graph_index];
        let o = self.offsets[graph_index];
        // z_v = W·O_v·lift·x_v
        let z: Vec<ndarray::Array1<f64>> = (0..n)
            .map(|v| {
                let lifted = self.lift.dot(&x.row(v));
                self.w.dot(&self.node_map(o + v).dot(&lifted))
            })
            .collect();
        let mut out = Array2::zeros((n, self.c));
        for u in 0..n {
            let m = 2 * self.c * self.k;
            let mut r = ndarray::Array1::zeros(m);
            for (v, zv) in z.iter().enumerate() {
                r.scaled_add(kernel[[u, v]], zv);
            }
            let y = self.pool.dot(&self.node_map(o + u).t().dot(&r));
            out.row_mut(u).assign(&y);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests;
