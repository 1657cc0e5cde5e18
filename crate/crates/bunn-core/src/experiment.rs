//! Experiment orchestration: builds tasks and models from a resolved
//! configuration, runs (model × seed) training jobs — optionally across
//! threads — and emits deterministic CSV/JSON artifacts. Also hosts the
//! invariant-check suite and the kernel dump helper.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineConfig, BaselineKind, BaselineModel};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{
    Activation, BunnModel, BunnModelConfig, PhiConfig, PhiKind, SkipMode,
};
use crate::rng;
use crate::synthetic::{
    averaging_dataset, neighborsmatch_dataset, AveragingTask, NeighborsMatchTask,
};
use crate::train::{evaluate, train, AnyModel, Dataset, LossKind, TrainConfig};

/// Reference (train-free) predictor names accepted as models.
pub const REFERENCE_CONSTANT_ZERO: &str = "baseline-constant-0";
pub const REFERENCE_OPPOSITE_MEAN: &str = "baseline-opposite-mean";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum TaskSpec {
    Averaging(AveragingTask),
    NeighborsMatch(NeighborsMatchTask),
}

impl TaskSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::Averaging(t) => match t.kind {
                crate::synthetic::AveragingKind::Barbell => "barbell",
                crate::synthetic::AveragingKind::Clique => "clique",
            },
            TaskSpec::NeighborsMatch(_) => "neighborsmatch",
        }
    }

    pub fn loss(&self) -> LossKind {
        match self {
            TaskSpec::Averaging(_) => LossKind::Mse,
            TaskSpec::NeighborsMatch(_) => LossKind::CrossEntropy,
        }
    }

    /// Per-task default depth: 3 on the barbell, 1 on the clique, 2 on the
    /// tree task.
    pub fn default_layers(&self) -> usize {
        match self {
            TaskSpec::Averaging(t) => match t.kind {
                crate::synthetic::AveragingKind::Barbell => 3,
                crate::synthetic::AveragingKind::Clique => 1,
            },
            TaskSpec::NeighborsMatch(_) => 2,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub models: Vec<String>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub lr: f64,
    /// Diffusion time for BuNN layers; `None` is the infinite-time limit.
    pub t: Option<f64>,
    pub bundles: usize,
    pub channels: usize,
    /// Depth override; defaults per task when `None`.
    pub layers: Option<usize>,
    /// Baseline hidden width.
    pub hidden: usize,
    pub threads: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidParameter(
                "need at least one model and one seed".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be ≥ 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::InvalidParameter("threads must be ≥ 1".into()));
        }
        if self.bundles == 0 || self.channels == 0 {
            return Err(Error::InvalidParameter(
                "bundles and channels must be ≥ 1".into(),
            ));
        }
        if let Some(t) = self.t {
            if !(t >= 0.0) {
                return Err(Error::InvalidParameter(format!("bad time {t}")));
            }
        }
        for m in &self.models {
            parse_model_name(m)?;
        }
        Ok(())
    }
}

enum ModelSpec {
    Baseline(BaselineKind),
    Bunn,
    ReferenceZero,
    ReferenceOppositeMean,
}

fn parse_model_name(name: &str) -> Result<ModelSpec> {
    Ok(match name {
        "mlp" => ModelSpec::Baseline(BaselineKind::Mlp),
        "gcn" => ModelSpec::Baseline(BaselineKind::Gcn),
        "sage" => ModelSpec::Baseline(BaselineKind::Sage),
        "gat" => ModelSpec::Baseline(BaselineKind::Gat),
        "bunn" => ModelSpec::Bunn,
        REFERENCE_CONSTANT_ZERO => ModelSpec::ReferenceZero,
        REFERENCE_OPPOSITE_MEAN => ModelSpec::ReferenceOppositeMean,
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown model {other:?}"
            )))
        }
    })
}

fn task_dims(cfg: &ExperimentConfig, data: &Dataset) -> (usize, usize) {
    match &cfg.task {
        TaskSpec::Averaging(t) => (t.dims, t.dims),
        TaskSpec::NeighborsMatch(_) => {
            let w = data.train[0].x.ncols();
            (w, w - 1)
        }
    }
}

fn build_model(cfg: &ExperimentConfig, data: &Dataset, name: &str, seed: u64) -> Result<AnyModel> {
    let (in_dim, out_dim) = task_dims(cfg, data);
    let layers = cfg.layers.unwrap_or_else(|| cfg.task.default_layers());
    let mut r = rng::stream(seed, name);
    match parse_model_name(name)? {
        // Baseline input width includes the positional encoding (one-hot,
        // width n) prepended to the features by the training interface.
        ModelSpec::Baseline(kind) => Ok(AnyModel::Baseline(BaselineModel::new(
            BaselineConfig {
                kind,
                in_dim: data.graph.node_count() + in_dim,
                hidden: cfg.hidden,
                out_dim,
                layers,
            },
            &mut r,
        )?)),
        ModelSpec::Bunn => {
            let n = data.graph.node_count();
            let config = BunnModelConfig {
                in_dim,
                pe_dim: n,
                out_dim,
                bundles: cfg.bundles,
                dim: 2,
                channels: cfg.channels,
                layers,
                t: vec![cfg.t; layers],
                activation: Activation::Relu,
                phi: PhiConfig {
                    kind: PhiKind::Mlp,
                    hidden: vec![64],
                    shared: false,
                    use_features: false,
                },
                skip: SkipMode::PostActivation,
            };
            Ok(AnyModel::Bunn(BunnModel::new(config, &mut r)?))
        }
        ModelSpec::ReferenceZero | ModelSpec::ReferenceOppositeMean => Err(
            Error::InvalidParameter("reference predictors have no trainable model".into()),
        ),
    }
}

/// One (model, seed) outcome. Metrics are MSE for the averaging tasks and
/// accuracy for neighbors-match.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: String,
    pub seed: u64,
    pub final_train_loss: f64,
    pub train_metric: f64,
    pub test_metric: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelAggregate {
    pub model: String,
    pub mean_test_metric: f64,
    pub std_test_metric: f64,
    pub mean_train_metric: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub task: String,
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<ModelAggregate>,
    pub runtime_seconds: f64,
}

fn reference_metrics(
    task: &TaskSpec,
    data: &crate::synthetic::AveragingData,
    name: &str,
) -> Result<(f64, f64)> {
    let _ = task;
    let (train_m, test_m) = match name {
        REFERENCE_CONSTANT_ZERO => (
            crate::synthetic::constant_zero_reference_mse(&data.dataset.train),
            crate::synthetic::constant_zero_reference_mse(&data.dataset.test),
        ),
        REFERENCE_OPPOSITE_MEAN => (
            crate::synthetic::opposite_mean_reference_mse(data, &data.dataset.train),
            crate::synthetic::opposite_mean_reference_mse(data, &data.dataset.test),
        ),
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown reference predictor {other:?}"
            )))
        }
    };
    Ok((train_m, test_m))
}

fn run_single(cfg: &ExperimentConfig, model_name: &str, seed: u64) -> Result<RunRecord> {
    // per-seed data so seeds differ in both sampling and initialization
    let avg = match &cfg.task {
        TaskSpec::Averaging(t) => {
            let mut t = t.clone();
            t.seed = t.seed.wrapping_add(seed);
            averaging_dataset(&t)?
        }
        TaskSpec::NeighborsMatch(t) => {
            let mut t = t.clone();
            t.seed = t.seed.wrapping_add(seed);
            let nm = neighborsmatch_dataset(&t)?;
            return run_single_nm(cfg, model_name, seed, nm.dataset);
        }
    };
    let data = &avg.dataset;
    if matches!(
        model_name,
        REFERENCE_CONSTANT_ZERO | REFERENCE_OPPOSITE_MEAN
    ) {
        let (train_m, test_m) = reference_metrics(&cfg.task, &avg, model_name)?;
        return Ok(RunRecord {
            model: model_name.to_string(),
            seed,
            final_train_loss: train_m,
            train_metric: train_m,
            test_metric: test_m,
        });
    }
    let mut model = build_model(cfg, data, model_name, seed)?;
    let tc = TrainConfig {
        epochs: cfg.epochs,
        batch_size: 1,
        seed,
        lr: cfg.lr,
        loss: cfg.task.loss(),
        eval_every: 0,
    };
    let hist = train(&mut model, data, &tc)?;
    let train_metric = evaluate(&model, data, &data.train, tc.loss)?;
    let test_metric = evaluate(&model, data, &data.test, tc.loss)?;
    Ok(RunRecord {
        model: model_name.to_string(),
        seed,
        final_train_loss: *hist.train_loss.last().unwrap(),
        train_metric,
        test_metric,
    })
}

fn run_single_nm(
    cfg: &ExperimentConfig,
    model_name: &str,
    seed: u64,
    data: Dataset,
) -> Result<RunRecord> {
    if matches!(
        model_name,
        REFERENCE_CONSTANT_ZERO | REFERENCE_OPPOSITE_MEAN
    ) {
        return Err(Error::InvalidParameter(
            "reference predictors only apply to the averaging tasks".into(),
        ));
    }
    let mut model = build_model(cfg, &data, model_name, seed)?;
    let tc = TrainConfig {
        epochs: cfg.epochs,
        batch_size: 1,
        seed,
        lr: cfg.lr,
        loss: LossKind::CrossEntropy,
        eval_every: 0,
    };
    let hist = train(&mut model, &data, &tc)?;
    let train_metric = evaluate(&model, &data, &data.train, tc.loss)?;
    let test_metric = evaluate(&model, &data, &data.test, tc.loss)?;
    Ok(RunRecord {
        model: model_name.to_string(),
        seed,
        final_train_loss: *hist.train_loss.last().unwrap(),
        train_metric,
        test_metric,
    })
}

/// Runs every (model, seed) job, optionally across threads. Results are
/// sorted by (model, seed) before aggregation, so thread count never
/// changes the output.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let start = Instant::now();
    let jobs: Vec<(String, u64)> = cfg
        .models
        .iter()
        .flat_map(|m| cfg.seeds.iter().map(move |&s| (m.clone(), s)))
        .collect();
    let mut records: Vec<RunRecord> = if cfg.threads <= 1 || jobs.len() <= 1 {
        jobs.iter()
            .map(|(m, s)| run_single(cfg, m, *s))
            .collect::<Result<_>>()?
    } else {
        let queue = Mutex::new(jobs.clone().into_iter());
        let outputs: Mutex<Vec<Result<RunRecord>>> = Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for _ in 0..cfg.threads.min(jobs.len()) {
                scope.spawn(|| loop {
                    let job = queue.lock().unwrap().next();
                    let Some((m, s)) = job else { break };
                    let out = run_single(cfg, &m, s);
                    outputs.lock().unwrap().push(out);
                });
            }
        });
        outputs
            .into_inner()
            .unwrap()
            .into_iter()
            .collect::<Result<_>>()?
    };
    records.sort_by(|a, b| a.model.cmp(&b.model).then(a.seed.cmp(&b.seed)));

    let mut by_model: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for r in &records {
        by_model.entry(r.model.clone()).or_default().push(r);
    }
    let aggregates = by_model
        .into_iter()
        .map(|(model, rs)| {
            let k = rs.len() as f64;
            let mean = rs.iter().map(|r| r.test_metric).sum::<f64>() / k;
            let var = rs
                .iter()
                .map(|r| (r.test_metric - mean).powi(2))
                .sum::<f64>()
                / k;
            let mean_train = rs.iter().map(|r| r.train_metric).sum::<f64>() / k;
            ModelAggregate {
                model,
                mean_test_metric: mean,
                std_test_metric: var.sqrt(),
                mean_train_metric: mean_train,
            }
        })
        .collect();
    Ok(ExperimentResult {
        task: cfg.task.name().to_string(),
        records,
        aggregates,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Run-level CSV; byte-deterministic for a given result set (exact decimal
/// shortest representations, fixed ordering, no timing columns).
pub fn results_csv(result: &ExperimentResult) -> String {
    let mut s = String::from("task,model,seed,final_train_loss,train_metric,test_metric\n");
    for r in &result.records {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            result.task, r.model, r.seed, r.final_train_loss, r.train_metric, r.test_metric
        ));
    }
    s
}

/// Aggregate summary as JSON (includes wall-clock runtime; not meant to be
/// byte-stable across runs).
pub fn summary_json(result: &ExperimentResult) -> Result<String> {
    serde_json::to_string_pretty(result).map_err(|e| Error::Serialize(e.to_string()))
}

/// The exact settings of a run as `key=value` lines.
pub fn config_resolved(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    s.push_str(&format!("task={}\n", cfg.task.name()));
    match &cfg.task {
        TaskSpec::Averaging(t) => {
            s.push_str(&format!(
                "n={}\ndims={}\ntrain_samples={}\ntest_samples={}\ntask_seed={}\nhalf_width={}\n",
                t.n, t.dims, t.train_samples, t.test_samples, t.seed, t.half_width
            ));
        }
        TaskSpec::NeighborsMatch(t) => {
            s.push_str(&format!(
                "depth={}\ntrain_samples={}\ntest_samples={}\ntask_seed={}\n",
                t.depth, t.train_samples, t.test_samples, t.seed
            ));
        }
    }
    s.push_str(&format!("models={}\n", cfg.models.join(",")));
    s.push_str(&format!(
        "seeds={}\n",
        cfg.seeds
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    ));
    s.push_str(&format!("epochs={}\n", cfg.epochs));
    s.push_str(&format!("lr={}\n", cfg.lr));
    s.push_str(&format!(
        "t={}\n",
        cfg.t.map_or("inf".to_string(), |v| v.to_string())
    ));
    s.push_str(&format!("bundles={}\n", cfg.bundles));
    s.push_str(&format!("channels={}\n", cfg.channels));
    s.push_str(&format!(
        "layers={}\n",
        cfg.layers.unwrap_or_else(|| cfg.task.default_layers())
    ));
    s.push_str(&format!("hidden={}\n", cfg.hidden));
    s.push_str(&format!("threads={}\n", cfg.threads));
    s
}

/// Dense heat-kernel CSV for a graph, with selectable evaluation mode.
pub fn dump_kernel(g: &Graph, t: Option<f64>, mode: &str) -> Result<String> {
    let n = g.node_count();
    let kernel: Array2<f64> = match (t, mode) {
        (None, _) | (_, "limit") => {
            if !g.is_connected() {
                return Err(Error::Disconnected);
            }
            let total = 2.0 * g.edge_count() as f64;
            Array2::from_shape_fn((n, n), |(_, u)| g.degree(u) as f64 / total)
        }
        (Some(t), "spectral") => crate::heat::heat_kernel_dense(g, t)?,
        (Some(t), "taylor") => {
            let tape = crate::tensor::Tape::new();
            let x = tape.constant(Array2::eye(n));
            let graph = std::rc::Rc::new(g.clone());
            // dump wants a converged kernel, not a fixed-budget layer: use
            // enough terms for the series to reach round-off at small t
            let y = crate::heat::heat_apply_taylor(&graph, t, 32, &x)?;
            y.value()
        }
        (Some(_), other) => {
            return Err(Error::InvalidParameter(format!(
                "unknown kernel mode {other:?}"
            )))
        }
    };
    let mut s = String::new();
    for r in 0..n {
        let row: Vec<String> = (0..n).map(|c| kernel[[r, c]].to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    Ok(s)
}

/// One invariant-check outcome.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub id: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Fault injection for negative-control testing of the check suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CheckFault {
    #[default]
    None,
    /// Zero out a Householder reflection vector before orthogonalization.
    DegenerateHouseholder,
}

/// Runs the cross-module property suite. `tolerance_scale` multiplies every
/// threshold (values < 1 tighten the checks).
pub fn check_invariants(tolerance_scale: f64, fault: CheckFault) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let tol = |base: f64| base * tolerance_scale;

    out.push(check_orthogonality(tol(1e-10), fault));
    out.push(check_kernel_modes(tol(1e-6), tol(1e-7)));
    out.push(check_bundle_factorization(tol(1e-7)));
    out.push(check_linear_jacobian(tol(1e-7)));
    out.push(check_consensus(tol(1e-8)));
    out.push(check_universality(tol(1e-6)));
    out
}

fn random_array(r: usize, c: usize, seed: u64) -> Array2<f64> {
    let mut g = rng::stream(seed, "check");
    Array2::from_shape_fn((r, c), |_| g.gen_range(-1.0..1.0))
}

fn random_connected_graph(n: usize, seed: u64) -> std::rc::Rc<Graph> {
    let mut g = rng::stream(seed, "check-graph");
    let mut edges: Vec<(usize, usize)> = (0..n).map(|v| (v, (v + 1) % n)).collect();
    for u in 0..n {
        for v in u + 2..n {
            if g.gen_bool(0.3) && !(u == 0 && v == n - 1) {
                edges.push((u, v));
            }
        }
    }
    std::rc::Rc::new(Graph::build(n, &edges).unwrap())
}

fn check_orthogonality(tol: f64, fault: CheckFault) -> CheckOutcome {
    let id = "householder-orthogonality";
    let run = || -> Result<f64> {
        let tape = crate::tensor::Tape::new();
        let (n, b, k, d) = (5, 2, 2, 3);
        let mut vecs = random_array(n, b * k * d, 7);
        if fault == CheckFault::DegenerateHouseholder {
            for j in 0..d {
                vecs[[2, j]] = 0.0;
            }
        }
        let v = tape.constant(vecs);
        let bundle = crate::bundle::BundleAssignment::from_householder(&v, b, k, d)?;
        Ok(bundle.orthogonality_defect())
    };
    match run() {
        Ok(defect) if defect < tol => CheckOutcome {
            id,
            pass: true,
            detail: format!("max defect {defect:.3e} < {tol:.1e}"),
        },
        Ok(defect) => CheckOutcome {
            id,
            pass: false,
            detail: format!("max defect {defect:.3e} ≥ {tol:.1e}"),
        },
        Err(e) => CheckOutcome {
            id,
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

fn check_kernel_modes(taylor_tol: f64, spectral_tol: f64) -> CheckOutcome {
    let id = "kernel-mode-agreement";
    let run = || -> Result<(f64, f64)> {
        let tape = crate::tensor::Tape::new();
        let g = random_connected_graph(12, 8);
        let x = tape.constant(random_array(12, 3, 9));
        // t small enough that the degree-8 remainder (2t)⁹/9! sits below
        // the tolerance for any graph (spectral radius of 𝓛 ≤ 2)
        let taylor = crate::heat::heat_apply_taylor(&g, 0.25, 8, &x)?.value();
        let basis = crate::heat::SpectralBasis::new(&g)?;
        let spectral = crate::heat::heat_apply_spectral(&basis, 0.25, &x)?.value();
        let d1 = taylor
            .iter()
            .zip(spectral.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        // dense oracle at t = 10
        let lap = {
            let n = g.node_count();
            let mut m = Array2::zeros((n, n));
            for v in 0..n {
                m[[v, v]] = 1.0;
                for &u in g.neighbors(v) {
                    m[[v, u]] -= 1.0 / g.degree(v) as f64;
                }
            }
            m
        };
        let dense = crate::linalg::dense_matrix_exp(&(lap * -10.0));
        let spec10 = basis.propagator(10.0)?;
        let d2 = dense
            .iter()
            .zip(spec10.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Ok((d1, d2))
    };
    match run() {
        Ok((d1, d2)) if d1 < taylor_tol && d2 < spectral_tol => CheckOutcome {
            id,
            pass: true,
            detail: format!("taylor-vs-spectral {d1:.3e}, spectral-vs-dense {d2:.3e}"),
        },
        Ok((d1, d2)) => CheckOutcome {
            id,
            pass: false,
            detail: format!("taylor-vs-spectral {d1:.3e}, spectral-vs-dense {d2:.3e}"),
        },
        Err(e) => CheckOutcome {
            id,
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

fn check_bundle_factorization(tol: f64) -> CheckOutcome {
    let id = "bundle-kernel-factorization";
    let run = || -> Result<f64> {
        let mut worst = 0.0f64;
        for seed in 0..5 {
            let g = random_connected_graph(7, 100 + seed);
            let tape = crate::tensor::Tape::new();
            let theta = tape.constant(random_array(7, 2, 200 + seed));
            let bundle = crate::bundle::BundleAssignment::from_angles(&theta)?;
            let x = tape.constant(random_array(7, 2 * 2 * 1, 300 + seed));
            let op = crate::heat::HeatOperator::spectral(g.clone(), 1.3)?;
            let fast = crate::heat::bundle_heat_apply(&bundle, &op, &x)?.value();
            let oracle = crate::heat::bundle_heat_oracle(&g, &bundle, 1.3, &x.value())?;
            let d = fast
                .iter()
                .zip(oracle.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(d);
        }
        Ok(worst)
    };
    finish(id, run(), tol)
}

fn check_linear_jacobian(tol: f64) -> CheckOutcome {
    let id = "linear-layer-jacobian";
    let run = || -> Result<f64> {
        let n = 6;
        let g = random_connected_graph(n, 11);
        let t = 1.0;
        let kernel = crate::heat::heat_kernel_dense(&g, t)?;
        let theta0 = random_array(n, 1, 12);
        let w0 = random_array(2, 2, 13);
        let x0 = random_array(n, 2, 14);
        let mut worst = 0.0f64;
        for u in 0..n {
            for ch in 0..2 {
                let tape = crate::tensor::Tape::new();
                let theta = tape.constant(theta0.clone());
                let bundle = crate::bundle::BundleAssignment::from_angles(&theta)?;
                let x = tape.leaf(x0.clone());
                let w = tape.constant(w0.clone());
                let b = tape.constant(Array2::zeros((1, 2)));
                let enc = crate::model::bunn_encode(&bundle, &w, &b, &x)?;
                let op = crate::heat::HeatOperator::spectral(g.clone(), t)?;
                let y = crate::heat::bundle_heat_apply(&bundle, &op, &enc)?;
                let scalar = y.row_gather(&[u])?.select_cols(ch, ch + 1)?;
                let grads = tape.backward(&scalar)?;
                let gx = grads.get(&x);
                let maps = bundle.maps.value();
                let block = |v: usize, r: usize, c: usize| maps[[v, r * 2 + c]];
                for v in 0..n {
                    for j in 0..2 {
                        let mut formula = 0.0;
                        for a in 0..2 {
                            for bq in 0..2 {
                                formula += block(u, a, ch) * w0[[a, bq]] * block(v, bq, j);
                            }
                        }
                        formula *= kernel[[u, v]];
                        worst = worst.max((gx[[v, j]] - formula).abs());
                    }
                }
            }
        }
        Ok(worst)
    };
    finish(id, run(), tol)
}

fn check_consensus(tol: f64) -> CheckOutcome {
    let id = "infinite-time-consensus";
    let run = || -> Result<f64> {
        let g = random_connected_graph(8, 15);
        let tape = crate::tensor::Tape::new();
        let theta = tape.constant(random_array(8, 2, 16));
        let bundle = crate::bundle::BundleAssignment::from_angles(&theta)?;
        let x = tape.constant(random_array(8, 4, 17));
        let w = tape.constant(random_array(4, 4, 18));
        let b = tape.constant(random_array(1, 4, 19));
        let enc = crate::model::bunn_encode(&bundle, &w, &b, &x)?;
        let op = crate::heat::HeatOperator::limit(g.clone())?;
        let y = crate::heat::bundle_heat_apply(&bundle, &op, &enc)?;
        let synced = bundle.synchronize(&y)?.value();
        let mut worst = 0.0f64;
        for v in 1..8 {
            for j in 0..4 {
                worst = worst.max((synced[[v, j]] - synced[[0, j]]).abs());
            }
        }
        Ok(worst)
    };
    finish(id, run(), tol)
}

fn check_universality(tol: f64) -> CheckOutcome {
    let id = "universality-construction";
    let run = || -> Result<f64> {
        let p2 = std::rc::Rc::new(Graph::build(2, &[(0, 1)])?);
        let p3 = std::rc::Rc::new(Graph::build(3, &[(0, 1), (1, 2)])?);
        let tri = std::rc::Rc::new(Graph::build(3, &[(0, 1), (1, 2), (0, 2)])?);
        let c = 2;
        let targets = vec![
            random_array(2 * c, 2 * c, 20),
            random_array(3 * c, 3 * c, 21),
            random_array(3 * c, 3 * c, 22),
        ];
        let params = crate::model::UniversalLinearParams::build(
            &[p2, p3, tri],
            &targets,
            c,
            1.0,
        )?;
        let mut worst = 0.0f64;
        for (gi, n) in [(0usize, 2usize), (1, 3), (2, 3)] {
            for s in 0..20u64 {
                let x = random_array(n, c, 500 + 37 * gi as u64 + s);
                let y = params.apply(gi, &x)?;
                let flat: Vec<f64> = x.iter().cloned().collect();
                let expect = targets[gi].dot(&ndarray::Array1::from_vec(flat));
                for u in 0..n {
                    for j in 0..c {
                        worst = worst.max((y[[u, j]] - expect[u * c + j]).abs());
                    }
                }
            }
        }
        Ok(worst)
    };
    finish(id, run(), tol)
}

fn finish(id: &'static str, run: Result<f64>, tol: f64) -> CheckOutcome {
    match run {
        Ok(v) if v < tol => CheckOutcome {
            id,
            pass: true,
            detail: format!("max deviation {v:.3e} < {tol:.1e}"),
        },
        Ok(v) => CheckOutcome {
            id,
            pass: false,
            detail: format!("max deviation {v:.3e} ≥ {tol:.1e}"),
        },
        Err(e) => CheckOutcome {
            id,
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}
