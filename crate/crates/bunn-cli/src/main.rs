//! `bunn` — command-line driver for bundle-diffusion experiments.
//!
//! Subcommands: `synthetic` (cluster-averaging on barbell/clique graphs),
//! `neighborsmatch` (bottleneck task on binary trees), `check` (invariant
//! suite), `kernel` (heat-kernel dump), `gen-graph` (edge-list generator).
//!
//! Exit codes: 0 ok, 2 configuration/parse error, 3 training divergence,
//! 4 invariant-check failure.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use bunn_core::experiment::{
    check_invariants, config_resolved, dump_kernel, results_csv, run_experiment, summary_json,
    CheckFault, ExperimentConfig, TaskSpec, REFERENCE_CONSTANT_ZERO, REFERENCE_OPPOSITE_MEAN,
};
use bunn_core::graph::{barbell_graph, binary_tree, clique_graph};
use bunn_core::synthetic::{
    default_dims, default_half_width, AveragingKind, AveragingTask, NeighborsMatchTask,
};
use bunn_core::{Error, Graph};

#[derive(Parser)]
#[command(name = "bunn", version, about = "Bundle diffusion experiments")]
struct Cli {
    /// Base RNG seed (first of the seed range).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for experiment runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the cluster-averaging experiment on a barbell or clique graph.
    Synthetic(ExpArgs),
    /// Run the neighbors-match experiment on a binary tree.
    Neighborsmatch(ExpArgs),
    /// Run the invariant-check suite and print a per-check table.
    Check(CheckArgs),
    /// Dump a heat-kernel matrix for a graph file as CSV.
    Kernel(KernelArgs),
    /// Generate a graph and print/write its edge list.
    GenGraph(GenGraphArgs),
}

#[derive(Args)]
struct ExpArgs {
    /// key=value config file; command-line flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Averaging graph family: barbell or clique (synthetic only).
    #[arg(long)]
    task: Option<String>,
    /// Model to run (repeatable): bunn, gcn, sage, gat, mlp,
    /// baseline-constant-0, baseline-opposite-mean.
    #[arg(long = "model")]
    models: Vec<String>,
    /// Total node count for the averaging graphs.
    #[arg(long)]
    n: Option<usize>,
    /// Feature dimensionality for the averaging tasks.
    #[arg(long)]
    dims: Option<usize>,
    /// Tree depth for neighbors-match.
    #[arg(long)]
    depth: Option<usize>,
    /// Diffusion time for BuNN layers: a number or "inf".
    #[arg(long)]
    t: Option<String>,
    #[arg(long)]
    bundles: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    /// Depth override; defaults per task when omitted.
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Number of consecutive seeds to run starting at --seed.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long = "train-samples")]
    train_samples: Option<usize>,
    #[arg(long = "test-samples")]
    test_samples: Option<usize>,
    /// Output directory for results.csv / summary.json / config.resolved.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Multiplies every check tolerance (values < 1 tighten the checks).
    #[arg(long, default_value_t = 1.0)]
    tolerance_scale: f64,
    /// Test-mode fault injection; recognised value: degenerate-householder.
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Args)]
struct KernelArgs {
    /// Edge-list graph file ("n <count>" header then "u v" lines).
    #[arg(long)]
    graph: PathBuf,
    /// Diffusion time: a number ≥ 0 or "inf".
    #[arg(long)]
    t: String,
    /// Kernel evaluation mode: taylor, spectral, or limit.
    #[arg(long, default_value = "spectral")]
    mode: String,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenGraphArgs {
    /// Graph family: barbell, clique, tree, or path.
    #[arg(long)]
    kind: String,
    /// Node count (barbell, clique, path).
    #[arg(long)]
    n: Option<usize>,
    /// Depth (tree).
    #[arg(long)]
    depth: Option<usize>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Flat key=value settings loaded from --config; '#' starts a comment.
struct FileConfig(HashMap<String, String>);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig, String> {
        let mut map = HashMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            for (i, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let Some((k, v)) = line.split_once('=') else {
                    return Err(format!(
                        "config line {} is not key=value: {raw:?}",
                        i + 1
                    ));
                };
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(FileConfig(map))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, String> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| format!("config key {key}: cannot parse {v:?}")),
        }
    }
}

fn parse_time(s: &str) -> Result<Option<f64>, String> {
    match s {
        "inf" | "infinity" | "∞" => Ok(None),
        _ => {
            let t: f64 = s
                .parse()
                .map_err(|_| format!("bad diffusion time {s:?}"))?;
            if t < 0.0 {
                return Err(format!("diffusion time must be ≥ 0, got {t}"));
            }
            Ok(Some(t))
        }
    }
}

struct Merged {
    config: ExperimentConfig,
    out: PathBuf,
}

/// Resolution order for every setting: command-line flag, then config-file
/// entry, then the built-in default.
fn merge_experiment(
    cli: &Cli,
    args: &ExpArgs,
    neighborsmatch: bool,
) -> Result<Merged, String> {
    let file = FileConfig::load(args.config.as_deref())?;
    macro_rules! pick {
        ($flag:expr, $key:literal, $default:expr) => {
            match $flag {
                Some(v) => v,
                None => file.get($key)?.unwrap_or($default),
            }
        };
    }

    let seed = pick!(cli.seed, "seed", 0u64);
    let seed_count = pick!(args.seeds, "seeds", 5usize);
    if seed_count == 0 {
        return Err("need at least one seed".into());
    }
    let seeds: Vec<u64> = (0..seed_count as u64).map(|i| seed + i).collect();
    let epochs = pick!(args.epochs, "epochs", 500usize);
    let lr = pick!(args.lr, "lr", 1e-3);
    let train_samples = pick!(args.train_samples, "train-samples", 100usize);
    let test_samples = pick!(args.test_samples, "test-samples", 100usize);

    let t_text = match &args.t {
        Some(v) => v.clone(),
        None => file
            .get::<String>("t")?
            .unwrap_or_else(|| if neighborsmatch { "inf" } else { "10" }.to_string()),
    };
    let t = parse_time(&t_text)?;

    let task = if neighborsmatch {
        let depth = pick!(args.depth, "depth", 3usize);
        TaskSpec::NeighborsMatch(NeighborsMatchTask {
            depth,
            train_samples,
            test_samples,
            seed,
        })
    } else {
        let name = match &args.task {
            Some(v) => v.clone(),
            None => file
                .get::<String>("task")?
                .unwrap_or_else(|| "barbell".to_string()),
        };
        let kind = match name.as_str() {
            "barbell" => AveragingKind::Barbell,
            "clique" => AveragingKind::Clique,
            other => return Err(format!("unknown averaging task {other:?}")),
        };
        TaskSpec::Averaging(AveragingTask {
            kind,
            n: pick!(args.n, "n", 10usize),
            dims: pick!(args.dims, "dims", default_dims()),
            train_samples,
            test_samples,
            seed,
            half_width: default_half_width(),
        })
    };

    let models = if !args.models.is_empty() {
        args.models.clone()
    } else if let Some(list) = file.get::<String>("models")? {
        list.split(',').map(|s| s.trim().to_string()).collect()
    } else if neighborsmatch {
        vec!["bunn".into(), "gcn".into()]
    } else {
        vec![
            "bunn".into(),
            "gcn".into(),
            "sage".into(),
            "gat".into(),
            "mlp".into(),
            REFERENCE_CONSTANT_ZERO.into(),
            REFERENCE_OPPOSITE_MEAN.into(),
        ]
    };

    let layers = match args.layers {
        Some(v) => Some(v),
        None => file.get("layers")?,
    };

    let config = ExperimentConfig {
        task,
        models,
        seeds,
        epochs,
        lr,
        t,
        bundles: pick!(args.bundles, "bundles", 32usize),
        channels: pick!(args.channels, "channels", 2usize),
        layers,
        hidden: pick!(args.hidden, "hidden", 128usize),
        threads: pick!(cli.threads, "threads", 1usize),
    };
    config.validate().map_err(|e| e.to_string())?;

    let out = match &args.out {
        Some(p) => p.clone(),
        None => file
            .get::<PathBuf>("out")?
            .unwrap_or_else(|| PathBuf::from("results").join(config.task.name())),
    };
    Ok(Merged { config, out })
}

fn run_experiment_cmd(cli: &Cli, args: &ExpArgs, neighborsmatch: bool) -> Result<(), ExitCode> {
    let merged = merge_experiment(cli, args, neighborsmatch).map_err(|msg| {
        eprintln!("config error: {msg}");
        ExitCode::from(2)
    })?;
    let result = run_experiment(&merged.config).map_err(|e| match e {
        Error::Diverged { .. } => {
            eprintln!("{e}");
            ExitCode::from(3)
        }
        other => {
            eprintln!("config error: {other}");
            ExitCode::from(2)
        }
    })?;
    let summary = summary_json(&result).map_err(|e| {
        eprintln!("{e}");
        ExitCode::from(2)
    })?;

    let dir = &merged.out;
    let write = |name: &str, contents: &str| -> Result<(), ExitCode> {
        std::fs::write(dir.join(name), contents).map_err(|e| {
            eprintln!("cannot write {}: {e}", dir.join(name).display());
            ExitCode::from(2)
        })
    };
    std::fs::create_dir_all(dir).map_err(|e| {
        eprintln!("cannot create {}: {e}", dir.display());
        ExitCode::from(2)
    })?;
    write("results.csv", &results_csv(&result))?;
    write("summary.json", &summary)?;
    write("config.resolved", &config_resolved(&merged.config))?;

    println!("task: {}", result.task);
    for agg in &result.aggregates {
        println!(
            "  {:<24} test metric {:.4} ± {:.4}",
            agg.model, agg.mean_test_metric, agg.std_test_metric
        );
    }
    println!(
        "wrote results.csv, summary.json, config.resolved to {} ({:.1}s)",
        dir.display(),
        result.runtime_seconds
    );
    Ok(())
}

fn run_check(args: &CheckArgs) -> Result<(), ExitCode> {
    let fault = match args.inject_fault.as_deref() {
        None => CheckFault::None,
        Some("degenerate-householder") => CheckFault::DegenerateHouseholder,
        Some(other) => {
            eprintln!("config error: unknown fault {other:?}");
            return Err(ExitCode::from(2));
        }
    };
    if !(args.tolerance_scale > 0.0) {
        eprintln!("config error: tolerance scale must be > 0");
        return Err(ExitCode::from(2));
    }
    let outcomes = check_invariants(args.tolerance_scale, fault);
    let mut all_pass = true;
    for o in &outcomes {
        println!(
            "{:<32} {}  {}",
            o.id,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        all_pass &= o.pass;
    }
    if all_pass {
        Ok(())
    } else {
        Err(ExitCode::from(4))
    }
}

fn run_kernel(args: &KernelArgs) -> Result<(), ExitCode> {
    let config_err = |msg: String| {
        eprintln!("config error: {msg}");
        ExitCode::from(2)
    };
    let text = std::fs::read_to_string(&args.graph)
        .map_err(|e| config_err(format!("cannot read {}: {e}", args.graph.display())))?;
    let graph = Graph::from_edge_list_text(&text).map_err(|e| config_err(e.to_string()))?;
    let t = parse_time(&args.t).map_err(config_err)?;
    let csv = dump_kernel(&graph, t, &args.mode).map_err(|e| config_err(e.to_string()))?;
    match &args.out {
        Some(path) => std::fs::write(path, &csv)
            .map_err(|e| config_err(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn run_gen_graph(args: &GenGraphArgs) -> Result<(), ExitCode> {
    let config_err = |msg: String| {
        eprintln!("config error: {msg}");
        ExitCode::from(2)
    };
    let need_n = || {
        args.n
            .ok_or_else(|| config_err(format!("--n is required for kind {}", args.kind)))
    };
    let graph = match args.kind.as_str() {
        "barbell" => barbell_graph(need_n()?).map(|(g, _)| g),
        "clique" => clique_graph(need_n()?).map(|(g, _)| g),
        "tree" => {
            let depth = args
                .depth
                .ok_or_else(|| config_err("--depth is required for kind tree".into()))?;
            binary_tree(depth).map(|t| t.graph)
        }
        "path" => {
            let n = need_n()?;
            Graph::build(n, &(0..n.saturating_sub(1)).map(|v| (v, v + 1)).collect::<Vec<_>>())
        }
        other => return Err(config_err(format!("unknown graph kind {other:?}"))),
    }
    .map_err(|e| config_err(e.to_string()))?;
    let text = graph.to_edge_list_text();
    match &args.out {
        Some(path) => std::fs::write(path, &text)
            .map_err(|e| config_err(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.cmd {
        Cmd::Synthetic(args) => run_experiment_cmd(&cli, args, false),
        Cmd::Neighborsmatch(args) => run_experiment_cmd(&cli, args, true),
        Cmd::Check(args) => run_check(args),
        Cmd::Kernel(args) => run_kernel(args),
        Cmd::GenGraph(args) => run_gen_graph(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
