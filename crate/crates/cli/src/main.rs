//! `blockcv` — fit stochastic block models to sparse networks with belief
//! propagation and pick the number of clusters by Bethe free energy or
//! leave-one-out cross-validation error.

mod manifest;
mod plot;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use blockcv::assess::{self, Criterion};
use blockcv::em::{self, FitConfig};
use blockcv::graph::{format_for_path, load_graph, Graph};
use blockcv::model::{planted_partition, ModelKind};
use blockcv::synth::{self, ThetaLaw};

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "blockcv", version, about)]
struct Cli {
    /// Worker threads for per-q / per-candidate parallelism
    /// (default: $BLOCKCV_JOBS, else all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a benchmark graph with planted clusters.
    Generate(GenerateArgs),
    /// Fit the model at a fixed number of clusters.
    Fit(FitArgs),
    /// Fit a range of cluster counts and assemble the assessment table.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Sbm,
    Dcsbm,
}

impl ModelArg {
    fn kind(self) -> ModelKind {
        match self {
            ModelArg::Sbm => ModelKind::Standard,
            ModelArg::Dcsbm => ModelKind::DegreeCorrected,
        }
    }
}

impl std::fmt::Display for ModelArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelArg::Sbm => write!(f, "sbm"),
            ModelArg::Dcsbm => write!(f, "dcsbm"),
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Number of planted clusters.
    #[arg(long)]
    q: usize,
    /// Number of vertices.
    #[arg(long)]
    n: usize,
    /// Target mean degree.
    #[arg(long)]
    c: f64,
    /// Affinity ratio omega_out / omega_in.
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Degree-distribution exponent (dcsbm only).
    #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
    tau: f64,
    /// Degree-correction cap (dcsbm only).
    #[arg(long, default_value_t = 100)]
    dmax: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Fit options shared by `fit` and `sweep`; flags override the config file,
/// which overrides the defaults.
#[derive(Args)]
struct ConfigArgs {
    /// JSON file with any subset of the fit configuration fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Restarts per initialization strategy.
    #[arg(long)]
    restarts: Option<usize>,
    /// BP convergence tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_em_iters: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<FitConfig> {
        let mut cfg: FitConfig = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => FitConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(restarts) = self.restarts {
            cfg.restarts = restarts;
        }
        if let Some(tol) = self.tol {
            cfg.tol = tol;
        }
        if let Some(iters) = self.max_em_iters {
            cfg.max_em_iters = iters;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct FitArgs {
    /// Edge-list (.tsv/.txt) or GML (.gml) input graph.
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::Sbm)]
    model: ModelArg,
    #[arg(long)]
    q: usize,
    /// Planted labels (`vertex<TAB>label`) to report overlap against.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::Sbm)]
    model: ModelArg,
    #[arg(long)]
    qmin: usize,
    #[arg(long)]
    qmax: usize,
    /// Selection objective for the one-standard-error rule.
    #[arg(long, default_value = "gibbs")]
    criterion: Criterion,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let jobs = cli.jobs.or_else(|| {
        std::env::var("BLOCKCV_JOBS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(jobs) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("initializing worker pool")?;
    }
    match cli.cmd {
        Cmd::Generate(args) => cmd_generate(args),
        Cmd::Fit(args) => cmd_fit(args),
        Cmd::Sweep(args) => cmd_sweep(args),
    }
}

fn write_file(manifest: &mut RunManifest, path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    manifest.record_output(path);
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    if args.q == 0 || args.n == 0 {
        bail!("--q and --n must be positive");
    }
    std::fs::create_dir_all(&args.out)?;
    let mut h = planted_partition(args.q, args.c, args.eps, args.n);
    let planted = match args.model {
        ModelArg::Sbm => synth::sample_sbm(&h, args.n, args.seed)?,
        ModelArg::Dcsbm => {
            h.kind = ModelKind::DegreeCorrected;
            synth::sample_dcsbm(
                &h,
                args.n,
                ThetaLaw::PowerLaw {
                    tau: args.tau,
                    d_max: args.dmax,
                },
                args.seed,
            )?
        }
    };
    let mut manifest = RunManifest::new(
        "generate",
        serde_json::json!({
            "model": args.model.to_string(),
            "q": args.q, "n": args.n, "c": args.c, "eps": args.eps,
            "tau": args.tau, "dmax": args.dmax,
        }),
        serde_json::Value::Null,
        args.seed,
    );
    write_file(&mut manifest, &args.out.join("graph.tsv"), &planted.graph.to_edge_list())?;
    let labels: String = planted
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{i}\t{l}\n"))
        .collect();
    write_file(&mut manifest, &args.out.join("labels.tsv"), &labels)?;
    write_file(
        &mut manifest,
        &args.out.join("hyperparams.json"),
        &serde_json::to_string_pretty(&planted.hyperparams)?,
    )?;
    manifest.write(&args.out)?;
    println!(
        "generated {} vertices, {} edges (mean degree {:.3}) in {}",
        planted.graph.n(),
        planted.graph.m(),
        planted.graph.mean_degree(),
        args.out.display()
    );
    Ok(())
}

fn load_input_graph(path: &Path) -> Result<Graph> {
    let (g, report) = load_graph(path, format_for_path(path))
        .with_context(|| format!("loading graph {}", path.display()))?;
    if report.self_loops_dropped > 0 || report.duplicates_dropped > 0 {
        eprintln!(
            "note: dropped {} self-loops and {} duplicate edges",
            report.self_loops_dropped, report.duplicates_dropped
        );
    }
    Ok(g)
}

/// Reads a `vertex<TAB>label` file into internal vertex order.
fn load_truth(path: &Path, g: &Graph) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path)?;
    let mut by_name: HashMap<&str, usize> = HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (name, label) = (it.next(), it.next());
        if let (Some(name), Some(label)) = (name, label) {
            by_name.insert(name, label.parse().context("non-integer label")?);
        }
    }
    (0..g.n())
        .map(|i| {
            by_name
                .get(g.label(i))
                .copied()
                .with_context(|| format!("vertex {} missing from truth file", g.label(i)))
        })
        .collect()
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    let cfg = args.config.resolve()?;
    let g = load_input_graph(&args.graph)?;
    let fit = em::fit(&g, args.q, args.model.kind(), &cfg)?;
    for w in &fit.warnings {
        eprintln!("warning: {w}");
    }
    let mut manifest = RunManifest::new(
        "fit",
        serde_json::json!({
            "graph": args.graph.display().to_string(),
            "model": args.model.to_string(),
            "q": args.q,
        }),
        serde_json::to_value(&cfg)?,
        cfg.seed,
    );
    manifest.hash_input(&args.graph)?;
    let labels: String = fit
        .hard_labels
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{}\t{}\n", g.label(i), l))
        .collect();
    write_file(&mut manifest, &args.out.join("labels.tsv"), &labels)?;
    let marginals: Vec<&[f64]> = (0..g.n()).map(|i| fit.state.marginal(i)).collect();
    write_file(
        &mut manifest,
        &args.out.join("marginals.json"),
        &serde_json::to_string(&serde_json::json!({
            "vertices": (0..g.n()).map(|i| g.label(i)).collect::<Vec<_>>(),
            "marginals": marginals,
        }))?,
    )?;
    write_file(
        &mut manifest,
        &args.out.join("hyperparams.json"),
        &serde_json::to_string_pretty(&fit.hyperparams)?,
    )?;
    let overlap = match &args.truth {
        Some(path) => {
            manifest.hash_input(path)?;
            let truth = load_truth(path, &g)?;
            let q_truth = truth.iter().max().map_or(1, |&m| m + 1);
            Some(synth::overlap(&fit.hard_labels, &truth, args.q.max(q_truth)))
        }
        None => None,
    };
    let report = serde_json::json!({
        "q": args.q,
        "free_energy": fit.free_energy,
        "converged": fit.state.converged,
        "bp_sweeps": fit.state.sweeps,
        "bp_residual": fit.state.residual,
        "em_iters": fit.em_iters,
        "fe_trace": fit.fe_trace,
        "init_used": fit.init_used.to_string(),
        "restart_used": fit.restart_used,
        "warnings": fit.warnings,
        "overlap": overlap,
    });
    write_file(&mut manifest, &args.out.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
    manifest.write(&args.out)?;
    println!(
        "q={} f={:.6} converged={} init={}{}",
        args.q,
        fit.free_energy,
        fit.state.converged,
        fit.init_used,
        overlap.map_or(String::new(), |o| format!(" overlap={o:.4}")),
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    if args.qmin == 0 || args.qmax < args.qmin {
        bail!("need 1 <= qmin <= qmax");
    }
    std::fs::create_dir_all(&args.out)?;
    let cfg = args.config.resolve()?;
    let g = load_input_graph(&args.graph)?;
    let report = assess::sweep(&g, args.qmin..=args.qmax, args.model.kind(), &cfg)?;
    let selected = assess::one_se_select(&report.rows, args.criterion);
    let mut manifest = RunManifest::new(
        "sweep",
        serde_json::json!({
            "graph": args.graph.display().to_string(),
            "model": args.model.to_string(),
            "qmin": args.qmin, "qmax": args.qmax,
            "criterion": args.criterion.to_string(),
        }),
        serde_json::to_value(&cfg)?,
        cfg.seed,
    );
    manifest.hash_input(&args.graph)?;
    write_file(&mut manifest, &args.out.join("sweep.csv"), &assess::rows_to_csv(&report.rows))?;
    write_file(
        &mut manifest,
        &args.out.join("sweep.json"),
        &serde_json::to_string_pretty(&serde_json::json!({
            "criterion": args.criterion.to_string(),
            "selected_q": selected,
            "rows": report.rows,
            "fe_traces": report.fe_traces,
        }))?,
    )?;
    write_file(&mut manifest, &args.out.join("plot_sweep.py"), &plot::sweep_plot_script("sweep.csv"))?;
    manifest.write(&args.out)?;
    for row in &report.rows {
        println!(
            "q={} f={:.6} e_gibbs={:.6} converged={} init={}",
            row.q, row.f_bethe, row.e_gibbs, row.converged, row.init_used
        );
    }
    println!("selected q = {selected} ({} one-SE rule)", args.criterion);
    Ok(())
}
