//! Command-line benchmark driver for the reduced-basis toolkit.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ttrb_cli::bench::{build_offline_model, emit_csv, fmt_g6, run_bench, BenchTable};
use ttrb_cli::cases::problem_spec;
use ttrb_cli::config::BenchConfig;

use ttrb::fe::sparsity_map;
use ttrb::fom::{generate_snapshots, simulate, Sampler, SnapshotSet};
use ttrb::reduce::reduction_factor;
use ttrb::rom::{error_metric, OnlineSolver, ReducedModel, SpaceTimeNorm};

#[derive(Parser)]
#[command(
    name = "ttrb",
    about = "Tensor-train reduced basis benchmark driver",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Configuration file (TOML with the documented keys).
    #[arg(long)]
    config: PathBuf,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override for the online parameter stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Tolerance list override, e.g. --eps 1e-2,1e-3.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate snapshots and build the reduced models; save them under
    /// the output directory.
    Offline(CommonArgs),
    /// Load saved models and evaluate the online phase.
    Online(CommonArgs),
    /// Run the full offline + online protocol and emit the metrics CSV.
    Bench(CommonArgs),
    /// Run both methods and print a side-by-side comparison.
    Compare(CommonArgs),
}

fn load_config(args: &CommonArgs) -> Result<BenchConfig, String> {
    let mut cfg = BenchConfig::from_file(&args.config)?;
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(eps) = &args.eps {
        cfg.eps = eps.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_table(table: &BenchTable) {
    println!("{}", ttrb_cli::bench::CSV_HEADER);
    for r in &table.rows {
        println!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.case,
            r.method,
            fmt_g6(r.eps),
            r.m,
            r.nt,
            fmt_g6(r.e),
            fmt_g6(r.rf),
            fmt_g6(r.offline_s),
            fmt_g6(r.online_s),
            fmt_g6(r.fom_s),
            r.dim
        );
    }
    for note in &table.notes {
        eprintln!("note: {note}");
    }
    for failure in &table.failures {
        eprintln!("failed row: {failure}");
    }
}

fn cmd_bench(args: &CommonArgs) -> Result<(), String> {
    let cfg = load_config(args)?;
    let table = run_bench(&cfg)?;
    print_table(&table);
    let path = cfg.out_dir.join("metrics.csv");
    emit_csv(&table, &path)?;
    println!("wrote {}", path.display());
    if table.rows.is_empty() {
        return Err("[bench] every configuration failed".into());
    }
    Ok(())
}

fn cmd_compare(args: &CommonArgs) -> Result<(), String> {
    let mut cfg = load_config(args)?;
    cfg.method = ttrb_cli::config::Method::Both;
    let table = run_bench(&cfg)?;
    print_table(&table);
    println!();
    println!(
        "{:<10} {:>9} {:>12} {:>12} {:>10}",
        "eps", "method", "E", "RF", "dim"
    );
    for r in &table.rows {
        println!(
            "{:<10} {:>9} {:>12} {:>12} {:>10}",
            fmt_g6(r.eps),
            r.method,
            fmt_g6(r.e),
            fmt_g6(r.rf),
            r.dim
        );
    }
    Ok(())
}

fn model_dir(cfg: &BenchConfig, method: &str, eps: f64) -> PathBuf {
    cfg.out_dir
        .join(format!("{}-{}-{:.0e}", cfg.case.name(), method, eps))
}

fn cmd_offline(args: &CommonArgs) -> Result<(), String> {
    let cfg = load_config(args)?;
    let spec = problem_spec(&cfg)?;
    let map = sparsity_map(&spec.space).map_err(|e| format!("[setup] {e}"))?;
    let snaps = generate_snapshots(&spec, cfg.n_offline, &Sampler::Halton { start_index: 1 })
        .map_err(|e| format!("[snapshots] {e}"))?;
    let snap_dir = cfg.out_dir.join(format!("{}-snapshots", cfg.case.name()));
    snaps
        .save(&snap_dir, &spec)
        .map_err(|e| format!("[snapshots] {e}"))?;
    println!("snapshots saved to {}", snap_dir.display());
    let hyper_set = snaps
        .truncate_params(cfg.n_offline.min(30))
        .map_err(|e| format!("[snapshots] {e}"))?;
    for method in cfg.method.list() {
        for &eps in &cfg.eps {
            let built = build_offline_model(&spec, &snaps, &hyper_set, &map, method, eps)?;
            let dir = model_dir(&cfg, method, eps);
            built
                .model
                .save(&dir, &spec)
                .map_err(|e| format!("[save] {e}"))?;
            println!(
                "{method} eps={} dim={} basis {:.3}s hyper {:.3}s project {:.3}s -> {}",
                fmt_g6(eps),
                built.model.dimension(),
                built.basis_s,
                built.hyper_s,
                built.project_s,
                dir.display()
            );
        }
    }
    Ok(())
}

fn cmd_online(args: &CommonArgs) -> Result<(), String> {
    let cfg = load_config(args)?;
    let spec = problem_spec(&cfg)?;
    let map = sparsity_map(&spec.space).map_err(|e| format!("[setup] {e}"))?;
    let online_params = Sampler::Uniform { seed: cfg.seed }
        .draw(cfg.n_online, &spec.param_box)
        .map_err(|e| format!("[online] {e}"))?;
    let foms: Vec<_> = online_params
        .iter()
        .map(|mu| simulate(&spec, mu).map(|s| s.solution))
        .collect::<Result<_, _>>()
        .map_err(|e| format!("[fom] {e}"))?;
    let norm = SpaceTimeNorm {
        kron: ttrb::fe::assemble_norm_matrix(&spec.space).map_err(|e| format!("[setup] {e}"))?,
        dt: spec.dt(),
        steady: spec.steady(),
    };
    // Report the stored snapshot set if present (sanity aid only).
    let snap_dir = cfg.out_dir.join(format!("{}-snapshots", cfg.case.name()));
    if snap_dir.exists() {
        if let Ok(s) = SnapshotSet::load(&snap_dir, &spec) {
            println!("snapshots: {} parameters", s.n_mu());
        }
    }
    println!("case,method,eps,E,RF,dim");
    for method in cfg.method.list() {
        for &eps in &cfg.eps {
            let dir = model_dir(&cfg, method, eps);
            let model = ReducedModel::load(&dir, &spec)
                .map_err(|e| format!("[load {}] {e}", dir.display()))?;
            let solver =
                OnlineSolver::new(&model, &spec, &map).map_err(|e| format!("[online] {e}"))?;
            let roms: Vec<_> = online_params
                .iter()
                .map(|mu| solver.solve(mu).map(|s| s.solution))
                .collect::<Result<_, _>>()
                .map_err(|e| format!("[online] {e}"))?;
            let e = error_metric(&foms, &roms, &norm).map_err(|e| format!("[metric] {e}"))?;
            println!(
                "{},{},{},{},{},{}",
                cfg.case.name(),
                method,
                fmt_g6(eps),
                fmt_g6(e),
                fmt_g6(reduction_factor(model.dimension(), spec.n_st())),
                model.dimension()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Offline(args) => cmd_offline(args),
        Command::Online(args) => cmd_online(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
