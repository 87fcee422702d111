//! `mfglobal` command-line front end.
//!
//! Exit codes: 0 on success, 1 on a numerical failure inside a solver,
//! 2 on usage, input or output errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use mfglobal::data::rmse;
use mfglobal::driver::{rmse_zero, svd_from_factors, SolverConfig};
use mfglobal::mfsolver::mc_objective;
use mfglobal::persist::{load_reference, save_reference, save_triplet, Reference};
use mfglobal::{
    load_ratings_files, solve_mf_global, solve_mf_only, solve_pg_baseline, BbRule, Dataset, EigMethod, Error, IterationTrace, StopReason,
    Triplet,
};

#[derive(Parser, Debug)]
#[command(name = "mfglobal", version, about = "Nuclear-norm regularized matrix completion", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one solver and write its trace.
    Solve(SolveArgs),
    /// Run several solvers under one configuration.
    Compare(CompareArgs),
    /// Long run whose optimum is stored for relative metrics.
    MakeReference(ReferenceArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum SolverKind {
    MfGlobal,
    Pg,
    MfOnly,
}

impl SolverKind {
    fn name(self) -> &'static str {
        match self {
            SolverKind::MfGlobal => "mf-global",
            SolverKind::Pg => "pg",
            SolverKind::MfOnly => "mf-only",
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum EigArg {
    LmKrylov,
    Power,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BbArg {
    Reciprocal,
    AsPrinted,
}

/// Options shared by every command.
#[derive(Args, Debug, Clone)]
struct Common {
    /// Training ratings: `user item rating [timestamp]` per line.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Held-out ratings in the same format.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Key=value file supplying any option; the command line wins.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 15.0)]
    lambda: f64,
    /// Factorization rank for mf-only; defaults to --k0.
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, default_value_t = 8)]
    k0: usize,
    #[arg(long, default_value_t = 3)]
    mf_epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 0.99)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    /// Relative objective change over five iterations that stops a run.
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, value_enum, default_value_t = EigArg::LmKrylov)]
    eig: EigArg,
    /// Previous blocks kept by the Krylov eigensolver.
    #[arg(long, default_value_t = 3)]
    memory: usize,
    #[arg(long, value_enum, default_value_t = BbArg::Reciprocal)]
    bb_rule: BbArg,
    /// Reference solution for relative metrics.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Write zeros in the time column so traces are byte-identical.
    #[arg(long)]
    no_time: bool,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value_t = SolverKind::MfGlobal)]
    solver: SolverKind,
    /// Trace CSV; the id map is written next to it.
    #[arg(long, default_value = "trace.csv")]
    out: PathBuf,
    /// Binary triplet of the final iterate.
    #[arg(long)]
    save_model: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated solvers.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "mf-global,mf-only")]
    solvers: Vec<SolverKind>,
    /// Directory for per-solver traces, the aligned CSV and the summary.
    #[arg(long, default_value = "compare-out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct ReferenceArgs {
    #[command(flatten)]
    common: Common,
    /// Reference file to write.
    #[arg(long, default_value = "reference.bin")]
    out: PathBuf,
    /// Optional trace of the reference run.
    #[arg(long)]
    trace: Option<PathBuf>,
}

/// Error raised inside a solver, carrying the trace written so far.
struct NumericalFailure;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv = match with_config_file(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.is::<NumericalFailure>() {
        return 1;
    }
    match e.downcast_ref::<Error>() {
        Some(Error::NumericalFailure { .. } | Error::BacktrackingExhausted(_) | Error::Internal(_)) => 1,
        _ => 2,
    }
}

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("numerical failure")
    }
}

impl std::fmt::Debug for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("NumericalFailure")
    }
}

impl std::error::Error for NumericalFailure {}

/// Splices options from `--config <file>` in front of the command-line
/// options of the subcommand, so later (command-line) values override them.
fn with_config_file(argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = argv.get(i + 1).cloned();
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(OsString::from(p));
        }
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("cannot read config file {}", Path::new(&path).display()))?;
    let mut extra = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| anyhow!("config line {}: expected key=value", lineno + 1))?;
        let (key, value) = (key.trim().trim_start_matches("--"), value.trim());
        if key == "config" {
            bail!("config line {}: nested config files are not supported", lineno + 1);
        }
        if key == "no-time" || key == "no_time" {
            match value {
                "true" | "1" | "yes" => extra.push(OsString::from("--no-time")),
                "false" | "0" | "no" => {}
                _ => bail!("config line {}: no-time expects true or false", lineno + 1),
            }
            continue;
        }
        extra.push(OsString::from(format!("--{}={value}", key.replace('_', "-"))));
    }
    // the subcommand is the first argument after the program name
    let mut out = argv;
    let at = 2.min(out.len());
    out.splice(at..at, extra);
    Ok(out)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Compare(a) => cmd_compare(a),
        Command::MakeReference(a) => cmd_make_reference(a),
    }
}

fn solver_config(c: &Common) -> anyhow::Result<SolverConfig<f64>> {
    let cfg = SolverConfig {
        k0: c.k0,
        mf_epochs: c.mf_epochs,
        beta: c.beta,
        delta: c.delta,
        seed: c.seed,
        threads: c.threads,
        max_outer_iters: c.max_iters,
        stop_tol: c.tol,
        eig_method: match c.eig {
            EigArg::LmKrylov => EigMethod::LmKrylov,
            EigArg::Power => EigMethod::Power,
        },
        eig_memory: c.memory,
        bb_rule: match c.bb_rule {
            BbArg::Reciprocal => BbRule::Reciprocal,
            BbArg::AsPrinted => BbRule::AsPrinted,
        },
        record_time: !c.no_time,
        ..SolverConfig::new(c.lambda)
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load(c: &Common) -> anyhow::Result<Dataset<f64>> {
    let data = c.data.as_ref().ok_or_else(|| anyhow!("--data is required"))?;
    let ds = load_ratings_files::<f64>(data, c.test.as_deref()).with_context(|| format!("cannot load {}", data.display()))?;
    info!("loaded {}x{} with {} ratings", ds.train.nrows(), ds.train.ncols(), ds.train.len());
    Ok(ds)
}

fn load_ref(c: &Common) -> anyhow::Result<Option<Reference<f64>>> {
    c.reference
        .as_ref()
        .map(|p| load_reference::<f64>(p).with_context(|| format!("cannot load reference {}", p.display())))
        .transpose()
}

struct Run {
    x: Triplet,
    trace: IterationTrace,
    stop: StopReason,
    seconds: f64,
}

fn run_solver(kind: SolverKind, ds: &Dataset<f64>, cfg: &SolverConfig<f64>, rank: usize, reference: Option<&Reference<f64>>) -> anyhow::Result<Run> {
    let start = Instant::now();
    let split = ds.test.as_ref();
    let (x, trace, stop) = match kind {
        SolverKind::MfGlobal => {
            let o = solve_mf_global(&ds.train, split, cfg, reference)?;
            (o.x, o.trace, o.stop)
        }
        SolverKind::Pg => {
            let o = solve_pg_baseline(&ds.train, split, cfg, reference)?;
            (o.x, o.trace, o.stop)
        }
        SolverKind::MfOnly => {
            let o = solve_mf_only(&ds.train, split, cfg, rank, reference)?;
            (svd_from_factors(&o.factors)?, o.trace, o.stop)
        }
    };
    Ok(Run { x, trace, stop, seconds: start.elapsed().as_secs_f64() })
}

/// Runs a solver, saving the partial trace when it fails numerically.
fn run_or_dump(kind: SolverKind, ds: &Dataset<f64>, cfg: &SolverConfig<f64>, rank: usize, reference: Option<&Reference<f64>>, dump: &Path) -> anyhow::Result<Run> {
    match run_solver(kind, ds, cfg, rank, reference) {
        Ok(r) => Ok(r),
        Err(e) => {
            if let Some(Error::NumericalFailure { message, trace }) = e.downcast_ref::<Error>() {
                trace.save_csv(dump).with_context(|| format!("cannot write {}", dump.display()))?;
                eprintln!("{}: {message}; partial trace in {}", kind.name(), dump.display());
                return Err(anyhow::Error::new(NumericalFailure).context(format!("{} failed", kind.name())));
            }
            Err(e)
        }
    }
}

fn ids_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".ids.tsv");
    out.with_file_name(name)
}

fn cmd_solve(a: SolveArgs) -> anyhow::Result<()> {
    let c = &a.common;
    let cfg = solver_config(c)?;
    let ds = load(c)?;
    let reference = load_ref(c)?;
    let rank = c.rank.unwrap_or(c.k0);
    let run = run_or_dump(a.solver, &ds, &cfg, rank, reference.as_ref(), &a.out)?;
    run.trace.save_csv(&a.out).with_context(|| format!("cannot write {}", a.out.display()))?;
    ds.ids.save(ids_path(&a.out))?;
    if let Some(path) = &a.save_model {
        save_triplet(path, &run.x).with_context(|| format!("cannot write {}", path.display()))?;
    }
    let last = run.trace.last().expect("trace has an initial row");
    println!(
        "{}: {} iterations ({:?}), objective {:.10e}, rank {}, rmse {:.6}, {:.2}s",
        a.solver.name(),
        last.iter,
        run.stop,
        last.obj,
        last.rank,
        last.rmse,
        run.seconds
    );
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> anyhow::Result<()> {
    if a.solvers.is_empty() {
        bail!("no solvers listed");
    }
    let c = &a.common;
    let cfg = solver_config(c)?;
    let ds = load(c)?;
    let reference = load_ref(c)?;
    let rank = c.rank.unwrap_or(c.k0);
    fs::create_dir_all(&a.out_dir).with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    let mut runs = Vec::new();
    for &kind in &a.solvers {
        let dump = a.out_dir.join(format!("{}.csv", kind.name()));
        let run = run_or_dump(kind, &ds, &cfg, rank, reference.as_ref(), &dump)?;
        info!("{} finished in {:.2}s", kind.name(), run.seconds);
        runs.push((kind, run));
    }

    // without a reference the best final objective stands in for F*
    let (f_star, rmse_star, rmse_zero_val) = match &reference {
        Some(r) => (r.f_star, r.rmse_star, r.rmse_zero),
        None => {
            let (best_kind, best) = runs
                .iter()
                .min_by(|a, b| a.1.trace.last().unwrap().obj.total_cmp(&b.1.trace.last().unwrap().obj))
                .expect("at least one run");
            info!("using the final objective of {} as the reference", best_kind.name());
            let r_star = ds.test.as_ref().map(|t| rmse(t, &best.x)).transpose()?;
            let r_zero = ds.test.as_ref().map(rmse_zero).transpose()?;
            (best.trace.last().unwrap().obj, r_star, r_zero)
        }
    };
    for (_, run) in &mut runs {
        run.trace.rebase_objective(f_star);
        if let (Some(rs), Some(rz)) = (rmse_star, rmse_zero_val) {
            run.trace.rebase_rmse(rs, rz);
        }
    }

    for (kind, run) in &runs {
        let path = a.out_dir.join(format!("{}.csv", kind.name()));
        run.trace.save_csv(&path).with_context(|| format!("cannot write {}", path.display()))?;
    }
    write_aligned(&a.out_dir.join("aligned.csv"), &runs)?;
    ds.ids.save(a.out_dir.join("ids.tsv"))?;

    let mut summary = String::from("solver,iters,final_obj,rel_obj,rank,rmse,rel_rmse,time_s\n");
    let mut table = format!("{:<10} {:>6} {:>18} {:>12} {:>5} {:>10} {:>12} {:>9}\n", "solver", "iters", "objective", "rel_obj", "rank", "rmse", "rel_rmse", "time_s");
    for (kind, run) in &runs {
        let l = run.trace.last().unwrap();
        let _ = writeln!(summary, "{},{},{:.12e},{:.6e},{},{:.6},{:.6e},{:.3}", kind.name(), l.iter, l.obj, l.rel_obj, l.rank, l.rmse, l.rel_rmse, run.seconds);
        let _ = writeln!(
            table,
            "{:<10} {:>6} {:>18.10e} {:>12.4e} {:>5} {:>10.6} {:>12.4e} {:>9.2}",
            kind.name(),
            l.iter,
            l.obj,
            l.rel_obj,
            l.rank,
            l.rmse,
            l.rel_rmse,
            run.seconds
        );
    }
    let summary_path = a.out_dir.join("summary.csv");
    fs::write(&summary_path, summary).with_context(|| format!("cannot write {}", summary_path.display()))?;
    print!("{table}");
    Ok(())
}

/// One row per iteration index; each solver contributes its relative
/// objective and RMSE, holding the last value once its run has ended.
fn write_aligned(path: &Path, runs: &[(SolverKind, Run)]) -> anyhow::Result<()> {
    let rows = runs.iter().map(|(_, r)| r.trace.len()).max().unwrap_or(0);
    let mut out = String::from("iter");
    for (kind, _) in runs {
        let _ = write!(out, ",{0}_rel_obj,{0}_rel_rmse,{0}_rank", kind.name());
    }
    out.push('\n');
    for i in 0..rows {
        let _ = write!(out, "{i}");
        for (_, run) in runs {
            let r = &run.trace.records[i.min(run.trace.len() - 1)];
            let _ = write!(out, ",{:e},{:e},{}", r.rel_obj, r.rel_rmse, r.rank);
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

fn cmd_make_reference(a: ReferenceArgs) -> anyhow::Result<()> {
    let c = &a.common;
    let cfg = solver_config(c)?;
    let ds = load(c)?;
    let dump = a.trace.clone().unwrap_or_else(|| a.out.with_extension("trace.csv"));
    let run = run_or_dump(SolverKind::MfGlobal, &ds, &cfg, c.k0, None, &dump)?;
    let f_star = mc_objective(&ds.train, &run.x, cfg.lambda)?;
    let rmse_star = ds.test.as_ref().map(|t| rmse(t, &run.x)).transpose()?;
    let rmse_zero_val = ds.test.as_ref().map(rmse_zero).transpose()?;
    let reference = Reference { f_star, rmse_star, rmse_zero: rmse_zero_val, lambda: cfg.lambda, x: run.x };
    save_reference(&a.out, &reference).with_context(|| format!("cannot write {}", a.out.display()))?;
    if let Some(t) = &a.trace {
        run.trace.save_csv(t).with_context(|| format!("cannot write {}", t.display()))?;
    }
    ds.ids.save(ids_path(&a.out))?;
    println!(
        "reference: F* = {f_star:.12e}, rank {}, rmse* = {}, rmse(0) = {}, {} iterations ({:?})",
        reference.x.rank(),
        rmse_star.map_or("n/a".into(), |v| format!("{v:.6}")),
        rmse_zero_val.map_or("n/a".into(), |v| format!("{v:.6}")),
        run.trace.len() - 1,
        run.stop
    );
    Ok(())
}
