//! Command-line front end.
//!
//! Exit codes:
//!
//! | code | meaning                                                    |
//! |------|------------------------------------------------------------|
//! | 0    | success                                                    |
//! | 2    | bad flags or invalid input (unknown design, K = 0, ...)     |
//! | 3    | I/O or file-format errors                                  |
//! | 4    | data outside the rate domain, or an invalid partition      |
//!
//! Data goes to stdout, diagnostics to stderr. Labels in every file are
//! 0-based.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::criterion::Rate;
use crate::error::{Error, Result};
use crate::evaluation::{gaussian_tail_bound, misclassification, TailBoundInput};
use crate::io::{read_labels, read_matrix, write_labels, write_matrix, MatrixFormat};
use crate::model::{generate, Design, LabelAssignment};
use crate::optimizer::{fit, FitConfig};
use crate::simharness::{aggregate, run_plan, write_sd_table, write_summary_csv, RecordWriter, SimPlan, SimRecord};

/// Environment variable that sets the worker-pool size.
pub const THREADS_ENV: &str = "PLBIC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "plbic", version, about = "Profile-likelihood biclustering")]
#[command(after_help = "Labels are 0-based in all input and output files.\n\
Exit codes: 0 ok, 2 bad flags or input, 3 I/O or format error, 4 domain or partition error.\n\
Set PLBIC_THREADS to bound the worker pool.")]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit row and column labels to a data matrix.
    Fit(FitArgs),
    /// Run a simulation plan and write records and summaries.
    Simulate(SimulateArgs),
    /// Compare estimated labels against true labels.
    Evaluate(EvaluateArgs),
    /// Evaluate the Gaussian finite-sample misclassification bound.
    Bound(BoundArgs),
    /// Draw a matrix (and its true labels) from one of the built-in designs.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RateArg {
    Bernoulli,
    Poisson,
    Gaussian,
}

impl From<RateArg> for Rate {
    fn from(r: RateArg) -> Rate {
        match r {
            RateArg::Bernoulli => Rate::Bernoulli,
            RateArg::Poisson => Rate::Poisson,
            RateArg::Gaussian => Rate::Gaussian,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Binary,
}

impl From<FormatArg> for MatrixFormat {
    fn from(f: FormatArg) -> MatrixFormat {
        match f {
            FormatArg::Csv => MatrixFormat::Csv,
            FormatArg::Binary => MatrixFormat::Binary,
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Data matrix file.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for row_labels.csv, col_labels.csv and report.json.
    #[arg(long)]
    output: PathBuf,
    /// Number of row classes.
    #[arg(long = "K", value_parser = class_count)]
    k: usize,
    /// Number of column classes.
    #[arg(long = "L", value_parser = class_count)]
    l: usize,
    #[arg(long, value_enum)]
    rate: RateArg,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    #[arg(long, default_value_t = 100)]
    max_sweeps: usize,
    /// Minimum class size as a fraction of m (rows) or n (columns).
    #[arg(long, default_value_t = 0.0)]
    min_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Plan file (key = value pairs).
    #[arg(long)]
    plan: PathBuf,
    /// Output directory; overrides the plan's `output` key.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides the plan seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the plan replicate count.
    #[arg(long)]
    replicates: Option<usize>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    truth_rows: PathBuf,
    #[arg(long)]
    truth_cols: PathBuf,
    #[arg(long)]
    estimate_rows: PathBuf,
    #[arg(long)]
    estimate_cols: PathBuf,
}

#[derive(Debug, Args)]
struct BoundArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long = "K")]
    k: usize,
    #[arg(long = "L")]
    l: usize,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    /// Minimal squared gap between means in a shared column or row.
    #[arg(long)]
    tau: f64,
    #[arg(long)]
    sigma: f64,
    /// Bound on |f'| near the means.
    #[arg(long = "c")]
    c_lip: f64,
    /// Smallest bicluster size.
    #[arg(long)]
    t_n: u64,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Poisson, Bernoulli, Gaussian or StudentT.
    #[arg(long)]
    design: String,
    /// Signal scale b.
    #[arg(long)]
    b: f64,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Matrix file to write.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Write a header line in CSV output.
    #[arg(long)]
    header: bool,
    /// Directory for the true row_labels.csv and col_labels.csv.
    #[arg(long)]
    labels: Option<PathBuf>,
}

fn class_count(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("the number of classes must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidInput(_) | Error::Unsupported(_) | Error::Dimension(_) => 2,
        Error::Io(_) | Error::Csv(_) | Error::Parse(_) => 3,
        Error::Domain(_) | Error::Partition(_) => 4,
    }
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return 0;
            }
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return 2;
        }
    };
    init_logging(cli.verbose);
    init_threads();
    let outcome = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Bound(a) => cmd_bound(a),
        Command::Generate(a) => cmd_generate(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
}

fn init_threads() {
    let Ok(val) = std::env::var(THREADS_ENV) else {
        return;
    };
    match val.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            // Fails harmlessly if the pool already exists (repeated calls in one process).
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        _ => log::warn!("ignoring {THREADS_ENV}={val:?}: expected a positive integer"),
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "{}", serde_json::to_string_pretty(value).expect("json values serialize"))?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display())))
    })
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let x = read_matrix(&a.input, a.format.into())?;
    let rate: Rate = a.rate.into();
    let mut cfg = FitConfig::new(a.k, a.l, rate);
    cfg.restarts = a.restarts;
    cfg.max_sweeps = a.max_sweeps;
    cfg.min_frac = a.min_frac;
    cfg.seed = a.seed;
    cfg.validate()?;
    rate.check_data(&x)?;

    let start = Instant::now();
    let res = fit(&x, &cfg)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;

    create_dir(&a.output)?;
    write_labels(&a.output.join("row_labels.csv"), &res.labels.rows)?;
    write_labels(&a.output.join("col_labels.csv"), &res.labels.cols)?;
    let report = json!({
        "input": a.input.display().to_string(),
        "m": x.nrows(),
        "n": x.ncols(),
        "K": cfg.k,
        "L": cfg.l,
        "rate": rate.to_string(),
        "seed": cfg.seed,
        "restarts": cfg.restarts,
        "min_frac": cfg.min_frac,
        "criterion": res.criterion,
        "sweeps": res.sweeps(),
        "sweep_trajectory": res.sweep_trajectory,
        "best_restart": res.restart_index,
        "converged": res.converged,
        "moves_applied": res.moves_applied,
        "row_counts": res.labels.row_counts(),
        "col_counts": res.labels.col_counts(),
        "wall_time_ms": wall_ms,
    });
    let mut f = BufWriter::new(File::create(a.output.join("report.json"))?);
    writeln!(f, "{}", serde_json::to_string_pretty(&report).expect("json values serialize"))?;
    f.flush()?;
    print_json(&report)
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let mut plan = SimPlan::from_file(&a.plan)?;
    if let Some(s) = a.seed {
        plan.seed = s;
    }
    if let Some(r) = a.replicates {
        plan.replicates = r;
    }
    plan.validate()?;
    let dir = a
        .output
        .or_else(|| plan.output_path.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    create_dir(&dir)?;

    let records_path = dir.join("records.csv");
    let file = File::create(&records_path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", records_path.display())))
    })?;
    let mut writer = RecordWriter::new(BufWriter::new(file));
    let mut records: Vec<SimRecord> = Vec::with_capacity(plan.expected_records());
    let total = plan.expected_records();
    log::info!("running {total} records into {}", records_path.display());
    run_plan(&plan, |rec| {
        writer.write(rec)?;
        records.push(rec.clone());
        if records.len().is_multiple_of(100) {
            log::info!("{}/{total} records", records.len());
        }
        Ok(())
    })?;
    drop(writer);

    let rows = aggregate(&records)?;
    write_summary_csv(BufWriter::new(File::create(dir.join("summary.csv"))?), &rows)?;
    write_sd_table(BufWriter::new(File::create(dir.join("sd_table.csv"))?), &rows)?;
    let failures = records.iter().filter(|r| r.failed()).count();
    print_json(&json!({
        "records": records.len(),
        "failures": failures,
        "summary_rows": rows.len(),
        "output": dir.display().to_string(),
    }))
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let load = |rows: &Path, cols: &Path| -> Result<LabelAssignment> {
        let r = read_labels(rows)?;
        let c = read_labels(cols)?;
        let k = r.iter().max().map_or(0, |v| v + 1);
        let l = c.iter().max().map_or(0, |v| v + 1);
        LabelAssignment::new(r, c, k, l)
    };
    let truth = load(&a.truth_rows, &a.truth_cols)?;
    let est = load(&a.estimate_rows, &a.estimate_cols)?;
    let rates = misclassification(&truth, &est)?;
    print_json(&json!({
        "row_rate": rates.row_rate,
        "col_rate": rates.col_rate,
        "overall": rates.overall,
    }))
}

fn cmd_bound(a: BoundArgs) -> Result<()> {
    let input = TailBoundInput {
        m: a.m,
        n: a.n,
        k: a.k,
        l: a.l,
        epsilon: a.epsilon,
        delta: a.delta,
        tau: a.tau,
        sigma: a.sigma,
        c_lip: a.c_lip,
        t_n: a.t_n,
    };
    let bound = gaussian_tail_bound(&input)?;
    print_json(&json!({
        "bound": bound,
        "log_bound": input.log_bound(),
        "exponent": input.exponent(),
        "delta_limit": input.delta_limit(),
    }))
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let design: Design = a.design.parse()?;
    let spec = design.spec(a.b, a.n)?;
    let sample = generate(&spec, a.m, a.n, a.seed)?;
    write_matrix(&a.output, &sample.data, a.format.into(), a.header)?;
    if let Some(dir) = &a.labels {
        create_dir(dir)?;
        write_labels(&dir.join("row_labels.csv"), &sample.truth.rows)?;
        write_labels(&dir.join("col_labels.csv"), &sample.truth.cols)?;
    }
    print_json(&json!({
        "design": design.name(),
        "m": a.m,
        "n": a.n,
        "b": a.b,
        "seed": a.seed,
        "label_retries": sample.label_retries,
    }))
}
