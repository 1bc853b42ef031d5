//! `see` command-line front end.
//!
//! Exit status: 0 on success, 1 when the instance is infeasible, 2 on usage
//! or configuration errors, 3 on I/O failures.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::closedform::{solve_closed_form, Objective, SolveResult};
use crate::error::{ConfigError, SolveError};
use crate::experiments::{
    export_dataset, run_sweep_with_jobs, write_heatmap_csv, write_sweep_csv, DatasetSolver, ExperimentError, Scheme,
    SolverSettings, SweepSpec, SweepVariable,
};
use crate::model::Problem;
use crate::scenario::{generate_scenario, NetworkConfig, PerUser};
use crate::search::{grid_search_counted, pso_traced, GridConfig, PsoConfig, TraceRecord};
use crate::units::Watts;

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "see", version, about = "Secrecy energy-efficiency solvers for backscatter-assisted NOMA")]
pub struct Cli {
    /// Print a machine-readable description of every command and exit.
    #[arg(long, global = true)]
    pub help_json: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one random drop and print the result as JSON.
    Solve(SolveArgs),
    /// Run a sweep described by a JSON file and write its CSV.
    Sweep(SweepArgs),
    /// Export solved drops as a CSV dataset.
    Dataset(DatasetArgs),
    /// Report evaluation counts and wall time of the search methods.
    Bench(BenchArgs),
}

/// Network parameters shared by the commands. Flags override `--config`.
#[derive(Debug, Clone, Args)]
pub struct NetworkArgs {
    /// JSON network configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Power budget, e.g. `50dBm` or `100W`.
    #[arg(long, allow_hyphen_values = true)]
    pub pmax: Option<Watts>,
    /// Noise power at users and eavesdropper, e.g. `-30dBm`.
    #[arg(long, allow_hyphen_values = true)]
    pub noise: Option<Watts>,
    /// Circuit power, e.g. `30dBm`.
    #[arg(long, allow_hyphen_values = true)]
    pub pc: Option<Watts>,
    /// Rate target of every user, bits/s/Hz.
    #[arg(long)]
    pub rmin: Option<f64>,
}

impl NetworkArgs {
    pub fn resolve(&self) -> Result<NetworkConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => serde_json::from_str(&read(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
            None => NetworkConfig::default(),
        };
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(m) = self.m {
            cfg.m = m;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = self.pmax {
            cfg.p_max = p;
        }
        if let Some(n) = self.noise {
            cfg.noise_user = n;
            cfg.noise_eav = n;
        }
        if let Some(p) = self.pc {
            cfg.p_circuit = p;
        }
        if let Some(r) = self.rmin {
            cfg.r_min = PerUser::Uniform(r);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Closed,
    Grid,
    Pso,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Tradeoff,
    Ratio,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub net: NetworkArgs,
    #[arg(long, value_enum, default_value = "closed")]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value = "ratio")]
    pub objective: ObjectiveArg,
    /// Power weight of the trade-off objective.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Drop index under the seed.
    #[arg(long, default_value_t = 0)]
    pub trial: u64,
    /// Write the PSO convergence trace as JSON lines.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// JSON sweep description.
    #[arg(long)]
    pub spec: PathBuf,
    #[command(flatten)]
    pub net: NetworkArgs,
    /// Output CSV.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Override the trial count of the spec.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Worker threads.
    #[arg(long, default_value_t = default_jobs())]
    pub jobs: usize,
    /// Directory for per-scheme heat maps of position sweeps.
    #[arg(long)]
    pub heatmap_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[command(flatten)]
    pub net: NetworkArgs,
    /// Number of rows.
    #[arg(long, short, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value = "closedform", value_parser = parse_dataset_solver)]
    pub solver: DatasetSolver,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = default_jobs())]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// BD counts to measure.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 3])]
    pub m: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Methods to measure; both when omitted.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Drops timed per BD count; the median wall time is reported.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn parse_dataset_solver(s: &str) -> Result<DatasetSolver, String> {
    s.parse().map_err(|e: ConfigError| e.to_string())
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solve(SolveError),
    #[error(transparent)]
    Experiment(ExperimentError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::Config(c) => CliError::Config(c),
            e => CliError::Solve(e),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(c) => CliError::Config(c),
            ExperimentError::Solve(s) => s.into(),
            e => CliError::Experiment(e),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Solve(e) if e.is_infeasible() => EXIT_INFEASIBLE,
            CliError::Solve(SolveError::Unsupported { .. }) => EXIT_USAGE,
            CliError::Solve(_) => EXIT_INFEASIBLE,
            CliError::Experiment(ExperimentError::SchemeMismatch { .. }) => EXIT_USAGE,
            CliError::Experiment(ExperimentError::Json(_)) => EXIT_USAGE,
            CliError::Experiment(ExperimentError::NoFeasibleDrop { .. }) => EXIT_INFEASIBLE,
            CliError::Experiment(_) | CliError::Io { .. } => EXIT_IO,
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })
}

fn create(path: &Path) -> Result<io::BufWriter<fs::File>, CliError> {
    fs::File::create(path).map(io::BufWriter::new).map_err(|source| CliError::Io { path: path.into(), source })
}

/// JSON document printed by `solve`.
#[derive(Debug, Serialize)]
pub struct SolveReport {
    pub schema_version: u32,
    pub units: Value,
    pub k: usize,
    pub m: usize,
    pub seed: u64,
    pub trial: u64,
    pub method: MethodName,
    pub objective: &'static str,
    /// `user_order[j]` is the 1-based generation index of the j-th user in
    /// SIC order; `power` follows this order.
    pub user_order: Vec<usize>,
    pub eav_rank: usize,
    #[serde(flatten)]
    pub result: SolveResult,
}

#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Closed,
    Grid,
    Pso,
}

fn units() -> Value {
    json!({ "power": "W", "rate": "bit/s/Hz", "zeta": "bit/s/Hz/W" })
}

fn solve(args: &SolveArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = args.net.resolve()?;
    let scenario = generate_scenario(&cfg, args.trial)?;
    let problem = Problem::new(&scenario, &cfg)?;
    let objective = match args.objective {
        ObjectiveArg::Ratio => Objective::Ratio,
        ObjectiveArg::Tradeoff => Objective::Tradeoff { alpha: args.alpha },
    };
    let (result, method) = match args.method {
        MethodArg::Closed => (solve_closed_form(&problem, objective)?, MethodName::Closed),
        MethodArg::Grid | MethodArg::Pso if cfg.m == 0 => {
            return Err(CliError::Usage("search methods need at least one BD".into()));
        }
        MethodArg::Grid => (grid_search_counted(&problem, &GridConfig::default(), objective).0, MethodName::Grid),
        MethodArg::Pso => {
            let pso_cfg = PsoConfig { seed: cfg.seed, ..PsoConfig::default() };
            let mut trace = Vec::new();
            let res = pso_traced(&problem, &pso_cfg, objective, |s| trace.push(TraceRecord::from(s)));
            if let Some(path) = &args.trace {
                let mut w = create(path)?;
                for rec in &trace {
                    let line = serde_json::to_string(rec).expect("trace records serialize");
                    writeln!(w, "{line}").map_err(|source| CliError::Io { path: path.clone(), source })?;
                }
            }
            (res, MethodName::Pso)
        }
    };
    let feasible = result.feasible;
    let report = SolveReport {
        schema_version: SCHEMA_VERSION,
        units: units(),
        k: cfg.k,
        m: cfg.m,
        seed: cfg.seed,
        trial: args.trial,
        method,
        objective: match objective {
            Objective::Ratio => "ratio",
            Objective::Tradeoff { .. } => "tradeoff",
        },
        user_order: problem.order.perm.iter().map(|i| i + 1).collect(),
        eav_rank: problem.order.eav_rank,
        result,
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    writeln!(out, "{text}").map_err(|source| CliError::Io { path: "<stdout>".into(), source })?;
    if feasible {
        Ok(())
    } else {
        Err(SolveError::Infeasible { p_min: f64::INFINITY, p_max: cfg.p_max.0 }.into())
    }
}

fn sweep(args: &SweepArgs) -> Result<(), CliError> {
    let mut spec: SweepSpec = SweepSpec::from_json(&read(&args.spec)?)?;
    if let Some(t) = args.trials {
        spec.trials = t;
    }
    let cfg = args.net.resolve()?;
    let result = run_sweep_with_jobs(&spec, &cfg, args.jobs.max(1))?;
    write_sweep_csv(&result, create(&args.out)?)?;
    if spec.variable == SweepVariable::EavPosition {
        let dir = args.heatmap_dir.clone().unwrap_or_else(|| args.out.with_extension("heatmaps"));
        fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
        for scheme in &spec.schemes {
            let path = dir.join(format!("heatmap_{}.csv", scheme_file_tag(*scheme)));
            write_heatmap_csv(&result, *scheme, create(&path)?)?;
        }
    }
    Ok(())
}

fn scheme_file_tag(s: Scheme) -> String {
    match s {
        Scheme::Noma { bds } => format!("noma_{bds}bd"),
        Scheme::Oma { bds } => format!("oma_{bds}bd"),
    }
}

fn dataset(args: &DatasetArgs) -> Result<(), CliError> {
    let cfg = args.net.resolve()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| export_dataset(&cfg, args.n, args.solver, &SolverSettings::default(), &args.out))?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct BenchRow {
    pub m: usize,
    pub method: MethodName,
    pub coarse_evals: Option<usize>,
    pub fine_evals: Option<usize>,
    pub evals: usize,
    /// Median over the timed drops.
    pub wall_ms: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Evaluation counts and median wall time per BD count.
pub fn bench_rows(args: &BenchArgs) -> Result<Vec<BenchRow>, CliError> {
    let methods: Vec<MethodArg> = match args.method {
        Some(MethodArg::Closed) => return Err(CliError::Usage("bench measures grid and pso".into())),
        Some(m) => vec![m],
        None => vec![MethodArg::Grid, MethodArg::Pso],
    };
    let mut rows = Vec::new();
    for &m in &args.m {
        if m == 0 {
            return Err(CliError::Usage("bench needs at least one BD".into()));
        }
        let cfg = NetworkConfig { k: args.k, m, seed: args.seed, ..NetworkConfig::default() };
        cfg.validate()?;
        let problems: Vec<Problem> = (0..args.repeats.max(1) as u64)
            .map(|t| Ok(Problem::new(&generate_scenario(&cfg, t)?, &cfg)?))
            .collect::<Result<_, CliError>>()?;
        for &method in &methods {
            let mut times = Vec::new();
            let mut row = BenchRow { m, method: MethodName::Grid, coarse_evals: None, fine_evals: None, evals: 0, wall_ms: 0.0 };
            for (i, p) in problems.iter().enumerate() {
                let start = Instant::now();
                match method {
                    MethodArg::Grid => {
                        let (res, counts) = grid_search_counted(p, &GridConfig::default(), Objective::Ratio);
                        times.push(start.elapsed().as_secs_f64() * 1e3);
                        if i == 0 {
                            row.coarse_evals = Some(counts.coarse);
                            row.fine_evals = Some(counts.fine);
                            row.evals = res.eval_count;
                        }
                    }
                    _ => {
                        let cfg = PsoConfig { seed: args.seed.wrapping_add(i as u64), ..PsoConfig::default() };
                        let res = pso_traced(p, &cfg, Objective::Ratio, |_| {});
                        times.push(start.elapsed().as_secs_f64() * 1e3);
                        row.method = MethodName::Pso;
                        row.evals = res.eval_count;
                    }
                }
            }
            row.wall_ms = median(times);
            rows.push(row);
        }
    }
    Ok(rows)
}

fn bench(args: &BenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let rows = bench_rows(args)?;
    let doc = json!({ "schema_version": SCHEMA_VERSION, "k": args.k, "rows": rows });
    writeln!(out, "{}", serde_json::to_string_pretty(&doc).expect("bench serializes"))
        .map_err(|source| CliError::Io { path: "<stdout>".into(), source })
}

/// Flags and subcommands as JSON.
pub fn help_json() -> Value {
    fn describe(cmd: &clap::Command) -> Value {
        let args: Vec<Value> = cmd
            .get_arguments()
            .filter(|a| a.get_id() != "help" && a.get_id() != "version")
            .map(|a| {
                json!({
                    "name": a.get_id().as_str(),
                    "long": a.get_long(),
                    "help": a.get_help().map(|h| h.to_string()),
                    "required": a.is_required_set(),
                    "takes_value": a.get_action().takes_values(),
                    "default": a.get_default_values().iter().map(|v| v.to_string_lossy().into_owned()).collect::<Vec<_>>(),
                    "choices": a.get_possible_values().iter().map(|v| v.get_name().to_owned()).collect::<Vec<_>>(),
                })
            })
            .collect();
        let subs: Vec<Value> = cmd.get_subcommands().filter(|s| s.get_name() != "help").map(describe).collect();
        json!({
            "name": cmd.get_name(),
            "about": cmd.get_about().map(|h| h.to_string()),
            "args": args,
            "subcommands": subs,
        })
    }
    let mut doc = describe(&Cli::command());
    doc["schema_version"] = json!(SCHEMA_VERSION);
    doc["exit_codes"] = json!({ "ok": EXIT_OK, "infeasible": EXIT_INFEASIBLE, "usage": EXIT_USAGE, "io": EXIT_IO });
    doc
}

/// Parses `argv` and runs the command, writing results to `out` and
/// diagnostics to `err`. Returns the exit status.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
                return EXIT_OK;
            }
            let _ = write!(err, "{text}");
            return EXIT_USAGE;
        }
    };
    if cli.help_json {
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&help_json()).expect("help serializes"));
        return EXIT_OK;
    }
    let Some(command) = cli.command else {
        let _ = write!(err, "{}", Cli::command().render_usage());
        let _ = writeln!(err);
        return EXIT_USAGE;
    };
    let res = match &command {
        Command::Solve(a) => solve(a, out),
        Command::Sweep(a) => sweep(a),
        Command::Dataset(a) => dataset(a),
        Command::Bench(a) => bench(a, out),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
