use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use oraclenet::config::{collect_axes, expand_grid, ConfigFile, GridAxis};
use oraclenet::queue::{
    lambda_grid, project, read_samples, synthetic_dataset, ChainTime, QueueScenario, ScenarioLabel,
};
use oraclenet::report::{summarize, write_metrics_csv, CellSummary};
use oraclenet::selftest::{run_suite, SuiteSizes};
use oraclenet::sim::{run_experiment, ExperimentMetrics, SimConfig, Variant};

const DEFAULT_SEED: u64 = 42;
const DEFAULT_REPS: usize = 15;

/// Simulator for a reputation-driven decentralized IoT oracle network.
#[derive(Parser, Debug)]
#[command(name = "oraclenet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run replications of one configuration.
    Simulate(RunArgs),
    /// Run the Cartesian product of parameter grids.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Grid axis, e.g. `rmi=0.1,0.2`. Keys: rmi, rmo, omega, arrival, variant.
        #[arg(long = "grid", value_name = "KEY=V1,V2,...")]
        grid: Vec<String>,
    },
    /// Project end-to-end delay with the M/M/1 model.
    QueueProject(QueueArgs),
    /// Run the protocol invariant suite.
    Selftest {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Run a reduced number of cases.
        #[arg(long)]
        quick: bool,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment file (flat TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// med, medr or medrb.
    #[arg(long)]
    variant: Option<String>,
    /// Ban threshold for medrb.
    #[arg(long, allow_hyphen_values = true)]
    omega: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for replications.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct QueueArgs {
    /// Total chain times in ms; each becomes a projected scenario.
    #[arg(long, value_delimiter = ',', default_values_t = [8000u64, 4000, 2000, 1000])]
    wc: Vec<u64>,
    /// CSV of (lambda, processing ms). Defaults to the bundled synthetic set.
    #[arg(long)]
    wp: Option<PathBuf>,
    /// CSV of (lambda, end-to-end ms) for the observed scenario. Defaults to
    /// the bundled synthetic set.
    #[arg(long)]
    observed: Option<PathBuf>,
    /// Skip the observed scenario.
    #[arg(long)]
    no_observed: bool,
    #[arg(long, default_value_t = 0.1)]
    lambda_from: f64,
    #[arg(long, default_value_t = 10.0)]
    lambda_to: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda_step: f64,
    /// Degree of the regression polynomial for mu(lambda).
    #[arg(long, default_value_t = 1)]
    degree: usize,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
enum Failure {
    Config(String),
    Invariant(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Invariant(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Invariant(m) => write!(f, "invariant failure: {m}"),
            Failure::Runtime(m) => write!(f, "runtime failure: {m}"),
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn config<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Config(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Sweep { run, grid } => cmd_sweep(&run, &grid),
        Command::QueueProject(args) => cmd_queue_project(&args),
        Command::Selftest { seed, quick } => cmd_selftest(seed, quick),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("oraclenet: {f}");
            ExitCode::from(f.code())
        }
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config_path: Option<String>,
    output_dir: String,
    base_seed: u64,
    variants: Vec<String>,
    replications: usize,
    jobs: usize,
    grid: Vec<String>,
    timestamp_unix: u64,
    version: &'static str,
}

struct Resolved {
    file: ConfigFile,
    config: SimConfig,
    variant: Variant,
    seed: u64,
    reps: usize,
}

fn resolve(args: &RunArgs) -> Result<Resolved, Failure> {
    let mut file = match &args.config {
        Some(p) => ConfigFile::load(p).map_err(config)?,
        None => ConfigFile::default(),
    };
    if let Some(v) = &args.variant {
        file.variant = Some(v.clone());
    }
    if let Some(w) = args.omega {
        file.omega = Some(w);
    }
    let sim = file.sim_config().map_err(config)?;
    let variant = file.variant().map_err(config)?;
    let seed = args.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    let reps = args.reps.or(file.replications).unwrap_or(DEFAULT_REPS);
    if reps == 0 {
        return Err(Failure::Config("replication count must be positive".into()));
    }
    if args.jobs == 0 {
        return Err(Failure::Config("--jobs must be positive".into()));
    }
    Ok(Resolved { file, config: sim, variant, seed, reps })
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut f = BufWriter::new(fs::File::create(path).map_err(runtime)?);
    serde_json::to_writer_pretty(&mut f, value).map_err(runtime)?;
    writeln!(f).map_err(runtime)?;
    f.flush().map_err(runtime)
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn run_cell(cfg: &SimConfig, variant: Variant, r: &Resolved, jobs: usize) -> Result<Vec<ExperimentMetrics>, Failure> {
    eprintln!(
        "running {variant} omega={:?} rmi={} rmo={} arrival={} x{}",
        variant.omega(),
        cfg.attack.rmi,
        cfg.attack.rmo,
        cfg.attack.arrival,
        r.reps
    );
    run_experiment(cfg, variant, r.reps, r.seed, jobs).map_err(|e| match e {
        oraclenet::sim::SimError::Config(m) => Failure::Config(m),
        other => runtime(other),
    })
}

fn write_outputs(
    out: &Path,
    cells: &[(Vec<ExperimentMetrics>, usize)],
    manifest: &RunManifest<'_>,
) -> Result<(), Failure> {
    let csv_path = out.join("metrics.csv");
    let mut w = BufWriter::new(fs::File::create(&csv_path).map_err(runtime)?);
    let mut summaries: Vec<CellSummary> = Vec::new();
    for (i, (runs, accuracy_last)) in cells.iter().enumerate() {
        write_metrics_csv(&mut w, runs, i == 0).map_err(runtime)?;
        summaries.extend(summarize(runs, *accuracy_last));
    }
    w.flush().map_err(runtime)?;
    write_json(&out.join("summary.json"), &summaries)?;
    write_json(&out.join("manifest.json"), manifest)?;
    for s in &summaries {
        let acc = s.accuracy.map(|e| e.mean).unwrap_or(f64::NAN);
        let (p, r) = (s.precision.map(|e| e.mean), s.recall.map(|e| e.mean));
        eprintln!(
            "{} omega={:?} rmi={} rmo={} {}: accuracy {:.3} precision {:.3} recall {:.3}",
            s.variant,
            s.omega,
            s.rmi,
            s.rmo,
            s.arrival,
            acc,
            p.unwrap_or(f64::NAN),
            r.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn cmd_simulate(args: &RunArgs) -> Result<(), Failure> {
    let r = resolve(args)?;
    prepare_out(&args.out)?;
    let runs = run_cell(&r.config, r.variant, &r, args.jobs)?;
    let manifest = RunManifest {
        command: "simulate",
        config_path: args.config.as_ref().map(|p| p.display().to_string()),
        output_dir: args.out.display().to_string(),
        base_seed: r.seed,
        variants: vec![r.variant.to_string()],
        replications: r.reps,
        jobs: args.jobs,
        grid: Vec::new(),
        timestamp_unix: now_unix(),
        version: env!("CARGO_PKG_VERSION"),
    };
    write_outputs(&args.out, &[(runs, r.config.accuracy_last as usize)], &manifest)
}

fn cmd_sweep(args: &RunArgs, grid: &[String]) -> Result<(), Failure> {
    let r = resolve(args)?;
    let extra = grid.iter().map(|g| GridAxis::parse(g)).collect::<Result<Vec<_>, _>>().map_err(config)?;
    let axes = collect_axes(&r.file, &extra).map_err(config)?;
    let cells = expand_grid(&r.config, r.variant, &axes).map_err(config)?;
    prepare_out(&args.out)?;
    let mut results = Vec::with_capacity(cells.len());
    let mut variants: Vec<String> = Vec::new();
    for cell in &cells {
        let label = cell.variant.to_string();
        if !variants.contains(&label) {
            variants.push(label);
        }
        results.push((run_cell(&cell.config, cell.variant, &r, args.jobs)?, cell.config.accuracy_last as usize));
    }
    let manifest = RunManifest {
        command: "sweep",
        config_path: args.config.as_ref().map(|p| p.display().to_string()),
        output_dir: args.out.display().to_string(),
        base_seed: r.seed,
        variants,
        replications: r.reps,
        jobs: args.jobs,
        grid: axes.iter().map(|a| a.key().to_string()).collect(),
        timestamp_unix: now_unix(),
        version: env!("CARGO_PKG_VERSION"),
    };
    write_outputs(&args.out, &results, &manifest)
}

fn load_samples(path: &Path) -> Result<Vec<(f64, f64)>, Failure> {
    let f = fs::File::open(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    read_samples(f).map_err(config)
}

fn cmd_queue_project(args: &QueueArgs) -> Result<(), Failure> {
    if !(args.lambda_step > 0.0 && args.lambda_to >= args.lambda_from && args.lambda_from >= 0.0) {
        return Err(Failure::Config("lambda range must satisfy 0 <= from <= to with a positive step".into()));
    }
    let grid = lambda_grid(args.lambda_from, args.lambda_to, args.lambda_step);
    let bundled = synthetic_dataset();
    let mut scenarios: Vec<QueueScenario> = Vec::new();
    if !args.no_observed {
        let observed = match &args.observed {
            Some(p) => load_samples(p)?,
            None => bundled.observed.clone(),
        };
        scenarios.push(QueueScenario {
            label: ScenarioLabel::E0,
            wc: ChainTime::Observed,
            wp_samples: observed,
            lambda_grid: grid.clone(),
        });
    }
    let wp = match &args.wp {
        Some(p) => load_samples(p)?,
        None => bundled.processing.clone(),
    };
    for &ms in &args.wc {
        let label = ScenarioLabel::for_chain_ms(ms);
        scenarios.push(QueueScenario { label, wc: label.chain_ms(), wp_samples: wp.clone(), lambda_grid: grid.clone() });
    }

    let sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(fs::File::create(p).map_err(runtime)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(BufWriter::new(sink));
    w.write_record(["scenario", "lambda", "mu_forecast", "W", "stable"]).map_err(runtime)?;
    for s in &scenarios {
        let points = project(s, args.degree).map_err(config)?;
        for p in points {
            w.write_record([
                s.label.to_string(),
                p.lambda.to_string(),
                p.mu_forecast.to_string(),
                p.wait_ms().map(|x| x.to_string()).unwrap_or_else(|| "inf".into()),
                p.wait.is_stable().to_string(),
            ])
            .map_err(runtime)?;
        }
    }
    w.flush().map_err(runtime)
}

fn cmd_selftest(seed: u64, quick: bool) -> Result<(), Failure> {
    let sizes = if quick {
        SuiteSizes { vrf_cases: 200, selection_cases: 200, gathering_rounds: 200 }
    } else {
        SuiteSizes::default()
    };
    let outcomes = run_suite(sizes, seed);
    let mut failed = Vec::new();
    for o in &outcomes {
        let status = if o.passed() { "PASS" } else { "FAIL" };
        println!("{status} {:<30} {} cases, {} failures", o.name, o.cases, o.failures);
        if let Some(first) = &o.first_failure {
            println!("     first failure: {first}");
        }
        if !o.passed() {
            failed.push(o.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariant(failed.join(", ")))
    }
}
