use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tpemimo::asymptotics::moment_table;
use tpemimo::channel::{variance_profile, VarianceProfile};
use tpemimo::harness::{builtin_scenarios, emit, run_experiment, ExperimentSpec, Format, BUILTIN_SCENARIOS};
use tpemimo::latency::{amplification_sweep, dtpep_comparison, unit_latencies, wall_clock, write_sweep_csv, LatencyParams, Scheme};
use tpemimo::{Error, Result};

#[derive(Parser)]
#[command(name = "tpemimo", version, about = "TPE precoding experiments, latency model and moment tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo ergodic rates for a scenario.
    Run {
        /// TOML experiment file.
        #[arg(long, conflicts_with = "scenario")]
        spec: Option<PathBuf>,
        /// Builtin scenario name.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, value_delimiter = ',', default_values = ["csv", "json"])]
        format: Vec<OutputFormat>,
        /// Print the resolved spec as TOML and exit.
        #[arg(long)]
        dump_spec: bool,
    },
    /// Cycle counts of the hardware latency model.
    Latency {
        #[arg(long, default_value_t = 160)]
        m: u64,
        #[arg(long, default_value_t = 16)]
        k: u64,
        #[arg(long, default_value_t = 4)]
        j: u64,
        #[arg(long, default_value_t = 4)]
        u: u64,
        /// Subcarriers per resource block.
        #[arg(long, default_value_t = 12)]
        s: u64,
        /// Sweep `M = 40, 80, …, 320` with `K = M/10` over all `U` instead.
        #[arg(long)]
        sweep: bool,
        /// Write the sweep CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Large-system moment tables (`user,order,gamma,rho`).
    Moments {
        #[arg(long, conflicts_with = "spec")]
        scenario: Option<String>,
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Constant profile with this load instead of a scenario.
        #[arg(long, conflicts_with_all = ["scenario", "spec"])]
        iid_beta: Option<f64>,
        #[arg(long, default_value_t = 100)]
        m: usize,
        #[arg(long, default_value_t = 5)]
        order: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve_spec(spec: Option<PathBuf>, scenario: Option<String>) -> Result<ExperimentSpec> {
    match (spec, scenario) {
        (Some(path), _) => ExperimentSpec::load(&path),
        (None, Some(name)) => builtin_scenarios(&name),
        (None, None) => Err(Error::Config(format!("give --spec or --scenario (one of {})", BUILTIN_SCENARIOS.join(", ")))),
    }
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
            }
            let f = fs::File::create(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
            Ok(Box::new(io::BufWriter::new(f)))
        }
        None => Ok(Box::new(io::stdout().lock())),
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    spec: Option<PathBuf>,
    scenario: Option<String>,
    seed: Option<u64>,
    trials: Option<usize>,
    out: Option<PathBuf>,
    workers: Option<usize>,
    format: Vec<OutputFormat>,
    dump_spec: bool,
) -> Result<bool> {
    let mut spec = resolve_spec(spec, scenario)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(t) = trials {
        spec.trials = t;
    }
    if let Some(o) = out {
        spec.output = o;
    }
    if workers.is_some() {
        spec.workers = workers;
    }
    spec.validate()?;
    if dump_spec {
        print!("{}", spec.to_toml_string()?);
        return Ok(true);
    }
    let table = run_experiment(&spec)?;
    let formats: Vec<Format> = format
        .iter()
        .map(|f| match f {
            OutputFormat::Csv => Format::Csv,
            OutputFormat::Json => Format::Json,
        })
        .collect();
    let files = emit(&table, &spec.output, &formats)?;
    println!("{:<14} {:>7} {:>10} {:>8}", "precoder", "snr_db", "sum_rate", "stderr");
    for s in &table.sum_rates {
        println!("{:<14} {:>7} {:>10.3} {:>8.3}", s.precoder, s.snr_db, s.mean, s.stderr);
    }
    println!("wrote {} files under {}", files.len(), spec.output.display());
    for f in &table.failures {
        eprintln!("failed cell {} at {} dB: {}", f.precoder, f.snr_db, f.reason);
    }
    Ok(table.is_complete())
}

fn latency(m: u64, k: u64, j: u64, u: u64, s: u64, sweep: bool, out: Option<PathBuf>) -> Result<()> {
    let base = LatencyParams { s, ..LatencyParams::with_size(m, k, j, u) };
    if sweep {
        let sizes: Vec<(u64, u64, u64)> = (1..=8).map(|i| (40 * i, 4 * i, j)).collect();
        let rows = amplification_sweep(&base, &sizes)?;
        return write_sweep_csv(&rows, sink(out.as_deref())?);
    }
    let r = unit_latencies(&base)?;
    let d = dtpep_comparison(&base)?;
    let text = serde_json::to_string_pretty(&r).map_err(|e| Error::Parse(e.to_string()))?;
    let mut w = sink(out.as_deref())?;
    let io = |source| Error::Io { path: out.clone().unwrap_or_else(|| "stdout".into()), source };
    writeln!(w, "{text}").map_err(io)?;
    let tpe = tpemimo::latency::total_latency(&base, Scheme::Tpe)?;
    let rzf = tpemimo::latency::total_latency(&base, Scheme::Rzf)?;
    writeln!(
        w,
        "TPE {tpe} cycles ({:.2} µs), RZF {rzf} cycles ({:.2} µs), amplification {:.3}, DTPEP/TPEP {:.3} at s={s}",
        wall_clock(&base, tpe) * 1e6,
        wall_clock(&base, rzf) * 1e6,
        r.alpha_rzf,
        d.alpha
    )
    .map_err(io)
}

fn moments(
    scenario: Option<String>,
    spec: Option<PathBuf>,
    iid_beta: Option<f64>,
    m: usize,
    order: usize,
    out: Option<PathBuf>,
) -> Result<()> {
    let profile = match iid_beta {
        Some(beta) => {
            let k = (beta * m as f64).round() as usize;
            if k == 0 {
                return Err(Error::Config(format!("load {beta} leaves no users at M={m}")));
            }
            VarianceProfile::constant(m, k, 1.0)
        }
        None => {
            let spec = resolve_spec(spec, scenario)?;
            let cov = spec.scenario.covariance()?;
            variance_profile(&cov, &vec![1.0; spec.scenario.k])?
        }
    };
    moment_table(&profile, order)?.write_csv(sink(out.as_deref())?)
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Run { spec, scenario, seed, trials, out, workers, format, dump_spec } => {
            run(spec, scenario, seed, trials, out, workers, format, dump_spec)
        }
        Command::Latency { m, k, j, u, s, sweep, out } => latency(m, k, j, u, s, sweep, out).map(|_| true),
        Command::Moments { scenario, spec, iid_beta, m, order, out } => moments(scenario, spec, iid_beta, m, order, out).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
