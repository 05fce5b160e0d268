mod shorthand;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use switchscope::location::InputSearch;
use switchscope::observer::{run_observer, ObserverConfig};
use switchscope::report::{analyze, AnalysisConfig};
use switchscope::simulate::{simulate, validate_execution, Execution, SimulationConfig, TraceHeader};
use switchscope::stability::{DetectabilityStatus, StabilityConfig};
use switchscope::subspace::Vector;
use switchscope::system::SwitchingSystem;

const EXIT_NOT_DETECTABLE: u8 = 2;
const EXIT_UNKNOWN: u8 = 3;
const EXIT_INPUT_ERROR: u8 = 1;

#[derive(Parser, Debug)]
#[command(name = "switchscope", version, about = "Observability and detectability of linear switching systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// System document (JSON).
    system: PathBuf,
    /// Defaults for every setting, overridden by flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Location observability, observability, decomposition, stability and detectability.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Numerical rank tolerance.
        #[arg(long, env = "SWITCHSCOPE_TOL", value_parser = positive)]
        tol: Option<f64>,
        /// Print the JSON report instead of the summary.
        #[arg(long)]
        json: bool,
        /// Search for a distinguishing exponential input.
        #[arg(long)]
        find_input: bool,
    },
    /// Simulate an execution and write `<out>.csv` with a `<out>.json` header.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Initial condition as MODE:x1,x2,...
        #[arg(long)]
        initial: String,
        /// none, random:MIN:MAX[:SEED], schedule:T@FROM>TO,..., or JSON.
        #[arg(long, default_value = "none")]
        policy: String,
        /// zero, exp:LAMBDA:z1,z2,..., or JSON.
        #[arg(long, default_value = "zero")]
        input: String,
        /// Simulated time span in seconds (default 1)
        #[arg(long, value_parser = positive)]
        horizon: Option<f64>,
        /// RK4 step (default 1e-3)
        #[arg(long, value_parser = positive)]
        dt: Option<f64>,
        /// Output path prefix.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the hybrid observer on a simulated trace.
    Observe {
        #[command(flatten)]
        common: Common,
        /// Trace written by `simulate` (the .csv, the .json header, or their common prefix).
        #[arg(long)]
        trace: PathBuf,
        /// Convergence radius; 0 asks for exact reconstruction.
        #[arg(long, value_parser = nonnegative)]
        epsilon: Option<f64>,
        /// Print the JSON report instead of the summary.
        #[arg(long)]
        json: bool,
        /// Also write the per-sample estimates as CSV.
        #[arg(long)]
        estimates: Option<PathBuf>,
    },
    /// Check a system document, and optionally a trace against it.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Trace to check for guard, reset and dimension consistency
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be positive and finite, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn nonnegative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be nonnegative and finite, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulationDefaults {
    horizon: f64,
    dt: f64,
    guard_tol: f64,
}

impl Default for SimulationDefaults {
    fn default() -> Self {
        let c = SimulationConfig::default();
        Self { horizon: c.horizon, dt: c.dt, guard_tol: c.guard_tol }
    }
}

/// The `--config` document.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    tol: Option<f64>,
    stability: StabilityConfig,
    input_search: InputSearch,
    simulation: SimulationDefaults,
    observer: ObserverConfig,
    epsilon: f64,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            tol: None,
            stability: StabilityConfig::default(),
            input_search: InputSearch::default(),
            simulation: SimulationDefaults::default(),
            observer: ObserverConfig::default(),
            epsilon: 1e-3,
        }
    }
}

impl Common {
    fn load(&self) -> Result<(SwitchingSystem, FileConfig)> {
        let text =
            fs::read_to_string(&self.system).with_context(|| format!("cannot read {}", self.system.display()))?;
        let sys = SwitchingSystem::from_json(&text).with_context(|| format!("{}", self.system.display()))?;
        let cfg = match &self.config {
            None => FileConfig::default(),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("{}", p.display()))?
            }
        };
        Ok((sys, cfg))
    }
}

fn trace_paths(p: &Path) -> (PathBuf, PathBuf) {
    match p.extension().and_then(|e| e.to_str()) {
        Some("csv") | Some("json") => (p.with_extension("csv"), p.with_extension("json")),
        _ => (with_suffix(p, ".csv"), with_suffix(p, ".json")),
    }
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_trace(p: &Path) -> Result<Execution> {
    let (csv_path, json_path) = trace_paths(p);
    let header: TraceHeader = serde_json::from_str(
        &fs::read_to_string(&json_path).with_context(|| format!("cannot read {}", json_path.display()))?,
    )
    .with_context(|| format!("{}", json_path.display()))?;
    let csv_in = File::open(&csv_path).with_context(|| format!("cannot read {}", csv_path.display()))?;
    Execution::from_trace(header, csv_in).with_context(|| format!("{}", csv_path.display()))
}

fn check_trace(sys: &SwitchingSystem, exec: &Execution, guard_tol: f64) -> Result<()> {
    if let (Some(a), Some(b)) = (sys.name(), exec.system.as_deref()) {
        if a != b {
            bail!("trace was produced by system {b:?}, not {a:?}");
        }
    }
    validate_execution(sys, exec, guard_tol).context("trace does not match the system")
}

fn cmd_analyze(common: &Common, tol: Option<f64>, json: bool, find_input: bool) -> Result<u8> {
    let (sys, file) = common.load()?;
    let mut stability = file.stability;
    if let Some(t) = tol.or(file.tol) {
        stability.tol = t;
    }
    let cfg = AnalysisConfig { stability, find_input, input_search: file.input_search };
    let report = analyze(&sys, &cfg)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.summary());
    }
    Ok(match report.detectability.status {
        DetectabilityStatus::Detectable => 0,
        DetectabilityStatus::NotDetectable => EXIT_NOT_DETECTABLE,
        DetectabilityStatus::Unknown => EXIT_UNKNOWN,
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    common: &Common,
    initial: &str,
    policy: &str,
    input: &str,
    horizon: Option<f64>,
    dt: Option<f64>,
    out: &Path,
) -> Result<u8> {
    let (sys, file) = common.load()?;
    let (mode, x0) = shorthand::initial(initial)?;
    let input = shorthand::input(input)?;
    let policy = shorthand::policy(policy)?;
    let cfg = SimulationConfig {
        horizon: horizon.unwrap_or(file.simulation.horizon),
        dt: dt.unwrap_or(file.simulation.dt),
        guard_tol: file.simulation.guard_tol,
    };
    let exec = simulate(&sys, &mode, &Vector::from_vec(x0), &input, &policy, &cfg)?;
    validate_execution(&sys, &exec, cfg.guard_tol).context("simulated execution failed validation")?;
    let (csv_path, json_path) = trace_paths(out);
    exec.write_csv(BufWriter::new(
        File::create(&csv_path).with_context(|| format!("cannot create {}", csv_path.display()))?,
    ))?;
    fs::write(&json_path, serde_json::to_string_pretty(&exec.header())?)
        .with_context(|| format!("cannot create {}", json_path.display()))?;
    println!(
        "{} samples, modes {}, wrote {} and {}",
        exec.sample_count(),
        exec.mode_sequence().join(" -> "),
        csv_path.display(),
        json_path.display()
    );
    Ok(0)
}

fn cmd_observe(
    common: &Common,
    trace: &Path,
    epsilon: Option<f64>,
    json: bool,
    estimates: Option<&Path>,
) -> Result<u8> {
    let (sys, file) = common.load()?;
    let exec = load_trace(trace)?;
    check_trace(&sys, &exec, file.simulation.guard_tol)?;
    let eps = epsilon.unwrap_or(file.epsilon);
    let run = run_observer(&sys, &exec, &file.observer, eps)?;
    if let Some(p) = estimates {
        run.write_csv(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?))?;
    }
    let r = &run.report;
    if json {
        println!("{}", serde_json::to_string_pretty(r)?);
        return Ok(0);
    }
    match r.t_hat {
        Some(t) => println!("t_hat = {t} for epsilon = {eps}"),
        None => println!("t_hat not achieved for epsilon = {eps}"),
    }
    if eps == 0.0 {
        println!("exact reconstruction checked to {:e}", r.effective_epsilon);
    }
    println!(
        "mode accuracy {:.4} over {} samples ({} ambiguous, {} misidentified, {} skipped, {} low confidence)",
        r.mode_accuracy, r.evaluated, r.ambiguous, r.misidentified, r.skipped, r.low_confidence
    );
    for i in &r.intervals {
        let err = i.max_error.map(|e| format!("{e:.3e}")).unwrap_or_else(|| "-".into());
        println!("  interval {} mode {} [{:.4}, {:.4}]: max error {err}", i.index, i.mode, i.start, i.end);
    }
    for w in &r.warnings {
        println!("warning: {w}");
    }
    Ok(0)
}

fn cmd_validate(common: &Common, trace: Option<&Path>) -> Result<u8> {
    let (sys, file) = common.load()?;
    println!(
        "{}: {} modes, {} edges, input dimension {}, output dimension {}",
        sys.name().unwrap_or("system"),
        sys.len(),
        sys.edges().len(),
        sys.input_dim(),
        sys.output_dim()
    );
    if let Some(p) = trace {
        let exec = load_trace(p)?;
        check_trace(&sys, &exec, file.simulation.guard_tol)?;
        println!("trace: {} samples over {} intervals, valid", exec.sample_count(), exec.intervals.len());
    }
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    match &cli.command {
        Command::Analyze { common, tol, json, find_input } => cmd_analyze(common, *tol, *json, *find_input),
        Command::Simulate { common, initial, policy, input, horizon, dt, out } => {
            cmd_simulate(common, initial, policy, input, *horizon, *dt, out)
        }
        Command::Observe { common, trace, epsilon, json, estimates } => {
            cmd_observe(common, trace, *epsilon, *json, estimates.as_deref())
        }
        Command::Validate { common, trace } => cmd_validate(common, trace.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT_ERROR)
        }
    }
}
