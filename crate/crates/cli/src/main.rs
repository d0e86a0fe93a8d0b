use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use regimetest::cohort::{event_grid, load_cohort};
use regimetest::config::{parse_config, run_analysis, AnalysisConfig};
use regimetest::logrank::regime_cumhaz;
use regimetest::propensity::fit_propensity;
use regimetest::sim::diagnostics::{hazard_diagnostics, write_hazard_csv, HazardModel};
use regimetest::sim::monte_carlo::{monte_carlo, McOptions, McVariant};
use regimetest::sim::scenarios::{select_regimes, threshold_regimes, ScenarioConfig};
use regimetest::{Error, ErrorClass, TestResult, Truncation};

#[derive(Parser)]
#[command(name = "regimetest", version, about = "Generalized logrank tests for treatment regimes")]
struct Cli {
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    log_level: LogLevel,
    /// Worker threads for `simulate`.
    #[arg(long, global = true, env = "REGIMETEST_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LogLevel {
    Error,
    Warn,
    Info,
}

#[derive(Subcommand)]
enum Command {
    /// Test equality of survival across the configured regimes.
    Test(DataArgs),
    /// Weighted cumulative hazard and survival for each configured regime.
    Curves(DataArgs),
    /// Monte Carlo rejection rates for a generative scenario.
    Simulate(SimulateArgs),
    /// Closed-form hazards of a scenario's generative model.
    DiagnoseHazards(DiagnoseArgs),
    /// Load and validate a cohort without testing.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Summary destination; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Named scenario id (1a, 1b, 1b-alt, 2a, 2b, 2b-alt, 3a, 3b, 3c, 4, 5, 3stage).
    #[arg(long, required_unless_present = "scenario_config")]
    scenario: Option<String>,
    /// JSON scenario configuration for custom parameters.
    #[arg(long, conflicts_with = "scenario")]
    scenario_config: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    zeta: f64,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Comma-separated 1-based positions in the embedded regime list.
    #[arg(long, value_delimiter = ',', conflicts_with = "threshold_regimes")]
    regime_set: Option<Vec<usize>>,
    /// Compare the three covariate-threshold regimes (two-stage, binary options).
    #[arg(long)]
    threshold_regimes: bool,
    #[arg(long, value_delimiter = ',', default_value = "U_nocov,C_nocov,U_cov,C_cov")]
    variants: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    at_risk_fraction: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 3.0)]
    u_max: f64,
    #[arg(long, default_value_t = 301)]
    points: usize,
    #[arg(long)]
    out: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.class() {
            ErrorClass::Data => 2,
            ErrorClass::Numerical => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

/// Writes via a temporary file in the destination directory, then renames.
fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> regimetest::Result<()>) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    fill(tmp.as_file_mut())?;
    tmp.as_file_mut().flush()?;
    tmp.persist(path).map_err(|e| Failure::from(e.error))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

#[derive(Serialize)]
struct TestOutput<'a> {
    #[serde(flatten)]
    result: &'a TestResult,
    data: String,
    config: AnalysisConfig,
}

#[derive(Serialize)]
struct RunEcho {
    command: &'static str,
    data: String,
    config: AnalysisConfig,
    #[serde(rename = "L")]
    truncation: f64,
}

fn load(args_data: &Path, args_config: &Path) -> Result<(AnalysisConfig, regimetest::Cohort), Failure> {
    let config = parse_config(args_config)?;
    let design = config.design()?;
    let cohort = load_cohort(args_data, &design)?;
    Ok((config, cohort))
}

fn cmd_test(args: &DataArgs) -> Result<ExitCode, Failure> {
    let (config, cohort) = load(&args.data, &args.config)?;
    let result = run_analysis(&cohort, &config)?;
    log::info!(
        "statistic {:.4} on {} df, p = {:.4}",
        result.statistic,
        result.nu,
        result.p_value
    );
    write_json(
        &args.out,
        &TestOutput {
            result: &result,
            data: args.data.display().to_string(),
            config: config.resolved(),
        },
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_curves(args: &DataArgs) -> Result<ExitCode, Failure> {
    let (config, cohort) = load(&args.data, &args.config)?;
    let regimes = config.selected_regimes(cohort.design(), 1)?;
    let fitted = fit_propensity(&cohort, &config.propensity)?;
    let l = config.truncation().resolve(&cohort);
    let grid = event_grid(&cohort, l)?;
    let mut curves = Vec::with_capacity(regimes.len());
    for r in &regimes {
        let c = regime_cumhaz(&cohort, r, &fitted, &grid)?;
        if c.dropped > 0 {
            log::warn!("{}: {} grid points with an empty weighted risk set", r.label, c.dropped);
        }
        curves.push(c);
    }
    write_atomic(&args.out, |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["regime", "time", "cumhaz", "survival"])?;
        for c in &curves {
            for ((t, h), s) in c.times.iter().zip(&c.cumhaz).zip(&c.survival) {
                wr.write_record([c.label.clone(), t.to_string(), h.to_string(), s.to_string()])?;
            }
        }
        wr.flush()?;
        Ok(())
    })?;
    write_json(
        &sidecar(&args.out),
        &RunEcho {
            command: "curves",
            data: args.data.display().to_string(),
            config: config.resolved(),
            truncation: l,
        },
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<ExitCode, Failure> {
    let scenario = match (&args.scenario, &args.scenario_config) {
        (Some(id), _) => ScenarioConfig::named(id, args.n, args.zeta)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)?;
            let s: ScenarioConfig =
                serde_json::from_str(&text).map_err(|e| Failure::from(Error::Config(e.to_string())))?;
            s.validate()?;
            s
        }
        (None, None) => return Err(usage("one of --scenario or --scenario-config is required")),
    };
    let embedded = scenario.embedded_regimes();
    let regimes = if args.threshold_regimes {
        threshold_regimes(&scenario.design())?
    } else if let Some(set) = &args.regime_set {
        select_regimes(&embedded, set)?
    } else {
        embedded
    };
    let variants = args
        .variants
        .iter()
        .map(|v| v.parse::<McVariant>())
        .collect::<regimetest::Result<Vec<_>>>()?;
    let options = McOptions {
        reps: args.reps,
        master_seed: args.seed,
        alpha: args.alpha,
        truncation: args
            .at_risk_fraction
            .map(Truncation::AtRiskFraction)
            .unwrap_or_default(),
        variants,
        ..McOptions::default()
    };
    let report = monte_carlo(&scenario, &regimes, &options)?;
    for v in &report.variants {
        log::info!("{}: {:.3} (se {:.3})", v.variant.name(), v.rate, v.mc_se);
    }
    if report.failed_replicates > 0 {
        log::warn!("{} replicates failed", report.failed_replicates);
    }
    write_atomic(&args.out, |w| report.write_csv(w))?;
    write_json(&sidecar(&args.out), &report)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<ExitCode, Failure> {
    let scenario = ScenarioConfig::named(&args.scenario, 1, 0.0)?;
    let model = HazardModel::from_scenario(&scenario)?;
    if args.points < 2 || !(args.u_max.is_finite() && args.u_max > 0.0) {
        return Err(usage("--points must be at least 2 and --u-max positive"));
    }
    let step = args.u_max / (args.points - 1) as f64;
    let grid: Vec<f64> = (0..args.points).map(|i| i as f64 * step).collect();
    let rows = hazard_diagnostics(&model, &grid)?;
    write_atomic(&args.out, |w| write_hazard_csv(&rows, w))?;
    #[derive(Serialize)]
    struct Echo<'a> {
        command: &'static str,
        scenario: &'a str,
        model: HazardModel,
        u_max: f64,
        points: usize,
    }
    write_json(
        &sidecar(&args.out),
        &Echo {
            command: "diagnose-hazards",
            scenario: &args.scenario,
            model,
            u_max: args.u_max,
            points: args.points,
        },
    )?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct CohortSummary {
    subjects: usize,
    events: usize,
    kappa_counts: Vec<usize>,
    strata: Vec<StratumCount>,
}

#[derive(Serialize)]
struct StratumCount {
    stage: usize,
    stratum: String,
    subjects: usize,
}

fn cmd_validate(args: &ValidateArgs) -> Result<ExitCode, Failure> {
    let (_, cohort) = load(&args.data, &args.config)?;
    let design = cohort.design();
    let mut kappa_counts = vec![0; design.stages()];
    for s in cohort.subjects() {
        kappa_counts[s.kappa - 1] += 1;
    }
    let mut strata = Vec::new();
    for k in 1..=design.stages() {
        for (j, st) in design.strata(k).iter().enumerate() {
            let subjects = (0..cohort.len()).filter(|&i| cohort.stratum(i, k) == Some(j)).count();
            strata.push(StratumCount {
                stage: k,
                stratum: st.name.clone(),
                subjects,
            });
        }
    }
    let summary = CohortSummary {
        subjects: cohort.len(),
        events: cohort.subjects().iter().filter(|s| s.delta).count(),
        kappa_counts,
        strata,
    };
    match &args.out {
        Some(p) => write_json(p, &summary)?,
        None => println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes")),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.log_level {
        LogLevel::Error => log::LevelFilter::Error,
        LogLevel::Warn => log::LevelFilter::Warn,
        LogLevel::Info => log::LevelFilter::Info,
    };
    env_logger::Builder::new().filter_level(level).init();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let outcome = match &cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Curves(a) => cmd_curves(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::DiagnoseHazards(a) => cmd_diagnose(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
