use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cpsched::config::ScenarioConfig;
use cpsched::output::{self, CsvMeta, SummaryRow};
use cpsched::penalty::{fit_model, ScenarioKind, SurfaceParams};
use cpsched::sched::SchedulerKind;
use cpsched::sim::{self, RunOptions, SweepSpec};
use cpsched::{oracle, Error};

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Multi-region collaborative-perception scheduling simulator.
#[derive(Parser, Debug)]
#[command(name = "cpsched", version)]
struct Cli {
    /// Worker threads for sweeps (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one simulation and write per-slot, summary and trajectory CSVs.
    Run(RunArgs),
    /// Run a sweep file and write per-run and aggregated CSVs.
    Sweep(SweepArgs),
    /// Check a configuration without running it.
    Validate(ConfigArgs),
    /// Fit a penalty surface to `h_s,b_log,ap` samples.
    Fit(FitArgs),
    /// Run the renewal and refresh-objective self-check batteries.
    Oracle(OracleArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML scenario file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<u64>,
    /// tamp, age_prio, rate_prio, gea or max_weight.
    #[arg(long)]
    scheduler: Option<String>,
    #[arg(long)]
    warmup: Option<u64>,
    /// Dotted-key override such as `scheduler.capacity_m=4`; repeatable, last wins.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory.
    #[arg(long, env = "CPSCHED_OUT_DIR", default_value = "out")]
    out: PathBuf,
    /// Skip the per-slot CSV.
    #[arg(long)]
    no_slots: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Sweep file: scenario keys plus a `[sweep]` table.
    spec: PathBuf,
    /// Base seed; replication r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long, env = "CPSCHED_OUT_DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// CSV with columns `h_s,b_log,ap`.
    samples: PathBuf,
    /// intersection or corridor.
    #[arg(long)]
    kind: String,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Error paired with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        Failure { code, message: e.to_string() }
    }
}

fn config_failure(path: &Path, e: Error) -> Failure {
    match e {
        Error::Io(io) => Failure {
            code: EXIT_CONFIG,
            message: format!("cannot read {}: {io}", path.display()),
        },
        other => other.into(),
    }
}

fn load_config(args: &ConfigArgs) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => ScenarioConfig::from_file(path).map_err(|e| config_failure(path, e))?,
        None => ScenarioConfig::default(),
    };
    cfg.apply_overrides(&args.overrides)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(horizon) = args.horizon {
        cfg.horizon = horizon;
    }
    if let Some(warmup) = args.warmup {
        cfg.warmup = warmup;
    }
    if let Some(kind) = &args.scheduler {
        cfg.scheduler.kind = kind.parse::<SchedulerKind>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.config)?;
    let out_dir = cfg.output_path.clone().unwrap_or_else(|| args.out.clone());
    let summary = sim::run(
        &cfg,
        RunOptions {
            record_slots: !args.no_slots,
            record_trajectory: true,
        },
    )?;
    let meta = CsvMeta { config_hash: cfg.hash_hex(), seed: cfg.seed };
    if !args.no_slots {
        output::write_slot_rows(output::create_file(&out_dir.join("slots.csv"))?, &meta, &summary.slots)?;
    }
    let b_fixed = cfg.scheduler.kind.uses_fixed_volume().then_some(cfg.scheduler.b_fixed_mb);
    let row = SummaryRow::from_run(0, &summary, b_fixed);
    output::write_summary(output::create_file(&out_dir.join("summary.csv"))?, &meta, &[row])?;
    output::write_trajectory(
        output::create_file(&out_dir.join("trajectory.csv"))?,
        &meta,
        &summary.trajectory,
    )?;
    println!(
        "{} seed={} mean_ap={:.6} mean_penalty={:.6} mean_volume={:.4} budget_violation={:.4} compliance_slot={}",
        summary.scheduler,
        summary.seed,
        summary.mean_ap,
        summary.mean_penalty,
        summary.mean_volume(),
        summary.budget_violation,
        summary.compliance_slot
    );
    eprintln!("wall time {:.0} ms, output in {}", summary.wall_ms, out_dir.display());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.spec).map_err(|e| config_failure(&args.spec, e.into()))?;
    let mut spec = SweepSpec::from_toml_str(&text)?;
    if let Some(seed) = args.seed {
        spec.base.seed = seed;
    }
    if let Some(horizon) = args.horizon {
        spec.base.horizon = horizon;
    }
    if let Some(warmup) = args.warmup {
        spec.base.warmup = warmup;
    }
    spec.validate()?;
    let started = std::time::Instant::now();
    let result = sim::sweep(&spec)?;
    let meta = CsvMeta { config_hash: spec.base.hash_hex(), seed: spec.base.seed };
    let runs: Vec<SummaryRow> = result.runs.iter().map(SummaryRow::from).collect();
    output::write_summary(output::create_file(&args.out.join("summary.csv"))?, &meta, &runs)?;
    output::write_sweep(output::create_file(&args.out.join("sweep.csv"))?, &meta, &result.rows)?;
    output::write_sweep(output::create_file(&args.out.join("sweep_best.csv"))?, &meta, &result.best_rows())?;
    for row in result.best_rows() {
        println!(
            "{}={} {:<10} b_fixed={:<5} ap={:.4} ± {:.4}",
            row.axis.as_str(),
            row.axis_value,
            row.scheduler.as_str(),
            row.b_fixed.map_or("-".to_string(), |b| b.to_string()),
            row.mean_ap,
            row.stderr_ap
        );
    }
    eprintln!(
        "{} runs in {:.1} s, output in {}",
        result.runs.len(),
        started.elapsed().as_secs_f64(),
        args.out.display()
    );
    Ok(())
}

fn cmd_validate(args: &ConfigArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let regions = cfg.build_regions()?;
    println!(
        "ok: {} regions, capacity {}, horizon {}, scheduler {}, config_hash={}",
        regions.len(),
        cfg.scheduler.capacity_m,
        cfg.horizon,
        cfg.scheduler.kind,
        cfg.hash_hex()
    );
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Result<(), Failure> {
    let kind: ScenarioKind = args.kind.parse().map_err(|e: Error| Failure {
        code: EXIT_USAGE,
        message: e.to_string(),
    })?;
    let file = std::fs::File::open(&args.samples).map_err(|e| config_failure(&args.samples, e.into()))?;
    let samples = output::read_fit_samples(file)?;
    let report = fit_model(&samples, kind)?;
    println!("# rmse = {:.6}, iterations = {}", report.rmse, report.iterations);
    println!("[penalty.{}]", kind.as_str());
    let params: Vec<(&str, f64)> = match report.surface {
        SurfaceParams::Intersection(p) => vec![
            ("alpha", p.alpha),
            ("beta", p.beta),
            ("gamma", p.gamma),
            ("delta", p.delta),
            ("epsilon", p.epsilon),
        ],
        SurfaceParams::Corridor(p) => vec![
            ("kappa", p.kappa),
            ("lambda", p.lambda),
            ("lambda0", p.lambda0),
            ("nu", p.nu),
            ("mu", p.mu),
        ],
    };
    for (name, value) in params {
        println!("{name} = {value}");
    }
    Ok(())
}

fn cmd_oracle(args: &OracleArgs) -> Result<(), Failure> {
    let checks = oracle::run_all(args.seed)?;
    for c in &checks {
        println!("{}", c.line());
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure {
            code: EXIT_RUNTIME,
            message: format!("{failed} oracle checks failed"),
        });
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Oracle(a) => cmd_oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
