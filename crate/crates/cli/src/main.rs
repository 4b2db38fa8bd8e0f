use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use hololeaf::checkpoint::{write_trajectory, Checkpoint};
use hololeaf::estimators::{predict_chi, EstimatorReport, EtaMode, RunConfig, RunStatus, Simulation, StartMode};
use hololeaf::eta::EtaTable;
use hololeaf::foliation::SpecFile;
use hololeaf::oracles::{selftest, verify_local_model};
use hololeaf::Error;
use num_complex::Complex64 as C64;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

const EXIT_CHECK: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "hololeaf",
    version,
    about = "Lyapunov exponents of holomorphic foliations on P^2"
)]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the predicted exponent -(d+2)/(d-1) and the bundle degrees.
    Predict {
        #[arg(long)]
        degree: i64,
        #[arg(long)]
        json: bool,
    },
    /// Run an ensemble and write report.json, report.txt and summary.csv.
    Simulate(Box<SimulateArgs>),
    /// Continue a run from a checkpoint.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory (default: the checkpoint's directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        drive: DriveArgs,
    },
    /// Run the local-model oracle suite and print residual maxima.
    VerifyLocalModel {
        /// Eigenvalue ratio, e.g. `i`, `1+1i`, `0.5-2i`.
        #[arg(long, allow_hyphen_values = true)]
        lambda: String,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Reduced-scale acceptance suite.
    Selftest {
        #[arg(long)]
        json: bool,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EtaModeArg {
    Raw,
    Calibrated,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in family: jouanolou, random or linear.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    degree: Option<usize>,
    /// Foliation specification file (TOML).
    #[arg(long, conflicts_with = "family")]
    spec: Option<PathBuf>,
    /// Seed of the `random` family.
    #[arg(long)]
    foliation_seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    burn_in: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    eta_mode: Option<EtaModeArg>,
    /// `random`, or a fixed start `chart:u_re,u_im,v_re,v_im`.
    #[arg(long)]
    start: Option<String>,
    #[arg(long)]
    start_groups: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    c_brody: Option<f64>,
    #[arg(long)]
    eta_nodes: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    drive: DriveArgs,
}

#[derive(Args, Clone)]
struct DriveArgs {
    /// Append sampled positions to trajectory.csv.
    #[arg(long)]
    trajectory: bool,
    /// Wall-clock seconds between checkpoints.
    #[arg(long, default_value_t = 60.0)]
    checkpoint_every: f64,
    /// Checkpoint every this many steps as well (testing).
    #[arg(long, hide = true)]
    checkpoint_steps: Option<u64>,
    /// Stop right after the first checkpoint (testing).
    #[arg(long, hide = true)]
    halt_after_checkpoint: bool,
}

/// Errors with their exit codes.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() { EXIT_NUMERIC } else { EXIT_USAGE };
        Self { code, err: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        let code = match err.downcast_ref::<Error>() {
            Some(e) if e.is_numerical() => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        };
        Self { code, err }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: EXIT_USAGE,
            err: e.into(),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Error::Config(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Command) -> Result<u8, Failure> {
    match cmd {
        Command::Predict { degree, json } => {
            let d = usize::try_from(degree).map_err(|_| usage(format!("degree must be at least 2, got {degree}")))?;
            let p = predict_chi(d)?;
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&p).context("serialising prediction")?
                );
            } else {
                println!(
                    "chi = {} (= -(d+2)/(d-1)), nor = O({}), cotan = O({})",
                    p.chi, p.deg_nor, p.deg_cotan
                );
            }
            Ok(0)
        }
        Command::Simulate(args) => {
            let cfg = build_config(&args)?;
            std::fs::create_dir_all(&args.out)?;
            let spec = cfg.foliation.build()?;
            let model = cfg.eta_model(&spec);
            let table = EtaTable::new(&spec, &model, cfg.eta_nodes);
            let mut sim = Simulation::new(cfg.leafwise(&spec, &table), cfg.clone())?;
            if args.drive.trajectory {
                write_trajectory(
                    std::fs::File::create(args.out.join("trajectory.csv"))?,
                    &sim.trajectory_rows(),
                    true,
                )?;
            }
            drive(&mut sim, &args.out, &args.drive)
        }
        Command::Resume {
            checkpoint,
            out,
            drive: d,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let out = out.unwrap_or_else(|| checkpoint.parent().map(Path::to_path_buf).unwrap_or_default());
            std::fs::create_dir_all(&out)?;
            let cfg = ck.config.clone();
            let spec = cfg.foliation.build()?;
            let model = cfg.eta_model(&spec);
            let table = EtaTable::new(&spec, &model, cfg.eta_nodes);
            let mut sim = Simulation::restore(cfg.leafwise(&spec, &table), cfg.clone(), ck.step, ck.paths)?;
            drive(&mut sim, &out, &d)
        }
        Command::VerifyLocalModel {
            lambda,
            samples,
            seed,
            json,
        } => {
            let l: C64 = lambda
                .trim()
                .parse()
                .map_err(|_| usage(format!("cannot parse lambda '{lambda}'")))?;
            if samples == 0 {
                return Err(usage("samples must be positive"));
            }
            let table = match verify_local_model(l, samples, seed) {
                Err(e @ Error::NonHyperbolic(_)) => return Err(usage(e.to_string())),
                r => r?,
            };
            if json {
                let doc = serde_json::json!({ "lambda": [l.re, l.im], "pass": table.pass(), "checks": table.checks });
                println!("{}", serde_json::to_string_pretty(&doc).context("serialising checks")?);
            } else {
                println!("local model lambda = {l}, {samples} samples, seed {seed}");
                print!("{}", table.to_text());
            }
            Ok(if table.pass() { 0 } else { EXIT_CHECK })
        }
        Command::Selftest { json, inject_fault } => {
            let table = selftest(inject_fault)?;
            if json {
                let doc = serde_json::json!({ "pass": table.pass(), "checks": table.checks });
                println!("{}", serde_json::to_string_pretty(&doc).context("serialising checks")?);
            } else {
                print!("{}", table.to_text());
                println!(
                    "{}",
                    if table.pass() {
                        "selftest passed"
                    } else {
                        "selftest FAILED"
                    }
                );
            }
            Ok(if table.pass() { 0 } else { EXIT_CHECK })
        }
    }
}

fn parse_start(s: &str) -> Result<StartMode, Failure> {
    if s == "random" {
        return Ok(StartMode::Random);
    }
    let bad = || {
        usage(format!(
            "start must be 'random' or 'chart:u_re,u_im,v_re,v_im', got '{s}'"
        ))
    };
    let (chart, rest) = s.split_once(':').ok_or_else(bad)?;
    let chart: usize = chart.parse().map_err(|_| bad())?;
    let x: Vec<f64> = rest
        .split(',')
        .map(|t| t.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    if x.len() != 4 {
        return Err(bad());
    }
    Ok(StartMode::Fixed {
        chart,
        u: [x[0], x[1]],
        v: [x[2], x[3]],
    })
}

/// Flags over config file over defaults.
fn build_config(a: &SimulateArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(p) = &a.spec {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        cfg.foliation = SpecFile::parse(&text)?;
    }
    if let Some(f) = &a.family {
        cfg.foliation = SpecFile {
            family: Some(f.clone()),
            degree: cfg.foliation.degree,
            ..SpecFile::default()
        };
    }
    if let Some(d) = a.degree {
        cfg.foliation.degree = Some(d);
    }
    if let Some(s) = a.foliation_seed {
        cfg.foliation.seed = Some(s);
    }
    macro_rules! set {
        ($($field:ident <- $arg:ident),*) => { $(if let Some(v) = a.$arg { cfg.$field = v; })* };
    }
    set!(n_paths <- paths, t_max <- t_max, dt <- dt, burn_in <- burn_in, seed <- seed,
         start_groups <- start_groups, beta <- beta, c_brody <- c_brody, eta_nodes <- eta_nodes);
    if let Some(m) = a.eta_mode {
        cfg.eta_mode = match m {
            EtaModeArg::Raw => EtaMode::Raw,
            EtaModeArg::Calibrated => EtaMode::Calibrated,
        };
    }
    if let Some(s) = &a.start {
        cfg.start_mode = parse_start(s)?;
        if matches!(cfg.start_mode, StartMode::Fixed { .. }) && a.start_groups.is_none() {
            cfg.start_groups = 1;
        }
    }
    if let (Some("jouanolou" | "random"), Some(d)) = (cfg.foliation.family.as_deref(), cfg.foliation.degree) {
        predict_chi(d)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_outputs(report: &EstimatorReport, out: &Path) -> Result<(), Failure> {
    std::fs::write(out.join("report.json"), report.to_json()?)?;
    std::fs::write(out.join("report.txt"), report.to_text())?;
    std::fs::write(out.join("summary.csv"), report.to_csv()?)?;
    Ok(())
}

/// Advances in unit-time chunks, checkpointing on the wall clock (and optionally
/// on a step count); trajectory rows are buffered and flushed with each checkpoint
/// so the log never runs ahead of the last checkpoint.
fn drive(sim: &mut Simulation, out: &Path, d: &DriveArgs) -> Result<u8, Failure> {
    let chunk = (1.0 / sim.cfg.dt).round().max(1.0) as u64;
    let every = Duration::from_secs_f64(d.checkpoint_every.max(0.0));
    let ck_path = out.join("checkpoint.txt");
    let traj_path = out.join("trajectory.csv");
    let mut rows = Vec::new();
    let mut last = Instant::now();
    let mut last_step = sim.step;
    while !sim.is_done() {
        let target = (sim.step / chunk + 1) * chunk;
        let target = match d.checkpoint_steps {
            Some(k) if k > 0 => target.min((sim.step / k + 1) * k),
            _ => target,
        };
        sim.advance_to(target);
        if d.trajectory && sim.step.is_multiple_of(chunk) {
            rows.extend(sim.trajectory_rows());
        }
        let by_steps = d
            .checkpoint_steps
            .is_some_and(|k| k > 0 && sim.step / k > last_step / k);
        if !sim.is_done() && (last.elapsed() >= every || by_steps) {
            flush_trajectory(&traj_path, &mut rows)?;
            Checkpoint {
                config: sim.cfg.clone(),
                step: sim.step,
                paths: sim.paths.clone(),
            }
            .save(&ck_path)?;
            log::info!("checkpoint at step {} of {}", sim.step, sim.total_steps());
            last = Instant::now();
            last_step = sim.step;
            if d.halt_after_checkpoint {
                write_outputs(&sim.report(), out)?;
                eprintln!("halted after checkpoint at step {}", sim.step);
                return Ok(EXIT_CHECK);
            }
        }
    }
    flush_trajectory(&traj_path, &mut rows)?;
    let report = sim.report();
    write_outputs(&report, out)?;
    print!("{}", report.to_text());
    Ok(match report.status {
        RunStatus::Complete => 0,
        RunStatus::Incomplete => EXIT_CHECK,
        RunStatus::Failed(_) => EXIT_NUMERIC,
    })
}

fn flush_trajectory(path: &Path, rows: &mut Vec<hololeaf::estimators::TrajectoryRow>) -> Result<(), Failure> {
    if rows.is_empty() {
        return Ok(());
    }
    let f = OpenOptions::new().append(true).create(true).open(path)?;
    write_trajectory(f, rows, false)?;
    rows.clear();
    Ok(())
}
