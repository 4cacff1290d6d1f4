use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sepmdo::error::Error;
use sepmdo::nlp::SolveStatus;
use sepmdo::par::{self, Execution};
use sepmdo::propagate::{self, SegmentControls};
use sepmdo::scenario::{self, output, Preset, RunSummary, ScenarioConfig};
use sepmdo::transcription::Mode;

/// Writes a line to stdout; a closed pipe is not an error.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

/// Low-thrust spiral transfer and solar-array sizing optimization.
#[derive(Parser, Debug)]
#[command(name = "sepmdo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Root for run directories when `--out` is not given.
    #[arg(long, global = true, env = "SEPMDO_OUT", default_value = "runs")]
    out_root: PathBuf,

    /// Increase log detail (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the shape-based initial guess and write it with its propagation.
    Guess(RunArgs),
    /// Solve one scenario and write all artifacts.
    Solve(RunArgs),
    /// Re-propagate the controls of an existing run directory.
    Propagate(PropagateArgs),
    /// Compare a baseline and a coupled run directory.
    Compare(CompareArgs),
    /// Solve with the array area fixed at each of several values.
    SweepArea(SweepArgs),
    /// Solve on several grids and tabulate propagated divergence.
    DefectStudy(DefectArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    Psyche,
    Desk,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Baseline,
    Coupled,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// TOML scenario file; absent keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Starting point used when no config file is given.
    #[arg(long, value_enum, default_value = "psyche", conflicts_with = "config")]
    preset: PresetArg,

    /// Overrides the configured mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,

    /// Dotted-path override, e.g. `--set grid.n_segments=20`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,

    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PropagateArgs {
    /// Run directory written by `solve`.
    #[arg(long)]
    run: PathBuf,

    /// Output directory; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Dotted-path override of the stored config, e.g. `propagation.rtol=1e-12`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    baseline: PathBuf,

    #[arg(long)]
    coupled: PathBuf,

    /// Directory for comparison.csv and comparison.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,

    /// Array areas [m^2].
    #[arg(long, value_delimiter = ',', required = true)]
    areas: Vec<f64>,

    #[arg(long)]
    out: Option<PathBuf>,

    /// Solve the sweep points one after another.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct DefectArgs {
    #[command(flatten)]
    config: ConfigArgs,

    /// Segment counts to solve.
    #[arg(long, value_delimiter = ',', required = true)]
    segments: Vec<usize>,

    #[arg(long)]
    out: Option<PathBuf>,

    /// Solve the grids one after another.
    #[arg(long)]
    sequential: bool,
}

/// Failure carrying the process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_config_error() {
            EXIT_CONFIG
        } else {
            EXIT_NUMERICAL
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult = Result<u8, Failure>;

fn status_code(status: SolveStatus) -> u8 {
    match status {
        SolveStatus::Converged => 0,
        SolveStatus::MaxIterations | SolveStatus::Infeasible => EXIT_NOT_CONVERGED,
        SolveStatus::NumericalFailure => EXIT_NUMERICAL,
    }
}

fn load_config(args: &ConfigArgs) -> Result<ScenarioConfig, Error> {
    let mut overrides = args.overrides.clone();
    if let Some(m) = args.mode {
        let name = match m {
            ModeArg::Baseline => "baseline",
            ModeArg::Coupled => "coupled",
        };
        overrides.push(format!("mode={name}"));
    }
    match &args.config {
        Some(path) => ScenarioConfig::load(path, &overrides),
        None => {
            let preset = match args.preset {
                PresetArg::Psyche => Preset::Psyche,
                PresetArg::Desk => Preset::Desk,
            };
            preset.config(Mode::Baseline).with_overrides(&overrides)
        }
    }
}

fn out_dir(explicit: &Option<PathBuf>, root: &Path, label: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        root.join(format!("{label}-{stamp}"))
    })
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn print_summary(s: &RunSummary) {
    let div = s
        .divergence
        .as_ref()
        .map(|d| format!("{:.3e}", d.max_radius_fraction))
        .unwrap_or_else(|| "n/a".into());
    say!(
        "status {:?}  t_f {:.3} s  area {:.4} m^2  m0 {:.4} kg  propellant {:.6} kg  violation {:.2e}  radius divergence/rf {}",
        s.status, s.t_f, s.area, s.initial_mass, s.propellant, s.max_violation, div
    );
}

fn cmd_guess(args: RunArgs, root: &Path) -> CliResult {
    let cfg = load_config(&args.config)?;
    let dir = out_dir(&args.out, root, "guess");
    create_dir(&dir)?;
    output::write_config(&dir, &cfg)?;
    let (spec, guess, summary) = scenario::prepare(&cfg)?;
    let grid = cfg.grid;
    let csv = std::fs::File::create(dir.join("guess.csv"))
        .map_err(|e| Error::io(dir.join("guess.csv"), e))?;
    output::write_trajectory_csv(&spec, &grid, &guess, csv)?;
    output::write_json(&dir.join("guess_summary.json"), &summary)?;
    let p = propagate::propagate(&spec, &grid, &guess, &cfg.propagation)?;
    let path = dir.join("propagated.csv");
    p.write_csv(
        &spec,
        guess.area,
        std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?,
    )?;
    let div = propagate::divergence(&p, &guess, spec.rf)?;
    output::write_json(&dir.join("propagation.json"), &div)?;
    output::write_plot_data(&dir, &spec, &grid, &guess, Some(&p))?;
    say!(
        "guess: {} revolutions, t_f {:.3} s, reference thrust {:.4e} N, radius divergence/rf {:.3e}",
        summary.revs, summary.t_f, summary.thrust_ref, div.max_radius_fraction
    );
    say!("wrote {}", dir.display());
    Ok(0)
}

fn cmd_solve(args: RunArgs, root: &Path) -> CliResult {
    let cfg = load_config(&args.config)?;
    let dir = out_dir(&args.out, root, "solve");
    create_dir(&dir)?;
    output::write_config(&dir, &cfg)?;
    let run = scenario::run_scenario(&cfg)?;
    output::write_run(&dir, &run)?;
    print_summary(&run.summary);
    say!("wrote {}", dir.display());
    if let Some(e) = &run.summary.propagation_error {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!("propagation failed: {e}"),
        });
    }
    Ok(status_code(run.summary.status))
}

fn cmd_propagate(args: PropagateArgs) -> CliResult {
    let (stored, summary, traj) = output::read_run(&args.run)?;
    let cfg = stored.with_overrides(&args.overrides)?;
    let spec = cfg.transfer_spec()?;
    let grid = cfg.grid;
    let dir = args.out.clone().unwrap_or_else(|| args.run.clone());
    create_dir(&dir)?;
    let p = propagate::propagate(&spec, &grid, &traj, &cfg.propagation)?;
    let law = SegmentControls::new(&spec, &grid, &traj)?;
    let audit = propagate::mass_audit(&p, &law);
    let div = propagate::divergence(&p, &traj, spec.rf)?;
    let path = dir.join("propagated.csv");
    p.write_csv(
        &spec,
        traj.area,
        std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?,
    )?;
    output::write_json(
        &dir.join("propagation.json"),
        &serde_json::json!({
            "tolerances": cfg.propagation,
            "divergence": div,
            "mass_audit": audit,
            "accepted_steps": p.accepted_steps,
            "rejected_steps": p.rejected_steps,
        }),
    )?;
    output::write_plot_data(&dir, &spec, &grid, &traj, Some(&p))?;
    say!(
        "radius divergence {:.4e} m ({:.3e} of rf), mass audit residual {:.3e} kg, {} steps",
        div.max[0],
        div.max_radius_fraction,
        audit.residual,
        p.accepted_steps
    );
    say!("wrote {}", dir.display());
    Ok(status_code(summary.status))
}

fn cmd_compare(args: CompareArgs, root: &Path) -> CliResult {
    let b = output::read_summary(&args.baseline)?;
    let c = output::read_summary(&args.coupled)?;
    let report = scenario::compare(&b, &c)?;
    say!("{}", report.to_table().trim_end());
    let dir = out_dir(&args.out, root, "compare");
    create_dir(&dir)?;
    let path = dir.join("comparison.csv");
    report.write_csv(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?)?;
    output::write_json(&dir.join("comparison.json"), &report)?;
    say!("wrote {}", dir.display());
    Ok(0)
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

/// Runs each config in its own subdirectory and returns the summaries.
fn run_batch(
    configs: &[(String, ScenarioConfig)],
    dir: &Path,
    exec: Execution,
) -> Vec<Result<RunSummary, Error>> {
    par::map_slice(configs, exec, |(label, cfg)| {
        let sub = dir.join(label);
        let run = scenario::run_scenario(cfg)?;
        output::write_run(&sub, &run)?;
        log::info!(
            "{label}: {:?}, t_f = {:.3} s",
            run.summary.status,
            run.summary.t_f
        );
        Ok(run.summary)
    })
}

fn batch_code(results: &[Result<RunSummary, Error>]) -> CliResult {
    let mut code = 0;
    for r in results {
        match r {
            Ok(s) => code = code.max(status_code(s.status)),
            Err(e) if e.is_config_error() => {
                return Err(Failure::from(Error::validation("batch", e.to_string())))
            }
            Err(_) => code = code.max(EXIT_NUMERICAL),
        }
    }
    Ok(code)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.17e}")).unwrap_or_default()
}

fn cmd_sweep(args: SweepArgs, root: &Path) -> CliResult {
    let base = load_config(&args.config)?;
    if args.areas.is_empty() {
        return Err(Error::validation("areas", "at least one area is required").into());
    }
    let mut configs = Vec::with_capacity(args.areas.len());
    for &a in &args.areas {
        let cfg = base.with_overrides(&["mode=baseline".into(), format!("power.A_SA={a:?}")])?;
        configs.push((format!("area_{a}"), cfg));
    }
    let dir = out_dir(&args.out, root, "sweep-area");
    create_dir(&dir)?;
    output::write_config(&dir, &base)?;
    let results = run_batch(&configs, &dir, execution(args.sequential));
    let path = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(Error::from)?;
    w.write_record([
        "area",
        "status",
        "t_f",
        "initial_mass",
        "propellant",
        "max_violation",
        "error",
    ])
    .map_err(Error::from)?;
    for (a, r) in args.areas.iter().zip(&results) {
        let rec = match r {
            Ok(s) => vec![
                format!("{a:.17e}"),
                format!("{:?}", s.status),
                fmt_opt(Some(s.t_f)),
                fmt_opt(Some(s.initial_mass)),
                fmt_opt(Some(s.propellant)),
                fmt_opt(Some(s.max_violation)),
                String::new(),
            ],
            Err(e) => vec![
                format!("{a:.17e}"),
                "Error".into(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                e.to_string(),
            ],
        };
        w.write_record(rec).map_err(Error::from)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    for (a, r) in args.areas.iter().zip(&results) {
        match r {
            Ok(s) => say!(
                "A_SA {a:>8.3}  {:?}  t_f {:.3} s  m0 {:.3} kg",
                s.status,
                s.t_f,
                s.initial_mass
            ),
            Err(e) => say!("A_SA {a:>8.3}  error: {e}"),
        }
    }
    say!("wrote {}", dir.display());
    batch_code(&results)
}

fn cmd_defect_study(args: DefectArgs, root: &Path) -> CliResult {
    let base = load_config(&args.config)?;
    let mut configs = Vec::with_capacity(args.segments.len());
    for &n in &args.segments {
        configs.push((
            format!("segments_{n}"),
            base.with_overrides(&[format!("grid.n_segments={n}")])?,
        ));
    }
    let dir = out_dir(&args.out, root, "defect-study");
    create_dir(&dir)?;
    output::write_config(&dir, &base)?;
    let results = run_batch(&configs, &dir, execution(args.sequential));
    let path = dir.join("defect_study.csv");
    let mut w = csv::Writer::from_path(&path).map_err(Error::from)?;
    w.write_record([
        "segments",
        "status",
        "t_f",
        "max_radius_divergence",
        "max_radius_fraction",
        "rms_radius_divergence",
        "max_defect",
        "error",
    ])
    .map_err(Error::from)?;
    for (n, r) in args.segments.iter().zip(&results) {
        let rec = match r {
            Ok(s) => {
                let d = s.divergence.as_ref();
                vec![
                    n.to_string(),
                    format!("{:?}", s.status),
                    fmt_opt(Some(s.t_f)),
                    fmt_opt(d.map(|d| d.max[0])),
                    fmt_opt(d.map(|d| d.max_radius_fraction)),
                    fmt_opt(d.map(|d| d.rms[0])),
                    fmt_opt(Some(s.max_defect)),
                    s.propagation_error.clone().unwrap_or_default(),
                ]
            }
            Err(e) => {
                let mut rec = vec![n.to_string(), "Error".into()];
                rec.extend(std::iter::repeat_n(String::new(), 5));
                rec.push(e.to_string());
                rec
            }
        };
        w.write_record(rec).map_err(Error::from)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    for (n, r) in args.segments.iter().zip(&results) {
        match r {
            Ok(s) => say!(
                "segments {n:>4}  {:?}  t_f {:.3} s  radius divergence {}",
                s.status,
                s.t_f,
                s.divergence
                    .as_ref()
                    .map(|d| format!("{:.4e} m", d.max[0]))
                    .unwrap_or_else(|| "n/a".into())
            ),
            Err(e) => say!("segments {n:>4}  error: {e}"),
        }
    }
    say!("wrote {}", dir.display());
    batch_code(&results)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let root = cli.out_root.clone();
    let result = match cli.command {
        Command::Guess(a) => cmd_guess(a, &root),
        Command::Solve(a) => cmd_solve(a, &root),
        Command::Propagate(a) => cmd_propagate(a),
        Command::Compare(a) => cmd_compare(a, &root),
        Command::SweepArea(a) => cmd_sweep(a, &root),
        Command::DefectStudy(a) => cmd_defect_study(a, &root),
    };
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => {
            eprintln!("sepmdo: solver did not converge (exit {code})");
            ExitCode::from(code)
        }
        Err(f) => {
            eprintln!("sepmdo: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
