use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fixret_cli::scenario::{parse_inline_points, parse_points_csv, FiniteOps, GridSpec};
use fixret_cli::{error_output, run, write_outputs, CliError, OutputTargets, Scenario, Task, Tolerances};
use fixret_core::{NormKind, NormSpec, Point};

#[derive(Debug, Parser)]
#[command(name = "fixret", version, about = "Certified fixed-point constructions for nonexpansive maps")]
struct Cli {
    /// Scenario JSON file.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write the task's CSV trace here.
    #[arg(long, global = true)]
    trace: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override every tolerance in the scenario.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Progress messages on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CertifyMode {
    /// Approximate fixed point sequence along the s schedule.
    Apfs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NormArg {
    Euclidean,
    Sum,
    Max,
}

impl From<NormArg> for NormKind {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Euclidean => NormKind::Euclidean,
            NormArg::Sum => NormKind::Sum,
            NormArg::Max => NormKind::Max,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the task named in the scenario.
    Run,
    /// Certify the scenario's maps, or with `apfs` the residual bound along the schedule.
    Certify { mode: Option<CertifyMode> },
    /// Compute one resolvent point F_s x.
    Resolvent {
        /// Anchor point, comma separated.
        #[arg(long)]
        x: Option<String>,
        #[arg(long)]
        s: Option<u64>,
        /// Name of the map T.
        #[arg(long)]
        target: Option<String>,
    },
    /// Build and certify the retraction onto the family's common fixed set.
    Retract {
        /// Write the retraction evaluated on a grid to this CSV.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        resolution: Option<f64>,
    },
    /// Tchebyshev center of a finite point set.
    Center {
        /// Inline points, e.g. "0,0;2,0".
        #[arg(long, conflicts_with = "csv")]
        points: Option<String>,
        /// CSV file with one point per row.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, value_enum)]
        norm: Option<NormArg>,
        /// Also certify that the family maps the center into the center set.
        #[arg(long)]
        check_invariance: bool,
    },
    /// Exact checks on a finite metric system.
    Finite {
        #[arg(long)]
        core: bool,
        #[arg(long)]
        gamma: bool,
        #[arg(long)]
        isometry: bool,
        #[arg(long)]
        closure: bool,
        /// Run gamma set, core, isometry and center steps in sequence.
        #[arg(long)]
        pipeline: bool,
    },
}

fn load(cli: &Cli, task: Option<Task>) -> Result<Scenario, CliError> {
    match (&cli.scenario, task) {
        (Some(p), _) => Scenario::load(p),
        (None, Some(Task::Center)) => Ok(Scenario::empty(Task::Center)),
        (None, _) => Err(CliError::Parse("--scenario is required".into())),
    }
}

fn parse_point(text: &str) -> Result<Point, CliError> {
    let mut pts = parse_inline_points(text)?;
    match pts.len() {
        1 => Ok(pts.remove(0)),
        _ => Err(CliError::Parse(format!("expected one point, got {text:?}"))),
    }
}

/// Builds the scenario the subcommand describes and the grid output path.
fn prepare(cli: &Cli) -> Result<(Scenario, Option<PathBuf>), CliError> {
    let mut grid_path = None;
    let mut sc = match &cli.command {
        Command::Run => load(cli, None)?,
        Command::Certify { mode } => {
            let mut sc = load(cli, None)?;
            sc.task = if mode.is_some() { Task::Apfs } else { Task::Certify };
            sc
        }
        Command::Resolvent { x, s, target } => {
            let mut sc = load(cli, None)?;
            sc.task = Task::Resolvent;
            if let Some(x) = x {
                sc.x = Some(parse_point(x)?);
            }
            sc.s = s.or(sc.s);
            sc.target = target.clone().or(sc.target);
            sc
        }
        Command::Retract { grid, resolution } => {
            let mut sc = load(cli, None)?;
            sc.task = Task::Retract;
            if grid.is_some() || resolution.is_some() {
                let res = resolution.or(sc.grid.map(|g| g.resolution)).unwrap_or(0.1);
                sc.grid = Some(GridSpec { resolution: res });
            }
            grid_path = grid.clone();
            sc
        }
        Command::Center { points, csv, norm, check_invariance } => {
            let mut sc = load(cli, Some(Task::Center))?;
            sc.task = Task::Center;
            if let Some(text) = points {
                sc.points = Some(parse_inline_points(text)?);
            } else if let Some(path) = csv {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                sc.points = Some(parse_points_csv(&text)?);
            }
            if let (Some(kind), Some(first)) = (norm, sc.points.as_ref().and_then(|p| p.first())) {
                sc.space = Some(NormSpec::new((*kind).into(), first.dim())?);
            }
            sc.check_invariance |= check_invariance;
            sc
        }
        Command::Finite { core, gamma, isometry, closure, pipeline } => {
            let mut sc = load(cli, None)?;
            sc.task = if *pipeline { Task::Pipeline } else { Task::Finite };
            let flags = FiniteOps { core: *core, gamma: *gamma, isometry: *isometry, closure: *closure };
            if flags != FiniteOps::default() {
                sc.finite_ops = flags;
            }
            sc
        }
    };
    if let Some(seed) = cli.seed {
        sc.seed = seed;
    }
    if let Some(tol) = cli.tol {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(CliError::Parse("--tol must be positive".into()));
        }
        sc.tolerances = Tolerances::uniform(tol);
    }
    Ok((sc, grid_path))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cli_targets = OutputTargets { report: cli.out.clone(), trace: cli.trace.clone(), grid: None };
    let (output, targets) = match prepare(&cli) {
        Ok((sc, grid)) => {
            let targets = OutputTargets::merge(OutputTargets { grid, ..cli_targets }, &sc);
            (run(&sc, cli.verbose), targets)
        }
        Err(e) => (error_output(&e), cli_targets),
    };
    if let Some(err) = &output.report.error {
        eprintln!("fixret: {}", err.message);
    }
    if let Err(e) = write_outputs(&output, &targets) {
        eprintln!("fixret: {e}");
        return ExitCode::from(2);
    }
    ExitCode::from(output.exit_code() as u8)
}
