use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use darcy_ms_cli::config::{ExperimentConfig, GridSection, Mode, PerforationSection, SCHEMA_VERSION};
use darcy_ms_cli::{report, run, CliError};

#[derive(Parser)]
#[command(name = "darcy-ms", version, about = "Multiscale Darcy flow in perforated domains")]
struct Cli {
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the grid and write it to the output directory.
    Mesh(Overrides),
    /// Solve in fine, offline or online mode.
    Solve {
        #[arg(long, value_enum)]
        mode: Option<SolveMode>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write every block eigenvalue.
    Spectrum(Overrides),
    /// Offline sweep over mode counts, plus the online curve.
    Sweep {
        /// Comma-separated offline mode counts.
        #[arg(long, value_delimiter = ',')]
        sweep_modes: Option<Vec<usize>>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Tabulate and plot the convergence tables of a run directory.
    Report { dir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum SolveMode {
    Fine,
    Offline,
    Online,
}

#[derive(Args, Default)]
struct Overrides {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Seed of the random perforations.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of random circles; requires --seed.
    #[arg(long)]
    perforations: Option<usize>,
    #[arg(long, requires = "perforations")]
    r_min: Option<f64>,
    #[arg(long, requires = "perforations")]
    r_max: Option<f64>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    #[arg(long)]
    lx: Option<f64>,
    #[arg(long)]
    ly: Option<f64>,
    #[arg(long)]
    cx: Option<usize>,
    #[arg(long)]
    cy: Option<usize>,
    #[arg(long)]
    g_left: Option<f64>,
    #[arg(long)]
    g_right: Option<f64>,
    /// Offline basis functions per block.
    #[arg(long)]
    modes: Option<usize>,
    #[arg(long)]
    eig_cutoff: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    skip_tol: Option<f64>,
}

impl Overrides {
    fn resolve(&self, mode: Mode) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => {
                let (Some(nx), Some(ny)) = (self.nx, self.ny) else {
                    return Err(CliError::Config(vec!["either --config or both --nx and --ny are required".into()]));
                };
                let mut cfg = ExperimentConfig::desk("out");
                cfg.schema_version = SCHEMA_VERSION;
                cfg.grid = GridSection { nx, ny, lx: nx as f64, ly: ny as f64 };
                cfg.perforations = PerforationSection::None;
                cfg.permeability = Default::default();
                cfg.coarse.cx = cfg.coarse.cx.min(nx);
                cfg.coarse.cy = cfg.coarse.cy.min(ny);
                cfg
            }
        };
        cfg.mode = mode;
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { cfg.$($field).+ = v; })*
            };
        }
        set!(
            output => output, nx => grid.nx, ny => grid.ny, lx => grid.lx, ly => grid.ly,
            cx => coarse.cx, cy => coarse.cy, g_left => bc.g_left, g_right => bc.g_right,
            modes => offline.modes, eig_cutoff => offline.eig_cutoff, theta => online.theta,
            iterations => online.iterations, skip_tol => online.skip_tol,
        );
        if let Some(count) = self.perforations {
            if self.seed.is_none() {
                return Err(CliError::Config(vec!["--perforations needs --seed".into()]));
            }
            cfg.perforations = PerforationSection::Random {
                seed: self.seed,
                count,
                r_min: self.r_min.unwrap_or(0.03 * cfg.grid.lx.min(cfg.grid.ly)),
                r_max: self.r_max.unwrap_or(0.07 * cfg.grid.lx.min(cfg.grid.ly)),
            };
        } else if let (Some(s), PerforationSection::Random { seed, .. }) = (self.seed, &mut cfg.perforations) {
            *seed = Some(s);
        }
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Mesh(o) => {
            let cfg = o.resolve(Mode::Fine)?;
            let (grid, path) = run::mesh(&cfg)?;
            println!("{} active cells of {} -> {}", grid.num_cells(), grid.nx * grid.ny, path.display());
        }
        Command::Solve { mode, overrides } => {
            let base = overrides.resolve(Mode::Fine)?;
            let mode = match mode {
                Some(SolveMode::Fine) => Mode::Fine,
                Some(SolveMode::Offline) => Mode::Offline,
                Some(SolveMode::Online) => Mode::Online,
                None if overrides.config.is_some() => {
                    ExperimentConfig::load(overrides.config.as_ref().expect("checked"))?.mode
                }
                None => Mode::Fine,
            };
            let cfg = ExperimentConfig { mode, ..base };
            if cfg.mode == Mode::Sweep {
                return Err(CliError::Config(vec!["use the sweep subcommand for mode = \"sweep\"".into()]));
            }
            let summary = run::run(&cfg)?;
            print_files(&summary.files);
        }
        Command::Spectrum(o) => {
            let cfg = o.resolve(Mode::Offline)?;
            println!("{}", run::spectrum(&cfg)?.display());
        }
        Command::Sweep { sweep_modes, overrides } => {
            let mut cfg = overrides.resolve(Mode::Sweep)?;
            if let Some(m) = sweep_modes {
                cfg.sweep.modes = m;
            }
            let summary = run::run(&cfg)?;
            print_files(&summary.files);
        }
        Command::Report { dir } => {
            let (table, plot) = report::report(&dir)?;
            print!("{}", std::fs::read_to_string(&table).map_err(|e| CliError::Report(e.to_string()))?);
            println!("{}\n{}", table.display(), plot.display());
        }
    }
    Ok(())
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("{}", f.display());
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
