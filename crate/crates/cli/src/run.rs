//! Experiment orchestration and artifact output.
//!
//! Every CSV and JSON artifact starts with the resolved configuration. Wall
//! times go to the log only, so equal configurations give byte-identical
//! files whatever the thread count.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use darcy_ms::assembly::{assemble, recover_flux, solve_fine, write_cell_csv, write_flux_csv, FineOperator};
use darcy_ms::grid::{build_grid, build_partition, save_grid, CoarsePartition, FineGrid};
use darcy_ms::metrics::{bound_check, block_mass_defect, write_convergence_csv, BoundReport, ErrorReport, Reference};
use darcy_ms::offline::{build_offline_space, coarse_solve};
use darcy_ms::online::{enrich_loop, IterationRecord, LocalProblems};
use serde::Serialize;

use crate::config::{ExperimentConfig, Mode};
use crate::CliError;

pub const GRID_FILE: &str = "grid.txt";
pub const FINE_PRESSURE: &str = "fine_pressure.csv";
pub const FINE_FLUX: &str = "fine_flux.csv";
pub const MS_PRESSURE: &str = "ms_pressure.csv";
pub const MS_FLUX: &str = "ms_flux.csv";
pub const CONVERGENCE: &str = "convergence.csv";
pub const CONVERGENCE_OFFLINE: &str = "convergence_offline.csv";
pub const CONVERGENCE_ONLINE: &str = "convergence_online.csv";
pub const ITERATIONS: &str = "iterations.csv";
pub const CONSERVATION: &str = "block_conservation.csv";
pub const BOUNDS: &str = "bounds.json";
pub const SPECTRUM: &str = "spectrum.csv";

/// Header lines embedding the resolved configuration.
pub fn config_header(cfg: &ExperimentConfig) -> Vec<String> {
    let mut h = vec![format!("darcy-ms {}", env!("CARGO_PKG_VERSION"))];
    h.extend(cfg.to_toml().lines().filter(|l| !l.trim().is_empty()).map(|l| format!("config: {l}")));
    h
}

/// The fine problem of a configuration.
pub struct Problem {
    pub grid: FineGrid,
    pub part: CoarsePartition,
    pub op: FineOperator,
}

impl Problem {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let grid = build_grid(cfg.grid_params(), &cfg.perforation_spec(), &cfg.permeability_spec(), cfg.boundary_spec())?;
        let part = build_partition(&grid, cfg.coarse.cx, cfg.coarse.cy)?;
        let op = assemble(&grid, &cfg.source_spec())?;
        Ok(Problem { grid, part, op })
    }

    pub fn reference(&self) -> Result<Reference, CliError> {
        let p = solve_fine(&self.op)?;
        Ok(Reference::new(&self.grid, &self.op, p))
    }
}

/// Results of an offline sweep plus an optional online run.
#[derive(Clone, Debug, Default)]
pub struct SweepResult {
    pub offline: Vec<ErrorReport>,
    pub online: Vec<IterationRecord>,
    pub bounds: Option<BoundReport>,
}

impl SweepResult {
    pub fn online_reports(&self) -> Vec<ErrorReport> {
        self.online
            .iter()
            .filter_map(|r| {
                Some(ErrorReport { dim: r.dim, e_p: r.e_p?, e_u: r.e_u?, energy_sq: r.energy_sq? })
            })
            .collect()
    }
}

/// What a run wrote.
#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub sweep: SweepResult,
}

struct Out<'a> {
    dir: &'a Path,
    header: Vec<String>,
    files: Vec<PathBuf>,
}

impl<'a> Out<'a> {
    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>, &[String]) -> Result<(), CliError>) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w, &self.header)?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }
}

#[derive(Serialize)]
struct BoundEntryJson {
    iter: usize,
    kind: &'static str,
    lhs: f64,
    rhs: f64,
    margin: Option<f64>,
    pass: bool,
}

#[derive(Serialize)]
struct BoundsJson<'a> {
    config: Vec<&'a str>,
    all_pass: bool,
    entries: Vec<BoundEntryJson>,
    notes: &'a [String],
}

fn bounds_json(report: &BoundReport, header: &[String]) -> String {
    let doc = BoundsJson {
        config: header.iter().map(String::as_str).collect(),
        all_pass: report.all_pass(),
        entries: report
            .entries
            .iter()
            .map(|e| BoundEntryJson {
                iter: e.iter,
                kind: e.kind.name(),
                lhs: e.lhs,
                rhs: e.rhs,
                margin: Some(e.margin()).filter(|m| m.is_finite()),
                pass: e.pass,
            })
            .collect(),
        notes: &report.notes,
    };
    serde_json::to_string_pretty(&doc).expect("bounds serialize") + "\n"
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

fn write_iterations<W: Write>(records: &[IterationRecord], header: &[String], mut out: W) -> std::io::Result<()> {
    for h in header {
        writeln!(out, "# {h}")?;
    }
    writeln!(out, "iter,dim,e_p,e_u,energy_sq,sum_delta_sq,lambda_min,bound_rhs,selected")?;
    for r in records {
        let sel: Vec<String> = r.selected.iter().map(|b| b.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{},{},{:.16e},{:.16e},{:.16e},{}",
            r.iter,
            r.dim,
            fmt_opt(r.e_p),
            fmt_opt(r.e_u),
            fmt_opt(r.energy_sq),
            r.sum_delta_sq,
            r.lambda_min,
            r.bound_rhs,
            sel.join(" ")
        )?;
    }
    Ok(())
}

fn write_conservation<W: Write>(defect: &[f64], source: &[f64], part: &CoarsePartition, header: &[String], mut out: W) -> std::io::Result<()> {
    for h in header {
        writeln!(out, "# {h}")?;
    }
    writeln!(out, "block,source,defect")?;
    for (b, d) in defect.iter().enumerate() {
        let s: f64 = part.blocks[b].cells.iter().map(|&w| source[w]).sum();
        writeln!(out, "{b},{s:.16e},{d:.16e}")?;
    }
    Ok(())
}

fn io_err(dir: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::io(dir, e)
}

/// Offline errors for each mode count, reusing the local problems.
pub fn offline_sweep(
    problem: &Problem,
    locals: &LocalProblems,
    reference: &Reference,
    modes: &[usize],
    eig_cutoff: f64,
) -> Result<Vec<ErrorReport>, CliError> {
    let mut out = Vec::with_capacity(modes.len());
    for &l in modes {
        let space = build_offline_space(&problem.part, &locals.spectra, l, eig_cutoff)?;
        let (p, _) = coarse_solve(&problem.op, &problem.part, &space)?;
        out.push(ErrorReport::new(&problem.grid, &problem.op, reference, &p, space.dim())?);
    }
    Ok(out)
}

/// Runs the configured mode and writes its artifacts into `cfg.output`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let start = Instant::now();
    let problem = Problem::build(cfg)?;
    let dir = cfg.output.as_path();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut out = Out { dir, header: config_header(cfg), files: Vec::new() };
    save_grid(&problem.grid, dir.join(GRID_FILE))?;
    out.files.push(dir.join(GRID_FILE));
    log::info!(
        "{} active cells, {} blocks, setup {:.3?}",
        problem.grid.num_cells(),
        problem.part.num_blocks(),
        start.elapsed()
    );

    let reference = problem.reference()?;
    log::info!("fine solve done at {:.3?}", start.elapsed());
    let grid = &problem.grid;
    out.write(FINE_PRESSURE, |w, h| Ok(write_cell_csv(grid, &reference.pressure, h, w)?))?;
    out.write(FINE_FLUX, |w, h| Ok(write_flux_csv(grid, &reference.flux, h, w)?))?;
    let mut sweep = SweepResult::default();
    if cfg.mode == Mode::Fine {
        return Ok(RunSummary { files: out.files, sweep });
    }

    let locals = LocalProblems::new(grid, &problem.part);
    log::info!("local spectra done at {:.3?}", start.elapsed());
    let space = build_offline_space(&problem.part, &locals.spectra, cfg.offline.modes, cfg.offline.eig_cutoff)?;

    let final_pressure = match cfg.mode {
        Mode::Offline => {
            let (p, _) = coarse_solve(&problem.op, &problem.part, &space)?;
            sweep.offline.push(ErrorReport::new(grid, &problem.op, &reference, &p, space.dim())?);
            out.write(CONVERGENCE, |w, h| Ok(write_convergence_csv(&sweep.offline, h, w)?))?;
            p
        }
        Mode::Online | Mode::Sweep => {
            if cfg.mode == Mode::Sweep {
                sweep.offline = offline_sweep(&problem, &locals, &reference, &cfg.sweep.modes, cfg.offline.eig_cutoff)?;
                log::info!("offline sweep done at {:.3?}", start.elapsed());
                out.write(CONVERGENCE_OFFLINE, |w, h| Ok(write_convergence_csv(&sweep.offline, h, w)?))?;
            }
            if cfg.mode == Mode::Online || cfg.sweep.online {
                let online_cfg = cfg.online_config();
                let run = enrich_loop(grid, &problem.op, &problem.part, &locals, space, &online_cfg, Some(&reference))?;
                log::info!("online loop done at {:.3?}", start.elapsed());
                sweep.online = run.records.clone();
                let bounds = bound_check(&run.records, online_cfg.theta, reference.energy);
                let reports = sweep.online_reports();
                let name = if cfg.mode == Mode::Sweep { CONVERGENCE_ONLINE } else { CONVERGENCE };
                out.write(name, |w, h| Ok(write_convergence_csv(&reports, h, w)?))?;
                out.write(ITERATIONS, |w, h| write_iterations(&run.records, h, w).map_err(io_err(dir)))?;
                let json = bounds_json(&bounds, &out.header);
                out.write(BOUNDS, |w, _| w.write_all(json.as_bytes()).map_err(io_err(dir)))?;
                sweep.bounds = Some(bounds);
                run.final_pressure().clone()
            } else {
                let (p, _) = coarse_solve(&problem.op, &problem.part, &space)?;
                p
            }
        }
        Mode::Fine => unreachable!(),
    };

    let flux = recover_flux(grid, &final_pressure);
    out.write(MS_PRESSURE, |w, h| Ok(write_cell_csv(grid, &final_pressure, h, w)?))?;
    out.write(MS_FLUX, |w, h| Ok(write_flux_csv(grid, &flux, h, w)?))?;
    let defect = block_mass_defect(grid, &problem.part, &flux, &problem.op.source);
    out.write(CONSERVATION, |w, h| {
        write_conservation(&defect, &problem.op.source, &problem.part, h, w).map_err(io_err(dir))
    })?;
    log::info!("run finished in {:.3?}", start.elapsed());
    Ok(RunSummary { files: out.files, sweep })
}

/// Writes the grid file only.
pub fn mesh(cfg: &ExperimentConfig) -> Result<(FineGrid, PathBuf), CliError> {
    cfg.validate()?;
    let grid = build_grid(cfg.grid_params(), &cfg.perforation_spec(), &cfg.permeability_spec(), cfg.boundary_spec())?;
    let dir = cfg.output.as_path();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(GRID_FILE);
    save_grid(&grid, &path)?;
    Ok((grid, path))
}

/// Writes `block,index,eigenvalue,kept` for every block eigenpair.
pub fn spectrum(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let problem = Problem::build(cfg)?;
    let locals = LocalProblems::new(&problem.grid, &problem.part);
    let space = build_offline_space(&problem.part, &locals.spectra, cfg.offline.modes, cfg.offline.eig_cutoff)?;
    let dir = cfg.output.as_path();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(SPECTRUM);
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        for h in config_header(cfg) {
            writeln!(w, "# {h}")?;
        }
        writeln!(w, "# lambda_min: {:.16e}", space.lambda)?;
        writeln!(w, "block,index,eigenvalue,kept")?;
        for (s, b) in locals.spectra.iter().zip(&space.blocks) {
            let kept = b.offline_count();
            for (k, lam) in s.eigenvalues.iter().enumerate() {
                writeln!(w, "{},{k},{lam:.16e},{}", s.block_id, u8::from(k < kept))?;
            }
        }
        w.flush()
    };
    write(&mut w).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}
