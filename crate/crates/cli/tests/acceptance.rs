//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use darcy_ms::assembly::{assemble, recover_flux, solve_fine, SourceSpec};
use darcy_ms::grid::{build_grid, BoundarySpec, GridParams, PerforationSpec, PermeabilitySpec};
use darcy_ms::metrics::{block_mass_defect, bound_check, BoundKind, ErrorReport, Reference};
use darcy_ms::offline::{build_offline_space, coarse_solve};
use darcy_ms::online::{compute_indicators, enrich_loop, select_blocks, EnrichmentRun, LocalProblems, OnlineConfig};
use darcy_ms_cli::config::{ExperimentConfig, PerforationSection, PermeabilitySection};
use darcy_ms_cli::run::{offline_sweep, run, Problem};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: f64) -> Result<(), String> {
    check(elapsed.as_secs_f64() < limit, || format!("took {elapsed:.2?}, limit {limit} s"))
}

/// Shared desk-scale model: offline sweep and the uniform online run.
struct Desk {
    problem: Problem,
    locals: LocalProblems,
    reference: Reference,
    offline: Vec<ErrorReport>,
    online: EnrichmentRun,
    setup: Duration,
}

const DESK_MODES: [usize; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

impl Desk {
    fn build() -> Self {
        let start = Instant::now();
        let cfg = ExperimentConfig::desk("unused");
        let problem = Problem::build(&cfg).expect("desk model");
        let reference = problem.reference().expect("fine solve");
        let locals = LocalProblems::new(&problem.grid, &problem.part);
        let offline = offline_sweep(&problem, &locals, &reference, &DESK_MODES, 1e5).expect("offline sweep");
        let space = build_offline_space(&problem.part, &locals.spectra, 1, 1e5).unwrap();
        let online_cfg = OnlineConfig { theta: 1.0, max_iter: 9, skip_tol: 1e-3 };
        let online = enrich_loop(&problem.grid, &problem.op, &problem.part, &locals, space, &online_cfg, Some(&reference))
            .expect("online run");
        Desk { problem, locals, reference, offline, online, setup: start.elapsed() }
    }
}

fn analytic_strip() -> Outcome {
    let start = Instant::now();
    let mut worst_p = 0.0f64;
    let mut worst_u = 0.0f64;
    for n in [4usize, 64] {
        let grid = build_grid(
            GridParams::new(n, 1, 1.0, 1.0 / n as f64),
            &PerforationSpec::none(),
            &PermeabilitySpec::Constant(1.0),
            BoundarySpec::default(),
        )
        .map_err(|e| e.to_string())?;
        let op = assemble(&grid, &SourceSpec::Constant(0.0)).map_err(|e| e.to_string())?;
        let p = solve_fine(&op).map_err(|e| e.to_string())?;
        for (w, &(i, _)) in grid.cells.iter().enumerate() {
            let exact = 1.0 - (i as f64 + 0.5) / n as f64;
            worst_p = worst_p.max((p[w] - exact).abs());
        }
        let flux = recover_flux(&grid, &p);
        // left face carries inflow (negative outward flux), right face outflow
        let mut u: Vec<f64> = flux.interior_velocity(&grid);
        let ud = flux.dirichlet_velocity(&grid);
        for (d, v) in grid.dirichlet_edges.iter().zip(ud) {
            u.push(if d.side == darcy_ms::grid::Side::Left { -v } else { v });
        }
        let u0 = u[0];
        worst_u = worst_u.max(u.iter().map(|v| (v - u0).abs()).fold(0.0, f64::max));
    }
    check(worst_p <= 1e-10, || format!("pressure deviation {worst_p:e}"))?;
    check(worst_u <= 1e-10, || format!("flux deviation {worst_u:e}"))?;
    within(start.elapsed(), 1.0)?;
    Ok(format!("max |p - exact| = {worst_p:.1e}, flux spread = {worst_u:.1e}, {:.2?}", start.elapsed()))
}

fn components_of(a: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = a.nrows();
    let mut label = vec![usize::MAX; n];
    let mut out = Vec::new();
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut stack = vec![s];
        let mut members = Vec::new();
        label[s] = id;
        while let Some(v) = stack.pop() {
            members.push(v);
            for u in 0..n {
                if u != v && a[(v, u)] != 0.0 && label[u] == usize::MAX {
                    label[u] = id;
                    stack.push(u);
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}

fn spectral_sanity(desk: &Desk) -> Outcome {
    let start = Instant::now();
    // rebuild the spectra to time them on their own
    let locals = LocalProblems::new(&desk.problem.grid, &desk.problem.part);
    let elapsed = start.elapsed();
    let mut worst_res = 0.0f64;
    let mut worst_zero = 0.0f64;
    let mut worst_const = 0.0f64;
    for (ops, s) in locals.ops.iter().zip(&locals.spectra) {
        let a = &ops.interior;
        let a_norm = a.norm();
        let lmax = s.lambda_max();
        let comps = components_of(a);
        check(comps.len() == s.num_components, || format!("block {}: component count", s.block_id))?;
        for (k, &lam) in s.eigenvalues.iter().enumerate() {
            let z = s.eigenvectors.column(k);
            let sz = DVector::from_iterator(z.len(), z.iter().zip(s.mass.iter()).map(|(a, b)| a * b));
            let r = a * z - &sz * lam;
            worst_res = worst_res.max(r.norm() / (a_norm.max(lam * s.mass.max()) * z.norm()));
        }
        worst_zero = worst_zero.max(s.eigenvalues[0] / lmax);
        // the leading modes span the component indicators
        for k in 0..s.num_components {
            check(s.eigenvalues[k] <= 1e-10 * lmax, || format!("block {}: mode {k} not null", s.block_id))?;
            let z = s.eigenvectors.column(k);
            let zmax = z.amax();
            let support: Vec<usize> = (0..z.len()).filter(|&i| z[i].abs() > 1e-10 * zmax).collect();
            let comp = comps.iter().find(|c| c.contains(&support[0])).unwrap();
            check(&support == comp, || format!("block {}: null mode {k} not a component indicator", s.block_id))?;
            let mean = support.iter().map(|&i| z[i]).sum::<f64>() / support.len() as f64;
            for i in 0..z.len() {
                let target = if comp.binary_search(&i).is_ok() { mean } else { 0.0 };
                worst_const = worst_const.max((z[i] - target).abs() / zmax);
            }
        }
    }
    check(worst_zero <= 1e-10, || format!("lambda_1 / lambda_max = {worst_zero:e}"))?;
    check(worst_res <= 1e-10, || format!("eigen residual {worst_res:e}"))?;
    check(worst_const <= 1e-10, || format!("null mode deviation {worst_const:e}"))?;
    within(elapsed, 30.0)?;
    Ok(format!(
        "{} blocks, max lambda_1/lambda_max {worst_zero:.1e}, residual {worst_res:.1e}, null-mode deviation {worst_const:.1e}, {elapsed:.2?}",
        locals.spectra.len()
    ))
}

fn small_instance(seed: u64) -> Problem {
    let mut cfg = ExperimentConfig::desk("unused");
    cfg.grid.nx = 40;
    cfg.grid.ny = 40;
    cfg.grid.lx = 40.0;
    cfg.grid.ly = 40.0;
    cfg.perforations = PerforationSection::Random { seed: Some(seed), count: 3, r_min: 3.0, r_max: 7.0 };
    cfg.permeability = PermeabilitySection::LogNormal { mean_log: 0.0, std_log: 2.0, seed };
    Problem::build(&cfg).expect("40x40 instance")
}

fn full_space_exactness() -> Outcome {
    let start = Instant::now();
    let problem = small_instance(6);
    let reference = problem.reference().map_err(|e| e.to_string())?;
    let locals = LocalProblems::new(&problem.grid, &problem.part);
    let l = problem.part.max_block_size();
    let space = build_offline_space(&problem.part, &locals.spectra, l, f64::INFINITY).map_err(|e| e.to_string())?;
    let (p, _) = coarse_solve(&problem.op, &problem.part, &space).map_err(|e| e.to_string())?;
    let rep = ErrorReport::new(&problem.grid, &problem.op, &reference, &p, space.dim()).map_err(|e| e.to_string())?;
    check(space.dim() == problem.grid.num_cells(), || "space is not the full space".into())?;
    check(rep.e_p <= 1e-16, || format!("e_p = {:e}", rep.e_p))?;
    within(start.elapsed(), 30.0)?;
    Ok(format!("dim {} = N, e_p = {:.1e}, {:.2?}", space.dim(), rep.e_p, start.elapsed()))
}

fn offline_trend(desk: &Desk) -> Outcome {
    let pick: Vec<&ErrorReport> = [1usize, 2, 4, 8].iter().map(|l| &desk.offline[l - 1]).collect();
    let e: Vec<f64> = pick.iter().map(|r| r.e_p).collect();
    check(e.windows(2).all(|w| w[1] < w[0]), || format!("e_p not strictly decreasing: {e:?}"))?;
    check(e[3] <= 0.1 * e[0], || format!("e_p(8) / e_p(1) = {:.3}", e[3] / e[0]))?;
    within(desk.setup, 120.0)?;
    Ok(format!(
        "e_p(L=1,2,4,8) = {:.3e}, {:.3e}, {:.3e}, {:.3e}; ratio {:.3}",
        e[0],
        e[1],
        e[2],
        e[3],
        e[3] / e[0]
    ))
}

/// Offline curve read at dimension `dim`: log-linear interpolation between
/// the neighboring offline points, `None` outside the sweep.
fn offline_at(desk: &Desk, dim: usize, value: impl Fn(&ErrorReport) -> f64) -> Option<f64> {
    let pts = &desk.offline;
    let x = dim as f64;
    for w in pts.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.dim <= dim && dim <= b.dim {
            if a.dim == b.dim {
                return Some(value(a).min(value(b)));
            }
            let t = (x - a.dim as f64) / (b.dim as f64 - a.dim as f64);
            return Some((value(a).ln() * (1.0 - t) + value(b).ln() * t).exp());
        }
    }
    None
}

fn online_superiority(desk: &Desk) -> Outcome {
    let recs = &desk.online.records;
    check(recs.len() == 10, || format!("{} online iterations, expected 9", recs.len() - 1))?;
    let mut matched = 0;
    let mut min_gain = f64::INFINITY;
    for r in recs {
        let Some(off) = offline_at(desk, r.dim, |e| e.energy_sq) else { continue };
        let en = r.energy_sq.unwrap();
        check(en <= off * (1.0 + 1e-9), || format!("dim {}: online {en:e} above offline {off:e}", r.dim))?;
        if r.iter > 0 {
            min_gain = min_gain.min(off / en);
        }
        matched += 1;
    }
    check(matched == recs.len(), || "online dimension beyond the offline sweep".into())?;
    let last = recs.last().unwrap();
    let off = offline_at(desk, last.dim, |e| e.e_p).unwrap();
    let ratio = off / last.e_p.unwrap();
    check(ratio >= 5.0, || format!("final e_p ratio {ratio:.2}"))?;
    within(desk.setup, 180.0)?;
    Ok(format!(
        "{matched} matched dimensions, energy gain >= {min_gain:.2}x after enrichment; final e_p {:.2e} vs offline {off:.2e} at dim {} ({ratio:.0}x)",
        last.e_p.unwrap(),
        last.dim,
    ))
}

fn residual_bound(desk: &Desk) -> Outcome {
    let rep = bound_check(&desk.online.records, 1.0, desk.reference.energy);
    let entries: Vec<_> = rep.of_kind(BoundKind::Residual).collect();
    check(entries.len() == desk.online.records.len(), || "missing iterations".into())?;
    let fails: Vec<usize> = entries.iter().filter(|e| !e.pass).map(|e| e.iter).collect();
    check(fails.is_empty(), || format!("violations at iterations {fails:?}"))?;
    let min_margin = entries.iter().map(|e| e.margin()).fold(f64::INFINITY, f64::min);
    Ok(format!("{} iterations, smallest margin rhs/lhs = {min_margin:.3e}", entries.len()))
}

fn contraction() -> Outcome {
    let start = Instant::now();
    let problem = small_instance(6);
    let reference = problem.reference().map_err(|e| e.to_string())?;
    let locals = LocalProblems::new(&problem.grid, &problem.part);
    check(problem.part.num_blocks() == 4, || format!("{} blocks", problem.part.num_blocks()))?;
    let mut summary = Vec::new();
    for theta in [0.4, 0.6, 0.8, 1.0] {
        let space = build_offline_space(&problem.part, &locals.spectra, 1, 1e5).unwrap();
        let cfg = OnlineConfig { theta, max_iter: 6, skip_tol: 1e-3 };
        let run = enrich_loop(&problem.grid, &problem.op, &problem.part, &locals, space, &cfg, Some(&reference))
            .map_err(|e| e.to_string())?;
        let rep = bound_check(&run.records, theta, reference.energy);
        let mono: Vec<_> = rep.of_kind(BoundKind::Monotone).collect();
        check(!mono.is_empty(), || format!("theta {theta}: no enrichment happened"))?;
        for e in rep.entries.iter().filter(|e| e.kind != BoundKind::Residual) {
            check(e.pass, || format!("theta {theta}, iteration {}: {} bound fails ({:e} > {:e})", e.iter, e.kind.name(), e.lhs, e.rhs))?;
        }
        let worst = mono.iter().map(|e| e.lhs / e.rhs).fold(0.0, f64::max);
        let cst = rep.of_kind(BoundKind::Contraction).count();
        summary.push(format!("theta {theta}: {} steps, worst ratio {worst:.2e}, {cst} contraction checks", mono.len()));
    }
    within(start.elapsed(), 60.0)?;
    Ok(summary.join("; "))
}

fn delta_oracle() -> Outcome {
    let problem = small_instance(6);
    let locals = LocalProblems::new(&problem.grid, &problem.part);
    let space = build_offline_space(&problem.part, &locals.spectra, 2, 1e5).unwrap();
    let (p, _) = coarse_solve(&problem.op, &problem.part, &space).map_err(|e| e.to_string())?;
    let ind = compute_indicators(&problem.op, &problem.part, &locals, &p, 0);
    let mut worst = 0.0f64;
    for (b, ops) in locals.ops.iter().enumerate() {
        let eig = SymmetricEigen::new(ops.velocity.clone());
        let r = &ind.residuals[b];
        // sup_q r(q)^2 / q^T A_V q over the eigenbasis of A_V
        let sup: f64 = (0..r.len())
            .map(|k| {
                let c = eig.eigenvectors.column(k).dot(r);
                c * c / eig.eigenvalues[k]
            })
            .sum::<f64>()
            .sqrt();
        check(sup > 0.0, || format!("block {b}: zero residual"))?;
        worst = worst.max((ind.delta[b] - sup).abs() / sup);
    }
    check(worst <= 1e-8, || format!("relative mismatch {worst:e}"))?;
    Ok(format!("{} blocks, max relative mismatch {worst:.1e}", locals.ops.len()))
}

fn coarse_conservation(desk: &Desk) -> Outcome {
    let grid = &desk.problem.grid;
    let part = &desk.problem.part;
    let source = &desk.problem.op.source;
    let mut pressures = Vec::new();
    for l in [1usize, 2, 4, 8] {
        let space = build_offline_space(part, &desk.locals.spectra, l, 1e5).unwrap();
        let (p, _) = coarse_solve(&desk.problem.op, part, &space).map_err(|e| e.to_string())?;
        pressures.push((format!("offline L={l}"), p));
    }
    for (n, p) in desk.online.pressures.iter().enumerate().skip(1) {
        pressures.push((format!("online iteration {n}"), p.clone()));
    }
    let mut worst = 0.0f64;
    for (label, p) in &pressures {
        let flux = recover_flux(grid, p);
        let defect = block_mass_defect(grid, part, &flux, source);
        // per-block scale: every face flux magnitude entering the sum, plus the source
        let mut scale = vec![0.0; part.num_blocks()];
        for (e, phi) in grid.interior_edges.iter().zip(&flux.interior) {
            scale[part.block_of[e.w1]] += phi.abs();
            scale[part.block_of[e.w2]] += phi.abs();
        }
        for (d, phi) in grid.dirichlet_edges.iter().zip(&flux.dirichlet) {
            scale[part.block_of[d.cell]] += phi.abs();
        }
        for (b, blk) in part.blocks.iter().enumerate() {
            scale[b] += blk.cells.iter().map(|&w| source[w].abs()).sum::<f64>();
        }
        for (d, s) in defect.iter().zip(&scale) {
            let rel = d.abs() / s.max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
            check(rel <= 1e-8, || format!("{label}: block defect {:e} against scale {s:e}", d.abs()))?;
        }
    }
    Ok(format!("{} stages, max relative block defect {worst:.1e}", pressures.len()))
}

fn theta_suite() -> Outcome {
    let d: Vec<f64> = [4.0f64, 3.0, 2.0, 1.0].iter().map(|x| x.sqrt()).collect();
    let cases: [(f64, Vec<usize>); 4] = [(0.6, vec![0, 1]), (0.4, vec![0]), (0.0, vec![]), (1.0, vec![0, 1, 2, 3])];
    for (theta, expect) in &cases {
        let got = select_blocks(&d, *theta, 0.0, 1.0);
        check(&got == expect, || format!("theta {theta}: {got:?} != {expect:?}"))?;
    }
    // θ = 1 keeps every block above the skip threshold
    let got = select_blocks(&[0.5, 1e-5, 1.0, 2e-3], 1.0, 1e-3, 1.0);
    check(got == vec![2, 0, 3], || format!("skip case {got:?}"))?;
    Ok(format!("{} cases exact", cases.len() + 1))
}

fn read_artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name.ends_with(".csv") || name.ends_with(".json") || name.ends_with(".txt") {
            out.insert(name, fs::read(&path).unwrap());
        }
    }
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for (threads, sub) in [(1usize, "serial"), (4, "parallel")] {
        let mut cfg = ExperimentConfig::desk(tmp.path().join("run"));
        cfg.online.iterations = 3;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
        pool.install(|| run(&cfg)).map_err(|e| e.to_string())?;
        let dest = tmp.path().join(sub);
        fs::rename(tmp.path().join("run"), &dest).map_err(|e| e.to_string())?;
        files.push(read_artifacts(&dest));
    }
    check(files[0].keys().eq(files[1].keys()), || "different artifact sets".into())?;
    let csvs = files[0].keys().filter(|k| k.ends_with(".csv")).count();
    check(csvs >= 6, || format!("only {csvs} CSV files"))?;
    for (name, bytes) in &files[0] {
        check(&files[1][name] == bytes, || format!("{name} differs between 1 and 4 threads"))?;
    }
    Ok(format!("{} artifacts ({csvs} CSV) byte-identical for 1 and 4 threads", files[0].len()))
}

fn main() {
    let desk = Desk::build();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1D analytic strip", Box::new(analytic_strip)),
        ("spectral sanity", Box::new(|| spectral_sanity(&desk))),
        ("full-space exactness", Box::new(full_space_exactness)),
        ("offline trend", Box::new(|| offline_trend(&desk))),
        ("online superiority", Box::new(|| online_superiority(&desk))),
        ("residual bound", Box::new(|| residual_bound(&desk))),
        ("energy decay", Box::new(contraction)),
        ("indicator oracle", Box::new(delta_oracle)),
        ("coarse conservation", Box::new(|| coarse_conservation(&desk))),
        ("theta selection", Box::new(theta_suite)),
        ("determinism", Box::new(determinism)),
    ];
    println!("desk model ready in {:.2?}", desk.setup);
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail}", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
