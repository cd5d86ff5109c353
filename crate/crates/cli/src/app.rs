//! Subcommands of the `fpn` binary.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use fpn_core::angular::operators_for_order;
use fpn_core::bench::{
    diffusion_reference_rho, relative_l2_error, run_benchmark, BenchReport, ProblemName, ProblemSpec, Reference,
    Regime, Sweep, GRADUAL_VARIANCE,
};
use fpn_core::grid::{MaterialField, Mesh, SimState};
use fpn_core::limiter::{build_constraints, check_conditions, ls_limit, opt_limit, LimiterKind};
use fpn_core::solver::{diffusion_reference_step, RunSummary, Solver, SolverConfig};
use log::info;
use serde::Serialize;

use crate::config::{resolve, Overrides, Resolved};
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, write_json, write_snapshot, Snapshot};

#[derive(Debug, Parser)]
#[command(
    name = "fpn",
    version,
    about = "Positive asymptotic-preserving filtered PN transport solver"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one problem and write rho snapshots and a JSON summary.
    Run(CommonArgs),
    /// Run a named benchmark with its published settings.
    Bench {
        /// line_source, lattice or convergence
        name: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Sweep eps or the mesh size and report errors and observed orders.
    Sweep {
        #[command(flatten)]
        sweep: SweepArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the invariant checks on a small grid.
    Check {
        /// Cells per side of the test grid.
        #[arg(long, default_value_t = 12)]
        cells: usize,
    },
}

#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// TOML file with configuration keys; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, default_value = "fpn-out")]
    pub out: PathBuf,
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub regime: Option<String>,
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long)]
    pub half_width: Option<f64>,
    #[arg(long)]
    pub ic_variance: Option<f64>,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub z_even: Option<bool>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub sigma_f: Option<f64>,
    #[arg(long)]
    pub cfl: Option<f64>,
    /// none, ls_relaxed, opt_relaxed, ls_pointwise or opt_pointwise
    #[arg(long)]
    pub limiter: Option<String>,
    #[arg(long)]
    pub limiter_tol: Option<f64>,
    #[arg(long)]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub snapshots: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct SweepArgs {
    /// Comma-separated eps values.
    #[arg(long, value_delimiter = ',', conflicts_with = "cells_values")]
    pub eps_values: Vec<f64>,
    /// Comma-separated mesh sizes (cells per side).
    #[arg(long, value_delimiter = ',')]
    pub cells_values: Vec<usize>,
    /// Reference mesh for a mesh sweep; defaults to four times the finest.
    #[arg(long)]
    pub reference_cells: Option<usize>,
}

fn parse_key<T: std::str::FromStr>(key: &str, v: &Option<String>) -> CliResult<Option<T>>
where
    T::Err: std::fmt::Display,
{
    v.as_deref()
        .map(|s| s.parse::<T>().map_err(|e| CliError::Usage(format!("--{key}: {e}"))))
        .transpose()
}

impl CommonArgs {
    fn flag_overrides(&self) -> CliResult<Overrides> {
        Ok(Overrides {
            problem: parse_key::<ProblemName>("problem", &self.problem)?,
            regime: parse_key::<Regime>("regime", &self.regime)?,
            cells: self.cells,
            half_width: self.half_width,
            ic_variance: self.ic_variance,
            order: self.order,
            z_even: self.z_even,
            eps: self.eps,
            theta: self.theta,
            sigma_f: self.sigma_f,
            cfl: self.cfl,
            limiter: parse_key::<LimiterKind>("limiter", &self.limiter)?,
            limiter_tol: self.limiter_tol,
            t_final: self.t_final,
            dt: self.dt,
            snapshots: self.snapshots,
        })
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> CliResult<Resolved> {
        let file = match &self.config {
            Some(path) => Overrides::from_file(path)?,
            None => Overrides::default(),
        };
        resolve(&file.merged(&self.flag_overrides()?))
    }
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> CliResult<i32> {
    match command {
        Command::Run(common) => cmd_run(common),
        Command::Bench { name, common } => cmd_bench(name, common),
        Command::Sweep { sweep, common } => cmd_sweep(sweep, common),
        Command::Check { cells } => cmd_check(*cells),
    }
}

#[derive(Debug, Serialize)]
pub struct RunReport<'a> {
    pub config: &'a Resolved,
    pub cells_limited_total: usize,
    pub min_rho: f64,
    pub max_rho: f64,
    pub positive: bool,
    /// Relative L2 error against the diffusion scheme, for diffusive runs.
    pub error: Option<f64>,
    pub summary: RunSummary,
    pub snapshots: Vec<String>,
    pub seconds: f64,
}

/// `min rho >= -1e-10 max rho`.
fn positive(summary: &RunSummary) -> bool {
    summary.min_rho >= -1e-10 * summary.max_rho.abs()
}

fn cmd_run(common: &CommonArgs) -> CliResult<i32> {
    let resolved = common.resolve()?;
    let spec = &resolved.spec;
    ensure_dir(&common.out)?;
    let (mut solver, mut state) = spec.setup(spec.cells, spec.solver.eps, spec.solver.limiter)?;
    let t_final = spec.solver.t_final;
    let targets: Vec<f64> = (1..=resolved.snapshots)
        .map(|k| t_final * k as f64 / resolved.snapshots as f64)
        .collect();
    let mut snaps = Vec::new();
    let start = Instant::now();
    let summary = solver.run_with(&mut state, |s, _| {
        // First time level at or past each target.
        while snaps.len() < targets.len() && s.t >= targets[snaps.len()] * (1.0 - 1e-12) {
            snaps.push(Snapshot::new(&s.mesh, s.t, s.rho()));
        }
        Ok(())
    })?;
    let seconds = start.elapsed().as_secs_f64();
    let mut names = Vec::new();
    for (k, snap) in snaps.iter().enumerate() {
        let path = write_snapshot(&common.out, k, snap)?;
        names.push(
            path.file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
    }
    let error = match spec.reference {
        Reference::Diffusion => {
            let reference = diffusion_reference_rho(spec, spec.cells, summary.dt)?;
            Some(relative_l2_error(&state.mesh, &state.rho(), &state.mesh, &reference)?)
        }
        _ => None,
    };
    let report = RunReport {
        config: &resolved,
        cells_limited_total: summary.cells_limited_total,
        min_rho: summary.min_rho,
        max_rho: summary.max_rho,
        positive: positive(&summary),
        error,
        summary,
        snapshots: names,
        seconds,
    };
    write_json(&common.out.join("summary.json"), &report)?;
    println!(
        "{} {}: {} steps to t = {}, min rho {:.3e}, cells limited {}{}",
        spec.name,
        spec.regime,
        report.summary.steps,
        report.summary.t,
        report.min_rho,
        report.cells_limited_total,
        error.map(|e| format!(", E = {e:.4e}")).unwrap_or_default()
    );
    if report.positive {
        Ok(0)
    } else {
        eprintln!(
            "negative concentration: min rho {:e} with max {:e}",
            report.min_rho, report.max_rho
        );
        Ok(2)
    }
}

fn print_report(report: &BenchReport) {
    println!(
        "{:>6} {:>10} {:>14} {:>12} {:>8} {:>10}",
        "cells", "eps", "limiter", "error", "steps", "seconds"
    );
    for r in &report.runs {
        let e = r.error.map(|e| format!("{e:.4e}")).unwrap_or_else(|| "-".into());
        println!(
            "{:>6} {:>10.1e} {:>14} {:>12} {:>8} {:>10.1}",
            r.cells, r.eps, r.limiter, e, r.summary.steps, r.seconds
        );
    }
    if !report.orders.is_empty() {
        let nu: Vec<String> = report.orders.iter().map(|v| format!("{v:.2}")).collect();
        println!("observed orders: {}", nu.join(" "));
    }
}

fn finish_report(report: &BenchReport, out: &Path, stem: &str) -> CliResult<i32> {
    ensure_dir(out)?;
    write_json(&out.join(format!("{stem}.json")), report)?;
    print_report(report);
    let ok = report.runs.iter().all(|r| positive(&r.summary));
    Ok(if ok { 0 } else { 2 })
}

fn cmd_bench(name: &str, common: &CommonArgs) -> CliResult<i32> {
    let problem: ProblemName = name.parse()?;
    if common.problem.as_deref().is_some_and(|p| p != name) {
        return Err(CliError::Usage(format!("--problem conflicts with benchmark {name}")));
    }
    let mut flags = common.flag_overrides()?;
    flags.problem = Some(problem);
    let file = match &common.config {
        Some(path) => Overrides::from_file(path)?,
        None => Overrides::default(),
    };
    let resolved = resolve(&file.merged(&flags))?;
    info!("running benchmark {} ({})", resolved.spec.name, resolved.spec.regime);
    let report = run_benchmark(&resolved.spec)?;
    finish_report(
        &report,
        &common.out,
        &format!("bench_{}_{}", resolved.spec.name, resolved.spec.regime),
    )
}

fn cmd_sweep(sweep: &SweepArgs, common: &CommonArgs) -> CliResult<i32> {
    let mut spec = common.resolve()?.spec;
    if !sweep.eps_values.is_empty() {
        spec.sweep = Sweep::Eps {
            values: sweep.eps_values.clone(),
        };
        if spec.reference == Reference::Transport {
            spec.reference = Reference::None;
        }
    } else if !sweep.cells_values.is_empty() {
        let finest = sweep.cells_values.iter().copied().max().unwrap_or(1);
        spec.sweep = Sweep::Mesh {
            cells: sweep.cells_values.clone(),
            reference_cells: sweep.reference_cells.unwrap_or(4 * finest),
        };
        if spec.reference == Reference::None {
            spec.reference = Reference::Transport;
        }
    } else {
        return Err(CliError::Usage("sweep needs --eps-values or --cells-values".into()));
    }
    let report = run_benchmark(&spec)?;
    finish_report(&report, &common.out, &format!("sweep_{}_{}", spec.name, spec.regime))
}

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check_mass(cells: usize) -> CliResult<Check> {
    let mesh = Mesh::square(cells, 1.0)?;
    let mat = MaterialField::from_fn(&mesh, |x, y| (if x * y > 0.0 { 1.0 } else { 0.5 }, 0.0))?;
    let mut worst = 0.0f64;
    for eps in [1.0, 1e-3] {
        let config = SolverConfig {
            order: 2,
            eps,
            limiter: LimiterKind::LsRelaxed,
            ..SolverConfig::default()
        };
        let mut solver = Solver::new(config, mat.clone())?;
        let mut state = SimState::zeros(&mesh, solver.operators().micro_len());
        let c = cells / 2;
        for j in c - 1..=c {
            for i in c - 1..=c {
                state.macro_field[mesh.idx(i, j)] = 1.0;
            }
        }
        let m0 = state.mass();
        solver.step(&mut state, None)?;
        worst = worst.max(((state.mass() - m0) / m0).abs());
    }
    Ok(Check {
        name: "mass conservation",
        pass: worst <= 1e-12,
        detail: format!("relative drift {worst:.1e}"),
    })
}

fn check_symmetry(cells: usize) -> CliResult<Check> {
    let mesh = Mesh::square(cells, 1.0)?;
    let n = cells;
    // Evaluate everything at the folded cell so the data is symmetric bitwise.
    let folded = |q: usize| {
        let (i, j) = (q % n, q / n);
        let (a, b) = (i.min(n - 1 - i), j.min(n - 1 - j));
        mesh.cell_center(a.min(b), a.max(b))
    };
    let sigma: Vec<f64> = (0..n * n)
        .map(|q| {
            let (x, y) = folded(q);
            1.0 + 0.5 * (x * x + y * y)
        })
        .collect();
    let mat = MaterialField::new(&mesh, &sigma, &vec![0.1; n * n])?;
    let config = SolverConfig {
        order: 3,
        limiter: LimiterKind::LsRelaxed,
        ..SolverConfig::default()
    };
    let mut solver = Solver::new(config, mat)?;
    let mut state = SimState::zeros(&mesh, solver.operators().micro_len());
    for q in 0..n * n {
        let (x, y) = folded(q);
        state.macro_field[mesh.idx(q % n, q / n)] = (-(x * x + y * y) / 0.04).exp();
    }
    let mut symmetric = true;
    for _ in 0..5 {
        solver.step(&mut state, None)?;
        for j in 0..n {
            for i in 0..n {
                let v = state.macro_field[mesh.idx(i, j)].to_bits();
                for w in [mesh.idx(n - 1 - i, j), mesh.idx(i, n - 1 - j), mesh.idx(j, i)] {
                    symmetric &= v == state.macro_field[w].to_bits();
                }
            }
        }
    }
    Ok(Check {
        name: "symmetry",
        pass: symmetric,
        detail: "rho invariant under both mirrors and the diagonal swap".into(),
    })
}

fn check_limit(cells: usize) -> CliResult<Check> {
    let mesh = Mesh::square(cells, 1.0)?;
    let mat = MaterialField::from_fn(&mesh, |x, y| (if x * y > 0.0 { 1.0 } else { 0.25 }, 0.2))?;
    let config = SolverConfig {
        order: 3,
        eps: 1e-8,
        ..SolverConfig::default()
    };
    let mut solver = Solver::new(config, mat.clone())?;
    let mut state = SimState::zeros(&mesh, solver.operators().micro_len());
    for j in 0..cells {
        for i in 0..cells {
            let (x, y) = mesh.cell_center(i, j);
            state.macro_field[mesh.idx(i, j)] = 1.0 + 0.5 * (PI * x).sin() * (2.0 * y).cos();
        }
    }
    let want = diffusion_reference_step(&state.macro_field, &mat, solver.dt())?;
    solver.step(&mut state, None)?;
    let num: f64 = state
        .macro_field
        .iter()
        .zip(&want)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den: f64 = want.iter().map(|b| b * b).sum();
    let d = (num / den).sqrt();
    Ok(Check {
        name: "diffusion limit",
        pass: d <= 1e-6,
        detail: format!("relative difference to the 9-point scheme {d:.1e}"),
    })
}

fn check_limiter() -> CliResult<Check> {
    let ops = operators_for_order(3, false)?;
    let cs = build_constraints(&ops, 0.1, 0.05, 0.05)?;
    let nm = ops.micro_len();
    let mut bad = 0;
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..500 {
        let ubar = 2.0 * next();
        let v: Vec<f64> = (0..nm).map(|_| 6.0 * next() - 3.0).collect();
        let ls = ls_limit(ubar, &v, &cs)?;
        let opt = opt_limit(ubar, &v, &cs, 1e-6)?.v;
        if !check_conditions(ubar, &ls, &cs)?.passed() || check_conditions(ubar, &opt, &cs)?.worst_residual < -1e-9 {
            bad += 1;
        }
    }
    Ok(Check {
        name: "limiter feasibility",
        pass: bad == 0,
        detail: format!("{bad} infeasible outputs in 500 random cells"),
    })
}

fn check_positivity(cells: usize) -> CliResult<Check> {
    let mut spec = ProblemSpec::preset(ProblemName::LineSource, Regime::Kinetic)?;
    spec.cells = cells;
    spec.solver.order = 3;
    spec.solver.t_final = 0.2;
    spec.ic_variance = GRADUAL_VARIANCE;
    let (mut solver, mut state) = spec.setup(cells, 1.0, LimiterKind::LsRelaxed)?;
    let s = solver.run(&mut state)?;
    Ok(Check {
        name: "positivity",
        pass: s.min_rho >= -1e-12 * s.max_rho,
        detail: format!("min rho {:.2e}, max rho {:.2e}", s.min_rho, s.max_rho),
    })
}

fn cmd_check(cells: usize) -> CliResult<i32> {
    if cells < 6 || !cells.is_multiple_of(2) {
        return Err(CliError::Usage("check needs an even cell count of at least 6".into()));
    }
    let checks = [
        check_mass(cells)?,
        check_symmetry(cells)?,
        check_limit(cells)?,
        check_limiter()?,
        check_positivity(cells)?,
    ];
    let mut ok = true;
    for c in &checks {
        ok &= c.pass;
        println!("{}: {} ({})", c.name, if c.pass { "PASS" } else { "FAIL" }, c.detail);
    }
    Ok(if ok { 0 } else { 2 })
}
