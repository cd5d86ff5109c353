//! Benchmark problems: the line source, the absorber lattice and the
//! space-time convergence study, with their error metrics and sweeps.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{FpnError, Result};
use crate::grid::{MaterialField, Mesh, SimState};
use crate::limiter::LimiterKind;
use crate::solver::{run_diffusion_reference, RunSummary, Solver, SolverConfig};

pub const HALF_WIDTH: f64 = 1.5;
/// Initial variance of the line source.
pub const STEEP_VARIANCE: f64 = 9e-4;
/// Initial variance of the convergence study.
pub const GRADUAL_VARIANCE: f64 = 5e-3;

pub const ABSORBER_SIGMA_S: f64 = 0.1;
pub const ABSORBER_SIGMA_A: f64 = 9.9;

/// Absorbing unit squares of the lattice, as `(column, row)` in a 3x3 grid
/// over `[-1.5, 1.5]^2` with `(0, 0)` at the lower left. The centre square
/// holds the initial pulse and is scattering; absorbers follow the
/// checkerboard from there.
pub const LATTICE_ABSORBERS: [(usize, usize); 4] = [(1, 0), (0, 1), (2, 1), (1, 2)];

/// `rho` of the normalised Gaussian pulse at `(x, y)`.
pub fn gaussian_density(x: f64, y: f64, variance: f64) -> f64 {
    (-(x * x + y * y) / (2.0 * variance)).exp() / (2.0 * PI * variance)
}

/// Isotropic Gaussian pulse: `rho = sqrt(4 pi) ubar` is the normalised
/// Gaussian sampled at cell centres, and the micro part is zero.
pub fn gaussian_ic(mesh: &Mesh, n_micro: usize, variance: f64) -> Result<SimState> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(FpnError::config("ic_variance", "must be positive"));
    }
    let mut state = SimState::zeros(mesh, n_micro);
    let scale = 1.0 / (4.0 * PI).sqrt();
    for j in 0..mesh.ny {
        for i in 0..mesh.nx {
            let (x, y) = mesh.cell_center(i, j);
            state.macro_field[mesh.idx(i, j)] = scale * gaussian_density(x, y, variance);
        }
    }
    Ok(state)
}

/// Index of the lattice square containing the cell centre, if any.
fn lattice_square(x: f64, y: f64) -> (usize, usize) {
    let col = ((x + HALF_WIDTH).floor().max(0.0) as usize).min(2);
    let row = ((y + HALF_WIDTH).floor().max(0.0) as usize).min(2);
    (col, row)
}

pub fn lattice_materials(mesh: &Mesh) -> Result<MaterialField> {
    MaterialField::from_fn(mesh, |x, y| {
        if LATTICE_ABSORBERS.contains(&lattice_square(x, y)) {
            (ABSORBER_SIGMA_S, ABSORBER_SIGMA_A)
        } else {
            (1.0, 0.0)
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemName {
    LineSource,
    Lattice,
    Convergence,
}

impl ProblemName {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemName::LineSource => "line_source",
            ProblemName::Lattice => "lattice",
            ProblemName::Convergence => "convergence",
        }
    }
}

impl fmt::Display for ProblemName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemName {
    type Err = FpnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "line_source" => Ok(ProblemName::LineSource),
            "lattice" => Ok(ProblemName::Lattice),
            "convergence" => Ok(ProblemName::Convergence),
            _ => Err(FpnError::config("problem", format!("unknown problem {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Kinetic,
    Transition,
    Diffusive,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Kinetic => "kinetic",
            Regime::Transition => "transition",
            Regime::Diffusive => "diffusive",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = FpnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kinetic" => Ok(Regime::Kinetic),
            "transition" => Ok(Regime::Transition),
            "diffusive" => Ok(Regime::Diffusive),
            _ => Err(FpnError::config("regime", format!("unknown regime {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Layout {
    Uniform { sigma_s: f64, sigma_a: f64 },
    Lattice,
}

/// What the computed `rho` is compared against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// No error is computed.
    None,
    /// The limiting 9-point diffusion scheme, run with the same step.
    Diffusion,
    /// The same transport problem on the reference mesh.
    Transport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Sweep {
    Single,
    Eps { values: Vec<f64> },
    Mesh { cells: Vec<usize>, reference_cells: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub name: ProblemName,
    pub regime: Regime,
    pub half_width: f64,
    pub cells: usize,
    pub ic_variance: f64,
    pub layout: Layout,
    pub reference: Reference,
    pub sweep: Sweep,
    pub solver: SolverConfig,
}

impl ProblemSpec {
    /// Published parameters of each benchmark.
    pub fn preset(name: ProblemName, regime: Regime) -> Result<Self> {
        let (order, eps, t_final) = match (name, regime) {
            (ProblemName::Convergence, Regime::Kinetic) => (5, 1.0, 1.0),
            (ProblemName::Convergence, Regime::Transition) => (5, 1e-2, 0.05),
            (ProblemName::Convergence, Regime::Diffusive) => (3, 1e-4, 0.01),
            (_, Regime::Kinetic) => (11, 1.0, 1.0),
            (_, Regime::Diffusive) => (3, 1e-3, 0.1),
            (_, Regime::Transition) => {
                return Err(FpnError::config(
                    "regime",
                    format!("{name} is defined for the kinetic and diffusive regimes only"),
                ))
            }
        };
        let cfl = if name == ProblemName::Lattice { 1.0 } else { 0.9 };
        let solver = SolverConfig {
            order,
            eps,
            t_final,
            cfl,
            limiter: if name == ProblemName::Convergence {
                LimiterKind::LsRelaxed
            } else {
                LimiterKind::None
            },
            ..SolverConfig::default()
        };
        let uniform = Layout::Uniform {
            sigma_s: 1.0,
            sigma_a: 0.0,
        };
        let spec = match name {
            ProblemName::LineSource | ProblemName::Lattice => ProblemSpec {
                name,
                regime,
                half_width: HALF_WIDTH,
                cells: 150,
                ic_variance: STEEP_VARIANCE,
                layout: if name == ProblemName::Lattice {
                    Layout::Lattice
                } else {
                    uniform
                },
                reference: if regime == Regime::Diffusive {
                    Reference::Diffusion
                } else {
                    Reference::None
                },
                sweep: Sweep::Single,
                solver,
            },
            ProblemName::Convergence => ProblemSpec {
                name,
                regime,
                half_width: HALF_WIDTH,
                cells: 160,
                ic_variance: GRADUAL_VARIANCE,
                layout: uniform,
                reference: Reference::Transport,
                sweep: Sweep::Mesh {
                    cells: vec![20, 40, 80, 160],
                    reference_cells: 640,
                },
                solver,
            },
        };
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(FpnError::config("half_width", "must be positive"));
        }
        if self.cells == 0 {
            return Err(FpnError::config("cells", "must be positive"));
        }
        if !(self.ic_variance > 0.0 && self.ic_variance.is_finite()) {
            return Err(FpnError::config("ic_variance", "must be positive"));
        }
        if self.layout == Layout::Lattice && self.half_width != HALF_WIDTH {
            return Err(FpnError::config(
                "half_width",
                "the lattice layout needs the [-1.5, 1.5]^2 domain",
            ));
        }
        match &self.sweep {
            Sweep::Single => {}
            Sweep::Eps { values } => {
                if values.len() < 2 || values.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
                    return Err(FpnError::config("sweep", "needs at least two positive eps values"));
                }
            }
            Sweep::Mesh { cells, reference_cells } => {
                if cells.len() < 2 || cells.contains(&0) {
                    return Err(FpnError::config("sweep", "needs at least two positive mesh sizes"));
                }
                if self.reference != Reference::None && cells.iter().any(|&c| reference_cells % c != 0) {
                    return Err(FpnError::config(
                        "sweep",
                        "reference_cells must be a multiple of every mesh size",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn mesh(&self, cells: usize) -> Result<Mesh> {
        Mesh::square(cells, self.half_width)
    }

    pub fn materials(&self, mesh: &Mesh) -> Result<MaterialField> {
        match self.layout {
            Layout::Uniform { sigma_s, sigma_a } => MaterialField::uniform(mesh, sigma_s, sigma_a),
            Layout::Lattice => lattice_materials(mesh),
        }
    }

    /// Solver and initial state for one run of this problem.
    pub fn setup(&self, cells: usize, eps: f64, limiter: LimiterKind) -> Result<(Solver, SimState)> {
        let mesh = self.mesh(cells)?;
        let config = SolverConfig {
            eps,
            limiter,
            ..self.solver.clone()
        };
        let solver = Solver::new(config, self.materials(&mesh)?)?;
        let state = gaussian_ic(&mesh, solver.operators().micro_len(), self.ic_variance)?;
        Ok((solver, state))
    }
}

/// Samples a fine cell-centred field at the centres of a coarser mesh
/// covering the same rectangle. Odd ratios inject the coinciding fine value;
/// even ratios use the four-point cubic midpoint rule along each axis, with
/// zeros outside the domain.
pub fn restrict(fine: &[f64], fine_mesh: &Mesh, coarse_mesh: &Mesh) -> Result<Vec<f64>> {
    let rx = ratio(fine_mesh.nx, coarse_mesh.nx)?;
    let ry = ratio(fine_mesh.ny, coarse_mesh.ny)?;
    if fine.len() != fine_mesh.cells() {
        return Err(FpnError::Consistency("field does not match the fine mesh".into()));
    }
    let (nfx, ncx, ncy) = (fine_mesh.nx, coarse_mesh.nx, coarse_mesh.ny);
    let mut rows = vec![0.0; ncx * fine_mesh.ny];
    for j in 0..fine_mesh.ny {
        let line = &fine[j * nfx..(j + 1) * nfx];
        for i in 0..ncx {
            rows[j * ncx + i] = sample(|k| line.get(k).copied(), i, rx);
        }
    }
    let mut out = vec![0.0; ncx * ncy];
    for j in 0..ncy {
        for i in 0..ncx {
            out[j * ncx + i] = sample(|k| rows.get(k * ncx + i).copied().filter(|_| k < fine_mesh.ny), j, ry);
        }
    }
    Ok(out)
}

fn ratio(fine: usize, coarse: usize) -> Result<usize> {
    if coarse == 0 || fine < coarse || !fine.is_multiple_of(coarse) {
        return Err(FpnError::Consistency(format!(
            "mesh of {fine} cells is not an integer refinement of {coarse} cells"
        )));
    }
    Ok(fine / coarse)
}

fn sample(get: impl Fn(usize) -> Option<f64>, coarse: usize, r: usize) -> f64 {
    let at = |k: isize| if k < 0 { 0.0 } else { get(k as usize).unwrap_or(0.0) };
    let base = (coarse * r) as isize;
    if r % 2 == 1 {
        return at(base + (r as isize - 1) / 2);
    }
    let k0 = base + r as isize / 2 - 1;
    (9.0 * (at(k0) + at(k0 + 1)) - (at(k0 - 1) + at(k0 + 2))) / 16.0
}

fn l2(v: &[f64], area: f64) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() * area).sqrt()
}

/// `||rho_c - rho_ref|| / ||rho_ref||` in the discrete L2 norm of the coarse
/// mesh, with `rho_ref` restricted to the coarse cell centres. Fields are
/// interior, row-major.
pub fn relative_l2_error(coarse_mesh: &Mesh, rho_c: &[f64], ref_mesh: &Mesh, rho_ref: &[f64]) -> Result<f64> {
    if rho_c.len() != coarse_mesh.cells() {
        return Err(FpnError::Consistency("field does not match the coarse mesh".into()));
    }
    let r = restrict(rho_ref, ref_mesh, coarse_mesh)?;
    let area = coarse_mesh.cell_area();
    let norm = l2(&r, area);
    if norm == 0.0 {
        return Err(FpnError::Undefined("relative error against a zero reference".into()));
    }
    let diff: Vec<f64> = rho_c.iter().zip(&r).map(|(a, b)| a - b).collect();
    Ok(l2(&diff, area) / norm)
}

/// `nu_i = log(E_i / E_{i+1}) / log(p_i / p_{i+1})`.
pub fn observed_order(errors: &[f64], params: &[f64]) -> Result<Vec<f64>> {
    if errors.len() != params.len() || errors.len() < 2 {
        return Err(FpnError::config(
            "observed_order",
            "needs two or more matching errors and parameters",
        ));
    }
    errors
        .windows(2)
        .zip(params.windows(2))
        .map(|(e, p)| {
            if !(e[0] > 0.0 && e[1] > 0.0) {
                return Err(FpnError::Undefined("observed order of a zero error".into()));
            }
            let lp = (p[0] / p[1]).ln();
            if !(lp.is_finite() && lp != 0.0) {
                return Err(FpnError::Undefined(
                    "observed order with equal or zero parameters".into(),
                ));
            }
            Ok((e[0] / e[1]).ln() / lp)
        })
        .collect()
}

/// One solver run inside a benchmark.
#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub cells: usize,
    pub eps: f64,
    pub limiter: LimiterKind,
    pub error: Option<f64>,
    pub summary: RunSummary,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub problem: ProblemSpec,
    pub runs: Vec<RunRecord>,
    /// Observed orders between consecutive runs, when errors are available.
    pub orders: Vec<f64>,
}

/// Runs one configuration to `t_final` and returns the final state.
pub fn run_single(
    spec: &ProblemSpec,
    cells: usize,
    eps: f64,
    limiter: LimiterKind,
) -> Result<(SimState, RunSummary, f64)> {
    let (mut solver, mut state) = spec.setup(cells, eps, limiter)?;
    let start = Instant::now();
    let summary = solver.run(&mut state)?;
    let seconds = start.elapsed().as_secs_f64();
    info!(
        "{} {} cells={cells} eps={eps:e} limiter={limiter}: {} steps in {seconds:.1} s",
        spec.name, spec.regime, summary.steps
    );
    Ok((state, summary, seconds))
}

/// `rho` of the limiting diffusion scheme for the same problem and mesh,
/// advanced with step `dt`.
pub fn diffusion_reference_rho(spec: &ProblemSpec, cells: usize, dt: f64) -> Result<Vec<f64>> {
    let mesh = spec.mesh(cells)?;
    let material = spec.materials(&mesh)?;
    let init = gaussian_ic(&mesh, 0, spec.ic_variance)?;
    let u = run_diffusion_reference(&init.macro_field, &material, dt, spec.solver.t_final)?;
    let s = (4.0 * PI).sqrt();
    Ok(mesh.interior(&u).into_iter().map(|v| s * v).collect())
}

/// Step the transport solver takes on `cells` for `eps`.
pub fn solver_dt(spec: &ProblemSpec, cells: usize, eps: f64) -> Result<f64> {
    let (solver, _) = spec.setup(cells, eps, LimiterKind::None)?;
    Ok(solver.dt())
}

pub fn run_benchmark(spec: &ProblemSpec) -> Result<BenchReport> {
    spec.validate()?;
    let limiter = spec.solver.limiter;
    let eps0 = spec.solver.eps;
    let mut runs = Vec::new();
    let mut params = Vec::new();
    match &spec.sweep {
        Sweep::Single | Sweep::Eps { .. } => {
            let eps_values = match &spec.sweep {
                Sweep::Eps { values } => values.clone(),
                _ => vec![eps0],
            };
            for eps in eps_values {
                let (state, summary, seconds) = run_single(spec, spec.cells, eps, limiter)?;
                let error = match spec.reference {
                    Reference::Diffusion => {
                        let rho_ref = diffusion_reference_rho(spec, spec.cells, summary.dt)?;
                        Some(relative_l2_error(&state.mesh, &state.rho(), &state.mesh, &rho_ref)?)
                    }
                    Reference::Transport => {
                        return Err(FpnError::config(
                            "reference",
                            "a transport reference needs a mesh sweep",
                        ))
                    }
                    Reference::None => None,
                };
                params.push(eps);
                runs.push(RunRecord {
                    cells: spec.cells,
                    eps,
                    limiter,
                    error,
                    summary,
                    seconds,
                });
            }
        }
        Sweep::Mesh { cells, reference_cells } => {
            let reference = match spec.reference {
                Reference::None => None,
                Reference::Diffusion => {
                    let dt = solver_dt(spec, *reference_cells, eps0)?;
                    Some((
                        spec.mesh(*reference_cells)?,
                        diffusion_reference_rho(spec, *reference_cells, dt)?,
                    ))
                }
                Reference::Transport => {
                    let (state, _, _) = run_single(spec, *reference_cells, eps0, limiter)?;
                    Some((state.mesh.clone(), state.rho()))
                }
            };
            for &n in cells {
                let (state, summary, seconds) = run_single(spec, n, eps0, limiter)?;
                let error = match &reference {
                    Some((mesh, rho)) => Some(relative_l2_error(&state.mesh, &state.rho(), mesh, rho)?),
                    None => None,
                };
                params.push(state.mesh.dx);
                runs.push(RunRecord {
                    cells: n,
                    eps: eps0,
                    limiter,
                    error,
                    summary,
                    seconds,
                });
            }
        }
    }
    let errors: Vec<f64> = runs.iter().filter_map(|r| r.error).collect();
    let orders = if errors.len() == runs.len() && errors.len() >= 2 {
        observed_order(&errors, &params)?
    } else {
        Vec::new()
    };
    Ok(BenchReport {
        problem: spec.clone(),
        runs,
        orders,
    })
}
