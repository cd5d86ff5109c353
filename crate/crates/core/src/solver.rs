//! Time stepping: step-size selection, the macro and micro updates, and the
//! explicit 9-point diffusion scheme the macro update reduces to as
//! `eps -> 0`.

use std::f64::consts::PI;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::angular::{operators_for_order, MomentOperators};
use crate::error::{FpnError, Result};
use crate::grid::{build_gamma, zero_ghosts, GammaField, MaterialField, Mesh, SimState, GHOST};
use crate::limiter::{limit_field, Limiter, LimiterKind, LimiterStats, DEFAULT_OPT_TOL};
use crate::stencils::{
    artificial_dissipation, central_diff, check_theta, diffusion_macro, diffusion_micro, nine_point, upwind2,
    NinePointWeights, ProjectionScratch, UpwindScratch,
};
use crate::Axis;

/// Admissible range of the minmod parameter.
pub const THETA_RANGE: (f64, f64) = (1.05, 1.95);

/// `Theta = 1 / (2 - theta)`, with `theta` restricted to [`THETA_RANGE`].
pub fn big_theta(theta: f64) -> Result<f64> {
    check_theta(theta)?;
    if !(theta >= THETA_RANGE.0 && theta <= THETA_RANGE.1) {
        return Err(FpnError::config(
            "theta",
            format!("must lie in [{}, {}], got {theta}", THETA_RANGE.0, THETA_RANGE.1),
        ));
    }
    Ok(1.0 / (2.0 - theta))
}

/// Step sizes from the positivity CFL condition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepSizes {
    pub dt_hyp: f64,
    pub dt_par: f64,
    pub dt: f64,
    pub big_theta: f64,
    pub cfl: f64,
}

/// Left-hand side of C7; nonnegative when the macro update preserves
/// positivity.
pub fn c7_margin(mesh: &Mesh, eps: f64, gamma_max: f64, big_theta: f64, dt: f64) -> f64 {
    let (dx, dy) = (mesh.dx, mesh.dy);
    let e2 = eps * eps;
    1.0 - gamma_max
        * ((2.0 * big_theta * dt / (eps * dx) + 2.0 * big_theta * dt / (eps * dy))
            + (2.0 * dt * dt / (e2 * dx * dx) + dt * dt / (2.0 * e2 * dx * dy) + 2.0 * dt * dt / (e2 * dy * dy)))
}

/// `gamma_max = eps^2 / (eps^2 + sigma_s_min dt)`.
pub fn gamma_max(eps: f64, sigma_s_min: f64, dt: f64) -> f64 {
    eps * eps / (eps * eps + sigma_s_min * dt)
}

pub fn compute_dt(mesh: &Mesh, eps: f64, sigma_s_min: f64, theta: f64, cfl: f64) -> Result<StepSizes> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(FpnError::config("eps", "must be positive"));
    }
    if !(sigma_s_min > 0.0) {
        return Err(FpnError::config("sigma_s", "minimum must be positive"));
    }
    if !(cfl > 0.0 && cfl <= 1.0) {
        return Err(FpnError::config("cfl", format!("must lie in (0, 1], got {cfl}")));
    }
    let th = big_theta(theta)?;
    let (dx, dy) = (mesh.dx, mesh.dy);
    let dt_hyp = 2.0 * ((9.0 / 8.0 + th * th).sqrt() - th) * eps * (dx * dy * (dx + dy))
        / (4.0 * dx * dx + dx * dy + 4.0 * dy * dy);
    let dt_par = sigma_s_min * (dx * dx * dy * dy)
        / ((2.0 + th * th) * dx * dx + (0.5 + 2.0 * th * th) * dx * dy + (2.0 + th * th) * dy * dy);
    let dt = cfl * dt_hyp.max(dt_par);
    let margin = c7_margin(mesh, eps, gamma_max(eps, sigma_s_min, dt), th, dt);
    if margin < -1e-12 {
        return Err(FpnError::Consistency(format!(
            "selected dt = {dt:e} violates the positivity CFL condition (margin {margin:e})"
        )));
    }
    Ok(StepSizes {
        dt_hyp,
        dt_par,
        dt,
        big_theta: th,
        cfl,
    })
}

/// Buffers shared by [`macro_step`] and [`micro_step`].
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    f: Vec<f64>,
    up_x: Vec<f64>,
    up_y: Vec<f64>,
    upwind: UpwindScratch,
    proj: ProjectionScratch,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure(&mut self, len: usize, n_micro: usize) {
        if self.a.len() != len {
            for v in [
                &mut self.a,
                &mut self.b,
                &mut self.c,
                &mut self.d,
                &mut self.e,
                &mut self.f,
            ] {
                *v = vec![0.0; len];
            }
        }
        if self.up_x.len() != len * n_micro {
            self.up_x = vec![0.0; len * n_micro];
            self.up_y = vec![0.0; len * n_micro];
        }
    }
}

/// Macro update: writes `ubar^{n+1}` into `out` (padded, ghosts zero).
#[allow(clippy::too_many_arguments)]
pub fn macro_step(
    state: &SimState,
    gamma: &GammaField,
    material: &MaterialField,
    ops: &MomentOperators,
    eps: f64,
    dt: f64,
    theta: f64,
    out: &mut [f64],
    ws: &mut Workspace,
) -> Result<()> {
    let mesh = &state.mesh;
    let len = mesh.padded_len();
    let th = big_theta(theta)?;
    ws.ensure(len, state.n_micro);
    let u = &state.macro_field;
    let w = &state.micro_field;
    let gt = gamma.tilde();
    let (kx, ky) = (ops.k_x, ops.k_y);
    let (ax, ay) = (ops.a_x[kx], ops.a_y[ky]);

    // a_x^T Dc^x (Gamma u~) only sees the k_x component, scaled by gamma~.
    for (t, (&g, &v)) in ws.a.iter_mut().zip(gt.iter().zip(&w[kx * len..(kx + 1) * len])) {
        *t = g * v;
    }
    for (t, (&g, &v)) in ws.b.iter_mut().zip(gt.iter().zip(&w[ky * len..(ky + 1) * len])) {
        *t = g * v;
    }
    central_diff(mesh, &ws.a, Axis::X, &mut ws.c);
    central_diff(mesh, &ws.b, Axis::Y, &mut ws.d);
    artificial_dissipation(mesh, u, theta, Axis::X, &mut ws.a);
    artificial_dissipation(mesh, u, theta, Axis::Y, &mut ws.b);
    diffusion_micro(mesh, w, gamma, ops, &mut ws.e, &mut ws.proj);
    diffusion_macro(mesh, u, gamma, &mut ws.f);

    let coef = th * gamma.gamma_max / eps;
    let (dx3, dy3) = (mesh.dx.powi(3), mesh.dy.powi(3));
    let (k_mic, k_mac) = (dt * dt / eps, dt * dt / (eps * eps));
    let sa = material.sigma_a();
    zero_ghosts(mesh, out);
    for j in 0..mesh.ny {
        let row = mesh.idx(0, j);
        for p in row..row + mesh.nx {
            let adv = ax * ws.c[p] + ay * ws.d[p];
            let diss = dx3 * ws.a[p] + dy3 * ws.b[p];
            let rhs = u[p] - dt * (adv - coef * diss) + k_mic * ws.e[p] + k_mac * ws.f[p];
            out[p] = rhs / (1.0 + sa[p] * dt);
        }
    }
    Ok(())
}

/// Micro update: writes `u~^{n+1}` into `out` (component-major, padded).
///
/// With `v~ = eps^2 Gamma^{-1} u~` the update reads
/// `u~^{n+1} = Gamma (u~ - (dt/eps) U(u~) - (dt/eps^2)(a_x Dc^x + a_y Dc^y) ubar)`,
/// `U` being the kinetic upwind operator.
pub fn micro_step(
    state: &SimState,
    gamma: &GammaField,
    ops: &MomentOperators,
    eps: f64,
    dt: f64,
    out: &mut [f64],
    ws: &mut Workspace,
) {
    let mesh = &state.mesh;
    let len = mesh.padded_len();
    let nm = state.n_micro;
    ws.ensure(len, nm);
    let u = &state.macro_field;
    let w = &state.micro_field;
    upwind2(mesh, w, ops, Axis::X, &mut ws.up_x, &mut ws.upwind);
    upwind2(mesh, w, ops, Axis::Y, &mut ws.up_y, &mut ws.upwind);
    central_diff(mesh, u, Axis::X, &mut ws.c);
    central_diff(mesh, u, Axis::Y, &mut ws.d);
    let (k_adv, k_src) = (dt / eps, dt / (eps * eps));
    for a in 0..nm {
        let g = gamma.degree(ops.degrees[a]);
        let (ax, ay) = (ops.a_x[a], ops.a_y[a]);
        let wa = &w[a * len..(a + 1) * len];
        let (ux, uy) = (&ws.up_x[a * len..(a + 1) * len], &ws.up_y[a * len..(a + 1) * len]);
        let oa = &mut out[a * len..(a + 1) * len];
        zero_ghosts(mesh, oa);
        for j in 0..mesh.ny {
            let row = mesh.idx(0, j);
            for p in row..row + mesh.nx {
                let src = ax * ws.c[p] + ay * ws.d[p];
                oa[p] = g[p] * (wa[p] - k_adv * (ux[p] + uy[p]) - k_src * src);
            }
        }
    }
}

/// Run parameters of the micro-macro scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub order: usize,
    /// Keep only harmonics even in `Omega_z`; exact for the 2D problems here.
    pub z_even: bool,
    pub eps: f64,
    pub theta: f64,
    pub sigma_f: f64,
    pub cfl: f64,
    pub limiter: LimiterKind,
    pub limiter_tol: f64,
    pub t_final: f64,
    /// Fixed step instead of the CFL-derived one.
    pub dt: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            order: 3,
            z_even: true,
            eps: 1.0,
            theta: 1.5,
            sigma_f: 56.2,
            cfl: 0.9,
            limiter: LimiterKind::None,
            limiter_tol: DEFAULT_OPT_TOL,
            t_final: 1.0,
            dt: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(FpnError::InvalidOrder(self.order));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(FpnError::config("eps", "must be positive and finite"));
        }
        big_theta(self.theta)?;
        if !(self.sigma_f >= 0.0 && self.sigma_f.is_finite()) {
            return Err(FpnError::config("sigma_f", "must be nonnegative"));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(FpnError::config("cfl", "must lie in (0, 1]"));
        }
        if !(self.limiter_tol > 0.0) {
            return Err(FpnError::config("limiter_tol", "must be positive"));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(FpnError::config("t_final", "must be nonnegative"));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(FpnError::config("dt", "must be positive"));
            }
        }
        Ok(())
    }
}

/// What happened during one call to [`Solver::step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub dt: f64,
    pub limiter: LimiterStats,
}

/// Summary of a completed run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub steps: usize,
    pub t: f64,
    pub dt: f64,
    pub dt_hyp: f64,
    pub dt_par: f64,
    pub c7_margin: f64,
    pub cells_limited_total: usize,
    pub cells_limited_max_step: usize,
    pub opt_iterations_total: usize,
    pub opt_fallbacks: usize,
    /// Minimum and maximum of `rho` over all cells and all time levels.
    pub min_rho: f64,
    pub max_rho: f64,
    pub mass_initial: f64,
    pub mass_final: f64,
}

/// Owns everything needed to advance a [`SimState`].
#[derive(Debug)]
pub struct Solver {
    config: SolverConfig,
    material: MaterialField,
    ops: MomentOperators,
    limiter: Limiter,
    sizes: StepSizes,
    dt: f64,
    gamma: GammaField,
    ws: Workspace,
    next_macro: Vec<f64>,
    next_micro: Vec<f64>,
}

impl Solver {
    pub fn new(config: SolverConfig, material: MaterialField) -> Result<Self> {
        let ops = operators_for_order(config.order, config.z_even)?;
        Self::with_operators(config, material, ops)
    }

    pub fn with_operators(config: SolverConfig, material: MaterialField, ops: MomentOperators) -> Result<Self> {
        config.validate()?;
        if ops.order() != config.order || ops.basis().is_z_even() != config.z_even {
            return Err(FpnError::Consistency(
                "operators do not match the configured basis".into(),
            ));
        }
        let mesh = material.mesh().clone();
        let sizes = compute_dt(&mesh, config.eps, material.sigma_s_min(), config.theta, config.cfl)?;
        let dt = match config.dt {
            Some(dt) => {
                let gm = gamma_max(config.eps, material.sigma_s_min(), dt);
                let margin = c7_margin(&mesh, config.eps, gm, sizes.big_theta, dt);
                if margin < 0.0 {
                    warn!("fixed dt = {dt:e} violates the positivity CFL condition (margin {margin:e})");
                }
                if dt < 1e-3 * sizes.dt {
                    warn!("fixed dt = {dt:e} is far below the CFL step; artificial dissipation may not vanish as eps -> 0");
                }
                dt
            }
            None => sizes.dt,
        };
        let limiter = Limiter::new(config.limiter, &ops, config.eps, mesh.dx, mesh.dy, config.limiter_tol)?;
        let gamma = build_gamma(&mesh, &material, &ops, config.eps, dt, config.sigma_f)?;
        let len = mesh.padded_len();
        let nm = ops.micro_len();
        Ok(Self {
            config,
            material,
            limiter,
            sizes,
            dt,
            gamma,
            ws: Workspace::new(),
            next_macro: vec![0.0; len],
            next_micro: vec![0.0; len * nm],
            ops,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn operators(&self) -> &MomentOperators {
        &self.ops
    }

    pub fn material(&self) -> &MaterialField {
        &self.material
    }

    pub fn mesh(&self) -> &Mesh {
        self.material.mesh()
    }

    pub fn step_sizes(&self) -> StepSizes {
        self.sizes
    }

    /// Step size used for full steps.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn gamma(&self) -> &GammaField {
        &self.gamma
    }

    /// Zero micro state on this solver's mesh.
    pub fn zero_state(&self) -> SimState {
        SimState::zeros(self.mesh(), self.ops.micro_len())
    }

    /// One step of length `dt` (the configured step if `None`): limit, then
    /// compute both updates from the limited state.
    pub fn step(&mut self, state: &mut SimState, dt: Option<f64>) -> Result<StepInfo> {
        if state.mesh != *self.mesh() || state.n_micro != self.ops.micro_len() {
            return Err(FpnError::Consistency("state does not match the solver".into()));
        }
        let dt = dt.unwrap_or(self.dt);
        let rebuilt;
        let gamma = if dt == self.dt {
            &self.gamma
        } else {
            rebuilt = build_gamma(
                self.mesh(),
                &self.material,
                &self.ops,
                self.config.eps,
                dt,
                self.config.sigma_f,
            )?;
            &rebuilt
        };
        state.pad_ghosts();
        let stats = limit_field(state, &self.limiter)?;
        macro_step(
            state,
            gamma,
            &self.material,
            &self.ops,
            self.config.eps,
            dt,
            self.config.theta,
            &mut self.next_macro,
            &mut self.ws,
        )?;
        micro_step(
            state,
            gamma,
            &self.ops,
            self.config.eps,
            dt,
            &mut self.next_micro,
            &mut self.ws,
        );
        std::mem::swap(&mut state.macro_field, &mut self.next_macro);
        std::mem::swap(&mut state.micro_field, &mut self.next_micro);
        state.t += dt;
        state.step += 1;
        check_finite(state)?;
        Ok(StepInfo { dt, limiter: stats })
    }

    /// Advances to `config.t_final`; the last step is shortened to land on it
    /// exactly. `observer` sees the initial state and every later one.
    pub fn run_with(
        &mut self,
        state: &mut SimState,
        mut observer: impl FnMut(&SimState, Option<&StepInfo>) -> Result<()>,
    ) -> Result<RunSummary> {
        let t_final = self.config.t_final;
        state.pad_ghosts();
        check_finite(state)?;
        let sqrt4pi = (4.0 * PI).sqrt();
        let (lo, hi) = interior_extrema(state);
        let mut summary = RunSummary {
            dt: self.dt,
            dt_hyp: self.sizes.dt_hyp,
            dt_par: self.sizes.dt_par,
            c7_margin: c7_margin(
                self.mesh(),
                self.config.eps,
                self.gamma.gamma_max,
                self.sizes.big_theta,
                self.dt,
            ),
            min_rho: sqrt4pi * lo,
            max_rho: sqrt4pi * hi,
            mass_initial: state.mass(),
            ..Default::default()
        };
        observer(state, None)?;
        while state.t < t_final {
            let remaining = t_final - state.t;
            let last = remaining <= self.dt * (1.0 + 1e-10);
            // A remainder within roundoff of dt is taken as a full step.
            let dt = if remaining < self.dt * (1.0 - 1e-10) {
                remaining
            } else {
                self.dt
            };
            let info = self.step(state, Some(dt))?;
            if last {
                state.t = t_final;
            }
            summary.steps += 1;
            summary.cells_limited_total += info.limiter.cells_limited;
            summary.cells_limited_max_step = summary.cells_limited_max_step.max(info.limiter.cells_limited);
            summary.opt_iterations_total += info.limiter.opt_iterations;
            summary.opt_fallbacks += info.limiter.fallbacks;
            let (lo, hi) = interior_extrema(state);
            summary.min_rho = summary.min_rho.min(sqrt4pi * lo);
            summary.max_rho = summary.max_rho.max(sqrt4pi * hi);
            observer(state, Some(&info))?;
            if summary.steps.is_multiple_of(1000) {
                debug!("step {} t = {:.6}", summary.steps, state.t);
            }
        }
        summary.t = state.t;
        summary.mass_final = state.mass();
        Ok(summary)
    }

    pub fn run(&mut self, state: &mut SimState) -> Result<RunSummary> {
        self.run_with(state, |_, _| Ok(()))
    }
}

fn interior_extrema(state: &SimState) -> (f64, f64) {
    let mesh = &state.mesh;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for j in 0..mesh.ny {
        let p = mesh.idx(0, j);
        for &v in &state.macro_field[p..p + mesh.nx] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

fn check_finite(state: &SimState) -> Result<()> {
    let mesh = &state.mesh;
    let len = mesh.padded_len();
    let locate = |q: usize| {
        let stride = mesh.stride();
        ((q % stride).saturating_sub(GHOST), (q / stride).saturating_sub(GHOST))
    };
    if let Some(q) = state.macro_field.iter().position(|v| !v.is_finite()) {
        let (i, j) = locate(q);
        return Err(FpnError::NonFinite {
            field: "macro",
            i,
            j,
            step: state.step,
        });
    }
    if let Some(q) = state.micro_field.iter().position(|v| !v.is_finite()) {
        let (i, j) = locate(q % len);
        return Err(FpnError::NonFinite {
            field: "micro",
            i,
            j,
            step: state.step,
        });
    }
    Ok(())
}

/// Weights `1 / (3 sigma_s)` of the limiting diffusion scheme, with
/// `sigma_s` averaged arithmetically over the two cells of an edge and the
/// four cells of a corner (the `eps -> 0` limit of the harmonic `gamma~`
/// means).
#[derive(Clone, Debug)]
pub struct DiffusionCoefficients {
    edge_x: Vec<f64>,
    edge_y: Vec<f64>,
    corner: Vec<f64>,
}

impl DiffusionCoefficients {
    pub fn new(material: &MaterialField) -> Self {
        let mesh = material.mesh();
        let s = material.sigma_s();
        let len = mesh.padded_len();
        let mut edge_x = vec![0.0; len];
        let mut edge_y = vec![0.0; len];
        let mut corner = vec![0.0; len];
        let g = GHOST as isize;
        let (nx, ny) = (mesh.nx as isize, mesh.ny as isize);
        for j in -g..(ny + g) {
            for i in -g..(nx + g) {
                let p = mesh.at(i, j);
                if i + 1 < nx + g {
                    edge_x[p] = 1.0 / (3.0 * (0.5 * (s[p] + s[mesh.at(i + 1, j)])));
                }
                if j + 1 < ny + g {
                    edge_y[p] = 1.0 / (3.0 * (0.5 * (s[p] + s[mesh.at(i, j + 1)])));
                }
                if i + 1 < nx + g && j + 1 < ny + g {
                    let mut v = [
                        s[p],
                        s[mesh.at(i + 1, j)],
                        s[mesh.at(i, j + 1)],
                        s[mesh.at(i + 1, j + 1)],
                    ];
                    v.sort_unstable_by(|a, b| a.total_cmp(b));
                    corner[p] = 1.0 / (3.0 * (0.25 * (((v[0] + v[1]) + v[2]) + v[3])));
                }
            }
        }
        Self { edge_x, edge_y, corner }
    }

    fn weights(&self) -> NinePointWeights<'_> {
        NinePointWeights {
            edge_x: &self.edge_x,
            edge_y: &self.edge_y,
            corner: &self.corner,
        }
    }
}

/// Largest step accepted by [`diffusion_reference_step`]:
/// `0.9 (3 sigma_s_min / 4) / (1/dx^2 + 1/dy^2)`.
pub fn diffusion_reference_dt(mesh: &Mesh, sigma_s_min: f64) -> f64 {
    0.9 * (0.75 * sigma_s_min) / (1.0 / (mesh.dx * mesh.dx) + 1.0 / (mesh.dy * mesh.dy))
}

/// One step of the explicit 9-point diffusion scheme on a padded `ubar`
/// field with zero ghosts. Returns the padded result.
pub fn diffusion_reference_step(u: &[f64], material: &MaterialField, dt: f64) -> Result<Vec<f64>> {
    let coeffs = DiffusionCoefficients::new(material);
    let mut out = vec![0.0; u.len()];
    let mut work = vec![0.0; u.len()];
    diffusion_reference_step_into(u, material, &coeffs, dt, &mut work, &mut out)?;
    Ok(out)
}

fn diffusion_reference_step_into(
    u: &[f64],
    material: &MaterialField,
    coeffs: &DiffusionCoefficients,
    dt: f64,
    work: &mut [f64],
    out: &mut [f64],
) -> Result<()> {
    let mesh = material.mesh();
    if u.len() != mesh.padded_len() {
        return Err(FpnError::Consistency("field does not match the mesh".into()));
    }
    let bound = diffusion_reference_dt(mesh, material.sigma_s_min());
    if !(dt > 0.0 && dt <= bound * (1.0 + 1e-12)) {
        return Err(FpnError::config(
            "dt",
            format!("diffusion reference needs 0 < dt <= {bound:e}, got {dt:e}"),
        ));
    }
    nine_point(mesh, u, coeffs.weights(), work);
    let sa = material.sigma_a();
    zero_ghosts(mesh, out);
    for j in 0..mesh.ny {
        let row = mesh.idx(0, j);
        for p in row..row + mesh.nx {
            out[p] = (u[p] + dt * work[p]) / (1.0 + sa[p] * dt);
        }
    }
    Ok(())
}

/// Runs the diffusion scheme from the padded `u0` to `t_final` with steps of
/// at most `dt`, shortening the last one.
pub fn run_diffusion_reference(u0: &[f64], material: &MaterialField, dt: f64, t_final: f64) -> Result<Vec<f64>> {
    let coeffs = DiffusionCoefficients::new(material);
    let mut u = u0.to_vec();
    zero_ghosts(material.mesh(), &mut u);
    let mut next = vec![0.0; u.len()];
    let mut work = vec![0.0; u.len()];
    let mut t = 0.0;
    while t < t_final {
        let remaining = t_final - t;
        let h = if remaining <= dt * (1.0 + 1e-10) { remaining } else { dt };
        diffusion_reference_step_into(&u, material, &coeffs, h, &mut work, &mut next)?;
        std::mem::swap(&mut u, &mut next);
        t = if h == remaining { t_final } else { t + h };
    }
    Ok(u)
}
