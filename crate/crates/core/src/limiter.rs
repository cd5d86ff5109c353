//! Positivity conditions on a single cell and the limiters that enforce them.
//!
//! Every condition is a half-space `b * ubar + eps * c . v >= 0` in the micro
//! coefficients `v`, with `b >= 0`, so `v = 0` is always feasible when
//! `ubar >= 0`. The relaxed set holds the twelve inequalities that make the
//! macro update nonnegative; the pointwise set asks the truncated expansion to
//! be nonnegative at every node of a spherical quadrature.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::angular::{row_dot, GroupedRows, MomentBasis, MomentOperators, SphericalQuadrature};
use crate::error::{FpnError, Result};
use crate::grid::SimState;

/// Default feasibility tolerance of the projection limiters.
pub const DEFAULT_OPT_TOL: f64 = 1e-6;

/// Iteration cap of the projection solver.
pub const OPT_MAX_ITER: usize = 10_000;

/// Roundoff allowance of the feasibility check.
#[inline]
pub fn tol_check(ubar: f64) -> f64 {
    1e-13 * ubar.max(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimiterKind {
    None,
    LsRelaxed,
    OptRelaxed,
    LsPointwise,
    OptPointwise,
}

impl LimiterKind {
    pub const ALL: [LimiterKind; 5] = [
        LimiterKind::None,
        LimiterKind::LsRelaxed,
        LimiterKind::OptRelaxed,
        LimiterKind::LsPointwise,
        LimiterKind::OptPointwise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LimiterKind::None => "none",
            LimiterKind::LsRelaxed => "ls_relaxed",
            LimiterKind::OptRelaxed => "opt_relaxed",
            LimiterKind::LsPointwise => "ls_pointwise",
            LimiterKind::OptPointwise => "opt_pointwise",
        }
    }

    fn is_pointwise(self) -> bool {
        matches!(self, LimiterKind::LsPointwise | LimiterKind::OptPointwise)
    }
}

impl fmt::Display for LimiterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LimiterKind {
    type Err = FpnError;

    fn from_str(s: &str) -> Result<Self> {
        LimiterKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
            FpnError::config(
                "limiter",
                format!(
                    "unknown limiter '{s}' (expected none, ls_relaxed, opt_relaxed, ls_pointwise or opt_pointwise)"
                ),
            )
        })
    }
}

/// Which per-cell algorithm enforces a constraint set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Ls,
    Opt,
}

/// Linear constraints `b[k] * ubar + eps * c[k] . v >= 0`.
#[derive(Clone, Debug)]
pub struct ConstraintSet {
    eps: f64,
    b: Vec<f64>,
    c: Vec<Vec<f64>>,
    rows: GroupedRows,
}

impl ConstraintSet {
    /// Constraints from raw coefficient vectors. Dot products are taken in
    /// index order.
    pub fn new(eps: f64, b: Vec<f64>, c: Vec<Vec<f64>>) -> Result<Self> {
        let n = c.first().map_or(0, Vec::len);
        let indices: Vec<(usize, i32)> = (0..n).map(|a| (a + 1, 0)).collect();
        Self::with_indices(eps, b, c, &indices)
    }

    fn with_indices(eps: f64, b: Vec<f64>, c: Vec<Vec<f64>>, indices: &[(usize, i32)]) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(FpnError::config("eps", "must be positive and finite"));
        }
        if b.len() != c.len() || c.iter().any(|r| r.len() != indices.len()) {
            return Err(FpnError::Consistency("constraint dimensions disagree".into()));
        }
        if b.iter().any(|&x| !(x >= 0.0)) {
            return Err(FpnError::Consistency("constraint offsets must be nonnegative".into()));
        }
        let refs: Vec<&[f64]> = c.iter().map(Vec::as_slice).collect();
        let rows = GroupedRows::from_vectors(&refs, indices);
        Ok(Self { eps, b, c, rows })
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.c.first().map_or(0, Vec::len)
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> &[Vec<f64>] {
        &self.c
    }

    /// `b[k] * ubar + eps * c[k] . v` for every constraint.
    pub fn residuals(&self, ubar: f64, v: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.b
                .iter()
                .zip(self.rows.rows())
                .map(|(&b, row)| b * ubar + self.eps * row_dot(row, v)),
        );
    }

    #[inline]
    fn residual(&self, k: usize, ubar: f64, v: &[f64]) -> f64 {
        self.b[k] * ubar + self.eps * row_dot(&self.rows.rows()[k], v)
    }
}

/// The twelve relaxed conditions, in the order C1+, C1-, C2+, C2-, C3 lower,
/// C3 upper, C4 lower, C4 upper, C5+, C5-, C6+, C6-. C6 is multiplied by
/// `dx * dy`.
pub fn build_constraints(ops: &MomentOperators, eps: f64, dx: f64, dy: f64) -> Result<ConstraintSet> {
    if !(dx > 0.0 && dy > 0.0) {
        return Err(FpnError::config("mesh", "cell sizes must be positive"));
    }
    let neg = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| -x).collect() };
    let scale = |v: &[f64], s: f64| -> Vec<f64> { v.iter().map(|x| s * x).collect() };
    let (ry, rx) = (dy / dx, dx / dy);
    let c6 = |sign: f64| -> Vec<f64> {
        ops.a_xx
            .iter()
            .zip(&ops.a_yy)
            .zip(&ops.a_xy)
            .map(|((&xx, &yy), &xy)| (ry * xx + rx * yy) + sign * 2.0 * xy)
            .collect()
    };
    let third = 1.0 / 3.0;
    let b = vec![
        1.0,
        1.0,
        1.0,
        1.0,
        third,
        2.0 * third,
        third,
        2.0 * third,
        1.0,
        1.0,
        third * (ry + rx),
        third * (ry + rx),
    ];
    let c = vec![
        ops.a_x.clone(),
        neg(&ops.a_x),
        ops.a_y.clone(),
        neg(&ops.a_y),
        ops.a_xx.clone(),
        neg(&ops.a_xx),
        ops.a_yy.clone(),
        neg(&ops.a_yy),
        scale(&ops.a_xy, 2.0),
        scale(&ops.a_xy, -2.0),
        c6(1.0),
        c6(-1.0),
    ];
    ConstraintSet::with_indices(eps, b, c, &ops.basis().indices()[1..])
}

/// Nonnegativity of `ubar * m_0 + eps * m~(Omega_q) . v` at every node,
/// divided by `m_0`.
pub fn build_pointwise_constraints(
    basis: &MomentBasis,
    quadrature: &SphericalQuadrature,
    eps: f64,
) -> Result<ConstraintSet> {
    let mut vals = vec![0.0; basis.len()];
    let mut b = Vec::with_capacity(quadrature.len());
    let mut c = Vec::with_capacity(quadrature.len());
    for &omega in quadrature.nodes() {
        basis.eval_into(omega, &mut vals);
        let m0 = vals[0];
        b.push(1.0);
        c.push(vals[1..].iter().map(|v| v / m0).collect());
    }
    ConstraintSet::with_indices(eps, b, c, &basis.indices()[1..])
}

/// Outcome of [`check_conditions`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionReport {
    pub worst_residual: f64,
    pub worst_index: usize,
    pub violated: usize,
}

impl ConditionReport {
    pub fn passed(&self) -> bool {
        self.violated == 0
    }
}

/// Mean used by the limiters: roundoff-negative values count as zero.
fn clamp_mean(ubar: f64) -> Result<f64> {
    if ubar < -tol_check(ubar.abs()) || ubar.is_nan() {
        Err(FpnError::NegativeMean(ubar))
    } else {
        Ok(ubar.max(0.0))
    }
}

/// Residuals of every constraint; a constraint counts as violated below
/// `-tol_check(ubar)`.
pub fn check_conditions(ubar: f64, v: &[f64], cs: &ConstraintSet) -> Result<ConditionReport> {
    let u = clamp_mean(ubar)?;
    let tol = tol_check(u);
    let mut worst = f64::INFINITY;
    let mut worst_index = 0;
    let mut violated = 0;
    for k in 0..cs.len() {
        let r = cs.residual(k, u, v);
        if r < worst || r.is_nan() {
            worst = r;
            worst_index = k;
        }
        if !(r >= -tol) {
            violated += 1;
        }
    }
    Ok(ConditionReport {
        worst_residual: worst,
        worst_index,
        violated,
    })
}

/// Largest `alpha` in `[0, 1]` for which `alpha * v` satisfies every constraint.
pub fn ls_factor(ubar: f64, v: &[f64], cs: &ConstraintSet) -> Result<f64> {
    let u = clamp_mean(ubar)?;
    let mut alpha: f64 = 1.0;
    for k in 0..cs.len() {
        let slope = cs.eps * row_dot(&cs.rows.rows()[k], v);
        if slope < 0.0 {
            alpha = alpha.min(cs.b[k] * u / -slope);
        }
    }
    Ok(alpha.max(0.0))
}

/// Uniform damping of the micro coefficients. Inputs that pass
/// [`check_conditions`] are returned unchanged.
pub fn ls_limit(ubar: f64, v: &[f64], cs: &ConstraintSet) -> Result<Vec<f64>> {
    if check_conditions(ubar, v, cs)?.passed() {
        return Ok(v.to_vec());
    }
    let alpha = ls_factor(ubar, v, cs)?;
    Ok(if alpha >= 1.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| alpha * x).collect()
    })
}

/// Projection result with the number of active-set iterations spent.
#[derive(Clone, Debug, PartialEq)]
pub struct OptOutcome {
    pub v: Vec<f64>,
    pub iterations: usize,
}

/// Euclidean projection of `v` onto the constraint polytope.
///
/// Written as a least-distance problem for the correction `x = w - v`,
/// `min |x|` subject to `eps c[k] . x >= -r[k](v)`, and solved through its
/// nonnegative least-squares dual. The projected point carries roundoff
/// proportional to `|v|`, so it is finished with [`ls_limit`], which moves it
/// by that roundoff at most and makes it feasible to [`tol_check`]. Fails if
/// the iteration cap is hit or the projection violates a constraint by more
/// than `tol * max(1, ubar)`.
pub fn opt_limit(ubar: f64, v: &[f64], cs: &ConstraintSet, tol: f64) -> Result<OptOutcome> {
    let u = clamp_mean(ubar)?;
    let n = v.len();
    // The projection is positively homogeneous in (ubar, v), so residuals are
    // measured in units of `scale`. Without this the dual becomes singular as
    // |v| shrinks.
    let scale = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(u);
    if scale == 0.0 {
        return Ok(OptOutcome {
            v: v.to_vec(),
            iterations: 0,
        });
    }
    // Columns (eps c[k], -r[k] / scale) scaled to unit length; rows that
    // cannot bind (c[k] = 0) are skipped.
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(cs.len());
    for k in 0..cs.len() {
        let mut col = DVector::zeros(n + 1);
        let mut any = false;
        for (a, &ci) in cs.c[k].iter().enumerate() {
            col[a] = cs.eps * ci;
            any |= ci != 0.0;
        }
        if !any {
            continue;
        }
        col[n] = -cs.residual(k, u, v) / scale;
        let norm = col.norm();
        cols.push(col / norm);
    }
    let mut f = DVector::zeros(n + 1);
    f[n] = 1.0;
    let e = DMatrix::from_columns(&cols);
    let (dual, iterations) = nnls(&e, &f, OPT_MAX_ITER).ok_or_else(|| FpnError::SolverFailure {
        worst_residual: worst_residual(cs, u, v),
    })?;
    let r = &e * &dual - &f;
    if !(r[n].abs() > 1e-300) {
        return Err(FpnError::SolverFailure {
            worst_residual: worst_residual(cs, u, v),
        });
    }
    let out: Vec<f64> = (0..n).map(|a| v[a] - scale * r[a] / r[n]).collect();
    let worst = worst_residual(cs, u, &out);
    if worst < -tol * u.max(1.0) {
        return Err(FpnError::SolverFailure { worst_residual: worst });
    }
    Ok(OptOutcome {
        v: ls_limit(ubar, &out, cs)?,
        iterations,
    })
}

/// Lawson-Hanson active-set solver for `min |E z - f|` over `z >= 0`.
/// Returns the solution and the number of inner iterations, or `None` at the
/// iteration cap.
fn nnls(e: &DMatrix<f64>, f: &DVector<f64>, max_iter: usize) -> Option<(DVector<f64>, usize)> {
    let m = e.ncols();
    let mut z = DVector::zeros(m);
    let mut passive = vec![false; m];
    let tol = 1e-14 * (1.0 + e.norm() * f.norm());
    let mut iterations = 0;
    let solve_passive = |passive: &[bool]| -> Option<DVector<f64>> {
        let idx: Vec<usize> = (0..m).filter(|&j| passive[j]).collect();
        let cols: Vec<DVector<f64>> = idx.iter().map(|&j| e.column(j).into_owned()).collect();
        let sub = DMatrix::from_columns(&cols);
        let sol = sub.svd(true, true).solve(f, 1e-13).ok()?;
        let mut full = DVector::zeros(m);
        for (r, &j) in idx.iter().enumerate() {
            full[j] = sol[r];
        }
        Some(full)
    };
    // Columns whose trial solve gave them no positive weight; cleared
    // whenever z moves.
    let mut blocked = vec![false; m];
    loop {
        let w = e.transpose() * (f - e * &z);
        let next = (0..m)
            .filter(|&j| !passive[j] && !blocked[j] && w[j] > tol)
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(t) = next else {
            return Some((z, iterations));
        };
        passive[t] = true;
        let mut first = true;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return None;
            }
            let s = solve_passive(&passive)?;
            if first && s[t] <= 0.0 {
                passive[t] = false;
                blocked[t] = true;
                break;
            }
            first = false;
            blocked.iter_mut().for_each(|b| *b = false);
            if (0..m).filter(|&j| passive[j]).all(|j| s[j] > 0.0) {
                z = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for j in 0..m {
                if passive[j] && s[j] <= 0.0 {
                    alpha = alpha.min(z[j] / (z[j] - s[j]));
                }
            }
            z += alpha * (&s - &z);
            for j in 0..m {
                if passive[j] && z[j] <= tol {
                    passive[j] = false;
                    z[j] = 0.0;
                }
            }
        }
    }
}

fn worst_residual(cs: &ConstraintSet, u: f64, v: &[f64]) -> f64 {
    (0..cs.len())
        .map(|k| cs.residual(k, u, v))
        .fold(f64::INFINITY, f64::min)
}

/// Either limiter against a pointwise constraint set built with
/// [`build_pointwise_constraints`].
pub fn pointwise_limit(method: Method, ubar: f64, v: &[f64], cs: &ConstraintSet, tol: f64) -> Result<OptOutcome> {
    match method {
        Method::Ls => Ok(OptOutcome {
            v: ls_limit(ubar, v, cs)?,
            iterations: 0,
        }),
        Method::Opt => opt_limit(ubar, v, cs, tol),
    }
}

/// Counters accumulated while limiting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LimiterStats {
    pub cells_limited: usize,
    pub opt_iterations: usize,
    pub fallbacks: usize,
}

impl std::ops::AddAssign for LimiterStats {
    fn add_assign(&mut self, o: Self) {
        self.cells_limited += o.cells_limited;
        self.opt_iterations += o.opt_iterations;
        self.fallbacks += o.fallbacks;
    }
}

/// A limiter kind together with its constraint set.
#[derive(Clone, Debug)]
pub struct Limiter {
    kind: LimiterKind,
    constraints: Option<ConstraintSet>,
    tol: f64,
}

impl Limiter {
    pub fn new(kind: LimiterKind, ops: &MomentOperators, eps: f64, dx: f64, dy: f64, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(FpnError::config("limiter_tol", "must be positive"));
        }
        let constraints = match kind {
            LimiterKind::None => None,
            LimiterKind::LsRelaxed | LimiterKind::OptRelaxed => Some(build_constraints(ops, eps, dx, dy)?),
            LimiterKind::LsPointwise | LimiterKind::OptPointwise => {
                let quad = crate::angular::build_quadrature(ops.order());
                Some(build_pointwise_constraints(ops.basis(), &quad, eps)?)
            }
        };
        Ok(Self { kind, constraints, tol })
    }

    pub fn kind(&self) -> LimiterKind {
        self.kind
    }

    pub fn constraints(&self) -> Option<&ConstraintSet> {
        self.constraints.as_ref()
    }

    fn method(&self) -> Method {
        match self.kind {
            LimiterKind::LsRelaxed | LimiterKind::LsPointwise => Method::Ls,
            _ => Method::Opt,
        }
    }

    /// Limits one cell in place; returns `None` if it was already feasible.
    pub fn limit_cell(&self, ubar: f64, v: &mut [f64]) -> Result<Option<LimiterStats>> {
        let Some(cs) = &self.constraints else {
            return Ok(None);
        };
        if check_conditions(ubar, v, cs)?.passed() {
            return Ok(None);
        }
        let mut stats = LimiterStats {
            cells_limited: 1,
            ..Default::default()
        };
        let out = match self.method() {
            Method::Ls => ls_limit(ubar, v, cs)?,
            Method::Opt => match opt_limit(ubar, v, cs, self.tol) {
                Ok(o) => {
                    stats.opt_iterations = o.iterations;
                    o.v
                }
                Err(FpnError::SolverFailure { worst_residual }) => {
                    warn!(
                        "{} projection failed (worst residual {worst_residual:e}); using linear scaling",
                        self.kind
                    );
                    stats.fallbacks = 1;
                    ls_limit(ubar, v, cs)?
                }
                Err(e) => return Err(e),
            },
        };
        v.copy_from_slice(&out);
        Ok(Some(stats))
    }
}

/// Applies `limiter` at every interior cell whose conditions fail. The macro
/// field is never modified.
pub fn limit_field(state: &mut SimState, limiter: &Limiter) -> Result<LimiterStats> {
    let mut stats = LimiterStats::default();
    if limiter.kind == LimiterKind::None {
        return Ok(stats);
    }
    let mesh = state.mesh.clone();
    let mut v = vec![0.0; state.n_micro];
    for j in 0..mesh.ny {
        for i in 0..mesh.nx {
            let p = mesh.idx(i, j);
            let ubar = state.macro_field[p];
            state.micro_at(p, &mut v);
            let limited = limiter.limit_cell(ubar, &mut v).map_err(|e| match e {
                FpnError::NegativeMean(value) => FpnError::NegativeMacro { i, j, value },
                other => other,
            })?;
            if let Some(s) = limited {
                state.set_micro_at(p, &v);
                stats += s;
            }
        }
    }
    if limiter.kind.is_pointwise() || stats.cells_limited > 0 {
        log::debug!("{}: limited {} cells", limiter.kind, stats.cells_limited);
    }
    Ok(stats)
}
