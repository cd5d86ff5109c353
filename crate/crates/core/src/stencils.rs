//! Spatial difference operators on padded fields.
//!
//! Kernels read padded inputs and write the interior of a caller-provided
//! padded output; output ghost cells are left at zero. Sums are arranged in
//! mirror-paired order (east/west, north/south, `+l`/`-l`) so that mirrored
//! or transposed inputs give exactly mirrored or transposed outputs.

use crate::angular::{MomentOperators, RowTerm};
use crate::error::{FpnError, Result};
use crate::grid::{zero_ghosts, GammaField, Mesh};
use crate::Axis;

/// Averaging weight of the centre row in the 9-point diffusion stencil.
pub const C0: f64 = 0.5;
/// Averaging weight of each off-centre row.
pub const C1: f64 = 0.25;

/// Smallest-magnitude element of the convex hull of `{a, b, c}`.
#[inline]
pub fn minmod(a: f64, b: f64, c: f64) -> f64 {
    if a > 0.0 && b > 0.0 && c > 0.0 {
        a.min(b).min(c)
    } else if a < 0.0 && b < 0.0 && c < 0.0 {
        a.max(b).max(c)
    } else {
        0.0
    }
}

#[inline]
fn slope(w_w: f64, w_c: f64, w_e: f64, theta: f64, h: f64) -> f64 {
    minmod(
        theta * (w_e - w_c) / h,
        (w_e - w_w) / (2.0 * h),
        theta * (w_c - w_w) / h,
    )
}

/// Limited slope at a cell from its west, centre and east values.
pub fn minmod_slope(w_w: f64, w_c: f64, w_e: f64, theta: f64, h: f64) -> Result<f64> {
    check_theta(theta)?;
    Ok(slope(w_w, w_c, w_e, theta, h))
}

pub(crate) fn check_theta(theta: f64) -> Result<()> {
    if theta > 1.0 && theta < 2.0 {
        Ok(())
    } else {
        Err(FpnError::config("theta", format!("must lie in (1, 2), got {theta}")))
    }
}

/// Neighbour offset in the padded layout and the spacing along `axis`.
#[inline]
fn step_and_h(mesh: &Mesh, axis: Axis) -> (usize, f64) {
    match axis {
        Axis::X => (1, mesh.dx),
        Axis::Y => (mesh.stride(), mesh.dy),
    }
}

/// `(w_{+1} - w_{-1}) / (2h)` along `axis`.
pub fn central_diff(mesh: &Mesh, w: &[f64], axis: Axis, out: &mut [f64]) {
    let (s, h) = step_and_h(mesh, axis);
    zero_ghosts(mesh, out);
    for j in 0..mesh.ny {
        let row = mesh.idx(0, j);
        for p in row..row + mesh.nx {
            out[p] = (w[p + s] - w[p - s]) / (2.0 * h);
        }
    }
}

/// Artificial dissipation `h^-4 [(w_ep - w_em) - (w_wp - w_wm)]` built from
/// minmod-reconstructed edge values. Reaches two cells on each side.
pub fn artificial_dissipation(mesh: &Mesh, w: &[f64], theta: f64, axis: Axis, out: &mut [f64]) {
    let (s, h) = step_and_h(mesh, axis);
    let h4 = h * h * h * h;
    zero_ghosts(mesh, out);
    for j in 0..mesh.ny {
        let row = mesh.idx(0, j);
        for p in row..row + mesh.nx {
            let (w_ww, w_w, w_c, w_e, w_ee) = (w[p - 2 * s], w[p - s], w[p], w[p + s], w[p + 2 * s]);
            let s_w = slope(w_ww, w_w, w_c, theta, h);
            let s_c = slope(w_w, w_c, w_e, theta, h);
            let s_e = slope(w_c, w_e, w_ee, theta, h);
            let e_p = w_e - 0.5 * h * s_e;
            let e_m = w_c + 0.5 * h * s_c;
            let w_p = w_c - 0.5 * h * s_c;
            let w_m = w_w + 0.5 * h * s_w;
            out[p] = ((e_p - e_m) - (w_p - w_m)) / h4;
        }
    }
}

/// Second-order one-sided difference from the right, `D+`.
#[inline]
pub fn d_plus(w_w: f64, w_c: f64, w_e: f64, w_ee: f64, h: f64) -> f64 {
    ((w_e - (w_ee - w_c) / 4.0) - (w_c - (w_e - w_w) / 4.0)) / h
}

/// Second-order one-sided difference from the left, `D-`.
#[inline]
pub fn d_minus(w_ww: f64, w_w: f64, w_c: f64, w_e: f64, h: f64) -> f64 {
    ((w_c + (w_e - w_w) / 4.0) - (w_w + (w_c - w_ww) / 4.0)) / h
}

/// Buffers reused by [`upwind2`].
#[derive(Clone, Debug, Default)]
pub struct UpwindScratch {
    d_minus: Vec<f64>,
    d_plus: Vec<f64>,
    acc_plus: Vec<f64>,
    acc_minus: Vec<f64>,
}

impl UpwindScratch {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure(&mut self, n_micro: usize, cells: usize) {
        let total = n_micro * cells;
        if self.d_minus.len() != total {
            self.d_minus = vec![0.0; total];
            self.d_plus = vec![0.0; total];
        }
        if self.acc_plus.len() != cells {
            self.acc_plus = vec![0.0; cells];
            self.acc_minus = vec![0.0; cells];
        }
    }
}

/// Kinetic upwind discretization of `A_axis d/d(axis)` applied to the
/// component-major moment field `w`: `A^+ D- w - A^- D+ w`, where
/// `A^- = <m m^T max(-Omega, 0)>` is positive semidefinite.
pub fn upwind2(
    mesh: &Mesh,
    w: &[f64],
    ops: &MomentOperators,
    axis: Axis,
    out: &mut [f64],
    scratch: &mut UpwindScratch,
) {
    let nm = ops.micro_len();
    let len = mesh.padded_len();
    let cells = mesh.cells();
    let (s, h) = step_and_h(mesh, axis);
    scratch.ensure(nm, cells);
    for b in 0..nm {
        let wb = &w[b * len..(b + 1) * len];
        let dm = &mut scratch.d_minus[b * cells..(b + 1) * cells];
        let dp = &mut scratch.d_plus[b * cells..(b + 1) * cells];
        for j in 0..mesh.ny {
            let row = mesh.idx(0, j);
            let q0 = j * mesh.nx;
            for i in 0..mesh.nx {
                let p = row + i;
                let (w_ww, w_w, w_c, w_e, w_ee) = (wb[p - 2 * s], wb[p - s], wb[p], wb[p + s], wb[p + 2 * s]);
                dm[q0 + i] = d_minus(w_ww, w_w, w_c, w_e, h);
                dp[q0 + i] = d_plus(w_w, w_c, w_e, w_ee, h);
            }
        }
    }
    let (plus, minus) = ops.upwind_rows(axis);
    for a in 0..nm {
        apply_row(&plus.rows()[a], &scratch.d_minus, cells, &mut scratch.acc_plus);
        apply_row(&minus.rows()[a], &scratch.d_plus, cells, &mut scratch.acc_minus);
        let oa = &mut out[a * len..(a + 1) * len];
        zero_ghosts(mesh, oa);
        for j in 0..mesh.ny {
            let row = mesh.idx(0, j);
            let q0 = j * mesh.nx;
            for i in 0..mesh.nx {
                oa[row + i] = scratch.acc_plus[q0 + i] - scratch.acc_minus[q0 + i];
            }
        }
    }
}

/// `acc = sum_terms c_b d_b` over dense interior-indexed component fields.
fn apply_row(terms: &[RowTerm], d: &[f64], cells: usize, acc: &mut [f64]) {
    acc.fill(0.0);
    for t in terms {
        match *t {
            RowTerm::Single(b, c) => {
                let db = &d[b * cells..(b + 1) * cells];
                for (x, &v) in acc.iter_mut().zip(db) {
                    *x += c * v;
                }
            }
            RowTerm::Pair(b1, c1, b2, c2) => {
                let d1 = &d[b1 * cells..(b1 + 1) * cells];
                let d2 = &d[b2 * cells..(b2 + 1) * cells];
                for ((x, &v1), &v2) in acc.iter_mut().zip(d1).zip(d2) {
                    *x += c1 * v1 + c2 * v2;
                }
            }
        }
    }
}

/// Projects a component-major moment field onto a single row of grouped
/// coefficients, over the full padded extent.
pub(crate) fn project(row: &[RowTerm], w: &[f64], len: usize, out: &mut [f64]) {
    out.fill(0.0);
    for t in row {
        match *t {
            RowTerm::Single(b, c) => {
                for (x, &v) in out.iter_mut().zip(&w[b * len..(b + 1) * len]) {
                    *x += c * v;
                }
            }
            RowTerm::Pair(b1, c1, b2, c2) => {
                let w1 = &w[b1 * len..(b1 + 1) * len];
                let w2 = &w[b2 * len..(b2 + 1) * len];
                for ((x, &v1), &v2) in out.iter_mut().zip(w1).zip(w2) {
                    *x += c1 * v1 + c2 * v2;
                }
            }
        }
    }
}

/// Edge and corner weights of the 9-point stencil, stored like
/// [`GammaField`]: `edge_x[p]` sits at `(i + 1/2, j)`, `edge_y[p]` at
/// `(i, j + 1/2)` and `corner[p]` at `(i + 1/2, j + 1/2)`.
#[derive(Clone, Copy, Debug)]
pub struct NinePointWeights<'a> {
    pub edge_x: &'a [f64],
    pub edge_y: &'a [f64],
    pub corner: &'a [f64],
}

impl<'a> From<&'a GammaField> for NinePointWeights<'a> {
    fn from(g: &'a GammaField) -> Self {
        Self {
            edge_x: &g.edge_x,
            edge_y: &g.edge_y,
            corner: &g.corner,
        }
    }
}

/// Averaged second difference in `x`, without the `1/dx^2` factor.
#[inline]
fn second_x(mesh: &Mesh, u: &[f64], g: &NinePointWeights, p: usize) -> f64 {
    let st = mesh.stride();
    let (ex, c) = (g.edge_x, g.corner);
    let uc = u[p];
    let term = |east: usize, west: usize, ge: f64, gw: f64| ge * (u[east] - uc) - gw * (uc - u[west]);
    let t0 = term(p + 1, p - 1, ex[p], ex[p - 1]);
    let tn = term(p + 1 + st, p - 1 + st, c[p], c[p - 1]);
    let ts = term(p + 1 - st, p - 1 - st, c[p - st], c[p - 1 - st]);
    C0 * t0 + C1 * (tn + ts)
}

/// Averaged second difference in `y`, mirror of [`second_x`].
#[inline]
fn second_y(mesh: &Mesh, u: &[f64], g: &NinePointWeights, p: usize) -> f64 {
    let st = mesh.stride();
    let (ey, c) = (g.edge_y, g.corner);
    let uc = u[p];
    let term = |north: usize, south: usize, gn: f64, gs: f64| gn * (u[north] - uc) - gs * (uc - u[south]);
    let t0 = term(p + st, p - st, ey[p], ey[p - st]);
    let te = term(p + st + 1, p - st + 1, c[p], c[p - st]);
    let tw = term(p + st - 1, p - st - 1, c[p - 1], c[p - 1 - st]);
    C0 * t0 + C1 * (te + tw)
}

/// Mixed-derivative diagonal differences, without the `1/(2 dx dy)` factor.
#[inline]
fn mixed(mesh: &Mesh, u: &[f64], g: &NinePointWeights, p: usize) -> f64 {
    let st = mesh.stride();
    let c = g.corner;
    let uc = u[p];
    let ne = c[p] * (u[p + st + 1] - uc);
    let sw = c[p - 1 - st] * (u[p - st - 1] - uc);
    let se = c[p - st] * (u[p - st + 1] - uc);
    let nw = c[p - 1] * (u[p + st - 1] - uc);
    (ne + sw) - (se + nw)
}

/// Macro diffusion operator with the `1/3` coefficient included:
/// `(1/3)(Sxx / dx^2 + Syy / dy^2)` with harmonic edge and corner `gamma~`.
pub fn diffusion_macro(mesh: &Mesh, u: &[f64], gamma: &GammaField, out: &mut [f64]) {
    let w = NinePointWeights::from(gamma);
    let (dx2, dy2) = (mesh.dx * mesh.dx, mesh.dy * mesh.dy);
    zero_ghosts(mesh, out);
    for j in 0..mesh.ny {
        let row = mesh.idx(0, j);
        for p in row..row + mesh.nx {
            let sx = second_x(mesh, u, &w, p) / dx2;
            let sy = second_y(mesh, u, &w, p) / dy2;
            out[p] = (sx + sy) / 3.0;
        }
    }
}

/// `Sxx / dx^2 + Syy / dy^2` with arbitrary edge and corner weights.
pub fn nine_point(mesh: &Mesh, u: &[f64], weights: NinePointWeights, out: &mut [f64]) {
    let (dx2, dy2) = (mesh.dx * mesh.dx, mesh.dy * mesh.dy);
    zero_ghosts(mesh, out);
    for j in 0..mesh.ny {
        let row = mesh.idx(0, j);
        for p in row..row + mesh.nx {
            let sx = second_x(mesh, u, &weights, p) / dx2;
            let sy = second_y(mesh, u, &weights, p) / dy2;
            out[p] = sx + sy;
        }
    }
}

/// Buffers for the scalar projections used by [`diffusion_micro`].
#[derive(Clone, Debug, Default)]
pub struct ProjectionScratch {
    pub(crate) xx: Vec<f64>,
    pub(crate) yy: Vec<f64>,
    pub(crate) xy: Vec<f64>,
}

impl ProjectionScratch {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure(&mut self, len: usize) {
        if self.xx.len() != len {
            self.xx = vec![0.0; len];
            self.yy = vec![0.0; len];
            self.xy = vec![0.0; len];
        }
    }
}

/// Micro diffusion operator: the `a~_xx`, `a~_yy` projections of the micro
/// field through the averaged second differences plus the `a~_xy` projection
/// through the corner-weighted mixed difference.
pub fn diffusion_micro(
    mesh: &Mesh,
    w: &[f64],
    gamma: &GammaField,
    ops: &MomentOperators,
    out: &mut [f64],
    scratch: &mut ProjectionScratch,
) {
    let len = mesh.padded_len();
    scratch.ensure(len);
    let proj = ops.projection_rows();
    project(&proj.rows()[0], w, len, &mut scratch.xx);
    project(&proj.rows()[1], w, len, &mut scratch.yy);
    project(&proj.rows()[2], w, len, &mut scratch.xy);
    let w = NinePointWeights::from(gamma);
    let (dx2, dy2, dxy2) = (mesh.dx * mesh.dx, mesh.dy * mesh.dy, 2.0 * mesh.dx * mesh.dy);
    zero_ghosts(mesh, out);
    for j in 0..mesh.ny {
        let row = mesh.idx(0, j);
        for p in row..row + mesh.nx {
            let sx = second_x(mesh, &scratch.xx, &w, p) / dx2;
            let sy = second_y(mesh, &scratch.yy, &w, p) / dy2;
            let m = mixed(mesh, &scratch.xy, &w, p) / dxy2;
            out[p] = (sx + sy) + m;
        }
    }
}
