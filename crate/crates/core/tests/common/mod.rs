//! Helpers shared by the integration tests: a small deterministic RNG,
//! random states, and a dense transcription of one time step.

#![allow(dead_code)]

use fpn_core::angular::{DenseMatrix, MomentOperators};
use fpn_core::grid::{build_gamma, harmonic2, GammaField, MaterialField, Mesh, SimState};
use fpn_core::solver::{macro_step, micro_step, Workspace};
use fpn_core::stencils::{d_minus, d_plus, minmod, C0, C1};

pub struct Lcg(pub u64);

impl Lcg {
    pub fn next(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next()
    }
}

pub fn random_state(mesh: &Mesh, nm: usize, seed: u64, micro_scale: f64) -> SimState {
    let mut rng = Lcg(seed);
    let mut s = SimState::zeros(mesh, nm);
    let len = mesh.padded_len();
    for j in 0..mesh.ny {
        for i in 0..mesh.nx {
            let p = mesh.idx(i, j);
            s.macro_field[p] = 0.5 + rng.next();
            for a in 0..nm {
                s.micro_field[a * len + p] = micro_scale * (rng.next() - 0.5);
            }
        }
    }
    s
}

pub fn random_material(mesh: &Mesh, seed: u64) -> MaterialField {
    let mut rng = Lcg(seed);
    let n = mesh.cells();
    let s: Vec<f64> = (0..n).map(|_| 0.2 + 2.0 * rng.next()).collect();
    let a: Vec<f64> = (0..n).map(|_| rng.next()).collect();
    MaterialField::new(mesh, &s, &a).unwrap()
}

/// `max |got - want| / max |want|`.
pub fn max_rel_diff(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    got.iter().zip(want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
}

/// Worst relative deviation of the library step from the dense
/// transcription, over macro and micro parts, for one random configuration.
pub fn oracle_deviation(mesh: &Mesh, ops: &MomentOperators, eps: f64, dt: f64, theta: f64, seed: u64) -> f64 {
    let state = random_state(mesh, ops.micro_len(), seed, 0.4);
    let mat = random_material(mesh, seed + 7);
    let gamma = build_gamma(mesh, &mat, ops, eps, dt, 2.5).unwrap();
    let mut ws = Workspace::new();
    let mut got = vec![0.0; mesh.padded_len()];
    macro_step(&state, &gamma, &mat, ops, eps, dt, theta, &mut got, &mut ws).unwrap();
    let e_macro = max_rel_diff(&got, &macro_oracle(&state, &gamma, &mat, ops, eps, dt, theta));
    let mut got = vec![0.0; state.micro_field.len()];
    micro_step(&state, &gamma, ops, eps, dt, &mut got, &mut ws);
    let e_micro = max_rel_diff(&got, &micro_oracle(&state, &gamma, ops, eps, dt));
    e_macro.max(e_micro)
}

/// Reads a padded field with zero outside the interior.
fn get(mesh: &Mesh, f: &[f64], i: isize, j: isize) -> f64 {
    if i < 0 || j < 0 || i >= mesh.nx as isize || j >= mesh.ny as isize {
        0.0
    } else {
        f[mesh.at(i, j)]
    }
}

/// Cell values of gamma~ with the clamped-material convention.
fn gt(mesh: &Mesh, g: &GammaField, i: isize, j: isize) -> f64 {
    let ci = i.clamp(0, mesh.nx as isize - 1);
    let cj = j.clamp(0, mesh.ny as isize - 1);
    g.tilde()[mesh.at(ci, cj)]
}

/// Harmonic gamma~ mean at doubled coordinates.
fn g_half(mesh: &Mesh, g: &GammaField, i2: isize, j2: isize) -> f64 {
    let xs: Vec<isize> = if i2 % 2 == 0 {
        vec![i2 / 2]
    } else {
        vec![(i2 - 1) / 2, (i2 + 1) / 2]
    };
    let ys: Vec<isize> = if j2 % 2 == 0 {
        vec![j2 / 2]
    } else {
        vec![(j2 - 1) / 2, (j2 + 1) / 2]
    };
    if xs.len() * ys.len() == 2 {
        let v: Vec<f64> = xs
            .iter()
            .flat_map(|&x| ys.iter().map(move |&y| (x, y)))
            .map(|(x, y)| gt(mesh, g, x, y))
            .collect();
        return harmonic2(v[0], v[1]);
    }
    let mut inv = 0.0;
    for &x in &xs {
        for &y in &ys {
            inv += 1.0 / gt(mesh, g, x, y);
        }
    }
    (xs.len() * ys.len()) as f64 / inv
}

/// Literal 9-point stencils evaluated on a closure field.
fn d2_terms(mesh: &Mesh, g: &GammaField, f: &dyn Fn(isize, isize) -> f64, i: isize, j: isize) -> (f64, f64, f64) {
    let c = [(0isize, C0), (1, C1), (-1, C1)];
    let fc = f(i, j);
    let mut sx = 0.0;
    for &(l, cl) in &c {
        sx += cl
            * (g_half(mesh, g, 2 * i + 1, 2 * j + l) * (f(i + 1, j + l) - fc)
                - g_half(mesh, g, 2 * i - 1, 2 * j + l) * (fc - f(i - 1, j + l)));
    }
    let mut sy = 0.0;
    for &(k, ck) in &c {
        sy += ck
            * (g_half(mesh, g, 2 * i + k, 2 * j + 1) * (f(i + k, j + 1) - fc)
                - g_half(mesh, g, 2 * i + k, 2 * j - 1) * (fc - f(i + k, j - 1)));
    }
    let mut m = 0.0;
    for k in [1isize, -1] {
        m += g_half(mesh, g, 2 * i + k, 2 * j + k) * (f(i + k, j + k) - fc)
            - g_half(mesh, g, 2 * i + k, 2 * j - k) * (f(i + k, j - k) - fc);
    }
    (sx, sy, m)
}

fn ddx_oracle(f: &dyn Fn(isize) -> f64, theta: f64, h: f64) -> f64 {
    let s = |k: isize| {
        minmod(
            theta * (f(k + 1) - f(k)) / h,
            (f(k + 1) - f(k - 1)) / (2.0 * h),
            theta * (f(k) - f(k - 1)) / h,
        )
    };
    let wep = f(1) - 0.5 * h * s(1);
    let wem = f(0) + 0.5 * h * s(0);
    let wwp = f(0) - 0.5 * h * s(0);
    let wwm = f(-1) + 0.5 * h * s(-1);
    ((wep - wem) - (wwp - wwm)) / h.powi(4)
}

/// Dense transcription of the macro update.
pub fn macro_oracle(
    state: &SimState,
    gamma: &GammaField,
    mat: &MaterialField,
    ops: &MomentOperators,
    eps: f64,
    dt: f64,
    theta: f64,
) -> Vec<f64> {
    let mesh = &state.mesh;
    let len = mesh.padded_len();
    let nm = ops.micro_len();
    let th = 1.0 / (2.0 - theta);
    let gmax = gamma.gamma_max;
    let u = |i: isize, j: isize| get(mesh, &state.macro_field, i, j);
    let w = |a: usize, i: isize, j: isize| get(mesh, &state.micro_field[a * len..(a + 1) * len], i, j);
    // Gamma u~ for the advection term, component by component.
    let gw = |a: usize, i: isize, j: isize| {
        if i < 0 || j < 0 || i >= mesh.nx as isize || j >= mesh.ny as isize {
            0.0
        } else {
            gamma.degree(ops.degrees[a])[mesh.at(i, j)] * w(a, i, j)
        }
    };
    let mut out = vec![0.0; len];
    for j in 0..mesh.ny as isize {
        for i in 0..mesh.nx as isize {
            let mut adv = 0.0;
            for a in 0..nm {
                adv += ops.a_x[a] * (gw(a, i + 1, j) - gw(a, i - 1, j)) / (2.0 * mesh.dx);
                adv += ops.a_y[a] * (gw(a, i, j + 1) - gw(a, i, j - 1)) / (2.0 * mesh.dy);
            }
            let ddx = ddx_oracle(&|k| u(i + k, j), theta, mesh.dx);
            let ddy = ddx_oracle(&|k| u(i, j + k), theta, mesh.dy);
            let diss = th * gmax / eps * (mesh.dx.powi(3) * ddx + mesh.dy.powi(3) * ddy);
            let (sx, sy, _) = d2_terms(mesh, gamma, &u, i, j);
            let dmac = (1.0 / 3.0) * (sx / mesh.dx.powi(2) + sy / mesh.dy.powi(2));
            let mut dmic = 0.0;
            for a in 0..nm {
                let (sx, sy, m) = d2_terms(mesh, gamma, &|x, y| w(a, x, y), i, j);
                dmic += ops.a_xx[a] * sx / mesh.dx.powi(2)
                    + ops.a_yy[a] * sy / mesh.dy.powi(2)
                    + ops.a_xy[a] * m / (2.0 * mesh.dx * mesh.dy);
            }
            let p = mesh.at(i, j);
            let rhs = u(i, j) - dt * (adv - diss) + dt * dt / eps * dmic + dt * dt / (eps * eps) * dmac;
            out[p] = rhs / (1.0 + mat.sigma_a()[p] * dt);
        }
    }
    out
}

/// Dense transcription of the micro update through `v~ = eps^2 Gamma^-1 u~`.
pub fn micro_oracle(state: &SimState, gamma: &GammaField, ops: &MomentOperators, eps: f64, dt: f64) -> Vec<f64> {
    let mesh = &state.mesh;
    let len = mesh.padded_len();
    let nm = ops.micro_len();
    let inside = |i: isize, j: isize| i >= 0 && j >= 0 && i < mesh.nx as isize && j < mesh.ny as isize;
    let gam = |a: usize, i: isize, j: isize| gamma.degree(ops.degrees[a])[mesh.at(i, j)];
    // v~ and Gamma v~ at every cell (zero outside).
    let v = |a: usize, i: isize, j: isize| {
        if inside(i, j) {
            eps * eps / gam(a, i, j) * state.micro_field[a * len + mesh.at(i, j)]
        } else {
            0.0
        }
    };
    let gv = |a: usize, i: isize, j: isize| if inside(i, j) { gam(a, i, j) * v(a, i, j) } else { 0.0 };
    let u = |i: isize, j: isize| get(mesh, &state.macro_field, i, j);
    let mut out = vec![0.0; len * nm];
    for j in 0..mesh.ny as isize {
        for i in 0..mesh.nx as isize {
            let col = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..nm).map(f).collect() };
            let dmx = col(&|b| d_minus(gv(b, i - 2, j), gv(b, i - 1, j), gv(b, i, j), gv(b, i + 1, j), mesh.dx));
            let dpx = col(&|b| d_plus(gv(b, i - 1, j), gv(b, i, j), gv(b, i + 1, j), gv(b, i + 2, j), mesh.dx));
            let dmy = col(&|b| d_minus(gv(b, i, j - 2), gv(b, i, j - 1), gv(b, i, j), gv(b, i, j + 1), mesh.dy));
            let dpy = col(&|b| d_plus(gv(b, i, j - 1), gv(b, i, j), gv(b, i, j + 1), gv(b, i, j + 2), mesh.dy));
            let mv = |m: &DenseMatrix, x: &[f64]| m.matvec(x);
            let t1 = mv(&ops.flux_x_plus, &dmx);
            let t2 = mv(&ops.flux_x_minus, &dpx);
            let t3 = mv(&ops.flux_y_plus, &dmy);
            let t4 = mv(&ops.flux_y_minus, &dpy);
            let dcx = (u(i + 1, j) - u(i - 1, j)) / (2.0 * mesh.dx);
            let dcy = (u(i, j + 1) - u(i, j - 1)) / (2.0 * mesh.dy);
            for a in 0..nm {
                let up = t1[a] - t2[a] + t3[a] - t4[a];
                let vn = gv(a, i, j) - dt / eps * up - dt * (ops.a_x[a] * dcx + ops.a_y[a] * dcy);
                out[a * len + mesh.at(i, j)] = gam(a, i, j) * vn / (eps * eps);
            }
        }
    }
    out
}
