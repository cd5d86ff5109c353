//! Uniform Cartesian mesh, padded field storage, materials and the `Gamma`
//! relaxation factors.
//!
//! Every field carries two ghost layers on each side. Interior cell `(i, j)`
//! with `0 <= i < nx`, `0 <= j < ny` lives at flat index
//! `(j + 2) * (nx + 4) + (i + 2)`; `x` varies fastest.

use crate::angular::MomentOperators;
use crate::error::{FpnError, Result};

/// Number of ghost layers on each side.
pub const GHOST: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    /// Lower-left corner of the domain.
    pub origin: (f64, f64),
}

impl Mesh {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64, origin: (f64, f64)) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(FpnError::config("mesh", "cell counts must be positive"));
        }
        if !(dx.is_finite() && dx > 0.0 && dy.is_finite() && dy > 0.0) {
            return Err(FpnError::config("mesh", "cell sizes must be positive and finite"));
        }
        Ok(Self { nx, ny, dx, dy, origin })
    }

    /// `n x n` cells covering `[-half_width, half_width]^2`.
    pub fn square(n: usize, half_width: f64) -> Result<Self> {
        if !(half_width > 0.0) {
            return Err(FpnError::config("mesh", "half width must be positive"));
        }
        let h = 2.0 * half_width / n.max(1) as f64;
        Self::new(n, n, h, h, (-half_width, -half_width))
    }

    #[inline]
    pub fn stride(&self) -> usize {
        self.nx + 2 * GHOST
    }

    pub fn padded_len(&self) -> usize {
        (self.nx + 2 * GHOST) * (self.ny + 2 * GHOST)
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    /// Flat index of cell `(i, j)`; ghost cells have coordinates in `-2..0`
    /// or `n..n+2`.
    #[inline]
    pub fn at(&self, i: isize, j: isize) -> usize {
        debug_assert!(i >= -(GHOST as isize) && i < (self.nx + GHOST) as isize);
        debug_assert!(j >= -(GHOST as isize) && j < (self.ny + GHOST) as isize);
        (j + GHOST as isize) as usize * self.stride() + (i + GHOST as isize) as usize
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        (j + GHOST) * self.stride() + i + GHOST
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.origin.0 + (i as f64 + 0.5) * self.dx,
            self.origin.1 + (j as f64 + 0.5) * self.dy,
        )
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// Copies the interior of a padded field into a dense row-major vector.
    pub fn interior(&self, padded: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.cells());
        for j in 0..self.ny {
            let start = self.idx(0, j);
            out.extend_from_slice(&padded[start..start + self.nx]);
        }
        out
    }

    /// Embeds a dense row-major interior into a zero-padded field.
    pub fn pad(&self, interior: &[f64]) -> Vec<f64> {
        assert_eq!(interior.len(), self.cells());
        let mut out = vec![0.0; self.padded_len()];
        for j in 0..self.ny {
            let start = self.idx(0, j);
            out[start..start + self.nx].copy_from_slice(&interior[j * self.nx..(j + 1) * self.nx]);
        }
        out
    }
}

/// Per-cell cross-sections. Ghost cells copy the nearest interior cell.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialField {
    mesh: Mesh,
    sigma_s: Vec<f64>,
    sigma_a: Vec<f64>,
    sigma_s_min: f64,
}

impl MaterialField {
    /// Builds from dense row-major interior arrays.
    pub fn new(mesh: &Mesh, sigma_s: &[f64], sigma_a: &[f64]) -> Result<Self> {
        if sigma_s.len() != mesh.cells() || sigma_a.len() != mesh.cells() {
            return Err(FpnError::config("material", "array sizes do not match the mesh"));
        }
        if let Some(v) = sigma_s.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(FpnError::config("sigma_s", format!("must be positive, got {v}")));
        }
        if let Some(v) = sigma_a.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(FpnError::config("sigma_a", format!("must be nonnegative, got {v}")));
        }
        let sigma_s_min = sigma_s.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            mesh: mesh.clone(),
            sigma_s: clamp_pad(mesh, sigma_s),
            sigma_a: clamp_pad(mesh, sigma_a),
            sigma_s_min,
        })
    }

    pub fn uniform(mesh: &Mesh, sigma_s: f64, sigma_a: f64) -> Result<Self> {
        let n = mesh.cells();
        Self::new(mesh, &vec![sigma_s; n], &vec![sigma_a; n])
    }

    /// Samples `f(x, y) -> (sigma_s, sigma_a)` at cell centres.
    pub fn from_fn<F: Fn(f64, f64) -> (f64, f64)>(mesh: &Mesh, f: F) -> Result<Self> {
        let mut s = Vec::with_capacity(mesh.cells());
        let mut a = Vec::with_capacity(mesh.cells());
        for j in 0..mesh.ny {
            for i in 0..mesh.nx {
                let (x, y) = mesh.cell_center(i, j);
                let (ss, sa) = f(x, y);
                s.push(ss);
                a.push(sa);
            }
        }
        Self::new(mesh, &s, &a)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    /// Padded scattering cross-section.
    pub fn sigma_s(&self) -> &[f64] {
        &self.sigma_s
    }

    /// Padded absorption cross-section.
    pub fn sigma_a(&self) -> &[f64] {
        &self.sigma_a
    }

    pub fn sigma_s_min(&self) -> f64 {
        self.sigma_s_min
    }
}

fn clamp_pad(mesh: &Mesh, interior: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mesh.padded_len()];
    let g = GHOST as isize;
    for j in -g..(mesh.ny as isize + g) {
        for i in -g..(mesh.nx as isize + g) {
            let ci = i.clamp(0, mesh.nx as isize - 1) as usize;
            let cj = j.clamp(0, mesh.ny as isize - 1) as usize;
            out[mesh.at(i, j)] = interior[cj * mesh.nx + ci];
        }
    }
    out
}

/// Macro and micro coefficients on the padded mesh.
///
/// The micro field is stored component-major: component `a` occupies
/// `micro[a * padded_len .. (a + 1) * padded_len]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub mesh: Mesh,
    pub n_micro: usize,
    pub macro_field: Vec<f64>,
    pub micro_field: Vec<f64>,
    pub t: f64,
    pub step: usize,
}

impl SimState {
    pub fn zeros(mesh: &Mesh, n_micro: usize) -> Self {
        let len = mesh.padded_len();
        Self {
            mesh: mesh.clone(),
            n_micro,
            macro_field: vec![0.0; len],
            micro_field: vec![0.0; len * n_micro],
            t: 0.0,
            step: 0,
        }
    }

    pub fn micro(&self, a: usize) -> &[f64] {
        let len = self.mesh.padded_len();
        &self.micro_field[a * len..(a + 1) * len]
    }

    pub fn micro_mut(&mut self, a: usize) -> &mut [f64] {
        let len = self.mesh.padded_len();
        &mut self.micro_field[a * len..(a + 1) * len]
    }

    /// Gathers the micro vector of one cell.
    pub fn micro_at(&self, p: usize, out: &mut [f64]) {
        let len = self.mesh.padded_len();
        for (a, slot) in out.iter_mut().enumerate() {
            *slot = self.micro_field[a * len + p];
        }
    }

    pub fn set_micro_at(&mut self, p: usize, v: &[f64]) {
        let len = self.mesh.padded_len();
        for (a, &x) in v.iter().enumerate() {
            self.micro_field[a * len + p] = x;
        }
    }

    /// Zeroes both ghost layers of every field.
    pub fn pad_ghosts(&mut self) {
        let mesh = self.mesh.clone();
        zero_ghosts(&mesh, &mut self.macro_field);
        let len = mesh.padded_len();
        for a in 0..self.n_micro {
            zero_ghosts(&mesh, &mut self.micro_field[a * len..(a + 1) * len]);
        }
    }

    /// Particle concentration `rho = sqrt(4 pi) ubar` on the interior,
    /// row-major.
    pub fn rho(&self) -> Vec<f64> {
        let s = (4.0 * std::f64::consts::PI).sqrt();
        self.mesh
            .interior(&self.macro_field)
            .into_iter()
            .map(|u| s * u)
            .collect()
    }

    /// `sum ubar dx dy` over the interior, accumulated row by row.
    pub fn mass(&self) -> f64 {
        let mut total = 0.0;
        for j in 0..self.mesh.ny {
            let p = self.mesh.idx(0, j);
            let row: f64 = self.macro_field[p..p + self.mesh.nx].iter().sum();
            total += row;
        }
        total * self.mesh.cell_area()
    }
}

/// Returns a copy of `state` with both ghost layers zeroed.
pub fn pad_ghosts(state: &SimState) -> SimState {
    let mut out = state.clone();
    out.pad_ghosts();
    out
}

pub(crate) fn zero_ghosts(mesh: &Mesh, field: &mut [f64]) {
    let stride = mesh.stride();
    let rows = mesh.ny + 2 * GHOST;
    for r in 0..rows {
        let row = &mut field[r * stride..(r + 1) * stride];
        if r < GHOST || r >= rows - GHOST {
            row.fill(0.0);
        } else {
            row[..GHOST].fill(0.0);
            row[stride - GHOST..].fill(0.0);
        }
    }
}

/// Diagonal relaxation factors for one time step.
#[derive(Clone, Debug)]
pub struct GammaField {
    mesh: Mesh,
    /// `by_degree[l - 1]` is the padded field of `Gamma` for degree `l`.
    by_degree: Vec<Vec<f64>>,
    /// Harmonic mean of `gamma~` across the edge `(i + 1/2, j)`, stored at `(i, j)`.
    pub edge_x: Vec<f64>,
    /// Harmonic mean across the edge `(i, j + 1/2)`, stored at `(i, j)`.
    pub edge_y: Vec<f64>,
    /// Four-cell harmonic mean at the corner `(i + 1/2, j + 1/2)`, stored at `(i, j)`.
    pub corner: Vec<f64>,
    pub gamma_max: f64,
}

impl GammaField {
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    /// `gamma~`, the degree-one entry.
    pub fn tilde(&self) -> &[f64] {
        &self.by_degree[0]
    }

    pub fn degree(&self, l: usize) -> &[f64] {
        &self.by_degree[l - 1]
    }

    pub fn max_degree(&self) -> usize {
        self.by_degree.len()
    }
}

/// `2 / (1/a + 1/b)`.
#[inline]
pub fn harmonic2(a: f64, b: f64) -> f64 {
    2.0 / (1.0 / a + 1.0 / b)
}

/// `4 / sum(1/v)`, with the reciprocals added in ascending order so the
/// result does not depend on the order of the arguments.
#[inline]
pub fn harmonic4(v: [f64; 4]) -> f64 {
    let mut r = [1.0 / v[0], 1.0 / v[1], 1.0 / v[2], 1.0 / v[3]];
    r.sort_unstable_by(|a, b| a.total_cmp(b));
    4.0 / (((r[0] + r[1]) + r[2]) + r[3])
}

/// Evaluates `Gamma` for every cell (ghosts included) and the harmonic
/// averages of `gamma~` used by the diffusion stencils.
pub fn build_gamma(
    mesh: &Mesh,
    material: &MaterialField,
    ops: &MomentOperators,
    eps: f64,
    dt: f64,
    sigma_f: f64,
) -> Result<GammaField> {
    if !(eps > 0.0) {
        return Err(FpnError::config("eps", "must be positive"));
    }
    if !(dt > 0.0) {
        return Err(FpnError::config("dt", "must be positive"));
    }
    if !(sigma_f >= 0.0) {
        return Err(FpnError::config("sigma_f", "must be nonnegative"));
    }
    let eps2 = eps * eps;
    let order = ops.order();
    let mut filter_by_degree = vec![0.0; order];
    for (a, &l) in ops.degrees.iter().enumerate() {
        filter_by_degree[l - 1] = ops.filter_diag[a];
    }
    let ss = material.sigma_s();
    let sa = material.sigma_a();
    let by_degree: Vec<Vec<f64>> = filter_by_degree
        .iter()
        .map(|&f| {
            ss.iter()
                .zip(sa)
                .map(|(&s, &a)| eps2 / (eps2 * (1.0 + a * dt + sigma_f * dt * f) + s * dt))
                .collect()
        })
        .collect();

    let g = &by_degree[0];
    let len = mesh.padded_len();
    let mut edge_x = vec![0.0; len];
    let mut edge_y = vec![0.0; len];
    let mut corner = vec![0.0; len];
    let gi = GHOST as isize;
    let (nx, ny) = (mesh.nx as isize, mesh.ny as isize);
    for j in -gi..(ny + gi) {
        for i in -gi..(nx + gi) {
            let p = mesh.at(i, j);
            if i + 1 < nx + gi {
                edge_x[p] = harmonic2(g[p], g[mesh.at(i + 1, j)]);
            }
            if j + 1 < ny + gi {
                edge_y[p] = harmonic2(g[p], g[mesh.at(i, j + 1)]);
            }
            if i + 1 < nx + gi && j + 1 < ny + gi {
                corner[p] = harmonic4([
                    g[p],
                    g[mesh.at(i + 1, j)],
                    g[mesh.at(i, j + 1)],
                    g[mesh.at(i + 1, j + 1)],
                ]);
            }
        }
    }
    let gamma_max = eps2 / (eps2 + material.sigma_s_min() * dt);
    Ok(GammaField {
        mesh: mesh.clone(),
        by_degree,
        edge_x,
        edge_y,
        corner,
        gamma_max,
    })
}
