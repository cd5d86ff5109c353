//! Real spherical harmonics, spherical quadrature, and the assembled moment
//! matrices consumed by the micro-macro scheme.
//!
//! The basis is ordered by degree and then by order, `(0,0), (1,-1), (1,0),
//! (1,1), ...`, and normalized so that `<m m^T> = I` over the unit sphere. The
//! real form carries no Condon-Shortley phase: `m_1^{-1}`, `m_1^0` and `m_1^1`
//! are positive multiples of `Omega_y`, `Omega_z` and `Omega_x`.
//!
//! Two quadrature families are used. Full-sphere integrals use a product rule
//! (Gauss-Legendre in `Omega_z`, uniform in azimuth). Half-range integrals
//! such as `<m m^T max(Omega_x, 0)>` use a hemisphere rule whose pole is the
//! `x` axis, which turns the half-range integrand into a polynomial in the
//! polar cosine and makes the result exact.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{FpnError, Result};
use crate::Axis;

/// Entries of assembled operators below this magnitude are exact zeros that
/// picked up quadrature roundoff.
const CLEAN_TOL: f64 = 1e-14;

/// Gauss-Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Ordered real spherical-harmonic index set `(l, k)`, `0 <= l <= N`,
/// `-l <= k <= l`.
///
/// The `z_even` variant keeps only harmonics that are even under
/// `Omega_z -> -Omega_z` (those with `l + |k|` even). Data that do not depend
/// on `z` never excite the odd ones, so both variants produce the same
/// solution on such data.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentBasis {
    order: usize,
    indices: Vec<(usize, i32)>,
    z_even: bool,
}

impl MomentBasis {
    /// Full `(N+1)^2` basis.
    pub fn new(order: usize) -> Result<Self> {
        Self::build(order, false)
    }

    /// Basis restricted to harmonics even in `Omega_z`.
    pub fn z_even(order: usize) -> Result<Self> {
        Self::build(order, true)
    }

    fn build(order: usize, z_even: bool) -> Result<Self> {
        if order < 1 {
            return Err(FpnError::InvalidOrder(order));
        }
        let mut indices = Vec::new();
        for l in 0..=order {
            for k in -(l as i32)..=(l as i32) {
                if z_even && (l + k.unsigned_abs() as usize) % 2 == 1 {
                    continue;
                }
                indices.push((l, k));
            }
        }
        Ok(Self { order, indices, z_even })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn is_z_even(&self) -> bool {
        self.z_even
    }

    /// Number of basis functions `n`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Number of micro components `n_m = n - 1`.
    pub fn micro_len(&self) -> usize {
        self.indices.len() - 1
    }

    pub fn indices(&self) -> &[(usize, i32)] {
        &self.indices
    }

    pub fn position(&self, l: usize, k: i32) -> Option<usize> {
        self.indices.iter().position(|&idx| idx == (l, k))
    }

    /// Evaluates every basis function at a unit direction.
    pub fn eval(&self, omega: [f64; 3]) -> Result<Vec<f64>> {
        let norm = (omega[0] * omega[0] + omega[1] * omega[1] + omega[2] * omega[2]).sqrt();
        if !((norm - 1.0).abs() <= 1e-12) {
            return Err(FpnError::NonUnitDirection { norm });
        }
        let mut out = vec![0.0; self.len()];
        self.eval_into(omega, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation into a caller buffer of length `len()`.
    pub fn eval_into(&self, omega: [f64; 3], out: &mut [f64]) {
        let n = self.order;
        let mu = omega[2];
        // r[m][l] = normalized associated Legendre function divided by
        // (1 - mu^2)^(m/2); the remaining factor comes from (x + i y)^m.
        let mut r = vec![vec![0.0; n + 1]; n + 1];
        let mut rmm = 1.0 / 2f64.sqrt();
        for m in 0..=n {
            if m > 0 {
                let mf = m as f64;
                rmm *= ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt();
            }
            r[m][m] = rmm;
            if m < n {
                r[m][m + 1] = (2.0 * m as f64 + 3.0).sqrt() * mu * rmm;
            }
            for l in (m + 2)..=n {
                let lf = l as f64;
                let mf = m as f64;
                let denom = lf * lf - mf * mf;
                let a = ((4.0 * lf * lf - 1.0) / denom).sqrt();
                let b = ((2.0 * lf + 1.0) * ((lf - 1.0) * (lf - 1.0) - mf * mf) / ((2.0 * lf - 3.0) * denom)).sqrt();
                r[m][l] = a * mu * r[m][l - 1] - b * r[m][l - 2];
            }
        }
        let mut re = vec![0.0; n + 1];
        let mut im = vec![0.0; n + 1];
        re[0] = 1.0;
        for m in 1..=n {
            re[m] = re[m - 1] * omega[0] - im[m - 1] * omega[1];
            im[m] = re[m - 1] * omega[1] + im[m - 1] * omega[0];
        }
        let inv_sqrt_pi = 1.0 / PI.sqrt();
        let inv_sqrt_2pi = 1.0 / (2.0 * PI).sqrt();
        for (slot, &(l, k)) in out.iter_mut().zip(&self.indices) {
            let m = k.unsigned_abs() as usize;
            *slot = match k.signum() {
                0 => r[0][l] * inv_sqrt_2pi,
                1 => r[m][l] * re[m] * inv_sqrt_pi,
                _ => r[m][l] * im[m] * inv_sqrt_pi,
            };
        }
    }

    /// For each basis index `a`, the pair `(pi(a), s_a)` with
    /// `m_a(S omega) = s_a m_{pi(a)}(omega)`, where `S` swaps `x` and `y`.
    pub fn swap_xy_map(&self) -> Vec<(usize, f64)> {
        self.indices
            .iter()
            .map(|&(l, k)| {
                let m = k.unsigned_abs() as i32;
                let (target, sign) = if k == 0 {
                    (0, 1.0)
                } else if k > 0 {
                    if m % 2 == 0 {
                        (k, parity(m / 2))
                    } else {
                        (-k, parity((m - 1) / 2))
                    }
                } else if m % 2 == 0 {
                    (k, -parity(m / 2))
                } else {
                    (m, parity((m - 1) / 2))
                };
                let pos = self
                    .position(l, target)
                    .expect("x/y swap keeps |k| and l, so the image is in the basis");
                (pos, sign)
            })
            .collect()
    }

    /// Signs `r_a` with `m_a(R omega) = r_a m_a(omega)` for the reflection
    /// `Omega_x -> -Omega_x`.
    pub fn mirror_x_signs(&self) -> Vec<f64> {
        self.indices
            .iter()
            .map(|&(_, k)| {
                let m = k.unsigned_abs() as i32;
                if k >= 0 {
                    parity(m)
                } else {
                    parity(m + 1)
                }
            })
            .collect()
    }

    /// Signs for the reflection `Omega_y -> -Omega_y`.
    pub fn mirror_y_signs(&self) -> Vec<f64> {
        self.indices
            .iter()
            .map(|&(_, k)| if k >= 0 { 1.0 } else { -1.0 })
            .collect()
    }
}

fn parity(p: i32) -> f64 {
    if p % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Builds the basis for order `N` (full index set).
pub fn build_basis(order: usize) -> Result<MomentBasis> {
    MomentBasis::new(order)
}

/// A set of unit directions with positive weights.
#[derive(Clone, Debug)]
pub struct SphericalQuadrature {
    nodes: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

/// `(cos, sin)` of the azimuths `(j + 1/2) 2 pi / n`. When `n` is a
/// multiple of 4 the first quadrant is mirrored about `pi/4` and rotated, so
/// the node set maps onto itself exactly under `x <-> y` and sign flips.
fn azimuths(n: usize) -> Vec<(f64, f64)> {
    let dphi = 2.0 * PI / n as f64;
    if !n.is_multiple_of(4) {
        return (0..n)
            .map(|j| {
                let phi = (j as f64 + 0.5) * dphi;
                (phi.cos(), phi.sin())
            })
            .collect();
    }
    let m = n / 4;
    let mut quad = vec![(0.0, 0.0); m];
    for j in 0..m.div_ceil(2) {
        let phi = (j as f64 + 0.5) * dphi;
        let (c, s) = if 2 * j + 1 == m {
            (FRAC_1_SQRT_2, FRAC_1_SQRT_2)
        } else {
            (phi.cos(), phi.sin())
        };
        quad[j] = (c, s);
        quad[m - 1 - j] = (s, c);
    }
    let mut out = Vec::with_capacity(n);
    out.extend(quad.iter().copied());
    out.extend(quad.iter().map(|&(c, s)| (-s, c)));
    out.extend(quad.iter().map(|&(c, s)| (-c, -s)));
    out.extend(quad.iter().map(|&(c, s)| (s, -c)));
    out
}

impl SphericalQuadrature {
    /// Product rule over the whole sphere: `n_polar` Gauss-Legendre nodes in
    /// `Omega_z` times `n_azimuth` equally spaced azimuths offset by half a
    /// spacing. Exact for spherical polynomials of degree
    /// `<= min(2 n_polar - 1, n_azimuth - 1)`.
    pub fn product(n_polar: usize, n_azimuth: usize) -> Self {
        let (mu, wmu) = gauss_legendre(n_polar);
        let dphi = 2.0 * PI / n_azimuth as f64;
        let dirs = azimuths(n_azimuth);
        let mut nodes = Vec::with_capacity(n_polar * n_azimuth);
        let mut weights = Vec::with_capacity(n_polar * n_azimuth);
        for (&z, &wz) in mu.iter().zip(&wmu) {
            let s = (1.0 - z * z).sqrt();
            for &(c, sn) in &dirs {
                nodes.push([s * c, s * sn, z]);
                weights.push(wz * dphi);
            }
        }
        Self { nodes, weights }
    }

    /// Rule over the hemisphere `Omega_axis >= 0` with the pole on `axis`.
    /// Exact for polynomials of degree `<= min(2 n_polar - 1, n_azimuth - 1)`
    /// restricted to that hemisphere.
    pub fn half_space(axis: Axis, n_polar: usize, n_azimuth: usize) -> Self {
        let (t, wt) = gauss_legendre(n_polar);
        let dpsi = 2.0 * PI / n_azimuth as f64;
        let mut nodes = Vec::with_capacity(n_polar * n_azimuth);
        let mut weights = Vec::with_capacity(n_polar * n_azimuth);
        for (&x, &wx) in t.iter().zip(&wt) {
            // map [-1, 1] onto [0, 1]
            let c = 0.5 * (x + 1.0);
            let s = (1.0 - c * c).sqrt();
            for j in 0..n_azimuth {
                let psi = (j as f64 + 0.5) * dpsi;
                let (p, q) = (s * psi.cos(), s * psi.sin());
                let node = match axis {
                    Axis::X => [c, p, q],
                    Axis::Y => [q, c, p],
                };
                nodes.push(node);
                weights.push(0.5 * wx * dpsi);
            }
        }
        Self { nodes, weights }
    }

    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: Fn([f64; 3]) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&o, &w)| w * f(o)).sum()
    }
}

/// Azimuth count for the product rule: at least `2N + 3` and a multiple of
/// four, so the node set is invariant under `x -> -x`, `y -> -y` and `x <-> y`.
fn azimuth_count(order: usize) -> usize {
    (2 * order + 3).div_ceil(4) * 4
}

/// Full-sphere rule exact for spherical polynomials of degree `<= 2N + 2`.
pub fn build_quadrature(order: usize) -> SphericalQuadrature {
    SphericalQuadrature::product(order + 2, azimuth_count(order))
}

/// Hemisphere rule exact for degree `<= 2N + 1`, enough for `m m^T Omega_axis`.
pub fn build_half_space_quadrature(axis: Axis, order: usize) -> SphericalQuadrature {
    SphericalQuadrature::half_space(axis, order + 1, 2 * order + 4)
}

/// The filter function of the filtered PN closure, `kappa(lambda) = 1 / (1 + lambda^4)`.
pub fn default_filter(lambda: f64) -> f64 {
    1.0 / (1.0 + lambda.powi(4))
}

/// Square row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// One term of a sparse row. Coefficients on the two members of a
/// `(l, +|k|)`, `(l, -|k|)` pair are summed together before accumulation so
/// that the result does not depend on which member the x/y swap maps first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RowTerm {
    Single(usize, f64),
    Pair(usize, f64, usize, f64),
}

/// Sparse matrix with rows stored as canonically ordered [`RowTerm`]s.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupedRows {
    rows: Vec<Vec<RowTerm>>,
}

impl GroupedRows {
    fn from_dense(m: &DenseMatrix, micro_indices: &[(usize, i32)]) -> Self {
        let mut groups: Vec<(usize, u32)> = micro_indices.iter().map(|&(l, k)| (l, k.unsigned_abs())).collect();
        groups.sort_unstable();
        groups.dedup();
        let rows = (0..m.dim())
            .map(|a| {
                let mut terms = Vec::new();
                for &(l, absk) in &groups {
                    let members: Vec<usize> = micro_indices
                        .iter()
                        .enumerate()
                        .filter(|(_, &(ll, kk))| ll == l && kk.unsigned_abs() == absk)
                        .map(|(b, _)| b)
                        .filter(|&b| m.get(a, b) != 0.0)
                        .collect();
                    match members.as_slice() {
                        [] => {}
                        [b] => terms.push(RowTerm::Single(*b, m.get(a, *b))),
                        [b1, b2] => terms.push(RowTerm::Pair(*b1, m.get(a, *b1), *b2, m.get(a, *b2))),
                        _ => unreachable!("at most two harmonics share (l, |k|)"),
                    }
                }
                terms
            })
            .collect();
        Self { rows }
    }

    /// One grouped row per input vector.
    pub(crate) fn from_vectors(vectors: &[&[f64]], micro_indices: &[(usize, i32)]) -> Self {
        let n = micro_indices.len();
        let mut m = DenseMatrix::zeros(n);
        let mut rows = Vec::with_capacity(vectors.len());
        for v in vectors {
            for (b, &x) in v.iter().enumerate() {
                m.set(0, b, x);
            }
            rows.push(Self::from_dense(&m, micro_indices).rows.swap_remove(0));
        }
        Self { rows }
    }

    pub fn rows(&self) -> &[Vec<RowTerm>] {
        &self.rows
    }

    pub fn nnz(&self) -> usize {
        self.rows
            .iter()
            .flatten()
            .map(|t| match t {
                RowTerm::Single(..) => 1,
                RowTerm::Pair(..) => 2,
            })
            .sum()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|row| row_dot(row, v)).collect()
    }
}

/// Dot product of one grouped row with a dense vector, in canonical order.
#[inline]
pub fn row_dot(row: &[RowTerm], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for t in row {
        acc += match *t {
            RowTerm::Single(b, c) => c * v[b],
            RowTerm::Pair(b1, c1, b2, c2) => c1 * v[b1] + c2 * v[b2],
        };
    }
    acc
}

/// Every moment matrix and vector used by the scheme. Micro-space objects
/// are indexed by the basis position minus one.
#[derive(Clone, Debug)]
pub struct MomentOperators {
    basis: MomentBasis,
    /// `<m_0 m~ Omega_x>`.
    pub a_x: Vec<f64>,
    /// `<m_0 m~ Omega_y>`.
    pub a_y: Vec<f64>,
    /// `<m~ m~^T Omega_x>`.
    pub flux_x: DenseMatrix,
    pub flux_y: DenseMatrix,
    /// `<m~ m~^T max(Omega_x, 0)>`.
    pub flux_x_plus: DenseMatrix,
    /// `<m~ m~^T max(-Omega_x, 0)>`.
    pub flux_x_minus: DenseMatrix,
    pub flux_y_plus: DenseMatrix,
    pub flux_y_minus: DenseMatrix,
    /// `<m_0 m~ Omega_x^2>`.
    pub a_xx: Vec<f64>,
    /// `<m_0 m~ Omega_x Omega_y>`.
    pub a_xy: Vec<f64>,
    pub a_yy: Vec<f64>,
    /// Diagonal of the micro filter matrix, `-ln kappa(l / (N + 1))`.
    pub filter_diag: Vec<f64>,
    /// Degree `l` of each micro component.
    pub degrees: Vec<usize>,
    /// Position of the nonzero entry of `a_x` (the `m_1^1` component).
    pub k_x: usize,
    /// Position of the nonzero entry of `a_y` (the `m_1^{-1}` component).
    pub k_y: usize,
    pub(crate) upwind_x_plus: GroupedRows,
    pub(crate) upwind_x_minus: GroupedRows,
    pub(crate) upwind_y_plus: GroupedRows,
    pub(crate) upwind_y_minus: GroupedRows,
    pub(crate) projections: GroupedRows,
}

impl MomentOperators {
    pub fn basis(&self) -> &MomentBasis {
        &self.basis
    }

    pub fn micro_len(&self) -> usize {
        self.basis.micro_len()
    }

    pub fn order(&self) -> usize {
        self.basis.order()
    }

    /// Half-range matrices `(A^+, A^-)` for an axis.
    pub fn half_range(&self, axis: Axis) -> (&DenseMatrix, &DenseMatrix) {
        match axis {
            Axis::X => (&self.flux_x_plus, &self.flux_x_minus),
            Axis::Y => (&self.flux_y_plus, &self.flux_y_minus),
        }
    }

    /// Grouped rows `[a~_xx, a~_yy, a~_xy]`.
    pub(crate) fn projection_rows(&self) -> &GroupedRows {
        &self.projections
    }

    pub(crate) fn upwind_rows(&self, axis: Axis) -> (&GroupedRows, &GroupedRows) {
        match axis {
            Axis::X => (&self.upwind_x_plus, &self.upwind_x_minus),
            Axis::Y => (&self.upwind_y_plus, &self.upwind_y_minus),
        }
    }
}

/// Assembles every moment operator for `basis` with filter function `kappa`.
///
/// `quadrature` must integrate spherical polynomials of degree `2N + 2`
/// exactly; the Gram matrix it produces is checked against the identity.
pub fn assemble_moment_operators(
    basis: &MomentBasis,
    quadrature: &SphericalQuadrature,
    kappa: &dyn Fn(f64) -> f64,
) -> Result<MomentOperators> {
    let n = basis.len();
    let nm = n - 1;
    let order = basis.order();

    let k0 = kappa(0.0);
    if (k0 - 1.0).abs() > 1e-15 {
        return Err(FpnError::Assembly(format!(
            "filter must satisfy kappa(0) = 1, got {k0}"
        )));
    }

    let mut vals = vec![0.0; n];
    let mut gram = DenseMatrix::zeros(n);
    let mut flux_x = DenseMatrix::zeros(nm);
    let mut a_x = vec![0.0; nm];
    let mut a_xx = vec![0.0; nm];
    let mut a_xy = vec![0.0; nm];
    for (&omega, &w) in quadrature.nodes().iter().zip(quadrature.weights()) {
        basis.eval_into(omega, &mut vals);
        for i in 0..n {
            let wi = w * vals[i];
            for j in 0..n {
                gram.data[i * n + j] += wi * vals[j];
            }
        }
        let m0 = vals[0];
        let (ox, oy) = (omega[0], omega[1]);
        for a in 0..nm {
            let ma = vals[a + 1];
            a_x[a] += w * m0 * ma * ox;
            a_xx[a] += w * m0 * ma * ox * ox;
            a_xy[a] += w * m0 * ma * ox * oy;
            let wa = w * ma * ox;
            for b in 0..nm {
                flux_x.data[a * nm + b] += wa * vals[b + 1];
            }
        }
    }

    let mut gram_err = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            gram_err = gram_err.max((gram.get(i, j) - target).abs());
        }
    }
    if gram_err > 1e-12 {
        return Err(FpnError::Assembly(format!(
            "Gram matrix deviates from identity by {gram_err:e}"
        )));
    }

    let half = build_half_space_quadrature(Axis::X, order);
    let mut flux_x_plus = DenseMatrix::zeros(nm);
    for (&omega, &w) in half.nodes().iter().zip(half.weights()) {
        basis.eval_into(omega, &mut vals);
        for a in 0..nm {
            let wa = w * vals[a + 1] * omega[0];
            for b in 0..nm {
                flux_x_plus.data[a * nm + b] += wa * vals[b + 1];
            }
        }
    }

    for m in [&mut flux_x, &mut flux_x_plus] {
        clean(&mut m.data);
        symmetrize(m);
    }
    clean(&mut a_x);
    clean(&mut a_xx);
    clean(&mut a_xy);

    // A^- is the mirror image of A^+ under Omega_x -> -Omega_x.
    let r = &basis.mirror_x_signs()[1..];
    let mut flux_x_minus = DenseMatrix::zeros(nm);
    for a in 0..nm {
        for b in 0..nm {
            flux_x_minus.set(a, b, r[a] * r[b] * flux_x_plus.get(a, b));
        }
    }

    // y-operators are the x-operators under the x/y swap.
    let swap: Vec<(usize, f64)> = basis.swap_xy_map()[1..].iter().map(|&(p, s)| (p - 1, s)).collect();
    let map_vec = |v: &[f64]| -> Vec<f64> { swap.iter().map(|&(p, s)| s * v[p]).collect() };
    let map_mat = |m: &DenseMatrix| -> DenseMatrix {
        let mut out = DenseMatrix::zeros(nm);
        for a in 0..nm {
            for b in 0..nm {
                let (pa, sa) = swap[a];
                let (pb, sb) = swap[b];
                out.set(a, b, sa * sb * m.get(pa, pb));
            }
        }
        out
    };
    let a_y = map_vec(&a_x);
    let a_yy = map_vec(&a_xx);
    let flux_y = map_mat(&flux_x);
    let flux_y_plus = map_mat(&flux_x_plus);
    let flux_y_minus = map_mat(&flux_x_minus);

    let k_x = single_nonzero(&a_x, "a_x")?;
    let k_y = single_nonzero(&a_y, "a_y")?;

    let degrees: Vec<usize> = basis.indices()[1..].iter().map(|&(l, _)| l).collect();
    let mut filter_diag = Vec::with_capacity(nm);
    for &l in &degrees {
        let kv = kappa(l as f64 / (order + 1) as f64);
        if !(kv > 0.0 && kv <= 1.0) {
            return Err(FpnError::Assembly(format!(
                "filter value {kv} at degree {l} outside (0, 1]"
            )));
        }
        filter_diag.push(-kv.ln());
    }

    let micro_indices = &basis.indices()[1..];
    Ok(MomentOperators {
        basis: basis.clone(),
        upwind_x_plus: GroupedRows::from_dense(&flux_x_plus, micro_indices),
        upwind_x_minus: GroupedRows::from_dense(&flux_x_minus, micro_indices),
        upwind_y_plus: GroupedRows::from_dense(&flux_y_plus, micro_indices),
        upwind_y_minus: GroupedRows::from_dense(&flux_y_minus, micro_indices),
        projections: GroupedRows::from_vectors(&[&a_xx, &a_yy, &a_xy], micro_indices),
        a_x,
        a_y,
        flux_x,
        flux_y,
        flux_x_plus,
        flux_x_minus,
        flux_y_plus,
        flux_y_minus,
        a_xx,
        a_xy,
        a_yy,
        filter_diag,
        degrees,
        k_x,
        k_y,
    })
}

/// Convenience: basis (optionally `z`-even), quadrature and operators with
/// the default filter.
pub fn operators_for_order(order: usize, z_even: bool) -> Result<MomentOperators> {
    let basis = if z_even {
        MomentBasis::z_even(order)?
    } else {
        MomentBasis::new(order)?
    };
    let quad = build_quadrature(order);
    assemble_moment_operators(&basis, &quad, &default_filter)
}

fn clean(v: &mut [f64]) {
    for x in v.iter_mut() {
        if x.abs() < CLEAN_TOL {
            *x = 0.0;
        }
    }
}

fn symmetrize(m: &mut DenseMatrix) {
    let n = m.dim();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m.get(i, j) + m.get(j, i));
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
}

fn single_nonzero(v: &[f64], name: &str) -> Result<usize> {
    let nz: Vec<usize> = (0..v.len()).filter(|&i| v[i] != 0.0).collect();
    match nz.as_slice() {
        [k] => Ok(*k),
        _ => Err(FpnError::Assembly(format!(
            "{name} should have exactly one nonzero entry, found {}",
            nz.len()
        ))),
    }
}
