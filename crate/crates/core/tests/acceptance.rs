//! Acceptance criteria 1-10, one PASS/FAIL line each.
//!
//! All criteria run by default; this takes well over an hour on one core.
//! A subset can be selected with numeric arguments
//! (`cargo test --test acceptance -- 1 7 9`) or with
//! `FPN_ACCEPTANCE=1,7,9`.

mod common;

use std::f64::consts::PI;
use std::time::Instant;

use common::Lcg;
use fpn_core::angular::{build_quadrature, operators_for_order};
use fpn_core::bench::{
    diffusion_reference_rho, observed_order, relative_l2_error, run_benchmark, run_single, ProblemName, ProblemSpec,
    Regime, Sweep,
};
use fpn_core::grid::{build_gamma, MaterialField, Mesh, SimState};
use fpn_core::limiter::{build_constraints, check_conditions, ls_limit, opt_limit, tol_check, LimiterKind};
use fpn_core::solver::{diffusion_reference_step, Solver, SolverConfig};
use fpn_core::stencils::artificial_dissipation;
use fpn_core::{Axis, Result};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

const TITLES: [&str; 10] = [
    "diffusive line source",
    "diffusive lattice",
    "eps convergence on the lattice",
    "space-time convergence, diffusive",
    "space-time convergence, kinetic",
    "positivity with relaxed limiters",
    "asymptotic limit matches the diffusion scheme",
    "mass conservation",
    "property suites",
    "limiter effect on the kinetic line source",
];

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn within_factor(x: f64, target: f64, factor: f64) -> bool {
    x >= target / factor && x <= target * factor
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn fmt_orders(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2}")).collect();
    format!("[{}]", parts.join(", "))
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Lattice, diffusive defaults, error against the diffusion scheme.
fn lattice_error(eps: f64) -> Result<f64> {
    let spec = ProblemSpec::preset(ProblemName::Lattice, Regime::Diffusive)?;
    let (state, summary, _) = run_single(&spec, spec.cells, eps, LimiterKind::None)?;
    let reference = diffusion_reference_rho(&spec, spec.cells, summary.dt)?;
    relative_l2_error(&state.mesh, &state.rho(), &state.mesh, &reference)
}

fn criterion_1() -> Result<Outcome> {
    let spec = ProblemSpec::preset(ProblemName::LineSource, Regime::Diffusive)?;
    let mut errors = Vec::new();
    let mut fields: Vec<Vec<f64>> = Vec::new();
    let mut limited = 0;
    for kind in LimiterKind::ALL {
        let (state, summary, _) = run_single(&spec, spec.cells, spec.solver.eps, kind)?;
        let reference = diffusion_reference_rho(&spec, spec.cells, summary.dt)?;
        errors.push(relative_l2_error(&state.mesh, &state.rho(), &state.mesh, &reference)?);
        limited += summary.cells_limited_total;
        fields.push(state.macro_field);
    }
    let identical = fields
        .iter()
        .all(|f| f.iter().zip(&fields[0]).all(|(a, b)| a.to_bits() == b.to_bits()));
    let pass = identical && errors.iter().all(|&e| within(e, 0.005, 0.003));
    Ok(Outcome::new(
        pass,
        format!(
            "E = {} (target 0.005 +- 0.003), fields identical: {identical}, cells limited: {limited}",
            fmt_list(&errors)
        ),
    ))
}

fn criterion_2(e3: f64) -> Outcome {
    Outcome::new(within(e3, 0.218, 0.03), format!("E = {e3:.4} (target 0.218 +- 0.03)"))
}

fn criterion_3(e3: f64) -> Result<Outcome> {
    let eps = [1e-3, 1e-4, 1e-5, 1e-6, 1e-7];
    let mut errors = vec![e3];
    for &e in &eps[1..] {
        errors.push(lattice_error(e)?);
    }
    let nu = observed_order(&errors, &eps)?;
    let targets = [0.72, 0.93, 0.98];
    let orders_ok = nu[1..].iter().zip(&targets).all(|(&n, &t)| within(n, t, 0.15));
    let last_ok = within_factor(errors[4], 4.1e-4, 2.0);
    Ok(Outcome::new(
        orders_ok && last_ok,
        format!(
            "E = {}, nu = {} (check {} +- 0.15, first order excluded), E(1e-7) target 4.1e-4 within x2",
            fmt_list(&errors),
            fmt_orders(&nu),
            fmt_orders(&targets)
        ),
    ))
}

fn criterion_4() -> Result<Outcome> {
    let spec = ProblemSpec::preset(ProblemName::Convergence, Regime::Diffusive)?;
    let report = run_benchmark(&spec)?;
    let errors: Vec<f64> = report.runs.iter().map(|r| r.error.unwrap_or(f64::NAN)).collect();
    let target = [9.2e-2, 4.2e-2, 7.0e-3, 1.8e-3];
    let errors_ok = errors.iter().zip(&target).all(|(&e, &p)| within_factor(e, p, 2.0));
    let last = *report.orders.last().unwrap_or(&f64::NAN);
    let limited: usize = report.runs.iter().map(|r| r.summary.cells_limited_total).sum();
    Ok(Outcome::new(
        errors_ok && within(last, 2.0, 0.3),
        format!(
            "E = {} (targets {} within x2), nu = {} (final 2.0 +- 0.3), cells limited: {limited}",
            fmt_list(&errors),
            fmt_list(&target),
            fmt_orders(&report.orders)
        ),
    ))
}

fn criterion_5() -> Result<Outcome> {
    let mut spec = ProblemSpec::preset(ProblemName::Convergence, Regime::Kinetic)?;
    spec.sweep = Sweep::Mesh {
        cells: vec![20, 40, 80],
        reference_cells: 320,
    };
    let report = run_benchmark(&spec)?;
    let errors: Vec<f64> = report.runs.iter().map(|r| r.error.unwrap_or(f64::NAN)).collect();
    let nu = &report.orders;
    let increasing = nu.windows(2).all(|w| w[1] > w[0]);
    let last = *nu.last().unwrap_or(&f64::NAN);
    Ok(Outcome::new(
        increasing && last >= 1.2,
        format!(
            "E = {}, nu = {} (increasing, final >= 1.2)",
            fmt_list(&errors),
            fmt_orders(nu)
        ),
    ))
}

fn criterion_6() -> Result<Outcome> {
    let mut spec = ProblemSpec::preset(ProblemName::LineSource, Regime::Kinetic)?;
    spec.solver.order = 7;
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in [LimiterKind::LsRelaxed, LimiterKind::OptRelaxed, LimiterKind::None] {
        let (_, s, _) = run_single(&spec, 100, 1.0, kind)?;
        let ok = s.min_rho >= -1e-12 * s.max_rho;
        if kind != LimiterKind::None {
            pass &= ok;
        }
        parts.push(format!(
            "{kind}: min rho {:.3e}, max rho {:.3e}, nonnegative {ok}, cells limited {}",
            s.min_rho, s.max_rho, s.cells_limited_total
        ));
    }
    Ok(Outcome::new(pass, parts.join("; ")))
}

/// Smooth random field `1 + sum_k a_k sin(p_k x + q_k) cos(r_k y + s_k)` with
/// `sum |a_k| < 1`, so it stays positive.
fn smooth_field(mesh: &Mesh, rng: &mut Lcg) -> Vec<f64> {
    let modes: Vec<[f64; 5]> = (0..4)
        .map(|_| {
            [
                rng.range(-0.2, 0.2),
                rng.range(0.5, 4.0),
                rng.range(0.0, 2.0 * PI),
                rng.range(0.5, 4.0),
                rng.range(0.0, 2.0 * PI),
            ]
        })
        .collect();
    let mut out = vec![0.0; mesh.cells()];
    for j in 0..mesh.ny {
        for i in 0..mesh.nx {
            let (x, y) = mesh.cell_center(i, j);
            out[j * mesh.nx + i] = 1.0
                + modes
                    .iter()
                    .map(|m| m[0] * (m[1] * x + m[2]).sin() * (m[3] * y + m[4]).cos())
                    .sum::<f64>();
        }
    }
    out
}

fn criterion_7() -> Result<Outcome> {
    let mesh = Mesh::square(32, 1.0)?;
    let n = mesh.cells();
    let checker: Vec<(f64, f64)> = (0..n)
        .map(|q| {
            if (q % 32 + q / 32) % 2 == 0 {
                (1.0, 0.0)
            } else {
                (0.25, 0.5)
            }
        })
        .collect();
    let materials = [
        ("uniform", MaterialField::uniform(&mesh, 1.0, 0.2)?),
        (
            "checkerboard",
            MaterialField::new(
                &mesh,
                &checker.iter().map(|c| c.0).collect::<Vec<_>>(),
                &checker.iter().map(|c| c.1).collect::<Vec<_>>(),
            )?,
        ),
    ];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (k, (name, mat)) in materials.iter().enumerate() {
        let config = SolverConfig {
            order: 3,
            z_even: false,
            eps: 1e-8,
            ..SolverConfig::default()
        };
        let mut solver = Solver::new(config, mat.clone())?;
        let mut rng = Lcg(1000 + k as u64);
        let mut state = SimState::zeros(&mesh, solver.operators().micro_len());
        state.macro_field = mesh.pad(&smooth_field(&mesh, &mut rng));
        for a in 0..state.n_micro {
            let f = smooth_field(&mesh, &mut rng);
            let padded = mesh.pad(&f.iter().map(|v| 0.3 * (v - 1.0)).collect::<Vec<_>>());
            state.micro_mut(a).copy_from_slice(&padded);
        }
        let want = diffusion_reference_step(&state.macro_field, mat, solver.dt())?;
        solver.step(&mut state, None)?;
        let d = rel_diff(&state.macro_field, &want);
        worst = worst.max(d);
        parts.push(format!("{name}: {d:.2e}"));
    }
    Ok(Outcome::new(
        worst <= 1e-6,
        format!("relative difference {} (<= 1e-6)", parts.join(", ")),
    ))
}

/// Compact cosine bump of radius `r` at the origin.
fn bump(mesh: &Mesh, r: f64) -> Vec<f64> {
    let mut out = vec![0.0; mesh.cells()];
    for j in 0..mesh.ny {
        for i in 0..mesh.nx {
            let (x, y) = mesh.cell_center(i, j);
            let d = (x * x + y * y).sqrt();
            if d < r {
                out[j * mesh.nx + i] = (0.5 * PI * d / r).cos().powi(2);
            }
        }
    }
    out
}

fn criterion_8() -> Result<Outcome> {
    let mesh = Mesh::square(120, 1.5)?;
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (name, eps) in [("kinetic", 1.0), ("diffusive", 1e-3)] {
        let mat = MaterialField::from_fn(&mesh, |x, _| (if x < 0.0 { 1.0 } else { 2.0 }, 0.0))?;
        let config = SolverConfig {
            order: 3,
            eps,
            limiter: LimiterKind::LsRelaxed,
            ..SolverConfig::default()
        };
        let mut solver = Solver::new(config, mat)?;
        let mut state = SimState::zeros(&mesh, solver.operators().micro_len());
        state.macro_field = mesh.pad(&bump(&mesh, 0.2));
        let m0 = state.mass();
        for _ in 0..200 {
            solver.step(&mut state, None)?;
        }
        let drift = ((state.mass() - m0) / m0).abs();
        worst = worst.max(drift);
        parts.push(format!("{name}: {drift:.2e}"));
    }
    Ok(Outcome::new(
        worst <= 1e-10,
        format!("relative mass drift after 200 steps {} (<= 1e-10)", parts.join(", ")),
    ))
}

/// Lower bound of the artificial dissipation for nonnegative data.
fn minmod_suite() -> Result<(bool, String)> {
    let mesh = Mesh::new(1, 1, 1.0, 1.0, (0.0, 0.0))?;
    let mut rng = Lcg(7);
    let mut w = vec![0.0; mesh.padded_len()];
    let mut out = vec![0.0; mesh.padded_len()];
    let mut failures = 0;
    let mut worst = f64::INFINITY;
    for theta in [1.1, 1.5, 1.9] {
        let big = 1.0 / (2.0 - theta);
        for _ in 0..100_000 {
            let vals: Vec<f64> = (0..5)
                .map(|_| if rng.next() < 0.2 { 0.0 } else { rng.range(0.0, 10.0) })
                .collect();
            for (k, &v) in vals.iter().enumerate() {
                w[mesh.at(k as isize - 2, 0)] = v;
            }
            artificial_dissipation(&mesh, &w, theta, Axis::X, &mut out);
            let d = out[mesh.idx(0, 0)];
            let bound = 0.5 * (vals[3] / big - 4.0 * vals[2] + vals[1] / big);
            let scale = vals.iter().fold(1.0f64, |m, &v| m.max(v));
            let margin = (d - bound) / scale;
            worst = worst.min(margin);
            if margin < -1e-12 {
                failures += 1;
            }
        }
    }
    Ok((
        failures == 0,
        format!("minmod bound: {failures} violations in 3e5 windows"),
    ))
}

fn operator_suite() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for order in 1..=11 {
        for z_even in [false, true] {
            let ops = operators_for_order(order, z_even)?;
            let basis = ops.basis();
            let n = basis.len();
            let nm = ops.micro_len();
            let quad = build_quadrature(order);
            let mut gram = vec![0.0; n * n];
            let mut m = vec![0.0; n];
            for (node, &wt) in quad.nodes().iter().zip(quad.weights()) {
                basis.eval_into(*node, &mut m);
                for a in 0..n {
                    for b in 0..n {
                        gram[a * n + b] += wt * m[a] * m[b];
                    }
                }
            }
            for a in 0..n {
                for b in 0..n {
                    let id = if a == b { 1.0 } else { 0.0 };
                    worst = worst.max((gram[a * n + b] - id).abs());
                }
            }
            for a in 0..nm {
                for b in 0..nm {
                    worst = worst
                        .max((ops.flux_x.get(a, b) - (ops.flux_x_plus.get(a, b) - ops.flux_x_minus.get(a, b))).abs());
                    worst = worst
                        .max((ops.flux_y.get(a, b) - (ops.flux_y_plus.get(a, b) - ops.flux_y_minus.get(a, b))).abs());
                }
                let ex = if a == ops.k_x { 1.0 / 3f64.sqrt() } else { 0.0 };
                let ey = if a == ops.k_y { 1.0 / 3f64.sqrt() } else { 0.0 };
                worst = worst.max((ops.a_x[a] - ex).abs()).max((ops.a_y[a] - ey).abs());
            }
            // Q = [a_x a_y]^T Gamma [a_x a_y] = (gamma~ / 3) I
            let mesh = Mesh::new(1, 1, 0.1, 0.1, (0.0, 0.0))?;
            let mat = MaterialField::uniform(&mesh, 0.7, 0.3)?;
            let gamma = build_gamma(&mesh, &mat, &ops, 0.05, 1e-3, 56.2)?;
            let p = mesh.idx(0, 0);
            let g: Vec<f64> = ops.degrees.iter().map(|&l| gamma.degree(l)[p]).collect();
            let q = |u: &[f64], v: &[f64]| -> f64 { (0..nm).map(|a| u[a] * g[a] * v[a]).sum() };
            let gt = gamma.tilde()[p];
            let third = gt / 3.0;
            worst = worst
                .max((q(&ops.a_x, &ops.a_x) - third).abs() / gt)
                .max((q(&ops.a_y, &ops.a_y) - third).abs() / gt)
                .max(q(&ops.a_x, &ops.a_y).abs() / gt);
        }
    }
    Ok((
        worst <= 1e-12,
        format!("operator identities: worst deviation {worst:.1e}"),
    ))
}

fn limiter_suite() -> Result<(bool, String)> {
    let mut rng = Lcg(99);
    let ops: Vec<_> = (1..=3).map(|n| operators_for_order(n, false)).collect::<Result<_>>()?;
    let mut failures = Vec::new();
    let mut limited = 0;
    for cell in 0..10_000 {
        let o = &ops[cell % 3];
        let eps = rng.range(0.01, 1.0);
        let ubar = if rng.next() < 0.05 { 0.0 } else { rng.range(0.0, 2.0) };
        let v: Vec<f64> = (0..o.micro_len()).map(|_| rng.range(-3.0, 3.0)).collect();
        let cs = build_constraints(o, eps, rng.range(0.01, 0.2), rng.range(0.01, 0.2))?;
        let ls = ls_limit(ubar, &v, &cs)?;
        let opt = opt_limit(ubar, &v, &cs, 1e-6)?.v;
        if !check_conditions(ubar, &v, &cs)?.passed() {
            limited += 1;
        }
        let dist = |w: &[f64]| w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let checks = [
            (
                "ls feasible",
                check_conditions(ubar, &ls, &cs)?.worst_residual >= -tol_check(ubar),
            ),
            (
                "opt feasible",
                check_conditions(ubar, &opt, &cs)?.worst_residual >= -1e-9 * ubar.max(1.0),
            ),
            ("opt dominance", dist(&opt) <= dist(&ls) + 1e-6),
            ("ls idempotent", ls_limit(ubar, &ls, &cs)? == ls),
            (
                "opt idempotent",
                opt_limit(ubar, &opt, &cs, 1e-6)?
                    .v
                    .iter()
                    .zip(&opt)
                    .all(|(a, b)| (a - b).abs() < 1e-6),
            ),
        ];
        for (name, ok) in checks {
            if !ok {
                failures.push(format!("{name} (cell {cell})"));
            }
        }
    }
    Ok((
        failures.is_empty(),
        format!(
            "limiter: {} failures in 1e4 cells ({limited} needed limiting){}",
            failures.len(),
            failures.first().map(|f| format!(", first: {f}")).unwrap_or_default()
        ),
    ))
}

fn oracle_suite() -> Result<(bool, String)> {
    let mesh = Mesh::new(6, 6, 0.13, 0.11, (0.0, 0.0))?;
    let mut worst = 0.0f64;
    for order in 1..=3 {
        let ops = operators_for_order(order, false)?;
        for seed in 0..8u64 {
            let mut rng = Lcg(seed + 50);
            let eps = 10f64.powf(rng.range(-4.0, 0.0));
            let dt = rng.range(1e-4, 1e-2);
            let theta = rng.range(1.05, 1.95);
            worst = worst.max(common::oracle_deviation(
                &mesh,
                &ops,
                eps,
                dt,
                theta,
                seed * 31 + order as u64,
            ));
        }
    }
    Ok((
        worst <= 1e-13,
        format!("dense oracle: worst relative deviation {worst:.1e}"),
    ))
}

fn criterion_9() -> Result<Outcome> {
    let suites = [minmod_suite()?, operator_suite()?, limiter_suite()?, oracle_suite()?];
    let pass = suites.iter().all(|s| s.0);
    let detail: Vec<String> = suites.into_iter().map(|s| s.1).collect();
    Ok(Outcome::new(pass, detail.join("; ")))
}

fn criterion_10() -> Result<Outcome> {
    let spec = ProblemSpec::preset(ProblemName::LineSource, Regime::Kinetic)?;
    let rho = |kind| -> Result<(Vec<f64>, usize)> {
        let (state, s, _) = run_single(&spec, spec.cells, 1.0, kind)?;
        Ok((state.rho(), s.cells_limited_total))
    };
    let (none, _) = rho(LimiterKind::None)?;
    let (ls, n_ls) = rho(LimiterKind::LsRelaxed)?;
    let (opt, n_opt) = rho(LimiterKind::OptRelaxed)?;
    let (pw, n_pw) = rho(LimiterKind::LsPointwise)?;
    let (d_ls, d_opt, d_pw) = (rel_diff(&ls, &none), rel_diff(&opt, &none), rel_diff(&pw, &none));
    Ok(Outcome::new(
        d_ls <= 0.05 && d_opt <= 0.05 && d_pw >= 0.2,
        format!(
            "difference to unlimited: ls_relaxed {d_ls:.3e}, opt_relaxed {d_opt:.3e} (<= 0.05), \
             ls_pointwise {d_pw:.3e} (>= 0.2); cells limited {n_ls}, {n_opt}, {n_pw}"
        ),
    ))
}

fn selected() -> Vec<usize> {
    let mut picks: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if let Ok(list) = std::env::var("FPN_ACCEPTANCE") {
        picks.extend(list.split(',').filter_map(|s| s.trim().parse::<usize>().ok()));
    }
    picks.retain(|k| (1..=10).contains(k));
    picks.sort_unstable();
    picks.dedup();
    if picks.is_empty() {
        (1..=10).collect()
    } else {
        picks
    }
}

fn main() {
    let picks = selected();
    let mut lattice_e3: Option<f64> = None;
    let mut failed = 0;
    for k in picks {
        let start = Instant::now();
        let needs_e3 = k == 2 || k == 3;
        if needs_e3 && lattice_e3.is_none() {
            match lattice_error(1e-3) {
                Ok(e) => lattice_e3 = Some(e),
                Err(err) => {
                    println!("criterion {k} [{}]: FAIL (error: {err})", TITLES[k - 1]);
                    failed += 1;
                    continue;
                }
            }
        }
        let outcome = match k {
            1 => criterion_1(),
            2 => Ok(criterion_2(lattice_e3.unwrap())),
            3 => criterion_3(lattice_e3.unwrap()),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(),
            7 => criterion_7(),
            8 => criterion_8(),
            9 => criterion_9(),
            _ => criterion_10(),
        };
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(o) => {
                let verdict = if o.pass { "PASS" } else { "FAIL" };
                if !o.pass {
                    failed += 1;
                }
                println!(
                    "criterion {k} [{}]: {verdict} ({}; {secs:.0} s)",
                    TITLES[k - 1],
                    o.detail
                );
            }
            Err(err) => {
                failed += 1;
                println!("criterion {k} [{}]: FAIL (error: {err}; {secs:.0} s)", TITLES[k - 1]);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
