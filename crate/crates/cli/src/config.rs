//! Run configuration: benchmark defaults, then the TOML file, then flags.

use std::path::Path;

use fpn_core::bench::{ProblemName, ProblemSpec, Regime};
use fpn_core::limiter::LimiterKind;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Optional settings; every field left `None` keeps the value below it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub problem: Option<ProblemName>,
    pub regime: Option<Regime>,
    pub cells: Option<usize>,
    pub half_width: Option<f64>,
    pub ic_variance: Option<f64>,
    pub order: Option<usize>,
    pub z_even: Option<bool>,
    pub eps: Option<f64>,
    pub theta: Option<f64>,
    pub sigma_f: Option<f64>,
    pub cfl: Option<f64>,
    pub limiter: Option<LimiterKind>,
    pub limiter_tol: Option<f64>,
    pub t_final: Option<f64>,
    pub dt: Option<f64>,
    /// Number of `rho` snapshots written by `run`, evenly spaced in time.
    pub snapshots: Option<usize>,
}

macro_rules! layer {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl Overrides {
    /// Values of `top` win over those of `self`.
    pub fn merged(mut self, top: &Overrides) -> Overrides {
        layer!(self, top; problem, regime, cells, half_width, ic_variance, order, z_even, eps, theta,
            sigma_f, cfl, limiter, limiter_tol, t_final, dt, snapshots);
        self
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {}", e.message())))
    }

    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Fully resolved settings of one invocation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Resolved {
    pub spec: ProblemSpec,
    pub snapshots: usize,
}

fn check_open_unit(key: &str, v: f64, lo: f64, hi: f64) -> CliResult<()> {
    if v > lo && v < hi {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{key} = {v} is outside ({lo}, {hi})")))
    }
}

/// Applies `o` on top of the benchmark defaults and validates the result.
pub fn resolve(o: &Overrides) -> CliResult<Resolved> {
    let problem = o.problem.unwrap_or(ProblemName::LineSource);
    let regime = o.regime.unwrap_or(Regime::Diffusive);
    let mut spec = ProblemSpec::preset(problem, regime)?;
    if let Some(theta) = o.theta {
        check_open_unit("theta", theta, 1.0, 2.0)?;
    }
    if let Some(cfl) = o.cfl {
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(CliError::Usage(format!("cfl = {cfl} is outside (0, 1]")));
        }
    }
    if let Some(v) = o.cells {
        spec.cells = v;
    }
    if let Some(v) = o.half_width {
        spec.half_width = v;
    }
    if let Some(v) = o.ic_variance {
        spec.ic_variance = v;
    }
    let s = &mut spec.solver;
    if let Some(v) = o.order {
        s.order = v;
    }
    if let Some(v) = o.z_even {
        s.z_even = v;
    }
    if let Some(v) = o.eps {
        s.eps = v;
    }
    if let Some(v) = o.theta {
        s.theta = v;
    }
    if let Some(v) = o.sigma_f {
        s.sigma_f = v;
    }
    if let Some(v) = o.cfl {
        s.cfl = v;
    }
    if let Some(v) = o.limiter {
        s.limiter = v;
    }
    if let Some(v) = o.limiter_tol {
        s.limiter_tol = v;
    }
    if let Some(v) = o.t_final {
        s.t_final = v;
    }
    if o.dt.is_some() {
        s.dt = o.dt;
    }
    spec.validate()?;
    Ok(Resolved {
        spec,
        snapshots: o.snapshots.unwrap_or(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_for_diffusive_line_source() {
        let o = Overrides::from_toml("problem = \"line_source\"\nregime = \"diffusive\"\n").unwrap();
        let r = resolve(&o).unwrap();
        assert_eq!(r.spec.solver.order, 3);
        assert_eq!(r.spec.solver.eps, 1e-3);
        assert_eq!(r.spec.solver.t_final, 0.1);
        assert_eq!(r.spec.cells, 150);
        assert_eq!(r.spec.solver.theta, 1.5);
        assert_eq!(r.spec.solver.sigma_f, 56.2);
        assert_eq!(resolve(&Overrides::default()).unwrap(), r);
    }

    #[test]
    fn rejects_bad_values_and_keys() {
        let o = Overrides::from_toml("theta = 2.5").unwrap();
        match resolve(&o) {
            Err(CliError::Usage(m)) => assert!(m.contains("theta"), "{m}"),
            other => panic!("{other:?}"),
        }
        match Overrides::from_toml("thetta = 1.5") {
            Err(CliError::Usage(m)) => assert!(m.contains("thetta"), "{m}"),
            other => panic!("{other:?}"),
        }
        assert!(Overrides::from_toml("limiter = \"sometimes\"").is_err());
        assert!(resolve(&Overrides::from_toml("cells = 0").unwrap()).is_err());
        assert!(resolve(&Overrides::from_toml("cfl = 1.5").unwrap()).is_err());
        let transition = Overrides::from_toml("problem = \"lattice\"\nregime = \"transition\"").unwrap();
        assert!(matches!(resolve(&transition), Err(CliError::Usage(_))));
    }

    #[test]
    fn layering() {
        let file = Overrides::from_toml("limiter = \"opt_relaxed\"\nlimiter_tol = 1e-6\ncells = 40").unwrap();
        let flags = Overrides {
            cells: Some(20),
            ..Default::default()
        };
        let r = resolve(&file.merged(&flags)).unwrap();
        assert_eq!(r.spec.solver.limiter, LimiterKind::OptRelaxed);
        assert_eq!(r.spec.solver.limiter_tol, 1e-6);
        assert_eq!(r.spec.cells, 20);
        let k = resolve(&Overrides::from_toml("problem = \"lattice\"\nregime = \"kinetic\"").unwrap()).unwrap();
        assert_eq!((k.spec.solver.order, k.spec.solver.cfl), (11, 1.0));
    }
}
