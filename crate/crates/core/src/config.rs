//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bundle::SolverParams;
use crate::controller::ControllerStructure;
use crate::grid::GridOptions;
use crate::hinf::{HinfParams, NyquistPolicy};
use crate::plant::{CavityParams, NoiseRejectionWeights, RationalFilter, RcdConstants, SensitivityWeights, Weighting};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("config key `{key}` (line {line}): {msg}")]
    Value { key: String, line: usize, msg: String },
    #[error("config: missing key `{0}`")]
    Missing(String),
    #[error("config: {0}")]
    Invalid(String),
    #[error("config io: {0}")]
    Io(String),
}

const KEYS: &[&str] = &[
    "plant",
    "frd.path",
    "frd.contents",
    "rcd.D",
    "rcd.U",
    "rcd.C_in",
    "rcd.k",
    "rcd.L",
    "cavity.p2",
    "cavity.q2",
    "cavity.c",
    "cavity.tau1",
    "cavity.tau2",
    "cavity.tau3",
    "plant.rhp_poles",
    "plant.origin_poles",
    "weighting",
    "filter.We.num",
    "filter.We.den",
    "filter.Wn.num",
    "filter.Wn.den",
    "filter.Wu.num",
    "filter.Wu.den",
    "filter.W1.num",
    "filter.W1.den",
    "filter.W2.num",
    "filter.W2.den",
    "barrier.c",
    "controller",
    "controller.order",
    "controller.x0",
    "theta",
    "grid.omega_min",
    "grid.omega_max",
    "grid.fine_points",
    "grid.budget",
    "grid.growth",
    "grid.seed_fraction",
    "grid.subnodes",
    "refine.max",
    "nyquist",
    "objective.active_tol",
    "objective.anticipated_tol",
    "objective.barrier_cap",
    "solver.gamma",
    "solver.gamma_tilde",
    "solver.gamma_cap",
    "solver.theta",
    "solver.m_ball",
    "solver.q_cap",
    "solver.q_eps",
    "solver.eps_stop",
    "solver.max_outer",
    "solver.max_inner",
    "solver.max_planes",
    "solver.initial_radius",
    "solver.bfgs",
    "solver.anticipated",
    "solver.recycle",
    "seed",
];

/// Raw `key → (line, value)` pairs.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content.split_once('=').ok_or(ConfigError::Syntax { line, msg: "expected `key = value`".into() })?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(ConfigError::Syntax { line, msg: format!("unknown key `{k}`") });
            }
            if v.is_empty() {
                return Err(ConfigError::Syntax { line, msg: format!("empty value for `{k}`") });
            }
            if let Some((prev, _)) = entries.insert(k.to_string(), (line, v.to_string())) {
                return Err(ConfigError::Syntax { line, msg: format!("`{k}` already set on line {prev}") });
            }
        }
        Ok(Self { entries })
    }

    /// Sets or replaces a value (command-line overrides).
    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), (0, value.to_string()));
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    fn err(&self, key: &str, msg: impl Into<String>) -> ConfigError {
        let line = self.entries.get(key).map_or(0, |(l, _)| *l);
        ConfigError::Value { key: key.into(), line, msg: msg.into() }
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        self.raw(key).map(|v| v.parse::<T>().map_err(|_| self.err(key, format!("cannot parse `{v}`")))).transpose()
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.parsed::<f64>(key)?.unwrap_or(default))
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        Ok(self.parsed::<usize>(key)?.unwrap_or(default))
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        Ok(self.parsed::<bool>(key)?.unwrap_or(default))
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().parse::<f64>().map_err(|_| self.err(key, format!("bad number `{}`", s.trim()))))
                    .collect()
            })
            .transpose()
    }

    fn required_f64(&self, key: &str) -> Result<f64, ConfigError> {
        self.parsed::<f64>(key)?.ok_or_else(|| ConfigError::Missing(key.into()))
    }

    fn triple(&self, key: &str) -> Result<[f64; 3], ConfigError> {
        let v = self.list(key)?.ok_or_else(|| ConfigError::Missing(key.into()))?;
        v.try_into().map_err(|_| self.err(key, "expected three coefficients"))
    }

    fn filter(&self, name: &str, default: RationalFilter) -> Result<RationalFilter, ConfigError> {
        let (nk, dk) = (format!("filter.{name}.num"), format!("filter.{name}.den"));
        match (self.list(&nk)?, self.list(&dk)?) {
            (None, None) => Ok(default),
            (Some(n), d) => RationalFilter::new(n, d.unwrap_or_else(|| vec![1.0])).map_err(|e| self.err(&nk, e.to_string())),
            (None, Some(_)) => Err(ConfigError::Missing(nk)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrdContents {
    /// File holds the four `P` blocks.
    Generalized,
    /// File holds `G` only (block `G`); the weighting assembles `P`.
    OpenLoop,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlantSpec {
    Rcd(RcdConstants),
    Cavity(CavityParams),
    Frd { path: PathBuf, contents: FrdContents },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub plant: PlantSpec,
    pub weighting: Weighting,
    pub barrier: f64,
    pub structure: ControllerStructure,
    pub x0: Vec<f64>,
    pub theta: f64,
    pub omega_range: (f64, f64),
    pub fine_points: usize,
    pub grid: GridOptions,
    pub subnodes: usize,
    pub max_refine: usize,
    pub solver: SolverParams,
    pub objective: HinfParams,
    pub seed: u64,
}

fn cavity_w1() -> RationalFilter {
    RationalFilter { num: vec![0.01, 177.4], den: vec![1.0, 50.68] }
}

fn cavity_w2() -> RationalFilter {
    RationalFilter { num: vec![100.0, 500.0], den: vec![1.0, 50000.0] }
}

impl RunConfig {
    pub fn from_key_values(kv: &KeyValues, base_dir: &Path) -> Result<Self, ConfigError> {
        let plant_kind = kv.raw("plant").ok_or_else(|| ConfigError::Missing("plant".into()))?;
        let plant = match plant_kind {
            "rcd" => {
                let d = RcdConstants::default();
                let c = RcdConstants {
                    d: kv.f64_or("rcd.D", d.d)?,
                    u: kv.f64_or("rcd.U", d.u)?,
                    c_in: kv.f64_or("rcd.C_in", d.c_in)?,
                    k: kv.f64_or("rcd.k", d.k)?,
                    l: kv.f64_or("rcd.L", d.l)?,
                };
                c.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
                PlantSpec::Rcd(c)
            }
            "cavity" => {
                let p = CavityParams {
                    p2: kv.triple("cavity.p2")?,
                    q2: kv.triple("cavity.q2")?,
                    c: kv.required_f64("cavity.c")?,
                    tau1: kv.required_f64("cavity.tau1")?,
                    tau2: kv.required_f64("cavity.tau2")?,
                    tau3: kv.required_f64("cavity.tau3")?,
                };
                p.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
                PlantSpec::Cavity(p)
            }
            "frd" => {
                let rel = kv.raw("frd.path").ok_or_else(|| ConfigError::Missing("frd.path".into()))?;
                let path = base_dir.join(rel);
                if !path.is_file() {
                    return Err(kv.err("frd.path", format!("file {} does not exist", path.display())));
                }
                let contents = match kv.raw("frd.contents").unwrap_or("generalized") {
                    "generalized" => FrdContents::Generalized,
                    "open_loop" => FrdContents::OpenLoop,
                    other => return Err(kv.err("frd.contents", format!("expected generalized or open_loop, got `{other}`"))),
                };
                PlantSpec::Frd { path, contents }
            }
            other => return Err(kv.err("plant", format!("expected rcd, cavity or frd, got `{other}`"))),
        };

        let default_weighting = if matches!(plant, PlantSpec::Cavity(_)) { "sensitivity" } else { "noise_rejection" };
        let weighting = match kv.raw("weighting").unwrap_or(default_weighting) {
            "noise_rejection" => {
                let d = NoiseRejectionWeights::rcd();
                Weighting::NoiseRejection(NoiseRejectionWeights {
                    we: kv.filter("We", d.we)?,
                    wn: kv.filter("Wn", d.wn)?,
                    wu: kv.filter("Wu", d.wu)?,
                })
            }
            "sensitivity" => Weighting::Sensitivity(SensitivityWeights { w1: kv.filter("W1", cavity_w1())?, w2: kv.filter("W2", cavity_w2())? }),
            other => return Err(kv.err("weighting", format!("expected noise_rejection or sensitivity, got `{other}`"))),
        };

        let barrier = kv.f64_or("barrier.c", 0.2)?;
        if !(barrier > 0.0) {
            return Err(kv.err("barrier.c", "must be positive"));
        }

        // Controller dims follow the plant; FRD files are checked once loaded.
        let structure = match kv.raw("controller").unwrap_or("pi") {
            "pi" => ControllerStructure::Pi,
            "static" => ControllerStructure::StaticGain { ny: 1, nu: 1 },
            "tridiag" => {
                let order = kv.parsed::<usize>("controller.order")?.ok_or_else(|| ConfigError::Missing("controller.order".into()))?;
                if order == 0 {
                    return Err(kv.err("controller.order", "must be at least 1"));
                }
                ControllerStructure::StateSpaceTridiag { order, ny: 1, nu: 1 }
            }
            other => return Err(kv.err("controller", format!("expected pi, static or tridiag, got `{other}`"))),
        };
        let x0 = kv.list("controller.x0")?.ok_or_else(|| ConfigError::Missing("controller.x0".into()))?;
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(kv.err("controller.x0", "non-finite entry"));
        }

        let theta = kv.f64_or("theta", 0.01)?;
        if !(theta > 0.0) {
            return Err(kv.err("theta", "must be positive"));
        }
        let omega_range = (kv.f64_or("grid.omega_min", 1e-3)?, kv.f64_or("grid.omega_max", 1e4)?);
        if !(omega_range.0 > 0.0 && omega_range.1 > omega_range.0) {
            return Err(kv.err("grid.omega_min", "need 0 < omega_min < omega_max"));
        }
        let gd = GridOptions::default();
        let grid = GridOptions {
            budget: kv.usize_or("grid.budget", gd.budget)?,
            growth: kv.f64_or("grid.growth", gd.growth)?,
            seed_fraction: kv.f64_or("grid.seed_fraction", gd.seed_fraction)?,
            bisection_steps: gd.bisection_steps,
        };
        let fine_points = kv.usize_or("grid.fine_points", 4000)?;
        if fine_points < 2 {
            return Err(kv.err("grid.fine_points", "need at least 2"));
        }
        let subnodes = kv.usize_or("grid.subnodes", 10)?;
        let seed = kv.parsed::<u64>("seed")?.unwrap_or(0);

        let sd = SolverParams::default();
        let solver = SolverParams {
            gamma: kv.f64_or("solver.gamma", sd.gamma)?,
            gamma_tilde: kv.f64_or("solver.gamma_tilde", sd.gamma_tilde)?,
            gamma_cap: kv.f64_or("solver.gamma_cap", sd.gamma_cap)?,
            theta: kv.f64_or("solver.theta", sd.theta)?,
            m_ball: kv.f64_or("solver.m_ball", sd.m_ball)?,
            q_cap: kv.f64_or("solver.q_cap", sd.q_cap)?,
            eps_stop: kv.f64_or("solver.eps_stop", sd.eps_stop)?,
            max_outer: kv.usize_or("solver.max_outer", sd.max_outer)?,
            max_inner: kv.usize_or("solver.max_inner", sd.max_inner)?,
            max_planes: kv.usize_or("solver.max_planes", sd.max_planes)?,
            initial_radius: kv.f64_or("solver.initial_radius", sd.initial_radius)?,
            q_eps: kv.f64_or("solver.q_eps", sd.q_eps)?,
            bfgs: kv.bool_or("solver.bfgs", sd.bfgs)?,
            recycle: kv.bool_or("solver.recycle", sd.recycle)?,
            anticipated: kv.bool_or("solver.anticipated", sd.anticipated)?,
            check_minorization: false,
            seed,
        };
        solver.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let hd = HinfParams::default();
        let objective = HinfParams {
            active_tol: kv.f64_or("objective.active_tol", hd.active_tol)?,
            anticipated_tol: kv.f64_or("objective.anticipated_tol", hd.anticipated_tol)?,
            barrier_cap: kv.f64_or("objective.barrier_cap", hd.barrier_cap)?,
            nyquist: match kv.raw("nyquist").unwrap_or("enforce") {
                "enforce" => NyquistPolicy::Enforce,
                "advisory" => NyquistPolicy::Advisory,
                other => return Err(kv.err("nyquist", format!("expected enforce or advisory, got `{other}`"))),
            },
            plant_rhp_poles: kv.usize_or("plant.rhp_poles", 0)?,
            plant_origin_poles: kv.usize_or("plant.origin_poles", 0)?,
        };

        let cfg = Self {
            plant,
            weighting,
            barrier,
            structure,
            x0,
            theta,
            omega_range,
            fine_points,
            grid,
            subnodes,
            max_refine: kv.usize_or("refine.max", 5)?,
            solver,
            objective,
            seed,
        };
        if cfg.x0.len() != cfg.structure.param_count() {
            return Err(kv.err(
                "controller.x0",
                format!("{} controller needs {} parameters, got {}", cfg.structure.name(), cfg.structure.param_count(), cfg.x0.len()),
            ));
        }
        Ok(cfg)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        Self::from_key_values(&KeyValues::parse(text)?, base_dir)
    }

    /// Loads a file; `overrides` are applied on top of its keys.
    pub fn load(path: &Path, overrides: &[(&str, String)]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        let mut kv = KeyValues::parse(&text)?;
        for (k, v) in overrides {
            kv.set(k, v);
        }
        Self::from_key_values(&kv, path.parent().unwrap_or(Path::new(".")))
    }

    /// Resizes the controller to the plant's control channel.
    pub fn fit_structure(&mut self, ny: usize, nu: usize) -> Result<(), ConfigError> {
        let s = match self.structure {
            ControllerStructure::Pi if ny == 1 && nu == 1 => ControllerStructure::Pi,
            ControllerStructure::Pi => return Err(ConfigError::Invalid(format!("PI control needs a SISO loop, plant is {ny}×{nu}"))),
            ControllerStructure::StaticGain { .. } => ControllerStructure::StaticGain { ny, nu },
            ControllerStructure::StateSpaceTridiag { order, .. } => ControllerStructure::StateSpaceTridiag { order, ny, nu },
        };
        if self.x0.len() != s.param_count() {
            return Err(ConfigError::Invalid(format!(
                "{} controller for a {ny}×{nu} loop needs {} parameters, x0 has {}",
                s.name(),
                s.param_count(),
                self.x0.len()
            )));
        }
        self.structure = s;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RCD: &str = "
# reactor
plant = rcd
barrier.c = 0.2   # sensitivity weight
controller = pi
controller.x0 = 1, 1e-5
theta = 0.01
";

    #[test]
    fn parses_rcd_defaults() {
        let c = RunConfig::parse(RCD, Path::new(".")).unwrap();
        assert_eq!(c.plant, PlantSpec::Rcd(RcdConstants::default()));
        assert_eq!(c.x0, vec![1.0, 1e-5]);
        assert_eq!(c.weighting, Weighting::NoiseRejection(NoiseRejectionWeights::rcd()));
        assert_eq!(c.max_refine, 5);
        assert_eq!(c.objective.nyquist, NyquistPolicy::Enforce);
    }

    #[test]
    fn reports_lines() {
        let bad = format!("{RCD}\nsolver.max_outer = many\n");
        match RunConfig::parse(&bad, Path::new(".")) {
            Err(ConfigError::Value { key, line, .. }) => {
                assert_eq!(key, "solver.max_outer");
                assert_eq!(line, 9);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(KeyValues::parse("plant rcd"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(KeyValues::parse("plant = rcd\nplant = rcd"), Err(ConfigError::Syntax { line: 2, .. })));
        assert!(matches!(KeyValues::parse("\nnope = 1"), Err(ConfigError::Syntax { line: 2, .. })));
    }

    #[test]
    fn checks_invariants() {
        let neg = RCD.replace("theta = 0.01", "theta = -1");
        assert!(RunConfig::parse(&neg, Path::new(".")).is_err());
        let short = RCD.replace("1, 1e-5", "1");
        assert!(RunConfig::parse(&short, Path::new(".")).is_err());
        let missing = "plant = frd\nfrd.path = /nonexistent/p.csv\ncontroller.x0 = 1, 1\n";
        assert!(matches!(RunConfig::parse(missing, Path::new(".")), Err(ConfigError::Value { .. })));
        let cav = "plant = cavity\ncontroller = tridiag\ncontroller.order = 2\ncontroller.x0 = 0,0,0,0,0,0,0,0,0\n";
        assert_eq!(RunConfig::parse(cav, Path::new(".")), Err(ConfigError::Missing("cavity.p2".into())));
    }

    #[test]
    fn overrides_replace_values() {
        let mut kv = KeyValues::parse(RCD).unwrap();
        kv.set("theta", "0.5");
        let c = RunConfig::from_key_values(&kv, Path::new(".")).unwrap();
        assert_eq!(c.theta, 0.5);
    }
}
