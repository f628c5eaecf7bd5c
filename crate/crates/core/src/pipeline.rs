//! End-to-end synthesis: plant setup, grid construction, bundle solve,
//! certification and refinement.

use rayon::prelude::*;
use thiserror::Error;

use crate::bundle::{self, BundleError, Termination, TraceRow};
use crate::config::{ConfigError, FrdContents, PlantSpec, RunConfig};
use crate::controller::{fmt17, ControllerError, ControllerStructure};
use crate::grid::{
    build_grid, build_grid_on_nodes, merge_nodes, refinement_nodes, verify_samples, verify_scan, GridCertificate, GridError,
    SampledBound, VerificationReport,
};
use crate::hinf::{closed_loop_magnitudes, node_values, Evaluation, HinfError, HinfObjective, HinfParams, NyquistPolicy};
use crate::plant::{frd_load, frd_load_response, log_grid, FrdPlant, MixedSensitivity, OpenLoop, PlantError, PlantSource};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error("objective: {0}")]
    Objective(HinfError),
    /// The controller violates a hidden constraint (ill-posed loop, barrier, Nyquist).
    #[error("controller is not stabilizing: {0}")]
    NonStabilizing(HinfError),
    #[error("grid node budget exhausted: {0}")]
    Budget(GridError),
}

impl From<HinfError> for PipelineError {
    fn from(e: HinfError) -> Self {
        if e.is_hidden_constraint() {
            Self::NonStabilizing(e)
        } else {
            Self::Objective(e)
        }
    }
}

fn grid_error(e: GridError) -> PipelineError {
    match e {
        GridError::Budget { .. } => PipelineError::Budget(e),
        other => PipelineError::Grid(other),
    }
}

enum Source {
    Mixed(MixedSensitivity),
    Frd(FrdPlant),
}

/// A configured synthesis problem with its plant precomputed on `Ω_fine`.
pub struct Problem {
    pub config: RunConfig,
    source: Source,
    fine: FrdPlant,
}

/// Certification of a controller on a grid.
#[derive(Debug, Clone)]
pub struct Certification {
    /// Grid value `f(x)`, i.e. the certified level `γ*`.
    pub gamma_star: f64,
    pub certificate: GridCertificate,
    pub report: VerificationReport,
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub x: Vec<f64>,
    pub f: f64,
    pub termination: Termination,
    pub trace: Vec<TraceRow>,
    pub evaluations: usize,
    /// Refinement rounds performed after the first solve.
    pub rounds: usize,
    pub certification: Certification,
}

impl Synthesis {
    pub fn certified(&self) -> bool {
        self.certification.report.pass
    }
}

impl Problem {
    pub fn new(mut config: RunConfig) -> Result<Self, PipelineError> {
        let (wmin, wmax) = config.omega_range;
        let source = match &config.plant {
            PlantSpec::Rcd(c) => Source::Mixed(MixedSensitivity::new(OpenLoop::Rcd(*c), config.weighting.clone(), config.barrier)?),
            PlantSpec::Cavity(p) => Source::Mixed(MixedSensitivity::new(OpenLoop::Cavity(*p), config.weighting.clone(), config.barrier)?),
            PlantSpec::Frd { path, contents: FrdContents::Generalized } => Source::Frd(frd_load(path)?),
            PlantSpec::Frd { path, contents: FrdContents::OpenLoop } => {
                let r = frd_load_response(path)?;
                Source::Mixed(MixedSensitivity::new(OpenLoop::Frd(r), config.weighting.clone(), config.barrier)?)
            }
        };
        let src: &dyn PlantSource = match &source {
            Source::Mixed(m) => m,
            Source::Frd(p) => p,
        };
        let d = src.dims();
        config.fit_structure(d.ny, d.nu)?;
        let fine = match src.nodes() {
            Some(nodes) => {
                let inside: Vec<f64> = nodes.iter().copied().filter(|&w| w >= wmin && w <= wmax && w > 0.0).collect();
                if inside.len() < 2 {
                    return Err(ConfigError::Invalid(format!("fewer than two data frequencies inside [{wmin}, {wmax}]")).into());
                }
                FrdPlant::from_source(src, &inside)?
            }
            None => FrdPlant::from_source(src, &log_grid(wmin, wmax, config.fine_points))?,
        };
        Ok(Self { config, source, fine })
    }

    pub fn load(path: &std::path::Path, overrides: &[(&str, String)]) -> Result<Self, PipelineError> {
        Self::new(RunConfig::load(path, overrides)?)
    }

    pub fn source(&self) -> &dyn PlantSource {
        match &self.source {
            Source::Mixed(m) => m,
            Source::Frd(p) => p,
        }
    }

    pub fn structure(&self) -> ControllerStructure {
        self.config.structure
    }

    /// The plant sampled on `Ω_fine`.
    pub fn fine(&self) -> &FrdPlant {
        &self.fine
    }

    fn sampled(&self) -> bool {
        self.source().nodes().is_some()
    }

    /// `f` on `Ω_fine` with the configured hidden constraints, used to check
    /// that a controller is stabilizing before anything else.
    pub fn check_stabilizing(&self, x: &[f64]) -> Result<Evaluation, PipelineError> {
        Ok(HinfObjective::new(&self.fine, self.structure(), self.config.objective)?.evaluate(x)?)
    }

    /// `φ(ω)` for `x` on `Ω_fine`, without hidden-constraint checks.
    pub fn fine_values(&self, x: &[f64]) -> Result<Vec<f64>, PipelineError> {
        let params = HinfParams { nyquist: NyquistPolicy::Advisory, barrier_cap: f64::INFINITY, ..self.config.objective };
        let e = HinfObjective::new(&self.fine, self.structure(), params)?.evaluate(x)?;
        Ok(e.values.iter().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect())
    }

    fn bound(&self, x: &[f64]) -> Result<SampledBound, PipelineError> {
        Ok(SampledBound::new(self.fine.grid().to_vec(), self.fine_values(x)?)?)
    }

    fn phi<'a>(&'a self, x: &'a [f64]) -> impl Fn(f64) -> Result<f64, String> + Sync + 'a {
        let structure = self.structure();
        move |w| node_values(self.source(), &structure, x, w).map(|v| v.max()).map_err(|e| e.to_string())
    }

    /// Samples of the plant on an optimization grid.
    pub fn plant_on(&self, grid: &[f64]) -> Result<FrdPlant, PipelineError> {
        Ok(FrdPlant::from_source(self.source(), grid)?)
    }

    /// `Ω_opt` for controller `x` built with the spacing rule.
    pub fn make_grid(&self, x: &[f64]) -> Result<GridCertificate, PipelineError> {
        let bound = self.bound(x)?;
        let cert = if self.sampled() {
            build_grid_on_nodes(bound.omegas(), bound.values(), &bound, self.config.theta)
        } else {
            let phi = self.phi(x);
            let (lo, hi) = (self.fine.grid()[0], *self.fine.grid().last().expect("nonempty"));
            build_grid(&phi, &bound, self.config.theta, (lo, hi), &self.config.grid)
        };
        cert.map_err(grid_error)
    }

    /// Grid value of `x` on `grid`, the certificate evidence, and the
    /// verification scan against `γ* + ϑ`.
    pub fn certify(&self, x: &[f64], grid: &[f64]) -> Result<Certification, PipelineError> {
        let plant = self.plant_on(grid)?;
        let e = HinfObjective::new(&plant, self.structure(), self.config.objective)?.evaluate(x)?;
        let phi_nodes: Vec<f64> = e.values.iter().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let bound = self.bound(x)?;
        let theta = self.config.theta;
        let certificate = GridCertificate::from_nodes(grid.to_vec(), phi_nodes, theta, e.f, &bound);
        let report = if self.sampled() {
            verify_samples(grid, bound.omegas(), bound.values(), e.f, theta)?
        } else {
            verify_scan(&self.phi(x), grid, e.f, theta, self.config.subnodes)?
        };
        Ok(Certification { gamma_star: e.f, certificate, report })
    }

    /// New nodes for each violating frequency; sampled sources snap to their nodes.
    fn refine(&self, grid: &[f64], violations: &[f64]) -> Vec<f64> {
        let mut extra: Vec<f64> = violations.iter().flat_map(|&w| refinement_nodes(grid, w)).collect();
        if self.sampled() {
            let nodes = self.fine.grid();
            for w in &mut extra {
                let i = nodes.partition_point(|&g| g < *w).min(nodes.len() - 1);
                let j = i.saturating_sub(1);
                *w = if (nodes[i] - *w).abs() < (*w - nodes[j]).abs() { nodes[i] } else { nodes[j] };
            }
        }
        merge_nodes(grid, &extra)
    }

    /// Steps 4 to 6 of the synthesis loop starting at the configured `x0`.
    pub fn synthesize(&self) -> Result<Synthesis, PipelineError> {
        let x0 = self.config.x0.clone();
        let e0 = self.check_stabilizing(&x0)?;
        log::info!("x0 = {x0:?} is stabilizing, f on the fine grid = {:.6e}", e0.f);
        let mut grid = self.make_grid(&x0)?.grid;
        log::info!("initial grid: {} nodes", grid.len());
        let mut x = x0;
        let mut trace = Vec::new();
        let mut evaluations = 0;
        let mut outer_offset = 0;
        let mut rounds = 0;
        loop {
            let plant = self.plant_on(&grid)?;
            let objective = HinfObjective::new(&plant, self.structure(), self.config.objective)?;
            let res = bundle::run(&objective, &x, &self.config.solver, None)?;
            log::info!("round {rounds}: f = {:.12e}, {:?} after {} outer iterations", res.f, res.termination, res.outer_iterations);
            evaluations += res.evaluations;
            trace.extend(res.trace.into_iter().map(|mut r| {
                r.outer += outer_offset;
                r
            }));
            outer_offset = trace.last().map_or(outer_offset, |r| r.outer);
            x = res.x;
            let certification = self.certify(&x, &grid)?;
            if certification.report.pass || rounds == self.config.max_refine {
                return Ok(Synthesis {
                    f: certification.gamma_star,
                    x,
                    termination: res.termination,
                    trace,
                    evaluations,
                    rounds,
                    certification,
                });
            }
            log::info!("verification failed at {:?}; refining", certification.report.violations);
            grid = self.refine(&grid, &certification.report.violations);
            rounds += 1;
        }
    }

    /// `(ω, σ̄(T_wz) over performance channels, barrier)` on `Ω_fine`.
    pub fn magnitudes(&self, x: &[f64]) -> Result<Vec<(f64, f64, f64)>, PipelineError> {
        Ok(closed_loop_magnitudes(&self.fine, &self.structure(), x, self.fine.grid())?)
    }

    /// Peak of `φ` on `Ω_fine`, computed in parallel.
    pub fn fine_peak(&self, x: &[f64]) -> Result<(f64, f64), PipelineError> {
        let v = self.fine_values(x)?;
        Ok(self.fine.grid().par_iter().zip(v.par_iter()).map(|(&w, &p)| (w, p)).reduce(|| (f64::NAN, f64::NEG_INFINITY), |a, b| {
            if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                b
            } else {
                a
            }
        }))
    }
}

/// Closed-loop magnitude table as CSV.
pub fn magnitudes_csv(rows: &[(f64, f64, f64)]) -> String {
    let mut out = String::from("omega_radps,sigma_perf,barrier\n");
    for (w, p, b) in rows {
        out.push_str(&format!("{},{},{}\n", fmt17(*w), fmt17(*p), fmt17(*b)));
    }
    out
}
