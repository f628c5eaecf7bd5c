//! Discretized H∞ objective over a sampled generalized plant, its convex
//! first-order model and the cutting planes fed to the bundle solver.

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::bundle::{LocalModel, Oracle, OracleError};
use crate::controller::{ControllerError, ControllerStructure};
use crate::linalg::{max_svd, CMat, ComplexLu, LinalgError};
use crate::plant::{Channel, ChannelRole, FrdPlant, PlantError, PlantSample, PlantSource};
use crate::qp::Plane;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HinfError {
    #[error("ill-posed loop: I − P22·K singular at ω = {omega}")]
    IllPosed { omega: f64 },
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("barrier value {value} exceeds the cap at ω = {omega}")]
    Barrier { omega: f64, value: f64 },
    #[error("closed loop unstable: winding count gives {closed_loop_rhp} right half-plane poles")]
    Unstable { closed_loop_rhp: i64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl HinfError {
    /// Whether the error marks a destabilizing (rejectable) point rather than a fault.
    pub fn is_hidden_constraint(&self) -> bool {
        matches!(
            self,
            Self::IllPosed { .. } | Self::Barrier { .. } | Self::Unstable { .. } | Self::Controller(ControllerError::Resonance { .. })
        )
    }
}

impl From<HinfError> for OracleError {
    fn from(e: HinfError) -> Self {
        if e.is_hidden_constraint() {
            OracleError::Infeasible(e.to_string())
        } else {
            OracleError::Failure(e.to_string())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NyquistPolicy {
    /// Reject points whose winding count indicates closed-loop instability.
    Enforce,
    /// Compute and log only.
    Advisory,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HinfParams {
    /// Relative tolerance defining the active set.
    pub active_tol: f64,
    /// Relative distance to the peak within which secondary maxima are anticipated.
    pub anticipated_tol: f64,
    /// Barrier values above this are treated as infeasible.
    pub barrier_cap: f64,
    pub nyquist: NyquistPolicy,
    /// Open-loop plant poles in the open right half-plane.
    pub plant_rhp_poles: usize,
    /// Open-loop plant poles at `s = 0`.
    pub plant_origin_poles: usize,
}

impl Default for HinfParams {
    fn default() -> Self {
        Self {
            active_tol: 1e-8,
            anticipated_tol: 0.05,
            barrier_cap: 1e8,
            nyquist: NyquistPolicy::Enforce,
            plant_rhp_poles: 0,
            plant_origin_poles: 0,
        }
    }
}

/// Closed loop at one frequency.
#[derive(Debug, Clone)]
pub struct ClosedLoopSample {
    pub omega: f64,
    pub t: CMat,
    /// `det(I − P22·K)`.
    pub return_difference: Complex64,
    lu_left: ComplexLu,
    lu_right: ComplexLu,
}

fn lu_or_ill_posed(m: &CMat, omega: f64) -> Result<ComplexLu, HinfError> {
    match ComplexLu::factor(m) {
        Ok(lu) => Ok(lu),
        Err(LinalgError::Singular { .. }) => Err(HinfError::IllPosed { omega }),
        Err(e) => Err(HinfError::Numerical(e.to_string())),
    }
}

fn check_dims(p: &PlantSample, k: &CMat) -> Result<(), HinfError> {
    let d = p.dims();
    if k.rows() != d.nu || k.cols() != d.ny {
        return Err(HinfError::Dimension(format!("K is {}×{}, plant needs {}×{}", k.rows(), k.cols(), d.nu, d.ny)));
    }
    Ok(())
}

/// Lower LFT `T = P11 + P12·K·(I − P22·K)⁻¹·P21`.
pub fn lft_close(p: &PlantSample, k: &CMat, omega: f64) -> Result<ClosedLoopSample, HinfError> {
    check_dims(p, k)?;
    let d = p.dims();
    let left = &CMat::identity(d.ny) - &(&p.p22 * k);
    let right = &CMat::identity(d.nu) - &(k * &p.p22);
    let lu_left = lu_or_ill_posed(&left, omega)?;
    let lu_right = lu_or_ill_posed(&right, omega)?;
    let rm = lu_left.solve(&p.p21).map_err(|e| HinfError::Numerical(e.to_string()))?;
    let t = &p.p11 + &(&(&p.p12 * k) * &rm);
    if !t.is_finite() {
        return Err(HinfError::IllPosed { omega });
    }
    let return_difference = lu_left.determinant();
    Ok(ClosedLoopSample { omega, t, return_difference, lu_left, lu_right })
}

/// `∂T/∂x_i = P12·(I − K·P22)⁻¹·(∂K/∂x_i)·(I − P22·K)⁻¹·P21` for each `dK`.
pub fn dt_dx(p: &PlantSample, cl: &ClosedLoopSample, dk: &[CMat]) -> Result<Vec<CMat>, HinfError> {
    let num = |e: LinalgError| HinfError::Numerical(e.to_string());
    let rm = cl.lu_left.solve(&p.p21).map_err(num)?;
    let lm = solve_right(&cl.lu_right, &p.p12).map_err(num)?;
    Ok(dk.iter().map(|d| &(&lm * d) * &rm).collect())
}

/// `B·M⁻¹` from an LU of `M`.
fn solve_right(lu: &ComplexLu, b: &CMat) -> Result<CMat, LinalgError> {
    let n = b.cols();
    let inv = lu.solve(&CMat::identity(n))?;
    Ok(b * &inv)
}

/// σ̄ of every channel at one node, in channel order.
fn channel_values(t: &CMat, channels: &[Channel]) -> Result<Vec<f64>, HinfError> {
    channels
        .iter()
        .map(|ch| max_svd(&t.select(&ch.rows, &ch.cols)).map(|s| s.sigma).map_err(|e| HinfError::Numerical(e.to_string())))
        .collect()
}

/// Closed-loop channel values at a single frequency of any plant source.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeValues {
    pub omega: f64,
    /// One value per channel, in channel order.
    pub values: Vec<f64>,
    pub roles: Vec<ChannelRole>,
}

impl NodeValues {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn role_max(&self, role: ChannelRole) -> f64 {
        self.values.iter().zip(&self.roles).filter(|(_, r)| **r == role).map(|(v, _)| *v).fold(0.0, f64::max)
    }
}

/// `φ(ω) = max over channels of σ̄(T_channel(jω))` for controller `x`.
pub fn node_values(source: &dyn PlantSource, structure: &ControllerStructure, x: &[f64], omega: f64) -> Result<NodeValues, HinfError> {
    let p = source.sample(omega)?;
    let k = structure.k_eval(x, omega)?;
    let cl = lft_close(&p, &k, omega)?;
    let channels = source.channels();
    Ok(NodeValues { omega, values: channel_values(&cl.t, &channels)?, roles: channels.iter().map(|c| c.role).collect() })
}

/// Result of the Nyquist winding count along the positive grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NyquistReport {
    /// Net phase change of `det(I − P22·K)` from the first to the last node.
    pub phase_change: f64,
    /// Estimated closed-loop right half-plane pole count (before rounding).
    pub closed_loop_rhp: f64,
    /// False when a grid step turns the phase by more than π/2 or the estimate
    /// is far from an integer.
    pub reliable: bool,
}

impl NyquistReport {
    pub fn stable(&self) -> bool {
        self.closed_loop_rhp.round() == 0.0
    }
}

/// Winding count of the return difference `d_i` sampled on an ascending
/// positive grid; `open_rhp` and `open_origin` count open-loop poles of
/// plant and controller together.
pub fn nyquist_count(dets: &[Complex64], open_rhp: usize, open_origin: usize) -> NyquistReport {
    let mut phase = 0.0;
    let mut worst: f64 = 0.0;
    for w in dets.windows(2) {
        let step = (w[1] / w[0]).arg();
        worst = worst.max(step.abs());
        phase += step;
    }
    let pi = std::f64::consts::PI;
    let z = open_rhp as f64 - (2.0 * phase - open_origin as f64 * pi) / (2.0 * pi);
    let reliable = worst < 0.5 * pi && (z - z.round()).abs() < 0.25;
    NyquistReport { phase_change: phase, closed_loop_rhp: z, reliable }
}

/// Return difference below the grid, with the plant held at its lowest
/// sample and the controller evaluated exactly, so that integrator phase is
/// fully developed where the winding count starts.
fn low_frequency_tail(p: &PlantSample, structure: &ControllerStructure, x: &[f64], omega_min: f64) -> Vec<Complex64> {
    const DECADES: i32 = 10;
    const PER_DECADE: i32 = 8;
    (0..DECADES * PER_DECADE)
        .filter_map(|j| {
            let w = omega_min * 10f64.powf(-DECADES as f64 + j as f64 / PER_DECADE as f64);
            let k = structure.k_eval(x, w).ok()?;
            lft_close(p, &k, w).ok().map(|cl| cl.return_difference)
        })
        .collect()
}

/// Objective values on the whole grid.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub f: f64,
    /// `values[node][channel]`.
    pub values: Vec<Vec<f64>>,
    /// Node and channel attaining `f`, lowest frequency first on ties.
    pub argmax: (usize, usize),
    pub nyquist: NyquistReport,
}

impl Evaluation {
    /// All `(node, channel, value)` within `tol·max(1, |f|)` of `f`.
    pub fn active_set(&self, tol: f64) -> Vec<(usize, usize, f64)> {
        let thr = self.f - tol * self.f.abs().max(1.0);
        let mut out = Vec::new();
        for (i, row) in self.values.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v >= thr {
                    out.push((i, c, v));
                }
            }
        }
        out
    }

    /// Maximum over the nodes for one channel.
    pub fn channel_max(&self, channel: usize) -> f64 {
        self.values.iter().map(|r| r[channel]).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn argmax(values: &[Vec<f64>]) -> (usize, usize, f64) {
    let mut best = (0, 0, f64::NEG_INFINITY);
    for (i, row) in values.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v > best.2 {
                best = (i, c, v);
            }
        }
    }
    best
}

/// The H∞ program on a sampled plant for a fixed controller structure.
pub struct HinfObjective<'a> {
    pub plant: &'a FrdPlant,
    pub structure: ControllerStructure,
    pub params: HinfParams,
}

struct NodeLoop {
    cl: ClosedLoopSample,
    values: Vec<f64>,
}

impl<'a> HinfObjective<'a> {
    pub fn new(plant: &'a FrdPlant, structure: ControllerStructure, params: HinfParams) -> Result<Self, HinfError> {
        let d = plant.dims();
        if structure.ny() != d.ny || structure.nu() != d.nu {
            return Err(HinfError::Dimension(format!(
                "{} controller is {}×{}, plant control channel is {}×{}",
                structure.name(),
                structure.nu(),
                structure.ny(),
                d.nu,
                d.ny
            )));
        }
        if plant.grid()[0] <= 0.0 {
            return Err(HinfError::Dimension("the grid must start above ω = 0".into()));
        }
        Ok(Self { plant, structure, params })
    }

    fn loops(&self, x: &[f64]) -> Result<Vec<NodeLoop>, HinfError> {
        let channels = self.plant.channels_ref();
        let res: Vec<Result<NodeLoop, HinfError>> = self
            .plant
            .grid()
            .par_iter()
            .zip(self.plant.samples().par_iter())
            .map(|(&w, p)| {
                let k = self.structure.k_eval(x, w)?;
                let cl = lft_close(p, &k, w)?;
                let values = channel_values(&cl.t, channels)?;
                Ok(NodeLoop { cl, values })
            })
            .collect();
        res.into_iter().collect()
    }

    fn check_hidden(&self, x: &[f64], loops: &[NodeLoop]) -> Result<NyquistReport, HinfError> {
        let channels = self.plant.channels_ref();
        for (l, w) in loops.iter().zip(self.plant.grid()) {
            for (v, ch) in l.values.iter().zip(channels) {
                if ch.role == ChannelRole::Barrier && !(*v <= self.params.barrier_cap) {
                    return Err(HinfError::Barrier { omega: *w, value: *v });
                }
            }
        }
        let (k_origin, k_rhp) = self.structure.pole_counts(x)?;
        let mut dets = low_frequency_tail(&self.plant.samples()[0], &self.structure, x, self.plant.grid()[0]);
        dets.extend(loops.iter().map(|l| l.cl.return_difference));
        let report = nyquist_count(&dets, self.params.plant_rhp_poles + k_rhp, self.params.plant_origin_poles + k_origin);
        if !report.reliable {
            log::debug!("Nyquist count at x = {x:?} is unreliable on this grid: {report:?}");
        }
        if self.params.nyquist == NyquistPolicy::Enforce && !report.stable() {
            return Err(HinfError::Unstable { closed_loop_rhp: report.closed_loop_rhp.round() as i64 });
        }
        Ok(report)
    }

    /// Objective on the grid with the hidden stability constraint applied.
    pub fn evaluate(&self, x: &[f64]) -> Result<Evaluation, HinfError> {
        let loops = self.loops(x)?;
        let nyquist = self.check_hidden(x, &loops)?;
        let values: Vec<Vec<f64>> = loops.into_iter().map(|l| l.values).collect();
        let (i, c, f) = argmax(&values);
        Ok(Evaluation { f, values, argmax: (i, c), nyquist })
    }

    /// `f(x)` and its active set as `(ω, channel, value)`.
    pub fn objective(&self, x: &[f64]) -> Result<(f64, Vec<(f64, usize, f64)>), HinfError> {
        let e = self.evaluate(x)?;
        let act = e.active_set(self.params.active_tol).into_iter().map(|(i, c, v)| (self.plant.grid()[i], c, v)).collect();
        Ok((e.f, act))
    }

    /// Linearization of the closed loop at `x` for every node and channel.
    pub fn model_at(&self, x: &[f64]) -> Result<HinfModel, HinfError> {
        let loops = self.loops(x)?;
        self.check_hidden(x, &loops)?;
        let channels = self.plant.channels_ref();
        let res: Vec<Result<Vec<Branch>, HinfError>> = loops
            .par_iter()
            .zip(self.plant.samples().par_iter())
            .zip(self.plant.grid().par_iter())
            .map(|((l, p), &w)| {
                let dk = self.structure.k_jacobian(x, w)?;
                let dt = dt_dx(p, &l.cl, &dk)?;
                Ok(channels
                    .iter()
                    .zip(&l.values)
                    .map(|(ch, &v)| Branch {
                        t: l.cl.t.select(&ch.rows, &ch.cols),
                        dt: dt.iter().map(|m| m.select(&ch.rows, &ch.cols)).collect(),
                        value: v,
                    })
                    .collect())
            })
            .collect();
        let branches: Vec<Vec<Branch>> = res.into_iter().collect::<Result<_, _>>()?;
        let values: Vec<Vec<f64>> = branches.iter().map(|b| b.iter().map(|br| br.value).collect()).collect();
        let (_, _, f) = argmax(&values);
        Ok(HinfModel { x: x.to_vec(), f, branches, anticipated_tol: self.params.anticipated_tol })
    }
}

impl Oracle for HinfObjective<'_> {
    type Model<'m> = HinfModel where Self: 'm;

    fn dim(&self) -> usize {
        self.structure.param_count()
    }

    fn value(&self, x: &[f64]) -> Result<f64, OracleError> {
        Ok(self.evaluate(x)?.f)
    }

    fn local_model(&self, x: &[f64]) -> Result<HinfModel, OracleError> {
        Ok(self.model_at(x)?)
    }
}

#[derive(Debug, Clone)]
struct Branch {
    t: CMat,
    dt: Vec<CMat>,
    value: f64,
}

impl Branch {
    fn linearized(&self, d: &[f64]) -> CMat {
        let mut m = self.t.clone();
        for (dti, &di) in self.dt.iter().zip(d) {
            if di != 0.0 {
                m.axpy(di, dti);
            }
        }
        m
    }

    fn sigma(&self, d: &[f64]) -> f64 {
        if d.iter().all(|&v| v == 0.0) {
            return self.value;
        }
        max_svd(&self.linearized(d)).map(|s| s.sigma).unwrap_or(f64::INFINITY)
    }

    /// Subgradient of `d ↦ σ̄(T + Σ dT_i d_i)` at `d`.
    fn subgradient(&self, d: &[f64]) -> (f64, Vec<f64>) {
        let m = self.linearized(d);
        match max_svd(&m) {
            Ok(s) => {
                let g = self
                    .dt
                    .iter()
                    .map(|dti| {
                        let w = dti.matvec(&s.v);
                        s.u.iter().zip(&w).map(|(a, b)| a.conj() * b).sum::<Complex64>().re
                    })
                    .collect();
                let value = if d.iter().all(|&v| v == 0.0) { self.value } else { s.sigma };
                (value, g)
            }
            Err(_) => (f64::INFINITY, vec![0.0; self.dt.len()]),
        }
    }
}

/// `φ(y, x) = max over nodes and channels of σ̄(T(x) + Σ ∂T/∂x_i (y_i − x_i))`.
#[derive(Debug, Clone)]
pub struct HinfModel {
    x: Vec<f64>,
    f: f64,
    /// `branches[node][channel]`.
    branches: Vec<Vec<Branch>>,
    anticipated_tol: f64,
}

impl HinfModel {
    fn step(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.x).map(|(a, b)| a - b).collect()
    }

    /// Node and channel where the linearized model peaks at `y`.
    pub fn active_branch(&self, y: &[f64]) -> (usize, usize, f64) {
        let d = self.step(y);
        let vals: Vec<Vec<f64>> = self.branches.par_iter().map(|row| row.iter().map(|b| b.sigma(&d)).collect()).collect();
        argmax(&vals)
    }

    /// Grid-local maxima of each channel's curve within the relative
    /// tolerance of the peak, as `(node, channel)`, primary peak included.
    pub fn local_maxima(&self) -> Vec<(usize, usize)> {
        let n = self.branches.len();
        let nch = self.branches.first().map_or(0, |r| r.len());
        let thr = self.f - self.anticipated_tol * self.f.abs();
        let mut out = Vec::new();
        for c in 0..nch {
            let v = |i: usize| self.branches[i][c].value;
            for i in 0..n {
                let left_ok = i == 0 || v(i) >= v(i - 1);
                let right_ok = i + 1 == n || v(i) > v(i + 1);
                if n > 1 && left_ok && right_ok && v(i) >= thr {
                    out.push((i, c));
                } else if n == 1 && v(i) >= thr {
                    out.push((i, c));
                }
            }
        }
        out.sort();
        out
    }

    fn plane_for(&self, node: usize, channel: usize, d: &[f64]) -> Plane {
        let (value, g) = self.branches[node][channel].subgradient(d);
        // Center-relative intercept of m(y) = φ(z) + gᵀ(y − z).
        let a = value - g.iter().zip(d).map(|(gi, di)| gi * di).sum::<f64>();
        Plane::new(a, g)
    }
}

impl LocalModel for HinfModel {
    fn center(&self) -> &[f64] {
        &self.x
    }

    fn center_value(&self) -> f64 {
        self.f
    }

    fn model_value(&self, y: &[f64]) -> f64 {
        self.active_branch(y).2
    }

    fn cutting_plane(&self, z: &[f64]) -> Plane {
        let d = self.step(z);
        let (i, c, _) = self.active_branch(z);
        self.plane_for(i, c, &d)
    }

    fn anticipated_planes(&self) -> Vec<Plane> {
        let zero = vec![0.0; self.x.len()];
        let (pi, pc, _) = self.active_branch(&self.x);
        self.local_maxima()
            .into_iter()
            .filter(|&(i, c)| (i, c) != (pi, pc))
            .map(|(i, c)| self.plane_for(i, c, &zero))
            .collect()
    }
}

/// Closed-loop magnitude table `(ω, performance max, barrier max)` on a grid.
pub fn closed_loop_magnitudes(
    source: &dyn PlantSource,
    structure: &ControllerStructure,
    x: &[f64],
    grid: &[f64],
) -> Result<Vec<(f64, f64, f64)>, HinfError> {
    let res: Vec<Result<(f64, f64, f64), HinfError>> = grid
        .par_iter()
        .map(|&w| {
            let nv = node_values(source, structure, x, w)?;
            Ok((w, nv.role_max(ChannelRole::Performance), nv.role_max(ChannelRole::Barrier)))
        })
        .collect();
    res.into_iter().collect()
}
