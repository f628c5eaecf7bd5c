//! Non-smooth trust-region bundle method with cutting-plane aggregation.
//!
//! The outer loop moves the serious iterate `x`; the inner loop refines a
//! polyhedral working model of the oracle's first-order model `φ(·, x)` by
//! cutting planes until a trial point is accepted.

use std::fmt;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{hermitian_eig, CMat};
use crate::qp::{aggregate_plane, dot, mat_vec, quad_form, solve_tangent, Plane, QpError, TangentProblem, TangentSolution};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    pub gamma: f64,
    pub gamma_tilde: f64,
    pub gamma_cap: f64,
    pub theta: f64,
    /// Ball factor for admissible trial points.
    pub m_ball: f64,
    /// Norm cap for Q.
    pub q_cap: f64,
    pub eps_stop: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub max_planes: usize,
    pub initial_radius: f64,
    /// Default Q is `q_eps·I`.
    pub q_eps: f64,
    pub bfgs: bool,
    pub recycle: bool,
    pub anticipated: bool,
    pub check_minorization: bool,
    pub seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            gamma_tilde: 0.75,
            gamma_cap: 0.6,
            theta: 0.1,
            m_ball: 2.0,
            q_cap: 1e6,
            eps_stop: 1e-6,
            max_outer: 300,
            max_inner: 50,
            max_planes: 10,
            initial_radius: 1.0,
            q_eps: 1e-6,
            bfgs: false,
            recycle: true,
            anticipated: true,
            check_minorization: false,
            seed: 0,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<(), BundleError> {
        let bad = |msg: &str| Err(BundleError::InvalidParams(msg.to_string()));
        if !(0.0 < self.gamma && self.gamma < self.gamma_tilde && self.gamma_tilde < 1.0) {
            return bad("need 0 < gamma < gamma_tilde < 1");
        }
        if !(self.gamma < self.gamma_cap && self.gamma_cap <= 1.0) {
            return bad("need gamma < gamma_cap <= 1");
        }
        if !(0.0 < self.theta && self.theta < 1.0) {
            return bad("need 0 < theta < 1");
        }
        if !(self.m_ball >= 1.0) {
            return bad("need m_ball >= 1");
        }
        if !(self.q_cap > 0.0 && self.q_eps >= 0.0 && self.q_eps <= self.q_cap) {
            return bad("need 0 <= q_eps <= q_cap");
        }
        if !(self.eps_stop > 0.0) {
            return bad("need eps_stop > 0");
        }
        if self.max_planes < 3 {
            return bad("need max_planes >= 3");
        }
        if !(self.initial_radius > 0.0 && self.initial_radius.is_finite()) {
            return bad("need initial_radius > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    /// Hidden constraint violated at the queried point.
    #[error("hidden constraint violated: {0}")]
    Infeasible(String),
    #[error("oracle failure: {0}")]
    Failure(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BundleError {
    #[error("invalid solver parameters: {0}")]
    InvalidParams(String),
    #[error("initial point rejected: {0}")]
    InitialPoint(OracleError),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

/// First-order model `φ(·, x)` of the objective at a fixed center `x`.
pub trait LocalModel {
    fn center(&self) -> &[f64];
    /// `f(x)`, which must equal `model_value(x)`.
    fn center_value(&self) -> f64;
    fn model_value(&self, y: &[f64]) -> f64;
    /// Cutting plane at `z` in center-relative form.
    fn cutting_plane(&self, z: &[f64]) -> Plane;
    fn exactness_plane(&self) -> Plane {
        let x = self.center().to_vec();
        self.cutting_plane(&x)
    }
    fn anticipated_planes(&self) -> Vec<Plane> {
        Vec::new()
    }
    /// Re-anchor a plane from an earlier center whose base point was `base`.
    fn recycle(&self, base: &[f64], _old: &Plane, _old_center: &[f64]) -> Option<Plane> {
        Some(self.cutting_plane(base))
    }
}

pub trait Oracle {
    type Model<'a>: LocalModel
    where
        Self: 'a;
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<f64, OracleError>;
    fn local_model(&self, x: &[f64]) -> Result<Self::Model<'_>, OracleError>;
}

/// Custom trial-point generator; its proposal is checked before use.
pub trait TrialProposer {
    fn propose(&self, x: &[f64], y: &[f64]) -> Option<Vec<f64>>;
}

/// `z = x + t(y - x)`.
#[derive(Debug, Clone, Copy)]
pub struct Backtracking {
    pub t: f64,
}

impl TrialProposer for Backtracking {
    fn propose(&self, x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
        Some(x.iter().zip(y).map(|(x, y)| x + self.t * (y - x)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneTag {
    Exactness,
    Cut,
    Aggregate,
    Anticipated,
    Recycled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggedPlane {
    pub plane: Plane,
    pub tag: PlaneTag,
    /// Point the plane was generated at, when there is one.
    pub base: Option<Vec<f64>>,
    pub seq: u64,
}

#[derive(Debug, Clone, Default)]
pub struct WorkingModel {
    pub planes: Vec<TaggedPlane>,
    next_seq: u64,
}

impl WorkingModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, plane: Plane, tag: PlaneTag, base: Option<Vec<f64>>) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.planes.push(TaggedPlane { plane, tag, base, seq });
        seq
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn value_at(&self, x: &[f64], y: &[f64]) -> f64 {
        let d: Vec<f64> = y.iter().zip(x).map(|(y, x)| y - x).collect();
        self.planes.iter().map(|p| p.plane.eval_step(&d)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn has_exactness(&self) -> bool {
        self.planes.iter().any(|p| p.tag == PlaneTag::Exactness)
    }

    fn plain_planes(&self) -> Vec<Plane> {
        self.planes.iter().map(|p| p.plane.clone()).collect()
    }
}

/// Insert `new_cut`, and if the model then exceeds `max_planes`, rebuild it
/// from the exactness plane, the new cut, the aggregate and the most recent
/// remaining planes. Anticipated planes are the first to go.
pub fn taper_model(
    mut model: WorkingModel,
    new_cut: (Plane, Option<Vec<f64>>),
    aggregate: Option<Plane>,
    max_planes: usize,
) -> WorkingModel {
    let cut_seq = model.push(new_cut.0, PlaneTag::Cut, new_cut.1);
    if model.len() <= max_planes {
        return model;
    }
    let exact_seq = model.planes.iter().find(|p| p.tag == PlaneTag::Exactness).map(|p| p.seq);
    let mut keep: Vec<TaggedPlane> = Vec::with_capacity(max_planes);
    let mut rest: Vec<TaggedPlane> = Vec::new();
    for p in model.planes.drain(..) {
        if Some(p.seq) == exact_seq || p.seq == cut_seq {
            keep.push(p);
        } else {
            rest.push(p);
        }
    }
    if let Some(agg) = aggregate {
        let seq = model.next_seq;
        model.next_seq += 1;
        keep.push(TaggedPlane { plane: agg, tag: PlaneTag::Aggregate, base: None, seq });
    }
    rest.sort_by(|a, b| {
        let rank = |p: &TaggedPlane| u8::from(p.tag == PlaneTag::Anticipated);
        rank(a).cmp(&rank(b)).then(b.seq.cmp(&a.seq))
    });
    for p in rest {
        if keep.len() >= max_planes {
            break;
        }
        keep.push(p);
    }
    keep.sort_by_key(|p| p.seq);
    model.planes = keep;
    model
}

/// Trim a freshly assembled model, evicting anticipated then older planes.
fn trim_initial(model: &mut WorkingModel, max_planes: usize) {
    if model.len() <= max_planes {
        return;
    }
    let mut planes = std::mem::take(&mut model.planes);
    planes.sort_by(|a, b| {
        let rank = |p: &TaggedPlane| match p.tag {
            PlaneTag::Exactness => 0u8,
            PlaneTag::Anticipated => 2,
            _ => 1,
        };
        rank(a).cmp(&rank(b)).then(b.seq.cmp(&a.seq))
    });
    planes.truncate(max_planes);
    planes.sort_by_key(|p| p.seq);
    model.planes = planes;
}

pub fn acceptance_ratio(fx: f64, fz: f64, model_at_z: f64) -> Result<f64, BundleError> {
    let den = fx - model_at_z;
    if !(den > 0.0) {
        return Err(BundleError::Invariant(format!("acceptance ratio denominator {den:e} not positive")));
    }
    Ok((fx - fz) / den)
}

pub fn secondary_ratio(fx: f64, phi_next_at_z: f64, model_at_z: f64) -> Result<f64, BundleError> {
    let den = fx - model_at_z;
    if !(den > 0.0) {
        return Err(BundleError::Invariant(format!("secondary ratio denominator {den:e} not positive")));
    }
    Ok((fx - phi_next_at_z) / den)
}

pub fn memory_radius_update(rho: f64, radius: f64, gamma_cap: f64) -> f64 {
    if rho >= gamma_cap {
        2.0 * radius
    } else {
        radius
    }
}

fn dist_inf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Admissible trial point: the proposer's if it passes both tests, else `y`.
/// The flag reports whether the proposal was used.
pub fn trial_step(
    y: &[f64],
    prob: &TangentProblem,
    model_at_y: f64,
    fx: f64,
    params: &SolverParams,
    proposer: Option<&dyn TrialProposer>,
) -> (Vec<f64>, bool) {
    let x = &prob.x;
    let Some(z) = proposer.and_then(|p| p.propose(x, y)) else {
        return (y.to_vec(), false);
    };
    if z.len() != y.len() || z.iter().any(|v| !v.is_finite()) {
        return (y.to_vec(), false);
    }
    let in_ball = dist_inf(&z, x) <= params.m_ball * dist_inf(y, x);
    let dz: Vec<f64> = z.iter().zip(x).map(|(z, x)| z - x).collect();
    let model_at_z = prob.objective_at(&dz);
    let decrease_ok = fx - model_at_z >= params.theta * (fx - model_at_y);
    if in_ball && decrease_ok {
        (z, true)
    } else {
        (y.to_vec(), false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Serious,
    Null,
    /// Trial point violated the hidden constraint.
    Infeasible,
    /// Stopping test met at the first tangent solve.
    Stop,
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepKind::Serious => "serious",
            StepKind::Null => "null",
            StepKind::Infeasible => "infeasible",
            StepKind::Stop => "stop",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub outer: usize,
    pub inner: usize,
    /// Value at the serious iterate.
    pub f: f64,
    pub f_trial: f64,
    pub rho: f64,
    pub rho_tilde: f64,
    pub radius: f64,
    pub gstar_norm: f64,
    /// `Φ_k(y^k, x)` of the tangent solve this row belongs to.
    pub model_at_y: f64,
    pub trial_is_y: bool,
    pub step: StepKind,
}

pub const TRACE_HEADER: &str = "outer,inner,f,rho,rho_tilde,radius,gstar_norm,step,f_trial,model_at_y,trial_is_y";

pub fn write_trace_csv<W: Write>(mut w: W, rows: &[TraceRow]) -> io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e},{}",
            r.outer,
            r.inner,
            r.f,
            r.rho,
            r.rho_tilde,
            r.radius,
            r.gstar_norm,
            r.step,
            r.f_trial,
            r.model_at_y,
            u8::from(r.trial_is_y)
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    /// Small aggregate subgradient and small model decrease.
    Converged,
    /// The tangent program predicts no decrease at all.
    ModelExhausted,
    OuterLimit,
    InnerLimit,
    OracleFailure(String),
    QpFailure(String),
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub termination: Termination,
    pub trace: Vec<TraceRow>,
    pub outer_iterations: usize,
    pub evaluations: usize,
    /// Inner iterations where `Φ_k(y^k)` decreased or exceeded `f(x)`.
    pub monotonicity_violations: usize,
    pub minorization_violations: usize,
}

fn identity_scaled(n: usize, s: f64) -> Vec<f64> {
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        q[i * n + i] = s;
    }
    q
}

/// BFGS update of Q from a serious step, projected onto `[q_eps, q_cap]` in spectrum.
fn bfgs_update(q: &[f64], s: &[f64], yv: &[f64], params: &SolverParams) -> Vec<f64> {
    let n = s.len();
    let sy = dot(s, yv);
    let qs = mat_vec(q, s);
    let sqs = dot(s, &qs);
    if !(sy > 1e-12 * dot(s, s).sqrt() * dot(yv, yv).sqrt()) || !(sqs > 0.0) {
        return q.to_vec();
    }
    let mut next = q.to_vec();
    for i in 0..n {
        for j in 0..n {
            next[i * n + j] += yv[i] * yv[j] / sy - qs[i] * qs[j] / sqs;
        }
    }
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (next[i * n + j] + next[j * n + i]);
            next[i * n + j] = m;
            next[j * n + i] = m;
        }
    }
    let Ok(cm) = CMat::from_real(n, n, &next) else { return q.to_vec() };
    let Ok((vals, vecs)) = hermitian_eig(&cm) else { return q.to_vec() };
    let mut out = vec![0.0; n * n];
    for (l, v) in vals.iter().zip(&vecs) {
        let l = l.clamp(params.q_eps, params.q_cap);
        // real symmetric input: eigenvectors are real up to the normalized phase
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] += l * (v[i] * v[j].conj()).re;
            }
        }
    }
    out
}

struct Evaluator<'a, O: Oracle> {
    oracle: &'a O,
    count: usize,
}

impl<O: Oracle> Evaluator<'_, O> {
    fn eval(&mut self, z: &[f64]) -> Result<Option<f64>, String> {
        self.count += 1;
        match self.oracle.value(z) {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            Ok(v) => Err(format!("non-finite objective {v}")),
            Err(OracleError::Infeasible(_)) => Ok(None),
            Err(OracleError::Failure(msg)) => Err(msg),
        }
    }
}

pub fn run<O: Oracle>(
    oracle: &O,
    x0: &[f64],
    params: &SolverParams,
    proposer: Option<&dyn TrialProposer>,
) -> Result<RunResult, BundleError> {
    params.validate()?;
    let n = oracle.dim();
    if x0.len() != n {
        return Err(BundleError::InvalidParams(format!("x0 has length {}, expected {n}", x0.len())));
    }
    let mut ev = Evaluator { oracle, count: 0 };
    let mut x = x0.to_vec();
    let mut fx = match oracle.value(&x) {
        Ok(v) if v.is_finite() => v,
        Ok(v) => return Err(BundleError::InitialPoint(OracleError::Failure(format!("f(x0) = {v}")))),
        Err(e) => return Err(BundleError::InitialPoint(e)),
    };
    ev.count += 1;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut r_sharp = params.initial_radius;
    let mut q = identity_scaled(n, params.q_eps);
    let mut trace = Vec::new();
    let mut recycled: Vec<(Vec<f64>, Plane)> = Vec::new();
    let mut old_center = x.clone();
    let mut prev_exact: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut mono_violations = 0;
    let mut minor_violations = 0;
    let mut termination = Termination::OuterLimit;
    let mut outer_done = 0;

    'outer: for outer in 1..=params.max_outer {
        outer_done = outer;
        let local = match oracle.local_model(&x) {
            Ok(m) => m,
            Err(e) => {
                termination = Termination::OracleFailure(e.to_string());
                break;
            }
        };
        let exact = local.exactness_plane();
        if params.bfgs {
            if let Some((px, pg)) = &prev_exact {
                let s: Vec<f64> = x.iter().zip(px).map(|(a, b)| a - b).collect();
                let yv: Vec<f64> = exact.g.iter().zip(pg).map(|(a, b)| a - b).collect();
                q = bfgs_update(&q, &s, &yv, params);
            }
            prev_exact = Some((x.clone(), exact.g.clone()));
        }

        let mut model = WorkingModel::new();
        model.push(exact, PlaneTag::Exactness, Some(x.clone()));
        if params.recycle {
            for (base, plane) in &recycled {
                if let Some(p) = local.recycle(base, plane, &old_center) {
                    model.push(p, PlaneTag::Recycled, Some(base.clone()));
                }
            }
        }
        if params.anticipated {
            for p in local.anticipated_planes() {
                model.push(p, PlaneTag::Anticipated, None);
            }
        }
        trim_initial(&mut model, params.max_planes);

        let mut radius = r_sharp;
        let mut last_phi_y: Option<f64> = None;
        let tol = |v: f64| 1e-10 * v.abs().max(1.0);

        for inner in 1..=params.max_inner {
            let prob = TangentProblem { x: x.clone(), planes: model.plain_planes(), q: q.clone(), radius };
            let sol: TangentSolution = match solve_tangent(&prob) {
                Ok(s) => s,
                Err(e @ (QpError::IterationCap { .. } | QpError::Numerical(_) | QpError::InvalidInput(_))) => {
                    termination = Termination::QpFailure(e.to_string());
                    break 'outer;
                }
            };
            let phi_y = sol.objective;
            if let Some(prev) = last_phi_y {
                if phi_y < prev - tol(prev) {
                    mono_violations += 1;
                    log::warn!("model chain decreased: {prev:e} -> {phi_y:e} (outer {outer}, inner {inner})");
                }
            }
            if phi_y > fx + tol(fx) {
                mono_violations += 1;
                log::warn!("model value {phi_y:e} above f(x) = {fx:e}");
            }
            last_phi_y = Some(phi_y);

            let scale = 1.0 + fx.abs();
            let gnorm = dot(&sol.aggregate_subgradient, &sol.aggregate_subgradient).sqrt();
            let decrease = fx - phi_y;
            let row = |f_trial: f64, rho: f64, rho_tilde: f64, is_y: bool, step: StepKind| TraceRow {
                outer,
                inner,
                f: fx,
                f_trial,
                rho,
                rho_tilde,
                radius,
                gstar_norm: gnorm,
                model_at_y: phi_y,
                trial_is_y: is_y,
                step,
            };
            if inner == 1 && gnorm <= params.eps_stop * scale && decrease <= params.eps_stop * scale {
                trace.push(row(f64::NAN, f64::NAN, f64::NAN, true, StepKind::Stop));
                termination = Termination::Converged;
                break 'outer;
            }
            if decrease <= 1e-14 * scale {
                trace.push(row(f64::NAN, f64::NAN, f64::NAN, true, StepKind::Stop));
                termination = Termination::ModelExhausted;
                break 'outer;
            }

            let (z, from_proposer) = trial_step(&sol.y, &prob, phi_y, fx, params, proposer);
            let mut candidates = vec![(z, from_proposer)];
            if from_proposer {
                candidates.push((sol.y.clone(), false));
            }

            let mut cuts: Vec<(Plane, Vec<f64>)> = Vec::new();
            let mut rho_tilde = f64::NAN;
            for (idx, (z, from_proposer)) in candidates.iter().enumerate() {
                let dz: Vec<f64> = z.iter().zip(&x).map(|(a, b)| a - b).collect();
                let model_at_z = prob.objective_at(&dz);
                let fz = match ev.eval(z) {
                    Ok(v) => v,
                    Err(msg) => {
                        termination = Termination::OracleFailure(msg);
                        break 'outer;
                    }
                };
                let rho = match fz {
                    Some(fz) => acceptance_ratio(fx, fz, model_at_z)?,
                    None => f64::NEG_INFINITY,
                };
                if rho >= params.gamma {
                    let fz = fz.expect("finite on acceptance");
                    trace.push(row(fz, rho, f64::NAN, !from_proposer, StepKind::Serious));
                    r_sharp = memory_radius_update(rho, radius, params.gamma_cap);
                    recycled = model
                        .planes
                        .iter()
                        .filter(|p| p.tag == PlaneTag::Cut)
                        .filter_map(|p| p.base.clone().map(|b| (b, p.plane.clone())))
                        .collect();
                    old_center = x.clone();
                    x = z.clone();
                    fx = fz;
                    continue 'outer;
                }
                let cut = local.cutting_plane(z);
                if params.check_minorization {
                    minor_violations += count_minorization(&local, &cut, &x, radius, &mut rng);
                }
                let phi_next = model.value_at(&x, z).max(cut.eval_step(&dz));
                rho_tilde = secondary_ratio(fx, phi_next, model_at_z)?;
                let kind = if fz.is_some() { StepKind::Null } else { StepKind::Infeasible };
                trace.push(row(fz.unwrap_or(f64::INFINITY), rho, rho_tilde, !from_proposer, kind));
                cuts.push((cut, z.clone()));
                // the proposer's point failed but the radius stays put: retest y
                if idx == 0 && *from_proposer && rho_tilde < params.gamma_tilde {
                    continue;
                }
                break;
            }

            let aggregate = aggregate_plane(&prob, &sol);
            let last = cuts.len().saturating_sub(1);
            for (i, (cut, base)) in cuts.into_iter().enumerate() {
                let agg = (i == last).then(|| aggregate.clone());
                model = taper_model(model, (cut, Some(base)), agg, params.max_planes);
            }
            debug_assert!(model.has_exactness());
            if rho_tilde >= params.gamma_tilde {
                radius *= 0.5;
            }
            if inner == params.max_inner {
                termination = Termination::InnerLimit;
                break 'outer;
            }
        }
    }

    Ok(RunResult {
        x,
        f: fx,
        termination,
        trace,
        outer_iterations: outer_done,
        evaluations: ev.count,
        monotonicity_violations: mono_violations,
        minorization_violations: minor_violations,
    })
}

fn count_minorization<M: LocalModel>(local: &M, cut: &Plane, x: &[f64], radius: f64, rng: &mut ChaCha8Rng) -> usize {
    let mut bad = 0;
    for _ in 0..100 {
        let d: Vec<f64> = x.iter().map(|_| rng.gen_range(-2.0 * radius..=2.0 * radius)).collect();
        let y: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
        let phi = local.model_value(&y);
        if cut.eval_step(&d) > phi + 1e-8 * phi.abs().max(1.0) {
            bad += 1;
        }
    }
    if bad > 0 {
        log::warn!("{bad} minorization failures for a cutting plane");
    }
    bad
}

/// `Φ(y) = φ_model(y) + ½(y-x)ᵀQ(y-x)` for a plane list, exposed for checks.
pub fn second_order_model(planes: &[Plane], q: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let d: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    planes.iter().map(|p| p.eval_step(&d)).fold(f64::NEG_INFINITY, f64::max) + 0.5 * quad_form(q, &d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testproblems::{l1_norm, max_of_quadratics_2d, maxq};

    #[test]
    fn ratio_arithmetic() {
        assert_eq!(acceptance_ratio(10.0, 8.0, 6.0).unwrap(), 0.5);
        assert_eq!(acceptance_ratio(10.0, 6.0, 6.0).unwrap(), 1.0);
        assert!(acceptance_ratio(10.0, 11.0, 6.0).unwrap() < 0.0);
        assert!(acceptance_ratio(10.0, 9.0, 10.0).is_err());
        assert_eq!(secondary_ratio(10.0, 6.0, 6.0).unwrap(), 1.0);
        assert_eq!(secondary_ratio(10.0, 4.0, 6.0).unwrap(), 1.5);
        assert_eq!(secondary_ratio(10.0, 9.0, 6.0).unwrap(), 0.25);
    }

    #[test]
    fn memory_radius_rule() {
        assert_eq!(memory_radius_update(0.95, 1.0, 0.6), 2.0);
        assert_eq!(memory_radius_update(0.3, 1.0, 0.6), 1.0);
        assert_eq!(memory_radius_update(0.6, 1.0, 0.6), 2.0);
    }

    fn plane(v: f64) -> Plane {
        Plane::new(v, vec![v, -v])
    }

    #[test]
    fn taper_to_three() {
        let mut m = WorkingModel::new();
        m.push(plane(0.0), PlaneTag::Exactness, None);
        for i in 1..4 {
            m.push(plane(i as f64), PlaneTag::Cut, None);
        }
        let out = taper_model(m, (plane(9.0), None), Some(plane(7.0)), 3);
        let tags: Vec<PlaneTag> = out.planes.iter().map(|p| p.tag).collect();
        assert_eq!(tags, vec![PlaneTag::Exactness, PlaneTag::Cut, PlaneTag::Aggregate]);
        assert_eq!(out.planes[1].plane, plane(9.0));
        assert_eq!(out.planes[2].plane, plane(7.0));
    }

    #[test]
    fn taper_under_capacity_is_insert_only() {
        let mut m = WorkingModel::new();
        m.push(plane(0.0), PlaneTag::Exactness, None);
        m.push(plane(1.0), PlaneTag::Cut, None);
        m.push(plane(2.0), PlaneTag::Cut, None);
        let out = taper_model(m.clone(), (plane(3.0), None), Some(plane(7.0)), 5);
        assert_eq!(out.len(), 4);
        assert_eq!(&out.planes[..3], &m.planes[..]);
    }

    #[test]
    fn taper_evicts_anticipated_first_and_keeps_exactness() {
        let mut m = WorkingModel::new();
        m.push(plane(0.0), PlaneTag::Exactness, None);
        m.push(plane(1.0), PlaneTag::Anticipated, None);
        m.push(plane(2.0), PlaneTag::Cut, None);
        m.push(plane(3.0), PlaneTag::Cut, None);
        let out = taper_model(m, (plane(4.0), None), Some(plane(5.0)), 4);
        assert!(out.planes.iter().all(|p| p.tag != PlaneTag::Anticipated));
        let mut model = out;
        for i in 0..20 {
            model = taper_model(model, (plane(10.0 + i as f64), None), Some(plane(-1.0)), 3);
            assert!(model.has_exactness());
            assert!(model.len() <= 3);
        }
    }

    #[test]
    fn trial_step_contract() {
        let prob = TangentProblem {
            x: vec![0.0, 0.0],
            planes: vec![Plane::new(0.0, vec![1.0, 0.0])],
            q: identity_scaled(2, 0.0),
            radius: 1.0,
        };
        let sol = solve_tangent(&prob).unwrap();
        let params = SolverParams::default();
        let (z, used) = trial_step(&sol.y, &prob, sol.objective, 0.0, &params, None);
        assert_eq!(z, sol.y);
        assert!(!used);
        let half = Backtracking { t: 0.5 };
        let (z, used) = trial_step(&sol.y, &prob, sol.objective, 0.0, &params, Some(&half));
        assert!(used);
        assert!((z[0] + 0.5).abs() < 1e-12);
        let far = Backtracking { t: 3.0 };
        let (z, used) = trial_step(&sol.y, &prob, sol.objective, 0.0, &params, Some(&far));
        assert!(!used);
        assert_eq!(z, sol.y);
    }

    #[test]
    fn l1_converges_to_origin() {
        let p = l1_norm(2);
        let res = run(&p, &[1.0, -2.0], &SolverParams::default(), None).unwrap();
        assert!(res.x.iter().all(|v| v.abs() < 1e-4), "{:?} {:?}", res.x, res.termination);
    }

    #[test]
    fn max_of_quadratics_2d_kink() {
        let p = max_of_quadratics_2d();
        let params = SolverParams { eps_stop: 1e-10, ..SolverParams::default() };
        let res = run(&p, &[3.0, 2.0], &params, None).unwrap();
        assert!((res.x[0] - 1.0).abs() < 1e-4 && res.x[1].abs() < 1e-4, "{:?}", res.x);
        assert!((res.f - 1.0).abs() < 1e-6);
        assert_eq!(res.monotonicity_violations, 0);
    }

    #[test]
    fn maxq10_within_budget() {
        let p = maxq(10);
        let res = run(&p, &[1.0; 10], &SolverParams::default(), None).unwrap();
        assert!(res.f <= 1e-6, "{} after {} evaluations", res.f, res.evaluations);
        assert!(res.evaluations <= 500);
    }

    #[test]
    fn backtracking_proposer_still_converges() {
        let p = max_of_quadratics_2d();
        let half = Backtracking { t: 0.5 };
        let res = run(&p, &[3.0, 2.0], &SolverParams::default(), Some(&half)).unwrap();
        assert!((res.f - 1.0).abs() < 1e-5, "{} {:?}", res.f, res.termination);
    }

    #[test]
    fn deterministic_trace() {
        let p = max_of_quadratics_2d();
        let a = run(&p, &[3.0, 2.0], &SolverParams::default(), None).unwrap();
        let b = run(&p, &[3.0, 2.0], &SolverParams::default(), None).unwrap();
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        write_trace_csv(&mut ca, &a.trace).unwrap();
        write_trace_csv(&mut cb, &b.trace).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn bfgs_option_keeps_q_bounded() {
        let q = identity_scaled(2, 1e-6);
        let params = SolverParams::default();
        let next = bfgs_update(&q, &[1.0, 0.0], &[1e9, 0.0], &params);
        assert!(next[0] <= params.q_cap * (1.0 + 1e-12));
        assert!(next[3] >= params.q_eps * (1.0 - 1e-12));
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = SolverParams::default();
        p.max_planes = 2;
        assert!(p.validate().is_err());
        let mut p = SolverParams::default();
        p.gamma_tilde = 0.05;
        assert!(p.validate().is_err());
    }
}
