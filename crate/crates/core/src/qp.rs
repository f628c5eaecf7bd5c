//! The trust-region tangent program and its aggregate plane.
//!
//! In the step `d = y - x` the program reads
//!
//! ```text
//! minimize    t + ½ dᵀQd
//! subject to  a_i + g_iᵀd ≤ t      for every plane i
//!             -R ≤ d_j ≤ R         for every coordinate j
//! ```
//!
//! and is solved by a primal active-set method with a null-space step.

use thiserror::Error;

use crate::linalg::real_solve;

/// Added to Q for the solve only.
pub const Q_REGULARIZATION: f64 = 1e-12;
/// Active-set pivot budget.
pub const MAX_PIVOTS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("invalid tangent problem: {0}")]
    InvalidInput(String),
    #[error("active-set iteration cap of {cap} exceeded (objective {best_objective:.6e}, {working} constraints in working set)")]
    IterationCap { cap: usize, best_objective: f64, working: usize },
    #[error("numerical failure in tangent program: {0}")]
    Numerical(String),
}

/// Affine function `a + gᵀ(y - x)` relative to the current center `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub a: f64,
    pub g: Vec<f64>,
}

impl Plane {
    pub fn new(a: f64, g: Vec<f64>) -> Self {
        Self { a, g }
    }

    /// Value at `x + d`.
    pub fn eval_step(&self, d: &[f64]) -> f64 {
        self.a + dot(&self.g, d)
    }
}

#[derive(Debug, Clone)]
pub struct TangentProblem {
    pub x: Vec<f64>,
    pub planes: Vec<Plane>,
    /// Row-major n×n.
    pub q: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KktResidual {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
    pub multiplier_sum: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.feasibility).max(self.complementarity).max(self.multiplier_sum)
    }
}

#[derive(Debug, Clone)]
pub struct TangentSolution {
    pub y: Vec<f64>,
    pub t: f64,
    pub multipliers: Vec<f64>,
    /// Upper-bound multiplier minus lower-bound multiplier, per coordinate.
    pub box_multipliers: Vec<f64>,
    pub aggregate_subgradient: Vec<f64>,
    /// Optimal value `t + ½dᵀQd`.
    pub objective: f64,
    pub kkt: KktResidual,
    pub pivots: usize,
}

impl TangentSolution {
    pub fn step(&self, x: &[f64]) -> Vec<f64> {
        self.y.iter().zip(x).map(|(y, x)| y - x).collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn quad_form(q: &[f64], d: &[f64]) -> f64 {
    let n = d.len();
    let mut s = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += q[i * n + j] * d[j];
        }
        s += d[i] * row;
    }
    s
}

pub(crate) fn mat_vec(q: &[f64], d: &[f64]) -> Vec<f64> {
    let n = d.len();
    (0..n).map(|i| dot(&q[i * n..(i + 1) * n], d)).collect()
}

impl TangentProblem {
    pub fn dim(&self) -> usize {
        self.x.len()
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.dim();
        if self.planes.is_empty() {
            return Err(QpError::InvalidInput("no cutting planes".into()));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(QpError::InvalidInput(format!("radius {} not positive", self.radius)));
        }
        if self.q.len() != n * n {
            return Err(QpError::InvalidInput(format!("Q has {} entries for n = {n}", self.q.len())));
        }
        if self.x.iter().chain(&self.q).any(|v| !v.is_finite()) {
            return Err(QpError::InvalidInput("non-finite center or Q".into()));
        }
        let qscale = self.q.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (self.q[i * n + j] - self.q[j * n + i]).abs() > 1e-12 * qscale {
                    return Err(QpError::InvalidInput("Q not symmetric".into()));
                }
            }
        }
        for (k, p) in self.planes.iter().enumerate() {
            if p.g.len() != n {
                return Err(QpError::InvalidInput(format!("plane {k} has dimension {}", p.g.len())));
            }
            if !p.a.is_finite() || p.g.iter().any(|v| !v.is_finite()) {
                return Err(QpError::InvalidInput(format!("plane {k} not finite")));
            }
        }
        Ok(())
    }

    /// Polyhedral model `max_i a_i + g_iᵀd` at step `d`.
    pub fn polyhedral(&self, d: &[f64]) -> f64 {
        self.planes.iter().map(|p| p.eval_step(d)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Model plus the quadratic term at step `d`.
    pub fn objective_at(&self, d: &[f64]) -> f64 {
        self.polyhedral(d) + 0.5 * quad_form(&self.q, d)
    }
}

pub fn solve_tangent(prob: &TangentProblem) -> Result<TangentSolution, QpError> {
    prob.validate()?;
    let n = prob.dim();
    let np = prob.planes.len();
    let nv = n + 1;
    let r = prob.radius;

    let mut h = vec![0.0; nv * nv];
    for i in 0..n {
        for j in 0..n {
            h[i * nv + j] = prob.q[i * n + j];
        }
        h[i * nv + i] += Q_REGULARIZATION;
    }
    let mut c = vec![0.0; nv];
    c[n] = 1.0;

    // planes first, then upper bounds, then lower bounds
    let mut rows = Vec::with_capacity(np + 2 * n);
    let mut rhs = Vec::with_capacity(np + 2 * n);
    for p in &prob.planes {
        let mut row = p.g.clone();
        row.push(-1.0);
        rows.push(row);
        rhs.push(-p.a);
    }
    for sign in [1.0, -1.0] {
        for j in 0..n {
            let mut row = vec![0.0; nv];
            row[j] = sign;
            rows.push(row);
            rhs.push(r);
        }
    }

    let (start_plane, t0) = prob
        .planes
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p.a))
        .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    let mut z0 = vec![0.0; nv];
    z0[n] = t0;

    let qp = ActiveSetQp { nv, h: &h, c: &c, rows: &rows, rhs: &rhs, n_eq: 0 };
    let mut out = qp.solve(z0, vec![start_plane], MAX_PIVOTS)?;
    let pivots = out.pivots;
    out.lambda = min_norm_multipliers(&qp, &out)?;

    let d = out.z[..n].to_vec();
    let y: Vec<f64> = prob.x.iter().zip(&d).map(|(x, d)| x + d).collect();
    let multipliers: Vec<f64> = out.lambda[..np].to_vec();
    let box_multipliers: Vec<f64> = (0..n).map(|j| out.lambda[np + j] - out.lambda[np + n + j]).collect();
    let mut g_star = vec![0.0; n];
    for (l, p) in multipliers.iter().zip(&prob.planes) {
        for (gs, gi) in g_star.iter_mut().zip(&p.g) {
            *gs += l * gi;
        }
    }
    let t = prob.polyhedral(&d);
    let objective = t + 0.5 * quad_form(&prob.q, &d);

    let qd = mat_vec(&prob.q, &d);
    let stationarity = (0..n)
        .map(|j| (g_star[j] + qd[j] + Q_REGULARIZATION * d[j] + box_multipliers[j]).abs())
        .fold(0.0, f64::max);
    let feasibility = d.iter().map(|v| (v.abs() - r).max(0.0)).fold(0.0, f64::max);
    let complementarity = prob
        .planes
        .iter()
        .zip(&multipliers)
        .map(|(p, l)| (l * (t - p.eval_step(&d))).abs())
        .chain((0..n).map(|j| (out.lambda[np + j] * (r - d[j])).abs()))
        .chain((0..n).map(|j| (out.lambda[np + n + j] * (r + d[j])).abs()))
        .fold(0.0, f64::max);
    let multiplier_sum = (multipliers.iter().sum::<f64>() - 1.0).abs();

    Ok(TangentSolution {
        y,
        t,
        multipliers,
        box_multipliers,
        aggregate_subgradient: g_star,
        objective,
        kkt: KktResidual { stationarity, feasibility, complementarity, multiplier_sum },
        pivots,
    })
}

/// Aggregate plane in center-relative form `a* + g*ᵀ(· - x)`.
pub fn aggregate_plane(prob: &TangentProblem, sol: &TangentSolution) -> Plane {
    // Σλ_i (a_i + g_iᵀd) equals t under complementarity; the weighted form
    // keeps the plane a convex combination of the model's planes.
    let lsum: f64 = sol.multipliers.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let a = sol.multipliers.iter().zip(&prob.planes).map(|(l, p)| l * p.a).sum::<f64>() / lsum;
    let g = sol.aggregate_subgradient.iter().map(|v| v / lsum).collect();
    Plane { a, g }
}

struct ActiveSetQp<'a> {
    nv: usize,
    h: &'a [f64],
    c: &'a [f64],
    rows: &'a [Vec<f64>],
    rhs: &'a [f64],
    /// Leading rows that are equalities and never leave the working set.
    n_eq: usize,
}

struct QpOutcome {
    z: Vec<f64>,
    working: Vec<usize>,
    lambda: Vec<f64>,
    pivots: usize,
}

/// Householder QR of a `rows × cols` matrix; returns the full orthogonal Q
/// (row-major `rows × rows`) and R (row-major `rows × cols`).
fn householder_qr(a: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    let mut r = a.to_vec();
    let mut q = vec![0.0; rows * rows];
    for i in 0..rows {
        q[i * rows + i] = 1.0;
    }
    for k in 0..cols.min(rows) {
        let norm: f64 = (k..rows).map(|i| r[i * cols + k].powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if r[k * cols + k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..rows).map(|i| r[i * cols + k]).collect();
        v[0] -= alpha;
        let vn = dot(&v, &v);
        if vn == 0.0 {
            continue;
        }
        for j in 0..cols {
            let s: f64 = (k..rows).map(|i| v[i - k] * r[i * cols + j]).sum::<f64>() * 2.0 / vn;
            for i in k..rows {
                r[i * cols + j] -= s * v[i - k];
            }
        }
        for i in 0..rows {
            let s: f64 = (k..rows).map(|l| q[i * rows + l] * v[l - k]).sum::<f64>() * 2.0 / vn;
            for l in k..rows {
                q[i * rows + l] -= s * v[l - k];
            }
        }
    }
    (q, r)
}

impl ActiveSetQp<'_> {
    fn objective(&self, z: &[f64]) -> f64 {
        0.5 * quad_form(self.h, z) + dot(self.c, z)
    }

    fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let hz = mat_vec(self.h, z);
        hz.iter().zip(self.c).map(|(a, b)| a + b).collect()
    }

    /// Multipliers of the working set from `C_Wᵀλ = -grad` by QR.
    fn working_multipliers(&self, working: &[usize], q: &[f64], r: &[f64], grad: &[f64]) -> Vec<f64> {
        let nv = self.nv;
        let m = working.len();
        // Q1ᵀ(-grad)
        let rhs: Vec<f64> = (0..m).map(|k| -(0..nv).map(|i| q[i * nv + k] * grad[i]).sum::<f64>()).collect();
        let mut lam = vec![0.0; m];
        for k in (0..m).rev() {
            let mut s = rhs[k];
            for l in (k + 1)..m {
                s -= r[k * m + l] * lam[l];
            }
            lam[k] = s / r[k * m + k];
        }
        lam
    }

    fn solve(&self, z0: Vec<f64>, w0: Vec<usize>, max_pivots: usize) -> Result<QpOutcome, QpError> {
        let nv = self.nv;
        let mut z = z0;
        let mut working = w0;
        let mut in_working = vec![false; self.rows.len()];
        for &k in &working {
            in_working[k] = true;
        }
        let mut full_step = false;

        for pivot in 0..max_pivots {
            let grad = self.gradient(&z);
            let gscale = 1.0 + norm2(&grad);
            let m = working.len();
            if m > nv {
                return Err(QpError::Numerical("working set exceeds variable count".into()));
            }
            let mut at = vec![0.0; nv * m];
            for (col, &k) in working.iter().enumerate() {
                for i in 0..nv {
                    at[i * m + col] = self.rows[k][i];
                }
            }
            let (q, r) = householder_qr(&at, nv, m);
            let nz = nv - m;
            let zbasis: Vec<Vec<f64>> = (m..nv).map(|col| (0..nv).map(|i| q[i * nv + col]).collect()).collect();
            let rg: Vec<f64> = zbasis.iter().map(|zc| dot(zc, &grad)).collect();

            let stationary = nz == 0 || full_step || norm2(&rg) <= 1e-14 * gscale;
            if stationary {
                full_step = false;
                let lam = self.working_multipliers(&working, &q, &r, &grad);
                let lscale = 1.0 + lam.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
                let candidate = working
                    .iter()
                    .zip(&lam)
                    .enumerate()
                    .filter(|(_, (&k, _))| k >= self.n_eq)
                    .min_by(|a, b| a.1 .1.total_cmp(b.1 .1));
                match candidate {
                    Some((pos, (&k, &l))) if l < -1e-11 * lscale => {
                        working.remove(pos);
                        in_working[k] = false;
                        continue;
                    }
                    _ => {
                        let mut lambda = vec![0.0; self.rows.len()];
                        for (&k, &l) in working.iter().zip(&lam) {
                            lambda[k] = l;
                        }
                        return Ok(QpOutcome { z, working, lambda, pivots: pivot });
                    }
                }
            }

            // reduced Newton step
            let mut zhz = vec![0.0; nz * nz];
            for a in 0..nz {
                let hza = mat_vec(self.h, &zbasis[a]);
                for b in 0..nz {
                    zhz[a * nz + b] = dot(&zbasis[b], &hza);
                }
            }
            let neg_rg: Vec<f64> = rg.iter().map(|v| -v).collect();
            let pz = real_solve(&zhz, nz, &neg_rg, 1e-300)
                .ok_or_else(|| QpError::Numerical("reduced Hessian singular".into()))?;
            let mut p = vec![0.0; nv];
            for (a, zc) in zbasis.iter().enumerate() {
                for i in 0..nv {
                    p[i] += pz[a] * zc[i];
                }
            }
            let pnorm = norm2(&p);
            if pnorm == 0.0 || !pnorm.is_finite() {
                full_step = true;
                continue;
            }

            let mut alpha = 1.0;
            let mut block = None;
            for (k, row) in self.rows.iter().enumerate() {
                if in_working[k] {
                    continue;
                }
                let s = dot(row, &p);
                if s > 1e-13 * norm2(row) * pnorm {
                    let slack = (self.rhs[k] - dot(row, &z)).max(0.0);
                    let ratio = slack / s;
                    if ratio < alpha {
                        alpha = ratio;
                        block = Some(k);
                    }
                }
            }
            for i in 0..nv {
                z[i] += alpha * p[i];
            }
            match block {
                Some(k) => {
                    working.push(k);
                    in_working[k] = true;
                }
                None => full_step = true,
            }
        }
        Err(QpError::IterationCap { cap: max_pivots, best_objective: self.objective(&z), working: working.len() })
    }
}

/// Among all KKT multipliers supported on the active constraints, the one of
/// least Euclidean norm.
fn min_norm_multipliers(qp: &ActiveSetQp<'_>, out: &QpOutcome) -> Result<Vec<f64>, QpError> {
    let nv = qp.nv;
    let active: Vec<usize> = (0..qp.rows.len())
        .filter(|&k| {
            let slack = qp.rhs[k] - dot(&qp.rows[k], &out.z);
            slack.abs() <= 1e-10 * (1.0 + qp.rhs[k].abs() + norm2(&qp.rows[k]) * norm2(&out.z))
        })
        .collect();
    let working_ineq = out.working.iter().filter(|&&k| k >= qp.n_eq).count();
    if active.len() <= working_ineq {
        return Ok(out.lambda.clone());
    }
    let na = active.len();
    let grad = qp.gradient(&out.z);

    // equality rows: columns of C_Aᵀ, i.e. for each variable i, Σ_k rows[k][i] λ_k = -grad_i
    let mut eq_rows: Vec<Vec<f64>> = Vec::new();
    let mut eq_rhs = Vec::new();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for i in 0..nv {
        let row: Vec<f64> = active.iter().map(|&k| qp.rows[k][i]).collect();
        if basis.len() == na {
            break;
        }
        let mut resid = row.clone();
        for _ in 0..2 {
            for b in &basis {
                let s = dot(&resid, b);
                for (r, bv) in resid.iter_mut().zip(b) {
                    *r -= s * bv;
                }
            }
        }
        let rn = norm2(&resid);
        if rn > 1e-9 * norm2(&row).max(f64::MIN_POSITIVE) {
            basis.push(resid.iter().map(|v| v / rn).collect());
            eq_rows.push(row);
            eq_rhs.push(-grad[i]);
        }
    }
    let n_eq = eq_rows.len();
    let mut rows = eq_rows;
    let mut rhs = eq_rhs;
    for j in 0..na {
        let mut row = vec![0.0; na];
        row[j] = -1.0;
        rows.push(row);
        rhs.push(0.0);
    }
    let mut h = vec![0.0; na * na];
    for j in 0..na {
        h[j * na + j] = 1.0;
    }
    let c = vec![0.0; na];
    let start: Vec<f64> = active.iter().map(|&k| out.lambda[k].max(0.0)).collect();
    let sub = ActiveSetQp { nv: na, h: &h, c: &c, rows: &rows, rhs: &rhs, n_eq };
    let res = match sub.solve(start, (0..n_eq).collect(), MAX_PIVOTS) {
        Ok(res) => res,
        Err(_) => return Ok(out.lambda.clone()),
    };
    let mut lambda = vec![0.0; qp.rows.len()];
    for (j, &k) in active.iter().enumerate() {
        lambda[k] = res.z[j].max(0.0);
    }
    Ok(lambda)
}
