//! Adaptive frequency grids with first-order-bound certificates, and the
//! verification scan that checks them.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("node budget {budget} exhausted at ω = {omega}")]
    Budget { budget: usize, omega: f64, partial: Box<GridCertificate> },
    #[error("no admissible next node after ω = {omega}")]
    Stalled { omega: f64 },
    #[error("φ evaluation failed at ω = {omega}: {msg}")]
    Evaluation { omega: f64, msg: String },
    #[error("too few fine samples in [{lo}, {hi}]")]
    InsufficientResolution { lo: f64, hi: f64 },
    #[error("invalid grid request: {0}")]
    Invalid(String),
    #[error("certificate line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Frequency-response magnitude `ω ↦ φ(ω)`.
pub type Phi<'a> = dyn Fn(f64) -> Result<f64, String> + Sync + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundProvenance {
    Analytic,
    FiniteDifferenceOnFineGrid,
}

impl BoundProvenance {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Analytic => "analytic",
            Self::FiniteDifferenceOnFineGrid => "finite_difference",
        }
    }
}

/// `M[a, b] ≥ |φ′|` on `[a, b]`.
pub trait FirstOrderBound: Sync {
    fn bound(&self, lo: f64, hi: f64) -> f64;
    fn provenance(&self) -> BoundProvenance;
}

/// Interval-independent analytic bound.
#[derive(Debug, Clone, Copy)]
pub struct ConstantBound(pub f64);

impl FirstOrderBound for ConstantBound {
    fn bound(&self, _lo: f64, _hi: f64) -> f64 {
        self.0
    }

    fn provenance(&self) -> BoundProvenance {
        BoundProvenance::Analytic
    }
}

pub const FD_SAFETY: f64 = 1.5;

/// `1.5 · max |forward difference|` over the samples inside `[lo, hi]`.
pub fn fd_bound(omegas: &[f64], values: &[f64], lo: f64, hi: f64) -> Result<f64, GridError> {
    let idx: Vec<usize> = (0..omegas.len()).filter(|&i| omegas[i] >= lo && omegas[i] <= hi).collect();
    if idx.len() < 2 {
        return Err(GridError::InsufficientResolution { lo, hi });
    }
    Ok(FD_SAFETY * max_slope(omegas, values, idx[0], *idx.last().expect("nonempty")))
}

fn max_slope(omegas: &[f64], values: &[f64], i0: usize, i1: usize) -> f64 {
    (i0..i1).map(|i| ((values[i + 1] - values[i]) / (omegas[i + 1] - omegas[i])).abs()).fold(0.0, f64::max)
}

/// Finite-difference bound from samples of φ on a fine grid. Intervals
/// narrower than the fine spacing use the bracketing samples.
#[derive(Debug, Clone)]
pub struct SampledBound {
    omegas: Vec<f64>,
    values: Vec<f64>,
}

impl SampledBound {
    pub fn new(omegas: Vec<f64>, values: Vec<f64>) -> Result<Self, GridError> {
        if omegas.len() < 2 || omegas.len() != values.len() {
            return Err(GridError::Invalid("a sampled bound needs at least two samples".into()));
        }
        if omegas.windows(2).any(|w| w[1] <= w[0]) || values.iter().any(|v| !v.is_finite()) {
            return Err(GridError::Invalid("fine samples must be ascending and finite".into()));
        }
        Ok(Self { omegas, values })
    }

    pub fn sample(phi: &Phi, omegas: &[f64]) -> Result<Self, GridError> {
        Self::new(omegas.to_vec(), eval_all(phi, omegas)?)
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl FirstOrderBound for SampledBound {
    fn bound(&self, lo: f64, hi: f64) -> f64 {
        let n = self.omegas.len();
        let i0 = self.omegas.partition_point(|&w| w <= lo).saturating_sub(1);
        let i1 = self.omegas.partition_point(|&w| w < hi).min(n - 1);
        let i1 = i1.max(i0 + 1).min(n - 1);
        let i0 = i0.min(i1 - 1);
        FD_SAFETY * max_slope(&self.omegas, &self.values, i0, i1)
    }

    fn provenance(&self) -> BoundProvenance {
        BoundProvenance::FiniteDifferenceOnFineGrid
    }
}

fn eval(phi: &Phi, omega: f64) -> Result<f64, GridError> {
    match phi(omega) {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(GridError::Evaluation { omega, msg: format!("non-finite value {v}") }),
        Err(msg) => Err(GridError::Evaluation { omega, msg }),
    }
}

fn eval_all(phi: &Phi, omegas: &[f64]) -> Result<Vec<f64>, GridError> {
    let res: Vec<Result<f64, GridError>> = omegas.par_iter().map(|&w| eval(phi, w)).collect();
    res.into_iter().collect()
}

/// Evidence that the spacing rule held on `[lo, hi]`: `lhs = M·(hi − lo)`,
/// `rhs = 2γ* + 2ϑ − φ(lo) − φ(hi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalCheck {
    pub lo: f64,
    pub hi: f64,
    pub phi_lo: f64,
    pub phi_hi: f64,
    pub bound: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// Interval lies entirely below `γ* − 10ϑ`, where smoothness is not guaranteed.
    pub heuristic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCertificate {
    pub grid: Vec<f64>,
    pub phi: Vec<f64>,
    pub theta: f64,
    pub gamma_star: f64,
    pub checks: Vec<IntervalCheck>,
    pub provenance: BoundProvenance,
}

impl GridCertificate {
    /// Recomputes the per-interval evidence for a given level `γ*`.
    pub fn from_nodes(
        grid: Vec<f64>,
        phi: Vec<f64>,
        theta: f64,
        gamma_star: f64,
        bound: &dyn FirstOrderBound,
    ) -> Self {
        let checks = grid
            .windows(2)
            .zip(phi.windows(2))
            .map(|(w, p)| {
                let m = bound.bound(w[0], w[1]);
                IntervalCheck {
                    lo: w[0],
                    hi: w[1],
                    phi_lo: p[0],
                    phi_hi: p[1],
                    bound: m,
                    lhs: m * (w[1] - w[0]),
                    rhs: 2.0 * gamma_star + 2.0 * theta - p[0] - p[1],
                    heuristic: p[0].max(p[1]) < gamma_star - 10.0 * theta,
                }
            })
            .collect();
        Self { grid, phi, theta, gamma_star, checks, provenance: bound.provenance() }
    }

    /// Intervals where `lhs < rhs` fails.
    pub fn failed_checks(&self) -> Vec<&IntervalCheck> {
        self.checks.iter().filter(|c| !(c.lhs < c.rhs)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# gamma_star = {:.16e}, theta = {:.16e}, nodes = {}, bound = {}",
            self.gamma_star,
            self.theta,
            self.grid.len(),
            self.provenance.name()
        );
        out.push_str("omega_lo,omega_hi,phi_lo,phi_hi,bound,lhs,rhs,heuristic\n");
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                c.lo, c.hi, c.phi_lo, c.phi_hi, c.bound, c.lhs, c.rhs, c.heuristic as u8
            );
        }
        out
    }
}

/// Reads the node list back from a certificate CSV.
pub fn parse_certificate_nodes(text: &str) -> Result<Vec<f64>, GridError> {
    let mut nodes: Vec<f64> = Vec::new();
    let mut header = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let l = line.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        if !header {
            if !l.starts_with("omega_lo,omega_hi") {
                return Err(GridError::Parse { line: line_no, msg: "missing header".into() });
            }
            header = true;
            continue;
        }
        let mut f = l.split(',');
        let mut next = |what: &str| -> Result<f64, GridError> {
            f.next()
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| GridError::Parse { line: line_no, msg: format!("bad {what}") })
        };
        let (lo, hi) = (next("omega_lo")?, next("omega_hi")?);
        match nodes.last() {
            None => nodes.push(lo),
            Some(&last) if last != lo => {
                return Err(GridError::Parse { line: line_no, msg: "intervals are not contiguous".into() })
            }
            _ => {}
        }
        if !(hi > lo) {
            return Err(GridError::Parse { line: line_no, msg: "interval not ascending".into() });
        }
        nodes.push(hi);
    }
    if nodes.len() < 2 {
        return Err(GridError::Parse { line: text.lines().count().max(1), msg: "no intervals".into() });
    }
    Ok(nodes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptions {
    pub budget: usize,
    /// `ω♯ = min(growth·ω_i + seed_fraction·(ω_max − ω_min), ω_max)`.
    pub growth: f64,
    pub seed_fraction: f64,
    pub bisection_steps: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self { budget: 100_000, growth: 1.5, seed_fraction: 1e-4, bisection_steps: 30 }
    }
}

/// Spacing rule: `M·(b − a) < 2·max(φa, φb) + 2ϑ − φa − φb`.
fn admissible(m: f64, a: f64, b: f64, fa: f64, fb: f64, theta: f64) -> bool {
    m * (b - a) < 2.0 * fa.max(fb) + 2.0 * theta - fa - fb
}

/// Builds `Ω` on `[ω_min, ω_max]` node by node. `ω_max` is taken as soon as
/// the spacing rule admits it; otherwise extrapolate to `ω♯`, accept it if
/// admissible, or bisect on `(ω_i, ω♯]` for the largest admissible node.
pub fn build_grid(
    phi: &Phi,
    bound: &dyn FirstOrderBound,
    theta: f64,
    range: (f64, f64),
    opts: &GridOptions,
) -> Result<GridCertificate, GridError> {
    let (wmin, wmax) = range;
    if !(theta > 0.0) || !(wmax > wmin) || !wmin.is_finite() || !wmax.is_finite() {
        return Err(GridError::Invalid(format!("need ϑ > 0 and ω_min < ω_max, got ϑ = {theta}, range = {range:?}")));
    }
    let seed = opts.seed_fraction * (wmax - wmin);
    let mut grid = vec![wmin];
    let mut vals = vec![eval(phi, wmin)?];
    let f_end = eval(phi, wmax)?;
    let finish = |grid: Vec<f64>, vals: Vec<f64>| {
        let gamma = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        GridCertificate::from_nodes(grid, vals, theta, gamma, bound)
    };
    while *grid.last().expect("nonempty") < wmax {
        let (wi, fi) = (*grid.last().expect("nonempty"), *vals.last().expect("nonempty"));
        if grid.len() >= opts.budget {
            return Err(GridError::Budget { budget: opts.budget, omega: wi, partial: Box::new(finish(grid, vals)) });
        }
        if admissible(bound.bound(wi, wmax), wi, wmax, fi, f_end, theta) {
            grid.push(wmax);
            vals.push(f_end);
            break;
        }
        let sharp = (opts.growth * wi + seed).min(wmax);
        let fs = if sharp == wmax { f_end } else { eval(phi, sharp)? };
        let next = if admissible(bound.bound(wi, sharp), wi, sharp, fi, fs, theta) {
            Some((sharp, fs))
        } else {
            let (mut lo, mut hi) = (wi, sharp);
            let mut best = None;
            for _ in 0..opts.bisection_steps {
                let mid = 0.5 * (lo + hi);
                if mid <= wi || mid >= hi {
                    break;
                }
                let fm = eval(phi, mid)?;
                if admissible(bound.bound(wi, mid), wi, mid, fi, fm, theta) {
                    best = Some((mid, fm));
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            best
        };
        let (w, f) = next.ok_or(GridError::Stalled { omega: wi })?;
        grid.push(w);
        vals.push(f);
    }
    Ok(finish(grid, vals))
}

/// Node-restricted variant for sampled data: greedily keeps the farthest
/// sample reachable under the spacing rule. Adjacent samples that already
/// violate the rule are kept and show up as failed checks.
pub fn build_grid_on_nodes(
    omegas: &[f64],
    values: &[f64],
    bound: &dyn FirstOrderBound,
    theta: f64,
) -> Result<GridCertificate, GridError> {
    if omegas.len() < 2 || omegas.len() != values.len() || !(theta > 0.0) {
        return Err(GridError::Invalid("need at least two samples and ϑ > 0".into()));
    }
    let mut keep = vec![0usize];
    let mut i = 0;
    while i + 1 < omegas.len() {
        let mut j = i + 1;
        while j + 1 < omegas.len() && admissible(bound.bound(omegas[i], omegas[j + 1]), omegas[i], omegas[j + 1], values[i], values[j + 1], theta) {
            j += 1;
        }
        keep.push(j);
        i = j;
    }
    let grid: Vec<f64> = keep.iter().map(|&k| omegas[k]).collect();
    let vals: Vec<f64> = keep.iter().map(|&k| values[k]).collect();
    let gamma = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(GridCertificate::from_nodes(grid, vals, theta, gamma, bound))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub pass: bool,
    pub gamma_star: f64,
    pub theta: f64,
    /// Largest φ found by the scan and where.
    pub scan_max: f64,
    pub scan_argmax: f64,
    /// Worst violating frequency of every interval whose scan exceeds `γ* + ϑ`.
    pub violations: Vec<f64>,
    pub scanned: usize,
}

/// Scans every interval of `grid` at `subnodes` uniform subdivisions and
/// compares against `γ* + ϑ`.
pub fn verify_scan(phi: &Phi, grid: &[f64], gamma_star: f64, theta: f64, subnodes: usize) -> Result<VerificationReport, GridError> {
    if grid.len() < 2 || subnodes == 0 {
        return Err(GridError::Invalid("verification needs an interval and at least one subnode".into()));
    }
    let mut points = Vec::with_capacity((grid.len() - 1) * subnodes + 1);
    let mut owner = Vec::with_capacity(points.capacity());
    for (k, w) in grid.windows(2).enumerate() {
        for j in 0..subnodes {
            points.push(w[0] + (w[1] - w[0]) * j as f64 / subnodes as f64);
            owner.push(k);
        }
    }
    points.push(*grid.last().expect("nonempty"));
    owner.push(grid.len() - 2);
    let vals = eval_all(phi, &points)?;
    let level = gamma_star + theta;
    let mut worst: Vec<Option<(f64, f64)>> = vec![None; grid.len() - 1];
    let (mut scan_max, mut scan_argmax) = (f64::NEG_INFINITY, points[0]);
    for ((&w, &v), &k) in points.iter().zip(&vals).zip(&owner) {
        if v > scan_max {
            scan_max = v;
            scan_argmax = w;
        }
        if v > level && worst[k].map_or(true, |(_, b)| v > b) {
            worst[k] = Some((w, v));
        }
    }
    let violations: Vec<f64> = worst.into_iter().flatten().map(|(w, _)| w).collect();
    Ok(VerificationReport {
        pass: violations.is_empty(),
        gamma_star,
        theta,
        scan_max,
        scan_argmax,
        violations,
        scanned: points.len(),
    })
}

/// Verification scan over the certificate's grid.
pub fn verify_certificate(phi: &Phi, cert: &GridCertificate, gamma_star: f64, subnodes: usize) -> Result<VerificationReport, GridError> {
    verify_scan(phi, &cert.grid, gamma_star, cert.theta, subnodes)
}

/// Verification against given samples (for data only known on its nodes):
/// every sample inside `[grid₀, grid_last]` is compared against `γ* + ϑ`.
pub fn verify_samples(
    grid: &[f64],
    omegas: &[f64],
    values: &[f64],
    gamma_star: f64,
    theta: f64,
) -> Result<VerificationReport, GridError> {
    if grid.len() < 2 || omegas.len() != values.len() {
        return Err(GridError::Invalid("verification needs an interval and matching samples".into()));
    }
    let (lo, hi) = (grid[0], *grid.last().expect("nonempty"));
    let level = gamma_star + theta;
    let mut worst: Vec<Option<(f64, f64)>> = vec![None; grid.len() - 1];
    let (mut scan_max, mut scan_argmax, mut scanned) = (f64::NEG_INFINITY, lo, 0);
    for (&w, &v) in omegas.iter().zip(values) {
        if w < lo || w > hi {
            continue;
        }
        scanned += 1;
        if v > scan_max {
            scan_max = v;
            scan_argmax = w;
        }
        let k = grid.partition_point(|&g| g <= w).clamp(1, grid.len() - 1) - 1;
        if v > level && worst[k].map_or(true, |(_, b)| v > b) {
            worst[k] = Some((w, v));
        }
    }
    let violations: Vec<f64> = worst.into_iter().flatten().map(|(w, _)| w).collect();
    Ok(VerificationReport { pass: violations.is_empty(), gamma_star, theta, scan_max, scan_argmax, violations, scanned })
}

/// Refinement nodes for a violating `ω`: the point and the midpoints to its
/// neighbouring grid nodes.
pub fn refinement_nodes(grid: &[f64], omega: f64) -> Vec<f64> {
    let i = grid.partition_point(|&w| w < omega);
    let mut out = vec![omega];
    if i > 0 {
        out.push(0.5 * (grid[i - 1] + omega));
    }
    if i < grid.len() {
        out.push(0.5 * (omega + grid[i]));
    }
    out.retain(|w| grid.binary_search_by(|g| g.total_cmp(w)).is_err());
    out
}

/// Inserts nodes into an ascending grid, dropping duplicates.
pub fn merge_nodes(grid: &[f64], extra: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = grid.iter().chain(extra).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ok(f: impl Fn(f64) -> f64 + Sync) -> impl Fn(f64) -> Result<f64, String> + Sync {
        move |w| Ok(f(w))
    }

    #[test]
    fn constant_phi_gives_two_nodes() {
        let phi = ok(|_| 1.0);
        let c = build_grid(&phi, &ConstantBound(0.0), 0.01, (0.1, 100.0), &GridOptions::default()).unwrap();
        assert_eq!(c.grid, vec![0.1, 100.0]);
        assert!(verify_certificate(&phi, &c, c.gamma_star, 10).unwrap().pass);
    }

    #[test]
    fn rule_arithmetic() {
        // φ = 1 at both ends, ϑ = 0.1, M = 2: admissible iff 2Δ < 0.2.
        assert!(admissible(2.0, 0.0, 0.099, 1.0, 1.0, 0.1));
        assert!(!admissible(2.0, 0.0, 0.1001, 1.0, 1.0, 0.1));
        let phi = ok(|_| 1.0);
        let opts = GridOptions { growth: 1.0, seed_fraction: 1.0, ..GridOptions::default() };
        let c = build_grid(&phi, &ConstantBound(2.0), 0.1, (0.0, 1.0), &opts).unwrap();
        let steps: Vec<f64> = c.grid.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(steps.iter().all(|&d| d < 0.1));
        // All but the final step land within bisection precision of the limit.
        assert!(steps[..steps.len() - 1].iter().all(|&d| d > 0.09));
        assert!(c.failed_checks().is_empty());
    }

    #[test]
    fn fd_bound_examples() {
        let w: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let lin: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
        assert!((fd_bound(&w, &lin, 0.0, 1.0).unwrap() - 3.0).abs() < 1e-12);
        let flat = vec![4.0; w.len()];
        assert_eq!(fd_bound(&w, &flat, 0.0, 1.0).unwrap(), 0.0);
        assert!(matches!(fd_bound(&w, &lin, 0.31, 0.39), Err(GridError::InsufficientResolution { .. })));
        let n = (std::f64::consts::PI / 1e-3) as usize;
        let ws: Vec<f64> = (0..=n).map(|i| i as f64 * 1e-3).collect();
        let s: Vec<f64> = ws.iter().map(|x| x.sin()).collect();
        let m = fd_bound(&ws, &s, 0.0, std::f64::consts::PI).unwrap();
        assert!((m - 1.5).abs() <= 0.02 * 1.5);
    }

    #[test]
    fn sampled_bound_is_monotone_under_inclusion() {
        let ws: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
        let vs: Vec<f64> = ws.iter().map(|x| (3.0 * x).sin() * x).collect();
        let b = SampledBound::new(ws, vs).unwrap();
        for &(a, c) in &[(0.1, 0.12), (1.0, 2.0), (0.0, 9.9), (3.33, 3.34)] {
            let inner = b.bound(a, c);
            assert!(inner <= b.bound(a - 0.5, c + 0.5) + 1e-15);
            assert!(inner >= 0.0);
        }
    }

    #[test]
    fn needle_between_nodes_is_located() {
        let smooth = |w: f64| 1.0 + 0.5 * (w).sin();
        let phi = ok(smooth);
        let theta = 0.01;
        let c = build_grid(&phi, &ConstantBound(0.5), theta, (0.0, 10.0), &GridOptions::default()).unwrap();
        assert!(verify_certificate(&phi, &c, c.gamma_star, 10).unwrap().pass);
        let k = c.grid.len() / 2;
        let (a, b) = (c.grid[k], c.grid[k + 1]);
        let centre = 0.5 * (a + b);
        let width = 0.3 * (b - a);
        let height = c.gamma_star + 2.0 * theta;
        let needle = ok(move |w| {
            let bump = (1.0 - ((w - centre) / width).abs()).max(0.0);
            smooth(w).max(height * bump)
        });
        let r = verify_certificate(&needle, &c, c.gamma_star, 10).unwrap();
        assert!(!r.pass);
        assert_eq!(r.violations.len(), 1);
        assert!((r.violations[0] - centre).abs() <= 0.5 * width);
        let extra = refinement_nodes(&c.grid, r.violations[0]);
        assert_eq!(extra.len(), 3);
        let merged = merge_nodes(&c.grid, &extra);
        assert_eq!(merged.len(), c.grid.len() + 3);
    }

    #[test]
    fn budget_error_returns_partial_grid() {
        let phi = ok(|w| (50.0 * w).sin());
        let opts = GridOptions { budget: 20, ..GridOptions::default() };
        match build_grid(&phi, &ConstantBound(50.0), 1e-3, (0.0, 10.0), &opts) {
            Err(GridError::Budget { partial, .. }) => assert_eq!(partial.grid.len(), 20),
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn node_restricted_grid() {
        let ws: Vec<f64> = (0..=1000).map(|i| i as f64 * 0.01).collect();
        let vs: Vec<f64> = ws.iter().map(|w| (w * 2.0).cos()).collect();
        let b = SampledBound::new(ws.clone(), vs.clone()).unwrap();
        let c = build_grid_on_nodes(&ws, &vs, &b, 0.01).unwrap();
        assert!(c.grid.len() < ws.len());
        assert!(c.failed_checks().is_empty());
        assert_eq!(c.grid[0], 0.0);
        assert_eq!(*c.grid.last().unwrap(), 10.0);
    }

    #[test]
    fn certificate_csv_round_trips_nodes() {
        let phi = ok(|w: f64| 1.0 / (1.0 + w * w));
        let c = build_grid(&phi, &ConstantBound(0.65), 0.01, (0.0, 5.0), &GridOptions::default()).unwrap();
        let text = c.to_csv();
        assert!(text.starts_with("# gamma_star = "));
        assert_eq!(parse_certificate_nodes(&text).unwrap(), c.grid);
        let broken = text.replacen("omega_lo,omega_hi", "x,y", 1);
        assert!(matches!(parse_certificate_nodes(&broken), Err(GridError::Parse { line: 2, .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        /// Sums of sines with a slope bound `Σ|a_k|·k`: the scan never exceeds `γ* + ϑ`.
        #[test]
        fn certified_grid_is_sound(amps in prop::collection::vec(-1.0f64..1.0, 1..4), theta in 0.005f64..0.1) {
            let a = amps.clone();
            let f = move |w: f64| 2.0 + a.iter().enumerate().map(|(k, c)| c * ((k + 1) as f64 * w).sin()).sum::<f64>();
            let m: f64 = amps.iter().enumerate().map(|(k, c)| c.abs() * (k + 1) as f64).sum();
            let phi = ok(f);
            let c = build_grid(&phi, &ConstantBound(m), theta, (0.0, 6.0), &GridOptions::default()).unwrap();
            prop_assert!(c.failed_checks().is_empty());
            let r = verify_certificate(&phi, &c, c.gamma_star, 10).unwrap();
            prop_assert!(r.pass);
            let dense = verify_scan(&phi, &c.grid, c.gamma_star, theta, 200).unwrap();
            prop_assert!(dense.pass);
        }
    }
}
