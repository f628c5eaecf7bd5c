//! Plant models: the reactor-convection-diffusion (RCD) transfer function, the
//! cavity-flow delay family, weighting filters, mixed-sensitivity assembly and
//! FRD file input/output.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::CMat;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("plant pole at s = {s}")]
    Pole { s: Complex64 },
    #[error("quadrature did not converge at s = {s}")]
    Precision { s: Complex64 },
    #[error("filter {filter} has a pole at ω = {omega}")]
    FilterPole { filter: String, omega: f64 },
    #[error("FRD line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("ω = {omega} is not a node of the FRD grid")]
    OffGrid { omega: f64 },
    #[error("invalid plant data: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(String),
}

// ---------------------------------------------------------------------------
// RCD reactor

/// Constants of the linear convection-diffusion-reaction tube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcdConstants {
    /// Diffusion coefficient, m²/min.
    pub d: f64,
    /// Steady flow velocity, m/min.
    pub u: f64,
    /// Inlet concentration, mol/m³.
    pub c_in: f64,
    /// Reaction rate.
    pub k: f64,
    /// Tube length, m.
    pub l: f64,
}

impl Default for RcdConstants {
    fn default() -> Self {
        Self { d: 1.05, u: 1.24, c_in: 0.5, k: 0.25, l: 6.36 }
    }
}

impl RcdConstants {
    pub fn a(&self) -> f64 {
        self.d / (self.l * self.l)
    }

    pub fn b(&self) -> f64 {
        -self.u / self.l
    }

    pub fn f(&self) -> f64 {
        let (a, b) = (self.a(), self.b());
        (b * b + 4.0 * a * self.k).sqrt()
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let vals = [self.d, self.u, self.c_in, self.k, self.l];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(PlantError::Invalid("non-finite RCD constant".into()));
        }
        if self.d <= 0.0 || self.l <= 0.0 || self.c_in <= 0.0 {
            return Err(PlantError::Invalid("D, L and C_in must be positive".into()));
        }
        let (a, b) = (self.a(), self.b());
        if b * b + 4.0 * a * self.k < 0.0 {
            return Err(PlantError::Invalid("b² + 4ak must be nonnegative".into()));
        }
        Ok(())
    }

    /// Common denominator of the steady state, scaled by `exp(−f/(2a))`.
    fn ss_den(&self) -> f64 {
        let (a, b, f, k) = (self.a(), self.b(), self.f(), self.k);
        (-b * f - 2.0 * a * k - b * b) * (-f / a).exp() - (b * f - 2.0 * a * k - b * b)
    }

    /// The two exponentials of the steady state at normalized position `x = z/L`.
    fn ss_exps(&self, x: f64) -> (f64, f64) {
        let (a, b, f) = (self.a(), self.b(), self.f());
        let e1 = (-(f + b) * x / (2.0 * a)).exp();
        let e2 = ((f * (x - 2.0) - b * x) / (2.0 * a)).exp();
        (e1, e2)
    }
}

/// Steady-state concentration `C_ss(z)` and its derivative `C_ss′(z)`.
pub fn rcd_steady_state(c: &RcdConstants, z: f64) -> (f64, f64) {
    let (b, f) = (c.b(), c.f());
    let den = c.ss_den();
    let (e1, e2) = c.ss_exps(z / c.l);
    let value = c.c_in * b * ((b - f) * e1 - (b + f) * e2) / den;
    let slope = 2.0 * c.c_in * b * c.k / (den * c.l) * (e1 - e2);
    (value, slope)
}

pub const QUAD_TOL: f64 = 1e-10;
pub const QUAD_MAX_INTERVALS: usize = 1_000_000;

/// Adaptive Simpson quadrature of a complex integrand on `[lo, hi]`.
/// Returns `None` when the interval budget runs out.
pub fn adaptive_simpson(
    f: impl Fn(f64) -> Complex64,
    lo: f64,
    hi: f64,
    tol: f64,
    max_intervals: usize,
) -> Option<Complex64> {
    const PANELS: usize = 16;
    struct Seg {
        lo: f64,
        hi: f64,
        flo: Complex64,
        fmid: Complex64,
        fhi: Complex64,
        whole: Complex64,
        tol: f64,
    }
    let simpson = |lo: f64, hi: f64, flo, fmid, fhi| (flo + fmid * 4.0 + fhi) * ((hi - lo) / 6.0);
    let mut stack = Vec::with_capacity(64);
    let w = (hi - lo) / PANELS as f64;
    for p in (0..PANELS).rev() {
        let a = lo + w * p as f64;
        let b = if p + 1 == PANELS { hi } else { lo + w * (p + 1) as f64 };
        let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
        stack.push(Seg { lo: a, hi: b, flo: fa, fmid: fm, fhi: fb, whole: simpson(a, b, fa, fm, fb), tol: tol / PANELS as f64 });
    }
    let mut total = Complex64::new(0.0, 0.0);
    let mut intervals = PANELS;
    while let Some(s) = stack.pop() {
        let mid = 0.5 * (s.lo + s.hi);
        let (m1, m2) = (0.5 * (s.lo + mid), 0.5 * (mid + s.hi));
        let (f1, f2) = (f(m1), f(m2));
        let left = simpson(s.lo, mid, s.flo, f1, s.fmid);
        let right = simpson(mid, s.hi, s.fmid, f2, s.fhi);
        let diff = left + right - s.whole;
        if !diff.re.is_finite() || !diff.im.is_finite() {
            return None;
        }
        if diff.norm() <= 15.0 * s.tol {
            total += left + right + diff / 15.0;
            continue;
        }
        intervals += 1;
        if intervals > max_intervals || s.hi - s.lo < 1e-14 {
            return None;
        }
        stack.push(Seg { lo: mid, hi: s.hi, flo: s.fmid, fmid: f2, fhi: s.fhi, whole: right, tol: 0.5 * s.tol });
        stack.push(Seg { lo: s.lo, hi: mid, flo: s.flo, fmid: f1, fhi: s.fmid, whole: left, tol: 0.5 * s.tol });
    }
    Some(total)
}

/// Transfer `u(s) → c(L, s)` from the inlet flow perturbation to the outlet
/// concentration.
///
/// The expression is rearranged so that only decaying exponentials appear,
/// which keeps it finite for large `|s|`:
/// `G = [(b+T1)J1 − (b−T1)J2 + 2β0·T1·e^{−(b+T1)/(2a)}] / (T2 + T6·e^{−T1/a})`
/// with `J1 = ∫ C_ss′(xL) e^{(b−T1)x/(2a) − (b+T1)/(2a)} dx`,
/// `J2 = ∫ C_ss′(xL) e^{(b+T1)(x−1)/(2a)} dx` on `[0, 1]`
/// and `β0 = (C_ss(0) − C_in)/L`.
pub fn rcd_transfer(c: &RcdConstants, s: Complex64) -> Result<Complex64, PlantError> {
    let (a, b) = (c.a(), c.b());
    let sk = s + c.k;
    let t1 = (sk * (4.0 * a) + b * b).sqrt();
    let t2 = t1 * b - sk * (2.0 * a) - b * b;
    let t6 = t1 * b + sk * (2.0 * a) + b * b;
    let h = |x: f64| rcd_steady_state(c, x * c.l).1;
    let p1 = (t1 * -1.0 + b) / (2.0 * a);
    let q1 = (t1 + b) / (2.0 * a);
    let j1 = adaptive_simpson(|x| (p1 * x - q1).exp() * h(x), 0.0, 1.0, QUAD_TOL, QUAD_MAX_INTERVALS)
        .ok_or(PlantError::Precision { s })?;
    let j2 = adaptive_simpson(|x| (q1 * (x - 1.0)).exp() * h(x), 0.0, 1.0, QUAD_TOL, QUAD_MAX_INTERVALS)
        .ok_or(PlantError::Precision { s })?;
    let beta0 = (rcd_steady_state(c, 0.0).0 - c.c_in) / c.l;
    let num = (t1 + b) * j1 - (t1 * -1.0 + b) * j2 + t1 * (2.0 * beta0) * (-q1).exp();
    let den = t2 + t6 * (t1 * (-1.0 / a)).exp();
    if den.norm() == 0.0 || !den.re.is_finite() || !den.im.is_finite() {
        return Err(PlantError::Pole { s });
    }
    let g = num / den;
    if !g.re.is_finite() || !g.im.is_finite() {
        return Err(PlantError::Pole { s });
    }
    Ok(g)
}

/// Order-`n` finite-difference semi-discretization of the same tube
/// (`n + 1` nodes, central differences, ghost nodes for both boundary
/// conditions), evaluated at `s` and read out at `z = L`.
pub fn rcd_transfer_fd(c: &RcdConstants, s: Complex64, n: usize) -> Result<Complex64, PlantError> {
    if n < 2 {
        return Err(PlantError::Invalid("finite-difference order must be at least 2".into()));
    }
    let h = c.l / n as f64;
    let west = c.d / (h * h) + c.u / (2.0 * h);
    let east = c.d / (h * h) - c.u / (2.0 * h);
    let centre = s * -1.0 - (2.0 * c.d / (h * h) + c.k);
    let m = n + 1;
    let mut lower = vec![Complex64::new(west, 0.0); m];
    let mut diag = vec![centre; m];
    let mut upper = vec![Complex64::new(east, 0.0); m];
    let mut rhs: Vec<Complex64> = (0..m).map(|i| Complex64::new(rcd_steady_state(c, i as f64 * h).1, 0.0)).collect();
    let css0 = rcd_steady_state(c, 0.0).0;
    // Ghost node left of z = 0 from D c′(0) = U c(0) + (C_ss(0) − C_in).
    upper[0] += west;
    diag[0] -= west * 2.0 * h * c.u / c.d;
    rhs[0] -= west * 2.0 * h * (c.c_in - css0) / c.d;
    // Ghost node right of z = L mirrors c_{n−1}.
    lower[n] += east;
    // Thomas algorithm.
    for i in 1..m {
        if diag[i - 1].norm() == 0.0 {
            return Err(PlantError::Pole { s });
        }
        let w = lower[i] / diag[i - 1];
        diag[i] = diag[i] - w * upper[i - 1];
        rhs[i] = rhs[i] - w * rhs[i - 1];
    }
    let mut x = vec![Complex64::new(0.0, 0.0); m];
    x[n] = rhs[n] / diag[n];
    for i in (0..n).rev() {
        x[i] = (rhs[i] - upper[i] * x[i + 1]) / diag[i];
    }
    if !x[n].re.is_finite() || !x[n].im.is_finite() {
        return Err(PlantError::Pole { s });
    }
    Ok(x[n])
}

// ---------------------------------------------------------------------------
// Cavity flow

/// `G(s) = e^{−τ1 s}/(p2(s) + q2(s)e^{−τ2 s} + c·e^{−τ3 s})`; polynomials in
/// descending powers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityParams {
    pub p2: [f64; 3],
    pub q2: [f64; 3],
    pub c: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
}

impl CavityParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let scalars = [self.c, self.tau1, self.tau2, self.tau3];
        if self.p2.iter().chain(&self.q2).chain(&scalars).any(|v| !v.is_finite()) {
            return Err(PlantError::Invalid("non-finite cavity parameter".into()));
        }
        if self.tau1 <= 0.0 || self.tau2 <= 0.0 || self.tau3 <= 0.0 {
            return Err(PlantError::Invalid("cavity delays must be positive".into()));
        }
        if self.p2[0] == 0.0 {
            return Err(PlantError::Invalid("leading coefficient of p2 is zero".into()));
        }
        Ok(())
    }
}

pub fn cavity_transfer(p: &CavityParams, s: Complex64) -> Result<Complex64, PlantError> {
    let den = polyval(&p.p2, s) + polyval(&p.q2, s) * (s * -p.tau2).exp() + (s * -p.tau3).exp() * p.c;
    if den.norm() == 0.0 {
        return Err(PlantError::Pole { s });
    }
    let g = (s * -p.tau1).exp() / den;
    if !g.re.is_finite() || !g.im.is_finite() {
        return Err(PlantError::Pole { s });
    }
    Ok(g)
}

fn polyval(coeffs: &[f64], s: Complex64) -> Complex64 {
    coeffs.iter().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * s + c)
}

// ---------------------------------------------------------------------------
// Filters

/// Real rational filter, coefficients in descending powers of `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalFilter {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

impl RationalFilter {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self, PlantError> {
        if num.is_empty() || den.is_empty() {
            return Err(PlantError::Invalid("empty filter polynomial".into()));
        }
        if num.iter().chain(den.iter()).any(|v| !v.is_finite()) || den.iter().all(|&v| v == 0.0) {
            return Err(PlantError::Invalid("filter coefficients must be finite, denominator nonzero".into()));
        }
        Ok(Self { num, den })
    }

    pub fn constant(k: f64) -> Self {
        Self { num: vec![k], den: vec![1.0] }
    }

    pub fn at(&self, s: Complex64) -> Option<Complex64> {
        let d = polyval(&self.den, s);
        if d.norm() == 0.0 {
            return None;
        }
        Some(polyval(&self.num, s) / d)
    }

    /// Value at `jω`; `name` labels the error.
    pub fn eval(&self, name: &str, omega: f64) -> Result<Complex64, PlantError> {
        self.at(Complex64::new(0.0, omega)).ok_or_else(|| PlantError::FilterPole { filter: name.into(), omega })
    }

    /// RCD performance weight `(1e-5 s + 5)/(s + 0.25)`.
    pub fn rcd_we() -> Self {
        Self { num: vec![1e-5, 5.0], den: vec![1.0, 0.25] }
    }

    /// Noise weight `(0.00125 s² + 0.00035 s + 0.00005)/(0.000025 s² + 0.007 s + 1)`.
    pub fn rcd_wn() -> Self {
        Self { num: vec![0.00125, 0.00035, 0.00005], den: vec![0.000025, 0.007, 1.0] }
    }

    pub fn rcd_wu() -> Self {
        Self::constant(0.1)
    }
}

// ---------------------------------------------------------------------------
// Generalized plant

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantDims {
    pub nz: usize,
    pub nw: usize,
    pub ny: usize,
    pub nu: usize,
}

/// The four blocks of `P(jω)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantSample {
    pub p11: CMat,
    pub p12: CMat,
    pub p21: CMat,
    pub p22: CMat,
}

impl PlantSample {
    pub fn dims(&self) -> PlantDims {
        PlantDims { nz: self.p11.rows(), nw: self.p11.cols(), ny: self.p22.rows(), nu: self.p22.cols() }
    }

    fn check(&self) -> Result<PlantDims, PlantError> {
        let d = self.dims();
        let ok = self.p12.rows() == d.nz
            && self.p12.cols() == d.nu
            && self.p21.rows() == d.ny
            && self.p21.cols() == d.nw
            && d.nz > 0
            && d.nw > 0
            && d.ny > 0
            && d.nu > 0;
        if !ok {
            return Err(PlantError::Dimension("inconsistent P blocks".into()));
        }
        if ![&self.p11, &self.p12, &self.p21, &self.p22].iter().all(|m| m.is_finite()) {
            return Err(PlantError::Invalid("non-finite plant sample".into()));
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelRole {
    Performance,
    /// Scaled sensitivity stacked in as a stability barrier.
    Barrier,
}

/// A sub-block `T[rows, cols]` of the closed loop whose σ̄ enters the objective.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Channel {
    pub role: ChannelRole,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

/// Anything that can produce `P(jω)`.
pub trait PlantSource: Sync {
    fn dims(&self) -> PlantDims;
    fn channels(&self) -> Vec<Channel>;
    fn sample(&self, omega: f64) -> Result<PlantSample, PlantError>;
    /// Sampled sources are only defined on their nodes.
    fn nodes(&self) -> Option<&[f64]> {
        None
    }
}

/// Samples of the generalized plant on an ascending grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FrdPlant {
    grid: Vec<f64>,
    samples: Vec<PlantSample>,
    dims: PlantDims,
    channels: Vec<Channel>,
}

fn check_grid(grid: &[f64]) -> Result<(), PlantError> {
    if grid.is_empty() {
        return Err(PlantError::Invalid("empty frequency grid".into()));
    }
    if grid.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(PlantError::Invalid("frequencies must be finite and nonnegative".into()));
    }
    if grid.windows(2).any(|p| p[1] <= p[0]) {
        return Err(PlantError::Invalid("frequency grid not strictly ascending".into()));
    }
    Ok(())
}

fn check_channels(channels: &[Channel], d: PlantDims) -> Result<(), PlantError> {
    if channels.is_empty() {
        return Err(PlantError::Invalid("no objective channel".into()));
    }
    for ch in channels {
        if ch.rows.is_empty() || ch.cols.is_empty() || ch.rows.iter().any(|&r| r >= d.nz) || ch.cols.iter().any(|&c| c >= d.nw) {
            return Err(PlantError::Dimension("channel indices outside P11".into()));
        }
    }
    Ok(())
}

/// The full `w → z` map as the only performance channel.
pub fn full_channel(d: PlantDims) -> Vec<Channel> {
    vec![Channel { role: ChannelRole::Performance, rows: (0..d.nz).collect(), cols: (0..d.nw).collect() }]
}

fn grid_index(grid: &[f64], omega: f64) -> Option<usize> {
    let i = grid.partition_point(|&w| w < omega);
    let close = |j: usize| (grid[j] - omega).abs() <= 1e-12 * omega.abs().max(1e-300);
    if i < grid.len() && close(i) {
        Some(i)
    } else if i > 0 && close(i - 1) {
        Some(i - 1)
    } else {
        None
    }
}

impl FrdPlant {
    pub fn new(grid: Vec<f64>, samples: Vec<PlantSample>, channels: Vec<Channel>) -> Result<Self, PlantError> {
        check_grid(&grid)?;
        if samples.len() != grid.len() {
            return Err(PlantError::Dimension(format!("{} samples for {} frequencies", samples.len(), grid.len())));
        }
        let dims = samples[0].check()?;
        for s in &samples[1..] {
            if s.check()? != dims {
                return Err(PlantError::Dimension("block dimensions change across the grid".into()));
            }
        }
        check_channels(&channels, dims)?;
        Ok(Self { grid, samples, dims, channels })
    }

    /// Samples `source` on `grid` (in parallel, result independent of scheduling).
    pub fn from_source(source: &dyn PlantSource, grid: &[f64]) -> Result<Self, PlantError> {
        check_grid(grid)?;
        let results: Vec<Result<PlantSample, PlantError>> = grid.par_iter().map(|&w| source.sample(w)).collect();
        let samples = results.into_iter().collect::<Result<Vec<_>, _>>()?;
        Self::new(grid.to_vec(), samples, source.channels())
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn samples(&self) -> &[PlantSample] {
        &self.samples
    }

    pub fn channels_ref(&self) -> &[Channel] {
        &self.channels
    }

    pub fn with_channels(mut self, channels: Vec<Channel>) -> Result<Self, PlantError> {
        check_channels(&channels, self.dims)?;
        self.channels = channels;
        Ok(self)
    }

    /// Restriction to the given node indices (ascending).
    pub fn subset(&self, idx: &[usize]) -> Result<Self, PlantError> {
        let grid = idx.iter().map(|&i| self.grid[i]).collect();
        let samples = idx.iter().map(|&i| self.samples[i].clone()).collect();
        Self::new(grid, samples, self.channels.clone())
    }
}

impl PlantSource for FrdPlant {
    fn dims(&self) -> PlantDims {
        self.dims
    }

    fn channels(&self) -> Vec<Channel> {
        self.channels.clone()
    }

    fn sample(&self, omega: f64) -> Result<PlantSample, PlantError> {
        grid_index(&self.grid, omega).map(|i| self.samples[i].clone()).ok_or(PlantError::OffGrid { omega })
    }

    fn nodes(&self) -> Option<&[f64]> {
        Some(&self.grid)
    }
}

// ---------------------------------------------------------------------------
// Mixed sensitivity

/// Weights of the noise-rejection loop: `e = r − W_n·n − G·u`, regulated
/// outputs `(W_e·e, W_u·u, c·e)`, measurement `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRejectionWeights {
    pub we: RationalFilter,
    pub wn: RationalFilter,
    pub wu: RationalFilter,
}

impl NoiseRejectionWeights {
    pub fn rcd() -> Self {
        Self { we: RationalFilter::rcd_we(), wn: RationalFilter::rcd_wn(), wu: RationalFilter::rcd_wu() }
    }
}

/// Weights of the `(W1·S, W2·T)` loop driven by `r` alone.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityWeights {
    pub w1: RationalFilter,
    pub w2: RationalFilter,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Weighting {
    NoiseRejection(NoiseRejectionWeights),
    Sensitivity(SensitivityWeights),
}

fn block(rows: usize, cols: usize, parts: &[(&CMat, usize, usize)]) -> CMat {
    let mut m = CMat::zeros(rows, cols);
    for &(p, r0, c0) in parts {
        for i in 0..p.rows() {
            for j in 0..p.cols() {
                m[(r0 + i, c0 + j)] = p[(i, j)];
            }
        }
    }
    m
}

fn eye(n: usize, s: Complex64) -> CMat {
    CMat::identity(n).scale(s)
}

/// Generalized plant at `ω` for the noise-rejection loop around `G` (`ny × nu`).
///
/// `w = (r, n)`, `z = (W_e·e, W_u·u, c·e)`, `y = e = r − W_n·n − G·u`, so that
/// closing `u = K·y` gives `e = S·(r − W_n·n)` with `S = (I + GK)⁻¹`.
pub fn assemble_mixed_sensitivity(
    g: &CMat,
    omega: f64,
    w: &NoiseRejectionWeights,
    c: f64,
) -> Result<PlantSample, PlantError> {
    let (ny, nu) = (g.rows(), g.cols());
    let we = w.we.eval("W_e", omega)?;
    let wn = w.wn.eval("W_n", omega)?;
    let wu = w.wu.eval("W_u", omega)?;
    let one = Complex64::new(1.0, 0.0);
    let cc = Complex64::new(c, 0.0);
    let (nz, nw) = (2 * ny + nu, 2 * ny);
    let p11 = block(
        nz,
        nw,
        &[
            (&eye(ny, we), 0, 0),
            (&eye(ny, -we * wn), 0, ny),
            (&eye(ny, cc), ny + nu, 0),
            (&eye(ny, -cc * wn), ny + nu, ny),
        ],
    );
    let p12 = block(nz, nu, &[(&g.scale(-we), 0, 0), (&eye(nu, wu), ny, 0), (&g.scale(-cc), ny + nu, 0)]);
    let p21 = block(ny, nw, &[(&eye(ny, one), 0, 0), (&eye(ny, -wn), 0, ny)]);
    let p22 = g.scale(-one);
    Ok(PlantSample { p11, p12, p21, p22 })
}

/// Generalized plant at `ω` for the `(W1·S, W2·T)` loop: `w = r`,
/// `z = (W1·e, W2·G·u, c·e)`, `y = e = r − G·u`.
pub fn assemble_sensitivity(g: &CMat, omega: f64, w: &SensitivityWeights, c: f64) -> Result<PlantSample, PlantError> {
    let (ny, nu) = (g.rows(), g.cols());
    let w1 = w.w1.eval("W1", omega)?;
    let w2 = w.w2.eval("W2", omega)?;
    let one = Complex64::new(1.0, 0.0);
    let cc = Complex64::new(c, 0.0);
    let nz = 3 * ny;
    let p11 = block(nz, ny, &[(&eye(ny, w1), 0, 0), (&eye(ny, cc), 2 * ny, 0)]);
    let p12 = block(nz, nu, &[(&g.scale(-w1), 0, 0), (&g.scale(w2), ny, 0), (&g.scale(-cc), 2 * ny, 0)]);
    let p21 = eye(ny, one);
    let p22 = g.scale(-one);
    Ok(PlantSample { p11, p12, p21, p22 })
}

/// Sampled open-loop response `G(jω)` on an ascending grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FrdResponse {
    pub grid: Vec<f64>,
    pub values: Vec<CMat>,
}

impl FrdResponse {
    pub fn new(grid: Vec<f64>, values: Vec<CMat>) -> Result<Self, PlantError> {
        check_grid(&grid)?;
        if values.len() != grid.len() {
            return Err(PlantError::Dimension("one response sample per frequency required".into()));
        }
        let (r, c) = (values[0].rows(), values[0].cols());
        if r == 0 || c == 0 || values.iter().any(|v| v.rows() != r || v.cols() != c) {
            return Err(PlantError::Dimension("response samples change shape".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PlantError::Invalid("non-finite response sample".into()));
        }
        Ok(Self { grid, values })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpenLoop {
    Rcd(RcdConstants),
    Cavity(CavityParams),
    Frd(FrdResponse),
    /// Frequency-independent gain, handy for tests.
    Constant(CMat),
}

impl OpenLoop {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Self::Rcd(_) | Self::Cavity(_) => (1, 1),
            Self::Frd(r) => (r.values[0].rows(), r.values[0].cols()),
            Self::Constant(g) => (g.rows(), g.cols()),
        }
    }

    pub fn eval(&self, omega: f64) -> Result<CMat, PlantError> {
        let s = Complex64::new(0.0, omega);
        match self {
            Self::Rcd(c) => rcd_transfer(c, s).map(CMat::scalar),
            Self::Cavity(p) => cavity_transfer(p, s).map(CMat::scalar),
            Self::Frd(r) => grid_index(&r.grid, omega).map(|i| r.values[i].clone()).ok_or(PlantError::OffGrid { omega }),
            Self::Constant(g) => Ok(g.clone()),
        }
    }
}

/// Open loop plus weights plus barrier level `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSensitivity {
    pub open_loop: OpenLoop,
    pub weighting: Weighting,
    pub barrier: f64,
}

impl MixedSensitivity {
    pub fn new(open_loop: OpenLoop, weighting: Weighting, barrier: f64) -> Result<Self, PlantError> {
        if !(barrier > 0.0 && barrier.is_finite()) {
            return Err(PlantError::Invalid("barrier level c must be positive".into()));
        }
        let (ny, nu) = open_loop.shape();
        if matches!(weighting, Weighting::Sensitivity(_)) && ny != nu {
            return Err(PlantError::Dimension("the (W1·S, W2·T) loop needs a square plant".into()));
        }
        Ok(Self { open_loop, weighting, barrier })
    }
}

impl PlantSource for MixedSensitivity {
    fn dims(&self) -> PlantDims {
        let (ny, nu) = self.open_loop.shape();
        match self.weighting {
            Weighting::NoiseRejection(_) => PlantDims { nz: 2 * ny + nu, nw: 2 * ny, ny, nu },
            Weighting::Sensitivity(_) => PlantDims { nz: 3 * ny, nw: ny, ny, nu },
        }
    }

    fn channels(&self) -> Vec<Channel> {
        let (ny, nu) = self.open_loop.shape();
        match self.weighting {
            Weighting::NoiseRejection(_) => vec![
                Channel { role: ChannelRole::Performance, rows: (0..ny + nu).collect(), cols: (0..2 * ny).collect() },
                Channel { role: ChannelRole::Barrier, rows: (ny + nu..2 * ny + nu).collect(), cols: (0..ny).collect() },
            ],
            Weighting::Sensitivity(_) => vec![
                Channel { role: ChannelRole::Performance, rows: (0..2 * ny).collect(), cols: (0..ny).collect() },
                Channel { role: ChannelRole::Barrier, rows: (2 * ny..3 * ny).collect(), cols: (0..ny).collect() },
            ],
        }
    }

    fn sample(&self, omega: f64) -> Result<PlantSample, PlantError> {
        let g = self.open_loop.eval(omega)?;
        match &self.weighting {
            Weighting::NoiseRejection(w) => assemble_mixed_sensitivity(&g, omega, w, self.barrier),
            Weighting::Sensitivity(w) => assemble_sensitivity(&g, omega, w, self.barrier),
        }
    }

    fn nodes(&self) -> Option<&[f64]> {
        match &self.open_loop {
            OpenLoop::Frd(r) => Some(&r.grid),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// FRD files

pub const FRD_HEADER: &str = "omega_radps,block,row,col,re,im";
/// Alternative header for data given in Hz; converted to rad/s on load.
pub const FRD_HEADER_HZ: &str = "freq_hz,block,row,col,re,im";

const BLOCKS: [&str; 4] = ["P11", "P12", "P21", "P22"];

struct RawRecord {
    line: usize,
    omega: f64,
    block: usize,
    row: usize,
    col: usize,
    value: Complex64,
}

fn parse_records(text: &str, blocks: &[&str]) -> Result<Vec<RawRecord>, PlantError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines.next().ok_or(PlantError::Parse { line: 1, msg: "missing header".into() })?;
    let scale = if header == FRD_HEADER {
        1.0
    } else if header == FRD_HEADER_HZ {
        2.0 * std::f64::consts::PI
    } else {
        return Err(PlantError::Parse { line: hline, msg: format!("expected header `{FRD_HEADER}` or `{FRD_HEADER_HZ}`") });
    };
    let mut out = Vec::new();
    for (line, l) in lines {
        let err = |msg: String| PlantError::Parse { line, msg };
        let f: Vec<&str> = l.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", f.len())));
        }
        let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| err(format!("bad {what} `{s}`")));
        let idx = |s: &str, what: &str| s.parse::<usize>().map_err(|_| err(format!("bad {what} `{s}`")));
        let omega = num(f[0], "frequency")? * scale;
        let block = blocks.iter().position(|b| *b == f[1]).ok_or_else(|| err(format!("unknown block `{}`", f[1])))?;
        let (row, col) = (idx(f[2], "row")?, idx(f[3], "col")?);
        let value = Complex64::new(num(f[4], "real part")?, num(f[5], "imaginary part")?);
        if !omega.is_finite() || omega < 0.0 || !value.re.is_finite() || !value.im.is_finite() {
            return Err(err("non-finite or negative value".into()));
        }
        if let Some(prev) = out.last().map(|r: &RawRecord| r.omega) {
            if omega < prev {
                return Err(err("frequencies not ascending".into()));
            }
        }
        out.push(RawRecord { line, omega, block, row, col, value });
    }
    if out.is_empty() {
        return Err(PlantError::Parse { line: hline, msg: "no data rows".into() });
    }
    Ok(out)
}

/// Groups records per frequency into dense matrices of the shapes found at the
/// first frequency.
fn group_records(records: Vec<RawRecord>, nblocks: usize) -> Result<(Vec<f64>, Vec<Vec<CMat>>), PlantError> {
    let first = records[0].omega;
    let mut shape = vec![(0usize, 0usize); nblocks];
    for r in records.iter().take_while(|r| r.omega == first) {
        shape[r.block].0 = shape[r.block].0.max(r.row + 1);
        shape[r.block].1 = shape[r.block].1.max(r.col + 1);
    }
    let per_freq: usize = shape.iter().map(|(r, c)| r * c).sum();
    if shape.iter().any(|&(r, c)| r == 0 || c == 0) {
        return Err(PlantError::Dimension("a block is missing at the first frequency".into()));
    }
    let mut grid = Vec::new();
    let mut mats = Vec::new();
    let mut i = 0;
    while i < records.len() {
        let omega = records[i].omega;
        let mut cur: Vec<CMat> = shape.iter().map(|&(r, c)| CMat::zeros(r, c)).collect();
        let mut seen: Vec<Vec<bool>> = shape.iter().map(|&(r, c)| vec![false; r * c]).collect();
        let mut count = 0;
        while i < records.len() && records[i].omega == omega {
            let r = &records[i];
            let (nr, nc) = shape[r.block];
            if r.row >= nr || r.col >= nc {
                return Err(PlantError::Dimension(format!("line {}: entry outside the {}×{} block", r.line, nr, nc)));
            }
            let k = r.row * nc + r.col;
            if seen[r.block][k] {
                return Err(PlantError::Parse { line: r.line, msg: "duplicate entry".into() });
            }
            seen[r.block][k] = true;
            cur[r.block][(r.row, r.col)] = r.value;
            count += 1;
            i += 1;
        }
        if count != per_freq {
            return Err(PlantError::Dimension(format!("ω = {omega}: {count} entries, expected {per_freq}")));
        }
        grid.push(omega);
        mats.push(cur);
    }
    Ok((grid, mats))
}

/// Parses the FRD CSV text of a generalized plant. The objective channel is
/// the full `w → z` map.
pub fn frd_parse(text: &str) -> Result<FrdPlant, PlantError> {
    let (grid, mats) = group_records(parse_records(text, &BLOCKS)?, 4)?;
    let samples: Vec<PlantSample> = mats
        .into_iter()
        .map(|mut m| {
            let p22 = m.pop().expect("4 blocks");
            let p21 = m.pop().expect("4 blocks");
            let p12 = m.pop().expect("4 blocks");
            let p11 = m.pop().expect("4 blocks");
            PlantSample { p11, p12, p21, p22 }
        })
        .collect();
    let dims = samples[0].check()?;
    FrdPlant::new(grid, samples, full_channel(dims))
}

pub fn frd_load(path: &Path) -> Result<FrdPlant, PlantError> {
    let text = std::fs::read_to_string(path).map_err(|e| PlantError::Io(format!("{}: {e}", path.display())))?;
    frd_parse(&text)
}

fn write_block(out: &mut String, omega: f64, name: &str, m: &CMat) {
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let v = m[(i, j)];
            let _ = writeln!(out, "{omega:.16e},{name},{i},{j},{:.16e},{:.16e}", v.re, v.im);
        }
    }
}

pub fn frd_to_string(p: &FrdPlant) -> String {
    let mut out = String::from(FRD_HEADER);
    out.push('\n');
    for (w, s) in p.grid.iter().zip(&p.samples) {
        for (name, m) in BLOCKS.iter().zip([&s.p11, &s.p12, &s.p21, &s.p22]) {
            write_block(&mut out, *w, name, m);
        }
    }
    out
}

pub fn frd_save(p: &FrdPlant, path: &Path) -> Result<(), PlantError> {
    std::fs::write(path, frd_to_string(p)).map_err(|e| PlantError::Io(format!("{}: {e}", path.display())))
}

/// Parses an open-loop response file: same layout, single block named `G`.
pub fn frd_parse_response(text: &str) -> Result<FrdResponse, PlantError> {
    let (grid, mats) = group_records(parse_records(text, &["G"])?, 1)?;
    FrdResponse::new(grid, mats.into_iter().map(|mut m| m.pop().expect("one block")).collect())
}

pub fn frd_load_response(path: &Path) -> Result<FrdResponse, PlantError> {
    let text = std::fs::read_to_string(path).map_err(|e| PlantError::Io(format!("{}: {e}", path.display())))?;
    frd_parse_response(&text)
}

pub fn frd_response_to_string(r: &FrdResponse) -> String {
    let mut out = String::from(FRD_HEADER);
    out.push('\n');
    for (w, g) in r.grid.iter().zip(&r.values) {
        write_block(&mut out, *w, "G", g);
    }
    out
}

/// `n` logarithmically spaced frequencies on `[lo, hi]`, endpoints exact.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && lo > 0.0 && hi > lo);
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| match i {
            0 => lo,
            _ if i + 1 == n => hi,
            _ => 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn j(w: f64) -> Complex64 {
        Complex64::new(0.0, w)
    }

    #[test]
    fn steady_state_boundary_conditions() {
        let c = RcdConstants::default();
        let (c0, d0) = rcd_steady_state(&c, 0.0);
        let (_, dl) = rcd_steady_state(&c, c.l);
        assert!((c.d * d0 - c.u * (c0 - c.c_in)).abs() < 1e-9);
        assert!(dl.abs() < 1e-9);
    }

    #[test]
    fn steady_state_derivative_matches_differences() {
        let c = RcdConstants::default();
        for i in 1..20 {
            let z = c.l * i as f64 / 20.0;
            let h = 1e-5;
            let fd = (rcd_steady_state(&c, z + h).0 - rcd_steady_state(&c, z - h).0) / (2.0 * h);
            let d = rcd_steady_state(&c, z).1;
            assert!((fd - d).abs() <= 1e-8 * d.abs().max(1e-3), "z={z}: {fd} vs {d}");
        }
    }

    /// RK4 shooting from `z = L` backwards with `C′(L) = 0`; the problem is
    /// linear, so two shots pin down `C(L)` through the inlet condition.
    fn shooting_c0(c: &RcdConstants) -> f64 {
        let n = 20_000;
        let h = -c.l / n as f64;
        let shoot = |cl: f64| {
            let rhs = |y: [f64; 2]| [y[1], (c.u * y[1] + c.k * y[0]) / c.d];
            let mut y = [cl, 0.0];
            for _ in 0..n {
                let k1 = rhs(y);
                let k2 = rhs([y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
                let k3 = rhs([y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
                let k4 = rhs([y[0] + h * k3[0], y[1] + h * k3[1]]);
                y[0] += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
                y[1] += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
            }
            y
        };
        let residual = |y: [f64; 2]| c.d * y[1] - c.u * (y[0] - c.c_in);
        let (y0, y1) = (shoot(0.0), shoot(1.0));
        let (r0, r1) = (residual(y0), residual(y1));
        let cl = -r0 / (r1 - r0);
        shoot(cl)[0]
    }

    #[test]
    fn steady_state_matches_shooting() {
        let c = RcdConstants::default();
        let c0 = rcd_steady_state(&c, 0.0).0;
        assert!((c0 - shooting_c0(&c)).abs() < 1e-6);
        assert!((c0 - 0.4353049972588473).abs() < 1e-12);
        assert!((rcd_steady_state(&c, c.l).0 - 0.16099712385306705).abs() < 1e-12);
    }

    #[test]
    fn simpson_integrates_exponential() {
        let q = Complex64::new(-3.0, 40.0);
        let got = adaptive_simpson(|x| (q * x).exp(), 0.0, 1.0, 1e-12, 100_000).unwrap();
        let want = (q.exp() - 1.0) / q;
        assert!((got - want).norm() < 1e-11);
        assert!(adaptive_simpson(|x| Complex64::new(1.0 / x, 0.0), 0.0, 1.0, 1e-10, 100).is_none());
    }

    /// Closed-form `∫₀¹ C_ss′(xL)·e^{p x + q} dx`, using that `C_ss′` is a
    /// difference of two exponentials in `x`.
    fn exact_integral(c: &RcdConstants, p: Complex64, q: Complex64) -> Complex64 {
        let (a, b, f) = (c.a(), c.b(), c.f());
        let k0 = 2.0 * c.c_in * b * c.k / (c.ss_den() * c.l);
        let r1 = p - (f + b) / (2.0 * a);
        let r2 = p + (f - b) / (2.0 * a);
        let int = |r: Complex64| (r.exp() - 1.0) / r;
        (int(r1) - int(r2) * (-f / a).exp()) * q.exp() * k0
    }

    fn transfer_closed_form(c: &RcdConstants, s: Complex64) -> Complex64 {
        let (a, b) = (c.a(), c.b());
        let sk = s + c.k;
        let t1 = (sk * (4.0 * a) + b * b).sqrt();
        let t2 = t1 * b - sk * (2.0 * a) - b * b;
        let t6 = t1 * b + sk * (2.0 * a) + b * b;
        let q1 = (t1 + b) / (2.0 * a);
        let j1 = exact_integral(c, (t1 * -1.0 + b) / (2.0 * a), -q1);
        let j2 = exact_integral(c, q1, -q1);
        let beta0 = (rcd_steady_state(c, 0.0).0 - c.c_in) / c.l;
        ((t1 + b) * j1 - (t1 * -1.0 + b) * j2 + t1 * (2.0 * beta0) * (-q1).exp()) / (t2 + t6 * (t1 * (-1.0 / a)).exp())
    }

    #[test]
    fn transfer_quadrature_matches_closed_form() {
        let c = RcdConstants::default();
        for &w in &[1e-3, 0.1, 1.0, 10.0, 100.0, 1e3] {
            let got = rcd_transfer(&c, j(w)).unwrap();
            let want = transfer_closed_form(&c, j(w));
            assert!((got - want).norm() <= 1e-8 * want.norm() + 1e-11, "ω={w}: {got} vs {want}");
        }
    }

    #[test]
    fn transfer_reference_values() {
        let c = RcdConstants::default();
        let g = rcd_transfer(&c, j(1e-3)).unwrap();
        assert!((g - Complex64::new(0.11854426727, -0.00033292712)).norm() < 1e-9);
        let g = rcd_transfer(&c, j(1.0)).unwrap();
        assert!((g - Complex64::new(-0.0165166143, -0.0308584077)).norm() < 1e-9);
    }

    #[test]
    fn transfer_matches_finite_differences_at_low_frequency() {
        let c = RcdConstants::default();
        for &w in &[1e-3, 1e-2, 0.1, 0.5, 1.0] {
            let g = rcd_transfer(&c, j(w)).unwrap();
            let fd = rcd_transfer_fd(&c, j(w), 2000).unwrap();
            assert!((g.norm() - fd.norm()).abs() <= 0.01 * fd.norm(), "ω={w}");
        }
    }

    #[test]
    fn transfer_conjugate_symmetry() {
        let c = RcdConstants::default();
        for &w in &[0.01, 0.3, 2.0, 50.0] {
            let gp = rcd_transfer(&c, j(w)).unwrap();
            let gm = rcd_transfer(&c, j(-w)).unwrap();
            assert!((gp - gm.conj()).norm() < 1e-9);
        }
    }

    #[test]
    fn transfer_decreases_with_reaction_rate() {
        let base = RcdConstants::default();
        for &w in &[0.01, 1.0] {
            let mut prev = f64::INFINITY;
            for i in 0..12 {
                let c = RcdConstants { k: 0.25 * 2f64.powi(i), ..base };
                let m = rcd_transfer(&c, j(w)).unwrap().norm();
                assert!(m <= prev * (1.0 + 1e-9), "k={} ω={w}", c.k);
                prev = m;
            }
        }
    }

    #[test]
    fn cavity_degenerates_to_rational() {
        let p = CavityParams { p2: [1.0, 2.0, 5.0], q2: [0.0; 3], c: 0.0, tau1: 0.0, tau2: 0.0, tau3: 0.0 };
        let s = j(1.7);
        let g = cavity_transfer(&p, s).unwrap();
        assert!((g - 1.0 / (s * s + s * 2.0 + 5.0)).norm() < 1e-15);
        assert!(p.validate().is_err());
    }

    /// Counts strict local maxima of a sampled curve.
    fn local_maxima(m: &[f64]) -> usize {
        m.windows(3).filter(|w| w[1] > w[0] && w[1] > w[2]).count()
    }

    #[test]
    fn cavity_peak_count_stable_under_refinement() {
        let p = CavityParams { p2: [1.0, 0.4, 30.0], q2: [0.0, 0.5, 2.0], c: 1.0, tau1: 0.3, tau2: 0.05, tau3: 0.2 };
        p.validate().unwrap();
        let mag = |n| -> Vec<f64> { log_grid(0.1, 50.0, n).iter().map(|&w| cavity_transfer(&p, j(w)).unwrap().norm()).collect() };
        let coarse = local_maxima(&mag(2000));
        let dense = local_maxima(&mag(40_000));
        assert_eq!(coarse, dense);
        assert!(coarse >= 1);
    }

    proptest! {
        #[test]
        fn cavity_conjugate_symmetry(
            p in prop::array::uniform3(0.1f64..5.0),
            q in prop::array::uniform3(-1.0f64..1.0),
            c in -1.0f64..1.0,
            taus in prop::array::uniform3(0.01f64..1.0),
            w in 0.01f64..100.0,
        ) {
            let params = CavityParams { p2: p, q2: q, c, tau1: taus[0], tau2: taus[1], tau3: taus[2] };
            if let (Ok(a), Ok(b)) = (cavity_transfer(&params, j(w)), cavity_transfer(&params, j(-w))) {
                prop_assert!((a - b.conj()).norm() <= 1e-12 * a.norm().max(1.0));
            }
        }
    }

    fn lft(s: &PlantSample, k: &CMat) -> CMat {
        let ny = s.p22.rows();
        let m = &CMat::identity(ny) - &(&s.p22 * k);
        let inv = crate::linalg::solve(&m, &s.p21).unwrap();
        &s.p11 + &(&(&s.p12 * k) * &inv)
    }

    #[test]
    fn mixed_sensitivity_open_loop_and_unit_case() {
        let w = NoiseRejectionWeights { we: RationalFilter::constant(1.0), wn: RationalFilter::constant(1.0), wu: RationalFilter::constant(1.0) };
        let g = CMat::scalar(Complex64::new(1.0, 0.0));
        let s = assemble_mixed_sensitivity(&g, 1.0, &w, 0.2).unwrap();
        let t0 = lft(&s, &CMat::zeros(1, 1));
        assert_eq!(t0[(0, 0)], Complex64::new(1.0, 0.0));
        let t1 = lft(&s, &CMat::scalar(Complex64::new(1.0, 0.0)));
        assert!((t1[(0, 0)] - 0.5).norm() < 1e-15);
        assert!((t1[(2, 0)] - 0.1).norm() < 1e-15);
    }

    proptest! {
        #[test]
        fn mixed_sensitivity_reproduces_textbook_loop(
            gr in -2.0f64..2.0, gi in -2.0f64..2.0, kr in -2.0f64..2.0, ki in -2.0f64..2.0, w in 0.01f64..100.0,
        ) {
            let g = Complex64::new(gr, gi);
            let k = Complex64::new(kr, ki);
            prop_assume!((1.0 + g * k).norm() > 1e-2);
            let weights = NoiseRejectionWeights::rcd();
            let s = assemble_mixed_sensitivity(&CMat::scalar(g), w, &weights, 0.2).unwrap();
            let t = lft(&s, &CMat::scalar(k));
            let sens = 1.0 / (1.0 + g * k);
            let we = weights.we.eval("W_e", w).unwrap();
            let wn = weights.wn.eval("W_n", w).unwrap();
            let wu = weights.wu.eval("W_u", w).unwrap();
            let tol = 1e-10 * (1.0 + sens.norm() * (1.0 + k.norm()) * 100.0);
            prop_assert!((t[(0, 0)] - we * sens).norm() <= tol);
            prop_assert!((t[(0, 1)] + we * sens * wn).norm() <= tol);
            prop_assert!((t[(1, 0)] - wu * k * sens).norm() <= tol);
            prop_assert!((t[(1, 1)] + wu * k * sens * wn).norm() <= tol);
            prop_assert!((t[(2, 0)] - sens * 0.2).norm() <= tol);

            let sw = SensitivityWeights { w1: RationalFilter::new(vec![0.01, 177.4], vec![1.0, 50.68]).unwrap(), w2: RationalFilter::new(vec![100.0, 500.0], vec![1.0, 50000.0]).unwrap() };
            let s2 = assemble_sensitivity(&CMat::scalar(g), w, &sw, 0.2).unwrap();
            let t2 = lft(&s2, &CMat::scalar(k));
            let w1 = sw.w1.eval("W1", w).unwrap();
            let w2 = sw.w2.eval("W2", w).unwrap();
            prop_assert!((t2[(0, 0)] - w1 * sens).norm() <= tol * (1.0 + w1.norm()));
            prop_assert!((t2[(1, 0)] - w2 * g * k * sens).norm() <= tol * (1.0 + w2.norm()));
            prop_assert!((t2[(2, 0)] - sens * 0.2).norm() <= tol);
        }
    }

    #[test]
    fn filter_pole_is_reported() {
        let w = NoiseRejectionWeights { we: RationalFilter::new(vec![1.0], vec![1.0, 0.0]).unwrap(), wn: RationalFilter::constant(1.0), wu: RationalFilter::constant(1.0) };
        let err = assemble_mixed_sensitivity(&CMat::scalar(Complex64::new(1.0, 0.0)), 0.0, &w, 0.2).unwrap_err();
        assert_eq!(err, PlantError::FilterPole { filter: "W_e".into(), omega: 0.0 });
    }

    #[test]
    fn frd_round_trip_is_bit_exact() {
        let src = MixedSensitivity::new(OpenLoop::Rcd(RcdConstants::default()), Weighting::NoiseRejection(NoiseRejectionWeights::rcd()), 0.2).unwrap();
        let p = FrdPlant::from_source(&src, &log_grid(1e-3, 1e3, 7)).unwrap();
        let text = frd_to_string(&p);
        let back = frd_parse(&text).unwrap();
        assert_eq!(back.grid(), p.grid());
        assert_eq!(back.samples(), p.samples());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        frd_save(&p, &path).unwrap();
        assert_eq!(frd_load(&path).unwrap().samples(), p.samples());
    }

    const SISO: &str = "omega_radps,block,row,col,re,im
1,P11,0,0,1,0
1,P12,0,0,0,1
1,P21,0,0,2,0
1,P22,0,0,0.5,-0.5
2,P11,0,0,3,0
2,P12,0,0,0,-1
2,P21,0,0,4,0
2,P22,0,0,0.25,0
";

    #[test]
    fn frd_hand_written_file() {
        let p = frd_parse(SISO).unwrap();
        assert_eq!(p.grid(), &[1.0, 2.0]);
        assert_eq!(p.samples()[0].p22[(0, 0)], Complex64::new(0.5, -0.5));
        assert_eq!(p.samples()[1].p12[(0, 0)], Complex64::new(0.0, -1.0));
        assert_eq!(p.dims(), PlantDims { nz: 1, nw: 1, ny: 1, nu: 1 });
        let hz = SISO.replacen("omega_radps", "freq_hz", 1);
        let q = frd_parse(&hz).unwrap();
        assert!((q.grid()[1] - 4.0 * std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn frd_errors_carry_lines() {
        let bad = SISO.replacen("2,P21,0,0,4,0", "2,P21,0,0,x,0", 1);
        assert!(matches!(frd_parse(&bad), Err(PlantError::Parse { line: 8, .. })));
        let desc = SISO.replacen("2,P11", "0.5,P11", 1);
        assert!(matches!(frd_parse(&desc), Err(PlantError::Parse { line: 6, .. })));
        let missing = SISO.replacen("2,P22,0,0,0.25,0\n", "", 1);
        assert!(matches!(frd_parse(&missing), Err(PlantError::Dimension(_))));
        let outside = SISO.replacen("2,P22,0,0", "2,P22,1,0", 1);
        assert!(matches!(frd_parse(&outside), Err(PlantError::Dimension(_))));
    }

    #[test]
    fn frd_response_round_trip() {
        let grid = log_grid(0.1, 10.0, 5);
        let vals: Vec<CMat> = grid.iter().map(|&w| CMat::scalar(rcd_transfer(&RcdConstants::default(), j(w)).unwrap())).collect();
        let r = FrdResponse::new(grid, vals).unwrap();
        assert_eq!(frd_parse_response(&frd_response_to_string(&r)).unwrap(), r);
    }
}
