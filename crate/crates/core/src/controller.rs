//! Fixed-structure controller parametrizations `K(x, s)`.

use std::fmt::Write as _;

use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::{solve, CMat, LinalgError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("controller resonance: jω·I − A_K singular at ω = {omega}")]
    Resonance { omega: f64 },
    #[error("invalid controller: {0}")]
    Invalid(String),
    #[error("controller file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerStructure {
    /// `K = x` reshaped to `nu × ny`, row-major.
    StaticGain { ny: usize, nu: usize },
    /// `K(s) = k_p + k_i/s`, parameters `(k_p, k_i)`.
    Pi,
    /// State space with tridiagonal `A_K` of the given order.
    StateSpaceTridiag { order: usize, ny: usize, nu: usize },
}

/// Unpacked tridiagonal realization. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagParts {
    pub sub: Vec<f64>,
    pub main: Vec<f64>,
    pub sup: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

/// Real state-space realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub n: usize,
    pub ny: usize,
    pub nu: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

impl ControllerStructure {
    pub fn ny(&self) -> usize {
        match *self {
            Self::StaticGain { ny, .. } | Self::StateSpaceTridiag { ny, .. } => ny,
            Self::Pi => 1,
        }
    }

    pub fn nu(&self) -> usize {
        match *self {
            Self::StaticGain { nu, .. } | Self::StateSpaceTridiag { nu, .. } => nu,
            Self::Pi => 1,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Self::StaticGain { ny, nu } => nu * ny,
            Self::Pi => 2,
            Self::StateSpaceTridiag { order: n, ny, nu } => (3 * n).saturating_sub(2) + n * ny + nu * n + nu * ny,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::StaticGain { .. } => "static",
            Self::Pi => "pi",
            Self::StateSpaceTridiag { .. } => "tridiag",
        }
    }

    fn check(&self, x: &[f64]) -> Result<(), ControllerError> {
        if x.len() != self.param_count() {
            return Err(ControllerError::Invalid(format!(
                "{} parameters for a structure with {}",
                x.len(),
                self.param_count()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ControllerError::Invalid("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Split a tridiagonal parameter vector: sub-, main-, super-diagonal, B, C, D.
    pub fn unpack(&self, x: &[f64]) -> Result<TridiagParts, ControllerError> {
        let Self::StateSpaceTridiag { order: n, ny, nu } = *self else {
            return Err(ControllerError::Invalid("unpack applies to tridiagonal structures".into()));
        };
        self.check(x)?;
        let off = n.saturating_sub(1);
        let mut it = x.iter().copied();
        let mut take = |k: usize| -> Vec<f64> { (&mut it).take(k).collect() };
        Ok(TridiagParts {
            sub: take(off),
            main: take(n),
            sup: take(off),
            b: take(n * ny),
            c: take(nu * n),
            d: take(nu * ny),
        })
    }

    pub fn pack(&self, parts: &TridiagParts) -> Result<Vec<f64>, ControllerError> {
        let x: Vec<f64> = [&parts.sub, &parts.main, &parts.sup, &parts.b, &parts.c, &parts.d]
            .iter()
            .flat_map(|v| v.iter().copied())
            .collect();
        self.unpack(&x)?;
        Ok(x)
    }

    pub fn realization(&self, x: &[f64]) -> Result<Realization, ControllerError> {
        self.check(x)?;
        Ok(match *self {
            Self::StaticGain { ny, nu } => {
                Realization { n: 0, ny, nu, a: vec![], b: vec![], c: vec![], d: x.to_vec() }
            }
            Self::Pi => Realization { n: 1, ny: 1, nu: 1, a: vec![0.0], b: vec![1.0], c: vec![x[1]], d: vec![x[0]] },
            Self::StateSpaceTridiag { order: n, ny, nu } => {
                let p = self.unpack(x)?;
                let mut a = vec![0.0; n * n];
                for i in 0..n {
                    a[i * n + i] = p.main[i];
                    if i + 1 < n {
                        a[(i + 1) * n + i] = p.sub[i];
                        a[i * n + i + 1] = p.sup[i];
                    }
                }
                Realization { n, ny, nu, a, b: p.b, c: p.c, d: p.d }
            }
        })
    }

    pub fn k_eval(&self, x: &[f64], omega: f64) -> Result<CMat, ControllerError> {
        self.check(x)?;
        let s = Complex64::new(0.0, omega);
        match *self {
            Self::StaticGain { ny, nu } => Ok(CMat::from_real(nu, ny, x).expect("shape checked")),
            Self::Pi => {
                if omega == 0.0 {
                    return Err(ControllerError::Resonance { omega });
                }
                Ok(CMat::scalar(Complex64::new(x[0], 0.0) + x[1] / s))
            }
            Self::StateSpaceTridiag { .. } => {
                let r = self.realization(x)?;
                let (_, xb) = resolvents(&r, omega)?;
                let c = CMat::from_real(r.nu, r.n, &r.c).expect("shape");
                let d = CMat::from_real(r.nu, r.ny, &r.d).expect("shape");
                Ok(&(&c * &xb) + &d)
            }
        }
    }

    /// `∂K/∂x_i (jω)` for every parameter, in packing order.
    pub fn k_jacobian(&self, x: &[f64], omega: f64) -> Result<Vec<CMat>, ControllerError> {
        self.check(x)?;
        match *self {
            Self::StaticGain { ny, nu } => Ok((0..nu * ny)
                .map(|k| {
                    let mut e = CMat::zeros(nu, ny);
                    e[(k / ny, k % ny)] = Complex64::new(1.0, 0.0);
                    e
                })
                .collect()),
            Self::Pi => {
                if omega == 0.0 {
                    return Err(ControllerError::Resonance { omega });
                }
                Ok(vec![
                    CMat::scalar(Complex64::new(1.0, 0.0)),
                    CMat::scalar(Complex64::new(1.0, 0.0) / Complex64::new(0.0, omega)),
                ])
            }
            Self::StateSpaceTridiag { order: n, ny, nu } => {
                let r = self.realization(x)?;
                let (l, xb) = resolvents(&r, omega)?;
                let mut out = Vec::with_capacity(self.param_count());
                // ∂K/∂A_ab = L[:, a] · X[b, :]
                let outer = |a: usize, b: usize| CMat::from_fn(nu, ny, |i, j| l[(i, a)] * xb[(b, j)]);
                for i in 0..n.saturating_sub(1) {
                    out.push(outer(i + 1, i));
                }
                for i in 0..n {
                    out.push(outer(i, i));
                }
                for i in 0..n.saturating_sub(1) {
                    out.push(outer(i, i + 1));
                }
                for i in 0..n {
                    for j in 0..ny {
                        out.push(CMat::from_fn(nu, ny, |p, q| if q == j { l[(p, i)] } else { Complex64::new(0.0, 0.0) }));
                    }
                }
                for i in 0..nu {
                    for j in 0..n {
                        out.push(CMat::from_fn(nu, ny, |p, q| if p == i { xb[(j, q)] } else { Complex64::new(0.0, 0.0) }));
                    }
                }
                for i in 0..nu {
                    for j in 0..ny {
                        let mut e = CMat::zeros(nu, ny);
                        e[(i, j)] = Complex64::new(1.0, 0.0);
                        out.push(e);
                    }
                }
                Ok(out)
            }
        }
    }

    /// Controller poles: `(count at s = 0, count in the open right half-plane)`.
    pub fn pole_counts(&self, x: &[f64]) -> Result<(usize, usize), ControllerError> {
        let r = self.realization(x)?;
        if r.n == 0 {
            return Ok((0, 0));
        }
        let poly = char_poly(&r.a, r.n);
        Ok(root_counts(&poly))
    }

    /// SISO transfer function `(num)/(den)` with a monic denominator,
    /// coefficients by descending power.
    pub fn transfer_function(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ControllerError> {
        let r = self.realization(x)?;
        if r.ny != 1 || r.nu != 1 {
            return Err(ControllerError::Invalid("transfer function export needs a SISO controller".into()));
        }
        if r.n == 0 {
            return Ok((vec![r.d[0]], vec![1.0]));
        }
        let n = r.n;
        let den = char_poly(&r.a, n);
        let mut abc = r.a.clone();
        for i in 0..n {
            for j in 0..n {
                abc[i * n + j] -= r.b[i] * r.c[j];
            }
        }
        // C(sI − A)⁻¹B = [det(sI − A + BC) − det(sI − A)] / det(sI − A)
        let shifted = char_poly(&abc, n);
        let num: Vec<f64> = shifted.iter().zip(&den).map(|(p, q)| p - q + r.d[0] * q).collect();
        Ok((num, den))
    }
}

/// `L = C(jωI − A)⁻¹` and `X = (jωI − A)⁻¹B`.
fn resolvents(r: &Realization, omega: f64) -> Result<(CMat, CMat), ControllerError> {
    let n = r.n;
    let s = Complex64::new(0.0, omega);
    let m = CMat::from_fn(n, n, |i, j| {
        let a = Complex64::new(-r.a[i * n + j], 0.0);
        if i == j {
            a + s
        } else {
            a
        }
    });
    let b = CMat::from_real(n, r.ny, &r.b).expect("shape");
    let ct = CMat::from_fn(n, r.nu, |i, j| Complex64::new(r.c[j * n + i], 0.0));
    let map = |e: LinalgError| match e {
        LinalgError::Singular { .. } => ControllerError::Resonance { omega },
        other => ControllerError::Invalid(other.to_string()),
    };
    let xb = solve(&m, &b).map_err(map)?;
    let lt = solve(&m.transpose(), &ct).map_err(map)?;
    Ok((CMat::from_fn(r.nu, n, |i, j| lt[(j, i)]), xb))
}

/// Characteristic polynomial `det(sI − A)` by descending power, monic.
pub fn char_poly(a: &[f64], n: usize) -> Vec<f64> {
    let mut coeffs = vec![0.0; n + 1];
    coeffs[0] = 1.0;
    let mut m = vec![0.0; n * n];
    for k in 1..=n {
        // M_k = A·M_{k−1} + c_{k−1}·I
        let mut next = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..n {
                    s += a[i * n + l] * m[l * n + j];
                }
                next[i * n + j] = s;
            }
            next[i * n + i] += coeffs[k - 1];
        }
        m = next;
        let mut tr = 0.0;
        for i in 0..n {
            for l in 0..n {
                tr += a[i * n + l] * m[l * n + i];
            }
        }
        coeffs[k] = -tr / k as f64;
    }
    coeffs
}

/// Counts of roots at zero and in the open right half-plane of a real
/// polynomial (descending powers), via the Routh array.
pub fn root_counts(poly: &[f64]) -> (usize, usize) {
    let scale = poly.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut p: Vec<f64> = poly.iter().skip_while(|v| v.abs() <= 1e-14 * scale).copied().collect();
    let mut zeros = 0;
    while p.len() > 1 && p.last().is_some_and(|v| v.abs() <= 1e-14 * scale) {
        p.pop();
        zeros += 1;
    }
    if p.len() <= 1 {
        return (zeros, 0);
    }
    let deg = p.len() - 1;
    let width = deg / 2 + 1;
    let mut r0: Vec<f64> = (0..width).map(|i| p.get(2 * i).copied().unwrap_or(0.0)).collect();
    let mut r1: Vec<f64> = (0..width).map(|i| p.get(2 * i + 1).copied().unwrap_or(0.0)).collect();
    let eps = 1e-12 * scale;
    let mut first = vec![r0[0]];
    for _ in 0..deg {
        if r1.iter().all(|v| v.abs() <= eps) {
            // auxiliary polynomial from the row above, differentiated
            let order = deg + 1 - first.len();
            r1 = r0
                .iter()
                .enumerate()
                .map(|(i, v)| v * order.saturating_sub(2 * i) as f64)
                .collect();
        }
        if r1[0].abs() <= eps {
            r1[0] = eps;
        }
        first.push(r1[0]);
        let next: Vec<f64> = (0..width)
            .map(|i| {
                let a = r0.get(i + 1).copied().unwrap_or(0.0);
                let b = r1.get(i + 1).copied().unwrap_or(0.0);
                (r1[0] * a - r0[0] * b) / r1[0]
            })
            .collect();
        r0 = r1;
        r1 = next;
    }
    let changes = first.windows(2).filter(|w| w[0].signum() != w[1].signum()).count();
    (zeros, changes)
}

pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// `(num)/(den)` in powers of `s`, coefficients with 17 significant digits.
pub fn transfer_function_string(num: &[f64], den: &[f64]) -> String {
    fn poly(c: &[f64]) -> String {
        let deg = c.len().saturating_sub(1);
        let terms: Vec<String> = c
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| match deg - i {
                0 => fmt17(*v),
                1 => format!("{}*s", fmt17(*v)),
                p => format!("{}*s^{p}", fmt17(*v)),
            })
            .collect();
        if terms.is_empty() {
            "0".to_string()
        } else {
            terms.join(" + ")
        }
    }
    format!("({})/({})", poly(num), poly(den))
}

/// Plain-text export: structure, parameters, realization and (SISO) transfer function.
pub fn export_controller(structure: &ControllerStructure, x: &[f64]) -> Result<String, ControllerError> {
    let r = structure.realization(x)?;
    let mut out = String::new();
    let list = |v: &[f64]| v.iter().map(|x| fmt17(*x)).collect::<Vec<_>>().join(" ");
    let _ = writeln!(out, "structure = {}", structure.name());
    let _ = writeln!(out, "order = {}", r.n);
    let _ = writeln!(out, "ny = {}", r.ny);
    let _ = writeln!(out, "nu = {}", r.nu);
    let _ = writeln!(out, "x = {}", list(x));
    let _ = writeln!(out, "A = {}", list(&r.a));
    let _ = writeln!(out, "B = {}", list(&r.b));
    let _ = writeln!(out, "C = {}", list(&r.c));
    let _ = writeln!(out, "D = {}", list(&r.d));
    if r.ny == 1 && r.nu == 1 {
        let (num, den) = structure.transfer_function(x)?;
        let _ = writeln!(out, "tf = {}", transfer_function_string(&num, &den));
    }
    Ok(out)
}

/// Read back the structure and parameters written by [`export_controller`].
pub fn import_controller(text: &str) -> Result<(ControllerStructure, Vec<f64>), ControllerError> {
    let mut kind = None;
    let (mut order, mut ny, mut nu) = (None, None, None);
    let mut x = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| ControllerError::Parse { line: idx + 1, msg };
        let (key, value) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
        let value = value.trim();
        let count = |v: &str| v.parse::<usize>().map_err(|e| err(format!("{e}")));
        match key.trim() {
            "structure" => kind = Some(value.to_string()),
            "order" => order = Some(count(value)?),
            "ny" => ny = Some(count(value)?),
            "nu" => nu = Some(count(value)?),
            "x" => {
                x = Some(
                    value
                        .split_whitespace()
                        .map(|t| t.parse::<f64>().map_err(|e| err(format!("{t}: {e}"))))
                        .collect::<Result<Vec<_>, _>>()?,
                )
            }
            _ => {}
        }
    }
    let missing = |what: &str| ControllerError::Invalid(format!("controller file lacks `{what}`"));
    let kind = kind.ok_or_else(|| missing("structure"))?;
    let x = x.ok_or_else(|| missing("x"))?;
    let structure = match kind.as_str() {
        "pi" => ControllerStructure::Pi,
        "static" => ControllerStructure::StaticGain {
            ny: ny.ok_or_else(|| missing("ny"))?,
            nu: nu.ok_or_else(|| missing("nu"))?,
        },
        "tridiag" => ControllerStructure::StateSpaceTridiag {
            order: order.ok_or_else(|| missing("order"))?,
            ny: ny.ok_or_else(|| missing("ny"))?,
            nu: nu.ok_or_else(|| missing("nu"))?,
        },
        other => return Err(ControllerError::Invalid(format!("unknown structure `{other}`"))),
    };
    structure.check(&x)?;
    Ok((structure, x))
}
