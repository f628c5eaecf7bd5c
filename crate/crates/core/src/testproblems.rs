//! Convex non-smooth benchmark functions with known minima.
//!
//! Every function is a pointwise maximum of smooth pieces. Two first-order
//! models are offered: the function itself (valid because it is convex), or
//! the maximum of the pieces linearized at the center.

use std::cell::{Cell, RefCell};

use crate::bundle::{LocalModel, Oracle, OracleError};
use crate::qp::{dot, Plane};

/// Values and gradients of all pieces at a point.
type PiecesFn = dyn Fn(&[f64]) -> Vec<(f64, Vec<f64>)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// `φ(·, x) = f`.
    Function,
    /// `φ(y, x) = max_i f_i(x) + ∇f_i(x)ᵀ(y − x)`.
    Linearized,
}

pub struct ConvexProblem {
    pub name: &'static str,
    pub dim: usize,
    pub optimum: f64,
    pub start: Vec<f64>,
    pub kind: ModelKind,
    pieces: Box<PiecesFn>,
    calls: Cell<usize>,
    cache: RefCell<Option<(Vec<f64>, Vec<(f64, Vec<f64>)>)>>,
}

/// Lowest-index maximizer.
fn active(pieces: &[(f64, Vec<f64>)]) -> usize {
    let mut best = 0;
    for (i, p) in pieces.iter().enumerate() {
        if p.0 > pieces[best].0 {
            best = i;
        }
    }
    best
}

impl ConvexProblem {
    pub fn new(name: &'static str, dim: usize, optimum: f64, start: Vec<f64>, pieces: Box<PiecesFn>) -> Self {
        Self {
            name,
            dim,
            optimum,
            start,
            kind: ModelKind::Linearized,
            pieces,
            calls: Cell::new(0),
            cache: RefCell::new(None),
        }
    }

    pub fn with_model(mut self, kind: ModelKind) -> Self {
        self.kind = kind;
        self
    }

    /// Distinct points at which the pieces were evaluated.
    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    pub fn reset_calls(&self) {
        self.calls.set(0);
        *self.cache.borrow_mut() = None;
    }

    fn pieces_at(&self, x: &[f64]) -> Vec<(f64, Vec<f64>)> {
        if let Some((cx, p)) = self.cache.borrow().as_ref() {
            if cx.as_slice() == x {
                return p.clone();
            }
        }
        self.calls.set(self.calls.get() + 1);
        let p = (self.pieces)(x);
        *self.cache.borrow_mut() = Some((x.to_vec(), p.clone()));
        p
    }

    /// Value and one subgradient.
    pub fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut p = self.pieces_at(x);
        let i = active(&p);
        let (f, g) = p.swap_remove(i);
        (f, g)
    }
}

pub struct ConvexModel<'a> {
    problem: &'a ConvexProblem,
    x: Vec<f64>,
    fx: f64,
    /// Pieces at the center, for the linearized model.
    pieces: Vec<(f64, Vec<f64>)>,
}

impl ConvexModel<'_> {
    fn linearized(&self, y: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = y.iter().zip(&self.x).map(|(y, x)| y - x).collect();
        self.pieces.iter().map(|(f, g)| f + dot(g, &d)).collect()
    }
}

impl LocalModel for ConvexModel<'_> {
    fn center(&self) -> &[f64] {
        &self.x
    }

    fn center_value(&self) -> f64 {
        self.fx
    }

    fn model_value(&self, y: &[f64]) -> f64 {
        match self.problem.kind {
            ModelKind::Function => self.problem.eval(y).0,
            ModelKind::Linearized => self.linearized(y).into_iter().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    fn cutting_plane(&self, z: &[f64]) -> Plane {
        match self.problem.kind {
            ModelKind::Function => {
                let (fz, g) = self.problem.eval(z);
                let d: Vec<f64> = self.x.iter().zip(z).map(|(x, z)| x - z).collect();
                Plane::new(fz + dot(&g, &d), g)
            }
            ModelKind::Linearized => {
                let vals: Vec<(f64, Vec<f64>)> =
                    self.linearized(z).into_iter().map(|v| (v, Vec::new())).collect();
                let i = active(&vals);
                Plane::new(self.pieces[i].0, self.pieces[i].1.clone())
            }
        }
    }

    fn recycle(&self, base: &[f64], old: &Plane, old_center: &[f64]) -> Option<Plane> {
        match self.problem.kind {
            // subgradient linearizations are global minorants; only the anchor moves
            ModelKind::Function => {
                let shift: Vec<f64> = self.x.iter().zip(old_center).map(|(a, b)| a - b).collect();
                Some(Plane::new(old.a + dot(&old.g, &shift), old.g.clone()))
            }
            ModelKind::Linearized => Some(self.cutting_plane(base)),
        }
    }
}

impl Oracle for ConvexProblem {
    type Model<'a> = ConvexModel<'a>;

    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> Result<f64, OracleError> {
        Ok(self.eval(x).0)
    }

    fn local_model(&self, x: &[f64]) -> Result<ConvexModel<'_>, OracleError> {
        let pieces = self.pieces_at(x);
        let fx = pieces[active(&pieces)].0;
        Ok(ConvexModel { problem: self, x: x.to_vec(), fx, pieces })
    }
}

/// `‖x‖₁` as the maximum of `sᵀx` over all sign vectors `s`.
pub fn l1_norm(n: usize) -> ConvexProblem {
    assert!(n <= 16, "sign-vector representation grows as 2^n");
    let mut start = vec![1.0; n];
    if n > 1 {
        start[1] = -2.0;
    }
    ConvexProblem::new(
        "l1",
        n,
        0.0,
        start,
        Box::new(move |x| {
            (0..(1usize << n))
                .map(|mask| {
                    let s: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
                    (dot(&s, x), s)
                })
                .collect()
        }),
    )
}

/// `max(x₁² + x₂², (2 − x₁)² + x₂²)`, minimum 1 at (1, 0).
pub fn max_of_quadratics_2d() -> ConvexProblem {
    ConvexProblem::new(
        "maxquad2",
        2,
        1.0,
        vec![3.0, 2.0],
        Box::new(|x| {
            vec![
                (x[0] * x[0] + x[1] * x[1], vec![2.0 * x[0], 2.0 * x[1]]),
                ((2.0 - x[0]).powi(2) + x[1] * x[1], vec![-2.0 * (2.0 - x[0]), 2.0 * x[1]]),
            ]
        }),
    )
}

/// `max_i x_i²`, minimum 0.
pub fn maxq(n: usize) -> ConvexProblem {
    ConvexProblem::new(
        "maxq",
        n,
        0.0,
        vec![1.0; n],
        Box::new(move |x| {
            (0..n)
                .map(|i| {
                    let mut g = vec![0.0; n];
                    g[i] = 2.0 * x[i];
                    (x[i] * x[i], g)
                })
                .collect()
        }),
    )
}

/// Five convex quadratics in ℝ¹⁰ (Lemaréchal's MAXQUAD), minimum −0.8414083346.
pub fn lemarechal_maxquad() -> ConvexProblem {
    let n = 10;
    let mut mats = Vec::new();
    let mut vecs = Vec::new();
    for k in 1..=5 {
        let kf = k as f64;
        let mut a = vec![0.0; n * n];
        for i in 1..=n {
            for j in (i + 1)..=n {
                let (fi, fj) = (i as f64, j as f64);
                let v = (fi / fj).exp() * (fi * fj).cos() * kf.sin();
                a[(i - 1) * n + (j - 1)] = v;
                a[(j - 1) * n + (i - 1)] = v;
            }
        }
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| a[i * n + j].abs()).sum();
            a[i * n + i] = (i + 1) as f64 / 10.0 * kf.sin().abs() + off;
        }
        let b: Vec<f64> = (1..=n).map(|i| (i as f64 / kf).exp() * (i as f64 * kf).sin()).collect();
        mats.push(a);
        vecs.push(b);
    }
    ConvexProblem::new(
        "maxquad",
        n,
        -0.841_408_334_6,
        vec![1.0; n],
        Box::new(move |x| {
            mats.iter()
                .zip(&vecs)
                .map(|(a, b)| {
                    let ax: Vec<f64> = (0..n).map(|i| dot(&a[i * n..(i + 1) * n], x)).collect();
                    let g = ax.iter().zip(b).map(|(v, bi)| 2.0 * v - bi).collect();
                    (dot(x, &ax) - dot(b, x), g)
                })
                .collect()
        }),
    )
}

/// CB2, minimum 1.9522244939.
pub fn cb2() -> ConvexProblem {
    ConvexProblem::new(
        "cb2",
        2,
        1.952_224_493_9,
        vec![1.0, -0.1],
        Box::new(|x| {
            let e = 2.0 * (x[1] - x[0]).exp();
            vec![
                (x[0] * x[0] + x[1].powi(4), vec![2.0 * x[0], 4.0 * x[1].powi(3)]),
                ((2.0 - x[0]).powi(2) + (2.0 - x[1]).powi(2), vec![-2.0 * (2.0 - x[0]), -2.0 * (2.0 - x[1])]),
                (e, vec![-e, e]),
            ]
        }),
    )
}

/// `max(−x₁ − x₂, −x₁ − x₂ + x₁² + x₂² − 1)`, minimum −√2.
pub fn lq() -> ConvexProblem {
    ConvexProblem::new(
        "lq",
        2,
        -std::f64::consts::SQRT_2,
        vec![-0.5, -0.5],
        Box::new(|x| {
            let f1 = -x[0] - x[1];
            vec![
                (f1, vec![-1.0, -1.0]),
                (f1 + x[0] * x[0] + x[1] * x[1] - 1.0, vec![-1.0 + 2.0 * x[0], -1.0 + 2.0 * x[1]]),
            ]
        }),
    )
}

/// The six benchmark problems used by the solver acceptance suite.
pub fn suite() -> Vec<ConvexProblem> {
    vec![l1_norm(2), max_of_quadratics_2d(), maxq(10), lemarechal_maxquad(), cb2(), lq()]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(p: &ConvexProblem, x: &[f64]) {
        let (_, g) = p.eval(x);
        for i in 0..x.len() {
            let h = 1e-7;
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let fd = (p.eval(&xp).0 - p.eval(&xm).0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-5 * (1.0 + g[i].abs()), "{} coord {i}: {fd} vs {}", p.name, g[i]);
        }
    }

    #[test]
    fn gradients_at_smooth_points() {
        for p in suite() {
            let x: Vec<f64> = (0..p.dim).map(|i| 0.3 + 0.17 * i as f64).collect();
            fd_check(&p, &x);
        }
    }

    #[test]
    fn known_minimizers() {
        let (f, _) = max_of_quadratics_2d().eval(&[1.0, 0.0]);
        assert_eq!(f, 1.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let (f, _) = lq().eval(&[s, s]);
        assert!((f + std::f64::consts::SQRT_2).abs() < 1e-15);
        let (f, _) = cb2().eval(&[1.139_037_87, 0.899_559_77]);
        assert!((f - 1.952_224_493_9).abs() < 1e-7);
        assert_eq!(lemarechal_maxquad().eval(&[1.0; 10]).0.round(), 5337.0);
    }

    #[test]
    fn call_counter_ignores_repeats() {
        let p = maxq(3);
        p.eval(&[1.0, 2.0, 3.0]);
        p.eval(&[1.0, 2.0, 3.0]);
        p.eval(&[1.0, 2.0, 4.0]);
        assert_eq!(p.calls(), 2);
    }
}
