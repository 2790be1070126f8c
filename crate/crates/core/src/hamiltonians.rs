//! Catalog of scalar and two-level Hermitian symbols with analytic
//! derivatives.
//!
//! Every entry has subquadratic growth (bounded derivatives of order two
//! and higher), except for the linear-in-x growth of the toy model's
//! second derivative when `theta != 0`, which the toy model carries by
//! construction.
//!
//! Level ordering for two-level symbols: level 0 is the eigenvalue `v - f`
//! and level 1 is `v + f` in the `(v, f, u)` decomposition. For the toy
//! model that is `h_- = p - k q` and `h_+ = p + k q`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use num_complex::Complex64;

use crate::classical::PhasePoint;
use crate::error::{Error, Result};

pub type C64 = Complex64;

const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ScalarKind {
    /// `|p|^2 / 2`
    Free { dim: usize },
    /// `(|p|^2 + |q|^2) / 2`
    Harmonic { dim: usize },
    /// `p^2 / 2 + v0 cos q`, one dimension.
    Torus { v0: f64 },
    /// `p + slope * q`, one dimension.
    Linear { slope: f64 },
}

/// A scalar phase-space Hamiltonian `h(t, z)` plus a constant energy shift.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScalarHamiltonian {
    pub kind: ScalarKind,
    pub shift: f64,
}

impl ScalarHamiltonian {
    pub fn free(dim: usize) -> Self {
        Self { kind: ScalarKind::Free { dim }, shift: 0.0 }
    }

    pub fn harmonic(dim: usize) -> Self {
        Self { kind: ScalarKind::Harmonic { dim }, shift: 0.0 }
    }

    pub fn torus(v0: f64) -> Self {
        Self { kind: ScalarKind::Torus { v0 }, shift: 0.0 }
    }

    pub fn linear(slope: f64) -> Self {
        Self { kind: ScalarKind::Linear { slope }, shift: 0.0 }
    }

    pub fn shifted(mut self, shift: f64) -> Self {
        self.shift += shift;
        self
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            ScalarKind::Free { dim } | ScalarKind::Harmonic { dim } => dim,
            ScalarKind::Torus { .. } | ScalarKind::Linear { .. } => 1,
        }
    }

    pub fn value(&self, _t: f64, z: &PhasePoint) -> f64 {
        let base = match self.kind {
            ScalarKind::Free { .. } => 0.5 * z.p.norm_squared(),
            ScalarKind::Harmonic { .. } => 0.5 * (z.p.norm_squared() + z.q.norm_squared()),
            ScalarKind::Torus { v0 } => 0.5 * z.p[0] * z.p[0] + v0 * z.q[0].cos(),
            ScalarKind::Linear { slope } => z.p[0] + slope * z.q[0],
        };
        base + self.shift
    }

    /// Gradient ordered as `(d/dq_1..d/dq_d, d/dp_1..d/dp_d)`.
    pub fn gradient(&self, _t: f64, z: &PhasePoint) -> DVector<f64> {
        let d = self.dim();
        let mut g = DVector::zeros(2 * d);
        match self.kind {
            ScalarKind::Free { .. } => {
                g.rows_mut(d, d).copy_from(&z.p);
            }
            ScalarKind::Harmonic { .. } => {
                g.rows_mut(0, d).copy_from(&z.q);
                g.rows_mut(d, d).copy_from(&z.p);
            }
            ScalarKind::Torus { v0 } => {
                g[0] = -v0 * z.q[0].sin();
                g[1] = z.p[0];
            }
            ScalarKind::Linear { slope } => {
                g[0] = slope;
                g[1] = 1.0;
            }
        }
        g
    }

    pub fn hessian(&self, _t: f64, z: &PhasePoint) -> DMatrix<f64> {
        let d = self.dim();
        let mut h = DMatrix::zeros(2 * d, 2 * d);
        match self.kind {
            ScalarKind::Free { .. } => {
                for j in 0..d {
                    h[(d + j, d + j)] = 1.0;
                }
            }
            ScalarKind::Harmonic { .. } => {
                h.fill_with_identity();
            }
            ScalarKind::Torus { v0 } => {
                h[(0, 0)] = -v0 * z.q[0].cos();
                h[(1, 1)] = 1.0;
            }
            ScalarKind::Linear { .. } => {}
        }
        h
    }

    pub fn time_derivative(&self, _t: f64, _z: &PhasePoint) -> f64 {
        0.0
    }

    /// Hamiltonians of the form `|p|^2/2 + V(q)` expose `V` for the
    /// split-step reference solver.
    pub fn potential(&self, x: f64) -> Option<f64> {
        let v = match self.kind {
            ScalarKind::Free { .. } => 0.0,
            ScalarKind::Harmonic { .. } => 0.5 * x * x,
            ScalarKind::Torus { v0 } => v0 * x.cos(),
            ScalarKind::Linear { .. } => return None,
        };
        Some(v + self.shift)
    }

    pub fn is_quadratic(&self) -> bool {
        !matches!(self.kind, ScalarKind::Torus { .. })
    }

    /// Closed-form flow, Jacobian and action for linear and quadratic
    /// entries: `(z(t0 + dt), F, S)`.
    pub fn closed_form(&self, z0: &PhasePoint, dt: f64) -> Option<(PhasePoint, DMatrix<f64>, f64)> {
        let d = self.dim();
        let shift_action = -self.shift * dt;
        match self.kind {
            ScalarKind::Free { .. } => {
                let q = &z0.q + &z0.p * dt;
                let mut f = DMatrix::identity(2 * d, 2 * d);
                for j in 0..d {
                    f[(j, d + j)] = dt;
                }
                let s = 0.5 * z0.p.norm_squared() * dt + shift_action;
                Some((PhasePoint::new(q, z0.p.clone()), f, s))
            }
            ScalarKind::Harmonic { .. } => {
                let (sn, cs) = dt.sin_cos();
                let q = &z0.q * cs + &z0.p * sn;
                let p = &z0.p * cs - &z0.q * sn;
                let mut f = DMatrix::zeros(2 * d, 2 * d);
                for j in 0..d {
                    f[(j, j)] = cs;
                    f[(j, d + j)] = sn;
                    f[(d + j, j)] = -sn;
                    f[(d + j, d + j)] = cs;
                }
                let (s2, c2) = (2.0 * dt).sin_cos();
                let s = 0.25 * (z0.p.norm_squared() - z0.q.norm_squared()) * s2
                    + 0.5 * z0.q.dot(&z0.p) * (c2 - 1.0)
                    + shift_action;
                Some((PhasePoint::new(q, p), f, s))
            }
            ScalarKind::Linear { slope } => {
                let q = z0.q[0] + dt;
                let p = z0.p[0] - slope * dt;
                let s = -slope * (z0.q[0] * dt + 0.5 * dt * dt) + shift_action;
                Some((PhasePoint::one(q, p), DMatrix::identity(2, 2), s))
            }
            ScalarKind::Torus { .. } => None,
        }
    }
}

/// The two-level smooth-crossing model
/// `H(x, xi) = xi + k x [[0, e^{i theta x}], [e^{-i theta x}, 0]]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ToyModel {
    pub k: f64,
    pub theta: f64,
}

impl ToyModel {
    pub fn new(k: f64, theta: f64) -> Result<Self> {
        if k == 0.0 || !k.is_finite() {
            return Err(Error::InvalidParameter("toy model requires k != 0".into()));
        }
        if theta < 0.0 || !theta.is_finite() {
            return Err(Error::InvalidParameter("toy model requires theta >= 0".into()));
        }
        Ok(Self { k, theta })
    }

    /// Eigenvector field `2^{-1/2} (e^{i theta x}, sign)`; `sign = -1` for
    /// the minus level.
    pub fn eigenvector(&self, sign: f64, x: f64) -> Vector2<C64> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Vector2::new(C64::from_polar(s, self.theta * x), C64::new(sign * s, 0.0))
    }

    /// Coupling matrix `V_theta(x)`.
    pub fn coupling(&self, x: f64) -> Matrix2<C64> {
        let e = C64::from_polar(1.0, self.theta * x);
        Matrix2::new(C64::new(0.0, 0.0), e, e.conj(), C64::new(0.0, 0.0))
    }

    fn level_sign(level: usize) -> f64 {
        if level == 0 {
            -1.0
        } else {
            1.0
        }
    }
}

/// `diag(h, h + gap)` with a constant eigenbasis.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiagonalPair {
    pub lower: ScalarHamiltonian,
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum HermitianSymbol {
    Scalar(ScalarHamiltonian),
    Toy(ToyModel),
    Diagonal(DiagonalPair),
}

/// Eigenvalues and spectral projectors of a two-level symbol.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub values: [f64; 2],
    pub projectors: [Matrix2<C64>; 2],
}

/// A projector together with its first and second phase-space derivatives.
#[derive(Debug, Clone)]
pub struct ProjectorJet {
    pub value: Matrix2<C64>,
    pub dt: Matrix2<C64>,
    pub grad: Vec<Matrix2<C64>>,
    pub hess: Vec<Vec<Matrix2<C64>>>,
    pub dt_grad: Vec<Matrix2<C64>>,
}

/// The `(v, f, u)` decomposition `H = v Id + f (u . sigma)` with
/// derivatives of `v` and `f`.
#[derive(Debug, Clone)]
pub struct ScForm {
    pub v: f64,
    pub f: f64,
    pub u: [f64; 3],
    pub dt_v: f64,
    pub dt_f: f64,
    pub grad_v: DVector<f64>,
    pub grad_f: DVector<f64>,
}

fn zeros2() -> Matrix2<C64> {
    Matrix2::zeros()
}

fn real_matrix(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|v| C64::new(v, 0.0))
}

impl HermitianSymbol {
    pub fn dim(&self) -> usize {
        match self {
            HermitianSymbol::Scalar(h) => h.dim(),
            HermitianSymbol::Toy(_) => 1,
            HermitianSymbol::Diagonal(p) => p.lower.dim(),
        }
    }

    pub fn levels(&self) -> usize {
        match self {
            HermitianSymbol::Scalar(_) => 1,
            _ => 2,
        }
    }

    /// The scalar eigenvalue symbol of one level.
    pub fn level(&self, index: usize) -> Result<ScalarHamiltonian> {
        match self {
            HermitianSymbol::Scalar(h) if index == 0 => Ok(*h),
            HermitianSymbol::Toy(m) if index < 2 => Ok(ScalarHamiltonian::linear(ToyModel::level_sign(index) * m.k)),
            HermitianSymbol::Diagonal(p) if index == 0 => Ok(p.lower),
            HermitianSymbol::Diagonal(p) if index == 1 => Ok(p.lower.shifted(p.gap)),
            _ => Err(Error::InvalidParameter(format!("level {index} out of range"))),
        }
    }

    pub fn eval(&self, t: f64, z: &PhasePoint) -> DMatrix<C64> {
        match self {
            HermitianSymbol::Scalar(h) => DMatrix::from_element(1, 1, C64::new(h.value(t, z), 0.0)),
            HermitianSymbol::Toy(m) => {
                let x = z.q[0];
                let c = m.coupling(x) * C64::new(m.k * x, 0.0);
                let mut out = DMatrix::zeros(2, 2);
                for i in 0..2 {
                    for j in 0..2 {
                        out[(i, j)] = c[(i, j)];
                    }
                    out[(i, i)] += C64::new(z.p[0], 0.0);
                }
                out
            }
            HermitianSymbol::Diagonal(p) => {
                let lo = p.lower.value(t, z);
                let mut out = DMatrix::zeros(2, 2);
                out[(0, 0)] = C64::new(lo, 0.0);
                out[(1, 1)] = C64::new(lo + p.gap, 0.0);
                out
            }
        }
    }

    /// Phase-space gradient, one matrix per coordinate `(q.., p..)`.
    pub fn grad(&self, t: f64, z: &PhasePoint) -> Vec<DMatrix<C64>> {
        match self {
            HermitianSymbol::Scalar(h) => h
                .gradient(t, z)
                .iter()
                .map(|&g| DMatrix::from_element(1, 1, C64::new(g, 0.0)))
                .collect(),
            HermitianSymbol::Toy(m) => {
                let x = z.q[0];
                let e = C64::from_polar(1.0, m.theta * x);
                let k = m.k;
                // d/dx [k x e^{i theta x}] = k e (1 + i theta x)
                let upper = e * k * (C64::new(1.0, m.theta * x));
                let dx = DMatrix::from_row_slice(2, 2, &[C64::new(0.0, 0.0), upper, upper.conj(), C64::new(0.0, 0.0)]);
                vec![dx, DMatrix::identity(2, 2)]
            }
            HermitianSymbol::Diagonal(p) => p
                .lower
                .gradient(t, z)
                .iter()
                .map(|&g| DMatrix::from_diagonal(&DVector::from_element(2, C64::new(g, 0.0))))
                .collect(),
        }
    }

    pub fn hess(&self, t: f64, z: &PhasePoint) -> Vec<Vec<DMatrix<C64>>> {
        match self {
            HermitianSymbol::Scalar(h) => {
                let hm = h.hessian(t, z);
                (0..hm.nrows())
                    .map(|i| (0..hm.ncols()).map(|j| DMatrix::from_element(1, 1, C64::new(hm[(i, j)], 0.0))).collect())
                    .collect()
            }
            HermitianSymbol::Toy(m) => {
                let x = z.q[0];
                let th = m.theta;
                let e = C64::from_polar(1.0, th * x);
                // d^2/dx^2 [k x e^{i theta x}] = k e (2 i theta - theta^2 x)
                let upper = e * m.k * C64::new(-th * th * x, 2.0 * th);
                let dxx = DMatrix::from_row_slice(2, 2, &[C64::new(0.0, 0.0), upper, upper.conj(), C64::new(0.0, 0.0)]);
                let zero = DMatrix::zeros(2, 2);
                vec![vec![dxx, zero.clone()], vec![zero.clone(), zero]]
            }
            HermitianSymbol::Diagonal(p) => {
                let hm = p.lower.hessian(t, z);
                (0..hm.nrows())
                    .map(|i| {
                        (0..hm.ncols())
                            .map(|j| DMatrix::from_diagonal(&DVector::from_element(2, C64::new(hm[(i, j)], 0.0))))
                            .collect()
                    })
                    .collect()
            }
        }
    }

    pub fn eigensystem(&self, t: f64, z: &PhasePoint) -> Result<Eigensystem> {
        match self {
            HermitianSymbol::Scalar(_) => Err(Error::NotTwoLevel),
            HermitianSymbol::Toy(_) | HermitianSymbol::Diagonal(_) => {
                let h0 = self.level(0)?.value(t, z);
                let h1 = self.level(1)?.value(t, z);
                Ok(Eigensystem {
                    values: [h0, h1],
                    projectors: [self.projector_jet(0, t, z)?.value, self.projector_jet(1, t, z)?.value],
                })
            }
        }
    }

    /// Spectral projector of `level` with analytic derivatives.
    pub fn projector_jet(&self, level: usize, _t: f64, z: &PhasePoint) -> Result<ProjectorJet> {
        if level > 1 {
            return Err(Error::InvalidParameter(format!("level {level} out of range")));
        }
        let d = self.dim();
        let zero_vec = vec![zeros2(); 2 * d];
        let zero_hess = vec![vec![zeros2(); 2 * d]; 2 * d];
        match self {
            HermitianSymbol::Scalar(_) => Err(Error::NotTwoLevel),
            HermitianSymbol::Toy(m) => {
                let s = ToyModel::level_sign(level);
                let th = m.theta;
                let e = C64::from_polar(1.0, th * m_x(z));
                let half = C64::new(0.5, 0.0);
                let value = Matrix2::new(half, half * s * e, half * s * e.conj(), half);
                let d1 = Matrix2::new(
                    C64::new(0.0, 0.0),
                    half * s * I * th * e,
                    -half * s * I * th * e.conj(),
                    C64::new(0.0, 0.0),
                );
                let d2 = Matrix2::new(
                    C64::new(0.0, 0.0),
                    -half * s * th * th * e,
                    -half * s * th * th * e.conj(),
                    C64::new(0.0, 0.0),
                );
                let mut grad = zero_vec.clone();
                grad[0] = d1;
                let mut hess = zero_hess;
                hess[0][0] = d2;
                Ok(ProjectorJet { value, dt: zeros2(), grad, hess, dt_grad: zero_vec })
            }
            HermitianSymbol::Diagonal(_) => {
                let mut value = zeros2();
                value[(level, level)] = C64::new(1.0, 0.0);
                Ok(ProjectorJet { value, dt: zeros2(), grad: zero_vec.clone(), hess: zero_hess, dt_grad: zero_vec })
            }
        }
    }

    /// The `(v, f, u)` form of a two-level symbol.
    pub fn sc_form(&self, t: f64, z: &PhasePoint) -> Option<ScForm> {
        match self {
            HermitianSymbol::Scalar(_) => None,
            HermitianSymbol::Toy(m) => {
                let x = z.q[0];
                let th = m.theta;
                Some(ScForm {
                    v: z.p[0],
                    f: m.k * x,
                    u: [0.0, (th * x).cos(), (th * x).sin()],
                    dt_v: 0.0,
                    dt_f: 0.0,
                    grad_v: DVector::from_vec(vec![0.0, 1.0]),
                    grad_f: DVector::from_vec(vec![m.k, 0.0]),
                })
            }
            HermitianSymbol::Diagonal(p) => {
                let lo = p.lower.value(t, z);
                Some(ScForm {
                    v: lo + 0.5 * p.gap,
                    f: 0.5 * p.gap,
                    u: [-1.0, 0.0, 0.0],
                    dt_v: p.lower.time_derivative(t, z),
                    dt_f: 0.0,
                    grad_v: p.lower.gradient(t, z),
                    grad_f: DVector::zeros(2 * p.lower.dim()),
                })
            }
        }
    }
}

fn m_x(z: &PhasePoint) -> f64 {
    z.q[0]
}

/// One catalog entry: a name and its parameters with defaults.
#[derive(Debug, Clone, Copy)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub params: &'static [(&'static str, f64)],
    pub description: &'static str,
}

pub const CATALOG: &[CatalogEntry] = &[
    CatalogEntry { name: "free", params: &[("dim", 1.0)], description: "|p|^2/2" },
    CatalogEntry { name: "harmonic", params: &[("dim", 1.0)], description: "(|p|^2+|q|^2)/2" },
    CatalogEntry { name: "torus", params: &[("v0", 1.0)], description: "p^2/2 + v0 cos q" },
    CatalogEntry { name: "linear+", params: &[("k", 1.0)], description: "p + k q" },
    CatalogEntry { name: "linear-", params: &[("k", 1.0)], description: "p - k q" },
    CatalogEntry { name: "toy", params: &[("k", 1.0), ("theta", 0.5)], description: "xi + k x V_theta(x)" },
    CatalogEntry {
        name: "diagonal",
        params: &[("v0", 1.0), ("gap", 1.0)],
        description: "diag(p^2/2 + v0 cos q, p^2/2 + v0 cos q + gap)",
    },
];

/// Builds a catalog symbol from its name and a parameter map; missing
/// parameters take their defaults.
pub fn build(name: &str, params: &BTreeMap<String, f64>) -> Result<HermitianSymbol> {
    let entry = CATALOG
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::UnknownHamiltonian(name.to_string()))?;
    for key in params.keys() {
        if !entry.params.iter().any(|(k, _)| k == key) {
            return Err(Error::InvalidParameter(format!("`{name}` has no parameter `{key}`")));
        }
    }
    let get = |key: &str| -> f64 {
        params
            .get(key)
            .copied()
            .unwrap_or_else(|| entry.params.iter().find(|(k, _)| *k == key).map(|(_, v)| *v).unwrap_or(0.0))
    };
    let dim = |v: f64| -> Result<usize> {
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::InvalidParameter(format!("dimension must be a positive integer, got {v}")))
        }
    };
    match name {
        "free" => Ok(build_scalar_free(dim(get("dim"))?)),
        "harmonic" => Ok(HermitianSymbol::Scalar(ScalarHamiltonian::harmonic(dim(get("dim"))?))),
        "torus" => Ok(HermitianSymbol::Scalar(ScalarHamiltonian::torus(get("v0")))),
        "linear+" => Ok(HermitianSymbol::Scalar(ScalarHamiltonian::linear(get("k")))),
        "linear-" => Ok(HermitianSymbol::Scalar(ScalarHamiltonian::linear(-get("k")))),
        "toy" => Ok(HermitianSymbol::Toy(ToyModel::new(get("k"), get("theta"))?)),
        "diagonal" => {
            let gap = get("gap");
            if gap <= 0.0 {
                return Err(Error::InvalidParameter("diagonal pair needs gap > 0".into()));
            }
            Ok(HermitianSymbol::Diagonal(DiagonalPair { lower: ScalarHamiltonian::torus(get("v0")), gap }))
        }
        _ => Err(Error::UnknownHamiltonian(name.to_string())),
    }
}

fn build_scalar_free(dim: usize) -> HermitianSymbol {
    HermitianSymbol::Scalar(ScalarHamiltonian::free(dim))
}

/// Toy model constructor; rejects `k = 0`.
pub fn build_toy_model(k: f64, theta: f64) -> Result<HermitianSymbol> {
    Ok(HermitianSymbol::Toy(ToyModel::new(k, theta)?))
}

/// Scalar catalog constructor.
pub fn build_scalar(name: &str, params: &BTreeMap<String, f64>) -> Result<HermitianSymbol> {
    match name {
        "free" | "harmonic" | "torus" | "linear+" | "linear-" => build(name, params),
        _ => Err(Error::UnknownHamiltonian(name.to_string())),
    }
}

/// Largest relative deviation between the analytic gradient/Hessian and
/// centered differences (gradient from values, Hessian from gradients).
pub fn finite_difference_check(symbol: &HermitianSymbol, t: f64, z: &PhasePoint, step: f64) -> f64 {
    let n = 2 * symbol.dim();
    let grad = symbol.grad(t, z);
    let hess = symbol.hess(t, z);
    let mut worst = 0.0f64;
    let rel = |fd: &DMatrix<C64>, exact: &DMatrix<C64>| -> f64 {
        let scale = exact.norm().max(1.0);
        (fd - exact).norm() / scale
    };
    for j in 0..n {
        let plus = z.perturbed(j, step);
        let minus = z.perturbed(j, -step);
        let fd = (symbol.eval(t, &plus) - symbol.eval(t, &minus)) / C64::new(2.0 * step, 0.0);
        worst = worst.max(rel(&fd, &grad[j]));
        let gp = symbol.grad(t, &plus);
        let gm = symbol.grad(t, &minus);
        for i in 0..n {
            let fd = (&gp[i] - &gm[i]) / C64::new(2.0 * step, 0.0);
            worst = worst.max(rel(&fd, &hess[i][j]));
        }
    }
    worst
}

/// Same check for a scalar level.
pub fn level_finite_difference_check(h: &ScalarHamiltonian, t: f64, z: &PhasePoint, step: f64) -> f64 {
    let sym = HermitianSymbol::Scalar(*h);
    finite_difference_check(&sym, t, z, step)
}

/// Hermiticity residual `max |H - H^*|`.
pub fn hermiticity_defect(symbol: &HermitianSymbol, t: f64, z: &PhasePoint) -> f64 {
    let h = symbol.eval(t, z);
    (&h - h.adjoint()).iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Converts a real 2d x 2d matrix to complex.
pub fn complexify(m: &DMatrix<f64>) -> DMatrix<C64> {
    real_matrix(m)
}

/// `2 pi` for callers that build periodic grids over the torus.
pub const TORUS_PERIOD: f64 = 2.0 * PI;
