//! Gapped two-level systems: parallel transport of eigenvectors along the
//! flow of one eigenvalue and the adiabatic Herman–Kluk propagator.
//!
//! With `Pi` the projector of level `h` and `Pi_perp = Id - Pi`:
//! `Omega = -1/2 (h - h_perp) Pi {Pi, Pi} Pi`,
//! `K = Pi_perp (d_t Pi + {h, Pi}) Pi`,
//! `Theta = i Omega + i (K - K^*)`,
//! and along the characteristic `dV/dt = -i Theta V`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix2, Vector2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::classical::{propagate, ClassicalOptions, PhasePoint};
use crate::error::{Error, Result};
use crate::grid::{Grid1D, GridFunction};
use crate::hamiltonians::{HermitianSymbol, ProjectorJet, ScalarHamiltonian, ToyModel};
use crate::harness::rules::QuadratureRule;
use crate::hk_scalar::{collect_terms, prefactors_along, sum_chunked, HkBranchTerm, HkPropagation};
use crate::ode::integrate;
use crate::wavepackets::{self, GaussianWavePacket};

type C64 = Complex64;

const I: C64 = C64::new(0.0, 1.0);

/// Default smallest admissible eigenvalue gap.
pub const GAP_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportMatrices {
    pub omega: Matrix2<C64>,
    pub k: Matrix2<C64>,
    pub theta: Matrix2<C64>,
}

/// Transport matrices and their phase-space gradients (one entry per
/// coordinate `(q.., p..)`).
#[derive(Debug, Clone)]
pub struct TransportJet {
    pub value: TransportMatrices,
    pub grad: Vec<TransportMatrices>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdiabaticOptions {
    pub classical: ClassicalOptions,
    pub gap_threshold: f64,
}

impl Default for AdiabaticOptions {
    fn default() -> Self {
        Self { classical: ClassicalOptions::default(), gap_threshold: GAP_THRESHOLD }
    }
}

/// Matrix Poisson bracket `sum_j d_{p_j} a d_{q_j} b - d_{q_j} a d_{p_j} b`.
fn bracket(a: &[Matrix2<C64>], b: &[Matrix2<C64>]) -> Matrix2<C64> {
    let d = a.len() / 2;
    (0..d).fold(Matrix2::zeros(), |acc, j| acc + a[d + j] * b[j] - a[j] * b[d + j])
}

/// `{h, P}` for a scalar `h` given by its gradient.
fn scalar_bracket(gh: &[f64], dp: &[Matrix2<C64>]) -> Matrix2<C64> {
    let d = gh.len() / 2;
    (0..d).fold(Matrix2::zeros(), |acc, j| acc + dp[j] * C64::new(gh[d + j], 0.0) - dp[d + j] * C64::new(gh[j], 0.0))
}

fn theta_of(omega: &Matrix2<C64>, k: &Matrix2<C64>) -> Matrix2<C64> {
    omega * I + (k - k.adjoint()) * I
}

fn levels_of(symbol: &HermitianSymbol, level: usize) -> Result<(ScalarHamiltonian, ScalarHamiltonian)> {
    if symbol.levels() != 2 || level > 1 {
        return Err(Error::NotTwoLevel);
    }
    Ok((symbol.level(level)?, symbol.level(1 - level)?))
}

fn check_gap(h: &ScalarHamiltonian, hp: &ScalarHamiltonian, t: f64, z: &PhasePoint, threshold: f64) -> Result<f64> {
    let delta = h.value(t, z) - hp.value(t, z);
    if delta.abs() < threshold {
        return Err(Error::CrossingProximity { t, gap: delta.abs(), threshold });
    }
    Ok(delta)
}

/// `Omega`, `K` and `Theta` of `level` at `(t, z)`.
pub fn transport_matrices(
    symbol: &HermitianSymbol,
    level: usize,
    t: f64,
    z: &PhasePoint,
    gap_threshold: f64,
) -> Result<TransportMatrices> {
    let (h, hp) = levels_of(symbol, level)?;
    let delta = check_gap(&h, &hp, t, z, gap_threshold)?;
    let jet = symbol.projector_jet(level, t, z)?;
    let gh: Vec<f64> = h.gradient(t, z).iter().copied().collect();
    let p = jet.value;
    let q = Matrix2::identity() - p;
    let omega = p * bracket(&jet.grad, &jet.grad) * p * C64::new(-0.5 * delta, 0.0);
    let k = q * (jet.dt + scalar_bracket(&gh, &jet.grad)) * p;
    Ok(TransportMatrices { omega, k, theta: theta_of(&omega, &k) })
}

/// Transport matrices together with their analytic phase-space gradients.
pub fn transport_jet(
    symbol: &HermitianSymbol,
    level: usize,
    t: f64,
    z: &PhasePoint,
    gap_threshold: f64,
) -> Result<TransportJet> {
    let (h, hp) = levels_of(symbol, level)?;
    let delta = check_gap(&h, &hp, t, z, gap_threshold)?;
    let ProjectorJet { value: p, dt, grad: dp, hess: ddp, dt_grad } = symbol.projector_jet(level, t, z)?;
    let n = dp.len();
    let gh: Vec<f64> = h.gradient(t, z).iter().copied().collect();
    let ghp: Vec<f64> = hp.gradient(t, z).iter().copied().collect();
    let hh = h.hessian(t, z);
    let q = Matrix2::identity() - p;
    let b = bracket(&dp, &dp);
    let x = dt + scalar_bracket(&gh, &dp);
    let omega = p * b * p * C64::new(-0.5 * delta, 0.0);
    let k = q * x * p;
    let value = TransportMatrices { omega, k, theta: theta_of(&omega, &k) };

    let grad = (0..n)
        .map(|m| {
            let dpm = &dp[m];
            let ddpm: Vec<Matrix2<C64>> = (0..n).map(|j| ddp[m][j]).collect();
            let ddelta = gh[m] - ghp[m];
            let db = bracket(&ddpm, &dp) + bracket(&dp, &ddpm);
            let domega = (p * b * p * C64::new(ddelta, 0.0) + (dpm * b * p + p * db * p + p * b * dpm) * C64::new(delta, 0.0))
                * C64::new(-0.5, 0.0);
            let dgh: Vec<f64> = (0..n).map(|j| hh[(m, j)]).collect();
            let dx = dt_grad[m] + scalar_bracket(&dgh, &dp) + scalar_bracket(&gh, &ddpm);
            let dk = -dpm * x * p + q * dx * p + q * x * dpm;
            TransportMatrices { omega: domega, k: dk, theta: theta_of(&domega, &dk) }
        })
        .collect();
    Ok(TransportJet { value, grad })
}

/// Eigenvectors transported along one trajectory of a level.
#[derive(Debug, Clone)]
pub struct TransportedFrame {
    pub level: usize,
    pub times: Vec<f64>,
    pub states: Vec<PhasePoint>,
    pub vectors: Vec<Vector2<C64>>,
    /// Phase-space gradient of the frame field at the current point, one
    /// vector per coordinate; empty unless requested.
    pub gradients: Vec<Vec<Vector2<C64>>>,
}

impl TransportedFrame {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn pack(v: &Vector2<C64>, out: &mut [f64]) {
    out[0] = v[0].re;
    out[1] = v[0].im;
    out[2] = v[1].re;
    out[3] = v[1].im;
}

fn unpack(y: &[f64]) -> Vector2<C64> {
    Vector2::new(C64::new(y[0], y[1]), C64::new(y[2], y[3]))
}

/// Transports the unit eigenvector `v0` of `level` at `(t0, z0)` jointly
/// with the classical flow. With `dv0` (the field gradient at `z0`) the
/// variational system is carried as well and the frame gradient is
/// returned as `W F^{-1}`, where `W` solves
/// `W' = -i [(grad Theta . F) V + Theta W]`.
pub fn transport_along(
    symbol: &HermitianSymbol,
    level: usize,
    z0: &PhasePoint,
    v0: Vector2<C64>,
    dv0: Option<&[Vector2<C64>]>,
    times: &[f64],
    opts: &AdiabaticOptions,
) -> Result<TransportedFrame> {
    if times.is_empty() {
        return Err(Error::InvalidParameter("empty output grid".into()));
    }
    let (h, _) = levels_of(symbol, level)?;
    let d = symbol.dim();
    let n = 2 * d;
    if z0.dim() != d {
        return Err(Error::InvalidParameter("phase point dimension differs from symbol".into()));
    }
    if let Some(g) = dv0 {
        if g.len() != n {
            return Err(Error::InvalidParameter("frame gradient needs one vector per coordinate".into()));
        }
    }
    let with_grad = dv0.is_some();
    // layout: z | V | F (row-major) | W (column j = d/dz0_j)
    let off_v = n;
    let off_f = n + 4;
    let off_w = off_f + n * n;
    let len = if with_grad { off_w + 4 * n } else { off_f };
    let mut y0 = vec![0.0; len];
    y0[..n].copy_from_slice(z0.to_vector().as_slice());
    pack(&v0, &mut y0[off_v..]);
    if let Some(g) = dv0 {
        for i in 0..n {
            y0[off_f + i * n + i] = 1.0;
        }
        for (j, w) in g.iter().enumerate() {
            pack(w, &mut y0[off_w + 4 * j..]);
        }
    }
    let threshold = opts.gap_threshold;
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let z = PhasePoint::from_slice(&y[..n]);
        let g = h.gradient(t, &z);
        for j in 0..d {
            dy[j] = g[d + j];
            dy[d + j] = -g[j];
        }
        let v = unpack(&y[off_v..]);
        if !with_grad {
            let tm = transport_matrices(symbol, level, t, &z, threshold)?;
            pack(&(tm.theta * v * -I), &mut dy[off_v..]);
        } else {
            let jet = transport_jet(symbol, level, t, &z, threshold)?;
            let theta = jet.value.theta;
            pack(&(theta * v * -I), &mut dy[off_v..]);
            let hess = h.hessian(t, &z);
            let f = &y[off_f..off_w];
            for i in 0..n {
                for j in 0..n {
                    let acc: f64 = (0..n).map(|m| hess[(i, m)] * f[m * n + j]).sum();
                    if i < d {
                        dy[off_f + (d + i) * n + j] = -acc;
                    } else {
                        dy[off_f + (i - d) * n + j] = acc;
                    }
                }
            }
            for j in 0..n {
                let w = unpack(&y[off_w + 4 * j..]);
                let dtheta = (0..n).fold(Matrix2::zeros(), |acc: Matrix2<C64>, m| acc + jet.grad[m].theta * C64::new(f[m * n + j], 0.0));
                pack(&((dtheta * v + theta * w) * -I), &mut dy[off_w + 4 * j..]);
            }
        }
        if dy.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t });
        }
        Ok(())
    };
    let ys = integrate(rhs, times[0], &y0, times, &opts.classical.ode)?;
    let mut frame = TransportedFrame {
        level,
        times: times.to_vec(),
        states: Vec::with_capacity(times.len()),
        vectors: Vec::with_capacity(times.len()),
        gradients: Vec::new(),
    };
    for y in &ys {
        frame.states.push(PhasePoint::from_slice(&y[..n]));
        frame.vectors.push(unpack(&y[off_v..]));
        if with_grad {
            let f = DMatrix::from_row_slice(n, n, &y[off_f..off_w]);
            let finv = f.try_inverse().ok_or(Error::NearSingular { condition: f64::INFINITY, context: "flow Jacobian".into() })?;
            let w: Vec<Vector2<C64>> = (0..n).map(|j| unpack(&y[off_w + 4 * j..])).collect();
            let grads = (0..n)
                .map(|m| (0..n).fold(Vector2::zeros(), |acc, j| acc + w[j] * C64::new(finv[(j, m)], 0.0)))
                .collect();
            frame.gradients.push(grads);
        }
    }
    Ok(frame)
}

/// Parallel transport of `v0` along the trajectory of `record`, which must
/// follow `level`.
pub fn parallel_transport(
    symbol: &HermitianSymbol,
    level: usize,
    v0: Vector2<C64>,
    record: &crate::classical::TrajectoryRecord,
    opts: &AdiabaticOptions,
) -> Result<TransportedFrame> {
    if record.is_empty() {
        return Err(Error::InvalidParameter("empty trajectory".into()));
    }
    transport_along(symbol, level, &record.states[0], v0, None, &record.times, opts)
}

/// `||(H - h) V||` for a transported frame.
pub fn eigen_defect(symbol: &HermitianSymbol, frame: &TransportedFrame) -> Result<f64> {
    let (h, _) = levels_of(symbol, frame.level)?;
    let mut worst: f64 = 0.0;
    for ((&t, z), v) in frame.times.iter().zip(&frame.states).zip(&frame.vectors) {
        let m = symbol.eval(t, z);
        let hv = h.value(t, z);
        let r0 = m[(0, 0)] * v[0] + m[(0, 1)] * v[1] - v[0] * hv;
        let r1 = m[(1, 0)] * v[0] + m[(1, 1)] * v[1] - v[1] * hv;
        worst = worst.max((r0.norm_sqr() + r1.norm_sqr()).sqrt());
    }
    Ok(worst)
}

/// Herman–Kluk sum on one gapped level, each node carrying its transported
/// eigenvector.
#[derive(Debug)]
pub struct AdiabaticHk {
    pub level: usize,
    pub scalar: HkPropagation,
    /// `V(t, t0, Phi(z_j))` per retained term and output time.
    pub frames: Vec<Vec<Vector2<C64>>>,
}

impl AdiabaticHk {
    pub fn eps(&self) -> f64 {
        self.scalar.eps
    }

    /// Two-component synthesis at output index `i`.
    pub fn synthesize(&self, i: usize, grid: &Grid1D) -> Result<GridFunction> {
        let eps = self.scalar.eps;
        let n = grid.n;
        let items: Vec<(&HkBranchTerm, &Vec<Vector2<C64>>)> = self.scalar.terms.iter().zip(&self.frames).collect();
        let values = sum_chunked(&items, 2 * n, |(term, frame), buf| {
            let g = GaussianWavePacket::standard(eps, term.record.states[i].clone())?;
            let a = term.amplitude(i, eps);
            let v = frame[i];
            let (b0, b1) = buf.split_at_mut(n);
            g.accumulate(grid, a * v[0], b0);
            g.accumulate(grid, a * v[1], b1);
            Ok(())
        })?;
        let (c0, c1) = values.split_at(n);
        Ok(GridFunction { grid: *grid, eps, values: vec![c0.to_vec(), c1.to_vec()] })
    }

    /// Squared norm from closed-form overlaps.
    pub fn norm_squared(&self, i: usize) -> Result<f64> {
        let eps = self.scalar.eps;
        let packets: Vec<GaussianWavePacket> = self
            .scalar
            .terms
            .iter()
            .zip(&self.frames)
            .map(|(t, f)| {
                let mut g = GaussianWavePacket::standard(eps, t.record.states[i].clone())?.with_vector([f[i][0], f[i][1]]);
                g.amplitude *= t.amplitude(i, eps);
                Ok(g)
            })
            .collect::<Result<_>>()?;
        let mut acc = 0.0;
        for a in &packets {
            for b in &packets {
                acc += wavepackets::overlap(a, b)?.re;
            }
        }
        Ok(acc)
    }
}

/// Adiabatic Herman–Kluk propagation of `V0 v0` on `level`: `coeffs` are
/// the frame coefficients of the scalar profile `v0` at the rule nodes and
/// `v0_field` the initial eigenvector field, sampled at each node.
pub fn propagate_hk_adiabatic(
    symbol: &HermitianSymbol,
    level: usize,
    v0_field: &(dyn Fn(&PhasePoint) -> Vector2<C64> + Sync),
    rule: &QuadratureRule,
    coeffs: &[C64],
    eps: f64,
    times: &[f64],
    opts: &AdiabaticOptions,
) -> Result<AdiabaticHk> {
    if coeffs.len() != rule.len() {
        return Err(Error::InvalidParameter("coefficients and nodes differ in length".into()));
    }
    let (h, _) = levels_of(symbol, level)?;
    let results: Vec<Result<(HkBranchTerm, Vec<Vector2<C64>>)>> = rule
        .nodes
        .par_iter()
        .zip(coeffs.par_iter())
        .zip(rule.weights.par_iter())
        .map(|((z, &c), &w)| {
            let mut record = propagate(&h, z, times, &opts.classical)?;
            record.level = level;
            let prefactor = prefactors_along(&h, &record, &opts.classical)?;
            let frame = transport_along(symbol, level, z, v0_field(z), None, times, opts)?;
            Ok((HkBranchTerm { node: z.clone(), coefficient: c, weight: w, record, prefactor }, frame.vectors))
        })
        .collect();
    let mut frames = Vec::with_capacity(results.len());
    let scalar_results: Vec<Result<HkBranchTerm>> = results
        .into_iter()
        .map(|r| {
            r.map(|(term, f)| {
                frames.push(f);
                term
            })
        })
        .collect();
    let scalar = collect_terms(scalar_results, rule, coeffs, eps, times)?;
    Ok(AdiabaticHk { level, scalar, frames })
}

/// `(2 pi eps)^{-d}` for a rule of phase-space dimension `2d`.
/// Transported toy-model eigenvector `e^{-i theta tau/2} V_sign(x)` after
/// time `tau`, at the current position `x`.
pub fn toy_transport_closed_form(m: &ToyModel, sign: f64, tau: f64, x: f64) -> Vector2<C64> {
    m.eigenvector(sign, x) * C64::from_polar(1.0, -m.theta * tau / 2.0)
}

pub fn frame_normalization(eps: f64, d: usize) -> f64 {
    (2.0 * PI * eps).powi(-(d as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::propagate_to;
    use crate::grid::Grid1D;
    use crate::hamiltonians::{build_toy_model, DiagonalPair, ToyModel};
    use crate::hk_scalar::propagate_hk;
    use crate::ode::OdeOptions;
    use crate::wavepackets::{default_rule, evaluate};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn max_abs(m: &Matrix2<C64>) -> f64 {
        m.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    fn vmax(v: &Vector2<C64>) -> f64 {
        v.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    fn tight() -> AdiabaticOptions {
        AdiabaticOptions { classical: ClassicalOptions::numeric(OdeOptions::with_tolerance(1e-12)), ..Default::default() }
    }

    fn diagonal() -> HermitianSymbol {
        HermitianSymbol::Diagonal(DiagonalPair { lower: ScalarHamiltonian::torus(1.0), gap: 2.0 })
    }

    #[test]
    fn toy_matrices_match_closed_form() {
        let (k, th) = (1.3, 0.7);
        let s = build_toy_model(k, th).unwrap();
        for &(x, p) in &[(-2.0, 0.3), (0.8, -1.0), (3.1, 2.0)] {
            let z = PhasePoint::one(x, p);
            let e = C64::from_polar(1.0, th * x);
            for (level, sign) in [(0usize, -1.0), (1, 1.0)] {
                let tm = transport_matrices(&s, level, 0.0, &z, GAP_THRESHOLD).unwrap();
                assert!(max_abs(&tm.omega) < 1e-14);
                // level sign s: K = (i theta / 4) [[1, s e], [-s conj(e), -1]]
                let want = Matrix2::new(c(1.0, 0.0), e * sign, -e.conj() * sign, c(-1.0, 0.0)) * c(0.0, th / 4.0);
                assert!(max_abs(&(tm.k - want)) < 1e-14, "level {level}: {} vs {}", tm.k, want);
                let theta = Matrix2::new(c(-th / 2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(th / 2.0, 0.0));
                assert!(max_abs(&(tm.theta - theta)) < 1e-14);
            }
        }
    }

    #[test]
    fn constant_eigenbasis_has_trivial_transport() {
        let s = diagonal();
        for level in 0..2 {
            let tm = transport_matrices(&s, level, 0.0, &PhasePoint::one(0.4, -0.2), GAP_THRESHOLD).unwrap();
            assert_eq!(max_abs(&tm.omega) + max_abs(&tm.k) + max_abs(&tm.theta), 0.0);
        }
    }

    #[test]
    fn gap_threshold_is_enforced() {
        let s = build_toy_model(1.0, 0.5).unwrap();
        let r = transport_matrices(&s, 0, 0.0, &PhasePoint::one(1e-8, 0.0), GAP_THRESHOLD);
        assert!(matches!(r, Err(Error::CrossingProximity { .. })));
        assert!(transport_matrices(&s, 0, 0.0, &PhasePoint::one(1e-8, 0.0), 1e-9).is_ok());
        let scalar = HermitianSymbol::Scalar(ScalarHamiltonian::free(1));
        assert!(matches!(transport_matrices(&scalar, 0, 0.0, &PhasePoint::one(1.0, 0.0), 1e-6), Err(Error::NotTwoLevel)));
    }

    #[test]
    fn jet_gradient_matches_finite_differences() {
        let s = build_toy_model(0.9, 1.4).unwrap();
        let z = PhasePoint::one(-1.1, 0.6);
        let step = 1e-6;
        for level in 0..2 {
            let jet = transport_jet(&s, level, 0.0, &z, GAP_THRESHOLD).unwrap();
            for m in 0..2 {
                let plus = transport_matrices(&s, level, 0.0, &z.perturbed(m, step), GAP_THRESHOLD).unwrap();
                let minus = transport_matrices(&s, level, 0.0, &z.perturbed(m, -step), GAP_THRESHOLD).unwrap();
                let fd_k = (plus.k - minus.k) / c(2.0 * step, 0.0);
                let fd_t = (plus.theta - minus.theta) / c(2.0 * step, 0.0);
                assert!(max_abs(&(fd_k - jet.grad[m].k)) < 1e-8);
                assert!(max_abs(&(fd_t - jet.grad[m].theta)) < 1e-8);
            }
            assert_eq!(jet.value, transport_matrices(&s, level, 0.0, &z, GAP_THRESHOLD).unwrap());
        }
    }

    #[test]
    fn toy_transport_matches_closed_form() {
        let m = ToyModel::new(1.0, 0.5).unwrap();
        let s = HermitianSymbol::Toy(m);
        let times: Vec<f64> = (0..=50).map(|i| -2.0 + 0.1 * i as f64).collect();
        for (level, sign) in [(0usize, -1.0), (1, 1.0)] {
            let z0 = PhasePoint::one(-6.0, 0.3);
            let frame = transport_along(&s, level, &z0, m.eigenvector(sign, -6.0), None, &times, &tight()).unwrap();
            for i in 0..frame.len() {
                let x = frame.states[i].q[0];
                assert!((x - (-6.0 + times[i] - times[0])).abs() < 1e-10);
                let want = toy_transport_closed_form(&m, sign, times[i] - times[0], x);
                assert!(vmax(&(frame.vectors[i] - want)) < 1e-8);
            }
            assert!(eigen_defect(&s, &frame).unwrap() < 1e-8);
        }
    }

    #[test]
    fn transport_with_gradient_matches_field_derivative() {
        let m = ToyModel::new(1.2, 0.8).unwrap();
        let s = HermitianSymbol::Toy(m);
        let x0 = -3.0;
        let dv0 = vec![Vector2::new(c(0.0, m.theta) * m.eigenvector(-1.0, x0)[0], c(0.0, 0.0)), Vector2::zeros()];
        let times = [0.0, 1.0, 2.5];
        let frame = transport_along(&s, 0, &PhasePoint::one(x0, 0.4), m.eigenvector(-1.0, x0), Some(&dv0), &times, &tight()).unwrap();
        for i in 0..times.len() {
            let x = frame.states[i].q[0];
            let want = toy_transport_closed_form(&m, -1.0, times[i], x)[0] * c(0.0, m.theta);
            assert!((frame.gradients[i][0][0] - want).norm() < 1e-8);
            assert!(frame.gradients[i][0][1].norm() < 1e-8);
            assert!(vmax(&frame.gradients[i][1]) < 1e-8);
        }
    }

    #[test]
    fn transport_at_initial_time_is_identity() {
        let m = ToyModel::new(1.0, 0.5).unwrap();
        let v0 = m.eigenvector(-1.0, -2.0);
        let f = transport_along(&HermitianSymbol::Toy(m), 0, &PhasePoint::one(-2.0, 0.0), v0, None, &[1.0], &tight()).unwrap();
        assert_eq!(f.vectors[0], v0);
    }

    #[test]
    fn norm_is_preserved_over_long_runs() {
        let m = ToyModel::new(0.7, 1.1).unwrap();
        let s = HermitianSymbol::Toy(m);
        let rec = propagate_to(&s.level(0).unwrap(), &PhasePoint::one(-12.0, 0.5), 0.0, 10.0, &ClassicalOptions::default()).unwrap();
        let frame = parallel_transport(&s, 0, m.eigenvector(-1.0, -12.0), &rec, &AdiabaticOptions::default()).unwrap();
        for v in &frame.vectors {
            assert!((v.norm() - 1.0).abs() < 1e-10);
        }
        assert!((frame.states[1].q[0] - rec.states[1].q[0]).abs() < 1e-9);
    }

    fn toy_data(eps: f64, q0: f64, p0: f64) -> (ToyModel, GridFunction) {
        let m = ToyModel::new(1.0, 0.5).unwrap();
        let grid = Grid1D::covering(q0 + 1.0, 3.5, 1024).unwrap();
        let v0 = evaluate(&GaussianWavePacket::standard(eps, PhasePoint::one(q0, p0)).unwrap(), &grid).unwrap();
        (m, v0)
    }

    #[test]
    fn adiabatic_hk_at_initial_time_is_frame_reconstruction() {
        let eps = 0.1;
        let (m, v0) = toy_data(eps, -3.0, 0.0);
        let s = HermitianSymbol::Toy(m);
        let (rule, coeffs) = default_rule(&v0, 0).unwrap();
        let field = move |z: &PhasePoint| m.eigenvector(-1.0, z.q[0]);
        let out = propagate_hk_adiabatic(&s, 0, &field, &rule, &coeffs, eps, &[0.0], &AdiabaticOptions::default()).unwrap();
        let got = out.synthesize(0, &v0.grid).unwrap();
        // each node carries V0 at its own centre
        let mut want = GridFunction::zeros(v0.grid, eps, 2);
        let norm = frame_normalization(eps, 1);
        for ((z, &cj), &w) in rule.nodes.iter().zip(&coeffs).zip(&rule.weights) {
            let g = GaussianWavePacket::standard(eps, z.clone()).unwrap();
            let v = m.eigenvector(-1.0, z.q[0]);
            let (a, b) = want.values.split_at_mut(1);
            g.accumulate(&v0.grid, cj * w * norm * v[0], &mut a[0]);
            g.accumulate(&v0.grid, cj * w * norm * v[1], &mut b[0]);
        }
        assert!(got.sub(&want).unwrap().norm() < 1e-12);
        // the anti-Wick approximation of V0 v0 is O(eps)
        let mut exact = GridFunction::zeros(v0.grid, eps, 2);
        for j in 0..v0.grid.n {
            let v = m.eigenvector(-1.0, v0.grid.x(j));
            exact.values[0][j] = v[0] * v0.values[0][j];
            exact.values[1][j] = v[1] * v0.values[0][j];
        }
        assert!(got.sub(&exact).unwrap().norm() < 0.05);
        assert!((out.norm_squared(0).unwrap() - got.norm_squared()).abs() < 1e-6);
    }

    #[test]
    fn diagonal_symbol_reduces_to_scalar_hk() {
        let eps = 0.1;
        let (_, v0) = toy_data(eps, 0.5, 0.2);
        let s = diagonal();
        let (rule, coeffs) = default_rule(&v0, 0).unwrap();
        let times = [0.0, 0.7];
        let opts = AdiabaticOptions::default();
        let field = |_: &PhasePoint| Vector2::new(c(1.0, 0.0), c(0.0, 0.0));
        let out = propagate_hk_adiabatic(&s, 0, &field, &rule, &coeffs, eps, &times, &opts).unwrap();
        let scalar = propagate_hk(&s.level(0).unwrap(), &rule, &coeffs, eps, &times, &opts.classical).unwrap();
        let a = out.synthesize(1, &v0.grid).unwrap();
        let b = scalar.synthesize(1, &v0.grid).unwrap();
        assert!(a.component(0).sub(&b).unwrap().norm() < 1e-12);
        assert_eq!(a.component_norm(1), 0.0);
        // the upper level of the pair evolves as the shifted scalar run
        let field1 = |_: &PhasePoint| Vector2::new(c(0.0, 0.0), c(1.0, 0.0));
        let up = propagate_hk_adiabatic(&s, 1, &field1, &rule, &coeffs, eps, &times, &opts).unwrap();
        let up_scalar = propagate_hk(&s.level(1).unwrap(), &rule, &coeffs, eps, &times, &opts.classical).unwrap();
        let a = up.synthesize(1, &v0.grid).unwrap();
        assert!(a.component(1).sub(&up_scalar.synthesize(1, &v0.grid).unwrap()).unwrap().norm() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn theta_is_hermitian_and_omega_skew(
            k in prop_oneof![-3.0..-0.1f64, 0.1..3.0f64],
            th in 0.0..3.0f64,
            x in prop_oneof![-5.0..-0.01f64, 0.01..5.0f64],
            p in -5.0..5.0f64,
            level in 0usize..2,
        ) {
            let s = build_toy_model(k, th).unwrap();
            let tm = transport_matrices(&s, level, 0.0, &PhasePoint::one(x, p), GAP_THRESHOLD).unwrap();
            prop_assert!(max_abs(&(tm.theta - tm.theta.adjoint())) <= 1e-12);
            prop_assert!(max_abs(&(tm.omega + tm.omega.adjoint())) <= 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn transport_is_gauge_covariant(alpha in 0.0..(2.0 * PI), q in -6.0..-1.0f64, th in 0.0..2.0f64) {
            let m = ToyModel::new(1.0, th).unwrap();
            let s = HermitianSymbol::Toy(m);
            let v0 = m.eigenvector(-1.0, q);
            let ph = C64::from_polar(1.0, alpha);
            let times = [0.0, 0.5, 0.9];
            let opts = AdiabaticOptions::default();
            let a = transport_along(&s, 0, &PhasePoint::one(q, 0.0), v0 * ph, None, &times, &opts).unwrap();
            let b = transport_along(&s, 0, &PhasePoint::one(q, 0.0), v0, None, &times, &opts).unwrap();
            for (va, vb) in a.vectors.iter().zip(&b.vectors) {
                prop_assert!(vmax(&(va - vb * ph)) <= 1e-10);
            }
        }
    }
}
