//! Oracle solvers: Strang/Yoshida split-step for `-eps^2/2 d_xx + V(x)`,
//! the characteristic solver for the toy crossing model, and the two-term
//! small-`eps` asymptotics of the toy model's transport ODE.
//!
//! Nothing here calls into the semiclassical propagators; only the symbol
//! catalog, the grid types and the generic ODE integrator are shared.

use std::f64::consts::PI;

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid1D, GridFunction, Spectral};
use crate::hamiltonians::{ScalarHamiltonian, ToyModel};
use crate::ode::{integrate, OdeOptions};

type C64 = Complex64;

const I: C64 = C64::new(0.0, 1.0);

/// Potential sampled on the grid.
#[derive(Debug, Clone)]
pub enum Potential {
    Scalar(Vec<f64>),
    /// Hermitian 2x2 matrix per node.
    Matrix(Vec<Matrix2<C64>>),
}

impl Potential {
    /// `V` of a Schrödinger-form catalog entry sampled on `grid`.
    pub fn from_hamiltonian(h: &ScalarHamiltonian, grid: &Grid1D) -> Result<Self> {
        if h.dim() != 1 {
            return Err(Error::InvalidParameter("split-step reference is one-dimensional".into()));
        }
        grid.points()
            .into_iter()
            .map(|x| h.potential(x).ok_or_else(|| Error::InvalidParameter("Hamiltonian is not of the form p^2/2 + V(q)".into())))
            .collect::<Result<Vec<_>>>()
            .map(Potential::Scalar)
    }

    fn levels(&self) -> usize {
        match self {
            Potential::Scalar(_) => 1,
            Potential::Matrix(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplittingOrder {
    Second,
    /// Triple-jump composition of the Strang step.
    Fourth,
}

#[derive(Debug, Clone)]
pub struct SplitStepConfig {
    pub dt: f64,
    pub order: SplittingOrder,
    pub potential: Potential,
}

/// `exp(-i tau V)` for a Hermitian 2x2 `V`.
fn hermitian_exp(v: &Matrix2<C64>, tau: f64) -> Matrix2<C64> {
    let a = 0.5 * (v[(0, 0)].re + v[(1, 1)].re);
    let bz = 0.5 * (v[(0, 0)].re - v[(1, 1)].re);
    let bx = v[(0, 1)].re;
    let by = -v[(0, 1)].im;
    let b = (bx * bx + by * by + bz * bz).sqrt();
    let (s, c) = (b * tau).sin_cos();
    let sinc = if b > 0.0 { s / b } else { tau };
    let ph = C64::from_polar(1.0, -a * tau);
    let m = Matrix2::new(
        C64::new(c, -sinc * bz),
        C64::new(-sinc * by, -sinc * bx),
        C64::new(sinc * by, -sinc * bx),
        C64::new(c, sinc * bz),
    );
    m * ph
}

struct Stepper {
    spectral: Spectral,
    eps: f64,
    potential: Potential,
}

impl Stepper {
    fn potential_step(&self, psi: &mut [Vec<C64>], tau: f64) {
        match &self.potential {
            Potential::Scalar(v) => {
                for (x, &vj) in psi[0].iter_mut().zip(v) {
                    *x *= C64::from_polar(1.0, -vj * tau / self.eps);
                }
            }
            Potential::Matrix(v) => {
                for (j, vj) in v.iter().enumerate() {
                    let e = hermitian_exp(vj, tau / self.eps);
                    let (a, b) = (psi[0][j], psi[1][j]);
                    psi[0][j] = e[(0, 0)] * a + e[(0, 1)] * b;
                    psi[1][j] = e[(1, 0)] * a + e[(1, 1)] * b;
                }
            }
        }
    }

    fn kinetic_step(&self, psi: &mut [Vec<C64>], tau: f64) {
        let eps = self.eps;
        for comp in psi.iter_mut() {
            self.spectral.apply_multiplier(comp, |k| C64::from_polar(1.0, -0.5 * eps * k * k * tau));
        }
    }

    fn strang(&self, psi: &mut [Vec<C64>], tau: f64) {
        self.potential_step(psi, 0.5 * tau);
        self.kinetic_step(psi, tau);
        self.potential_step(psi, 0.5 * tau);
    }
}

/// Split-step propagation from `times[0]`; returns the state at every
/// output time. The step is shortened so that every output time is hit.
pub fn split_step(config: &SplitStepConfig, psi0: &GridFunction, times: &[f64]) -> Result<Vec<GridFunction>> {
    if !(config.dt > 0.0) {
        return Err(Error::InvalidParameter("time step must be positive".into()));
    }
    if psi0.levels() != config.potential.levels() {
        return Err(Error::GridMismatch("potential and data have different component counts".into()));
    }
    let n_pot = match &config.potential {
        Potential::Scalar(v) => v.len(),
        Potential::Matrix(v) => v.len(),
    };
    if n_pot != psi0.grid.n {
        return Err(Error::GridMismatch("potential is sampled on a different grid".into()));
    }
    let edge = psi0.edge_mass(0.02);
    if edge > 1e-12 {
        log::warn!("split-step data carries {edge:e} of its mass near the grid edges");
    }
    let st = Stepper { spectral: Spectral::new(&psi0.grid), eps: psi0.eps, potential: config.potential.clone() };
    let w1 = 1.0 / (2.0 - 2f64.powf(1.0 / 3.0));
    let w0 = 1.0 - 2.0 * w1;
    let mut psi = psi0.values.clone();
    let mut t = times[0];
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        let span = target - t;
        if span < 0.0 {
            return Err(Error::InvalidParameter("split-step output times must increase".into()));
        }
        let steps = (span / config.dt).ceil() as usize;
        if steps > 0 {
            let tau = span / steps as f64;
            for _ in 0..steps {
                match config.order {
                    SplittingOrder::Second => st.strang(&mut psi, tau),
                    SplittingOrder::Fourth => {
                        st.strang(&mut psi, w1 * tau);
                        st.strang(&mut psi, w0 * tau);
                        st.strang(&mut psi, w1 * tau);
                    }
                }
            }
        }
        t = target;
        out.push(GridFunction { grid: psi0.grid, eps: psi0.eps, values: psi.clone() });
    }
    Ok(out)
}

/// Configuration of the characteristic solver for the toy model.
#[derive(Debug, Clone, Copy)]
pub struct CharacteristicSolverConfig {
    pub model: ToyModel,
    pub ode: OdeOptions,
    /// Points where the shifted data is below this fraction of its peak
    /// are set to zero.
    pub cutoff: f64,
}

impl CharacteristicSolverConfig {
    pub fn new(model: ToyModel) -> Self {
        Self { model, ode: OdeOptions { rtol: 1e-12, atol: 1e-14, ..OdeOptions::default() }, cutoff: 1e-15 }
    }
}

/// Propagator of `i eps d eta/d sigma = k sigma V_theta(sigma) eta` between
/// arbitrary points, assembled from one table of the interaction-picture
/// matrix `B(sigma) = B(sigma, 0)`.
///
/// In the eigenbasis `P(sigma) = [v_+, v_-]` of `V_theta` and with the phase
/// `lambda = k sigma^2 / 2` removed,
/// `eta = P diag(e^{-i lambda/eps}, e^{i lambda/eps}) e^{-i theta sigma/2} b`
/// and `b' = -i (theta/2) [[0, e^{2i lambda/eps}], [e^{-2i lambda/eps}, 0]] b`.
pub struct ToyPropagatorTable {
    model: ToyModel,
    eps: f64,
    sigmas: Vec<f64>,
    b: Vec<Matrix2<C64>>,
}

impl ToyPropagatorTable {
    /// Integrates `B` to every point of `sigmas` (any order).
    pub fn build(model: ToyModel, eps: f64, sigmas: &[f64], ode: &OdeOptions) -> Result<Self> {
        let mut order: Vec<usize> = (0..sigmas.len()).collect();
        order.sort_by(|&a, &b| sigmas[a].total_cmp(&sigmas[b]));
        let mut b = vec![Matrix2::identity(); sigmas.len()];
        let (k, th) = (model.k, model.theta);
        let rhs = |s: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
            // y holds B row-major as (re, im) pairs
            let e = C64::from_polar(1.0, k * s * s / eps);
            let g01 = -I * (0.5 * th) * e;
            let g10 = -I * (0.5 * th) * e.conj();
            let m = |r: usize, c: usize| C64::new(y[2 * (2 * r + c)], y[2 * (2 * r + c) + 1]);
            let out = [g01 * m(1, 0), g01 * m(1, 1), g10 * m(0, 0), g10 * m(0, 1)];
            for (i, v) in out.iter().enumerate() {
                dy[2 * i] = v.re;
                dy[2 * i + 1] = v.im;
            }
            Ok(())
        };
        let id = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let split = order.partition_point(|&i| sigmas[i] < 0.0);
        let neg: Vec<usize> = order[..split].iter().rev().copied().collect();
        let pos: Vec<usize> = order[split..].to_vec();
        for idx in [neg, pos] {
            if idx.is_empty() {
                continue;
            }
            let outs: Vec<f64> = idx.iter().map(|&i| sigmas[i]).collect();
            let ys = integrate(rhs, 0.0, &id, &outs, ode)?;
            for (&i, y) in idx.iter().zip(ys) {
                b[i] = Matrix2::new(
                    C64::new(y[0], y[1]),
                    C64::new(y[2], y[3]),
                    C64::new(y[4], y[5]),
                    C64::new(y[6], y[7]),
                );
            }
        }
        Ok(Self { model, eps, sigmas: sigmas.to_vec(), b })
    }

    fn frame(&self, s: f64) -> Matrix2<C64> {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let e = C64::from_polar(r, self.model.theta * s);
        Matrix2::new(e, e, C64::new(r, 0.0), C64::new(-r, 0.0))
    }

    fn phases(&self, s: f64) -> Matrix2<C64> {
        let l = 0.5 * self.model.k * s * s / self.eps;
        Matrix2::new(C64::from_polar(1.0, -l), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::from_polar(1.0, l))
    }

    /// `R(sigmas[i], sigmas[j])`.
    pub fn propagator(&self, i: usize, j: usize) -> Matrix2<C64> {
        let (s, s0) = (self.sigmas[i], self.sigmas[j]);
        let bij = self.b[i] * inverse2(&self.b[j]);
        let drift = C64::from_polar(1.0, -0.5 * self.model.theta * (s - s0));
        self.frame(s) * self.phases(s) * bij * self.phases(s0).adjoint() * self.frame(s0).adjoint() * drift
    }
}

fn inverse2(m: &Matrix2<C64>) -> Matrix2<C64> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det
}

/// Exact toy-model solution `psi(t, x) = R(x, x - (t - t0)) psi0(x - (t - t0))`
/// at every output time; the shifted data is obtained spectrally.
pub fn solve_toy_exact(config: &CharacteristicSolverConfig, psi0: &GridFunction, times: &[f64]) -> Result<Vec<GridFunction>> {
    if psi0.levels() != 2 {
        return Err(Error::InvalidParameter("toy-model data has two components".into()));
    }
    let grid = psi0.grid;
    let sp = Spectral::new(&grid);
    let t0 = times[0];
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let shift = t - t0;
        let mut shifted = psi0.values.clone();
        if shift != 0.0 {
            for comp in shifted.iter_mut() {
                sp.shift(comp, shift);
            }
        }
        let peak = shifted.iter().flat_map(|c| c.iter()).map(|v| v.norm()).fold(0.0, f64::max);
        let active: Vec<usize> = (0..grid.n)
            .filter(|&j| shifted[0][j].norm().max(shifted[1][j].norm()) > config.cutoff * peak)
            .collect();
        let mut res = GridFunction::zeros(grid, psi0.eps, 2);
        if shift == 0.0 {
            res.values = shifted;
            out.push(res);
            continue;
        }
        let mut sigmas = Vec::with_capacity(2 * active.len());
        for &j in &active {
            sigmas.push(grid.x(j));
            sigmas.push(grid.x(j) - shift);
        }
        let table = ToyPropagatorTable::build(config.model, psi0.eps, &sigmas, &config.ode)?;
        for (a, &j) in active.iter().enumerate() {
            let r = table.propagator(2 * a, 2 * a + 1);
            let (u, v) = (shifted[0][j], shifted[1][j]);
            res.values[0][j] = r[(0, 0)] * u + r[(0, 1)] * v;
            res.values[1][j] = r[(1, 0)] * u + r[(1, 1)] * v;
        }
        out.push(res);
    }
    Ok(out)
}

/// Propagator `R(sigma, sigma0)` of the transport ODE by direct integration
/// in the original variables (slow; used to validate the table).
pub fn toy_propagator_direct(model: ToyModel, eps: f64, sigma0: f64, sigma: f64, ode: &OdeOptions) -> Result<Matrix2<C64>> {
    let rhs = |s: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let v = model.coupling(s) * C64::new(model.k * s / eps, 0.0);
        for col in 0..2 {
            let a = C64::new(y[4 * col], y[4 * col + 1]);
            let b = C64::new(y[4 * col + 2], y[4 * col + 3]);
            let da = -I * (v[(0, 0)] * a + v[(0, 1)] * b);
            let db = -I * (v[(1, 0)] * a + v[(1, 1)] * b);
            dy[4 * col] = da.re;
            dy[4 * col + 1] = da.im;
            dy[4 * col + 2] = db.re;
            dy[4 * col + 3] = db.im;
        }
        Ok(())
    };
    let y = integrate(rhs, sigma0, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0], &[sigma], ode)?.remove(0);
    Ok(Matrix2::new(C64::new(y[0], y[1]), C64::new(y[4], y[5]), C64::new(y[2], y[3]), C64::new(y[6], y[7])))
}

/// Two-term small-`eps` value of `eta(sigma)` for
/// `eta(sigma0) = a0 v_-(sigma0)`, `sigma0 < 0 < sigma`:
/// the adiabatic term on `v_-` plus the `sqrt(eps)` transition term on `v_+`
/// produced by the stationary point of `e^{i k s^2/eps}` at `s = 0`.
pub fn friedrichs_asymptotic(model: ToyModel, eps: f64, sigma0: f64, sigma: f64, a0: C64) -> Result<[C64; 2]> {
    if !(sigma0 < 0.0 && sigma > 0.0) {
        return Err(Error::InvalidParameter("need sigma0 < 0 < sigma".into()));
    }
    let (k, th) = (model.k, model.theta);
    let l = 0.5 * k * sigma * sigma / eps;
    let l0 = 0.5 * k * sigma0 * sigma0 / eps;
    let drift = C64::from_polar(1.0, -0.5 * th * (sigma - sigma0));
    let adiabatic = a0 * C64::from_polar(1.0, l - l0) * drift;
    let transition = a0 * eps.sqrt() * transition_coefficient(model) * C64::from_polar(1.0, -l - l0) * drift;
    let vp = model.eigenvector(1.0, sigma);
    let vm = model.eigenvector(-1.0, sigma);
    Ok([vm[0] * adiabatic + vp[0] * transition, vm[1] * adiabatic + vp[1] * transition])
}

/// Coefficient `C` of the transition term `sqrt(eps) C` on `v_+`:
/// `-i (theta/2) sqrt(pi/|k|) e^{i pi sgn(k)/4}`.
pub fn transition_coefficient(model: ToyModel) -> C64 {
    let k = model.k;
    -I * (0.5 * model.theta) * (PI / k.abs()).sqrt() * C64::from_polar(1.0, 0.25 * PI * k.signum())
}
