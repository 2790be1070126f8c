//! Smooth eigenvalue crossings: detection along trajectories, the
//! transition operator, hopping branches, the two-branch wave-packet
//! propagator and the two-branch Herman–Kluk sum for the toy model.
//!
//! The transition operator is
//! `T_{mu,alpha,beta} phi(y) = int e^{i(mu - alpha.beta/2)s^2} e^{i s beta.y} phi(y - s alpha) ds`.
//! On a Gaussian `e^{(i/2) y.Gamma y}` it acts by completing the square:
//! with `A = mu - alpha.beta/2 + alpha.Gamma alpha/2` and `b = beta - Gamma alpha`,
//! the result is `sqrt(pi/(-iA)) e^{(i/2) y.Gamma' y}` with
//! `Gamma' = Gamma - b b^T / (2A)`.
//!
//! The hopped branch uses the effective operator `T_{2 s mu, 2 s alpha, 2 s beta}`
//! (`s = +1` when the outgoing level is `v + f`) and the outgoing eigenvector
//! seed `V2 = gamma^{-1} Pi2 (d_t Pi2 + {v, Pi2}) V1`; both are checked against
//! the exact toy-model solution.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use num_complex::Complex64;
use rayon::prelude::*;


use crate::adiabatic::{propagate_hk_adiabatic, transport_along, AdiabaticHk, AdiabaticOptions, TransportedFrame};
use crate::classical::{propagate, propagate_to, ClassicalOptions, PhasePoint, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::grid::{Grid1D, GridFunction, Spectral};
use crate::hamiltonians::{HermitianSymbol, ScalarHamiltonian, ToyModel};
use crate::harness::rules::QuadratureRule;
use crate::hk_scalar::{propagate_thawed, sum_chunked};
use crate::linalg::CMatrix;
use crate::wavepackets::{GaussianWavePacket, SiegelMatrix};

type C64 = Complex64;

const I: C64 = C64::new(0.0, 1.0);

/// Smallest admissible `|d_t f + {v, f}|` at a crossing.
pub const TRANSVERSALITY_THRESHOLD: f64 = 1e-8;

/// Target `|f|` at a refined crossing.
const ROOT_TOLERANCE: f64 = 1e-12;

const MAX_ROOT_ITERATIONS: usize = 200;

/// Sampling points used to scan a packet centre for crossings.
const SCAN_POINTS: usize = 256;

/// A crossing of the eigenvalue surface along one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossingEvent {
    pub t_flat: f64,
    pub z_flat: PhasePoint,
    pub mu: f64,
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    pub gamma: f64,
    pub incoming: usize,
    pub outgoing: usize,
    /// `+1` when the outgoing level is `v + f`, `-1` for `v - f`.
    pub sigma: f64,
}

impl CrossingEvent {
    /// The effective operator applied to the incoming profile.
    pub fn effective_operator(&self) -> Result<TransitionOperator> {
        let s = 2.0 * self.sigma;
        TransitionOperator::new(s * self.mu, &self.alpha * s, &self.beta * s)
    }

    /// The operator with the printed parameters `(mu, alpha, beta)`.
    pub fn printed_operator(&self) -> Result<TransitionOperator> {
        TransitionOperator::new(self.mu, self.alpha.clone(), self.beta.clone())
    }

    /// `eps <= |t - t_flat|^{9/2}`.
    pub fn within_validity_window(&self, eps: f64, t: f64) -> bool {
        eps <= (t - self.t_flat).abs().powf(4.5)
    }
}

fn poisson(ga: &DVector<f64>, gb: &DVector<f64>) -> f64 {
    crate::classical::poisson_bracket(ga, gb)
}

fn scalar_bracket(gv: &DVector<f64>, dp: &[Matrix2<C64>]) -> Matrix2<C64> {
    let d = gv.len() / 2;
    (0..d).fold(Matrix2::zeros(), |acc, j| acc + dp[j] * C64::new(gv[d + j], 0.0) - dp[d + j] * C64::new(gv[j], 0.0))
}

fn crossing_value(symbol: &HermitianSymbol, t: f64, z: &PhasePoint) -> Result<(f64, f64)> {
    let sc = symbol.sc_form(t, z).ok_or(Error::NotTwoLevel)?;
    Ok((sc.f, sc.dt_f + poisson(&sc.grad_v, &sc.grad_f)))
}

/// Unit vector spanning the range of a rank-one projector.
fn range_vector(p: &Matrix2<C64>) -> Vector2<C64> {
    let c0 = p.column(0).into_owned();
    let c1 = p.column(1).into_owned();
    let c = if c0.norm() >= c1.norm() { c0 } else { c1 };
    c / C64::new(c.norm(), 0.0)
}

/// `(d_t Pi_out + {v, Pi_out})` at `(t, z)`.
fn transfer_matrix(symbol: &HermitianSymbol, outgoing: usize, t: f64, z: &PhasePoint) -> Result<Matrix2<C64>> {
    let sc = symbol.sc_form(t, z).ok_or(Error::NotTwoLevel)?;
    let jet = symbol.projector_jet(outgoing, t, z)?;
    Ok(jet.dt + scalar_bracket(&sc.grad_v, &jet.grad))
}

/// Crossing parameters at a point of the crossing set.
pub fn crossing_event_at(symbol: &HermitianSymbol, incoming: usize, t: f64, z: &PhasePoint) -> Result<CrossingEvent> {
    let sc = symbol.sc_form(t, z).ok_or(Error::NotTwoLevel)?;
    let outgoing = 1 - incoming;
    let rate = sc.dt_f + poisson(&sc.grad_v, &sc.grad_f);
    if rate.abs() < TRANSVERSALITY_THRESHOLD {
        return Err(Error::NonGenericCrossing { t, rate: rate.abs() });
    }
    let d = symbol.dim();
    let gf = &sc.grad_f;
    // (alpha, beta) = J grad f
    let alpha = DVector::from_iterator(d, (0..d).map(|j| gf[d + j]));
    let beta = DVector::from_iterator(d, (0..d).map(|j| -gf[j]));
    let h_out = symbol.level(outgoing)?;
    let g_out = h_out.gradient(t, z);
    let sigma = if (&g_out - &sc.grad_v).dot(gf) >= 0.0 { 1.0 } else { -1.0 };
    let v1 = range_vector(&symbol.projector_jet(incoming, t, z)?.value);
    let gamma = (transfer_matrix(symbol, outgoing, t, z)? * v1).norm();
    Ok(CrossingEvent { t_flat: t, z_flat: z.clone(), mu: 0.5 * rate, alpha, beta, gamma, incoming, outgoing, sigma })
}

/// All sign changes of `f` along `record` (which follows level
/// `record.level`), refined to `|f| <= 1e-12` and in time order.
pub fn detect_crossings(symbol: &HermitianSymbol, record: &TrajectoryRecord, opts: &ClassicalOptions) -> Result<Vec<CrossingEvent>> {
    if symbol.sc_form(record.times[0], &record.states[0]).is_none() {
        return Err(Error::NotTwoLevel);
    }
    let h = symbol.level(record.level)?;
    let values: Vec<f64> = record
        .times
        .iter()
        .zip(&record.states)
        .map(|(&t, z)| crossing_value(symbol, t, z).map(|v| v.0))
        .collect::<Result<_>>()?;
    let mut events = Vec::new();
    for i in 0..record.len().saturating_sub(1) {
        let (fa, fb) = (values[i], values[i + 1]);
        // a root sitting exactly on a sample belongs to the interval it closes
        if fa == 0.0 && i > 0 {
            continue;
        }
        if fa * fb > 0.0 || (fa == 0.0 && fb == 0.0) {
            continue;
        }
        let (t, z) = if fa == 0.0 {
            (record.times[i], record.states[i].clone())
        } else if fb == 0.0 {
            (record.times[i + 1], record.states[i + 1].clone())
        } else {
            refine_root(symbol, &h, record, i, opts)?
        };
        events.push(crossing_event_at(symbol, record.level, t, &z)?);
    }
    Ok(events)
}

/// The first crossing along `record`, if any.
pub fn detect_crossing(symbol: &HermitianSymbol, record: &TrajectoryRecord, opts: &ClassicalOptions) -> Result<Option<CrossingEvent>> {
    Ok(detect_crossings(symbol, record, opts)?.into_iter().next())
}

/// Safeguarded Newton iteration on `g(t) = f(t, z(t))`, whose derivative
/// along the flow is `d_t f + {v, f}`.
fn refine_root(
    symbol: &HermitianSymbol,
    h: &ScalarHamiltonian,
    record: &TrajectoryRecord,
    i: usize,
    opts: &ClassicalOptions,
) -> Result<(f64, PhasePoint)> {
    let (mut lo, mut hi) = (record.times[i], record.times[i + 1]);
    let base_t = record.times[i];
    let base_z = &record.states[i];
    let eval = |t: f64| -> Result<(f64, f64, PhasePoint)> {
        let z = if t == base_t {
            base_z.clone()
        } else {
            propagate_to(h, base_z, base_t, t, opts)?.last_state().clone()
        };
        let (f, rate) = crossing_value(symbol, t, &z)?;
        Ok((f, rate, z))
    };
    let f_lo = eval(lo)?.0;
    let lo_sign = f_lo.signum();
    let (f_hi0, _, _) = eval(hi)?;
    // start from the secant point
    let mut t = lo - f_lo * (hi - lo) / (f_hi0 - f_lo);
    for _ in 0..MAX_ROOT_ITERATIONS {
        let (f, rate, z) = eval(t)?;
        if f.abs() <= ROOT_TOLERANCE {
            return Ok((t, z));
        }
        if f.signum() == lo_sign {
            lo = t;
        } else {
            hi = t;
        }
        let newton = t - f / rate;
        t = if rate != 0.0 && newton > lo.min(hi) && newton < lo.max(hi) { newton } else { 0.5 * (lo + hi) };
        if (hi - lo).abs() <= 4.0 * f64::EPSILON * t.abs().max(1.0) {
            let (_, _, z) = eval(t)?;
            return Ok((t, z));
        }
    }
    Err(Error::NoConvergence { spread: (hi - lo).abs() })
}

/// `T_{mu, alpha, beta}` with `mu != 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionOperator {
    pub mu: f64,
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
}

impl TransitionOperator {
    pub fn new(mu: f64, alpha: DVector<f64>, beta: DVector<f64>) -> Result<Self> {
        if mu == 0.0 || !mu.is_finite() {
            return Err(Error::DegenerateTransition);
        }
        if alpha.len() != beta.len() {
            return Err(Error::InvalidParameter("alpha and beta differ in dimension".into()));
        }
        Ok(Self { mu, alpha, beta })
    }

    pub fn one(mu: f64, alpha: f64, beta: f64) -> Result<Self> {
        Self::new(mu, DVector::from_element(1, alpha), DVector::from_element(1, beta))
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// `mu - alpha.beta / 2`.
    pub fn chirp(&self) -> f64 {
        self.mu - 0.5 * self.alpha.dot(&self.beta)
    }
}

/// `T e^{(i/2) y.Gamma y} = raw e^{(i/2) y.Gamma' y}`; returns `(raw, Gamma')`.
pub fn transition_raw(op: &TransitionOperator, gamma: &CMatrix) -> Result<(C64, CMatrix)> {
    let d = op.dim();
    if gamma.nrows() != d {
        return Err(Error::InvalidParameter("width and operator dimensions differ".into()));
    }
    let alpha = op.alpha.map(|v| C64::new(v, 0.0));
    let beta = op.beta.map(|v| C64::new(v, 0.0));
    let ga = gamma * &alpha;
    let a = C64::new(op.chirp(), 0.0) + alpha.dot(&ga) * 0.5;
    if a.norm() < 1e-14 {
        return Err(Error::Degenerate("transition quadratic form vanishes".into()));
    }
    if a.im < 0.0 {
        return Err(Error::Degenerate("transition s-integral diverges".into()));
    }
    let b = &beta - ga;
    let gamma_out = gamma - (&b * b.transpose()) / (a * 2.0);
    let raw = (C64::new(PI, 0.0) / (-I * a)).sqrt();
    Ok((raw, gamma_out))
}

/// `T g^Gamma = c g^{Gamma'}` for normalized profiles.
pub fn apply_transition_gaussian(op: &TransitionOperator, gamma: &SiegelMatrix) -> Result<(C64, SiegelMatrix)> {
    let (raw, g_out) = transition_raw(op, gamma.matrix())?;
    let out = SiegelMatrix::symmetrized(g_out)?;
    Ok((raw * gamma.normalization() / out.normalization(), out))
}

/// Settings for the damped-quadrature path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericTransitionOptions {
    /// Largest damping; defaults to `|mu| / 2`.
    pub eta0: Option<f64>,
    /// Number of halvings used in the extrapolation.
    pub levels: usize,
    /// Accepted relative spread between the last two extrapolants.
    pub tolerance: f64,
}

impl Default for NumericTransitionOptions {
    fn default() -> Self {
        Self { eta0: None, levels: 8, tolerance: 1e-5 }
    }
}

/// `T phi` on the grid of `phi` (one-dimensional profile variable `y`)
/// by trapezoidal quadrature of the damped integrand
/// `e^{-eta s^2}` at `eta0 2^{-j}`, extrapolated to `eta = 0`.
pub fn apply_transition_numeric(op: &TransitionOperator, phi: &GridFunction, opts: &NumericTransitionOptions) -> Result<GridFunction> {
    if op.dim() != 1 {
        return Err(Error::InvalidParameter("numeric transition is one-dimensional".into()));
    }
    let grid = phi.grid;
    let (a, alpha, beta) = (op.chirp(), op.alpha[0], op.beta[0]);
    let eta0 = opts.eta0.unwrap_or(0.5 * op.mu.abs());
    let levels = opts.levels.max(2);
    let etas: Vec<f64> = (0..levels).map(|j| eta0 * 0.5f64.powi(j as i32)).collect();
    let dy = grid.dx();
    let y_max = grid.x_min.abs().max(grid.x_max.abs());
    let data = &phi.values[0];
    let l_max = (41.5 / etas[levels - 1]).sqrt();

    // fractional shifts phi(y - r dy / m) for the s-lattice s alpha = j dy / m
    let omega = |l: f64| 2.0 * a.abs() * l + beta.abs() * y_max + alpha.abs() * PI / dy;
    let (ds, m) = if alpha != 0.0 {
        let support = (2.0 * y_max + dy) / alpha.abs();
        let l = l_max.min(support);
        let ds_osc = PI / (2.0 * omega(l));
        let m = ((dy / alpha.abs()) / ds_osc).ceil().max(1.0) as usize;
        (dy / (alpha.abs() * m as f64), m)
    } else {
        (PI / (2.0 * omega(l_max)), 1)
    };
    let shifted: Vec<Vec<C64>> = if alpha != 0.0 {
        let spec = Spectral::new(&grid);
        (0..m)
            .map(|r| {
                let mut v = data.clone();
                spec.shift(&mut v, r as f64 * dy / m as f64);
                v
            })
            .collect()
    } else {
        Vec::new()
    };
    let n = grid.n;
    let sgn = alpha.signum() as i64;

    let per_point: Vec<Vec<C64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let y = grid.x(i);
            etas.iter()
                .map(|&eta| {
                    let l = (41.5 / eta).sqrt();
                    let jmax = (l / ds).ceil() as i64;
                    let mut acc = C64::new(0.0, 0.0);
                    for j in -jmax..=jmax {
                        let s = j as f64 * ds;
                        let phi_val = if alpha != 0.0 {
                            let u = j * sgn;
                            let qt = u.div_euclid(m as i64);
                            let r = u.rem_euclid(m as i64) as usize;
                            let idx = i as i64 - qt;
                            if idx < 0 || idx >= n as i64 {
                                continue;
                            }
                            shifted[r][idx as usize]
                        } else {
                            data[i]
                        };
                        let w = C64::new(-eta * s * s, a * s * s + s * beta * y).exp();
                        acc += w * phi_val;
                    }
                    acc * ds
                })
                .collect()
        })
        .collect();

    let mut out = GridFunction::zeros(grid, phi.eps, 1);
    let mut spread: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (i, vals) in per_point.iter().enumerate() {
        let (best, prev) = neville_at_zero(&etas, vals);
        out.values[0][i] = best;
        spread = spread.max((best - prev).norm());
        scale = scale.max(best.norm());
    }
    if scale > 0.0 && spread / scale > opts.tolerance {
        return Err(Error::NoConvergence { spread: spread / scale });
    }
    Ok(out)
}

/// Polynomial extrapolation to zero; returns the full and the
/// one-point-shorter extrapolants.
fn neville_at_zero(x: &[f64], y: &[C64]) -> (C64, C64) {
    let n = x.len();
    let eval = |k: usize| {
        let mut p: Vec<C64> = y[..k].to_vec();
        for level in 1..k {
            for i in 0..k - level {
                let (xi, xj) = (x[i], x[i + level]);
                p[i] = (p[i] * xj - p[i + 1] * xi) / (xj - xi);
            }
        }
        p[0]
    };
    (eval(n), eval(n - 1))
}

/// Width of the hopped toy-model packet, `i - 2k` in the `g^Gamma`
/// convention (the two-branch formula writes it as `g^{eps, 1-ik}`).
pub fn hopped_width(k: f64) -> SiegelMatrix {
    SiegelMatrix::scalar(C64::new(-2.0 * k, 1.0)).expect("imaginary part is one")
}

/// The printed toy-model transition constant `sqrt(2 pi / (ik)) theta / 2`.
pub fn printed_kappa(k: f64, theta: f64) -> C64 {
    (C64::new(2.0 * PI, 0.0) / (I * k)).sqrt() * (0.5 * theta)
}

/// The printed asymptotic coefficient `-(1 - i) sqrt(pi) (-k)^{-1/2} h(0)`
/// with `h(0) = -i theta / 2`.
pub fn printed_hagedorn_coefficient(k: f64, theta: f64) -> C64 {
    let h0 = -I * (0.5 * theta);
    -C64::new(1.0, -1.0) * PI.sqrt() * C64::new(-k, 0.0).sqrt().inv() * h0
}

/// Outgoing eigenvector seed `gamma^{-1} Pi2 X V1` and its gradient, given
/// `V1` and its gradient at `(t, z)`; `X = d_t Pi2 + {v, Pi2}`.
pub fn outgoing_seed(
    symbol: &HermitianSymbol,
    outgoing: usize,
    t: f64,
    z: &PhasePoint,
    v1: Vector2<C64>,
    dv1: Option<&[Vector2<C64>]>,
) -> Result<(Vector2<C64>, Option<Vec<Vector2<C64>>>)> {
    let sc = symbol.sc_form(t, z).ok_or(Error::NotTwoLevel)?;
    let jet = symbol.projector_jet(outgoing, t, z)?;
    let p2 = jet.value;
    let x = jet.dt + scalar_bracket(&sc.grad_v, &jet.grad);
    let y = p2 * x * v1;
    let gamma = y.norm();
    if gamma == 0.0 {
        return Err(Error::Degenerate("vanishing transfer coefficient".into()));
    }
    let seed = y / C64::new(gamma, 0.0);
    let Some(dv1) = dv1 else {
        return Ok((seed, None));
    };
    // v = (h_0 + h_1) / 2
    let hv: DMatrix<f64> = (symbol.level(0)?.hessian(t, z) + symbol.level(1)?.hessian(t, z)) * 0.5;
    let n = jet.grad.len();
    let grads = (0..n)
        .map(|m| {
            let ddp: Vec<Matrix2<C64>> = (0..n).map(|j| jet.hess[m][j]).collect();
            let dgv = DVector::from_iterator(n, (0..n).map(|j| hv[(m, j)]));
            let dx = jet.dt_grad[m] + scalar_bracket(&dgv, &jet.grad) + scalar_bracket(&sc.grad_v, &ddp);
            let dy = jet.grad[m] * x * v1 + p2 * dx * v1 + p2 * x * dv1[m];
            let dnorm = (y.dotc(&dy)).re / gamma;
            dy / C64::new(gamma, 0.0) - y * C64::new(dnorm / (gamma * gamma), 0.0)
        })
        .collect();
    Ok((seed, Some(grads)))
}

/// The second branch created at a crossing.
#[derive(Debug, Clone)]
pub struct HoppingBranch {
    pub parent: PhasePoint,
    pub event: CrossingEvent,
    /// Outgoing packets (amplitude includes `sqrt(eps) gamma`, the
    /// transition constant and the accumulated phase), one per time of
    /// `frame`, starting at `t_flat`.
    pub packets: Vec<GaussianWavePacket>,
    pub frame: TransportedFrame,
}

impl HoppingBranch {
    /// `S_1(t_flat, t0, z) + S_2(t, t_flat, z_flat)` is carried in the packet
    /// amplitude; this returns the outgoing packet at frame index `i`.
    pub fn packet(&self, i: usize) -> &GaussianWavePacket {
        &self.packets[i]
    }
}

/// Builds the hopped branch from the incoming packet and eigenvector at
/// the crossing and carries it to every time in `times_after` (the first
/// of which must be `t_flat`).
pub fn hop(
    symbol: &HermitianSymbol,
    parent: &PhasePoint,
    event: &CrossingEvent,
    incoming: &GaussianWavePacket,
    v1: Vector2<C64>,
    dv1: Option<&[Vector2<C64>]>,
    times_after: &[f64],
    opts: &AdiabaticOptions,
) -> Result<HoppingBranch> {
    if times_after.first() != Some(&event.t_flat) {
        return Err(Error::InvalidParameter("outgoing time grid must start at the crossing time".into()));
    }
    let (seed, dseed) = outgoing_seed(symbol, event.outgoing, event.t_flat, &event.z_flat, v1, dv1)?;
    let op = event.effective_operator()?;
    let (raw, width) = transition_raw(&op, incoming.width.matrix())?;
    let start = GaussianWavePacket {
        eps: incoming.eps,
        center: event.z_flat.clone(),
        width: SiegelMatrix::symmetrized(width)?,
        amplitude: incoming.amplitude * raw * (event.gamma * incoming.eps.sqrt()),
        vector: None,
    };
    let h_out = symbol.level(event.outgoing)?;
    let packets = propagate_thawed(&h_out, &start, times_after, &opts.classical)?;
    let frame = transport_along(symbol, event.outgoing, &event.z_flat, seed, dseed.as_deref(), times_after, opts)?;
    Ok(HoppingBranch { parent: parent.clone(), event: event.clone(), packets, frame })
}

/// Adds `coeff V^(x) g` to the two buffers, with the frame applied to first
/// order about the packet centre: `[V + (d_x V + Gamma d_xi V)(x - q)] g`.
pub fn accumulate_with_frame(
    packet: &GaussianWavePacket,
    v: &Vector2<C64>,
    grad: Option<&[Vector2<C64>]>,
    grid: &Grid1D,
    coeff: C64,
    out: &mut [Vec<C64>],
) {
    let mut g = vec![C64::new(0.0, 0.0); grid.n];
    packet.accumulate(grid, coeff, &mut g);
    let q = packet.center.q[0];
    let slope = grad.map(|dv| dv[0] + dv[1] * packet.width.matrix()[(0, 0)]);
    for (j, gv) in g.iter().enumerate() {
        if *gv == C64::new(0.0, 0.0) {
            continue;
        }
        let w = match slope {
            Some(s) => v + s * C64::new(grid.x(j) - q, 0.0),
            None => *v,
        };
        out[0][j] += w[0] * gv;
        out[1][j] += w[1] * gv;
    }
}

/// The two-branch state at one output time.
#[derive(Debug, Clone)]
pub struct TwoBranchState {
    pub time: f64,
    pub branch1: GaussianWavePacket,
    pub v1: Vector2<C64>,
    pub dv1: Vec<Vector2<C64>>,
    /// Present for `t > t_flat`; includes the `sqrt(eps)` factor.
    pub branch2: Option<(GaussianWavePacket, Vector2<C64>, Vec<Vector2<C64>>)>,
    /// Whether `eps <= |t - t_flat|^{9/2}` holds (true without a crossing).
    pub within_window: bool,
}

impl TwoBranchState {
    pub fn synthesize(&self, grid: &Grid1D) -> GridFunction {
        let mut out = GridFunction::zeros(*grid, self.branch1.eps, 2);
        accumulate_with_frame(&self.branch1, &self.v1, Some(&self.dv1), grid, C64::new(1.0, 0.0), &mut out.values);
        if let Some((p, v, dv)) = &self.branch2 {
            accumulate_with_frame(p, v, Some(dv), grid, C64::new(1.0, 0.0), &mut out.values);
        }
        out
    }

    pub fn branch2_only(&self, grid: &Grid1D) -> GridFunction {
        let mut out = GridFunction::zeros(*grid, self.branch1.eps, 2);
        if let Some((p, v, dv)) = &self.branch2 {
            accumulate_with_frame(p, v, Some(dv), grid, C64::new(1.0, 0.0), &mut out.values);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct WpCrossing {
    pub event: Option<CrossingEvent>,
    pub states: Vec<TwoBranchState>,
}

/// Eigenvector field with its phase-space gradient.
pub type FrameField<'a> = &'a (dyn Fn(&PhasePoint) -> (Vector2<C64>, Vec<Vector2<C64>>) + Sync);

fn merge_time(times: &[f64], t: f64) -> (Vec<f64>, usize) {
    let pos = times.partition_point(|&s| s < t);
    let mut out = times.to_vec();
    out.insert(pos, t);
    (out, pos)
}

/// Two-branch propagation of `V0^ g` for a packet `g` on level `incoming`;
/// `times` must be increasing and start at the initial time.
pub fn propagate_wp_crossing(
    symbol: &HermitianSymbol,
    incoming: usize,
    packet: &GaussianWavePacket,
    v0_field: FrameField<'_>,
    times: &[f64],
    opts: &AdiabaticOptions,
) -> Result<WpCrossing> {
    if times.is_empty() || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("output times must be increasing".into()));
    }
    let opts = AdiabaticOptions { gap_threshold: 0.0, ..*opts };
    let h_in = symbol.level(incoming)?;
    let t0 = times[0];
    let t_end = *times.last().unwrap();
    let scan: Vec<f64> = (0..=SCAN_POINTS).map(|i| t0 + (t_end - t0) * i as f64 / SCAN_POINTS as f64).collect();
    let event = if t_end > t0 {
        let mut rec = propagate(&h_in, &packet.center, &scan, &opts.classical)?;
        rec.level = incoming;
        detect_crossing(symbol, &rec, &opts.classical)?
    } else {
        None
    };

    let (v0, dv0) = v0_field(&packet.center);
    let (b1_times, flat_index) = match &event {
        Some(ev) => {
            let (m, pos) = merge_time(times, ev.t_flat);
            (m, Some(pos))
        }
        None => (times.to_vec(), None),
    };
    let b1 = propagate_thawed(&h_in, packet, &b1_times, &opts.classical)?;
    let f1 = transport_along(symbol, incoming, &packet.center, v0, Some(&dv0), &b1_times, &opts)?;

    let branch2 = match (&event, flat_index) {
        (Some(ev), Some(k)) => {
            let after: Vec<f64> = std::iter::once(ev.t_flat).chain(times.iter().copied().filter(|&t| t > ev.t_flat)).collect();
            Some(hop(symbol, &packet.center, ev, &b1[k], f1.vectors[k], Some(&f1.gradients[k]), &after, &opts)?)
        }
        _ => None,
    };

    let mut states = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        // index into the merged grid
        let j = match flat_index {
            Some(k) if i >= k => i + 1,
            _ => i,
        };
        let b2 = match (&branch2, &event) {
            (Some(hb), Some(ev)) if t > ev.t_flat => {
                let idx = hb.frame.times.iter().position(|&s| s == t).expect("time on outgoing grid");
                Some((hb.packets[idx].clone(), hb.frame.vectors[idx], hb.frame.gradients[idx].clone()))
            }
            _ => None,
        };
        let within_window = event.as_ref().map(|ev| ev.within_validity_window(packet.eps, t)).unwrap_or(true);
        if !within_window {
            log::warn!("t = {t} lies inside the excluded window around the crossing");
        }
        states.push(TwoBranchState {
            time: t,
            branch1: b1[j].clone(),
            v1: f1.vectors[j],
            dv1: f1.gradients[j].clone(),
            branch2: b2,
            within_window,
        });
    }
    Ok(WpCrossing { event, states })
}

/// One hopped node of the two-branch Herman–Kluk sum.
#[derive(Debug, Clone)]
pub struct HkHop {
    pub node: usize,
    pub branch: HoppingBranch,
}

/// Two-branch Herman–Kluk propagation for the toy model.
#[derive(Debug)]
pub struct HkCrossing {
    pub adiabatic: AdiabaticHk,
    pub hops: Vec<HkHop>,
}

impl HkCrossing {
    fn hop_packet<'a>(&self, hop: &'a HkHop, t: f64) -> Option<(&'a GaussianWavePacket, Vector2<C64>)> {
        if !(t > hop.branch.event.t_flat) {
            return None;
        }
        let idx = hop.branch.frame.times.iter().position(|&s| s == t)?;
        Some((&hop.branch.packets[idx], hop.branch.frame.vectors[idx]))
    }

    /// Second-branch contribution at output index `i`.
    pub fn synthesize_hops(&self, i: usize, grid: &Grid1D) -> Result<GridFunction> {
        let t = self.adiabatic.scalar.times[i];
        let n = grid.n;
        let values = sum_chunked(&self.hops, 2 * n, |hop, buf| {
            if let Some((p, v)) = self.hop_packet(hop, t) {
                let (b0, b1) = buf.split_at_mut(n);
                p.accumulate(grid, v[0], b0);
                p.accumulate(grid, v[1], b1);
            }
            Ok(())
        })?;
        let (c0, c1) = values.split_at(n);
        Ok(GridFunction { grid: *grid, eps: self.adiabatic.eps(), values: vec![c0.to_vec(), c1.to_vec()] })
    }

    /// Number of hopped terms active at output index `i`.
    pub fn active_hops(&self, i: usize) -> usize {
        let t = self.adiabatic.scalar.times[i];
        self.hops.iter().filter(|h| self.hop_packet(h, t).is_some()).count()
    }

    pub fn synthesize(&self, i: usize, grid: &Grid1D) -> Result<GridFunction> {
        let mut out = self.adiabatic.synthesize(i, grid)?;
        if self.active_hops(i) > 0 {
            out.add_assign(&self.synthesize_hops(i, grid)?)?;
        }
        Ok(out)
    }

    /// Writes the hopping table (node, t_flat, z_flat, gamma, mu, outgoing
    /// amplitude at the crossing).
    pub fn write_hops_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "node,q,p,t_flat,q_flat,p_flat,gamma,mu,amp_re,amp_im")?;
        for h in &self.hops {
            let e = &h.branch.event;
            let a = h.branch.packets[0].amplitude;
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{}",
                h.node, h.branch.parent.q[0], h.branch.parent.p[0], e.t_flat, e.z_flat.q[0], e.z_flat.p[0], e.gamma, e.mu, a.re, a.im
            )?;
        }
        Ok(())
    }
}

/// Two-branch Herman–Kluk sum for the toy model with minus-mode data
/// `V_-(x) v0`: the adiabatic sum on the minus level plus, for every node
/// whose trajectory reaches the crossing (`q < 0`) before `t`, the hopped
/// packet started from the node's frozen Gaussian at `t_flat`.
pub fn propagate_hk_crossing_toy(
    model: ToyModel,
    rule: &QuadratureRule,
    coeffs: &[C64],
    eps: f64,
    times: &[f64],
    opts: &AdiabaticOptions,
) -> Result<HkCrossing> {
    if times.is_empty() || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("output times must be increasing".into()));
    }
    let symbol = HermitianSymbol::Toy(model);
    let opts = AdiabaticOptions { gap_threshold: 0.0, ..*opts };
    let field = move |z: &PhasePoint| model.eigenvector(-1.0, z.q[0]);
    let adiabatic = propagate_hk_adiabatic(&symbol, 0, &field, rule, coeffs, eps, times, &opts)?;
    let t0 = times[0];
    let t_end = *times.last().unwrap();
    let norm = (2.0 * PI * eps).powi(-1);
    let h_minus = symbol.level(0)?;

    let hops: Vec<Result<Option<HkHop>>> = adiabatic
        .scalar
        .terms
        .par_iter()
        .map(|term| {
            let z = &term.node;
            if !(z.q[0] < 0.0) {
                return Ok(None);
            }
            let mut rec = propagate(&h_minus, z, &[t0, t_end], &opts.classical)?;
            rec.level = 0;
            let Some(event) = detect_crossing(&symbol, &rec, &opts.classical)? else {
                return Ok(None);
            };
            let to_flat = propagate_to(&h_minus, z, t0, event.t_flat, &opts.classical)?;
            let s1 = *to_flat.action.last().unwrap();
            let v1 = transport_along(&symbol, 0, z, field(z), None, &[t0, event.t_flat], &opts)?.vectors[1];
            // frozen node Gaussian at the crossing; the toy prefactor is one
            let mut incoming = GaussianWavePacket::standard(eps, event.z_flat.clone())?;
            incoming.amplitude *= term.coefficient * term.weight * norm * C64::from_polar(1.0, s1 / eps);
            let after: Vec<f64> = std::iter::once(event.t_flat).chain(times.iter().copied().filter(|&t| t > event.t_flat)).collect();
            let branch = hop(&symbol, z, &event, &incoming, v1, None, &after, &opts)?;
            Ok(Some(HkHop { node: 0, branch }))
        })
        .collect();
    let mut out = Vec::new();
    for (index, h) in hops.into_iter().enumerate() {
        if let Some(mut hop) = h? {
            hop.node = index;
            out.push(hop);
        }
    }
    Ok(HkCrossing { adiabatic, hops: out })
}
