//! Scalar Herman–Kluk and thawed Gaussian propagation.
//!
//! Thawed packet: `Gamma(t) = (C + D Gamma0)(A + B Gamma0)^{-1}` and
//! amplitude factor `det^{-1/2}(A + B Gamma0) e^{iS/eps}`.
//! Herman–Kluk: `(2 pi eps)^{-d} sum_j w_j <g_{z_j}, psi0> u0 e^{iS/eps} g_{Phi(z_j)}`
//! with `u0 = 2^{-d/2} det^{1/2}(A + D + i(C - B))`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::classical::{propagate, propagate_to, ClassicalOptions, JacobianBlocks, PhasePoint, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::grid::{Grid1D, GridFunction};
use crate::hamiltonians::ScalarHamiltonian;
use crate::harness::rules::QuadratureRule;
use crate::linalg::{self, to_complex, CMatrix};
use crate::wavepackets::{self, GaussianWavePacket, SiegelMatrix};

type C64 = Complex64;

/// Roots whose argument moves by more than this between grid points are
/// rejected and the interval is refined.
pub const BRANCH_WINDOW: f64 = PI / 4.0;

/// Largest condition number accepted for `A + B Gamma0`.
pub const MAX_CONDITION: f64 = 1e12;

/// Bisection depth for branch refinement.
const MAX_REFINE: u32 = 30;

/// Nodes per synthesis chunk; fixed so that summation order does not depend
/// on the thread count.
const CHUNK: usize = 64;

/// Continuous square root along a time grid.
#[derive(Debug, Clone, Copy)]
pub struct BranchTracker {
    prev: Option<C64>,
}

impl BranchTracker {
    pub fn new() -> Self {
        Self { prev: None }
    }

    pub fn seeded(root: C64) -> Self {
        Self { prev: Some(root) }
    }

    pub fn current(&self) -> Option<C64> {
        self.prev
    }

    /// The root of `z` continuing the previous one; leaves the state
    /// unchanged when the continuity window is violated.
    pub fn sqrt(&mut self, z: C64, t: f64) -> Result<C64> {
        let r = z.sqrt();
        let root = match self.prev {
            None => r,
            Some(prev) => {
                let cand = if (r - prev).norm() <= (-r - prev).norm() { r } else { -r };
                let jump = (cand / prev).arg().abs();
                if !jump.is_finite() || jump >= BRANCH_WINDOW {
                    return Err(Error::BranchDiscontinuity { t, jump });
                }
                cand
            }
        };
        self.prev = Some(root);
        Ok(root)
    }
}

impl Default for BranchTracker {
    fn default() -> Self {
        Self::new()
    }
}

/// Tracks `sqrt(value(t))` over `times`, bisecting intervals where the
/// continuity window is violated.
pub fn track_sqrt_along(
    times: &[f64],
    values: &[C64],
    mut value_at: impl FnMut(f64) -> Result<C64>,
    seed: C64,
) -> Result<Vec<C64>> {
    let mut tracker = BranchTracker::seeded(seed);
    let mut out = Vec::with_capacity(times.len());
    out.push(tracker.sqrt(values[0], times[0])?);
    for i in 1..times.len() {
        out.push(advance(&mut tracker, times[i - 1], times[i], values[i], &mut value_at, MAX_REFINE)?);
    }
    Ok(out)
}

fn advance(
    tracker: &mut BranchTracker,
    ta: f64,
    tb: f64,
    zb: C64,
    value_at: &mut impl FnMut(f64) -> Result<C64>,
    depth: u32,
) -> Result<C64> {
    match tracker.sqrt(zb, tb) {
        Ok(r) => Ok(r),
        Err(e) if depth == 0 => Err(e),
        Err(_) => {
            let mid = 0.5 * (ta + tb);
            let zm = value_at(mid)?;
            advance(tracker, ta, mid, zm, value_at, depth - 1)?;
            advance(tracker, mid, tb, zb, value_at, depth - 1)
        }
    }
}

fn a_plus_b_gamma(jac: &JacobianBlocks, gamma0: &SiegelMatrix) -> CMatrix {
    to_complex(&jac.a) + to_complex(&jac.b) * gamma0.matrix()
}

/// Möbius action of `F` on the Siegel half-space.
pub fn width_transport(jac: &JacobianBlocks, gamma0: &SiegelMatrix) -> Result<SiegelMatrix> {
    let m = a_plus_b_gamma(jac, gamma0);
    let inv = linalg::inverse_checked(&m, MAX_CONDITION, "A + B Gamma0")?;
    let g = (to_complex(&jac.c) + to_complex(&jac.d) * gamma0.matrix()) * inv;
    SiegelMatrix::symmetrized(g)
}

/// `det(A + B Gamma0)`.
pub fn amplitude_determinant(jac: &JacobianBlocks, gamma0: &SiegelMatrix) -> C64 {
    linalg::determinant(&a_plus_b_gamma(jac, gamma0))
}

/// One step of `det^{-1/2}(A + B Gamma0)` with the tracker carrying
/// `det^{1/2}`.
pub fn amplitude_transport(jac: &JacobianBlocks, gamma0: &SiegelMatrix, tracker: &mut BranchTracker, t: f64) -> Result<C64> {
    let root = tracker.sqrt(amplitude_determinant(jac, gamma0), t)?;
    Ok(root.inv())
}

/// `det(A + D + i(C - B))`.
pub fn prefactor_determinant(jac: &JacobianBlocks) -> C64 {
    let m = to_complex(&(&jac.a + &jac.d)) + to_complex(&(&jac.c - &jac.b)) * C64::new(0.0, 1.0);
    linalg::determinant(&m)
}

/// One step of `u0 = 2^{-d/2} det^{1/2}(A + D + i(C - B))`; the tracker
/// carries the unscaled root and is seeded with `2^{d/2}`.
pub fn hk_prefactor(jac: &JacobianBlocks, tracker: &mut BranchTracker, t: f64) -> Result<C64> {
    let d = jac.dim() as f64;
    Ok(tracker.sqrt(prefactor_determinant(jac), t)? * 2f64.powf(-d / 2.0))
}

/// Branch-continuous `u0` along a trajectory record, refining where needed.
pub fn prefactors_along(h: &ScalarHamiltonian, rec: &TrajectoryRecord, opts: &ClassicalOptions) -> Result<Vec<C64>> {
    let d = rec.jac[0].dim() as f64;
    let z0 = &rec.states[0];
    let t0 = rec.times[0];
    let values: Vec<C64> = rec.jac.iter().map(prefactor_determinant).collect();
    let roots = track_sqrt_along(
        &rec.times,
        &values,
        |t| Ok(prefactor_determinant(&propagate_to(h, z0, t0, t, opts)?.jac.last().unwrap().clone())),
        C64::new(2f64.powf(d / 2.0), 0.0),
    )?;
    Ok(roots.into_iter().map(|r| r * 2f64.powf(-d / 2.0)).collect())
}

/// Branch-continuous `det^{-1/2}(A + B Gamma0)` along a record.
pub fn amplitudes_along(
    h: &ScalarHamiltonian,
    rec: &TrajectoryRecord,
    gamma0: &SiegelMatrix,
    opts: &ClassicalOptions,
) -> Result<Vec<C64>> {
    let z0 = &rec.states[0];
    let t0 = rec.times[0];
    let values: Vec<C64> = rec.jac.iter().map(|j| amplitude_determinant(j, gamma0)).collect();
    let roots = track_sqrt_along(
        &rec.times,
        &values,
        |t| Ok(amplitude_determinant(propagate_to(h, z0, t0, t, opts)?.jac.last().unwrap(), gamma0)),
        C64::new(1.0, 0.0),
    )?;
    Ok(roots.into_iter().map(|r| r.inv()).collect())
}

/// Thawed Gaussian propagation of one packet; one packet per output time.
pub fn propagate_thawed(
    h: &ScalarHamiltonian,
    packet: &GaussianWavePacket,
    times: &[f64],
    opts: &ClassicalOptions,
) -> Result<Vec<GaussianWavePacket>> {
    let rec = propagate(h, &packet.center, times, opts)?;
    thawed_from_record(h, packet, &rec, opts)
}

fn thawed_from_record(
    h: &ScalarHamiltonian,
    packet: &GaussianWavePacket,
    rec: &TrajectoryRecord,
    opts: &ClassicalOptions,
) -> Result<Vec<GaussianWavePacket>> {
    let amps = amplitudes_along(h, rec, &packet.width, opts)?;
    let mut out = Vec::with_capacity(rec.len());
    for i in 0..rec.len() {
        let width = width_transport(&rec.jac[i], &packet.width)?;
        let phase = C64::from_polar(1.0, rec.action[i] / packet.eps);
        out.push(GaussianWavePacket {
            eps: packet.eps,
            center: rec.states[i].clone(),
            width,
            amplitude: packet.amplitude * amps[i] * phase,
            vector: packet.vector,
        });
    }
    Ok(out)
}

/// One quadrature node carried by the Herman–Kluk sum.
#[derive(Debug, Clone)]
pub struct HkBranchTerm {
    pub node: PhasePoint,
    pub coefficient: C64,
    pub weight: f64,
    pub record: TrajectoryRecord,
    pub prefactor: Vec<C64>,
}

impl HkBranchTerm {
    /// Complex weight of the frozen Gaussian at output index `i`, including
    /// `(2 pi eps)^{-d}`.
    pub fn amplitude(&self, i: usize, eps: f64) -> C64 {
        let d = self.node.dim() as i32;
        self.coefficient
            * self.weight
            * (2.0 * PI * eps).powi(-d)
            * self.prefactor[i]
            * C64::from_polar(1.0, self.record.action[i] / eps)
    }
}

/// A node that failed to propagate.
#[derive(Debug)]
pub struct NodeFailure {
    pub index: usize,
    pub error: Error,
}

#[derive(Debug)]
pub struct HkPropagation {
    pub eps: f64,
    pub times: Vec<f64>,
    pub terms: Vec<HkBranchTerm>,
    pub failures: Vec<NodeFailure>,
    /// Frame mass of the excluded nodes relative to the total.
    pub mass_deficit: f64,
}

impl HkPropagation {
    /// Synthesizes the sum at output index `i` onto `grid`.
    pub fn synthesize(&self, i: usize, grid: &Grid1D) -> Result<GridFunction> {
        let eps = self.eps;
        let values = sum_chunked(&self.terms, grid.n, |term, buf| {
            let g = GaussianWavePacket::standard(eps, term.record.states[i].clone())?;
            g.accumulate(grid, term.amplitude(i, eps), buf);
            Ok(())
        })?;
        Ok(GridFunction { grid: *grid, eps, values: vec![values] })
    }

    /// Squared L2 norm of the sum from the closed-form overlaps (no grid).
    pub fn norm_squared(&self, i: usize) -> Result<f64> {
        let eps = self.eps;
        let packets: Vec<(C64, GaussianWavePacket)> = self
            .terms
            .iter()
            .map(|t| Ok((t.amplitude(i, eps), GaussianWavePacket::standard(eps, t.record.states[i].clone())?)))
            .collect::<Result<_>>()?;
        let mut acc = 0.0;
        for (ca, a) in &packets {
            for (cb, b) in &packets {
                acc += (ca.conj() * cb * wavepackets::overlap(a, b)?).re;
            }
        }
        Ok(acc)
    }
}

/// Parallel sum over items into a length-`n` buffer with a fixed chunking
/// and an in-order reduction, so the result is bit-reproducible.
pub fn sum_chunked<T: Sync>(
    items: &[T],
    n: usize,
    add: impl Fn(&T, &mut [C64]) -> Result<()> + Sync,
) -> Result<Vec<C64>> {
    let partials: Vec<Vec<C64>> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut buf = vec![C64::new(0.0, 0.0); n];
            for item in chunk {
                add(item, &mut buf)?;
            }
            Ok(buf)
        })
        .collect::<Result<_>>()?;
    let mut out = vec![C64::new(0.0, 0.0); n];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    Ok(out)
}

/// Transports every node of `rule` under `h`. Failed nodes are excluded
/// and reported with their share of the frame mass.
pub fn propagate_hk(
    h: &ScalarHamiltonian,
    rule: &QuadratureRule,
    coeffs: &[C64],
    eps: f64,
    times: &[f64],
    opts: &ClassicalOptions,
) -> Result<HkPropagation> {
    if coeffs.len() != rule.len() {
        return Err(Error::InvalidParameter("coefficients and nodes differ in length".into()));
    }
    let results: Vec<Result<HkBranchTerm>> = rule
        .nodes
        .par_iter()
        .zip(coeffs.par_iter())
        .zip(rule.weights.par_iter())
        .map(|((z, &c), &w)| {
            let record = propagate(h, z, times, opts)?;
            let prefactor = prefactors_along(h, &record, opts)?;
            Ok(HkBranchTerm { node: z.clone(), coefficient: c, weight: w, record, prefactor })
        })
        .collect();
    collect_terms(results, rule, coeffs, eps, times)
}

pub(crate) fn collect_terms(
    results: Vec<Result<HkBranchTerm>>,
    rule: &QuadratureRule,
    coeffs: &[C64],
    eps: f64,
    times: &[f64],
) -> Result<HkPropagation> {
    let mut terms = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    let mut lost = 0.0;
    let mut total = 0.0;
    for (index, r) in results.into_iter().enumerate() {
        let m = rule.weights[index] * coeffs[index].norm_sqr();
        total += m;
        match r {
            Ok(t) => terms.push(t),
            Err(error) => {
                log::warn!("node {index} excluded: {error}");
                lost += m;
                failures.push(NodeFailure { index, error });
            }
        }
    }
    if terms.is_empty() && !rule.is_empty() {
        return Err(failures.into_iter().next().map(|f| f.error).unwrap_or(Error::Degenerate("no nodes".into())));
    }
    let mass_deficit = if total > 0.0 { lost / total } else { 0.0 };
    Ok(HkPropagation { eps, times: times.to_vec(), terms, failures, mass_deficit })
}

/// Superposition of thawed packets started from the frame decomposition of
/// the initial data, on the same rule as the frozen HK sum.
pub fn propagate_thawed_sum(
    h: &ScalarHamiltonian,
    rule: &QuadratureRule,
    coeffs: &[C64],
    eps: f64,
    times: &[f64],
    grid: &Grid1D,
    opts: &ClassicalOptions,
) -> Result<Vec<GridFunction>> {
    let d = rule.nodes.first().map(|z| z.dim()).unwrap_or(1) as i32;
    let items: Vec<(usize, Vec<GaussianWavePacket>)> = rule
        .nodes
        .par_iter()
        .enumerate()
        .map(|(j, z)| {
            let mut g = GaussianWavePacket::standard(eps, z.clone())?;
            g.amplitude *= coeffs[j] * rule.weights[j] * (2.0 * PI * eps).powi(-d);
            Ok((j, propagate_thawed(h, &g, times, opts)?))
        })
        .collect::<Result<_>>()?;
    (0..times.len())
        .map(|i| {
            let v = sum_chunked(&items, grid.n, |(_, packets), buf| {
                packets[i].accumulate(grid, C64::new(1.0, 0.0), buf);
                Ok(())
            })?;
            Ok(GridFunction { grid: *grid, eps, values: vec![v] })
        })
        .collect()
}

/// L2 distance between the thawed-sum and frozen HK propagations of `psi0`
/// at time `t`, both on the default rule of `psi0`.
pub fn thawed_vs_frozen_gap(h: &ScalarHamiltonian, psi0: &GridFunction, t0: f64, t: f64, opts: &ClassicalOptions) -> Result<f64> {
    if t == t0 {
        return Ok(0.0);
    }
    let (rule, coeffs) = wavepackets::default_rule(psi0, 0)?;
    let times = [t0, t];
    let frozen = propagate_hk(h, &rule, &coeffs, psi0.eps, &times, opts)?.synthesize(1, &psi0.grid)?;
    let thawed = propagate_thawed_sum(h, &rule, &coeffs, psi0.eps, &times, &psi0.grid, opts)?;
    Ok(frozen.sub(&thawed[1])?.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::rules::build_rule_grid;
    use crate::linalg::CMatrix;
    use crate::wavepackets::evaluate;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn rotation(t: f64) -> JacobianBlocks {
        let (s, co) = t.sin_cos();
        JacobianBlocks::from_full(&DMatrix::from_row_slice(2, 2, &[co, s, -s, co]))
    }

    #[test]
    fn identity_flow_leaves_width_and_factors_unchanged() {
        let g0 = SiegelMatrix::scalar(c(0.4, 1.3)).unwrap();
        let id = JacobianBlocks::identity(1);
        assert_eq!(width_transport(&id, &g0).unwrap(), g0);
        let mut tr = BranchTracker::seeded(c(1.0, 0.0));
        assert_eq!(amplitude_transport(&id, &g0, &mut tr, 0.0).unwrap(), c(1.0, 0.0));
        let mut tr = BranchTracker::seeded(c(2f64.sqrt(), 0.0));
        assert!((hk_prefactor(&id, &mut tr, 0.0).unwrap() - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn harmonic_rotation_fixes_standard_width() {
        let g0 = SiegelMatrix::standard(1);
        for t in [0.3, 1.7, 3.0, 5.5] {
            let g = width_transport(&rotation(t), &g0).unwrap();
            assert!((g.matrix()[(0, 0)] - c(0.0, 1.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn harmonic_factors_are_continuous_through_pi() {
        let h = ScalarHamiltonian::harmonic(1);
        let times: Vec<f64> = (0..=64).map(|i| i as f64 * 0.1).collect();
        let rec = propagate(&h, &PhasePoint::one(0.2, 0.1), &times, &ClassicalOptions::default()).unwrap();
        let u = prefactors_along(&h, &rec, &ClassicalOptions::default()).unwrap();
        let a = amplitudes_along(&h, &rec, &SiegelMatrix::standard(1), &ClassicalOptions::default()).unwrap();
        for (i, &t) in times.iter().enumerate() {
            let want = C64::from_polar(1.0, -t / 2.0);
            assert!((u[i] - want).norm() < 1e-12, "u0 at t={t}");
            assert!((a[i] - want).norm() < 1e-12, "amplitude at t={t}");
        }
    }

    #[test]
    fn coarse_grids_are_refined() {
        let h = ScalarHamiltonian::harmonic(1);
        let times = [0.0, 2.5, 5.0, 7.5];
        let rec = propagate(&h, &PhasePoint::one(0.0, 0.0), &times, &ClassicalOptions::default()).unwrap();
        let u = prefactors_along(&h, &rec, &ClassicalOptions::default()).unwrap();
        for (i, &t) in times.iter().enumerate() {
            assert!((u[i] - C64::from_polar(1.0, -t / 2.0)).norm() < 1e-12);
        }
        let mut tr = BranchTracker::seeded(c(1.0, 0.0));
        assert!(matches!(tr.sqrt(c(-1.0, 0.0), 1.0), Err(Error::BranchDiscontinuity { .. })));
        assert_eq!(tr.current(), Some(c(1.0, 0.0)));
    }

    #[test]
    fn linear_levels_have_trivial_factors() {
        let h = ScalarHamiltonian::linear(-1.0);
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.5).collect();
        let rec = propagate(&h, &PhasePoint::one(-2.0, 0.3), &times, &ClassicalOptions::default()).unwrap();
        let u = prefactors_along(&h, &rec, &ClassicalOptions::default()).unwrap();
        let g0 = SiegelMatrix::scalar(c(0.2, 0.9)).unwrap();
        let a = amplitudes_along(&h, &rec, &g0, &ClassicalOptions::default()).unwrap();
        for i in 0..times.len() {
            assert!((u[i] - c(1.0, 0.0)).norm() < 1e-15);
            assert_eq!(a[i], c(1.0, 0.0));
            assert_eq!(width_transport(&rec.jac[i], &g0).unwrap(), g0);
        }
    }

    #[test]
    fn thawed_is_identity_at_initial_time() {
        let h = ScalarHamiltonian::torus(1.0);
        let pk = GaussianWavePacket::standard(0.1, PhasePoint::one(0.3, 0.2)).unwrap();
        let out = propagate_thawed(&h, &pk, &[1.0], &ClassicalOptions::default()).unwrap();
        assert_eq!(out[0], pk);
    }

    #[test]
    fn thawed_harmonic_packet_is_the_exact_rotation() {
        // exact solution: the centre rotates, Gamma = i stays fixed and the
        // phase is e^{iS/eps} e^{-it/2}
        let eps = 0.1;
        let h = ScalarHamiltonian::harmonic(1);
        let pk = GaussianWavePacket::standard(eps, PhasePoint::one(1.0, 0.0)).unwrap();
        let t = 1.2;
        let out = propagate_thawed(&h, &pk, &[0.0, t], &ClassicalOptions::default()).unwrap();
        let (s, co) = t.sin_cos();
        assert!(out[1].center.distance(&PhasePoint::one(co, -s)) < 1e-14);
        let action = -0.25 * (2.0 * t).sin();
        let want = C64::from_polar(1.0, action / eps - t / 2.0);
        assert!((out[1].amplitude - want).norm() < 1e-12);
    }

    #[test]
    fn hk_at_initial_time_reconstructs_data() {
        let eps = 0.1;
        let grid = Grid1D::covering(0.0, 6.0, 2048).unwrap();
        let psi0 = evaluate(&GaussianWavePacket::standard(eps, PhasePoint::one(0.5, -0.5)).unwrap(), &grid).unwrap();
        let rule = build_rule_grid(&[(-3.0, 4.0), (-4.0, 3.0)], eps.sqrt() / 2.0).unwrap();
        let coeffs = wavepackets::analyze(&psi0, &rule.nodes).unwrap();
        let hk = propagate_hk(&ScalarHamiltonian::torus(1.0), &rule, &coeffs, eps, &[0.0], &ClassicalOptions::default()).unwrap();
        let f = hk.synthesize(0, &grid).unwrap();
        assert!(f.sub(&psi0).unwrap().norm() < 1e-4);
        assert!((hk.norm_squared(0).unwrap() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn hk_harmonic_matches_rotated_gaussian() {
        let eps = 0.1;
        let grid = Grid1D::covering(0.0, 6.0, 2048).unwrap();
        let pk = GaussianWavePacket::standard(eps, PhasePoint::one(1.0, 0.0)).unwrap();
        let psi0 = evaluate(&pk, &grid).unwrap();
        let (rule, coeffs) = wavepackets::default_rule(&psi0, 0).unwrap();
        let h = ScalarHamiltonian::harmonic(1);
        let t = std::f64::consts::FRAC_PI_2;
        let hk = propagate_hk(&h, &rule, &coeffs, eps, &[0.0, t], &ClassicalOptions::default()).unwrap();
        let exact = propagate_thawed(&h, &pk, &[0.0, t], &ClassicalOptions::default()).unwrap();
        let err = hk.synthesize(1, &grid).unwrap().sub(&evaluate(&exact[1], &grid).unwrap()).unwrap().norm();
        assert!(err <= 1e-3, "error {err}");
        assert!(hk.failures.is_empty());
    }

    #[test]
    fn quadratic_gap_is_at_quadrature_level() {
        let eps = 0.1;
        let grid = Grid1D::covering(0.0, 6.0, 1024).unwrap();
        let psi0 = evaluate(&GaussianWavePacket::standard(eps, PhasePoint::one(0.5, 0.0)).unwrap(), &grid).unwrap();
        let h = ScalarHamiltonian::harmonic(1);
        let opts = ClassicalOptions::default();
        assert_eq!(thawed_vs_frozen_gap(&h, &psi0, 0.0, 0.0, &opts).unwrap(), 0.0);
        assert!(thawed_vs_frozen_gap(&h, &psi0, 0.0, 1.0, &opts).unwrap() < 1e-6);
    }

    fn symplectic_from(m: [f64; 3], k: f64, t: f64) -> JacobianBlocks {
        // exp(t J S) for a random symmetric S, by scaling and squaring
        let s = DMatrix::from_row_slice(2, 2, &[m[0], m[1], m[1], m[2]]);
        let j = crate::classical::symplectic_j(1);
        let gen = &j * &s * (t / 1024.0);
        let mut e = DMatrix::identity(2, 2);
        let mut term = DMatrix::identity(2, 2);
        for n in 1..20 {
            term = &term * &gen / n as f64;
            e += &term;
        }
        for _ in 0..10 {
            e = &e * &e;
        }
        let shear = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, k, 1.0]);
        JacobianBlocks::from_full(&(shear * e))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn siegel_invariance_and_group_property(
            m1 in proptest::array::uniform3(-2.0..2.0f64), m2 in proptest::array::uniform3(-2.0..2.0f64),
            k1 in -2.0..2.0f64, k2 in -2.0..2.0f64, t1 in 0.0..2.0f64, t2 in 0.0..2.0f64,
            gr in -2.0..2.0f64, gi in 0.1..3.0f64,
        ) {
            let g0 = SiegelMatrix::scalar(c(gr, gi)).unwrap();
            let f1 = symplectic_from(m1, k1, t1);
            let f2 = symplectic_from(m2, k2, t2);
            let g1 = width_transport(&f1, &g0).unwrap();
            prop_assert!(g1.min_imag_eigenvalue() > 0.0);
            let g12 = width_transport(&f2, &g1).unwrap();
            let composed = JacobianBlocks::from_full(&(f2.full() * f1.full()));
            let direct = width_transport(&composed, &g0).unwrap();
            let scale = 1.0 + direct.matrix().norm();
            prop_assert!((g12.matrix() - direct.matrix()).norm() <= 1e-10 * scale);
        }
    }

    #[test]
    fn two_dimensional_prefactor_factorizes() {
        let h = ScalarHamiltonian::harmonic(2);
        let z = PhasePoint::new(nalgebra::DVector::from_vec(vec![0.3, -0.2]), nalgebra::DVector::from_vec(vec![0.1, 0.4]));
        let times: Vec<f64> = (0..=40).map(|i| i as f64 * 0.2).collect();
        let rec = propagate(&h, &z, &times, &ClassicalOptions::default()).unwrap();
        let u = prefactors_along(&h, &rec, &ClassicalOptions::default()).unwrap();
        for (i, &t) in times.iter().enumerate() {
            assert!((u[i] - C64::from_polar(1.0, -t)).norm() < 1e-12);
        }
        let g0 = SiegelMatrix::new(CMatrix::identity(2, 2) * c(0.0, 1.0)).unwrap();
        let w = width_transport(&rec.jac[17], &g0).unwrap();
        assert!((w.matrix() - g0.matrix()).norm() < 1e-12);
    }
}
