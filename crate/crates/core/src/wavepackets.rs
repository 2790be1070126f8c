//! Gaussian wave packets
//! `g(x) = A (pi eps)^{-d/4} exp((i/eps)[p.(x-q) + (x-q).Gamma(x-q)/2])`,
//! their closed-form overlaps, the coherent-state frame (analysis and
//! synthesis) and the `Sigma_k` norms.

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::classical::PhasePoint;
use crate::error::{Error, Result};
use crate::grid::{Grid1D, GridFunction, Spectral};
use crate::harness::rules::{QuadratureRule, RuleKind};
use crate::linalg::{self, CMatrix};

type C64 = Complex64;

/// Gaussian tails are dropped beyond this many standard deviations.
pub const TAIL_SIGMAS: f64 = 10.0;

/// Complex symmetric width with positive-definite imaginary part.
#[derive(Debug, Clone, PartialEq)]
pub struct SiegelMatrix(CMatrix);

impl SiegelMatrix {
    pub fn new(gamma: CMatrix) -> Result<Self> {
        if !gamma.is_square() || gamma.nrows() == 0 {
            return Err(Error::NotSiegel("width must be a non-empty square matrix".into()));
        }
        if gamma != gamma.transpose() {
            return Err(Error::NotSiegel("width is not symmetric".into()));
        }
        let lmin = linalg::min_symmetric_eigenvalue(&linalg::imag_part(&gamma));
        if !(lmin > 0.0) {
            return Err(Error::NotSiegel(format!("smallest eigenvalue of Im(Gamma) is {lmin:e}")));
        }
        Ok(Self(gamma))
    }

    /// Symmetrizes before validating; for widths produced by arithmetic.
    pub fn symmetrized(gamma: CMatrix) -> Result<Self> {
        let s = (&gamma + gamma.transpose()) * C64::new(0.5, 0.0);
        Self::new(s)
    }

    pub fn standard(d: usize) -> Self {
        Self(CMatrix::identity(d, d) * C64::new(0.0, 1.0))
    }

    pub fn scalar(gamma: C64) -> Result<Self> {
        Self::new(CMatrix::from_element(1, 1, gamma))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// `c_Gamma = det^{1/4}(Im Gamma)`, the real positive root.
    pub fn normalization(&self) -> f64 {
        linalg::imag_part(&self.0).determinant().powf(0.25)
    }

    pub fn min_imag_eigenvalue(&self) -> f64 {
        linalg::min_symmetric_eigenvalue(&linalg::imag_part(&self.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianWavePacket {
    pub eps: f64,
    pub center: PhasePoint,
    pub width: SiegelMatrix,
    pub amplitude: C64,
    /// Constant vector part for two-level states.
    pub vector: Option<[C64; 2]>,
}

impl GaussianWavePacket {
    /// Unit-norm packet of the given width.
    pub fn normalized(eps: f64, center: PhasePoint, width: SiegelMatrix) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
        }
        if center.dim() != width.dim() {
            return Err(Error::InvalidParameter("center and width dimensions differ".into()));
        }
        let amplitude = C64::new(width.normalization(), 0.0);
        Ok(Self { eps, center, width, amplitude, vector: None })
    }

    /// `g^eps_z` with `Gamma = i Id`.
    pub fn standard(eps: f64, center: PhasePoint) -> Result<Self> {
        let d = center.dim();
        Self::normalized(eps, center, SiegelMatrix::standard(d))
    }

    pub fn with_vector(mut self, v: [C64; 2]) -> Self {
        self.vector = Some(v);
        self
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    /// Scalar profile value at a point `x` (any dimension).
    pub fn value_at(&self, x: &DVector<f64>) -> C64 {
        let d = self.dim();
        let dx = x - &self.center.q;
        let gamma = self.width.matrix();
        let mut quad = C64::new(0.0, 0.0);
        for i in 0..d {
            for j in 0..d {
                quad += gamma[(i, j)] * dx[i] * dx[j];
            }
        }
        let phase = C64::new(self.center.p.dot(&dx), 0.0) + quad * 0.5;
        self.amplitude * (std::f64::consts::PI * self.eps).powf(-(d as f64) / 4.0) * (C64::new(0.0, 1.0) * phase / self.eps).exp()
    }

    /// Spatial standard-deviation scale `sqrt(eps / lambda_min(Im Gamma))`.
    pub fn spatial_scale(&self) -> f64 {
        (self.eps / self.width.min_imag_eigenvalue()).sqrt()
    }

    /// Adds `coeff * g(x)` into `out` on the window where the Gaussian is
    /// non-negligible (1-D packets).
    pub fn accumulate(&self, grid: &Grid1D, coeff: C64, out: &mut [C64]) {
        debug_assert_eq!(self.dim(), 1);
        let q = self.center.q[0];
        let p = self.center.p[0];
        let gamma = self.width.matrix()[(0, 0)];
        let pref = coeff * self.amplitude * (std::f64::consts::PI * self.eps).powf(-0.25);
        let (lo, hi) = grid.window(q, TAIL_SIGMAS * self.spatial_scale());
        let inv_eps = 1.0 / self.eps;
        for (j, o) in out.iter_mut().enumerate().take(hi).skip(lo) {
            let y = grid.x(j) - q;
            let arg = C64::new(0.0, inv_eps) * (C64::new(p * y, 0.0) + gamma * (0.5 * y * y));
            *o += pref * arg.exp();
        }
    }
}

/// Pointwise evaluation on a 1-D grid; two components when the packet
/// carries a vector part.
pub fn evaluate(packet: &GaussianWavePacket, grid: &Grid1D) -> Result<GridFunction> {
    if packet.dim() != 1 {
        return Err(Error::InvalidParameter("grid evaluation is one-dimensional".into()));
    }
    let scale = packet.spatial_scale();
    if grid.dx() > scale / 4.0 {
        log::warn!("grid spacing {} under-resolves packet scale {}", grid.dx(), scale);
    }
    let mut scalar = vec![C64::new(0.0, 0.0); grid.n];
    packet.accumulate(grid, C64::new(1.0, 0.0), &mut scalar);
    let values = match packet.vector {
        None => vec![scalar],
        Some(v) => v.iter().map(|&c| scalar.iter().map(|s| s * c).collect()).collect(),
    };
    Ok(GridFunction { grid: *grid, eps: packet.eps, values })
}

/// Closed-form `<a, b>` (antilinear in `a`), any widths and dimension.
/// Vector parts, when present on both, contribute their inner product.
pub fn overlap(a: &GaussianWavePacket, b: &GaussianWavePacket) -> Result<C64> {
    if a.eps != b.eps {
        return Err(Error::EpsMismatch(a.eps, b.eps));
    }
    if a.dim() != b.dim() {
        return Err(Error::InvalidParameter("packet dimensions differ".into()));
    }
    let d = a.dim();
    let eps = a.eps;
    let ga_bar = a.width.matrix().map(|c| c.conj());
    let gb = b.width.matrix();
    let m = gb - &ga_bar;
    let qa = a.center.q.map(|v| C64::new(v, 0.0));
    let qb = b.center.q.map(|v| C64::new(v, 0.0));
    let pa = a.center.p.map(|v| C64::new(v, 0.0));
    let pb = b.center.p.map(|v| C64::new(v, 0.0));
    let v = &pb - &pa + &ga_bar * &qa - gb * &qb;
    let c = pa.dotc(&qa) - pb.dotc(&qb) - (qa.transpose() * &ga_bar * &qa)[(0, 0)] * 0.5
        + (qb.transpose() * gb * &qb)[(0, 0)] * 0.5;
    let minv = m.clone().try_inverse().ok_or(Error::Degenerate("overlap quadratic form".into()))?;
    let vmv = (v.transpose() * minv * &v)[(0, 0)];
    let minus_i_m = &m * C64::new(0.0, -1.0);
    let sqrt_det = linalg::sqrt_det_principal(&minus_i_m);
    let exponent = C64::new(0.0, 1.0 / eps) * (c - vmv * 0.5);
    let vec_part = match (a.vector, b.vector) {
        (Some(va), Some(vb)) => va[0].conj() * vb[0] + va[1].conj() * vb[1],
        _ => C64::new(1.0, 0.0),
    };
    Ok(a.amplitude.conj() * b.amplitude * 2f64.powf(d as f64 / 2.0) / sqrt_det * exponent.exp() * vec_part)
}

/// Frame coefficients `<g^eps_z, f>` at every node (first component of `f`).
pub fn analyze(f: &GridFunction, nodes: &[PhasePoint]) -> Result<Vec<C64>> {
    analyze_component(f, 0, nodes)
}

pub fn analyze_component(f: &GridFunction, level: usize, nodes: &[PhasePoint]) -> Result<Vec<C64>> {
    let grid = f.grid;
    let dx = grid.dx();
    let data = &f.values[level];
    nodes
        .par_iter()
        .map(|z| {
            if z.dim() != 1 {
                return Err(Error::InvalidParameter("grid analysis is one-dimensional".into()));
            }
            let g = GaussianWavePacket::standard(f.eps, z.clone())?;
            Ok(coefficient(&g, &grid, data) * dx)
        })
        .collect()
}

fn coefficient(g: &GaussianWavePacket, grid: &Grid1D, data: &[C64]) -> C64 {
    let q = g.center.q[0];
    let p = g.center.p[0];
    let (lo, hi) = grid.window(q, TAIL_SIGMAS * g.spatial_scale());
    let pref = (std::f64::consts::PI * g.eps).powf(-0.25);
    let inv_eps = 1.0 / g.eps;
    let mut acc = C64::new(0.0, 0.0);
    for (j, v) in data.iter().enumerate().take(hi).skip(lo) {
        let y = grid.x(j) - q;
        // conj(g) for Gamma = i: exp(-i p y / eps - y^2 / (2 eps))
        let g_conj = C64::from_polar((-0.5 * y * y * inv_eps).exp(), -p * y * inv_eps);
        acc += g_conj * v;
    }
    acc * pref
}

/// `(2 pi eps)^{-1} sum_j w_j c_j g^eps_{z_j}` on `grid`.
pub fn synthesize(coeffs: &[C64], rule: &QuadratureRule, eps: f64, grid: &Grid1D) -> Result<GridFunction> {
    if coeffs.len() != rule.nodes.len() {
        return Err(Error::InvalidParameter("coefficients and nodes differ in length".into()));
    }
    let mut out = GridFunction::zeros(*grid, eps, 1);
    let norm = 1.0 / (2.0 * std::f64::consts::PI * eps);
    for ((z, &c), &w) in rule.nodes.iter().zip(coeffs).zip(&rule.weights) {
        if c == C64::new(0.0, 0.0) {
            continue;
        }
        let g = GaussianWavePacket::standard(eps, z.clone())?;
        g.accumulate(grid, c * (w * norm), &mut out.values[0]);
    }
    Ok(out)
}

/// `(2 pi eps)^{-1} sum_j w_j |c_j|^2`, the frame's Parseval mass.
pub fn frame_mass(coeffs: &[C64], rule: &QuadratureRule, eps: f64) -> f64 {
    let s: f64 = coeffs.iter().zip(&rule.weights).map(|(c, w)| w * c.norm_sqr()).sum();
    s / (2.0 * std::f64::consts::PI * eps)
}

/// Phase-space box `[q_lo, q_hi] x [p_lo, p_hi]` holding the numerical
/// support of `f`, padded by `pad` standard deviations `sqrt(eps)`.
pub fn phase_space_box(f: &GridFunction, level: usize, pad: f64) -> Result<[(f64, f64); 2]> {
    let data = &f.values[level];
    let peak = data.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::Degenerate("zero function has no phase-space support".into()));
    }
    let thresh = 1e-16 * peak;
    let idx: Vec<usize> = (0..data.len()).filter(|&j| data[j].norm_sqr() > thresh).collect();
    let (q_lo, q_hi) = (f.grid.x(idx[0]), f.grid.x(*idx.last().unwrap()));
    let sp = Spectral::new(&f.grid);
    let mut spec = data.clone();
    sp.forward(&mut spec);
    let speak = spec.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max);
    let ps: Vec<f64> = spec
        .iter()
        .zip(&sp.k)
        .filter(|(c, _)| c.norm_sqr() > 1e-16 * speak)
        .map(|(_, &k)| f.eps * k)
        .collect();
    let p_lo = ps.iter().copied().fold(f64::INFINITY, f64::min);
    let p_hi = ps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s = pad * f.eps.sqrt();
    Ok([(q_lo - s, q_hi + s), (p_lo - s, p_hi + s)])
}

/// The default analysis rule: tensor grid with spacing `sqrt(eps)/2` over
/// the support box, with nodes whose coefficient falls below `1e-10` of
/// the peak removed. Returns the rule and the retained coefficients.
pub fn default_rule(f: &GridFunction, level: usize) -> Result<(QuadratureRule, Vec<C64>)> {
    let spacing = f.eps.sqrt() / 2.0;
    let bx = phase_space_box(f, level, 8.0)?;
    let full = crate::harness::rules::build_rule_grid(&bx, spacing)?;
    let coeffs = analyze_component(f, level, &full.nodes)?;
    Ok(truncate_rule(full, coeffs, 1e-10))
}

/// Drops nodes whose coefficient modulus is below `rel` times the largest.
pub fn truncate_rule(rule: QuadratureRule, coeffs: Vec<C64>, rel: f64) -> (QuadratureRule, Vec<C64>) {
    let peak = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut kept = Vec::new();
    for ((z, w), c) in rule.nodes.into_iter().zip(rule.weights).zip(coeffs) {
        if c.norm() >= rel * peak {
            nodes.push(z);
            weights.push(w);
            kept.push(c);
        }
    }
    (QuadratureRule { nodes, weights, kind: RuleKind::Grid, seed: rule.seed }, kept)
}

/// `Sigma^eps_k` norm: `max_{a+b<=k} ||x^a (eps d/dx)^b f||` (1-D, all
/// components together).
pub fn sigma_norm(f: &GridFunction, k: usize) -> Result<f64> {
    if k > 2 {
        return Err(Error::InvalidParameter("sigma_norm supports k <= 2".into()));
    }
    let sp = Spectral::new(&f.grid);
    let xs = f.grid.points();
    let mut best = 0.0f64;
    for b in 0..=k {
        for a in 0..=(k - b) {
            let mut acc = 0.0;
            for comp in &f.values {
                let mut v = comp.clone();
                if b > 0 {
                    sp.derivative(&mut v, f.eps, b as i32);
                }
                acc += v.iter().zip(&xs).map(|(c, x)| c.norm_sqr() * x.powi(2 * a as i32)).sum::<f64>();
            }
            best = best.max((acc * f.grid.dx()).sqrt());
        }
    }
    Ok(best)
}

/// `WP^eps_z(phi)(x) = eps^{-1/4} phi((x - q)/sqrt(eps)) e^{i p (x - q)/eps}`
/// on a 1-D grid.
pub fn wp_scale(z: &PhasePoint, eps: f64, grid: &Grid1D, profile: impl Fn(f64) -> C64) -> GridFunction {
    let q = z.q[0];
    let p = z.p[0];
    let s = eps.sqrt();
    GridFunction::from_fn(*grid, eps, |x| {
        let y = x - q;
        profile(y / s) * eps.powf(-0.25) * C64::from_polar(1.0, p * y / eps)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::rules::build_rule_grid;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn fine_grid(center: f64, half: f64) -> Grid1D {
        Grid1D::covering(center, half, 8192).unwrap()
    }

    #[test]
    fn standard_packet_values() {
        let g = GaussianWavePacket::standard(1.0, PhasePoint::one(0.0, 0.0)).unwrap();
        let v0 = g.value_at(&DVector::from_element(1, 0.0));
        let v1 = g.value_at(&DVector::from_element(1, 1.0));
        assert!((v0 - c(PI.powf(-0.25), 0.0)).norm() < 1e-15);
        assert!((v1 - c(PI.powf(-0.25) * (-0.5f64).exp(), 0.0)).norm() < 1e-15);
    }

    #[test]
    fn siegel_constructor_rejects_bad_widths() {
        assert!(SiegelMatrix::scalar(c(1.0, -0.1)).is_err());
        assert!(SiegelMatrix::scalar(c(1.0, 0.0)).is_err());
        let nonsym = CMatrix::from_row_slice(2, 2, &[c(0.0, 1.0), c(0.1, 0.0), c(0.0, 0.0), c(0.0, 1.0)]);
        assert!(SiegelMatrix::new(nonsym).is_err());
        assert!(SiegelMatrix::scalar(c(-3.0, 0.2)).is_ok());
    }

    #[test]
    fn overlap_of_identical_packets_is_one() {
        let a = GaussianWavePacket::standard(0.3, PhasePoint::one(0.4, -1.0)).unwrap();
        assert!((overlap(&a, &a).unwrap() - c(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn overlap_modulus_example() {
        let a = GaussianWavePacket::standard(0.1, PhasePoint::one(0.0, 0.0)).unwrap();
        let b = GaussianWavePacket::standard(0.1, PhasePoint::one(0.6, 0.8)).unwrap();
        let m = overlap(&a, &b).unwrap().norm();
        assert!((m - (-2.5f64).exp()).abs() < 1e-14);
        assert!((m - 0.082085).abs() < 1e-6);
    }

    #[test]
    fn overlap_rejects_mismatched_eps() {
        let a = GaussianWavePacket::standard(0.1, PhasePoint::one(0.0, 0.0)).unwrap();
        let b = GaussianWavePacket::standard(0.2, PhasePoint::one(0.0, 0.0)).unwrap();
        assert!(matches!(overlap(&a, &b), Err(Error::EpsMismatch(..))));
    }

    #[test]
    fn two_dimensional_overlap_factorizes() {
        let eps = 0.2;
        let mk = |q: [f64; 2], p: [f64; 2], g: [C64; 2]| {
            let w = CMatrix::from_diagonal(&DVector::from_vec(g.to_vec()));
            GaussianWavePacket::normalized(
                eps,
                PhasePoint::new(DVector::from_vec(q.to_vec()), DVector::from_vec(p.to_vec())),
                SiegelMatrix::new(w).unwrap(),
            )
            .unwrap()
        };
        let ga = [c(0.3, 1.2), c(-0.5, 0.7)];
        let gb = [c(0.1, 0.4), c(1.0, 2.0)];
        let a = mk([0.1, -0.3], [0.5, 0.2], ga);
        let b = mk([0.4, 0.2], [-0.1, 0.6], gb);
        let one = |i: usize| {
            let a1 = GaussianWavePacket::normalized(eps, PhasePoint::one(a.center.q[i], a.center.p[i]), SiegelMatrix::scalar(ga[i]).unwrap()).unwrap();
            let b1 = GaussianWavePacket::normalized(eps, PhasePoint::one(b.center.q[i], b.center.p[i]), SiegelMatrix::scalar(gb[i]).unwrap()).unwrap();
            overlap(&a1, &b1).unwrap()
        };
        assert!((overlap(&a, &b).unwrap() - one(0) * one(1)).norm() < 1e-13);
    }

    #[test]
    fn general_overlap_matches_grid_quadrature() {
        let eps = 0.05;
        let a = GaussianWavePacket::normalized(eps, PhasePoint::one(0.2, 0.7), SiegelMatrix::scalar(c(0.8, 1.5)).unwrap()).unwrap();
        let b = GaussianWavePacket::normalized(eps, PhasePoint::one(0.35, 0.5), SiegelMatrix::scalar(c(-1.2, 0.6)).unwrap()).unwrap();
        let grid = fine_grid(0.3, 4.0);
        let fa = evaluate(&a, &grid).unwrap();
        let fb = evaluate(&b, &grid).unwrap();
        let quad = fa.inner(&fb).unwrap();
        assert!((quad - overlap(&a, &b).unwrap()).norm() < 1e-8);
    }

    #[test]
    fn evaluation_is_normalized_for_siegel_widths() {
        let eps = 0.05;
        for g in [c(0.0, 1.0), c(1.7, 0.3), c(-2.0, 4.0)] {
            let pk = GaussianWavePacket::normalized(eps, PhasePoint::one(0.5, 1.0), SiegelMatrix::scalar(g).unwrap()).unwrap();
            let f = evaluate(&pk, &fine_grid(0.5, 5.0)).unwrap();
            assert!((f.norm() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn analysis_matches_overlap_and_vanishes_on_zero() {
        let eps = 0.1;
        let grid = fine_grid(0.0, 6.0);
        let target = GaussianWavePacket::standard(eps, PhasePoint::one(0.3, -0.2)).unwrap();
        let f = evaluate(&target, &grid).unwrap();
        let nodes = vec![PhasePoint::one(0.3, -0.2), PhasePoint::one(0.0, 0.1), PhasePoint::one(-0.4, 0.5)];
        let coeffs = analyze(&f, &nodes).unwrap();
        assert!((coeffs[0] - c(1.0, 0.0)).norm() < 1e-10);
        for (z, cf) in nodes.iter().zip(&coeffs) {
            let g = GaussianWavePacket::standard(eps, z.clone()).unwrap();
            assert!((cf - overlap(&g, &target).unwrap()).norm() < 1e-8);
        }
        let zero = GridFunction::zeros(grid, eps, 1);
        assert!(analyze(&zero, &nodes).unwrap().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn frame_reconstruction_of_a_packet() {
        let eps = 0.1;
        let grid = fine_grid(0.0, 8.0);
        let target = GaussianWavePacket::standard(eps, PhasePoint::one(0.5, 0.3)).unwrap();
        let f = evaluate(&target, &grid).unwrap();
        let rule = build_rule_grid(&[(-6.0, 6.0), (-6.0, 6.0)], eps.sqrt() / 2.0).unwrap();
        let coeffs = analyze(&f, &rule.nodes).unwrap();
        let rec = synthesize(&coeffs, &rule, eps, &grid).unwrap();
        let rel = rec.sub(&f).unwrap().norm() / f.norm();
        assert!(rel <= 1e-4, "relative error {rel}");
        assert!((frame_mass(&coeffs, &rule, eps) - 1.0).abs() <= 1e-3);
        let zeros = vec![C64::new(0.0, 0.0); rule.nodes.len()];
        assert_eq!(synthesize(&zeros, &rule, eps, &grid).unwrap().norm(), 0.0);
    }

    #[test]
    fn default_rule_reconstructs_superposition() {
        let eps = 0.05;
        let grid = fine_grid(0.0, 6.0);
        let mut f = evaluate(&GaussianWavePacket::standard(eps, PhasePoint::one(-0.8, 0.4)).unwrap(), &grid).unwrap();
        let mut g = evaluate(
            &GaussianWavePacket::normalized(eps, PhasePoint::one(0.9, -0.3), SiegelMatrix::scalar(c(0.5, 2.0)).unwrap()).unwrap(),
            &grid,
        )
        .unwrap();
        g.scale(c(0.3, -0.6));
        f.add_assign(&g).unwrap();
        let (rule, coeffs) = default_rule(&f, 0).unwrap();
        let rec = synthesize(&coeffs, &rule, eps, &grid).unwrap();
        assert!(rec.sub(&f).unwrap().norm() / f.norm() <= 1e-3);
        assert!((frame_mass(&coeffs, &rule, eps) - f.norm_squared()).abs() <= 1e-3 * f.norm_squared());
    }

    #[test]
    fn sigma_norms_of_standard_gaussian() {
        let grid = fine_grid(0.0, 10.0);
        for eps in [0.1, 0.5, 1.0] {
            let f = evaluate(&GaussianWavePacket::standard(eps, PhasePoint::one(0.0, 0.0)).unwrap(), &grid).unwrap();
            assert!((sigma_norm(&f, 0).unwrap() - f.norm()).abs() < 1e-14);
            assert!((sigma_norm(&f, 1).unwrap() - 1.0).abs() < 1e-10);
        }
        let eps = 0.5;
        let f = evaluate(&GaussianWavePacket::standard(eps, PhasePoint::one(0.0, 0.0)).unwrap(), &grid).unwrap();
        // ||x^2 g||^2 = 3 eps^2 / 4
        let want = (0.75f64).sqrt() * eps;
        let got = sigma_norm(&f, 2).unwrap();
        assert!((got - want.max(1.0)).abs() < 1e-10);
    }

    #[test]
    fn wp_scale_of_standard_profile_is_standard_packet() {
        let eps = 0.07;
        let grid = fine_grid(0.0, 3.0);
        let z = PhasePoint::one(0.4, -0.9);
        let f = wp_scale(&z, eps, &grid, |y| C64::new(PI.powf(-0.25) * (-0.5 * y * y).exp(), 0.0));
        let g = evaluate(&GaussianWavePacket::standard(eps, z).unwrap(), &grid).unwrap();
        assert!(f.sub(&g).unwrap().norm() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn overlap_modulus_law(q1 in -3.0..3.0f64, p1 in -3.0..3.0f64, q2 in -3.0..3.0f64, p2 in -3.0..3.0f64,
                               eps in 0.01..1.0f64) {
            let a = GaussianWavePacket::standard(eps, PhasePoint::one(q1, p1)).unwrap();
            let b = GaussianWavePacket::standard(eps, PhasePoint::one(q2, p2)).unwrap();
            let want = (-((q1 - q2).powi(2) + (p1 - p2).powi(2)) / (4.0 * eps)).exp();
            prop_assert!((overlap(&a, &b).unwrap().norm() - want).abs() <= 1e-12);
        }

        #[test]
        fn moment_law_for_translated_packets(q in -2.0..2.0f64, p in -2.0..2.0f64, eps in 0.05..0.5f64) {
            let grid = Grid1D::covering(0.0, 8.0, 4096).unwrap();
            let f = evaluate(&GaussianWavePacket::standard(eps, PhasePoint::one(q, p)).unwrap(), &grid).unwrap();
            let xf = GridFunction::from_fn(grid, eps, |x| f.values[0][((x - grid.x_min) / grid.dx()).round() as usize] * x);
            prop_assert!((xf.norm_squared() - (q * q + eps / 2.0)).abs() < 1e-9);
            let want = (q * q + eps / 2.0).max(p * p + eps / 2.0).max(1.0).sqrt();
            prop_assert!((sigma_norm(&f, 1).unwrap() - want).abs() < 1e-9);
        }
    }
}
