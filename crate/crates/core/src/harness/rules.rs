//! Phase-space quadrature rules: tensor grids and Monte-Carlo samples drawn
//! from the coefficient density `|<g_z, v0>| dz`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classical::PhasePoint;
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::wavepackets;
use num_complex::Complex64;

/// Largest rule the builders will produce.
pub const MAX_NODES: usize = 4_000_000;

/// Cells in the Monte-Carlo proposal grid.
pub const PROPOSAL_CELLS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    Grid,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<PhasePoint>,
    pub weights: Vec<f64>,
    pub kind: RuleKind,
    pub seed: Option<u64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn axis(lo: f64, hi: f64, spacing: f64) -> Vec<f64> {
    let n = ((hi - lo) / spacing + 1e-9).floor() as usize + 1;
    (0..n).map(|i| lo + i as f64 * spacing).collect()
}

/// Tensor grid over `extent` (one `(lo, hi)` pair per phase-space axis,
/// positions first) with weights `spacing^{2d}`.
pub fn build_rule_grid(extent: &[(f64, f64)], spacing: f64) -> Result<QuadratureRule> {
    if extent.is_empty() || extent.len() % 2 != 0 {
        return Err(Error::InvalidParameter("extent needs one range per phase-space axis".into()));
    }
    if !(spacing > 0.0) {
        return Err(Error::InvalidParameter(format!("spacing must be positive, got {spacing}")));
    }
    if extent.iter().any(|(lo, hi)| !(hi >= lo)) {
        return Err(Error::EmptyExtent);
    }
    let axes: Vec<Vec<f64>> = extent.iter().map(|&(lo, hi)| axis(lo, hi, spacing)).collect();
    let total = axes.iter().try_fold(1usize, |acc, a| acc.checked_mul(a.len())).unwrap_or(usize::MAX);
    if total > MAX_NODES {
        return Err(Error::TooManyNodes { nodes: total, cap: MAX_NODES });
    }
    let d = extent.len() / 2;
    let w = spacing.powi(2 * d as i32);
    let mut nodes = Vec::with_capacity(total);
    let mut idx = vec![0usize; axes.len()];
    for _ in 0..total {
        let coords: Vec<f64> = idx.iter().zip(&axes).map(|(&i, a)| a[i]).collect();
        nodes.push(PhasePoint::from_slice(&coords));
        for (k, a) in idx.iter_mut().zip(&axes).rev() {
            *k += 1;
            if *k < a.len() {
                break;
            }
            *k = 0;
        }
    }
    Ok(QuadratureRule { nodes, weights: vec![w; total], kind: RuleKind::Grid, seed: None })
}

/// Samples `n` nodes i.i.d. from `|<g_z, v0>| dz` (1-D) by inverse CDF on
/// a piecewise-constant proposal with uniform jitter inside each cell.
///
/// Returns the rule (weights `1/n`) and the importance-weighted
/// coefficients `r_j = <g_{z_j}, v0> / rho(z_j)`, where `rho` is the
/// normalized proposal density actually sampled, so that
/// `sum_j w_j r_j F(z_j)` is unbiased for `int <g_z, v0> F(z) dz`.
pub fn build_rule_mc(v0: &GridFunction, n: usize, seed: u64) -> Result<(QuadratureRule, Vec<Complex64>)> {
    if n == 0 {
        return Err(Error::InvalidParameter("Monte-Carlo rule needs at least one node".into()));
    }
    let bx = wavepackets::phase_space_box(v0, 0, 8.0)?;
    let side = (PROPOSAL_CELLS as f64).sqrt().round() as usize;
    let (hq, hp) = ((bx[0].1 - bx[0].0) / side as f64, (bx[1].1 - bx[1].0) / side as f64);
    let centers: Vec<PhasePoint> = (0..side * side)
        .map(|c| PhasePoint::one(bx[0].0 + (c / side) as f64 * hq + 0.5 * hq, bx[1].0 + (c % side) as f64 * hp + 0.5 * hp))
        .collect();
    let dens: Vec<f64> = wavepackets::analyze(v0, &centers)?.iter().map(|c| c.norm()).collect();
    let cell_area = hq * hp;
    let mut cdf = Vec::with_capacity(dens.len());
    let mut acc = 0.0;
    for d in &dens {
        acc += d * cell_area;
        cdf.push(acc);
    }
    let z_total = acc;
    if !(z_total > 0.0) {
        return Err(Error::Degenerate("initial data has zero coefficient mass".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::with_capacity(n);
    let mut rho = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * z_total;
        let cell = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        let jq: f64 = rng.random::<f64>() - 0.5;
        let jp: f64 = rng.random::<f64>() - 0.5;
        let c = &centers[cell];
        nodes.push(PhasePoint::one(c.q[0] + jq * hq, c.p[0] + jp * hp));
        rho.push(dens[cell] / z_total);
    }
    let coeffs = wavepackets::analyze(v0, &nodes)?;
    let r: Vec<Complex64> = coeffs.iter().zip(&rho).map(|(c, d)| c / *d).collect();
    let rule = QuadratureRule { nodes, weights: vec![1.0 / n as f64; n], kind: RuleKind::MonteCarlo, seed: Some(seed) };
    Ok((rule, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid1D;
    use crate::wavepackets::{evaluate, GaussianWavePacket};

    #[test]
    fn grid_rule_counting() {
        let r = build_rule_grid(&[(-2.0, 2.0), (-2.0, 2.0)], 0.5).unwrap();
        assert_eq!(r.len(), 81);
        assert!(r.weights.iter().all(|&w| w == 0.25));
        assert_eq!(r.nodes[0], PhasePoint::one(-2.0, -2.0));
        assert_eq!(r.nodes[1], PhasePoint::one(-2.0, -1.5));
        assert_eq!(r.nodes[80], PhasePoint::one(2.0, 2.0));
    }

    #[test]
    fn grid_rule_errors() {
        assert!(matches!(build_rule_grid(&[(1.0, 0.0), (0.0, 1.0)], 0.1), Err(Error::EmptyExtent)));
        assert!(matches!(build_rule_grid(&[(-1e3, 1e3), (-1e3, 1e3)], 1e-2), Err(Error::TooManyNodes { .. })));
    }

    fn packet_data(eps: f64, q: f64, p: f64) -> GridFunction {
        let grid = Grid1D::covering(q, 4.0, 2048).unwrap();
        evaluate(&GaussianWavePacket::standard(eps, PhasePoint::one(q, p)).unwrap(), &grid).unwrap()
    }

    #[test]
    fn monte_carlo_mean_locates_the_packet() {
        let eps = 0.1;
        let (q, p) = (0.7, -0.4);
        let n = 10_000;
        let (rule, coeffs) = build_rule_mc(&packet_data(eps, q, p), n, 7).unwrap();
        assert!(rule.weights.iter().all(|&w| w == 1.0 / n as f64));
        let mq = rule.nodes.iter().map(|z| z.q[0]).sum::<f64>() / n as f64;
        let mp = rule.nodes.iter().map(|z| z.p[0]).sum::<f64>() / n as f64;
        // |<g_z, g_z*>| is a Gaussian with variance 2 eps per coordinate
        let se = (2.0 * eps / n as f64).sqrt();
        assert!((mq - q).abs() < 3.0 * se && (mp - p).abs() < 3.0 * se);
        // the importance-weighted mass estimates the frame mass ||v0||^2 = 1
        let mass: f64 = coeffs
            .iter()
            .zip(&rule.nodes)
            .map(|(r, z)| {
                let g = GaussianWavePacket::standard(eps, z.clone()).unwrap();
                let target = GaussianWavePacket::standard(eps, PhasePoint::one(q, p)).unwrap();
                (r * wavepackets::overlap(&g, &target).unwrap().conj()).re
            })
            .sum::<f64>()
            / n as f64
            / (2.0 * std::f64::consts::PI * eps);
        assert!((mass - 1.0).abs() < 0.05, "mass {mass}");
    }

    #[test]
    fn monte_carlo_single_node_and_determinism() {
        let v0 = packet_data(0.1, 0.0, 0.0);
        let (r1, c1) = build_rule_mc(&v0, 1, 3).unwrap();
        assert_eq!(r1.len(), 1);
        assert_eq!(r1.weights, vec![1.0]);
        let (r2, c2) = build_rule_mc(&v0, 1, 3).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(c1, c2);
        let zero = GridFunction::zeros(v0.grid, 0.1, 1);
        assert!(build_rule_mc(&zero, 10, 1).is_err());
    }
}
