//! Hamiltonian trajectories together with the linearized flow and the
//! action integral.
//!
//! The joint state `(z, F, S)` obeys
//! `z' = J dh`, `F' = J Hess(h) F`, `S' = p . q' - h`
//! with `F(t0) = Id` and `S(t0) = 0`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hamiltonians::ScalarHamiltonian;
use crate::ode::{integrate, OdeOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

impl PhasePoint {
    pub fn new(q: DVector<f64>, p: DVector<f64>) -> Self {
        assert_eq!(q.len(), p.len(), "position and momentum dimensions differ");
        Self { q, p }
    }

    pub fn one(q: f64, p: f64) -> Self {
        Self { q: DVector::from_element(1, q), p: DVector::from_element(1, p) }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// Coordinates `(q, p)` as one `2d` vector.
    pub fn to_vector(&self) -> DVector<f64> {
        let d = self.dim();
        DVector::from_iterator(2 * d, self.q.iter().chain(self.p.iter()).copied())
    }

    pub fn from_slice(z: &[f64]) -> Self {
        let d = z.len() / 2;
        Self { q: DVector::from_column_slice(&z[..d]), p: DVector::from_column_slice(&z[d..2 * d]) }
    }

    /// Copy with coordinate `j` (positions first) moved by `step`.
    pub fn perturbed(&self, j: usize, step: f64) -> Self {
        let mut z = self.clone();
        let d = self.dim();
        if j < d {
            z.q[j] += step;
        } else {
            z.p[j - d] += step;
        }
        z
    }

    pub fn distance(&self, other: &PhasePoint) -> f64 {
        ((&self.q - &other.q).norm_squared() + (&self.p - &other.p).norm_squared()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.p.iter()).all(|v| v.is_finite())
    }
}

/// Blocks of `F = [[A, B], [C, D]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBlocks {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl JacobianBlocks {
    pub fn identity(d: usize) -> Self {
        Self::from_full(&DMatrix::identity(2 * d, 2 * d))
    }

    pub fn from_full(f: &DMatrix<f64>) -> Self {
        let d = f.nrows() / 2;
        Self {
            a: f.view((0, 0), (d, d)).into_owned(),
            b: f.view((0, d), (d, d)).into_owned(),
            c: f.view((d, 0), (d, d)).into_owned(),
            d: f.view((d, d), (d, d)).into_owned(),
        }
    }

    pub fn full(&self) -> DMatrix<f64> {
        let d = self.a.nrows();
        let mut f = DMatrix::zeros(2 * d, 2 * d);
        f.view_mut((0, 0), (d, d)).copy_from(&self.a);
        f.view_mut((0, d), (d, d)).copy_from(&self.b);
        f.view_mut((d, 0), (d, d)).copy_from(&self.c);
        f.view_mut((d, d), (d, d)).copy_from(&self.d);
        f
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// The standard symplectic matrix `[[0, I], [-I, 0]]`.
pub fn symplectic_j(d: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        j[(i, d + i)] = 1.0;
        j[(d + i, i)] = -1.0;
    }
    j
}

/// Poisson bracket `{a, b} = d_p a . d_q b - d_q a . d_p b` from gradients
/// ordered `(q, p)`.
pub fn poisson_bracket(grad_a: &DVector<f64>, grad_b: &DVector<f64>) -> f64 {
    let d = grad_a.len() / 2;
    (0..d).map(|j| grad_a[d + j] * grad_b[j] - grad_a[j] * grad_b[d + j]).sum()
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<PhasePoint>,
    pub jac: Vec<JacobianBlocks>,
    pub action: Vec<f64>,
    /// Index of the eigenvalue that generated the flow (0 for scalar runs).
    pub level: usize,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> &PhasePoint {
        self.states.last().expect("empty trajectory")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalOptions {
    pub ode: OdeOptions,
    /// Use the analytic flow for linear and quadratic catalog entries.
    pub closed_form: bool,
}

impl Default for ClassicalOptions {
    fn default() -> Self {
        Self { ode: OdeOptions::default(), closed_form: true }
    }
}

impl ClassicalOptions {
    pub fn numeric(ode: OdeOptions) -> Self {
        Self { ode, closed_form: false }
    }
}

/// Propagates `z0` from `times[0]` and records `(z, F, S)` at every time in
/// `times` (monotone; may run backward).
pub fn propagate(h: &ScalarHamiltonian, z0: &PhasePoint, times: &[f64], opts: &ClassicalOptions) -> Result<TrajectoryRecord> {
    if times.is_empty() {
        return Err(Error::InvalidParameter("empty output grid".into()));
    }
    let d = h.dim();
    if z0.dim() != d {
        return Err(Error::InvalidParameter(format!("phase point has dimension {}, Hamiltonian {d}", z0.dim())));
    }
    if !z0.is_finite() {
        return Err(Error::NonFinite { t: times[0] });
    }
    let t0 = times[0];
    if opts.closed_form && h.is_quadratic() {
        let mut rec = empty_record(times.len());
        for &t in times {
            let (z, f, s) = h.closed_form(z0, t - t0).expect("quadratic entries have a closed form");
            rec.times.push(t);
            rec.states.push(z);
            rec.jac.push(JacobianBlocks::from_full(&f));
            rec.action.push(s);
        }
        return Ok(rec);
    }

    let n = 2 * d;
    let mut y0 = Vec::with_capacity(n + n * n + 1);
    y0.extend(z0.q.iter());
    y0.extend(z0.p.iter());
    let id = DMatrix::<f64>::identity(n, n);
    // row-major storage of F
    for i in 0..n {
        for j in 0..n {
            y0.push(id[(i, j)]);
        }
    }
    y0.push(0.0);

    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let z = PhasePoint::from_slice(&y[..n]);
        let g = h.gradient(t, &z);
        let hess = h.hessian(t, &z);
        for j in 0..d {
            dy[j] = g[d + j];
            dy[d + j] = -g[j];
        }
        // F' = J Hess F: rows q get (Hess F)_{p rows}, rows p get -(Hess F)_{q rows}
        let f = &y[n..n + n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for m in 0..n {
                    acc += hess[(i, m)] * f[m * n + j];
                }
                if i < d {
                    dy[n + (d + i) * n + j] = -acc;
                } else {
                    dy[n + (i - d) * n + j] = acc;
                }
            }
        }
        let pq_dot: f64 = (0..d).map(|j| z.p[j] * g[d + j]).sum();
        dy[n + n * n] = pq_dot - h.value(t, &z);
        if dy.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t });
        }
        Ok(())
    };
    let ys = integrate(rhs, t0, &y0, times, &opts.ode)?;
    let mut rec = empty_record(times.len());
    for (&t, y) in times.iter().zip(ys) {
        rec.times.push(t);
        rec.states.push(PhasePoint::from_slice(&y[..n]));
        let f = DMatrix::from_row_slice(n, n, &y[n..n + n * n]);
        rec.jac.push(JacobianBlocks::from_full(&f));
        rec.action.push(y[n + n * n]);
    }
    Ok(rec)
}

fn empty_record(cap: usize) -> TrajectoryRecord {
    TrajectoryRecord {
        times: Vec::with_capacity(cap),
        states: Vec::with_capacity(cap),
        jac: Vec::with_capacity(cap),
        action: Vec::with_capacity(cap),
        level: 0,
    }
}

/// Single-interval convenience: record at `[t0, t1]`.
pub fn propagate_to(h: &ScalarHamiltonian, z0: &PhasePoint, t0: f64, t1: f64, opts: &ClassicalOptions) -> Result<TrajectoryRecord> {
    if t1 == t0 {
        return propagate(h, z0, &[t0], opts);
    }
    propagate(h, z0, &[t0, t1], opts)
}

/// Data-parallel propagation of many initial points on a shared grid.
pub fn propagate_many(
    h: &ScalarHamiltonian,
    z0s: &[PhasePoint],
    times: &[f64],
    opts: &ClassicalOptions,
) -> Vec<Result<TrajectoryRecord>> {
    z0s.par_iter().map(|z| propagate(h, z, times, opts)).collect()
}

/// `max_t ||F^T J F - J||_F` over the record.
pub fn symplectic_defect(record: &TrajectoryRecord) -> f64 {
    let Some(first) = record.jac.first() else {
        return 0.0;
    };
    let j = symplectic_j(first.dim());
    record
        .jac
        .iter()
        .map(|b| {
            let f = b.full();
            (f.transpose() * &j * f - &j).norm()
        })
        .fold(0.0, f64::max)
}

/// `max_t |h(z(t)) - h(z0)|` for a time-independent `h`.
pub fn energy_drift(h: &ScalarHamiltonian, record: &TrajectoryRecord) -> f64 {
    let e0 = h.value(record.times[0], &record.states[0]);
    record
        .times
        .iter()
        .zip(&record.states)
        .map(|(&t, z)| (h.value(t, z) - e0).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn numeric(tol: f64) -> ClassicalOptions {
        ClassicalOptions::numeric(OdeOptions::with_tolerance(tol))
    }

    #[test]
    fn linear_minus_level_matches_closed_form() {
        let h = ScalarHamiltonian::linear(-1.0);
        let (q0, p0) = (-0.7, 0.4);
        for opts in [ClassicalOptions::default(), numeric(1e-12)] {
            let rec = propagate_to(&h, &PhasePoint::one(q0, p0), 0.0, 1.0, &opts).unwrap();
            let z = rec.last_state();
            assert!((z.q[0] - (q0 + 1.0)).abs() < 1e-10);
            assert!((z.p[0] - (p0 + 1.0)).abs() < 1e-10);
            assert!((rec.jac[1].full() - DMatrix::identity(2, 2)).norm() < 1e-10);
            assert!((rec.action[1] - (q0 + 0.5)).abs() < 1e-10);
        }
    }

    #[test]
    fn harmonic_quarter_period() {
        let h = ScalarHamiltonian::harmonic(1);
        let rec = propagate_to(&h, &PhasePoint::one(1.0, 0.0), 0.0, PI / 2.0, &numeric(1e-12)).unwrap();
        let z = rec.last_state();
        assert!(z.q[0].abs() < 1e-10);
        assert!((z.p[0] + 1.0).abs() < 1e-10);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!((rec.jac[1].full() - rot).norm() < 1e-10);
    }

    #[test]
    fn zero_length_run_is_initial_condition() {
        let h = ScalarHamiltonian::torus(1.0);
        let z0 = PhasePoint::one(0.3, -0.2);
        let rec = propagate_to(&h, &z0, 2.0, 2.0, &ClassicalOptions::default()).unwrap();
        assert_eq!(rec.states[0], z0);
        assert_eq!(rec.jac[0], JacobianBlocks::identity(1));
        assert_eq!(rec.action[0], 0.0);
    }

    #[test]
    fn closed_forms_agree_with_integrator() {
        let z1 = PhasePoint::new(DVector::from_vec(vec![0.4, -1.0]), DVector::from_vec(vec![0.3, 0.8]));
        for h in [ScalarHamiltonian::harmonic(2), ScalarHamiltonian::free(2)] {
            let times = [0.0, 0.7, 2.9];
            let a = propagate(&h, &z1, &times, &ClassicalOptions::default()).unwrap();
            let b = propagate(&h, &z1, &times, &numeric(1e-12)).unwrap();
            for i in 0..times.len() {
                assert!(a.states[i].distance(&b.states[i]) < 1e-10);
                assert!((a.jac[i].full() - b.jac[i].full()).norm() < 1e-10);
                assert!((a.action[i] - b.action[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn symplectic_defects() {
        let h = ScalarHamiltonian::harmonic(1);
        let times: Vec<f64> = (0..=40).map(|i| i as f64 * 0.25).collect();
        let rec = propagate(&h, &PhasePoint::one(1.0, 0.5), &times, &numeric(1e-10)).unwrap();
        assert!(symplectic_defect(&rec) <= 1e-8);
        let lin = ScalarHamiltonian::linear(1.0);
        let rec = propagate(&lin, &PhasePoint::one(1.0, 0.5), &times, &numeric(1e-10)).unwrap();
        assert_eq!(symplectic_defect(&rec), 0.0);
        let torus = ScalarHamiltonian::torus(1.0);
        let rec = propagate(&torus, &PhasePoint::one(0.2, 0.9), &times, &ClassicalOptions::default()).unwrap();
        assert!(symplectic_defect(&rec) <= 1e-6);
    }

    #[test]
    fn poisson_bracket_of_coordinates() {
        // {p, q} = 1
        let gq = DVector::from_vec(vec![1.0, 0.0]);
        let gp = DVector::from_vec(vec![0.0, 1.0]);
        assert_eq!(poisson_bracket(&gp, &gq), 1.0);
        assert_eq!(poisson_bracket(&gq, &gp), -1.0);
    }

    #[test]
    fn backward_run_inverts_forward_run() {
        let h = ScalarHamiltonian::torus(1.0);
        let z0 = PhasePoint::one(0.5, 0.3);
        let fwd = propagate_to(&h, &z0, 0.0, 3.0, &numeric(1e-12)).unwrap();
        let back = propagate_to(&h, fwd.last_state(), 3.0, 0.0, &numeric(1e-12)).unwrap();
        assert!(back.last_state().distance(&z0) < 1e-9);
        assert!((back.action[1] + fwd.action[1]).abs() < 1e-9);
    }

    fn catalog() -> Vec<ScalarHamiltonian> {
        vec![
            ScalarHamiltonian::free(1),
            ScalarHamiltonian::harmonic(1),
            ScalarHamiltonian::torus(1.0),
            ScalarHamiltonian::linear(1.0),
            ScalarHamiltonian::linear(-1.3),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn symplecticity_and_energy(q in -3.0..3.0f64, p in -2.0..2.0f64, t in 0.5..20.0f64) {
            let tol = 1e-10;
            for h in catalog() {
                let times: Vec<f64> = (0..=8).map(|i| t * i as f64 / 8.0).collect();
                let rec = propagate(&h, &PhasePoint::one(q, p), &times, &numeric(tol)).unwrap();
                let scale = 1.0 + rec.states.iter().map(|z| z.to_vector().amax()).fold(0.0, f64::max);
                prop_assert!(symplectic_defect(&rec) <= 10.0 * tol * scale * t.max(1.0));
                prop_assert!(energy_drift(&h, &rec) <= 10.0 * tol * scale * scale * t.max(1.0));
            }
        }

        #[test]
        fn flow_composition_and_action_additivity(q in -3.0..3.0f64, p in -2.0..2.0f64,
                                                  t1 in 0.1..4.0f64, t2 in 0.1..4.0f64) {
            let tol = 1e-10;
            let h = ScalarHamiltonian::torus(1.0);
            let z0 = PhasePoint::one(q, p);
            let direct = propagate_to(&h, &z0, 0.0, t1 + t2, &numeric(tol)).unwrap();
            let first = propagate_to(&h, &z0, 0.0, t1, &numeric(tol)).unwrap();
            let second = propagate_to(&h, first.last_state(), t1, t1 + t2, &numeric(tol)).unwrap();
            let scale = 1.0 + direct.last_state().to_vector().amax();
            prop_assert!(direct.last_state().distance(second.last_state()) <= 10.0 * tol * scale * (t1 + t2));
            let s_split = first.action[1] + second.action[1];
            prop_assert!((direct.action[1] - s_split).abs() <= 10.0 * tol * scale * scale * (t1 + t2));
            let f_split = second.jac[1].full() * first.jac[1].full();
            prop_assert!((direct.jac[1].full() - f_split).norm() <= 100.0 * tol * scale * (t1 + t2));
        }
    }
}
