//! Time-dependent Hamiltonians of the form
//! `H(q, p, t) = |p|^2/2 + eps * tau(t) * beta(|p|^2) * V(q)`
//! together with their numerical flow `G_t` and the linearized (variational)
//! flow used for Jacobians.
//!
//! The bump `beta` controls agreement with the kinetic term near the momentum
//! boundary `|p| = C`: the plateau profile vanishes identically on the collar
//! `|p| >= C - delta`, which makes boundary invariance exact rather than
//! approximate. The homotopy blend `H_lambda = (1 - lambda) H0 + lambda H`
//! folds into a single scale factor on the perturbation.

use alloc::format;
use alloc::vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fmath;
use crate::geometry::{variational_rhs, CosineField, CotangentPoint, MetricField, TorusMode};
use crate::integrate;
use crate::tol;

/// Momentum bump profile multiplying the potential.
#[derive(Debug, Clone, PartialEq)]
pub enum BumpProfile {
    /// No bump; the perturbation acts everywhere (non-compliant unless eps = 0).
    Uniform,
    /// `cos^2(pi |p| / (2C))`: vanishes at the boundary only, not on a collar.
    CosineSquared,
    /// Degree-9 smoothstep plateau: identically 1 for `|p| <= core`,
    /// identically 0 for `|p| >= C - delta`, C^4 across the ramp. A wide ramp
    /// keeps momentum second derivatives moderate, which keeps the twist
    /// stage count manageable.
    Plateau { delta: f64, core: f64 },
}

/// A time-dependent Hamiltonian specification over a torus metric.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSpec {
    metric: MetricField,
    epsilon: f64,
    potential: CosineField,
    bump: BumpProfile,
    c_bound: f64,
    lambda: f64,
    time_dependent: bool,
    step: f64,
}

impl HamiltonianSpec {
    pub fn new(
        metric: MetricField,
        epsilon: f64,
        potential: CosineField,
        bump: BumpProfile,
        c_bound: f64,
        time_dependent: bool,
    ) -> Result<Self> {
        if !(c_bound > 0.0) || !c_bound.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "momentum bound C must be positive and finite, got {c_bound}"
            )));
        }
        if metric.mode() == TorusMode::Torus && c_bound >= metric.injectivity_radius() {
            return Err(Error::InvalidParameter(format!(
                "momentum bound C = {c_bound} must stay below the injectivity radius {}",
                metric.injectivity_radius()
            )));
        }
        if !epsilon.is_finite() {
            return Err(Error::InvalidParameter("epsilon must be finite".into()));
        }
        if let BumpProfile::Plateau { delta, core } = bump {
            if !(delta > 0.0) || delta >= c_bound {
                return Err(Error::InvalidParameter(format!(
                    "plateau collar delta = {delta} must satisfy 0 < delta < C"
                )));
            }
            if !(core > 0.0) || core >= c_bound - delta {
                return Err(Error::InvalidParameter(format!(
                    "plateau core = {core} must satisfy 0 < core < C - delta"
                )));
            }
        }
        for term in &potential.terms {
            if term.wave.len() != metric.dim() {
                return Err(Error::InvalidInput(format!(
                    "potential wave vector length {} does not match dimension {}",
                    term.wave.len(),
                    metric.dim()
                )));
            }
            if !term.coeff.is_finite() {
                return Err(Error::InvalidInput(
                    "non-finite potential coefficient".into(),
                ));
            }
        }
        Ok(Self {
            metric,
            epsilon,
            potential,
            bump,
            c_bound,
            lambda: 1.0,
            time_dependent,
            step: tol::INTEGRATOR_STEP,
        })
    }

    /// The unperturbed kinetic Hamiltonian on the given metric.
    pub fn kinetic(metric: MetricField, c_bound: f64) -> Result<Self> {
        Self::new(
            metric,
            0.0,
            CosineField::default(),
            BumpProfile::Uniform,
            c_bound,
            false,
        )
    }

    /// Perturbation with a compliant plateau bump: collar width `0.1 C`,
    /// full strength inside `|p| <= C / 3`.
    pub fn plateau_perturbation(
        metric: MetricField,
        epsilon: f64,
        potential: CosineField,
        c_bound: f64,
        time_dependent: bool,
    ) -> Result<Self> {
        let delta = tol::COLLAR_DELTA_FACTOR * c_bound;
        let core = c_bound / 3.0;
        Self::new(
            metric,
            epsilon,
            potential,
            BumpProfile::Plateau { delta, core },
            c_bound,
            time_dependent,
        )
    }

    /// Momentum interval `(|p| lo, |p| hi)` over which the bump ramps, if the
    /// profile has compact support.
    pub fn bump_ramp(&self) -> Option<(f64, f64)> {
        match self.bump {
            BumpProfile::Plateau { delta, core } => Some((core, self.c_bound - delta)),
            _ => None,
        }
    }

    pub fn metric(&self) -> &MetricField {
        &self.metric
    }

    pub fn c_bound(&self) -> f64 {
        self.c_bound
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn bump(&self) -> &BumpProfile {
        &self.bump
    }

    pub fn time_dependent(&self) -> bool {
        self.time_dependent
    }

    pub fn integrator_step(&self) -> f64 {
        self.step
    }

    /// Overrides the nominal integrator step (step-halving audits).
    pub fn with_step(mut self, step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "integrator step must be positive, got {step}"
            )));
        }
        self.step = step;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    /// Scale multiplying the perturbation after the homotopy blend.
    pub fn effective_epsilon(&self) -> f64 {
        self.lambda * self.epsilon
    }

    /// Affine homotopy `H_lambda = (1 - lambda) H0 + lambda H`. Both
    /// endpoints agree with the kinetic term on the collar, hence so does
    /// every intermediate blend.
    pub fn blend(&self, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidParameter(format!(
                "blend parameter lambda = {lambda} outside [0, 1]"
            )));
        }
        let mut out = self.clone();
        out.lambda = lambda;
        Ok(out)
    }

    /// True when the perturbation vanishes identically on a boundary collar,
    /// so that `H = H0` holds exactly for `|p| >= C - delta`.
    pub fn is_compliant(&self) -> bool {
        self.effective_epsilon() == 0.0
            || self.potential.terms.is_empty()
            || matches!(self.bump, BumpProfile::Plateau { .. })
    }

    fn tau(&self, t: f64) -> f64 {
        if self.time_dependent {
            1.0 + 0.5 * fmath::sin_2pi(t)
        } else {
            1.0
        }
    }

    /// Bump value and first two derivatives with respect to `y = |p|^2`.
    fn bump_jet(&self, y: f64) -> (f64, f64, f64) {
        match self.bump {
            BumpProfile::Uniform => (1.0, 0.0, 0.0),
            BumpProfile::CosineSquared => {
                let a = core::f64::consts::PI / self.c_bound;
                let a2y = a * a * y;
                let (c, c1, c2) = if a2y < 1e-6 {
                    // series in x2 = a^2 y for cos(a sqrt(y)) and its y-derivatives
                    let x2 = a2y;
                    let c = 1.0 - x2 / 2.0 + x2 * x2 / 24.0;
                    let c1 = a * a * (-0.5 + x2 / 12.0 - x2 * x2 / 240.0);
                    let c2 = a * a * a * a * (1.0 / 12.0 - x2 / 120.0);
                    (c, c1, c2)
                } else {
                    let s = fmath::sqrt(y);
                    let c = fmath::cos(a * s);
                    let sn = fmath::sin(a * s);
                    let c1 = -a * sn / (2.0 * s);
                    let c2 = -a * (a * s * c - sn) / (4.0 * s * s * s);
                    (c, c1, c2)
                };
                (0.5 * (1.0 + c), 0.5 * c1, 0.5 * c2)
            }
            BumpProfile::Plateau { delta, core } => {
                let y_lo = core * core;
                let y_hi = (self.c_bound - delta) * (self.c_bound - delta);
                if y <= y_lo {
                    (1.0, 0.0, 0.0)
                } else if y >= y_hi {
                    (0.0, 0.0, 0.0)
                } else {
                    let width = y_hi - y_lo;
                    let u = (y - y_lo) / width;
                    let v = 1.0 - u;
                    let s = u * u * u * u * u
                        * (126.0 + u * (-420.0 + u * (540.0 + u * (-315.0 + 70.0 * u))));
                    let u4 = u * u * u * u;
                    let v3 = v * v * v;
                    let s1 = 630.0 * u4 * v3 * v;
                    let s2 = 2520.0 * u * u * u * v3 * (1.0 - 2.0 * u);
                    (1.0 - s, -s1 / width, -s2 / (width * width))
                }
            }
        }
    }

    /// Hamiltonian value.
    pub fn value(&self, q: &DVector<f64>, p: &DVector<f64>, t: f64) -> f64 {
        let y = self.metric.p_norm_sq(q, p);
        let (b, _, _) = self.bump_jet(y);
        0.5 * y + self.effective_epsilon() * self.tau(t) * b * self.potential.value(q)
    }

    /// Gradients with respect to q and p.
    pub fn gradients(
        &self,
        q: &DVector<f64>,
        p: &DVector<f64>,
        t: f64,
    ) -> (DVector<f64>, DVector<f64>) {
        let n = self.dim();
        let a = self.metric.a_mat(q);
        let ap = &a * p;
        let y = p.dot(&ap);
        let eff = self.effective_epsilon() * self.tau(t);
        let w = eff * self.potential.value(q);
        let (b, b1, _) = self.bump_jet(y);
        let dv = self.potential.gradient(q);
        let grad_p = &ap * (1.0 + 2.0 * w * b1);
        let mut grad_q = DVector::zeros(n);
        for i in 0..n {
            let ydq_i = p.dot(&(self.metric.cometric_partial(q, i) * p));
            grad_q[i] = (0.5 + w * b1) * ydq_i + eff * b * dv[i];
        }
        (grad_q, grad_p)
    }

    /// Full second-derivative matrix in `(q, p)` block order.
    pub fn hessian(&self, q: &DVector<f64>, p: &DVector<f64>, t: f64) -> DMatrix<f64> {
        let n = self.dim();
        let a = self.metric.a_mat(q);
        let ap = &a * p;
        let y = p.dot(&ap);
        let eff = self.effective_epsilon() * self.tau(t);
        let v = self.potential.value(q);
        let w = eff * v;
        let (b, b1, b2) = self.bump_jet(y);
        let dv = self.potential.gradient(q);
        let d2v = self.potential.hessian(q);

        let mut ydq = DVector::zeros(n);
        let mut da_p = vec![DVector::zeros(n); n];
        for i in 0..n {
            da_p[i] = self.metric.cometric_partial(q, i) * p;
            ydq[i] = p.dot(&da_p[i]);
        }
        let dw = &dv * eff;

        let mut h = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                let pd2ap = p.dot(&(self.metric.cometric_second(q, i, j) * p));
                h[(i, j)] = b1 * (dw[j] * ydq[i] + dw[i] * ydq[j])
                    + w * b2 * ydq[i] * ydq[j]
                    + (0.5 + w * b1) * pd2ap
                    + eff * b * d2v[(i, j)];
                let cross = 2.0 * w * b2 * ap[j] * ydq[i]
                    + (1.0 + 2.0 * w * b1) * da_p[i][j]
                    + 2.0 * b1 * dw[i] * ap[j];
                h[(i, n + j)] = cross;
                h[(n + j, i)] = cross;
                h[(n + i, n + j)] = a[(i, j)] * (1.0 + 2.0 * w * b1) + 4.0 * w * b2 * ap[i] * ap[j];
            }
        }
        h
    }

    /// Time-(t0 -> t1) flow map applied to `z`. The trajectory must stay
    /// inside `|p| <= C +` [`tol::ESCAPE_MARGIN`].
    pub fn flow(&self, t0: f64, t1: f64, z: &CotangentPoint) -> Result<CotangentPoint> {
        Ok(self.flow_full(t0, t1, z, false, false)?.point)
    }

    /// Flow together with the accumulated action `integral of (p dq - H dt)`.
    pub fn flow_with_action(
        &self,
        t0: f64,
        t1: f64,
        z: &CotangentPoint,
    ) -> Result<(CotangentPoint, f64)> {
        let out = self.flow_full(t0, t1, z, false, true)?;
        Ok((out.point, out.action.unwrap()))
    }

    /// Jacobian of the time-(t0 -> t1) flow map at `z`, integrated alongside
    /// the trajectory from the variational equations.
    pub fn linearized_flow(&self, t0: f64, t1: f64, z: &CotangentPoint) -> Result<FlowJacobian> {
        Ok(self.flow_full(t0, t1, z, true, false)?.jacobian.unwrap())
    }

    /// Shared integrator for the flow, its Jacobian and the action.
    pub fn flow_full(
        &self,
        t0: f64,
        t1: f64,
        z: &CotangentPoint,
        want_jacobian: bool,
        want_action: bool,
    ) -> Result<FlowResult> {
        let n = self.dim();
        if z.q.len() != n || z.p.len() != n {
            return Err(Error::InvalidInput(format!(
                "phase point dimension mismatch (expected {n})"
            )));
        }
        if z.q.iter().chain(z.p.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite phase point".into()));
        }
        let bound = self.c_bound + tol::ESCAPE_MARGIN;
        let start_norm = self.metric.p_norm(&z.q, &z.p);
        if start_norm > bound {
            return Err(Error::Escape {
                p_norm: start_norm,
                bound,
                time: t0,
            });
        }

        let dim = 2 * n;
        let jac_len = if want_jacobian { dim * dim } else { 0 };
        let act_len = if want_action { 1 } else { 0 };
        let mut y = vec![0.0; dim + jac_len + act_len];
        y[..n].copy_from_slice(z.q.as_slice());
        y[n..dim].copy_from_slice(z.p.as_slice());
        if want_jacobian {
            for i in 0..dim {
                y[dim + i * dim + i] = 1.0;
            }
        }

        let mut rhs = |t: f64, s: &[f64], d: &mut [f64]| {
            let q = DVector::from_column_slice(&s[..n]);
            let p = DVector::from_column_slice(&s[n..dim]);
            let (gq, gp) = self.gradients(&q, &p, t);
            d[..n].copy_from_slice(gp.as_slice());
            for i in 0..n {
                d[n + i] = -gq[i];
            }
            if want_jacobian {
                let hess = self.hessian(&q, &p, t);
                variational_rhs(&hess, &s[dim..dim + jac_len], &mut d[dim..dim + jac_len], n);
            }
            if want_action {
                d[dim + jac_len] = p.dot(&gp) - self.value(&q, &p, t);
            }
        };
        let metric = &self.metric;
        integrate::integrate(
            &mut rhs,
            t0,
            t1,
            &mut y,
            self.step,
            |t, s: &[f64]| {
                let q = DVector::from_column_slice(&s[..n]);
                let p = DVector::from_column_slice(&s[n..dim]);
                let p_norm = metric.p_norm(&q, &p);
                if p_norm > bound {
                    Err(Error::Escape {
                        p_norm,
                        bound,
                        time: t,
                    })
                } else {
                    Ok(())
                }
            },
        )?;

        let point = CotangentPoint::new(
            DVector::from_column_slice(&y[..n]),
            DVector::from_column_slice(&y[n..dim]),
        );
        let jacobian = want_jacobian.then(|| {
            FlowJacobian::new(DMatrix::from_column_slice(dim, dim, &y[dim..dim + jac_len]))
        });
        let action = want_action.then(|| y[dim + jac_len]);
        Ok(FlowResult {
            point,
            jacobian,
            action,
        })
    }
}

/// Result of [`HamiltonianSpec::flow_full`].
#[derive(Debug, Clone)]
pub struct FlowResult {
    pub point: CotangentPoint,
    pub jacobian: Option<FlowJacobian>,
    pub action: Option<f64>,
}

/// Jacobian of a flow map on the cotangent bundle, with block structure
/// `[[dQ/dq, dQ/dp], [dP/dq, dP/dp]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowJacobian {
    pub matrix: DMatrix<f64>,
}

impl FlowJacobian {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows() / 2
    }

    pub fn dq_dq(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.matrix.view((0, 0), (n, n)).into_owned()
    }

    pub fn dq_dp(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.matrix.view((0, n), (n, n)).into_owned()
    }

    pub fn dp_dq(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.matrix.view((n, 0), (n, n)).into_owned()
    }

    pub fn dp_dp(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.matrix.view((n, n), (n, n)).into_owned()
    }

    /// Composition: the Jacobian of `self` applied after `inner`.
    pub fn compose_after(&self, inner: &FlowJacobian) -> FlowJacobian {
        FlowJacobian::new(&self.matrix * &inner.matrix)
    }

    /// Max-norm deviation of `Jac^T J Jac` from the standard symplectic form.
    pub fn symplectic_defect(&self) -> f64 {
        let n = self.dim();
        let j = standard_symplectic_form(n);
        (self.matrix.transpose() * &j * &self.matrix - &j).amax()
    }
}

/// The matrix of the canonical form `dp ^ dq` in `(q, p)` block order.
pub fn standard_symplectic_form(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FourierTerm;
    use crate::rng::SplitMix64;
    use approx::assert_relative_eq;
    use std::vec::Vec;

    fn pendulum(bump: BumpProfile, epsilon: f64) -> HamiltonianSpec {
        HamiltonianSpec::new(
            MetricField::flat(1, TorusMode::Torus),
            epsilon,
            CosineField::new(vec![FourierTerm::new(vec![1], 1.0)]),
            bump,
            0.45,
            false,
        )
        .unwrap()
    }

    fn z1(q: f64, p: f64) -> CotangentPoint {
        CotangentPoint::from_slices(&[q], &[p])
    }

    #[test]
    fn kinetic_flow_is_shear() {
        let h = HamiltonianSpec::kinetic(MetricField::flat(1, TorusMode::Torus), 0.45).unwrap();
        let out = h.flow(0.0, 1.0, &z1(0.1, 0.25)).unwrap();
        assert_relative_eq!(out.q[0], 0.35, max_relative = 1e-13);
        assert_relative_eq!(out.p[0], 0.25, max_relative = 1e-15);
    }

    #[test]
    fn rejects_c_at_injectivity_radius() {
        let r = HamiltonianSpec::kinetic(MetricField::flat(1, TorusMode::Torus), 0.6);
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn collar_agreement_forces_kinetic_flow() {
        let delta = 0.045;
        let h = pendulum(BumpProfile::Plateau { delta, core: 0.15 }, 0.1);
        let h0 = HamiltonianSpec::kinetic(MetricField::flat(1, TorusMode::Torus), 0.45).unwrap();
        for &p in &[0.45, 0.43, 0.41] {
            let z = z1(0.2, p);
            let a = h.flow(0.0, 1.0, &z).unwrap();
            let b = h0.flow(0.0, 1.0, &z).unwrap();
            assert!((a.q[0] - b.q[0]).abs() < 1e-10);
            assert!((a.p[0] - b.p[0]).abs() < 1e-10);
        }
        assert!(h.is_compliant());
        assert!(!pendulum(BumpProfile::CosineSquared, 0.1).is_compliant());
    }

    #[test]
    fn pendulum_flow_passes_step_halving() {
        let h = pendulum(BumpProfile::CosineSquared, 0.1);
        let z = z1(0.15, 0.2);
        let coarse = h.flow(0.0, 1.0, &z).unwrap();
        let mid = h.flow(0.0, 0.5, &z).unwrap();
        let fine = h.flow(0.5, 1.0, &mid).unwrap();
        assert!((coarse.q[0] - fine.q[0]).abs() < 1e-10);
        assert!((coarse.p[0] - fine.p[0]).abs() < 1e-10);
    }

    #[test]
    fn autonomous_energy_drift_is_tiny() {
        let h = pendulum(BumpProfile::Plateau { delta: 0.045, core: 0.15 }, 0.1);
        let z = z1(0.3, 0.2);
        let e0 = h.value(&z.q, &z.p, 0.0);
        let out = h.flow(0.0, 1.0, &z).unwrap();
        let e1 = h.value(&out.q, &out.p, 1.0);
        assert!((e1 - e0).abs() < 1e-10, "drift {:e}", (e1 - e0).abs());
    }

    #[test]
    fn blend_endpoints_and_midpoint() {
        let h = pendulum(BumpProfile::Plateau { delta: 0.045, core: 0.15 }, 0.1);
        let h0 = h.blend(0.0).unwrap();
        let h1 = h.blend(1.0).unwrap();
        let hm = h.blend(0.5).unwrap();
        let mut rng = SplitMix64::new(3);
        for _ in 0..100 {
            let q = DVector::from_vec(vec![rng.uniform(0.0, 1.0)]);
            let p = DVector::from_vec(vec![rng.uniform(-0.5, 0.5)]);
            let t = rng.uniform(0.0, 1.0);
            let v0 = h0.value(&q, &p, t);
            let v1 = h1.value(&q, &p, t);
            let kinetic = 0.5 * p[0] * p[0];
            assert_relative_eq!(v0, kinetic, max_relative = 1e-15);
            assert_relative_eq!(v1, h.value(&q, &p, t), max_relative = 1e-15);
            assert_relative_eq!(hm.value(&q, &p, t), 0.5 * (v0 + v1), epsilon = 1e-15);
        }
        assert!(matches!(h.blend(1.5), Err(Error::InvalidParameter(_))));
        assert!(matches!(h.blend(-0.1), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn linearized_flat_kinetic_is_unit_shear() {
        let h = HamiltonianSpec::kinetic(MetricField::flat(2, TorusMode::Torus), 0.45).unwrap();
        let z = CotangentPoint::from_slices(&[0.3, 0.9], &[0.1, -0.2]);
        let jac = h.linearized_flow(0.0, 1.0, &z).unwrap();
        let mut expected = DMatrix::identity(4, 4);
        expected[(0, 2)] = 1.0;
        expected[(1, 3)] = 1.0;
        assert!((jac.matrix - expected).amax() < 1e-12);
    }

    #[test]
    fn hessian_matches_finite_differences() {
        for bump in [BumpProfile::CosineSquared, BumpProfile::Plateau { delta: 0.045, core: 0.15 }] {
            let h = pendulum(bump, 0.1);
            let q = DVector::from_vec(vec![0.23]);
            let p = DVector::from_vec(vec![0.38]); // inside the plateau ramp
            let hess = h.hessian(&q, &p, 0.0);
            let fd = 1e-5;
            for i in 0..2 {
                for j in 0..2 {
                    let eval = |sq: f64, sp: f64| {
                        let qq = DVector::from_vec(vec![q[0] + sq]);
                        let pp = DVector::from_vec(vec![p[0] + sp]);
                        let (gq, gp) = h.gradients(&qq, &pp, 0.0);
                        if i == 0 {
                            gq[0]
                        } else {
                            gp[0]
                        }
                    };
                    let (dq, dp) = if j == 0 { (fd, 0.0) } else { (0.0, fd) };
                    let fd_val = (eval(dq, dp) - eval(-dq, -dp)) / (2.0 * fd);
                    assert_relative_eq!(hess[(i, j)], fd_val, max_relative = 1e-6, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_of_flow() {
        let h = pendulum(BumpProfile::CosineSquared, 0.1);
        let z = z1(0.15, 0.2);
        let jac = h.linearized_flow(0.0, 1.0, &z).unwrap();
        let fd = 1e-6;
        for col in 0..2 {
            let shifted = |sign: f64| {
                let mut zz = z.clone();
                if col == 0 {
                    zz.q[0] += sign * fd;
                } else {
                    zz.p[0] += sign * fd;
                }
                h.flow(0.0, 1.0, &zz).unwrap()
            };
            let plus = shifted(1.0);
            let minus = shifted(-1.0);
            let fd_q = (plus.q[0] - minus.q[0]) / (2.0 * fd);
            let fd_p = (plus.p[0] - minus.p[0]) / (2.0 * fd);
            assert_relative_eq!(jac.matrix[(0, col)], fd_q, max_relative = 1e-6, epsilon = 1e-9);
            assert_relative_eq!(jac.matrix[(1, col)], fd_p, max_relative = 1e-6, epsilon = 1e-9);
        }
        assert!(jac.symplectic_defect() < 1e-8);
    }

    #[test]
    fn boundary_norm_is_invariant() {
        let h = pendulum(BumpProfile::Plateau { delta: 0.045, core: 0.15 }, 0.1);
        let z = z1(0.37, 0.45);
        let out = h.flow(0.0, 1.0, &z).unwrap();
        let drift = (h.metric().p_norm(&out.q, &out.p) - 0.45).abs();
        assert!(drift < 1e-9);
    }

    #[test]
    fn escape_is_detected() {
        let h = pendulum(BumpProfile::Plateau { delta: 0.045, core: 0.15 }, 0.1);
        let r = h.flow(0.0, 1.0, &z1(0.0, 0.6));
        assert!(matches!(r, Err(Error::Escape { .. })));
    }

    #[test]
    fn kinetic_flow_agrees_with_exp_map() {
        let phi = CosineField::new(vec![FourierTerm::new(vec![1], 0.1)]);
        let metric = MetricField::conformal(1, phi, 0.4, TorusMode::Torus).unwrap();
        let h = HamiltonianSpec::kinetic(metric.clone(), 0.3).unwrap();
        let z = z1(0.12, 0.2);
        let via_flow = h.flow(0.0, 1.0, &z).unwrap();
        let via_exp = metric.exp_time(&z.q, &z.p, 1.0).unwrap();
        assert!((via_flow.q[0] - via_exp.q[0]).abs() < 1e-10);
        assert!((via_flow.p[0] - via_exp.p[0]).abs() < 1e-10);
    }

    #[test]
    fn time_dependence_is_one_periodic() {
        let h = HamiltonianSpec::new(
            MetricField::flat(1, TorusMode::Torus),
            0.05,
            CosineField::new(vec![FourierTerm::new(vec![1], 1.0)]),
            BumpProfile::Plateau { delta: 0.045, core: 0.15 },
            0.45,
            true,
        )
        .unwrap();
        let z = z1(0.21, 0.13);
        let a = h.flow(0.0, 1.0, &z).unwrap();
        let b = h.flow(1.0, 2.0, &z).unwrap();
        assert!((a.q[0] - b.q[0]).abs() < 1e-12);
        assert!((a.p[0] - b.p[0]).abs() < 1e-12);
    }

    #[test]
    fn conformal_hessian_matches_finite_differences() {
        let phi = CosineField::new(vec![FourierTerm::new(vec![1, -1], 0.08)]);
        let metric = MetricField::conformal(2, phi, 0.4, TorusMode::Torus).unwrap();
        let h = HamiltonianSpec::new(
            metric,
            0.07,
            CosineField::new(vec![
                FourierTerm::new(vec![1, 0], 0.6),
                FourierTerm::new(vec![0, 1], -0.4),
            ]),
            BumpProfile::Plateau { delta: 0.03, core: 0.1 },
            0.3,
            true,
        )
        .unwrap();
        let q = DVector::from_vec(vec![0.21, 0.77]);
        let p = DVector::from_vec(vec![0.26, -0.05]); // |p| inside the ramp
        let t = 0.3;
        let hess = h.hessian(&q, &p, t);
        assert!((&hess - hess.transpose()).amax() < 1e-12);
        // narrow ramp: third derivatives are large, keep the step small
        let fd = 1e-6;
        let grad_at = |qq: &DVector<f64>, pp: &DVector<f64>| -> Vec<f64> {
            let (gq, gp) = h.gradients(qq, pp, t);
            gq.iter().chain(gp.iter()).copied().collect()
        };
        for col in 0..4 {
            let mut qp = q.clone();
            let mut pp = p.clone();
            let mut qm = q.clone();
            let mut pm = p.clone();
            if col < 2 {
                qp[col] += fd;
                qm[col] -= fd;
            } else {
                pp[col - 2] += fd;
                pm[col - 2] -= fd;
            }
            let gp_ = grad_at(&qp, &pp);
            let gm_ = grad_at(&qm, &pm);
            for row in 0..4 {
                let fd_val = (gp_[row] - gm_[row]) / (2.0 * fd);
                assert_relative_eq!(
                    hess[(row, col)],
                    fd_val,
                    max_relative = 1e-5,
                    epsilon = 1e-7
                );
            }
        }
    }
}
