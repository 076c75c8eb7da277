//! Riemannian structure on the torus: cometric evaluation, the Legendre map,
//! the exponential map realized as the flow of the kinetic Hamiltonian
//! `H0(q, p) = |p|^2 / 2`, and the point-pair distance together with its first
//! partials.
//!
//! All base points live in the universal cover `R^n`. Torus mode only affects
//! the injectivity-radius guard and reporting; the arithmetic never wraps.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fmath;
use crate::integrate;
use crate::tol;

/// Whether base points are interpreted on the compact torus or on its cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TorusMode {
    Torus,
    LiftedCover,
}

/// One cosine term `coeff * cos(2 pi <wave, q>)` of a periodic scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierTerm {
    pub wave: Vec<i64>,
    pub coeff: f64,
}

impl FourierTerm {
    pub fn new(wave: Vec<i64>, coeff: f64) -> Self {
        Self { wave, coeff }
    }
}

/// Periodic cosine sum `f(q) = sum_j c_j cos(2 pi <k_j, q>)` with derivatives.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CosineField {
    pub terms: Vec<FourierTerm>,
}

impl CosineField {
    pub fn new(terms: Vec<FourierTerm>) -> Self {
        Self { terms }
    }

    pub fn value(&self, q: &DVector<f64>) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coeff * fmath::cos_2pi(phase(&t.wave, q)))
            .sum()
    }

    pub fn gradient(&self, q: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(q.len());
        for t in &self.terms {
            let s = -t.coeff * 2.0 * core::f64::consts::PI * fmath::sin_2pi(phase(&t.wave, q));
            for i in 0..q.len() {
                g[i] += s * t.wave[i] as f64;
            }
        }
        g
    }

    pub fn hessian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let n = q.len();
        let mut h = DMatrix::zeros(n, n);
        let two_pi = 2.0 * core::f64::consts::PI;
        for t in &self.terms {
            let c = -t.coeff * two_pi * two_pi * fmath::cos_2pi(phase(&t.wave, q));
            for i in 0..n {
                for j in 0..n {
                    h[(i, j)] += c * t.wave[i] as f64 * t.wave[j] as f64;
                }
            }
        }
        h
    }
}

fn phase(wave: &[i64], q: &DVector<f64>) -> f64 {
    wave.iter()
        .zip(q.iter())
        .map(|(k, x)| *k as f64 * x)
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
enum MetricKind {
    Flat,
    /// Conformal cometric `A(q) = exp(2 phi(q)) I` with `phi` a cosine sum.
    Conformal(CosineField),
}

/// Periodic cometric field on `T^n` with spatial derivatives and the
/// injectivity radius of the underlying metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField {
    n: usize,
    kind: MetricKind,
    injectivity_radius: f64,
    mode: TorusMode,
}

impl MetricField {
    /// The flat metric. Injectivity radius is 1/2 on the torus, infinite on
    /// the cover.
    pub fn flat(n: usize, mode: TorusMode) -> Self {
        let injectivity_radius = match mode {
            TorusMode::Torus => 0.5,
            TorusMode::LiftedCover => f64::INFINITY,
        };
        Self {
            n,
            kind: MetricKind::Flat,
            injectivity_radius,
            mode,
        }
    }

    /// Conformal cometric `exp(2 phi) I` with user-supplied injectivity
    /// radius (it is not computed here).
    pub fn conformal(
        n: usize,
        phi: CosineField,
        injectivity_radius: f64,
        mode: TorusMode,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        if !(injectivity_radius > 0.0) {
            return Err(Error::InvalidParameter(
                "injectivity radius must be positive".into(),
            ));
        }
        for t in &phi.terms {
            if t.wave.len() != n {
                return Err(Error::InvalidInput(format!(
                    "wave vector length {} does not match dimension {n}",
                    t.wave.len()
                )));
            }
            if !t.coeff.is_finite() {
                return Err(Error::InvalidInput("non-finite Fourier coefficient".into()));
            }
        }
        Ok(Self {
            n,
            kind: MetricKind::Conformal(phi),
            injectivity_radius,
            mode,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> TorusMode {
        self.mode
    }

    pub fn injectivity_radius(&self) -> f64 {
        self.injectivity_radius
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.kind, MetricKind::Flat)
    }

    fn conformal_phi(&self) -> Option<&CosineField> {
        match &self.kind {
            MetricKind::Flat => None,
            MetricKind::Conformal(f) => Some(f),
        }
    }

    /// exp(2 phi(q)) for the conformal kind, 1 for flat.
    fn conformal_factor(&self, q: &DVector<f64>) -> f64 {
        match &self.kind {
            MetricKind::Flat => 1.0,
            MetricKind::Conformal(phi) => libm::exp(2.0 * phi.value(q)),
        }
    }

    /// Cometric matrix `A(q)`, also the Legendre isomorphism `v = A(q) p`.
    /// Errors on non-finite or mis-sized input.
    pub fn cometric(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_point(q)?;
        Ok(self.a_mat(q))
    }

    pub(crate) fn a_mat(&self, q: &DVector<f64>) -> DMatrix<f64> {
        match &self.kind {
            MetricKind::Flat => DMatrix::identity(self.n, self.n),
            MetricKind::Conformal(_) => {
                DMatrix::identity(self.n, self.n) * self.conformal_factor(q)
            }
        }
    }

    /// Inverse cometric (the metric matrix `g_ij`).
    pub fn metric_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        match &self.kind {
            MetricKind::Flat => DMatrix::identity(self.n, self.n),
            MetricKind::Conformal(_) => {
                DMatrix::identity(self.n, self.n) / self.conformal_factor(q)
            }
        }
    }

    /// Spatial derivative `dA/dq_i`.
    pub fn cometric_partial(&self, q: &DVector<f64>, i: usize) -> DMatrix<f64> {
        match &self.kind {
            MetricKind::Flat => DMatrix::zeros(self.n, self.n),
            MetricKind::Conformal(phi) => {
                let g = phi.gradient(q);
                self.a_mat(q) * (2.0 * g[i])
            }
        }
    }

    /// Second spatial derivative `d^2 A / dq_i dq_j`.
    pub fn cometric_second(&self, q: &DVector<f64>, i: usize, j: usize) -> DMatrix<f64> {
        match &self.kind {
            MetricKind::Flat => DMatrix::zeros(self.n, self.n),
            MetricKind::Conformal(phi) => {
                let g = phi.gradient(q);
                let h = phi.hessian(q);
                self.a_mat(q) * (4.0 * g[i] * g[j] + 2.0 * h[(i, j)])
            }
        }
    }

    /// Legendre map `v = A(q) p`.
    pub fn legendre(&self, q: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            MetricKind::Flat => p.clone(),
            MetricKind::Conformal(_) => p * self.conformal_factor(q),
        }
    }

    /// Squared covector norm `p^T A(q) p`.
    pub fn p_norm_sq(&self, q: &DVector<f64>, p: &DVector<f64>) -> f64 {
        self.conformal_factor(q) * p.dot(p)
    }

    /// Covector norm `|p| = sqrt(p^T A(q) p)`.
    pub fn p_norm(&self, q: &DVector<f64>, p: &DVector<f64>) -> f64 {
        fmath::sqrt(self.p_norm_sq(q, p))
    }

    fn check_point(&self, q: &DVector<f64>) -> Result<()> {
        if q.len() != self.n {
            return Err(Error::InvalidInput(format!(
                "expected dimension {}, got {}",
                self.n,
                q.len()
            )));
        }
        if q.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite base point".into()));
        }
        Ok(())
    }

    fn check_cotangent(&self, z: &CotangentPoint) -> Result<()> {
        self.check_point(&z.q)?;
        if z.p.len() != self.n {
            return Err(Error::InvalidInput(format!(
                "expected covector dimension {}, got {}",
                self.n,
                z.p.len()
            )));
        }
        if z.p.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite covector".into()));
        }
        Ok(())
    }

    /// Time-t map of the kinetic Hamiltonian flow; its base component is the
    /// geodesic exponential `exp_q(t A(q) p)`. Guards the injectivity radius
    /// in torus mode.
    pub fn exp_time(&self, q: &DVector<f64>, p: &DVector<f64>, t: f64) -> Result<CotangentPoint> {
        let z = CotangentPoint::new(q.clone(), p.clone());
        self.check_cotangent(&z)?;
        self.check_exp_length(q, p, t)?;
        Ok(self.h0_flow_unchecked(z, t))
    }

    /// As [`exp_time`](Self::exp_time), also returning the Jacobian of the
    /// time-t map with respect to `(q, p)`.
    pub fn exp_time_with_jacobian(
        &self,
        q: &DVector<f64>,
        p: &DVector<f64>,
        t: f64,
    ) -> Result<(CotangentPoint, DMatrix<f64>)> {
        let z = CotangentPoint::new(q.clone(), p.clone());
        self.check_cotangent(&z)?;
        self.check_exp_length(q, p, t)?;
        Ok(self.h0_flow_jacobian_unchecked(z, t))
    }

    fn check_exp_length(&self, q: &DVector<f64>, p: &DVector<f64>, t: f64) -> Result<()> {
        if self.mode == TorusMode::Torus {
            let length = fmath::abs(t) * self.p_norm(q, p);
            if length >= self.injectivity_radius {
                return Err(Error::InjectivityExceeded {
                    length,
                    radius: self.injectivity_radius,
                });
            }
        }
        Ok(())
    }

    pub(crate) fn h0_flow_unchecked(&self, mut z: CotangentPoint, t: f64) -> CotangentPoint {
        if self.is_flat() {
            z.q += &z.p * t;
            return z;
        }
        let n = self.n;
        let mut y = vec![0.0; 2 * n];
        y[..n].copy_from_slice(z.q.as_slice());
        y[n..].copy_from_slice(z.p.as_slice());
        let mut rhs = self.h0_rhs();
        let _ = integrate::integrate::<_, _, ()>(
            &mut rhs,
            0.0,
            t,
            &mut y,
            tol::INTEGRATOR_STEP,
            |_, _| Ok(()),
        );
        CotangentPoint::new(
            DVector::from_column_slice(&y[..n]),
            DVector::from_column_slice(&y[n..]),
        )
    }

    pub(crate) fn h0_flow_jacobian_unchecked(
        &self,
        z: CotangentPoint,
        t: f64,
    ) -> (CotangentPoint, DMatrix<f64>) {
        let n = self.n;
        if self.is_flat() {
            let mut jac = DMatrix::identity(2 * n, 2 * n);
            for i in 0..n {
                jac[(i, n + i)] = t;
            }
            let mut out = z;
            out.q += &out.p * t;
            return (out, jac);
        }
        let dim = 2 * n;
        let mut y = vec![0.0; dim + dim * dim];
        y[..n].copy_from_slice(z.q.as_slice());
        y[n..dim].copy_from_slice(z.p.as_slice());
        for i in 0..dim {
            y[dim + i * dim + i] = 1.0;
        }
        let mut value_rhs = self.h0_rhs();
        let metric = self;
        let mut rhs = move |tt: f64, s: &[f64], d: &mut [f64]| {
            value_rhs(tt, &s[..dim], &mut d[..dim]);
            let q = DVector::from_column_slice(&s[..n]);
            let p = DVector::from_column_slice(&s[n..dim]);
            let hess = metric.h0_hessian(&q, &p);
            variational_rhs(&hess, &s[dim..], &mut d[dim..], n);
        };
        let _ = integrate::integrate::<_, _, ()>(
            &mut rhs,
            0.0,
            t,
            &mut y,
            tol::INTEGRATOR_STEP,
            |_, _| Ok(()),
        );
        let out = CotangentPoint::new(
            DVector::from_column_slice(&y[..n]),
            DVector::from_column_slice(&y[n..dim]),
        );
        let jac = DMatrix::from_column_slice(dim, dim, &y[dim..]);
        (out, jac)
    }

    /// Right-hand side of the kinetic flow: `q' = A(q) p`,
    /// `p'_i = -1/2 p^T (dA/dq_i) p`.
    fn h0_rhs(&self) -> impl FnMut(f64, &[f64], &mut [f64]) + '_ {
        let n = self.n;
        move |_t: f64, s: &[f64], d: &mut [f64]| {
            let (qs, ps) = s.split_at(n);
            match &self.kind {
                MetricKind::Flat => {
                    d[..n].copy_from_slice(ps);
                    for x in &mut d[n..2 * n] {
                        *x = 0.0;
                    }
                }
                MetricKind::Conformal(phi) => {
                    let q = DVector::from_column_slice(qs);
                    let e2 = libm::exp(2.0 * phi.value(&q));
                    let g = phi.gradient(&q);
                    let p_sq: f64 = ps.iter().map(|x| x * x).sum();
                    for i in 0..n {
                        d[i] = e2 * ps[i];
                        d[n + i] = -g[i] * e2 * p_sq;
                    }
                }
            }
        }
    }

    /// Hessian of `H0 = p^T A(q) p / 2` with respect to `(q, p)`.
    pub(crate) fn h0_hessian(&self, q: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n;
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        match &self.kind {
            MetricKind::Flat => {
                for i in 0..n {
                    h[(n + i, n + i)] = 1.0;
                }
            }
            MetricKind::Conformal(phi) => {
                let e2 = libm::exp(2.0 * phi.value(q));
                let g = phi.gradient(q);
                let hp = phi.hessian(q);
                let p_sq = p.dot(p);
                for i in 0..n {
                    for j in 0..n {
                        h[(i, j)] = (2.0 * g[i] * g[j] + hp[(i, j)]) * e2 * p_sq;
                        // d^2 H0 / dq_i dp_j
                        let cross = 2.0 * g[i] * e2 * p[j];
                        h[(i, n + j)] = cross;
                        h[(n + j, i)] = cross;
                    }
                    h[(n + i, n + i)] += e2;
                }
            }
        }
        h
    }

    /// Kinetic energy `H0(q, p)`.
    pub fn h0_energy(&self, q: &DVector<f64>, p: &DVector<f64>) -> f64 {
        0.5 * self.p_norm_sq(q, p)
    }

    /// Solves `exp(q, p) = (q, target)` for the covector `p` by Newton
    /// shooting. The flat-metric guess `A(q)^{-1} (target - q)` is exact for
    /// the flat case.
    pub fn exp_inverse(&self, q: &DVector<f64>, target: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.exp_inverse_full(q, target)?.0)
    }

    /// As [`exp_inverse`](Self::exp_inverse), also returning the endpoint of
    /// the connecting flow (base and momentum).
    pub fn exp_inverse_full(
        &self,
        q: &DVector<f64>,
        target: &DVector<f64>,
    ) -> Result<(DVector<f64>, CotangentPoint)> {
        self.check_point(q)?;
        self.check_point(target)?;
        if self.is_flat() {
            let p = target - q;
            let end = CotangentPoint::new(target.clone(), p.clone());
            return Ok((p, end));
        }
        let mut p = (target - q) / self.conformal_factor(q);
        let mut last_residual = f64::INFINITY;
        for _ in 0..tol::NEWTON_MAX_ITERS {
            let (end, jac) =
                self.h0_flow_jacobian_unchecked(CotangentPoint::new(q.clone(), p.clone()), 1.0);
            let r = &end.q - target;
            last_residual = r.amax();
            if last_residual < tol::SHOOTING_TOL {
                return Ok((p, end));
            }
            let dq_dp = jac.view((0, self.n), (self.n, self.n)).into_owned();
            let step = dq_dp
                .lu()
                .solve(&r)
                .ok_or_else(|| Error::NumericFailure("singular shooting Jacobian".into()))?;
            p -= step;
        }
        Err(Error::NewtonDivergence {
            residual: last_residual,
            iterations: tol::NEWTON_MAX_ITERS,
        })
    }

    /// Distance between two cover points together with its partials:
    /// `d1 = -p/|p|`, `d2 = P/|P|` where `(q, p)` shoots to `(Q, P)` in unit
    /// time. Errors on coincident points and beyond the injectivity radius.
    pub fn distance_with_partials(
        &self,
        q: &DVector<f64>,
        target: &DVector<f64>,
    ) -> Result<DistancePartials> {
        self.check_point(q)?;
        self.check_point(target)?;
        if (target - q).amax() < 1e-13 {
            return Err(Error::ZeroDistance);
        }
        let (p, end) = self.exp_inverse_full(q, target)?;
        let dis = self.p_norm(q, &p);
        if self.mode == TorusMode::Torus && dis >= self.injectivity_radius {
            return Err(Error::InjectivityExceeded {
                length: dis,
                radius: self.injectivity_radius,
            });
        }
        let end_norm = self.p_norm(&end.q, &end.p);
        Ok(DistancePartials {
            dis,
            d1: -&p / dis,
            d2: &end.p / end_norm,
        })
    }
}

/// Distance value with its two base-point partials (as coefficient vectors).
#[derive(Debug, Clone)]
pub struct DistancePartials {
    pub dis: f64,
    pub d1: DVector<f64>,
    pub d2: DVector<f64>,
}

/// A point of the cotangent bundle in cover coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CotangentPoint {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

impl CotangentPoint {
    pub fn new(q: DVector<f64>, p: DVector<f64>) -> Self {
        Self { q, p }
    }

    pub fn from_slices(q: &[f64], p: &[f64]) -> Self {
        Self {
            q: DVector::from_column_slice(q),
            p: DVector::from_column_slice(p),
        }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }
}

/// Columns of the variational state evolve by `u' = J Hess(H) u`; with
/// `Hess = [[Hqq, Hqp], [Hpq, Hpp]]` this reads
/// `uq' = Hpq uq + Hpp up`, `up' = -Hqq uq - Hqp up`.
pub(crate) fn variational_rhs(hess: &DMatrix<f64>, u: &[f64], du: &mut [f64], n: usize) {
    let dim = 2 * n;
    for col in 0..dim {
        let uc = &u[col * dim..(col + 1) * dim];
        let dc = &mut du[col * dim..(col + 1) * dim];
        for i in 0..n {
            let mut acc_q = 0.0;
            let mut acc_p = 0.0;
            for j in 0..dim {
                // row n+i of Hess is (Hpq | Hpp); row i is (Hqq | Hqp)
                acc_q += hess[(n + i, j)] * uc[j];
                acc_p += hess[(i, j)] * uc[j];
            }
            dc[i] = acc_q;
            dc[n + i] = -acc_p;
        }
    }
}

/// Componentwise reduction to the fundamental cell [0, 1)^n.
pub fn wrap_unit(v: &DVector<f64>) -> DVector<f64> {
    v.map(fmath::frac)
}

/// Distance on the circle R/Z between two reals.
pub fn circle_gap(a: f64, b: f64) -> f64 {
    let d = fmath::frac(a - b);
    d.min(1.0 - d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use approx::assert_relative_eq;

    fn sample_phi() -> CosineField {
        CosineField::new(vec![FourierTerm::new(vec![1, 0], 0.1)])
    }

    fn conformal_t2() -> MetricField {
        MetricField::conformal(2, sample_phi(), 0.4, TorusMode::Torus).unwrap()
    }

    fn conformal_1d() -> MetricField {
        MetricField::conformal(
            1,
            CosineField::new(vec![FourierTerm::new(vec![1], 0.1)]),
            0.4,
            TorusMode::Torus,
        )
        .unwrap()
    }

    #[test]
    fn flat_cometric_is_identity() {
        let m = MetricField::flat(2, TorusMode::Torus);
        let a = m.cometric(&DVector::from_vec(vec![0.3, -1.7])).unwrap();
        assert_eq!(a, DMatrix::identity(2, 2));
        assert_eq!(m.injectivity_radius(), 0.5);
        let cover = MetricField::flat(2, TorusMode::LiftedCover);
        assert!(cover.injectivity_radius().is_infinite());
    }

    #[test]
    fn conformal_cometric_at_origin() {
        let m = conformal_t2();
        let a = m.cometric(&DVector::zeros(2)).unwrap();
        let expected = libm::exp(0.2);
        assert_relative_eq!(a[(0, 0)], expected, max_relative = 1e-15);
        assert_relative_eq!(a[(1, 1)], expected, max_relative = 1e-15);
        assert_eq!(a[(0, 1)], 0.0);
    }

    #[test]
    fn cometric_rejects_non_finite() {
        let m = conformal_t2();
        let bad = DVector::from_vec(vec![f64::NAN, 0.0]);
        assert!(matches!(m.cometric(&bad), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn conformal_symmetric_positive_definite_at_random_points() {
        let m = conformal_t2();
        let mut rng = SplitMix64::new(11);
        for _ in 0..100 {
            let q = DVector::from_fn(2, |_, _| rng.uniform(-2.0, 2.0));
            let a = m.cometric(&q).unwrap();
            assert_eq!((&a - a.transpose()).amax(), 0.0);
            let eig = a.clone().symmetric_eigen().eigenvalues;
            assert!(eig.iter().all(|l| *l > 0.0));
            // periodicity to machine precision
            let shifted = m.cometric(&(&q + DVector::from_vec(vec![1.0, 0.0]))).unwrap();
            assert_eq!(a, shifted);
        }
    }

    #[test]
    fn flat_exp_is_straight_line() {
        let m = MetricField::flat(1, TorusMode::Torus);
        let out = m
            .exp_time(
                &DVector::from_vec(vec![0.2]),
                &DVector::from_vec(vec![0.3]),
                1.0,
            )
            .unwrap();
        assert_relative_eq!(out.q[0], 0.5, max_relative = 1e-15);
        assert_relative_eq!(out.p[0], 0.3, max_relative = 1e-15);
    }

    #[test]
    fn exp_time_zero_is_identity() {
        let m = conformal_t2();
        let q = DVector::from_vec(vec![0.1, 0.7]);
        let p = DVector::from_vec(vec![0.05, -0.02]);
        let out = m.exp_time(&q, &p, 0.0).unwrap();
        assert_eq!(out.q, q);
        assert_eq!(out.p, p);
    }

    #[test]
    fn exp_rejects_injectivity_violation() {
        let m = MetricField::flat(1, TorusMode::Torus);
        let r = m.exp_time(
            &DVector::from_vec(vec![0.0]),
            &DVector::from_vec(vec![0.6]),
            1.0,
        );
        assert!(matches!(r, Err(Error::InjectivityExceeded { .. })));
        // same data on the cover is fine
        let cover = MetricField::flat(1, TorusMode::LiftedCover);
        assert!(cover
            .exp_time(
                &DVector::from_vec(vec![0.0]),
                &DVector::from_vec(vec![0.6]),
                1.0
            )
            .is_ok());
    }

    #[test]
    fn conformal_exp_passes_step_halving() {
        let m = conformal_t2();
        let q = DVector::zeros(2);
        let p = DVector::from_vec(vec![0.2, 0.0]);
        let coarse = m.h0_flow_unchecked(CotangentPoint::new(q.clone(), p.clone()), 1.0);
        // re-integrate at half the step by splitting the span in two
        let mid = m.h0_flow_unchecked(CotangentPoint::new(q.clone(), p.clone()), 0.5);
        let fine = m.h0_flow_unchecked(mid, 0.5);
        assert!((&coarse.q - &fine.q).amax() < 1e-10);
        assert!((&coarse.p - &fine.p).amax() < 1e-10);
    }

    #[test]
    fn flow_property_and_energy_conservation() {
        let m = conformal_t2();
        let q = DVector::from_vec(vec![0.15, 0.4]);
        let p = DVector::from_vec(vec![0.18, -0.07]);
        let e0 = m.h0_energy(&q, &p);
        let a = m.exp_time(&q, &p, 0.4).unwrap();
        let b = m.exp_time(&a.q, &a.p, 0.6).unwrap();
        let full = m.exp_time(&q, &p, 1.0).unwrap();
        assert!((&b.q - &full.q).amax() < 1e-11);
        assert!((&b.p - &full.p).amax() < 1e-11);
        let e1 = m.h0_energy(&full.q, &full.p);
        assert!((e1 - e0).abs() < 1e-10);
    }

    #[test]
    fn flat_distance_partials_on_line() {
        let m = MetricField::flat(1, TorusMode::Torus);
        let d = m
            .distance_with_partials(
                &DVector::from_vec(vec![0.1]),
                &DVector::from_vec(vec![0.4]),
            )
            .unwrap();
        assert_relative_eq!(d.dis, 0.3, max_relative = 1e-15);
        assert_relative_eq!(d.d1[0], -1.0, max_relative = 1e-15);
        assert_relative_eq!(d.d2[0], 1.0, max_relative = 1e-15);
    }

    #[test]
    fn flat_distance_partials_on_t2() {
        // dis = 0.5 sits exactly at the torus injectivity radius, so this
        // closed-form check runs on the cover
        let m = MetricField::flat(2, TorusMode::LiftedCover);
        let d = m
            .distance_with_partials(&DVector::zeros(2), &DVector::from_vec(vec![0.3, 0.4]))
            .unwrap();
        assert_relative_eq!(d.dis, 0.5, max_relative = 1e-12);
        assert_relative_eq!(d.d1[0], -0.6, max_relative = 1e-12);
        assert_relative_eq!(d.d1[1], -0.8, max_relative = 1e-12);
        assert_relative_eq!(d.d2[0], 0.6, max_relative = 1e-12);
        assert_relative_eq!(d.d2[1], 0.8, max_relative = 1e-12);
    }

    #[test]
    fn distance_error_cases() {
        let m = MetricField::flat(1, TorusMode::Torus);
        let q = DVector::from_vec(vec![0.2]);
        assert!(matches!(
            m.distance_with_partials(&q, &q),
            Err(Error::ZeroDistance)
        ));
        assert!(matches!(
            m.distance_with_partials(&q, &DVector::from_vec(vec![0.8])),
            Err(Error::InjectivityExceeded { .. })
        ));
    }

    #[test]
    fn conformal_distance_gradient_matches_finite_differences() {
        let m = conformal_1d();
        let q = DVector::from_vec(vec![0.12]);
        let target = DVector::from_vec(vec![0.4]);
        let d = m.distance_with_partials(&q, &target).unwrap();
        let h = 1e-6;
        let dis = |qq: f64, tt: f64| {
            m.distance_with_partials(
                &DVector::from_vec(vec![qq]),
                &DVector::from_vec(vec![tt]),
            )
            .unwrap()
            .dis
        };
        let fd1 = (dis(q[0] + h, target[0]) - dis(q[0] - h, target[0])) / (2.0 * h);
        let fd2 = (dis(q[0], target[0] + h) - dis(q[0], target[0] - h)) / (2.0 * h);
        assert_relative_eq!(d.d1[0], fd1, max_relative = 1e-6);
        assert_relative_eq!(d.d2[0], fd2, max_relative = 1e-6);
    }

    #[test]
    fn distance_partials_are_unit_momenta() {
        // d1 = -p/|p| and d2 = P/|P| for the connecting unit-time flow
        let m = conformal_t2();
        let mut rng = SplitMix64::new(5);
        for _ in 0..20 {
            let q = DVector::from_fn(2, |_, _| rng.uniform(0.0, 1.0));
            let p = DVector::from_fn(2, |_, _| rng.uniform(-0.15, 0.15));
            if m.p_norm(&q, &p) < 1e-3 {
                continue;
            }
            let end = m.exp_time(&q, &p, 1.0).unwrap();
            let d = m.distance_with_partials(&q, &end.q).unwrap();
            let pn = m.p_norm(&q, &p);
            let pn_end = m.p_norm(&end.q, &end.p);
            assert!((&d.d1 + &p / pn).amax() < 1e-8);
            assert!((&d.d2 - &end.p / pn_end).amax() < 1e-8);
        }
    }

    #[test]
    fn kinetic_jacobian_is_shear_at_zero_section() {
        let m = conformal_t2();
        let q = DVector::from_vec(vec![0.3, 0.8]);
        let (_, jac) = m
            .exp_time_with_jacobian(&q, &DVector::zeros(2), 1.0)
            .unwrap();
        let a = m.cometric(&q).unwrap();
        let mut expected = DMatrix::identity(4, 4);
        expected.view_mut((0, 2), (2, 2)).copy_from(&a);
        assert!((jac - expected).amax() < 1e-10);
    }

    #[test]
    fn kinetic_jacobian_matches_finite_differences_and_is_symplectic() {
        let m = conformal_t2();
        let q = DVector::from_vec(vec![0.2, 0.6]);
        let p = DVector::from_vec(vec![0.1, -0.05]);
        let (_, jac) = m.exp_time_with_jacobian(&q, &p, 1.0).unwrap();
        let h = 1e-6;
        for col in 0..4 {
            let perturb = |sign: f64| {
                let mut qq = q.clone();
                let mut pp = p.clone();
                if col < 2 {
                    qq[col] += sign * h;
                } else {
                    pp[col - 2] += sign * h;
                }
                m.exp_time(&qq, &pp, 1.0).unwrap()
            };
            let plus = perturb(1.0);
            let minus = perturb(-1.0);
            for row in 0..4 {
                let fd = if row < 2 {
                    (plus.q[row] - minus.q[row]) / (2.0 * h)
                } else {
                    (plus.p[row - 2] - minus.p[row - 2]) / (2.0 * h)
                };
                assert_relative_eq!(jac[(row, col)], fd, max_relative = 1e-5, epsilon = 1e-8);
            }
        }
        // symplectic: Jac^T J Jac = J
        let mut j = DMatrix::zeros(4, 4);
        for i in 0..2 {
            j[(i, 2 + i)] = 1.0;
            j[(2 + i, i)] = -1.0;
        }
        let defect = (jac.transpose() * &j * &jac - &j).amax();
        assert!(defect < 1e-10);
    }

    #[test]
    fn wrap_and_gap_helpers() {
        let v = DVector::from_vec(vec![1.25, -0.25]);
        let w = wrap_unit(&v);
        assert_relative_eq!(w[0], 0.25);
        assert_relative_eq!(w[1], 0.75);
        assert_relative_eq!(circle_gap(0.95, 0.05), 0.1, max_relative = 1e-12);
    }
}
