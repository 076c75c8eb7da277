//! Analytic symplectic twist maps with closed-form generating functions,
//! used as reference models and audit subjects.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::FlowJacobian;
use crate::error::{Error, Result};
use crate::fmath;
use crate::geometry::CotangentPoint;
use crate::twist::{Generating, TwistMap};

fn shear_jacobian(n: usize, t: f64) -> FlowJacobian {
    let mut m = DMatrix::identity(2 * n, 2 * n);
    for i in 0..n {
        m[(i, n + i)] = t;
    }
    FlowJacobian::new(m)
}

/// `(q, p) -> (q + p, p)` with `S(q, Q) = |Q - q|^2 / 2`.
#[derive(Debug, Clone)]
pub struct Shear {
    pub n: usize,
}

impl TwistMap for Shear {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, z: &CotangentPoint) -> Result<CotangentPoint> {
        Ok(CotangentPoint::new(&z.q + &z.p, z.p.clone()))
    }

    fn jacobian(&self, _z: &CotangentPoint) -> Result<FlowJacobian> {
        Ok(shear_jacobian(self.n, 1.0))
    }

    fn generating(&self, q: &DVector<f64>, target: &DVector<f64>) -> Result<Generating> {
        let p = target - q;
        Ok(Generating {
            value: 0.5 * p.dot(&p),
            d1: -&p,
            d2: p,
        })
    }

    fn psi_inverse(&self, q: &DVector<f64>, target: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(target - q)
    }
}

/// `(q, p) -> (q - p, p)` with `S(q, Q) = -|Q - q|^2 / 2` (negative twist).
#[derive(Debug, Clone)]
pub struct ReversedShear {
    pub n: usize,
}

impl TwistMap for ReversedShear {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, z: &CotangentPoint) -> Result<CotangentPoint> {
        Ok(CotangentPoint::new(&z.q - &z.p, z.p.clone()))
    }

    fn jacobian(&self, _z: &CotangentPoint) -> Result<FlowJacobian> {
        Ok(shear_jacobian(self.n, -1.0))
    }

    fn generating(&self, q: &DVector<f64>, target: &DVector<f64>) -> Result<Generating> {
        let d = target - q;
        Ok(Generating {
            value: -0.5 * d.dot(&d),
            d1: d.clone(),
            d2: -d,
        })
    }

    fn psi_inverse(&self, q: &DVector<f64>, target: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(q - target)
    }

    fn nominal_time(&self) -> f64 {
        -1.0
    }
}

/// `(q, p) -> (q + p + shift, p)`: a shear whose fiber image is displaced,
/// so the diagonal may leave the admissible region.
#[derive(Debug, Clone)]
pub struct TranslatedShear {
    pub shift: DVector<f64>,
}

impl TwistMap for TranslatedShear {
    fn dim(&self) -> usize {
        self.shift.len()
    }

    fn apply(&self, z: &CotangentPoint) -> Result<CotangentPoint> {
        Ok(CotangentPoint::new(&z.q + &z.p + &self.shift, z.p.clone()))
    }

    fn jacobian(&self, _z: &CotangentPoint) -> Result<FlowJacobian> {
        Ok(shear_jacobian(self.dim(), 1.0))
    }

    fn generating(&self, q: &DVector<f64>, target: &DVector<f64>) -> Result<Generating> {
        let p = target - q - &self.shift;
        Ok(Generating {
            value: 0.5 * p.dot(&p),
            d1: -&p,
            d2: p,
        })
    }

    fn psi_inverse(&self, q: &DVector<f64>, target: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(target - q - &self.shift)
    }
}

/// Kicked shear with per-axis cosine potentials:
/// `S(q, Q) = |Q - q|^2 / 2 - sum_i (eps_i / 2 pi) cos(2 pi q_i)`,
/// i.e. `F(q, p) = (q + P, P)` with `P_i = p_i + eps_i sin(2 pi q_i)`.
#[derive(Debug, Clone)]
pub struct StandardKick {
    pub eps: DVector<f64>,
}

impl StandardKick {
    fn kick(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.eps.len(), |i, _| {
            self.eps[i] * fmath::sin_2pi(q[i])
        })
    }
}

impl TwistMap for StandardKick {
    fn dim(&self) -> usize {
        self.eps.len()
    }

    fn apply(&self, z: &CotangentPoint) -> Result<CotangentPoint> {
        let new_p = &z.p + self.kick(&z.q);
        Ok(CotangentPoint::new(&z.q + &new_p, new_p))
    }

    fn jacobian(&self, z: &CotangentPoint) -> Result<FlowJacobian> {
        let n = self.dim();
        let mut m = DMatrix::identity(2 * n, 2 * n);
        let two_pi = 2.0 * core::f64::consts::PI;
        for i in 0..n {
            let g = self.eps[i] * two_pi * fmath::cos_2pi(z.q[i]);
            m[(i, i)] += g;
            m[(i, n + i)] = 1.0;
            m[(n + i, i)] = g;
        }
        Ok(FlowJacobian::new(m))
    }

    fn generating(&self, q: &DVector<f64>, target: &DVector<f64>) -> Result<Generating> {
        let n = self.dim();
        let d = target - q;
        let two_pi = 2.0 * core::f64::consts::PI;
        let mut value = 0.5 * d.dot(&d);
        let mut d1 = -d.clone();
        for i in 0..n {
            value -= self.eps[i] / two_pi * fmath::cos_2pi(q[i]);
            d1[i] += self.eps[i] * fmath::sin_2pi(q[i]);
        }
        Ok(Generating { value, d1, d2: d })
    }

    fn psi_inverse(&self, q: &DVector<f64>, target: &DVector<f64>) -> Result<DVector<f64>> {
        let p = target - q - self.kick(q);
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite preimage".into()));
        }
        Ok(p)
    }
}
