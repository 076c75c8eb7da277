//! Fixed-step explicit Runge-Kutta integration (Cash-Karp, order 5).
//!
//! The span [t0, t1] is divided into uniform steps no longer than the nominal
//! step; step count and size are a pure function of the span, so repeated
//! integrations of the same problem are bit-reproducible. Negative spans
//! integrate backwards.

use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;

// Cash-Karp nodes, stage coefficients and fifth-order weights.
const C: [f64; 6] = [0.0, 0.2, 0.3, 0.6, 1.0, 0.875];
const A: [[f64; 5]; 6] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0],
    [0.3, -0.9, 1.2, 0.0, 0.0],
    [-11.0 / 54.0, 2.5, -70.0 / 27.0, 35.0 / 27.0, 0.0],
    [
        1631.0 / 55296.0,
        175.0 / 512.0,
        575.0 / 13824.0,
        44275.0 / 110592.0,
        253.0 / 4096.0,
    ],
];
const B: [f64; 6] = [
    37.0 / 378.0,
    0.0,
    250.0 / 621.0,
    125.0 / 594.0,
    0.0,
    512.0 / 1771.0,
];

pub struct RkScratch {
    k: [Vec<f64>; 6],
    tmp: Vec<f64>,
}

impl RkScratch {
    pub fn new(len: usize) -> Self {
        Self {
            k: core::array::from_fn(|_| vec![0.0; len]),
            tmp: vec![0.0; len],
        }
    }
}

/// One Cash-Karp step of size `h` (signed) starting at time `t`.
pub fn rk_step<F>(rhs: &mut F, t: f64, y: &mut [f64], h: f64, s: &mut RkScratch)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    for stage in 0..6 {
        if stage == 0 {
            s.tmp.copy_from_slice(y);
        } else {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kj) in s.k.iter().enumerate().take(stage) {
                    acc += A[stage][j] * kj[i];
                }
                s.tmp[i] = y[i] + h * acc;
            }
        }
        let (head, tail) = s.k.split_at_mut(stage);
        let _ = head;
        rhs(t + C[stage] * h, &s.tmp, &mut tail[0]);
    }
    for i in 0..n {
        let mut acc = 0.0;
        for (j, kj) in s.k.iter().enumerate() {
            acc += B[j] * kj[i];
        }
        y[i] += h * acc;
    }
}

/// Number of uniform steps for a span of length |t1 - t0| at nominal step h.
pub fn step_count(t0: f64, t1: f64, h_nominal: f64) -> usize {
    let span = fmath::abs(t1 - t0);
    if span == 0.0 {
        0
    } else {
        fmath::ceil(span / h_nominal) as usize
    }
}

/// Integrates `y' = rhs(t, y)` from t0 to t1 in place. `inspect` is called
/// after every step with the current time and state; returning an error
/// aborts the integration.
pub fn integrate<F, C2, E>(
    rhs: &mut F,
    t0: f64,
    t1: f64,
    y: &mut [f64],
    h_nominal: f64,
    mut inspect: C2,
) -> Result<(), E>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    C2: FnMut(f64, &[f64]) -> Result<(), E>,
{
    let n_steps = step_count(t0, t1, h_nominal);
    if n_steps == 0 {
        return Ok(());
    }
    let h = (t1 - t0) / n_steps as f64;
    let mut scratch = RkScratch::new(y.len());
    for step in 0..n_steps {
        let t = t0 + h * step as f64;
        rk_step(rhs, t, y, h, &mut scratch);
        inspect(t + h, y)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_on_linear_system() {
        // q' = p, p' = 0 is integrated exactly up to rounding.
        let mut y = [0.2, 0.3];
        integrate::<_, _, ()>(
            &mut |_t, s: &[f64], d: &mut [f64]| {
                d[0] = s[1];
                d[1] = 0.0;
            },
            0.0,
            1.0,
            &mut y,
            1e-3,
            |_, _| Ok(()),
        )
        .unwrap();
        assert!((y[0] - 0.5).abs() < 1e-13);
        assert!((y[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn fifth_order_on_oscillator() {
        fn run(h: f64) -> [f64; 2] {
            let mut y = [1.0, 0.0];
            integrate::<_, _, ()>(
                &mut |_t: f64, s: &[f64], d: &mut [f64]| {
                    d[0] = s[1];
                    d[1] = -s[0];
                },
                0.0,
                1.0,
                &mut y,
                h,
                |_, _| Ok(()),
            )
            .unwrap();
            y
        }
        let coarse = run(4e-2);
        let fine = run(2e-2);
        let err_coarse = (coarse[0] - 1f64.cos()).abs();
        let err_fine = (fine[0] - 1f64.cos()).abs();
        // halving the step should shrink the error by about 2^5
        assert!(
            err_fine < err_coarse / 24.0,
            "order too low: {err_coarse:e} -> {err_fine:e}"
        );
    }

    #[test]
    fn backwards_inverts_forwards() {
        let mut rhs = |t: f64, s: &[f64], d: &mut [f64]| {
            d[0] = s[1] + 0.1 * t.sin();
            d[1] = -s[0];
        };
        let mut y = [0.4, -0.2];
        integrate::<_, _, ()>(&mut rhs, 0.0, 1.0, &mut y, 1e-3, |_, _| Ok(())).unwrap();
        integrate::<_, _, ()>(&mut rhs, 1.0, 0.0, &mut y, 1e-3, |_, _| Ok(())).unwrap();
        assert!((y[0] - 0.4).abs() < 1e-12);
        assert!((y[1] + 0.2).abs() < 1e-12);
    }
}
