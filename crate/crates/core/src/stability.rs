//! Floquet multipliers of periodic orbits along two independent routes.
//!
//! The direct route multiplies the stage Jacobians along the orbit into the
//! monodromy matrix and takes its eigenvalues. The boundary route assembles
//! the block-tridiagonal matrix `M(lambda)` from generating-function second
//! partials, with period-closing corners scaled by `lambda` and `1/lambda`;
//! multipliers are the roots of the degree-2n polynomial
//! `P(lambda) = lambda^n det M(lambda)`, recovered from samples at roots of
//! unity. The kernel of `M(1)` corresponds one-to-one to the eigenvalue-1
//! eigenvectors of the monodromy, which the cross check enforces.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{Complex, DMatrix, DVector};

use crate::action::{
    action_differential, collect_stage_blocks, resolve_sequence, OrbitSequence,
};
use crate::error::{Error, Result};
use crate::fmath;
use crate::tol;
use crate::twist::Decomposition;

/// Which route produced a multiplier set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiplierMethod {
    Monodromy,
    BoundaryMatrix,
}

/// Floquet data for one periodic orbit.
#[derive(Debug, Clone)]
pub struct FloquetReport {
    pub multipliers: Vec<Complex<f64>>,
    pub method: MultiplierMethod,
    /// No multiplier within [`tol::UNIT_MULTIPLIER_TOL`] of 1.
    pub nondegenerate: bool,
    /// Kernel dimension of `M(1)` (boundary route) or geometric multiplicity
    /// of eigenvalue 1 (monodromy route).
    pub kernel_dim_at_1: usize,
}

/// Ordered product of stage Jacobians along a critical sequence.
pub fn monodromy(decomp: &Decomposition, seq: &OrbitSequence) -> Result<DMatrix<f64>> {
    let diff = action_differential(decomp, seq)?;
    let residual = diff.iter().map(|d| d.amax()).fold(0.0, f64::max);
    if residual > 1e-8 {
        return Err(Error::NonCritical { residual });
    }
    let resolved = resolve_sequence(decomp, seq, None)?;
    let mut jacobians = Vec::with_capacity(seq.len());
    for k in 0..seq.len() {
        let stage = decomp.stage_for_pair(k);
        let z = crate::geometry::CotangentPoint::new(
            seq.entries()[k].clone(),
            resolved.pairs[k].p.clone(),
        );
        jacobians.push(stage.apply_full(&z, true, false)?.jacobian.unwrap().matrix);
    }
    Ok(jacobian_product(&jacobians))
}

/// Product `J_{L-1} ... J_1 J_0`; the empty product is the identity of the
/// given size... the first factor fixes the size, so an empty list yields an
/// empty identity convention of size 0.
pub fn jacobian_product(jacobians: &[DMatrix<f64>]) -> DMatrix<f64> {
    match jacobians.first() {
        None => DMatrix::identity(0, 0),
        Some(first) => {
            let mut acc = DMatrix::identity(first.nrows(), first.ncols());
            for j in jacobians {
                acc = j * &acc;
            }
            acc
        }
    }
}

/// Multipliers from a monodromy matrix.
pub fn floquet_from_monodromy(mono: &DMatrix<f64>) -> FloquetReport {
    let multipliers: Vec<Complex<f64>> = mono.complex_eigenvalues().iter().copied().collect();
    let kernel_dim_at_1 = unit_eigenvalue_multiplicity(mono);
    let nondegenerate = multipliers
        .iter()
        .all(|l| complex_abs(&(l - Complex::new(1.0, 0.0))) > tol::UNIT_MULTIPLIER_TOL);
    FloquetReport {
        multipliers,
        method: MultiplierMethod::Monodromy,
        nondegenerate,
        kernel_dim_at_1,
    }
}

/// Geometric multiplicity of eigenvalue 1: singular values of `M - I` below
/// the kernel tolerance.
pub fn unit_eigenvalue_multiplicity(mono: &DMatrix<f64>) -> usize {
    let shifted = mono - DMatrix::identity(mono.nrows(), mono.ncols());
    let sv = shifted.svd(false, false).singular_values;
    sv.iter().filter(|s| **s < tol::KERNEL_SINGULAR_TOL).count()
}

/// Assembles `M(lambda)`: the action Hessian with the two period-closing
/// corner blocks scaled by `1/lambda` (top right) and `lambda` (bottom left).
pub fn boundary_matrix(
    decomp: &Decomposition,
    seq: &OrbitSequence,
    lambda: Complex<f64>,
) -> Result<DMatrix<Complex<f64>>> {
    let resolved = resolve_sequence(decomp, seq, None)?;
    let blocks = collect_stage_blocks(decomp, seq, &resolved)?;
    let l = seq.len();
    let n = seq.dim();
    let mut matrix = DMatrix::<Complex<f64>>::zeros(l * n, l * n);
    let to_c = |m: &DMatrix<f64>, scale: Complex<f64>| m.map(|x| scale * Complex::new(x, 0.0));
    let one = Complex::new(1.0, 0.0);
    for k in 0..l {
        let prev = (k + l - 1) % l;
        let diag = &blocks[prev].s22 + &blocks[k].s11;
        matrix
            .view_mut((k * n, k * n), (n, n))
            .copy_from(&to_c(&diag, one));
        let next = (k + 1) % l;
        let (s12_scale, s21_scale) = if k + 1 == l {
            (lambda, one / lambda)
        } else {
            (one, one)
        };
        matrix
            .view_mut((next * n, k * n), (n, n))
            .copy_from(&to_c(&blocks[k].s21, s21_scale));
        matrix
            .view_mut((k * n, next * n), (n, n))
            .copy_from(&to_c(&blocks[k].s12, s12_scale));
    }
    Ok(matrix)
}

fn complex_abs(z: &Complex<f64>) -> f64 {
    fmath::sqrt(z.norm_sqr())
}

/// Multipliers as roots of `P(lambda) = lambda^n det M(lambda)`, sampled at
/// the (2n+1)-st roots of unity and interpolated exactly by the inverse
/// discrete Fourier transform.
pub fn floquet_via_boundary(decomp: &Decomposition, seq: &OrbitSequence) -> Result<FloquetReport> {
    let n = seq.dim();
    let node_count = 2 * n + 1;
    let mut samples = Vec::with_capacity(node_count);
    for j in 0..node_count {
        let theta = 2.0 * core::f64::consts::PI * j as f64 / node_count as f64;
        let lambda = Complex::new(fmath::cos(theta), fmath::sin(theta));
        let m = boundary_matrix(decomp, seq, lambda)?;
        let det = m.lu().determinant();
        // P(lambda) = lambda^n det M(lambda)
        let mut p = det;
        for _ in 0..n {
            p *= lambda;
        }
        samples.push(p);
    }
    let scale = samples.iter().map(complex_abs).fold(0.0, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InterpolationFailure(format!(
            "degenerate determinant samples (scale {scale})"
        )));
    }
    let scaled: Vec<Complex<f64>> = samples.iter().map(|s| s / scale).collect();

    // inverse DFT on the unit circle: c_k = (1/K) sum_j v_j conj(w^{jk})
    let mut coeffs = vec![Complex::new(0.0, 0.0); node_count];
    for (k, c) in coeffs.iter_mut().enumerate() {
        let mut acc = Complex::new(0.0, 0.0);
        for (j, v) in scaled.iter().enumerate() {
            let theta = -2.0 * core::f64::consts::PI * (j * k) as f64 / node_count as f64;
            acc += v * Complex::new(fmath::cos(theta), fmath::sin(theta));
        }
        *c = acc / node_count as f64;
    }
    // real-coefficient polynomial up to rounding
    let max_mag = coeffs.iter().map(complex_abs).fold(0.0, f64::max);
    let max_imag = coeffs.iter().map(|c| fmath::abs(c.im)).fold(0.0, f64::max);
    if max_imag > 1e-6 * max_mag {
        return Err(Error::InterpolationFailure(format!(
            "coefficients not real (imag {max_imag:e} vs scale {max_mag:e})"
        )));
    }
    let real: Vec<f64> = coeffs.iter().map(|c| c.re).collect();
    let leading = real[2 * n];
    if fmath::abs(leading) < 1e-10 * max_mag {
        return Err(Error::InterpolationFailure(format!(
            "leading coefficient collapsed ({leading:e} vs scale {max_mag:e})"
        )));
    }
    let multipliers = companion_roots(&real)?;

    // kernel dimension at lambda = 1 from singular values of M(1)
    let m1 = boundary_matrix(decomp, seq, Complex::new(1.0, 0.0))?;
    let m1_real = m1.map(|z| z.re);
    let sv = m1_real.svd(false, false).singular_values;
    let kernel_dim_at_1 = sv.iter().filter(|s| **s < tol::KERNEL_SINGULAR_TOL).count();

    let nondegenerate = multipliers
        .iter()
        .all(|l| complex_abs(&(l - Complex::new(1.0, 0.0))) > tol::UNIT_MULTIPLIER_TOL);
    Ok(FloquetReport {
        multipliers,
        method: MultiplierMethod::BoundaryMatrix,
        nondegenerate,
        kernel_dim_at_1,
    })
}

/// Roots of a real-coefficient polynomial via the companion matrix of its
/// monic normalization.
fn companion_roots(coeffs: &[f64]) -> Result<Vec<Complex<f64>>> {
    let degree = coeffs.len() - 1;
    if degree == 0 {
        return Ok(Vec::new());
    }
    let lead = coeffs[degree];
    if lead == 0.0 {
        return Err(Error::InterpolationFailure(
            "zero leading coefficient".into(),
        ));
    }
    let mut companion = DMatrix::zeros(degree, degree);
    for i in 1..degree {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..degree {
        companion[(i, degree - 1)] = -coeffs[i] / lead;
    }
    Ok(companion.complex_eigenvalues().iter().copied().collect())
}

/// Agreement report between the two multiplier routes.
#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub monodromy: FloquetReport,
    pub boundary: FloquetReport,
    /// Largest relative pairwise distance under the best matching.
    pub max_rel_error: f64,
    /// Kernel dimension of `M(1)`.
    pub kernel_dim_at_1: usize,
    /// Geometric multiplicity of eigenvalue 1 of the monodromy.
    pub unit_multiplicity: usize,
}

/// Computes both multiplier routes, pairs them optimally, and enforces both
/// the pairwise tolerance and the kernel-dimension correspondence.
pub fn cross_validate(decomp: &Decomposition, seq: &OrbitSequence) -> Result<CrossValidation> {
    let mono_matrix = monodromy(decomp, seq)?;
    let mono = floquet_from_monodromy(&mono_matrix);
    let boundary = floquet_via_boundary(decomp, seq)?;
    let max_rel_error = best_pairing_error(&mono.multipliers, &boundary.multipliers);
    if max_rel_error > tol::CROSS_VALIDATE_TOL {
        return Err(Error::CrossValidationFailed { max_rel_error });
    }
    let kernel_dim_at_1 = boundary.kernel_dim_at_1;
    let unit_multiplicity = mono.kernel_dim_at_1;
    if kernel_dim_at_1 != unit_multiplicity {
        return Err(Error::CrossValidationFailed {
            max_rel_error: f64::INFINITY,
        });
    }
    Ok(CrossValidation {
        monodromy: mono,
        boundary,
        max_rel_error,
        kernel_dim_at_1,
        unit_multiplicity,
    })
}

/// Smallest achievable maximum relative distance over all pairings of two
/// equally sized multiplier multisets.
pub fn best_pairing_error(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let k = a.len();
    let mut indices: Vec<usize> = (0..k).collect();
    let mut best = f64::INFINITY;
    permute(&mut indices, 0, &mut |perm| {
        let mut worst: f64 = 0.0;
        for (i, &j) in perm.iter().enumerate() {
            let d = complex_abs(&(a[i] - b[j]));
            let denom = 1.0f64.max(complex_abs(&a[i])).max(complex_abs(&b[j]));
            worst = worst.max(d / denom);
        }
        best = best.min(worst);
    });
    best
}

fn permute<F: FnMut(&[usize])>(items: &mut Vec<usize>, start: usize, visit: &mut F) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}
