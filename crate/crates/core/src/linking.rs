//! Fiber/image intersection audit for twist maps.
//!
//! For a twist map, each momentum fiber meets its image in at most one
//! interior point, and the linking of boundary spheres is equivalent to that
//! count being exactly one with a consistent orientation across fibers. The
//! fixed points of a map whose fibers all link are the critical points of the
//! diagonal restriction `s(q) = S(q, q)` of the generating function.

use alloc::vec::Vec;
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::fmath;
use crate::geometry::{circle_gap, CotangentPoint};
use crate::tol;
use crate::twist::TwistMap;

/// One interior intersection of a fiber with its image.
#[derive(Debug, Clone)]
pub struct FiberIntersection {
    pub p: DVector<f64>,
    /// Deck translation `j` with `base(F(q, p)) = q + j`.
    pub lattice: Vec<i64>,
    /// Orientation: sign of `det dQ/dp` at the intersection.
    pub sign: i8,
}

/// Intersection data for one sampled fiber.
#[derive(Debug, Clone)]
pub struct FiberRecord {
    pub q: DVector<f64>,
    pub intersections: Vec<FiberIntersection>,
}

/// Common orientation across fibers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignSummary {
    Plus,
    Minus,
    /// Orientations disagree between fibers; inconsistent with a twist map
    /// on a connected region and surfaced as an anomaly.
    Mixed,
    NotApplicable,
}

/// Result of the full fiber audit.
#[derive(Debug, Clone)]
pub struct LinkingReport {
    pub fibers: Vec<FiberRecord>,
    /// Every sampled fiber has exactly one interior intersection.
    pub satisfied: bool,
    pub uniform_sign: SignSummary,
}

/// Grid densities and tolerances for the audit.
#[derive(Debug, Clone)]
pub struct LinkingParams {
    pub q_grid_per_dim: usize,
    pub p_starts_per_dim: usize,
    /// Solutions within this distance of `|p| = C` abort with a boundary
    /// intersection error.
    pub boundary_tol: f64,
    /// Allow deck translations when matching the fiber base point.
    pub torus_wrap: bool,
}

impl Default for LinkingParams {
    fn default() -> Self {
        Self {
            q_grid_per_dim: tol::LINKING_Q_GRID,
            p_starts_per_dim: tol::LINKING_P_STARTS,
            boundary_tol: 1e-6,
            torus_wrap: true,
        }
    }
}

/// Solves `base(F(q, p)) = q (mod Z^n)` for interior momenta by Newton
/// continuation from a grid of starts, reporting orientation signs.
pub fn fiber_intersections(
    map: &dyn TwistMap,
    q: &DVector<f64>,
    c_bound: f64,
    params: &LinkingParams,
) -> Result<Vec<FiberIntersection>> {
    let n = map.dim();
    let starts = params.p_starts_per_dim.max(1);
    let total = starts.pow(n as u32);
    let mut found: Vec<FiberIntersection> = Vec::new();
    for si in 0..total {
        let p0 = DVector::from_fn(n, |d, _| {
            let idx = (si / starts.pow(d as u32)) % starts;
            if starts == 1 {
                0.0
            } else {
                -c_bound + 2.0 * c_bound * idx as f64 / (starts - 1) as f64
            }
        });
        if map.p_norm(q, &p0) > c_bound {
            continue;
        }
        let Some(p) = newton_fiber_solve(map, q, &p0, params) else {
            continue;
        };
        let p_norm = map.p_norm(q, &p);
        if fmath::abs(p_norm - c_bound) <= params.boundary_tol {
            return Err(Error::BoundaryIntersection {
                p_norm,
                bound: c_bound,
            });
        }
        if p_norm > c_bound {
            continue;
        }
        if found.iter().any(|f| (&f.p - &p).amax() < 1e-8) {
            continue;
        }
        let out = map.apply(&CotangentPoint::new(q.clone(), p.clone()))?;
        let lattice: Vec<i64> = (0..n)
            .map(|i| fmath::round(out.q[i] - q[i]) as i64)
            .collect();
        let det = map
            .jacobian(&CotangentPoint::new(q.clone(), p.clone()))?
            .dq_dp()
            .lu()
            .determinant();
        found.push(FiberIntersection {
            p,
            lattice,
            sign: if det >= 0.0 { 1 } else { -1 },
        });
    }
    Ok(found)
}

fn newton_fiber_solve(
    map: &dyn TwistMap,
    q: &DVector<f64>,
    p0: &DVector<f64>,
    params: &LinkingParams,
) -> Option<DVector<f64>> {
    let n = map.dim();
    let mut p = p0.clone();
    // the deck translation is pinned by the initial image and kept fixed
    let first = map.apply(&CotangentPoint::new(q.clone(), p.clone())).ok()?;
    let target = if params.torus_wrap {
        q + DVector::from_fn(n, |i, _| fmath::round(first.q[i] - q[i]))
    } else {
        q.clone()
    };
    for _ in 0..tol::NEWTON_MAX_ITERS {
        let out = map.apply(&CotangentPoint::new(q.clone(), p.clone())).ok()?;
        let r = &out.q - &target;
        if r.amax() < tol::SHOOTING_TOL {
            return Some(p);
        }
        let jac = map
            .jacobian(&CotangentPoint::new(q.clone(), p.clone()))
            .ok()?;
        let mut step = jac.dq_dp().lu().solve(&r)?;
        let cap = 0.5;
        if step.amax() > cap {
            let scale = cap / step.amax();
            step *= scale;
        }
        p -= step;
    }
    None
}

/// Audits every fiber on a base grid: the linking condition holds when each
/// fiber meets its image exactly once in the interior, with one orientation
/// shared by all fibers.
pub fn linking_condition(
    map: &dyn TwistMap,
    c_bound: f64,
    params: &LinkingParams,
) -> Result<LinkingReport> {
    let n = map.dim();
    let grid = params.q_grid_per_dim.max(1);
    let total = grid.pow(n as u32);
    let mut fibers = Vec::with_capacity(total);
    let mut satisfied = true;
    let mut saw_plus = false;
    let mut saw_minus = false;
    for gi in 0..total {
        let q = DVector::from_fn(n, |d, _| {
            ((gi / grid.pow(d as u32)) % grid) as f64 / grid as f64
        });
        let intersections = fiber_intersections(map, &q, c_bound, params)?;
        if intersections.len() != 1 {
            satisfied = false;
        }
        for i in &intersections {
            if i.sign > 0 {
                saw_plus = true;
            } else {
                saw_minus = true;
            }
        }
        fibers.push(FiberRecord { q, intersections });
    }
    let uniform_sign = match (saw_plus, saw_minus) {
        (true, false) => SignSummary::Plus,
        (false, true) => SignSummary::Minus,
        (true, true) => SignSummary::Mixed,
        (false, false) => SignSummary::NotApplicable,
    };
    Ok(LinkingReport {
        fibers,
        satisfied,
        uniform_sign,
    })
}

/// A fixed point found through the diagonal of the generating function.
#[derive(Debug, Clone)]
pub struct DiagonalFixedPoint {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
    pub lattice: Vec<i64>,
    /// Max deviation of `F(q, p)` from `(q + j, p)`.
    pub residual: f64,
}

/// Finds fixed points as critical points of `s(q) = S(q, q)`: the derivative
/// `ds = P - p` vanishes exactly where the interior fiber intersection is a
/// fixed point. Requires the linking condition (so the diagonal lies in the
/// generating function's domain).
pub fn fixed_points_via_diagonal(
    map: &dyn TwistMap,
    c_bound: f64,
    params: &LinkingParams,
) -> Result<Vec<DiagonalFixedPoint>> {
    let report = linking_condition(map, c_bound, params)?;
    if !report.satisfied {
        return Err(Error::LinkingUnsatisfied);
    }
    let n = map.dim();
    let grid = params.q_grid_per_dim.max(1);
    let total = grid.pow(n as u32);
    let mut found: Vec<DiagonalFixedPoint> = Vec::new();
    'starts: for gi in 0..total {
        let mut q = DVector::from_fn(n, |d, _| {
            ((gi / grid.pow(d as u32)) % grid) as f64 / grid as f64
        });
        for _ in 0..tol::NEWTON_MAX_ITERS {
            let Some(ds) = diagonal_slope(map, &q, c_bound, params) else {
                continue 'starts;
            };
            if ds.amax() < 1e-11 {
                break;
            }
            // Jacobian of ds by central differences per coordinate
            let fd = 1e-7;
            let mut jac = nalgebra::DMatrix::zeros(n, n);
            for j in 0..n {
                let mut qp = q.clone();
                qp[j] += fd;
                let mut qm = q.clone();
                qm[j] -= fd;
                let (Some(dp), Some(dm)) = (
                    diagonal_slope(map, &qp, c_bound, params),
                    diagonal_slope(map, &qm, c_bound, params),
                ) else {
                    continue 'starts;
                };
                for i in 0..n {
                    jac[(i, j)] = (dp[i] - dm[i]) / (2.0 * fd);
                }
            }
            match jac.lu().solve(&ds) {
                Some(step) => {
                    let capped = if step.amax() > 0.25 {
                        &step * (0.25 / step.amax())
                    } else {
                        step
                    };
                    q -= capped;
                }
                // flat diagonal (a critical continuum): accept the start
                None => break,
            }
        }
        let Some(ds) = diagonal_slope(map, &q, c_bound, params) else {
            continue;
        };
        if ds.amax() > 1e-9 {
            continue;
        }
        let intersections = fiber_intersections(map, &q, c_bound, params)?;
        if intersections.len() != 1 {
            continue;
        }
        let inter = &intersections[0];
        let z = CotangentPoint::new(q.clone(), inter.p.clone());
        let out = map.apply(&z)?;
        let lattice_vec = DVector::from_fn(n, |i, _| inter.lattice[i] as f64);
        let residual = (&out.q - &q - lattice_vec)
            .amax()
            .max((&out.p - &inter.p).amax());
        if residual > 1e-8 {
            continue;
        }
        let q_mod: DVector<f64> = q.map(fmath::frac);
        if found.iter().any(|f| {
            (0..n).all(|i| circle_gap(f.q[i], q_mod[i]) < tol::DEDUP_TOL)
        }) {
            continue;
        }
        found.push(DiagonalFixedPoint {
            q: q_mod,
            p: inter.p.clone(),
            lattice: inter.lattice.clone(),
            residual,
        });
    }
    Ok(found)
}

/// `ds(q) = d1 S(q, q + j) + d2 S(q, q + j) = P - p` along the diagonal,
/// with the deck translation taken from the fiber intersection.
fn diagonal_slope(
    map: &dyn TwistMap,
    q: &DVector<f64>,
    c_bound: f64,
    params: &LinkingParams,
) -> Option<DVector<f64>> {
    let intersections = fiber_intersections(map, q, c_bound, params).ok()?;
    if intersections.len() != 1 {
        return None;
    }
    let n = map.dim();
    let lattice = DVector::from_fn(n, |i, _| intersections[0].lattice[i] as f64);
    let g = map.generating(q, &(q + lattice)).ok()?;
    Some(&g.d1 + &g.d2)
}
