//! Factorization of the time-1 Hamiltonian map into symplectic twist maps.
//!
//! The interleaved factorization alternates short flow segments with kinetic
//! corrections: odd factors are `h0^{-1} . G_{k/N} . G_{(k-1)/N}^{-1}` and
//! even factors are the unit-time kinetic map `h0^1`, so the full product
//! telescopes to `G_1`. On the momentum boundary, where the Hamiltonian
//! agrees with the kinetic term, odd factors reduce to `h0^{(1-N)/N}` and
//! even factors to `h0^1`.
//!
//! For momentum-convex Hamiltonians a plain factorization into `N` segment
//! maps `G_{k/N} . G_{(k-1)/N}^{-1}` (each close to `h0^{1/N}`) is also
//! provided.
//!
//! Each factor is validated as a twist map by sampling `|det dQ/dp|` over a
//! phase-space grid; in auto mode the segment count doubles until every
//! factor passes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::dynamics::{FlowJacobian, HamiltonianSpec};
use crate::error::{Error, Result};
use crate::geometry::CotangentPoint;
use crate::rng::SplitMix64;
use crate::tol;

/// Interface shared by factorization stages and analytic twist maps: an exact
/// symplectic map with a generating function in start/end base coordinates.
pub trait TwistMap {
    fn dim(&self) -> usize;

    /// The map itself.
    fn apply(&self, z: &CotangentPoint) -> Result<CotangentPoint>;

    /// Jacobian with respect to `(q, p)`.
    fn jacobian(&self, z: &CotangentPoint) -> Result<FlowJacobian>;

    /// Generating function `S(q, Q)` with partials `(-p, P)`.
    fn generating(&self, q: &DVector<f64>, target: &DVector<f64>) -> Result<Generating>;

    /// Solves `base(F(q, p)) = target` for the unique covector in the
    /// validated region.
    fn psi_inverse(&self, q: &DVector<f64>, target: &DVector<f64>) -> Result<DVector<f64>>;

    /// Time scale of the underlying kinetic motion; sets the sign of the
    /// start-to-target displacement per unit momentum.
    fn nominal_time(&self) -> f64 {
        1.0
    }

    /// Covector norm used for region bounds; Euclidean unless the map carries
    /// a metric.
    fn p_norm(&self, _q: &DVector<f64>, p: &DVector<f64>) -> f64 {
        p.norm()
    }
}

/// Value and endpoint partials of a generating function.
#[derive(Debug, Clone)]
pub struct Generating {
    pub value: f64,
    /// Partial with respect to the start point: `-p`.
    pub d1: DVector<f64>,
    /// Partial with respect to the end point: `P`.
    pub d2: DVector<f64>,
}

/// Position of a stage within the factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    /// `h0^{-1} . G_{k/N} . G_{(k-1)/N}^{-1}`, kinetic time `(1-N)/N` on the boundary.
    Odd,
    /// The unit-time kinetic map `h0^1`.
    Even,
    /// Segment map of a momentum-convex factorization, kinetic time `1/N`.
    Convex,
}

/// One factor of the decomposition, self-contained and evaluable.
#[derive(Debug, Clone)]
pub struct TwistStage {
    hamiltonian: HamiltonianSpec,
    kinetic: HamiltonianSpec,
    index: usize,
    kind: StageKind,
    nominal_time: f64,
    window: Option<(f64, f64)>,
    twist_margin: Option<f64>,
}

/// Map, Jacobian and action data produced by one stage application.
#[derive(Debug, Clone)]
pub struct StageOutput {
    pub point: CotangentPoint,
    pub jacobian: Option<FlowJacobian>,
    pub action: Option<f64>,
}

/// Second partials of a stage generating function, extracted from the stage
/// Jacobian blocks `[[a, b], [c, d]]` as `S11 = b^{-1} a`, `S12 = -b^{-1}`,
/// `S21 = -(b^{-1})^T`, `S22 = d b^{-1}`.
#[derive(Debug, Clone)]
pub struct SBlocks {
    pub s11: DMatrix<f64>,
    pub s12: DMatrix<f64>,
    pub s21: DMatrix<f64>,
    pub s22: DMatrix<f64>,
}

impl TwistStage {
    fn new(
        hamiltonian: &HamiltonianSpec,
        index: usize,
        kind: StageKind,
        half_count: usize,
    ) -> Self {
        let n_f = half_count as f64;
        let (nominal_time, window) = match kind {
            StageKind::Odd => {
                let k = index.div_ceil(2) as f64;
                ((1.0 - n_f) / n_f, Some(((k - 1.0) / n_f, k / n_f)))
            }
            StageKind::Even => (1.0, None),
            StageKind::Convex => {
                let k = index as f64;
                (1.0 / n_f, Some(((k - 1.0) / n_f, k / n_f)))
            }
        };
        let kinetic =
            HamiltonianSpec::kinetic(hamiltonian.metric().clone(), hamiltonian.c_bound())
                .and_then(|k| k.with_step(hamiltonian.integrator_step()))
                .expect("kinetic spec inherits a validated bound");
        Self {
            hamiltonian: hamiltonian.clone(),
            kinetic,
            index,
            kind,
            nominal_time,
            window,
            twist_margin: None,
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn kind(&self) -> StageKind {
        self.kind
    }

    /// Kinetic time `a_k` of the stage on the momentum boundary.
    pub fn boundary_time(&self) -> f64 {
        self.nominal_time
    }

    pub fn twist_margin(&self) -> Option<f64> {
        self.twist_margin
    }

    pub fn hamiltonian(&self) -> &HamiltonianSpec {
        &self.hamiltonian
    }

    fn region_bound(&self) -> f64 {
        self.hamiltonian.c_bound() + tol::REGION_MARGIN
    }

    /// Kinetic time-t map with optional Jacobian and action; closed form on
    /// the flat metric.
    fn kinetic_map(
        &self,
        z: &CotangentPoint,
        t: f64,
        want_jacobian: bool,
        want_action: bool,
    ) -> Result<StageOutput> {
        let n = self.dim();
        if self.hamiltonian.metric().is_flat() {
            let point = CotangentPoint::new(&z.q + &z.p * t, z.p.clone());
            let jacobian = want_jacobian.then(|| {
                let mut m = DMatrix::identity(2 * n, 2 * n);
                for i in 0..n {
                    m[(i, n + i)] = t;
                }
                FlowJacobian::new(m)
            });
            let action = want_action.then(|| 0.5 * t * z.p.dot(&z.p));
            return Ok(StageOutput {
                point,
                jacobian,
                action,
            });
        }
        let out = self
            .kinetic
            .flow_full(0.0, t, z, want_jacobian, want_action)?;
        Ok(StageOutput {
            point: out.point,
            jacobian: out.jacobian,
            action: out.action,
        })
    }

    /// Applies the stage with optional Jacobian and generating-function
    /// increment (the action integral along the stage trajectory).
    pub fn apply_full(
        &self,
        z: &CotangentPoint,
        want_jacobian: bool,
        want_action: bool,
    ) -> Result<StageOutput> {
        match self.kind {
            StageKind::Even => self.kinetic_map(z, 1.0, want_jacobian, want_action),
            StageKind::Odd => {
                let (t0, t1) = self.window.unwrap();
                let seg = if self.hamiltonian.effective_epsilon() == 0.0 {
                    self.kinetic_map(z, t1 - t0, want_jacobian, want_action)?
                } else {
                    let out = self
                        .hamiltonian
                        .flow_full(t0, t1, z, want_jacobian, want_action)?;
                    StageOutput {
                        point: out.point,
                        jacobian: out.jacobian,
                        action: out.action,
                    }
                };
                let back = self.kinetic_map(&seg.point, -1.0, want_jacobian, want_action)?;
                let jacobian = match (back.jacobian, seg.jacobian) {
                    (Some(b), Some(s)) => Some(b.compose_after(&s)),
                    _ => None,
                };
                let action = match (back.action, seg.action) {
                    (Some(b), Some(s)) => Some(b + s),
                    _ => None,
                };
                Ok(StageOutput {
                    point: back.point,
                    jacobian,
                    action,
                })
            }
            StageKind::Convex => {
                let (t0, t1) = self.window.unwrap();
                if self.hamiltonian.effective_epsilon() == 0.0 {
                    self.kinetic_map(z, t1 - t0, want_jacobian, want_action)
                } else {
                    let out = self
                        .hamiltonian
                        .flow_full(t0, t1, z, want_jacobian, want_action)?;
                    Ok(StageOutput {
                        point: out.point,
                        jacobian: out.jacobian,
                        action: out.action,
                    })
                }
            }
        }
    }

    /// Solves `base(F(q, p)) = target` for `p`, optionally warm-started, and
    /// returns the stage image alongside. The converged momentum must stay
    /// inside the validated region.
    pub fn resolve(
        &self,
        q: &DVector<f64>,
        target: &DVector<f64>,
        guess: Option<&DVector<f64>>,
    ) -> Result<(DVector<f64>, CotangentPoint)> {
        let metric = self.hamiltonian.metric();
        let bound = self.region_bound();
        let mut p = match guess {
            Some(g) => g.clone(),
            None => metric.metric_matrix(q) * (target - q) / self.nominal_time,
        };
        let mut last_residual = f64::INFINITY;
        for _ in 0..tol::NEWTON_MAX_ITERS {
            let out =
                match self.apply_full(&CotangentPoint::new(q.clone(), p.clone()), true, false) {
                    Ok(out) => out,
                    Err(Error::Escape { p_norm, .. }) => {
                        return Err(Error::OutOfRange { p_norm, bound });
                    }
                    Err(e) => return Err(e),
                };
            let r = &out.point.q - target;
            last_residual = r.amax();
            if last_residual < tol::SHOOTING_TOL {
                let p_norm = metric.p_norm(q, &p);
                if p_norm > bound {
                    return Err(Error::OutOfRange { p_norm, bound });
                }
                return Ok((p, out.point));
            }
            let b = out.jacobian.unwrap().dq_dp();
            let mut step = b
                .lu()
                .solve(&r)
                .ok_or(Error::SingularBlock { pair: usize::MAX })?;
            // keep Newton from vaulting across torus cells
            let cap = 0.5;
            let step_max = step.amax();
            if step_max > cap {
                step *= cap / step_max;
            }
            p -= step;
        }
        Err(Error::NewtonDivergence {
            residual: last_residual,
            iterations: tol::NEWTON_MAX_ITERS,
        })
    }

    /// Stage generating-function second partials at the phase point `(q, p)`.
    pub fn s_blocks(&self, z: &CotangentPoint) -> Result<SBlocks> {
        let out = self.apply_full(z, true, false)?;
        let jac = out.jacobian.unwrap();
        let b = jac.dq_dp();
        let lu = b.clone().lu();
        let b_inv = lu
            .try_inverse()
            .ok_or(Error::SingularBlock { pair: usize::MAX })?;
        let s11 = &b_inv * jac.dq_dq();
        let s12 = -&b_inv;
        let s21 = -b_inv.transpose();
        let s22 = jac.dp_dp() * &b_inv;
        Ok(SBlocks { s11, s12, s21, s22 })
    }
}

impl TwistMap for TwistStage {
    fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    fn apply(&self, z: &CotangentPoint) -> Result<CotangentPoint> {
        Ok(self.apply_full(z, false, false)?.point)
    }

    fn jacobian(&self, z: &CotangentPoint) -> Result<FlowJacobian> {
        Ok(self.apply_full(z, true, false)?.jacobian.unwrap())
    }

    fn generating(&self, q: &DVector<f64>, target: &DVector<f64>) -> Result<Generating> {
        let p = self.psi_inverse(q, target)?;
        let out = self.apply_full(&CotangentPoint::new(q.clone(), p.clone()), false, true)?;
        Ok(Generating {
            value: out.action.unwrap(),
            d1: -p,
            d2: out.point.p,
        })
    }

    fn psi_inverse(&self, q: &DVector<f64>, target: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.resolve(q, target, None)?.0)
    }

    fn nominal_time(&self) -> f64 {
        self.nominal_time
    }

    fn p_norm(&self, q: &DVector<f64>, p: &DVector<f64>) -> f64 {
        self.hamiltonian.metric().p_norm(q, p)
    }
}

/// Stage-count policy for the factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NPolicy {
    Fixed(usize),
    Auto,
}

/// Tuning knobs for factorization validation.
#[derive(Debug, Clone)]
pub struct DecomposeParams {
    pub twist_tol: f64,
    pub q_per_dim: usize,
    pub p_per_dim: usize,
    pub region_margin: f64,
    pub auto_start: usize,
    pub auto_cap: usize,
}

impl Default for DecomposeParams {
    fn default() -> Self {
        Self {
            twist_tol: tol::TWIST_MARGIN_TOL,
            q_per_dim: tol::VALIDATION_Q_PER_DIM,
            p_per_dim: tol::VALIDATION_P_PER_DIM,
            region_margin: tol::REGION_MARGIN,
            auto_start: tol::AUTO_N_START,
            auto_cap: tol::AUTO_N_CAP,
        }
    }
}

/// Shape of a factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecompositionKind {
    /// 2N alternating odd/even stages.
    Interleaved,
    /// N segment stages (momentum-convex case).
    Convex,
}

/// A validated factorization of the time-1 map.
#[derive(Debug, Clone)]
pub struct Decomposition {
    hamiltonian: HamiltonianSpec,
    half_count: usize,
    kind: DecompositionKind,
    stages: Vec<TwistStage>,
}

impl Decomposition {
    pub fn hamiltonian(&self) -> &HamiltonianSpec {
        &self.hamiltonian
    }

    /// The stage count parameter N (stages per period: 2N interleaved, N convex).
    pub fn half_count(&self) -> usize {
        self.half_count
    }

    pub fn kind(&self) -> DecompositionKind {
        self.kind
    }

    pub fn stages(&self) -> &[TwistStage] {
        &self.stages
    }

    /// Number of stages composing one application of the time-1 map.
    pub fn period_stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    /// Stage acting on the sequence pair `(q_k, q_{k+1})`; repeats cyclically
    /// across periods.
    pub fn stage_for_pair(&self, pair: usize) -> &TwistStage {
        &self.stages[pair % self.stages.len()]
    }

    /// Smallest validated twist margin across stages.
    pub fn min_margin(&self) -> f64 {
        self.stages
            .iter()
            .filter_map(|s| s.twist_margin)
            .fold(f64::INFINITY, f64::min)
    }

    /// Applies the full stage product to a phase point.
    pub fn compose_apply(&self, z: &CotangentPoint) -> Result<CotangentPoint> {
        let mut cur = z.clone();
        for stage in &self.stages {
            cur = stage.apply(&cur)?;
        }
        Ok(cur)
    }

    /// Max deviation between the stage product and the direct time-1 flow
    /// over random points with `|p| <= C`.
    pub fn composition_residual(&self, samples: usize, rng: &mut SplitMix64) -> Result<f64> {
        let n = self.dim();
        let c = self.hamiltonian.c_bound();
        let metric = self.hamiltonian.metric();
        let mut worst: f64 = 0.0;
        let mut drawn = 0;
        while drawn < samples {
            let q = DVector::from_fn(n, |_, _| rng.next_f64());
            let p = DVector::from_fn(n, |_, _| rng.uniform(-c, c));
            if metric.p_norm(&q, &p) > c {
                continue;
            }
            drawn += 1;
            let z = CotangentPoint::new(q, p);
            let composed = self.compose_apply(&z)?;
            let direct = self.hamiltonian.flow(0.0, 1.0, &z)?;
            let err = (&composed.q - &direct.q)
                .amax()
                .max((&composed.p - &direct.p).amax());
            worst = worst.max(err);
        }
        Ok(worst)
    }
}

/// Validation sample points: a box lattice over `[0,1)^n x [-p_bound, p_bound]^n`
/// filtered to `|p| <= p_bound`, densified with momentum shells across the
/// bump ramp (where momentum derivatives peak) when the Hamiltonian has one.
fn phase_grid(
    hamiltonian: &HamiltonianSpec,
    p_bound: f64,
    q_per_dim: usize,
    p_per_dim: usize,
) -> Vec<CotangentPoint> {
    let n = hamiltonian.dim();
    let metric = hamiltonian.metric();
    let mut points = Vec::new();
    let q_total = q_per_dim.pow(n as u32);
    let p_total = p_per_dim.pow(n as u32);
    let ramp = if hamiltonian.effective_epsilon() != 0.0 {
        hamiltonian.bump_ramp()
    } else {
        None
    };
    for qi in 0..q_total {
        let q = DVector::from_fn(n, |d, _| {
            ((qi / q_per_dim.pow(d as u32)) % q_per_dim) as f64 / q_per_dim as f64
        });
        for pi in 0..p_total {
            let p = DVector::from_fn(n, |d, _| {
                let idx = (pi / p_per_dim.pow(d as u32)) % p_per_dim;
                if p_per_dim == 1 {
                    0.0
                } else {
                    -p_bound + 2.0 * p_bound * idx as f64 / (p_per_dim - 1) as f64
                }
            });
            if metric.p_norm(&q, &p) > p_bound {
                continue;
            }
            points.push(CotangentPoint::new(q.clone(), p));
        }
        if let Some((lo, hi)) = ramp {
            let hi = hi.min(p_bound);
            let shells = 9;
            let dir_total = 3usize.pow(n as u32);
            for di in 1..dir_total {
                let dir = DVector::from_fn(n, |d, _| {
                    ((di / 3usize.pow(d as u32)) % 3) as f64 - 1.0
                });
                if dir.iter().all(|x| *x == 0.0) {
                    continue;
                }
                let dir_norm = metric.p_norm(&q, &dir);
                for si in 0..shells {
                    let mag = lo + (hi - lo) * si as f64 / (shells - 1) as f64;
                    points.push(CotangentPoint::new(q.clone(), &dir * (mag / dir_norm)));
                }
            }
        }
    }
    points
}

/// Minimum of `|det dQ/dp|` for one stage over the validation grid.
pub fn twist_margin(
    stage: &TwistStage,
    p_bound: f64,
    q_per_dim: usize,
    p_per_dim: usize,
) -> Result<f64> {
    let mut min_det = f64::INFINITY;
    for z in phase_grid(stage.hamiltonian(), p_bound, q_per_dim, p_per_dim) {
        let out = stage.apply_full(&z, true, false)?;
        let det = out.jacobian.unwrap().dq_dp().lu().determinant();
        min_det = min_det.min(libm::fabs(det));
    }
    Ok(min_det)
}

/// Largest row-sum norm of the momentum block `d2H/dp2` over the validation
/// grid, scanned across the time profile. An interleaved odd stage can fold
/// in momentum once this scale reaches the segment count N, so sampled twist
/// margins are only trusted for N comfortably above it.
fn momentum_hessian_scale(
    hamiltonian: &HamiltonianSpec,
    p_bound: f64,
    q_per_dim: usize,
    p_per_dim: usize,
) -> f64 {
    let n = hamiltonian.dim();
    let times: &[f64] = if hamiltonian.time_dependent() {
        &[0.25, 0.75]
    } else {
        &[0.0]
    };
    let mut worst: f64 = 0.0;
    for z in phase_grid(hamiltonian, p_bound, q_per_dim, p_per_dim) {
        for &t in times {
            let h = hamiltonian.hessian(&z.q, &z.p, t);
            for i in 0..n {
                let row_sum: f64 = (0..n).map(|j| libm::fabs(h[(n + i, n + j)])).sum();
                worst = worst.max(row_sum);
            }
        }
    }
    worst
}

/// Smallest eigenvalue of the momentum block over the validation grid;
/// negative values rule out the momentum-convex factorization.
fn momentum_convexity_floor(
    hamiltonian: &HamiltonianSpec,
    p_bound: f64,
    q_per_dim: usize,
    p_per_dim: usize,
) -> f64 {
    let n = hamiltonian.dim();
    let times: &[f64] = if hamiltonian.time_dependent() {
        &[0.25, 0.75]
    } else {
        &[0.0]
    };
    let mut floor = f64::INFINITY;
    for z in phase_grid(hamiltonian, p_bound, q_per_dim, p_per_dim) {
        for &t in times {
            let h = hamiltonian.hessian(&z.q, &z.p, t);
            let hpp = h.view((n, n), (n, n)).into_owned();
            let sym = (&hpp + hpp.transpose()) * 0.5;
            let eig = sym.symmetric_eigen().eigenvalues;
            floor = floor.min(eig.min());
        }
    }
    floor
}

/// Builds and validates the interleaved factorization `F = F_{2N} ... F_1`.
pub fn decompose(
    hamiltonian: &HamiltonianSpec,
    policy: NPolicy,
    params: &DecomposeParams,
) -> Result<Decomposition> {
    decompose_inner(hamiltonian, policy, params, DecompositionKind::Interleaved)
}

/// Builds and validates the N-segment factorization for momentum-convex
/// Hamiltonians; every stage has positive kinetic time `1/N` on the boundary.
pub fn decompose_convex(
    hamiltonian: &HamiltonianSpec,
    policy: NPolicy,
    params: &DecomposeParams,
) -> Result<Decomposition> {
    decompose_inner(hamiltonian, policy, params, DecompositionKind::Convex)
}

fn decompose_inner(
    hamiltonian: &HamiltonianSpec,
    policy: NPolicy,
    params: &DecomposeParams,
    kind: DecompositionKind,
) -> Result<Decomposition> {
    if !hamiltonian.is_compliant() {
        return Err(Error::NonCompliant(format!(
            "perturbation does not vanish on the boundary collar (bump {:?})",
            hamiltonian.bump()
        )));
    }
    let p_bound = hamiltonian.c_bound() + params.region_margin;
    let candidates: Vec<usize> = match policy {
        NPolicy::Fixed(n) => {
            if n == 0 {
                return Err(Error::InvalidParameter("stage count N must be >= 1".into()));
            }
            vec![n]
        }
        NPolicy::Auto => {
            let mut v = Vec::new();
            let mut n = params.auto_start.max(1);
            while n <= params.auto_cap {
                v.push(n);
                n *= 2;
            }
            v
        }
    };

    match kind {
        DecompositionKind::Interleaved => {}
        DecompositionKind::Convex => {
            let floor = momentum_convexity_floor(
                hamiltonian,
                p_bound,
                params.q_per_dim,
                params.p_per_dim,
            );
            if floor <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "Hamiltonian is not momentum-convex on the region (floor {floor:e})"
                )));
            }
        }
    }
    // sampled margins cannot certify a fold between samples; demand a stage
    // count safely above the momentum curvature scale
    let fold_scale = momentum_hessian_scale(hamiltonian, p_bound, params.q_per_dim, params.p_per_dim);
    let n_floor = 1.2 * fold_scale;

    let mut last_n = 0;
    let mut worst_margin = f64::NEG_INFINITY;
    for &half_count in &candidates {
        last_n = half_count;
        if kind == DecompositionKind::Interleaved && (half_count as f64) < n_floor {
            continue;
        }
        let mut stages = build_stages(hamiltonian, half_count, kind);
        let mut all_pass = true;
        let mut round_worst = f64::INFINITY;
        // even stages always share one map; for autonomous Hamiltonians the
        // segment stages are time-homogeneous copies too
        let autonomous = !hamiltonian.time_dependent();
        let mut even_margin: Option<f64> = None;
        let mut segment_margin: Option<f64> = None;
        for stage in stages.iter_mut() {
            let cached = match stage.kind {
                StageKind::Even => &mut even_margin,
                _ if autonomous => &mut segment_margin,
                _ => &mut None,
            };
            let margin = match *cached {
                Some(m) => m,
                None => {
                    let m = twist_margin(stage, p_bound, params.q_per_dim, params.p_per_dim)?;
                    *cached = Some(m);
                    m
                }
            };
            stage.twist_margin = Some(margin);
            round_worst = round_worst.min(margin);
            if margin <= params.twist_tol {
                all_pass = false;
                break;
            }
        }
        if round_worst.is_finite() {
            worst_margin = worst_margin.max(round_worst);
        }
        if all_pass {
            return Ok(Decomposition {
                hamiltonian: hamiltonian.clone(),
                half_count,
                kind,
                stages,
            });
        }
    }
    Err(Error::TwistCheckFailed {
        last_n,
        worst_margin,
    })
}

fn build_stages(
    hamiltonian: &HamiltonianSpec,
    half_count: usize,
    kind: DecompositionKind,
) -> Vec<TwistStage> {
    match kind {
        DecompositionKind::Interleaved => (1..=2 * half_count)
            .map(|index| {
                let stage_kind = if index % 2 == 1 {
                    StageKind::Odd
                } else {
                    StageKind::Even
                };
                TwistStage::new(hamiltonian, index, stage_kind, half_count)
            })
            .collect(),
        DecompositionKind::Convex => (1..=half_count)
            .map(|index| TwistStage::new(hamiltonian, index, StageKind::Convex, half_count))
            .collect(),
    }
}
