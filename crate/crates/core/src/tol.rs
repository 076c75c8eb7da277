//! Default tolerances, step sizes and grid densities used across the crate.
//!
//! Every threshold that a numerical routine compares against is named here so
//! that callers can audit (and tests can pin) the accuracy contract.

/// Fixed step for the Runge-Kutta flow integrator, in units of time.
pub const INTEGRATOR_STEP: f64 = 1e-3;

/// Residual tolerance for Newton shooting solves (exp inverse, psi inverse).
pub const SHOOTING_TOL: f64 = 1e-12;

/// Iteration cap for Newton shooting solves.
pub const NEWTON_MAX_ITERS: usize = 50;

/// A stage passes the twist check when min |det dQ/dp| exceeds this margin.
pub const TWIST_MARGIN_TOL: f64 = 1e-8;

/// Sequence-space domain margin: pairs are resolved for |p| <= C + REGION_MARGIN.
pub const REGION_MARGIN: f64 = 0.05;

/// Flows abort with an escape error beyond |p| > C + ESCAPE_MARGIN.
pub const ESCAPE_MARGIN: f64 = 0.1;

/// Stage count policy: auto mode starts at this half-count N ...
pub const AUTO_N_START: usize = 4;

/// ... and doubles up to this cap before reporting failure.
pub const AUTO_N_CAP: usize = 256;

/// Twist validation grid: base points per q dimension.
pub const VALIDATION_Q_PER_DIM: usize = 16;

/// Twist validation grid: covector points per p dimension.
pub const VALIDATION_P_PER_DIM: usize = 8;

/// A sequence counts as critical when the sup norm of dW falls below this.
pub const CRITICAL_RESIDUAL_TOL: f64 = 1e-10;

/// Tikhonov damping added to near-singular action Hessians in Newton steps.
pub const TIKHONOV_DAMPING: f64 = 1e-8;

/// Two critical sequences within this distance (after shift/translation
/// alignment) are treated as the same orbit.
pub const DEDUP_TOL: f64 = 1e-6;

/// A pair sits on a block face when | |p_k| - C | falls below this.
pub const BLOCK_FACE_TOL: f64 = 1e-7;

/// Converged critical points closer than this to the block boundary are
/// discarded as unreliable.
pub const BLOCK_INTERIOR_MARGIN: f64 = 1e-6;

/// Explicit Euler step used when probing the gradient flow at block faces.
pub const GRADIENT_FLOW_STEP: f64 = 1e-4;

/// Singular values below this count toward kernel dimension.
pub const KERNEL_SINGULAR_TOL: f64 = 1e-8;

/// Certificate split: nonzero Hessian eigenvalues must exceed this in modulus.
pub const HESSIAN_SPLIT_TOL: f64 = 1e-4;

/// A Floquet multiplier within this distance of 1 marks the orbit degenerate.
pub const UNIT_MULTIPLIER_TOL: f64 = 1e-6;

/// Maximum pairwise relative error allowed between the two multiplier routes.
pub const CROSS_VALIDATE_TOL: f64 = 1e-4;

/// Multi-start seeding: grid points per q dimension.
pub const SEED_GRID_PER_DIM: usize = 8;

/// Fiber audit: sample fibers per q dimension.
pub const LINKING_Q_GRID: usize = 32;

/// Fiber audit: Newton starts per p dimension.
pub const LINKING_P_STARTS: usize = 16;

/// Default collar width, as a fraction of the momentum bound C.
pub const COLLAR_DELTA_FACTOR: f64 = 0.1;

/// Composition of all stages must reproduce the time-1 map to this accuracy.
pub const COMPOSITION_TOL: f64 = 1e-8;

/// Iteration cap for the critical-point Newton refinement.
pub const SEARCH_MAX_ITERS: usize = 80;

/// Pre-smoothing steps of descent on |dW|^2 before Newton refinement.
pub const SEARCH_DESCENT_STEPS: usize = 12;

/// Abort a seed when the residual fails to halve over this many iterations.
pub const SEARCH_STALL_WINDOW: usize = 12;
