//! Pass criteria for the verification harness.
//!
//! Single source of truth: the summary report's PASS lines and the
//! acceptance suite both read these constants, so a threshold can only be
//! changed in one place.

/// Max relative per-component mass drift on a conservative run with
/// clipping off (nondegenerate and degenerate regimes).
pub const MASS_DRIFT_REL: f64 = 1e-12;

/// Max relative mass drift in the singular regime, where coefficient
/// regularization contributes round-off at the vacuum fronts.
pub const MASS_DRIFT_REL_SINGULAR: f64 = 1e-10;

/// Total clipped mass as a fraction of the initial mass when clipping is on.
pub const CLIPPED_MASS_REL: f64 = 1e-9;

/// Max fraction of any component's mass in boundary-adjacent cells; this
/// certifies the finite box as a stand-in for the whole space.
pub const BOUNDARY_MASS_REL: f64 = 1e-10;

/// Allowed positive jump between consecutive sup_U samples (front wiggle).
pub const SUP_U_INCREASE_TOL: f64 = 1e-10;

/// Relative error allowed in the fitted decay rate of K_hat(t0) against
/// the self-similar exponent n/(n(m-1)+2).
pub const KHAT_RATE_REL_TOL: f64 = 0.15;

/// Minimal empirical L1 convergence order per halving in refinement studies.
pub const ORACLE_L1_ORDER_MIN: f64 = 0.8;

/// Final L1 error against the oracle, as a fraction of the total mass.
pub const ORACLE_L1_FINAL_REL: f64 = 2e-3;

/// Max pointwise deviation from c_i times the total, as a fraction of the
/// running sup, on proportional-data runs.
pub const PROPORTIONAL_DEV_REL: f64 = 1e-10;

/// Allowed relative variation of fitted Harnack constants between grid
/// refinements at matched cylinders.
pub const HARNACK_GAMMA_VAR_REL: f64 = 0.20;

/// Oscillation contraction: every measured sigma must be < 1 and the max
/// must not exceed this.
pub const OSC_SIGMA_MAX: f64 = 0.95;

/// Relative tolerance of the truncation energy A_1 against its hand value
/// on constant-field constructions.
pub const TRUNCATION_A1_REL_TOL: f64 = 1e-10;

/// Proportional weights must sum to 1 within this before the reduction
/// oracle applies.
pub const WEIGHT_SUM_TOL: f64 = 1e-14;

/// Sample count for structure validation in presets.
pub const STRUCTURE_SAMPLES: usize = 10_000;
