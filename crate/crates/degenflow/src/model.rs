//! Parameter records, derived exponents, regime classification, and the
//! pluggable coupler / flux / drift laws with their structure-condition
//! validator.
//!
//! The system couples k nonnegative components through a scalar diffusion
//! controller U(u^1, ..., u^k); admissible laws satisfy coercivity and
//! growth inequalities with constants (c, C1..C5) that the validator
//! checks on sampled arguments.

use std::fmt;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative slack for floating-point comparisons of inequalities that are
/// exact in real arithmetic.
const INEQ_SLACK: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Exponent records
// ---------------------------------------------------------------------------

/// The raw exponents of the system: dimension, component count, diffusion
/// exponent m, per-component (beta_i, lambda_i), and the optional drift
/// growth exponent q.
#[derive(Debug, Clone, Serialize)]
pub struct Exponents {
    pub n: usize,
    pub k: usize,
    pub m: f64,
    pub beta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub q: Option<f64>,
}

impl Exponents {
    pub fn new(n: usize, m: f64, beta: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        if n < 1 {
            return Err(Error::Domain("dimension n must be >= 1".into()));
        }
        if beta.is_empty() || beta.len() != lambda.len() {
            return Err(Error::Domain(
                "beta and lambda must be non-empty and of equal length".into(),
            ));
        }
        if !(m > 0.0) {
            return Err(Error::Domain(format!("m must be > 0, got {m}")));
        }
        if beta.iter().any(|b| !(*b >= 0.0)) {
            return Err(Error::Domain("all beta_i must be >= 0".into()));
        }
        if lambda.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Domain("all lambda_i must be > 0".into()));
        }
        Ok(Self {
            n,
            k: beta.len(),
            m,
            beta,
            lambda,
            q: None,
        })
    }

    /// Declare an active drift growth exponent. Must lie in the admissible
    /// open interval (1, q_upper_bound).
    pub fn with_drift(mut self, q: f64) -> Result<Self> {
        let hi = q_upper_bound(self.m, self.n, self.beta_star());
        if !(q > 1.0 && q < hi) {
            return Err(Error::Regime(format!(
                "drift exponent q = {q} outside admissible range (1, {hi})"
            )));
        }
        self.q = Some(q);
        Ok(self)
    }

    /// min_i beta_i.
    pub fn beta_star(&self) -> f64 {
        self.beta.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn derived(&self) -> DerivedExponents {
        DerivedExponents::from(self)
    }
}

/// Diffusion regime, classified by m.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    /// m = 1: heat-type diffusion.
    Nondegenerate,
    /// m > 1: coefficient vanishes where U = 0, fronts propagate at finite speed.
    Degenerate,
    /// m < 1: coefficient blows up where U = 0 (fast diffusion).
    Singular,
}

/// Per-component derived exponents. `alpha0` is the base quantity; the
/// effective scalar exponent and the Harnack exponent are derived from it
/// by the identities m_i = alpha0 + 1 and theta_i = n*alpha0 + 2, evaluated
/// with exactly those expressions so the identities hold bit-for-bit.
#[derive(Debug, Clone, Serialize)]
pub struct DerivedExponents {
    pub n: usize,
    pub m_i: Vec<f64>,
    pub theta_i: Vec<f64>,
    pub alpha0: Vec<f64>,
    pub regime: Regime,
}

impl From<&Exponents> for DerivedExponents {
    fn from(e: &Exponents) -> Self {
        let alpha0: Vec<f64> = e.beta.iter().map(|b| b * (e.m - 1.0)).collect();
        let m_i = alpha0.iter().map(|a| a + 1.0).collect();
        let theta_i = alpha0.iter().map(|a| e.n as f64 * a + 2.0).collect();
        let regime = if e.m == 1.0 {
            Regime::Nondegenerate
        } else if e.m > 1.0 {
            Regime::Degenerate
        } else {
            Regime::Singular
        };
        Self {
            n: e.n,
            m_i,
            theta_i,
            alpha0,
            regime,
        }
    }
}

// ---------------------------------------------------------------------------
// Threshold formulas
// ---------------------------------------------------------------------------

/// (n - 2)/n, the critical exponent below which L^1 mass can escape.
pub fn critical_exponent(n: usize) -> f64 {
    (n as f64 - 2.0) / n as f64
}

/// Upper bound of the admissible drift growth exponent:
/// (m(1 + (1+m)/(mn)) - 1) * beta_star + 1.
pub fn q_upper_bound(m: f64, n: usize, beta_star: f64) -> f64 {
    (m * (1.0 + (1.0 + m) / (m * n as f64)) - 1.0) * beta_star + 1.0
}

/// Admissible open interval (lower, 1) of the effective exponent m_i for
/// mass conservation in the singular range. The homogeneous variant applies
/// when C2 = C4 = 0.
pub fn singular_mass_range(n: usize, homogeneous: bool) -> (f64, f64) {
    let nf = n as f64;
    let lower = if homogeneous {
        (nf * nf - nf + 3.0 + (7.0 * nf * nf + 2.0 * nf - 7.0).sqrt()) / (nf * nf + 2.0 * nf + 4.0)
    } else {
        (nf * nf + nf + 4.0 + (2.0 * nf * (7.0 * nf + 11.0)).sqrt()) / (nf * nf + 5.0 * nf + 8.0)
    };
    (lower, 1.0)
}

// ---------------------------------------------------------------------------
// Regime classification report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct TheoremApplicability {
    pub theorem: String,
    /// Per component; a single entry when the condition is not component-wise.
    pub applies: Vec<bool>,
    /// Names the violated condition for components where it does not apply.
    pub violated: Vec<Option<String>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegimeReport {
    pub derived: DerivedExponents,
    pub theorems: Vec<TheoremApplicability>,
}

/// Reports, per component, which of the boundedness / mass-conservation /
/// continuity statements apply at these exponents, naming the violated
/// condition when one does not.
pub fn classify_regime(exp: &Exponents) -> RegimeReport {
    let derived = exp.derived();
    let crit = critical_exponent(exp.n);
    let mut theorems = Vec::new();

    // Uniform L^inf bound of U: n >= 2 and m > (n-2)/n; q constrained only
    // when active.
    {
        let mut ok = exp.n >= 2 && exp.m > crit;
        let mut why = if ok {
            None
        } else if exp.n < 2 {
            Some("requires n >= 2".into())
        } else {
            Some(format!("m = {} <= (n-2)/n = {}", exp.m, crit))
        };
        if ok {
            if let Some(q) = exp.q {
                let hi = q_upper_bound(exp.m, exp.n, exp.beta_star());
                if !(q > 1.0 && q < hi) {
                    ok = false;
                    why = Some(format!("q = {q} outside (1, {hi})"));
                }
            }
        }
        theorems.push(TheoremApplicability {
            theorem: "uniform_bound".into(),
            applies: vec![ok],
            violated: vec![why],
        });
    }

    // Mass conservation, nondegenerate: n >= 2 and m = 1 (drift absent).
    {
        let ok = exp.n >= 2 && exp.m == 1.0;
        let why = if ok {
            None
        } else if exp.n < 2 {
            Some("requires n >= 2".into())
        } else {
            Some(format!("requires m = 1, got m = {}", exp.m))
        };
        theorems.push(TheoremApplicability {
            theorem: "mass_nondegenerate".into(),
            applies: vec![ok],
            violated: vec![why],
        });
    }

    // Mass conservation, degenerate: per component, m > max(1, 2 - 1/beta_i).
    {
        let mut applies = Vec::new();
        let mut violated = Vec::new();
        for (i, &b) in exp.beta.iter().enumerate() {
            let bound = if b > 0.0 {
                (2.0 - 1.0 / b).max(1.0)
            } else {
                1.0
            };
            let ok = exp.n >= 2 && exp.m > bound;
            applies.push(ok);
            violated.push(if ok {
                None
            } else if exp.n < 2 {
                Some("requires n >= 2".into())
            } else {
                Some(format!(
                    "component {i}: requires m > max(1, 2 - 1/beta) = {bound}"
                ))
            });
        }
        theorems.push(TheoremApplicability {
            theorem: "mass_degenerate".into(),
            applies,
            violated,
        });
    }

    // Mass conservation, singular supercritical: m < 1 and m_i in (lower, 1).
    {
        let (lower, _) = singular_mass_range(exp.n.max(2), false);
        let mut applies = Vec::new();
        let mut violated = Vec::new();
        for (i, &mi) in derived.m_i.iter().enumerate() {
            let ok = exp.n >= 2 && exp.m < 1.0 && mi > lower && mi < 1.0;
            applies.push(ok);
            violated.push(if ok {
                None
            } else if exp.n < 2 {
                Some("requires n >= 2".into())
            } else if exp.m >= 1.0 {
                Some(format!("requires m < 1, got m = {}", exp.m))
            } else {
                Some(format!("component {i}: m_i = {mi} outside ({lower}, 1)"))
            });
        }
        theorems.push(TheoremApplicability {
            theorem: "mass_singular".into(),
            applies,
            violated,
        });
    }

    // Local continuity: n >= 2 and m > 1; the drift window, when active,
    // is (1/2)(m-1)beta_star + 1 < q < q_upper_bound.
    {
        let mut ok = exp.n >= 2 && exp.m > 1.0;
        let mut why = if ok {
            None
        } else if exp.n < 2 {
            Some("requires n >= 2".into())
        } else {
            Some(format!("requires m > 1, got m = {}", exp.m))
        };
        if ok {
            if let Some(q) = exp.q {
                let lo = 0.5 * (exp.m - 1.0) * exp.beta_star() + 1.0;
                let hi = q_upper_bound(exp.m, exp.n, exp.beta_star());
                if !(q > lo && q < hi) {
                    ok = false;
                    why = Some(format!("q = {q} outside ({lo}, {hi})"));
                }
            }
        }
        theorems.push(TheoremApplicability {
            theorem: "local_continuity".into(),
            applies: vec![ok],
            violated: vec![why],
        });
    }

    RegimeReport { derived, theorems }
}

// ---------------------------------------------------------------------------
// Couplers
// ---------------------------------------------------------------------------

pub type CouplerFn = dyn Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync;

/// Evaluation rule for the diffusion controller U(u^1, ..., u^k).
#[derive(Clone)]
pub enum CouplerKind {
    /// U = sum_i u^i (total population).
    Sum,
    /// U = |u|, with dU = 0 at the origin.
    EuclideanNorm,
    /// U = max_i lambda_i (u^i)^{beta_i}; the declared equivalence-band
    /// factors (c_eq, big_c_eq) are carried for reporting only.
    WeightedPower {
        lambda: Vec<f64>,
        beta: Vec<f64>,
        c_eq: f64,
        big_c_eq: f64,
    },
    /// Caller-supplied U and its partials.
    Custom(Arc<CouplerFn>),
}

impl fmt::Debug for CouplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CouplerKind::Sum => write!(f, "Sum"),
            CouplerKind::EuclideanNorm => write!(f, "EuclideanNorm"),
            CouplerKind::WeightedPower {
                lambda,
                beta,
                c_eq,
                big_c_eq,
            } => write!(
                f,
                "WeightedPower {{ lambda: {lambda:?}, beta: {beta:?}, band: [{c_eq}, {big_c_eq}] }}"
            ),
            CouplerKind::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// A coupler together with its declared (unverifiable) Sobolev-membership
/// assumption; the validator echoes the declaration rather than checking it.
#[derive(Debug, Clone)]
pub struct CouplerSpec {
    pub kind: CouplerKind,
    pub a1_declared: bool,
}

impl CouplerSpec {
    pub fn sum() -> Self {
        Self {
            kind: CouplerKind::Sum,
            a1_declared: true,
        }
    }

    pub fn euclidean_norm() -> Self {
        Self {
            kind: CouplerKind::EuclideanNorm,
            a1_declared: true,
        }
    }

    pub fn weighted_power(lambda: Vec<f64>, beta: Vec<f64>, c_eq: f64, big_c_eq: f64) -> Self {
        Self {
            kind: CouplerKind::WeightedPower {
                lambda,
                beta,
                c_eq,
                big_c_eq,
            },
            a1_declared: true,
        }
    }

    pub fn custom(f: Arc<CouplerFn>) -> Self {
        Self {
            kind: CouplerKind::Custom(f),
            a1_declared: false,
        }
    }

    /// U only, without partials and without the nonnegativity gate; negative
    /// inputs are clamped to 0. This is the solver's hot path, where explicit
    /// updates with clipping disabled may carry round-off undershoot.
    #[inline]
    pub fn eval_clamped(&self, u: &[f64]) -> f64 {
        match &self.kind {
            CouplerKind::Sum => {
                let mut s = 0.0;
                for &v in u {
                    s += v.max(0.0);
                }
                s
            }
            CouplerKind::EuclideanNorm => {
                let mut s = 0.0;
                for &v in u {
                    let v = v.max(0.0);
                    s += v * v;
                }
                s.sqrt()
            }
            CouplerKind::WeightedPower { lambda, beta, .. } => {
                let mut best = 0.0f64;
                for ((&v, &l), &b) in u.iter().zip(lambda).zip(beta) {
                    let cand = l * v.max(0.0).powf(b);
                    if cand > best {
                        best = cand;
                    }
                }
                best
            }
            CouplerKind::Custom(f) => {
                let clamped: Vec<f64> = u.iter().map(|v| v.max(0.0)).collect();
                f(&clamped).0
            }
        }
    }
}

/// U and all partials dU/du^i at a nonnegative point.
pub fn compute_u(coupler: &CouplerSpec, u: &[f64]) -> Result<(f64, Vec<f64>)> {
    if u.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::Domain(format!(
            "coupler input must be nonnegative and finite, got {u:?}"
        )));
    }
    Ok(match &coupler.kind {
        CouplerKind::Sum => (u.iter().sum(), vec![1.0; u.len()]),
        CouplerKind::EuclideanNorm => {
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                // Partials are undefined at the origin; 0 preserves
                // monotonicity and matches U's minimum.
                (0.0, vec![0.0; u.len()])
            } else {
                (norm, u.iter().map(|v| v / norm).collect())
            }
        }
        CouplerKind::WeightedPower { lambda, beta, .. } => {
            let mut best = 0.0f64;
            let mut arg = 0usize;
            for (i, ((&v, &l), &b)) in u.iter().zip(lambda).zip(beta).enumerate() {
                let cand = l * v.powf(b);
                if cand > best {
                    best = cand;
                    arg = i;
                }
            }
            let mut grad = vec![0.0; u.len()];
            if best > 0.0 && u[arg] > 0.0 {
                grad[arg] = lambda[arg] * beta[arg] * u[arg].powf(beta[arg] - 1.0);
            }
            (best, grad)
        }
        CouplerKind::Custom(f) => f(u),
    })
}

// ---------------------------------------------------------------------------
// Structure constants, flux and drift laws
// ---------------------------------------------------------------------------

/// Claimed constants of the structure conditions. A value of 0 for any of
/// C1..C5 encodes "term absent"; values in (0, 1) are admissible here but
/// flagged as outside the band the estimates state.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StructureConstants {
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
}

impl StructureConstants {
    pub fn new(c: f64, c1: f64, c2: f64, c3: f64, c4: f64, c5: f64) -> Result<Self> {
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::Domain(format!(
                "coercivity c must be in (0, 1], got {c}"
            )));
        }
        for (name, v) in [("C1", c1), ("C2", c2), ("C3", c3), ("C4", c4), ("C5", c5)] {
            if !(v >= 0.0) {
                return Err(Error::Domain(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(Self {
            c,
            c1,
            c2,
            c3,
            c4,
            c5,
        })
    }

    /// Constants of the identity flux with no drift.
    pub fn identity() -> Self {
        Self {
            c: 1.0,
            c1: 1.0,
            c2: 0.0,
            c3: 1.0,
            c4: 0.0,
            c5: 0.0,
        }
    }
}

pub type FluxFn = dyn Fn(&[f64], f64, &[f64], f64) -> Vec<f64> + Send + Sync;
pub type DriftFn = dyn Fn(f64, &[f64], f64) -> Vec<f64> + Send + Sync;

#[derive(Clone)]
pub enum FluxKind {
    /// A(p, z, x, t) = p.
    Identity,
    /// A(p) = scale * p + skew * p_perp (p_perp = (-p_y, p_x) in 2-D, 0 in 1-D).
    /// Satisfies A.p = scale |p|^2 and |A| = sqrt(scale^2 + skew^2) |p|.
    ScaledRotated {
        scale: f64,
        skew: f64,
    },
    Custom(Arc<FluxFn>),
}

impl fmt::Debug for FluxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FluxKind::Identity => write!(f, "Identity"),
            FluxKind::ScaledRotated { scale, skew } => {
                write!(f, "ScaledRotated {{ scale: {scale}, skew: {skew} }}")
            }
            FluxKind::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FluxLaw {
    pub kind: FluxKind,
    pub constants: StructureConstants,
}

impl FluxLaw {
    pub fn identity() -> Self {
        Self {
            kind: FluxKind::Identity,
            constants: StructureConstants::identity(),
        }
    }

    pub fn scaled_rotated(scale: f64, skew: f64, constants: StructureConstants) -> Self {
        Self {
            kind: FluxKind::ScaledRotated { scale, skew },
            constants,
        }
    }

    /// Evaluate into `out` (len = p.len()), avoiding allocation in stencil loops.
    #[inline]
    pub fn eval_into(&self, p: &[f64], z: f64, x: &[f64], t: f64, out: &mut [f64]) {
        match &self.kind {
            FluxKind::Identity => out.copy_from_slice(p),
            FluxKind::ScaledRotated { scale, skew } => {
                if p.len() == 2 {
                    out[0] = scale * p[0] - skew * p[1];
                    out[1] = scale * p[1] + skew * p[0];
                } else {
                    for (o, &pi) in out.iter_mut().zip(p) {
                        *o = scale * pi;
                    }
                }
            }
            FluxKind::Custom(f) => out.copy_from_slice(&f(p, z, x, t)),
        }
    }

    pub fn eval(&self, p: &[f64], z: f64, x: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; p.len()];
        self.eval_into(p, z, x, t, &mut out);
        out
    }
}

#[derive(Clone)]
pub enum DriftKind {
    None,
    /// B(z) = coeff * z^q along the first coordinate axis.
    PowerQ {
        coeff: f64,
        q: f64,
    },
    Custom(Arc<DriftFn>),
}

impl fmt::Debug for DriftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriftKind::None => write!(f, "None"),
            DriftKind::PowerQ { coeff, q } => write!(f, "PowerQ {{ coeff: {coeff}, q: {q} }}"),
            DriftKind::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DriftLaw {
    pub kind: DriftKind,
    pub constants: StructureConstants,
}

impl DriftLaw {
    pub fn none() -> Self {
        Self {
            kind: DriftKind::None,
            constants: StructureConstants::identity(),
        }
    }

    pub fn power(coeff: f64, q: f64, constants: StructureConstants) -> Self {
        Self {
            kind: DriftKind::PowerQ { coeff, q },
            constants,
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self.kind, DriftKind::None)
    }

    #[inline]
    pub fn eval_into(&self, z: f64, x: &[f64], t: f64, out: &mut [f64]) {
        match &self.kind {
            DriftKind::None => out.fill(0.0),
            DriftKind::PowerQ { coeff, q } => {
                out.fill(0.0);
                out[0] = coeff * z.max(0.0).powf(*q);
            }
            DriftKind::Custom(f) => out.copy_from_slice(&f(z, x, t)),
        }
    }

    /// Bound on |dB/dz| over z in [0, z_max], used for the advective dt limit.
    pub fn derivative_bound(&self, z_max: f64) -> f64 {
        match &self.kind {
            DriftKind::None => 0.0,
            DriftKind::PowerQ { coeff, q } => {
                if *q >= 1.0 {
                    coeff.abs() * q * z_max.powf(q - 1.0)
                } else {
                    f64::INFINITY
                }
            }
            // No symbolic derivative for custom laws; fall back to the
            // growth bound C5 q z^{q-1} shape with q unknown -> crude slope.
            DriftKind::Custom(_) => self.constants.c5 * z_max.max(1.0),
        }
    }
}

// ---------------------------------------------------------------------------
// Structure validation
// ---------------------------------------------------------------------------

/// One sampled argument tuple for the pointwise structure checks.
#[derive(Debug, Clone, Serialize)]
pub struct StructureSample {
    pub p: Vec<f64>,
    pub z: f64,
    pub u: Vec<f64>,
    pub x: Vec<f64>,
    pub t: f64,
}

/// Seeded sample generator. The first entries cover the boundary cases the
/// checks must include: z = 0, p = 0, both zero, and extreme |p|/z ratios.
pub fn generate_samples(seed: u64, count: usize, dims: usize, k: usize) -> Vec<StructureSample> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);

    let fixed: [(f64, f64); 5] = [
        (0.0, 0.0),  // both zero
        (0.0, 1.0),  // p = 0
        (1.0, 0.0),  // z = 0
        (1e6, 1e-6), // large |p|/z
        (1e-6, 1e6), // large z/|p|
    ];
    for &(pscale, z) in fixed.iter().take(count) {
        out.push(StructureSample {
            p: (0..dims)
                .map(|a| if a == 0 { pscale } else { 0.0 })
                .collect(),
            z,
            u: vec![z; k],
            x: vec![0.0; dims],
            t: 0.0,
        });
    }
    while out.len() < count {
        let scale = 10f64.powi(rng.gen_range(-3..4));
        let p: Vec<f64> = (0..dims)
            .map(|_| scale * rng.gen_range(-1.0..1.0))
            .collect();
        let z: f64 = scale * rng.gen_range(0.0..1.0);
        let u: Vec<f64> = (0..k).map(|_| scale * rng.gen_range(0.0..1.0)).collect();
        let x: Vec<f64> = (0..dims).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = rng.gen_range(0.0..1.0);
        out.push(StructureSample { p, z, u, x, t });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConditionStatus {
    Pass,
    Fail,
    /// Assumed, not checkable pointwise.
    Declared,
    /// Not analytically reducible for this coupler/flux combination.
    NotReducible,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub condition: String,
    pub status: ConditionStatus,
    /// Empirically tightest constants over the sample set, by convention
    /// holding the other claimed constant of the pair fixed.
    pub tightest_constants: Vec<(String, f64)>,
    pub failing_sample: Option<StructureSample>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub conditions: Vec<ConditionReport>,
    pub samples_checked: usize,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.conditions
            .iter()
            .all(|c| c.status != ConditionStatus::Fail)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn band_note(constants: &StructureConstants) -> Option<String> {
    let mut low = Vec::new();
    for (name, v) in [
        ("C1", constants.c1),
        ("C2", constants.c2),
        ("C3", constants.c3),
        ("C4", constants.c4),
        ("C5", constants.c5),
    ] {
        if v > 0.0 && v < 1.0 {
            low.push(name);
        }
    }
    if low.is_empty() {
        None
    } else {
        Some(format!(
            "constants {} in (0,1): outside the stated band [1, inf), admitted",
            low.join(", ")
        ))
    }
}

/// Check the claimed structure conditions on the sample set.
///
/// (A2), (A5), (A6), (A7) are checked pointwise. (A3) and (A4) involve
/// spatial gradients of composed fields and are only checked where they
/// reduce analytically (Sum coupler; for (A4) additionally a flux linear
/// in p with no zero-order term). (A1) is echoed as declared.
///
/// Errors (rather than reporting failure) when the sample set is empty or
/// when a drift is claimed with q outside the admissible range.
pub fn validate_structure(
    flux: &FluxLaw,
    drift: &DriftLaw,
    coupler: &CouplerSpec,
    exp: &Exponents,
    samples: &[StructureSample],
) -> Result<ValidationReport> {
    if samples.is_empty() {
        return Err(Error::Domain("sample set must be non-empty".into()));
    }
    let fc = &flux.constants;
    let dc = &drift.constants;

    // Declared-absent bookkeeping must be consistent.
    if drift.is_none() != (dc.c5 == 0.0) {
        return Err(Error::Config(
            "C5 = 0 must hold exactly when the drift is declared absent".into(),
        ));
    }

    // Regime gate for the drift growth exponent.
    if dc.c5 > 0.0 {
        let q = exp.q.ok_or_else(|| {
            Error::Config("drift active (C5 > 0) but no growth exponent q declared".into())
        })?;
        let hi = q_upper_bound(exp.m, exp.n, exp.beta_star());
        if !(q > 1.0 && q < hi) {
            return Err(Error::Regime(format!(
                "q = {q} outside admissible range (1, {hi}) with C5 > 0"
            )));
        }
    }

    let mut conditions = Vec::new();

    // (A1): declared only.
    conditions.push(ConditionReport {
        condition: "A1".into(),
        status: ConditionStatus::Declared,
        tightest_constants: vec![],
        failing_sample: None,
        note: Some(format!(
            "Sobolev membership declared = {}, not checkable pointwise",
            coupler.a1_declared
        )),
    });

    // (A2): U(0) = 0, dU >= 0, sum_i |dU_i u_i| <= C1 U.
    {
        let mut status = ConditionStatus::Pass;
        let mut failing = None;
        let mut c1_obs: f64 = 0.0;
        let (u0, _) = compute_u(coupler, &vec![0.0; exp.k])?;
        if u0 != 0.0 {
            status = ConditionStatus::Fail;
        }
        for s in samples {
            let (uval, grad) = compute_u(coupler, &s.u)?;
            if grad.iter().any(|g| *g < -INEQ_SLACK) {
                status = ConditionStatus::Fail;
                failing.get_or_insert_with(|| s.clone());
                continue;
            }
            let weighted: f64 = grad.iter().zip(&s.u).map(|(g, v)| (g * v).abs()).sum();
            if uval > 0.0 {
                c1_obs = c1_obs.max(weighted / uval);
            }
            if weighted > fc.c1 * uval * (1.0 + INEQ_SLACK) + f64::MIN_POSITIVE {
                status = ConditionStatus::Fail;
                failing.get_or_insert_with(|| s.clone());
            }
        }
        conditions.push(ConditionReport {
            condition: "A2".into(),
            status,
            tightest_constants: vec![("C1".into(), c1_obs)],
            failing_sample: failing,
            note: if u0 != 0.0 {
                Some(format!("U(0,...,0) = {u0} != 0"))
            } else {
                None
            },
        });
    }

    // (A3): reduces to 0 >= 0 for the Sum coupler (grad of U_{u^i} vanishes).
    conditions.push(match coupler.kind {
        CouplerKind::Sum => ConditionReport {
            condition: "A3".into(),
            status: ConditionStatus::Pass,
            tightest_constants: vec![],
            failing_sample: None,
            note: Some("Sum coupler: dU/du^i constant, condition reduces to 0 >= 0".into()),
        },
        _ => ConditionReport {
            condition: "A3".into(),
            status: ConditionStatus::NotReducible,
            tightest_constants: vec![],
            failing_sample: None,
            note: Some("grad of dU/du^i not expressible in (p, z) samples".into()),
        },
    });

    // (A4): for Sum + linear-in-p flux the sum collapses to A(p).p vs
    // c|p|^2 - C2 U^2 with p = grad U.
    {
        let reducible = matches!(coupler.kind, CouplerKind::Sum)
            && matches!(
                flux.kind,
                FluxKind::Identity | FluxKind::ScaledRotated { .. }
            );
        if reducible {
            let mut status = ConditionStatus::Pass;
            let mut failing = None;
            let mut c_obs = f64::INFINITY;
            for s in samples {
                let (uval, _) = compute_u(coupler, &s.u)?;
                let a = flux.eval(&s.p, uval, &s.x, s.t);
                let lhs = dot(&a, &s.p);
                let p2 = dot(&s.p, &s.p);
                if p2 > 0.0 {
                    c_obs = c_obs.min((lhs + fc.c2 * uval * uval) / p2);
                }
                if lhs + fc.c2 * uval * uval < fc.c * p2 * (1.0 - INEQ_SLACK) - f64::MIN_POSITIVE {
                    status = ConditionStatus::Fail;
                    failing.get_or_insert_with(|| s.clone());
                }
            }
            conditions.push(ConditionReport {
                condition: "A4".into(),
                status,
                tightest_constants: vec![("c".into(), if c_obs.is_finite() { c_obs } else { 0.0 })],
                failing_sample: failing,
                note: Some("reduced via Sum coupler and flux linear in p".into()),
            });
        } else {
            conditions.push(ConditionReport {
                condition: "A4".into(),
                status: ConditionStatus::NotReducible,
                tightest_constants: vec![],
                failing_sample: None,
                note: Some("checked only for Sum coupler with flux linear in p".into()),
            });
        }
    }

    // (A5): A(p, z).p >= c |p|^2 - C2 z^2.
    {
        let mut status = ConditionStatus::Pass;
        let mut failing = None;
        let mut c_obs = f64::INFINITY;
        for s in samples {
            let a = flux.eval(&s.p, s.z, &s.x, s.t);
            let lhs = dot(&a, &s.p);
            let p2 = dot(&s.p, &s.p);
            if p2 > 0.0 {
                c_obs = c_obs.min((lhs + fc.c2 * s.z * s.z) / p2);
            }
            if lhs + fc.c2 * s.z * s.z < fc.c * p2 * (1.0 - INEQ_SLACK) - f64::MIN_POSITIVE {
                status = ConditionStatus::Fail;
                if failing.is_none() {
                    failing = Some(s.clone());
                }
            }
        }
        conditions.push(ConditionReport {
            condition: "A5".into(),
            status,
            tightest_constants: vec![("c".into(), if c_obs.is_finite() { c_obs } else { 0.0 })],
            failing_sample: failing,
            note: None,
        });
    }

    // (A6): |A(p, z)| <= C3 |p| + C4 z.
    {
        let mut status = ConditionStatus::Pass;
        let mut failing = None;
        let mut c3_obs: f64 = 0.0;
        let mut c4_obs: f64 = 0.0;
        for s in samples {
            let a = flux.eval(&s.p, s.z, &s.x, s.t);
            let an = norm(&a);
            let pn = norm(&s.p);
            if s.z == 0.0 && pn > 0.0 {
                c3_obs = c3_obs.max(an / pn);
            }
            if s.z > 0.0 {
                c4_obs = c4_obs.max(((an - fc.c3 * pn) / s.z).max(0.0));
            }
            if an > (fc.c3 * pn + fc.c4 * s.z) * (1.0 + INEQ_SLACK) + f64::MIN_POSITIVE {
                status = ConditionStatus::Fail;
                if failing.is_none() {
                    failing = Some(s.clone());
                }
            }
        }
        conditions.push(ConditionReport {
            condition: "A6".into(),
            status,
            tightest_constants: vec![("C3".into(), c3_obs), ("C4".into(), c4_obs)],
            failing_sample: failing,
            note: None,
        });
    }

    // (A7): |B(z)| <= C5 z^q.
    {
        if dc.c5 == 0.0 {
            conditions.push(ConditionReport {
                condition: "A7".into(),
                status: ConditionStatus::Pass,
                tightest_constants: vec![("C5".into(), 0.0)],
                failing_sample: None,
                note: Some("drift absent".into()),
            });
        } else {
            let q = exp.q.expect("checked above");
            let mut status = ConditionStatus::Pass;
            let mut failing = None;
            let mut c5_obs: f64 = 0.0;
            let dims = samples[0].p.len();
            let mut b = vec![0.0; dims];
            for s in samples {
                drift.eval_into(s.z, &s.x, s.t, &mut b);
                let bn = norm(&b);
                let zq = s.z.powf(q);
                if zq > 0.0 {
                    c5_obs = c5_obs.max(bn / zq);
                }
                if bn > dc.c5 * zq * (1.0 + INEQ_SLACK) + f64::MIN_POSITIVE {
                    status = ConditionStatus::Fail;
                    if failing.is_none() {
                        failing = Some(s.clone());
                    }
                }
            }
            conditions.push(ConditionReport {
                condition: "A7".into(),
                status,
                tightest_constants: vec![("C5".into(), c5_obs)],
                failing_sample: failing,
                note: None,
            });
        }
    }

    // Surface constants declared inside (0, 1).
    if let Some(note) = band_note(fc) {
        conditions.push(ConditionReport {
            condition: "constants_band".into(),
            status: ConditionStatus::Declared,
            tightest_constants: vec![],
            failing_sample: None,
            note: Some(note),
        });
    }

    Ok(ValidationReport {
        conditions,
        samples_checked: samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exps(n: usize, m: f64, beta: &[f64]) -> Exponents {
        Exponents::new(n, m, beta.to_vec(), vec![1.0; beta.len()]).unwrap()
    }

    #[test]
    fn critical_exponent_values() {
        assert_eq!(critical_exponent(2), 0.0);
        assert!((critical_exponent(3) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(critical_exponent(1), -1.0);
    }

    #[test]
    fn q_upper_bound_values() {
        // m = 1, beta* = 1: the heat-equation critical number (n+2)/n.
        assert!((q_upper_bound(1.0, 2, 1.0) - 2.0).abs() < 1e-15);
        assert!((q_upper_bound(1.0, 3, 1.0) - 5.0 / 3.0).abs() < 1e-15);
        // beta* = 0 kills the multiplicand.
        assert_eq!(q_upper_bound(2.0, 5, 0.0), 1.0);
        // m = 2, beta* = 1, n = 2: (2(1 + 3/4) - 1) + 1 = 3.5.
        assert!((q_upper_bound(2.0, 2, 1.0) - 3.5).abs() < 1e-15);
    }

    #[test]
    fn singular_mass_range_values() {
        let (lo, hi) = singular_mass_range(2, false);
        assert!((lo - 10.0 / 11.0).abs() < 1e-15);
        assert_eq!(hi, 1.0);
        let (lo_h, _) = singular_mass_range(2, true);
        assert!((lo_h - 5.0 / 6.0).abs() < 1e-15);
        let (lo3, _) = singular_mass_range(3, false);
        assert!((lo3 - (16.0 + 192f64.sqrt()) / 32.0).abs() < 1e-15);
        assert!((lo3 - 0.9330127018922193).abs() < 1e-12);
    }

    #[test]
    fn derived_identities_hold_exactly() {
        for &(n, m, b) in &[
            (2usize, 1.0, 1.0),
            (2, 2.0, 1.0),
            (2, 0.95, 1.0),
            (3, 1.7, 0.3),
        ] {
            let d = exps(n, m, &[b]).derived();
            assert_eq!(d.m_i[0], d.alpha0[0] + 1.0);
            assert_eq!(d.theta_i[0], n as f64 * d.alpha0[0] + 2.0);
        }
    }

    #[test]
    fn classify_examples() {
        let r = classify_regime(&exps(2, 1.0, &[1.0]));
        assert_eq!(r.derived.regime, Regime::Nondegenerate);
        assert!(r
            .theorems
            .iter()
            .any(|t| t.theorem == "mass_nondegenerate" && t.applies[0]));

        let r = classify_regime(&exps(2, 2.0, &[1.0]));
        assert_eq!(r.derived.regime, Regime::Degenerate);
        assert!(r
            .theorems
            .iter()
            .any(|t| t.theorem == "mass_degenerate" && t.applies[0]));

        let r = classify_regime(&exps(2, 0.95, &[1.0]));
        assert_eq!(r.derived.regime, Regime::Singular);
        assert!((r.derived.m_i[0] - 0.95).abs() < 1e-15);
        assert!(r
            .theorems
            .iter()
            .any(|t| t.theorem == "mass_singular" && t.applies[0]));

        // Just below the n = 2 threshold 10/11 the singular statement drops out.
        let r = classify_regime(&exps(2, 0.90, &[1.0]));
        assert!(r
            .theorems
            .iter()
            .any(|t| t.theorem == "mass_singular" && !t.applies[0]));
    }

    #[test]
    fn compute_u_examples() {
        let (u, du) = compute_u(&CouplerSpec::sum(), &[0.2, 0.3]).unwrap();
        assert_eq!(u, 0.5);
        assert_eq!(du, vec![1.0, 1.0]);

        let (u, du) = compute_u(&CouplerSpec::euclidean_norm(), &[3.0, 4.0]).unwrap();
        assert_eq!(u, 5.0);
        assert!((du[0] - 0.6).abs() < 1e-15);
        assert!((du[1] - 0.8).abs() < 1e-15);

        for c in [
            CouplerSpec::sum(),
            CouplerSpec::euclidean_norm(),
            CouplerSpec::weighted_power(vec![1.0, 2.0], vec![1.0, 2.0], 1.0, 1.0),
        ] {
            let (u, _) = compute_u(&c, &[0.0, 0.0]).unwrap();
            assert_eq!(u, 0.0);
        }

        assert!(compute_u(&CouplerSpec::sum(), &[-0.1, 0.2]).is_err());
    }

    #[test]
    fn validator_identity_sum_passes() {
        let exp = exps(2, 2.0, &[1.0, 1.0]);
        let samples = generate_samples(7, 2000, 2, 2);
        let rep = validate_structure(
            &FluxLaw::identity(),
            &DriftLaw::none(),
            &CouplerSpec::sum(),
            &exp,
            &samples,
        )
        .unwrap();
        assert!(rep.passed(), "{}", rep.to_json());
        let a5 = rep.conditions.iter().find(|c| c.condition == "A5").unwrap();
        assert!((a5.tightest_constants[0].1 - 1.0).abs() < 1e-12);
        let a6 = rep.conditions.iter().find(|c| c.condition == "A6").unwrap();
        assert!((a6.tightest_constants[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(a6.tightest_constants[1].1, 0.0);
    }

    #[test]
    fn validator_flipped_flux_fails_a5() {
        let exp = exps(2, 2.0, &[1.0]);
        let flux = FluxLaw {
            kind: FluxKind::Custom(Arc::new(|p: &[f64], _z, _x, _t| {
                p.iter().map(|v| -v).collect()
            })),
            constants: StructureConstants::identity(),
        };
        let samples = generate_samples(3, 100, 2, 1);
        let rep = validate_structure(
            &flux,
            &DriftLaw::none(),
            &CouplerSpec::sum(),
            &exp,
            &samples,
        )
        .unwrap();
        let a5 = rep.conditions.iter().find(|c| c.condition == "A5").unwrap();
        assert_eq!(a5.status, ConditionStatus::Fail);
        // The recorded failure is the first sample with p != 0.
        let s = a5.failing_sample.as_ref().unwrap();
        assert!(s.p.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn validator_q_gate_rejects() {
        // q = 3 with m = 1, beta* = 1, n = 2: bound is 2.
        let mut exp = exps(2, 1.0, &[1.0]);
        exp.q = Some(3.0);
        let consts = StructureConstants::new(1.0, 1.0, 0.0, 1.0, 0.0, 1.0).unwrap();
        let drift = DriftLaw::power(1.0, 3.0, consts);
        let samples = generate_samples(1, 50, 2, 1);
        let err = validate_structure(
            &FluxLaw::identity(),
            &drift,
            &CouplerSpec::sum(),
            &exp,
            &samples,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Regime(_)), "{err}");
        // And q just above (n+2)/n also rejected.
        exp.q = Some(2.0 + 0.1);
        let err = validate_structure(
            &FluxLaw::identity(),
            &drift,
            &CouplerSpec::sum(),
            &exp,
            &samples,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Regime(_)));
    }

    #[test]
    fn with_drift_gates_range() {
        assert!(exps(2, 1.0, &[1.0]).with_drift(1.5).is_ok());
        assert!(exps(2, 1.0, &[1.0]).with_drift(2.1).is_err());
        assert!(exps(2, 1.0, &[1.0]).with_drift(1.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn homogeneity_sum_and_norm(
                u in proptest::collection::vec(0.0f64..10.0, 1..5),
                s in 0.0f64..100.0,
            ) {
                for c in [CouplerSpec::sum(), CouplerSpec::euclidean_norm()] {
                    let (u1, _) = compute_u(&c, &u).unwrap();
                    let scaled: Vec<f64> = u.iter().map(|v| s * v).collect();
                    let (u2, _) = compute_u(&c, &scaled).unwrap();
                    prop_assert!((u2 - s * u1).abs() <= 1e-12 * (1.0 + u2.abs().max((s * u1).abs())));
                }
            }

            #[test]
            fn monotonicity(
                u in proptest::collection::vec(0.0f64..10.0, 2..4),
                bump in proptest::collection::vec(0.0f64..5.0, 2..4),
            ) {
                let k = u.len().min(bump.len());
                let u = &u[..k];
                let v: Vec<f64> = u.iter().zip(&bump[..k]).map(|(a, b)| a + b).collect();
                for c in [
                    CouplerSpec::sum(),
                    CouplerSpec::euclidean_norm(),
                    CouplerSpec::weighted_power(vec![1.0; k], vec![1.5; k], 1.0, 1.0),
                ] {
                    let (ua, _) = compute_u(&c, u).unwrap();
                    let (ub, _) = compute_u(&c, &v).unwrap();
                    prop_assert!(ub >= ua - 1e-12 * (1.0 + ua.abs()));
                }
            }

            #[test]
            fn q_bound_increasing_in_beta(
                m in 0.5f64..4.0,
                n in 1usize..4,
                b1 in 0.0f64..3.0,
                delta in 0.01f64..2.0,
            ) {
                // Strictly increasing whenever the multiplicand is positive.
                prop_assume!(m * (1.0 + (1.0 + m) / (m * n as f64)) > 1.0);
                prop_assume!(m > critical_exponent(n));
                let lo = q_upper_bound(m, n, b1);
                let hi = q_upper_bound(m, n, b1 + delta);
                prop_assert!(hi > lo);
            }

            #[test]
            fn identity_sum_passes_random_sample_sets(seed in 0u64..5000) {
                let exp = Exponents::new(2, 2.0, vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
                let samples = generate_samples(seed, 64, 2, 2);
                let rep = validate_structure(
                    &FluxLaw::identity(),
                    &DriftLaw::none(),
                    &CouplerSpec::sum(),
                    &exp,
                    &samples,
                ).unwrap();
                prop_assert!(rep.passed());
            }

            #[test]
            fn derived_identities(n in 1usize..4, m in 0.1f64..5.0, b in 0.0f64..4.0) {
                let d = Exponents::new(n, m, vec![b], vec![1.0]).unwrap().derived();
                prop_assert_eq!(d.m_i[0], d.alpha0[0] + 1.0);
                prop_assert_eq!(d.theta_i[0], n as f64 * d.alpha0[0] + 2.0);
            }
        }
    }
}
