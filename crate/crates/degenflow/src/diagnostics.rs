//! Observables constrained by the estimates: mass series, sup bounds of the
//! controller U, truncation energies, integral and pointwise Harnack ratios,
//! and intrinsic-cylinder oscillation statistics.
//!
//! All constants gamma are *fitted*, never assumed: the estimates guarantee
//! a finite constant exists, so the diagnostics measure the realized ratio
//! and downstream checks test its stability under grid refinement.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{face_gradient, integrate, Region, ScalarField, StateVector};
use crate::model::{CouplerSpec, Exponents, StructureConstants};
use crate::solver::Trajectory;
use crate::util::linear_fit;

fn time_eps(traj: &Trajectory) -> f64 {
    let times = traj.times();
    let span = times.last().unwrap() - times[0];
    1e-9 * span.abs().max(1.0)
}

/// Snapshot indices with time in (s, t].
fn window(traj: &Trajectory, s: f64, t: f64) -> Vec<usize> {
    let eps = time_eps(traj);
    traj.snapshots
        .iter()
        .enumerate()
        .filter(|(_, snap)| snap.time > s + eps && snap.time <= t + eps)
        .map(|(i, _)| i)
        .collect()
}

/// The controller U evaluated cellwise (undershoot clamped to zero).
pub fn control_scalar_field(state: &StateVector, coupler: &CouplerSpec) -> ScalarField {
    let grid = state.grid();
    let k = state.k();
    let mut uk = vec![0.0; k];
    let mut out = ScalarField::zeros(grid);
    for c in 0..grid.cell_count() {
        for (i, f) in state.fields.iter().enumerate() {
            uk[i] = f.values[c].max(0.0);
        }
        out.values[c] = coupler.eval_clamped(&uk);
    }
    out
}

// ---------------------------------------------------------------------------
// Mass and sup series
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct MassSeries {
    pub component: usize,
    pub entries: Vec<(f64, f64)>,
    /// Max |mass(t) - mass(0)| / |mass(0)|, absolute when mass(0) = 0.
    pub max_drift: f64,
    pub relative: bool,
}

pub fn mass_series(traj: &Trajectory, component: usize) -> Result<MassSeries> {
    if component >= traj.k() {
        return Err(Error::Domain(format!("component {component} out of range")));
    }
    let entries: Vec<(f64, f64)> = traj
        .snapshots
        .iter()
        .map(|s| (s.time, integrate(&s.fields[component], &Region::All).value))
        .collect();
    let m0 = entries[0].1;
    let relative = m0 != 0.0;
    let max_drift = entries
        .iter()
        .map(|(_, m)| {
            if relative {
                ((m - m0) / m0).abs()
            } else {
                m.abs()
            }
        })
        .fold(0.0f64, f64::max);
    Ok(MassSeries {
        component,
        entries,
        max_drift,
        relative,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SupUSeries {
    pub entries: Vec<(f64, f64)>,
    /// Largest positive jump between consecutive entries; the discrete
    /// shadow of the uniform bound is that this stays at round-off level.
    pub max_increase: f64,
}

pub fn sup_u_series(traj: &Trajectory, coupler: &CouplerSpec) -> SupUSeries {
    let entries: Vec<(f64, f64)> = traj
        .snapshots
        .iter()
        .map(|s| {
            let u = control_scalar_field(s, coupler);
            (s.time, u.values.iter().cloned().fold(0.0f64, f64::max))
        })
        .collect();
    let max_increase = entries
        .windows(2)
        .map(|w| w[1].1 - w[0].1)
        .fold(0.0f64, f64::max);
    SupUSeries {
        entries,
        max_increase,
    }
}

impl SupUSeries {
    /// K_hat(t0) = max of sup U over snapshots with t >= t0.
    pub fn k_hat(&self, t0: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .entries
            .iter()
            .filter(|(t, _)| *t >= t0 * (1.0 - 1e-12))
            .map(|(_, v)| *v)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.into_iter().fold(0.0f64, f64::max))
        }
    }

    /// Fit K_hat(t0) ~ t0^{-alpha_hat} over the given onsets; returns
    /// (alpha_hat, the fitted points).
    pub fn fit_khat_rate(&self, t0s: &[f64]) -> Result<(f64, Vec<(f64, f64)>)> {
        let mut pts = Vec::new();
        for &t0 in t0s {
            let k = self
                .k_hat(t0)
                .ok_or_else(|| Error::Clipping(format!("no snapshots at or after t0 = {t0}")))?;
            if !(k > 0.0) {
                return Err(Error::Domain("sup U vanishes; no rate to fit".into()));
            }
            pts.push((t0, k));
        }
        let xs: Vec<f64> = pts.iter().map(|(t, _)| t.ln()).collect();
        let ys: Vec<f64> = pts.iter().map(|(_, k)| k.ln()).collect();
        let (slope, _) = linear_fit(&xs, &ys);
        Ok((-slope, pts))
    }
}

// ---------------------------------------------------------------------------
// Truncation energies
// ---------------------------------------------------------------------------

/// Energies of the truncations U_j = (U - L_j)_+ at the dyadic levels
/// L_j = K(1 - 2^{-j}) and onsets T_j = t0(1 - 2^{-(1+m)j}).
#[derive(Debug, Clone, Serialize)]
pub struct TruncationDiagnostics {
    pub big_k: f64,
    pub t0: f64,
    pub m: f64,
    pub levels: Vec<f64>,
    pub times: Vec<f64>,
    /// A_j = sup_{t >= T_j} int U_j^{1+m} dx + int_{T_j}^{end} int |grad U_j^m|^2.
    pub energies: Vec<f64>,
    pub sup_terms: Vec<f64>,
    pub grad_terms: Vec<f64>,
    /// Whether the snapshot spacing resolves the finest onset gap
    /// (interval <= t0 2^{-(1+m) jmax} / 4).
    pub resolution_ok: bool,
}

/// Squared-gradient integral of a cell field via face gradients: each face
/// contributes g^2 * cell volume; boundary faces follow the grid's bc.
fn grad_sq_integral(field: &ScalarField) -> f64 {
    let g = face_gradient(field);
    let vol = field.grid.cell_volume();
    let nx = field.grid.nx();
    let ny = field.grid.ny();
    let mut acc = 0.0;
    for j in 0..ny {
        for fi in 1..nx {
            let v = g.x[g.xi(fi, j)];
            acc += v * v;
        }
    }
    if field.grid.dims == 2 {
        for fj in 1..ny {
            for i in 0..nx {
                let v = g.y[g.yi(i, fj)];
                acc += v * v;
            }
        }
    }
    acc * vol
}

pub fn truncation_energy(
    traj: &Trajectory,
    coupler: &CouplerSpec,
    big_k: f64,
    t0: f64,
    jmax: usize,
    m: f64,
) -> Result<TruncationDiagnostics> {
    if !(big_k > 2.0) {
        return Err(Error::Domain(format!(
            "truncation scale K must exceed 2, got {big_k}"
        )));
    }
    let times = traj.times();
    let t_end = *times.last().unwrap();
    if t_end < t0 {
        return Err(Error::Clipping(format!(
            "trajectory ends at {t_end}, before t0 = {t0}"
        )));
    }

    let levels: Vec<f64> = (0..=jmax)
        .map(|j| big_k * (1.0 - 0.5f64.powi(j as i32)))
        .collect();
    let onsets: Vec<f64> = (0..=jmax)
        .map(|j| t0 * (1.0 - 0.5f64.powf((1.0 + m) * j as f64)))
        .collect();

    // Precompute U per snapshot.
    let u_fields: Vec<ScalarField> = traj
        .snapshots
        .iter()
        .map(|s| control_scalar_field(s, coupler))
        .collect();

    let eps = time_eps(traj);
    let mut energies = Vec::with_capacity(jmax + 1);
    let mut sup_terms = Vec::with_capacity(jmax + 1);
    let mut grad_terms = Vec::with_capacity(jmax + 1);
    for j in 0..=jmax {
        let level = levels[j];
        let onset = onsets[j];
        let idx: Vec<usize> = (0..times.len())
            .filter(|&i| times[i] >= onset - eps)
            .collect();
        let mut sup_term = 0.0f64;
        let mut grads = Vec::with_capacity(idx.len());
        for &i in &idx {
            let uj = ScalarField {
                grid: u_fields[i].grid.clone(),
                values: u_fields[i]
                    .values
                    .iter()
                    .map(|&u| (u - level).max(0.0))
                    .collect(),
            };
            let int_pow = integrate(
                &ScalarField {
                    grid: uj.grid.clone(),
                    values: uj.values.iter().map(|v| v.powf(1.0 + m)).collect(),
                },
                &Region::All,
            )
            .value;
            sup_term = sup_term.max(int_pow);
            let ujm = ScalarField {
                grid: uj.grid.clone(),
                values: uj.values.iter().map(|v| v.powf(m)).collect(),
            };
            grads.push(grad_sq_integral(&ujm));
        }
        // Trapezoid in time over the retained snapshots.
        let mut grad_term = 0.0;
        for (gi, w) in idx.windows(2).enumerate() {
            let dt = times[w[1]] - times[w[0]];
            grad_term += 0.5 * dt * (grads[gi] + grads[gi + 1]);
        }
        sup_terms.push(sup_term);
        grad_terms.push(grad_term);
        energies.push(sup_term + grad_term);
    }

    // Snapshot-resolution rule for the onset ladder.
    let fine_gap = t0 * 0.5f64.powf((1.0 + m) * jmax as f64) / 4.0;
    let mut max_gap = 0.0f64;
    for w in times.windows(2) {
        if w[0] <= t0 {
            max_gap = max_gap.max(w[1] - w[0]);
        }
    }
    let resolution_ok = max_gap <= fine_gap || times.len() <= 1;

    Ok(TruncationDiagnostics {
        big_k,
        t0,
        m,
        levels,
        times: onsets,
        energies,
        sup_terms,
        grad_terms,
        resolution_ok,
    })
}

// ---------------------------------------------------------------------------
// Harnack ratios
// ---------------------------------------------------------------------------

fn singular_exponent(exp: &Exponents, component: usize) -> Result<f64> {
    let beta = exp.beta[component];
    let denom = beta * (1.0 - exp.m);
    if !(denom > 0.0) {
        return Err(Error::Regime(format!(
            "need beta_i (1 - m) > 0 (singular regime); got beta = {beta}, m = {}",
            exp.m
        )));
    }
    Ok(1.0 / denom)
}

#[derive(Debug, Clone, Serialize)]
pub struct HarnackRecord {
    pub component: usize,
    pub center: Vec<f64>,
    pub rho: f64,
    pub s: f64,
    pub t: f64,
    pub theta_i: f64,
    /// sup over the window of the mass in B_rho.
    pub lhs: f64,
    /// inf over the window of the mass in B_{2 rho}.
    pub rhs_inf: f64,
    /// (sqrt(1+C4) + (C4 + sqrt(C2+C4)) rho^e) ((t-s)/rho^{theta_i})^e.
    pub rhs_tail: f64,
    /// Minimal gamma with lhs <= gamma (rhs_inf + rhs_tail).
    pub gamma_fit: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn harnack_ratio(
    traj: &Trajectory,
    component: usize,
    center: &[f64],
    rho: f64,
    s: f64,
    t: f64,
    exp: &Exponents,
    constants: &StructureConstants,
) -> Result<HarnackRecord> {
    let derived = exp.derived();
    let theta = derived.theta_i[component];
    if !(exp.m < 1.0) {
        return Err(Error::Regime(format!(
            "integral Harnack ratio needs m < 1; got m = {}",
            exp.m
        )));
    }
    if !(theta > 0.0) {
        return Err(Error::Regime(format!("theta_i = {theta} must be positive")));
    }
    let e = singular_exponent(exp, component)?;
    if !(s < t) {
        return Err(Error::Domain("need s < t".into()));
    }
    let grid = traj.grid();
    let outer = crate::grid::Cylinder::new(center.to_vec(), t, 2.0 * rho, t - s)?;
    if !outer.ball_inside(grid) {
        return Err(Error::Clipping(format!(
            "B_2rho({center:?}) with rho = {rho} exits the domain"
        )));
    }
    // The sup/inf quantify over all of (s, t]; a window reaching before the
    // first snapshot would silently shrink the inf side.
    let eps = time_eps(traj);
    if s < traj.times()[0] - eps {
        return Err(Error::Clipping(format!(
            "window ({s}, {t}] starts before the trajectory ({})",
            traj.times()[0]
        )));
    }
    let idx = window(traj, s, t);
    if idx.is_empty() {
        return Err(Error::Clipping(format!(
            "no snapshots in ({s}, {t}]; trajectory covers {:?}",
            (traj.times()[0], *traj.times().last().unwrap())
        )));
    }
    let inner_ball = Region::Ball {
        center: center.to_vec(),
        radius: rho,
    };
    let outer_ball = Region::Ball {
        center: center.to_vec(),
        radius: 2.0 * rho,
    };
    let mut lhs = f64::NEG_INFINITY;
    let mut rhs_inf = f64::INFINITY;
    for &i in &idx {
        let f = &traj.snapshots[i].fields[component];
        lhs = lhs.max(integrate(f, &inner_ball).value);
        rhs_inf = rhs_inf.min(integrate(f, &outer_ball).value);
    }
    let coeff = (1.0 + constants.c4).sqrt()
        + (constants.c4 + (constants.c2 + constants.c4).sqrt()) * rho.powf(e);
    let rhs_tail = coeff * ((t - s) / rho.powf(theta)).powf(e);
    let gamma_fit = if lhs <= 0.0 {
        0.0
    } else {
        lhs / (rhs_inf + rhs_tail)
    };
    Ok(HarnackRecord {
        component,
        center: center.to_vec(),
        rho,
        s,
        t,
        theta_i: theta,
        lhs,
        rhs_inf,
        rhs_tail,
        gamma_fit,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PointwiseHarnackRecord {
    pub component: usize,
    pub center: Vec<f64>,
    pub rho: f64,
    pub s: f64,
    pub t: f64,
    pub theta_i: f64,
    /// sup of u^i over B_rho x (s, t].
    pub sup_val: f64,
    /// inf over (2s-t, t] of the mass in B_{4 rho}.
    pub inf_mass: f64,
    pub bracket: f64,
    pub gamma_fit: f64,
}

/// L-infinity vs L1 smoothing ratio: sup of u^i over B_{rho/2} x (s, t]
/// against the space-time mean of u^i over B_rho x (2s-t, t], with the
/// additive ((t-s)/rho^2)^{1/(beta_i(1-m))} tail outside the fitted
/// constant.
#[derive(Debug, Clone, Serialize)]
pub struct SmoothingRecord {
    pub component: usize,
    pub center: Vec<f64>,
    pub rho: f64,
    pub s: f64,
    pub t: f64,
    pub theta_i: f64,
    pub sup_val: f64,
    /// (1 / (rho^n (t-s))) int int u over B_rho x (2s-t, t].
    pub spacetime_mean: f64,
    pub tail: f64,
    /// Minimal gamma with sup <= gamma * term + tail.
    pub gamma_fit: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn smoothing_ratio(
    traj: &Trajectory,
    component: usize,
    center: &[f64],
    rho: f64,
    s: f64,
    t: f64,
    exp: &Exponents,
    constants: &StructureConstants,
) -> Result<SmoothingRecord> {
    let derived = exp.derived();
    let theta = derived.theta_i[component];
    if !(exp.m < 1.0) || !(theta > 0.0) {
        return Err(Error::Regime(format!(
            "smoothing ratio needs m < 1 and theta_i > 0; got m = {}, theta = {theta}",
            exp.m
        )));
    }
    let e = singular_exponent(exp, component)?;
    if !(s < t) {
        return Err(Error::Domain("need s < t".into()));
    }
    let grid = traj.grid();
    let outer = crate::grid::Cylinder::new(center.to_vec(), t, 2.0 * rho, 2.0 * (t - s))?;
    if !outer.ball_inside(grid) {
        return Err(Error::Clipping(format!(
            "B_2rho({center:?}) with rho = {rho} exits the domain"
        )));
    }
    let eps = time_eps(traj);
    let t_first = traj.times()[0];
    if 2.0 * s - t < t_first - eps {
        return Err(Error::Clipping(format!(
            "window (2s - t, t] = ({}, {t}] starts before the trajectory ({t_first})",
            2.0 * s - t
        )));
    }
    let sup_idx = window(traj, s, t);
    let mean_idx = window(traj, 2.0 * s - t, t);
    if sup_idx.is_empty() || mean_idx.len() < 2 {
        return Err(Error::Clipping(
            "not enough snapshots in the windows".into(),
        ));
    }
    let half_ball = Region::Ball {
        center: center.to_vec(),
        radius: 0.5 * rho,
    };
    let ball = Region::Ball {
        center: center.to_vec(),
        radius: rho,
    };
    let mut sup_val = 0.0f64;
    for &i in &sup_idx {
        let (_, hi) = crate::grid::extrema(&traj.snapshots[i].fields[component], &half_ball)?;
        sup_val = sup_val.max(hi);
    }
    // Trapezoid quadrature of the space integral over the doubled window.
    let times = traj.times();
    let masses: Vec<f64> = mean_idx
        .iter()
        .map(|&i| integrate(&traj.snapshots[i].fields[component], &ball).value)
        .collect();
    let mut st_integral = 0.0;
    for (gi, w) in mean_idx.windows(2).enumerate() {
        let dt = times[w[1]] - times[w[0]];
        st_integral += 0.5 * dt * (masses[gi] + masses[gi + 1]);
    }
    let nf = exp.n as f64;
    let dt = t - s;
    let spacetime_mean = st_integral / (rho.powf(nf) * dt);
    let term = (2.0 + (constants.c2 + constants.c4) * rho * rho).powf((nf + 2.0) / theta)
        * (rho * rho / dt).powf(nf / theta)
        * (1.0 + rho * rho / dt).powf((nf + 2.0) / theta)
        * spacetime_mean.powf(2.0 / theta);
    let tail = (dt / (rho * rho)).powf(e);
    let gamma_fit = if sup_val <= tail || term <= 0.0 {
        0.0
    } else {
        (sup_val - tail) / term
    };
    Ok(SmoothingRecord {
        component,
        center: center.to_vec(),
        rho,
        s,
        t,
        theta_i: theta,
        sup_val,
        spacetime_mean,
        tail,
        gamma_fit,
    })
}

/// Both sides of the sup estimate over B_rho x (s, t] with the fitted
/// constant: the right-hand side combines the inf of the mass in B_{4 rho}
/// over the doubled window with a pure (t-s)/rho^2 tail.
#[allow(clippy::too_many_arguments)]
pub fn pointwise_harnack(
    traj: &Trajectory,
    component: usize,
    center: &[f64],
    rho: f64,
    s: f64,
    t: f64,
    exp: &Exponents,
    constants: &StructureConstants,
) -> Result<PointwiseHarnackRecord> {
    let derived = exp.derived();
    let theta = derived.theta_i[component];
    if !(exp.m < 1.0) || !(theta > 0.0) {
        return Err(Error::Regime(format!(
            "pointwise Harnack needs m < 1 and theta_i > 0; got m = {}, theta = {theta}",
            exp.m
        )));
    }
    let e = singular_exponent(exp, component)?;
    if !(s < t) {
        return Err(Error::Domain("need s < t".into()));
    }
    let grid = traj.grid();
    let outer = crate::grid::Cylinder::new(center.to_vec(), t, 4.0 * rho, 2.0 * (t - s))?;
    if !outer.ball_inside(grid) {
        return Err(Error::Clipping(format!(
            "B_4rho({center:?}) with rho = {rho} exits the domain"
        )));
    }
    let eps = time_eps(traj);
    let t_first = traj.times()[0];
    if 2.0 * s - t < t_first - eps {
        return Err(Error::Clipping(format!(
            "window (2s - t, t] = ({}, {t}] starts before the trajectory ({t_first})",
            2.0 * s - t
        )));
    }
    let sup_idx = window(traj, s, t);
    let inf_idx = window(traj, 2.0 * s - t, t);
    if sup_idx.is_empty() || inf_idx.is_empty() {
        return Err(Error::Clipping(
            "no snapshots in the requested windows".into(),
        ));
    }
    let ball = Region::Ball {
        center: center.to_vec(),
        radius: rho,
    };
    let big_ball = Region::Ball {
        center: center.to_vec(),
        radius: 4.0 * rho,
    };
    let mut sup_val = 0.0f64;
    for &i in &sup_idx {
        let f = &traj.snapshots[i].fields[component];
        let (_, hi) = crate::grid::extrema(f, &ball)?;
        sup_val = sup_val.max(hi);
    }
    let mut inf_mass = f64::INFINITY;
    for &i in &inf_idx {
        let f = &traj.snapshots[i].fields[component];
        inf_mass = inf_mass.min(integrate(f, &big_ball).value);
    }
    let nf = exp.n as f64;
    let dt = t - s;
    let base = (2.0 + (constants.c2 + constants.c4) * rho * rho).powf((nf + 2.0) / theta)
        * (dt + rho * rho).powf((nf + 2.0) / theta);
    let term1 = base / dt.powf(2.0 * (nf + 1.0) / theta) * inf_mass.powf(2.0 / theta);
    let coeff = (1.0 + constants.c4).sqrt()
        + (constants.c4 + (constants.c2 + constants.c4).sqrt()) * rho.powf(e);
    let term2 = (1.0 + base / dt.powf((nf + 2.0) / theta) * coeff.powf(2.0 / theta))
        * (dt / (rho * rho)).powf(e);
    let bracket = term1 + term2;
    let gamma_fit = if sup_val <= 0.0 {
        0.0
    } else {
        sup_val / bracket
    };
    Ok(PointwiseHarnackRecord {
        component,
        center: center.to_vec(),
        rho,
        s,
        t,
        theta_i: theta,
        sup_val,
        inf_mass,
        bracket,
        gamma_fit,
    })
}

// ---------------------------------------------------------------------------
// Oscillation probes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct OscillationRecord {
    pub component: usize,
    pub center: Vec<f64>,
    pub t0: f64,
    pub radius: f64,
    pub epsilon: f64,
    /// Oscillation of every component over the parent cylinder.
    pub omega: Vec<f64>,
    pub omega_m: f64,
    pub mu_minus: f64,
    pub theta: f64,
    pub alpha0: f64,
    /// Time depth theta^{-alpha0} R^2 of the intrinsic cylinder.
    pub depth: f64,
    /// Whether theta^{alpha0} > R^epsilon (intrinsic inside the parent).
    pub scaling_ok: bool,
    /// Oscillation of the probed component over the intrinsic cylinder.
    pub osc: f64,
    /// |{u^i < mu^- + omega_m / 2}| / |Q| over the intrinsic cylinder.
    pub lower_fraction: f64,
    /// Per level s = 1..s_max: the max over time slices of
    /// |{u^i > mu^- + (1 - 2^{-s}) omega_m}| / |B_R|.
    pub upper_level_max: Vec<f64>,
    pub upper_level_fractions: Vec<Vec<f64>>,
    pub degenerate: bool,
}

fn osc_over(
    traj: &Trajectory,
    component: usize,
    ball: &Region,
    idx: &[usize],
) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &i in idx {
        let (a, b) = crate::grid::extrema(&traj.snapshots[i].fields[component], ball)?;
        lo = lo.min(a);
        hi = hi.max(b);
    }
    Ok((lo, hi))
}

#[allow(clippy::too_many_arguments)]
pub fn oscillation_probe(
    traj: &Trajectory,
    component: usize,
    center: &[f64],
    t0: f64,
    radius: f64,
    exp: &Exponents,
    epsilon: f64,
    s_max: usize,
) -> Result<OscillationRecord> {
    let derived = exp.derived();
    let alpha0 = derived.alpha0[component];
    let ball = Region::Ball {
        center: center.to_vec(),
        radius,
    };
    let parent_depth = radius.powf(2.0 - epsilon);
    let t_first = traj.times()[0];
    let eps = time_eps(traj);
    if t0 - parent_depth < t_first - eps {
        return Err(Error::Clipping(format!(
            "parent cylinder needs times down to {}, trajectory starts at {t_first}",
            t0 - parent_depth
        )));
    }
    let parent_idx = window(traj, t0 - parent_depth, t0);
    if parent_idx.is_empty() {
        return Err(Error::Clipping(
            "no snapshots in the parent cylinder".into(),
        ));
    }

    let mut omega = Vec::with_capacity(traj.k());
    let mut mu_minus_i = 0.0;
    for ci in 0..traj.k() {
        let (lo, hi) = osc_over(traj, ci, &ball, &parent_idx)?;
        if ci == component {
            mu_minus_i = lo;
        }
        omega.push(hi - lo);
    }
    let omega_m = omega.iter().cloned().fold(0.0f64, f64::max);

    if omega_m <= 0.0 {
        // Exact local constancy: flagged, not an error.
        return Ok(OscillationRecord {
            component,
            center: center.to_vec(),
            t0,
            radius,
            epsilon,
            omega,
            omega_m: 0.0,
            mu_minus: mu_minus_i,
            theta: 0.0,
            alpha0,
            depth: 0.0,
            scaling_ok: false,
            osc: 0.0,
            lower_fraction: 1.0,
            upper_level_max: vec![0.0; s_max],
            upper_level_fractions: vec![Vec::new(); s_max],
            degenerate: true,
        });
    }

    let theta = omega_m / 4.0;
    let depth = theta.powf(-alpha0) * radius * radius;
    let scaling_ok = theta.powf(alpha0) > radius.powf(epsilon);
    if t0 - depth < t_first - eps {
        return Err(Error::Clipping(format!(
            "intrinsic cylinder needs times down to {}, trajectory starts at {t_first}",
            t0 - depth
        )));
    }
    let idx = window(traj, t0 - depth, t0);
    if idx.is_empty() {
        return Err(Error::Clipping(
            "no snapshots in the intrinsic cylinder".into(),
        ));
    }

    let (lo, hi) = osc_over(traj, component, &ball, &idx)?;
    let osc = hi - lo;

    // Measure-fraction statistics over cell centers in the ball.
    let grid = traj.grid();
    let mut ball_cells = Vec::new();
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let c = grid.center(i, j);
            if ball.contains(&c[..grid.dims]) {
                ball_cells.push(grid.idx(i, j));
            }
        }
    }
    let lower_threshold = mu_minus_i + omega_m / 2.0;
    let mut lower_count = 0usize;
    let mut upper_fracs: Vec<Vec<f64>> = vec![Vec::with_capacity(idx.len()); s_max];
    for &i in &idx {
        let f = &traj.snapshots[i].fields[component];
        let mut slice_counts = vec![0usize; s_max];
        for &c in &ball_cells {
            let v = f.values[c];
            if v < lower_threshold {
                lower_count += 1;
            }
            for s in 1..=s_max {
                let thr = mu_minus_i + (1.0 - 0.5f64.powi(s as i32)) * omega_m;
                if v > thr {
                    slice_counts[s - 1] += 1;
                }
            }
        }
        for s in 0..s_max {
            upper_fracs[s].push(slice_counts[s] as f64 / ball_cells.len() as f64);
        }
    }
    let lower_fraction = lower_count as f64 / (ball_cells.len() * idx.len()) as f64;
    let upper_level_max = upper_fracs
        .iter()
        .map(|v| v.iter().cloned().fold(0.0f64, f64::max))
        .collect();

    Ok(OscillationRecord {
        component,
        center: center.to_vec(),
        t0,
        radius,
        epsilon,
        omega,
        omega_m,
        mu_minus: mu_minus_i,
        theta,
        alpha0,
        depth,
        scaling_ok,
        osc,
        lower_fraction,
        upper_level_max,
        upper_level_fractions: upper_fracs,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayEntry {
    pub radius: f64,
    /// Max-component oscillation over this level's cylinder.
    pub omega_m: f64,
    /// Oscillation of the probed component alone.
    pub omega_i: f64,
    pub depth: f64,
    /// Depth was limited by nesting or the caller's budget.
    pub clamped: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct OscillationDecay {
    pub component: usize,
    pub center: Vec<f64>,
    pub t0: f64,
    pub entries: Vec<DecayEntry>,
    /// sigma_n = omega_{n+1} / omega_n of the max-component oscillation.
    pub sigmas: Vec<f64>,
    pub max_sigma: f64,
    /// Sequence stopped early because an oscillation vanished exactly.
    pub truncated_exact: bool,
}

/// Measure the oscillation contraction over a ladder of intrinsically
/// scaled cylinders: radii halve, each cylinder's time depth is
/// theta_n^{-alpha0} R_{n+1}^2 with theta_n from the previous level's
/// oscillation, capped to nest inside the previous cylinder (the estimates'
/// own target cylinders carry an extra shrinking factor, so nesting is the
/// faithful geometry) and optionally by `max_depth`.
#[allow(clippy::too_many_arguments)]
pub fn oscillation_decay(
    traj: &Trajectory,
    component: usize,
    center: &[f64],
    t0: f64,
    r0: f64,
    levels: usize,
    exp: &Exponents,
    epsilon: f64,
    max_depth: Option<f64>,
) -> Result<OscillationDecay> {
    let derived = exp.derived();
    let alpha0 = derived.alpha0[component];
    let t_first = traj.times()[0];
    let eps = time_eps(traj);
    let budget = t0 - t_first;
    if budget <= 0.0 {
        return Err(Error::Clipping("probe time precedes the trajectory".into()));
    }

    // Seed theta from the parent cylinder Q(R0, R0^{2-eps}).
    let parent_depth = r0.powf(2.0 - epsilon).min(budget);
    let parent_idx = window(traj, t0 - parent_depth, t0);
    if parent_idx.is_empty() {
        return Err(Error::Clipping(
            "no snapshots in the parent cylinder".into(),
        ));
    }
    let ball0 = Region::Ball {
        center: center.to_vec(),
        radius: r0,
    };
    let mut omega_prev = 0.0f64;
    for ci in 0..traj.k() {
        let (lo, hi) = osc_over(traj, ci, &ball0, &parent_idx)?;
        omega_prev = omega_prev.max(hi - lo);
    }

    let mut entries: Vec<DecayEntry> = Vec::new();
    let mut truncated_exact = false;
    let mut prev_depth = f64::INFINITY;
    for level in 0..=levels {
        if omega_prev <= 0.0 {
            truncated_exact = true;
            break;
        }
        let r = r0 / 2f64.powi(level as i32);
        let theta = omega_prev / 4.0;
        let ideal = theta.powf(-alpha0) * r * r;
        let mut depth = ideal.min(prev_depth);
        let mut clamped = depth < ideal;
        if let Some(cap) = max_depth {
            if depth > cap {
                depth = cap;
                clamped = true;
            }
        }
        if t0 - depth < t_first - eps {
            return Err(Error::Clipping(format!(
                "level {level} cylinder needs times down to {}, trajectory starts at {t_first}; \
                 shrink r0 or pass a depth budget",
                t0 - depth
            )));
        }
        let idx = window(traj, t0 - depth, t0);
        if idx.is_empty() {
            return Err(Error::Clipping(format!("no snapshots at level {level}")));
        }
        let ball = Region::Ball {
            center: center.to_vec(),
            radius: r,
        };
        let mut omega_m = 0.0f64;
        let mut omega_i = 0.0f64;
        for ci in 0..traj.k() {
            let (lo, hi) = osc_over(traj, ci, &ball, &idx)?;
            if ci == component {
                omega_i = hi - lo;
            }
            omega_m = omega_m.max(hi - lo);
        }
        entries.push(DecayEntry {
            radius: r,
            omega_m,
            omega_i,
            depth,
            clamped,
        });
        omega_prev = omega_m;
        prev_depth = depth;
    }

    let sigmas: Vec<f64> = entries
        .windows(2)
        .map(|w| {
            if w[0].omega_m > 0.0 {
                w[1].omega_m / w[0].omega_m
            } else {
                0.0
            }
        })
        .collect();
    let max_sigma = sigmas.iter().cloned().fold(0.0f64, f64::max);
    Ok(OscillationDecay {
        component,
        center: center.to_vec(),
        t0,
        entries,
        sigmas,
        max_sigma,
        truncated_exact,
    })
}

// ---------------------------------------------------------------------------
// Weighted gradient functional (optional diagnostic)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct WeightedGradientRecord {
    pub component: usize,
    pub alpha: f64,
    pub value: f64,
}

/// Admissible auxiliary exponent interval (lower, 0) for the weighted
/// gradient functional in the singular regime.
pub fn weighted_alpha_interval(exp: &Exponents, component: usize) -> Result<(f64, f64)> {
    let derived = exp.derived();
    let mi = derived.m_i[component];
    if !(exp.m < 1.0 && mi < 1.0) {
        return Err(Error::Regime(
            "weighted gradient functional applies in the singular regime".into(),
        ));
    }
    let lower = (-1.0f64).max(-mi).max(mi - 1.0);
    Ok((lower, 0.0))
}

/// Space-time integral of U^{m-1} (u^i)^{alpha-1} |grad u^i|^2 over
/// B_rho(center) x (s, t], with alpha defaulting to the midpoint of its
/// admissible interval. Vacuum cells contribute only where the gradient
/// is nonzero.
#[allow(clippy::too_many_arguments)]
pub fn weighted_gradient_energy(
    traj: &Trajectory,
    component: usize,
    center: &[f64],
    rho: f64,
    s: f64,
    t: f64,
    exp: &Exponents,
    coupler: &CouplerSpec,
    alpha: Option<f64>,
) -> Result<WeightedGradientRecord> {
    let (lower, upper) = weighted_alpha_interval(exp, component)?;
    let alpha = alpha.unwrap_or(0.5 * (lower + upper));
    if !(alpha > lower && alpha < upper) {
        return Err(Error::Domain(format!(
            "alpha = {alpha} outside the admissible interval ({lower}, {upper})"
        )));
    }
    let idx = window(traj, s, t);
    if idx.len() < 2 {
        return Err(Error::Clipping(
            "need at least two snapshots in (s, t]".into(),
        ));
    }
    let grid = traj.grid();
    let ball = Region::Ball {
        center: center.to_vec(),
        radius: rho,
    };
    let m = exp.m;
    let mut rates = Vec::with_capacity(idx.len());
    for &i in &idx {
        let snap = &traj.snapshots[i];
        let u_ctrl = control_scalar_field(snap, coupler);
        let f = &snap.fields[component];
        let g = face_gradient(f);
        let mut acc = 0.0;
        for j in 0..grid.ny() {
            for ii in 0..grid.nx() {
                let c = grid.center(ii, j);
                if !ball.contains(&c[..grid.dims]) {
                    continue;
                }
                let ci = grid.idx(ii, j);
                let gx = 0.5 * (g.x[g.xi(ii, j)] + g.x[g.xi(ii + 1, j)]);
                let gy = if grid.dims == 2 {
                    0.5 * (g.y[g.yi(ii, j)] + g.y[g.yi(ii, j + 1)])
                } else {
                    0.0
                };
                let g2 = gx * gx + gy * gy;
                if g2 == 0.0 {
                    continue;
                }
                let u = f.values[ci].max(f64::MIN_POSITIVE);
                let uc = u_ctrl.values[ci].max(f64::MIN_POSITIVE);
                acc += uc.powf(m - 1.0) * u.powf(alpha - 1.0) * g2;
            }
        }
        rates.push(acc * grid.cell_volume());
    }
    let mut value = 0.0;
    for (w, r) in idx.windows(2).zip(rates.windows(2)) {
        let dt = traj.times()[w[1]] - traj.times()[w[0]];
        value += 0.5 * dt * (r[0] + r[1]);
    }
    Ok(WeightedGradientRecord {
        component,
        alpha,
        value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoundaryCondition, Grid};
    use crate::solver::TrajectorySource;

    fn constant_traj(c: f64, k: usize, times: &[f64]) -> Trajectory {
        let g = Grid::line(-1.0, 1.0, 64, BoundaryCondition::ZeroFlux).unwrap();
        let snaps = times
            .iter()
            .map(|&t| {
                let fields = (0..k).map(|_| ScalarField::from_fn(&g, |_| c)).collect();
                StateVector::new(fields, t).unwrap()
            })
            .collect();
        Trajectory::from_snapshots(snaps, TrajectorySource::Oracle).unwrap()
    }

    fn constant_traj_2d(c: f64, times: &[f64]) -> Trajectory {
        let g = Grid::square(-1.0, 1.0, 48, BoundaryCondition::ZeroFlux).unwrap();
        let snaps = times
            .iter()
            .map(|&t| StateVector::new(vec![ScalarField::from_fn(&g, |_| c)], t).unwrap())
            .collect();
        Trajectory::from_snapshots(snaps, TrajectorySource::Oracle).unwrap()
    }

    #[test]
    fn mass_series_zero_state() {
        let traj = constant_traj(0.0, 1, &[0.0, 0.1, 0.2]);
        let ms = mass_series(&traj, 0).unwrap();
        assert!(ms.entries.iter().all(|(_, m)| *m == 0.0));
        assert_eq!(ms.max_drift, 0.0);
        assert!(!ms.relative);
    }

    #[test]
    fn sup_u_constant_state() {
        let traj = constant_traj(0.3, 2, &[0.0, 0.1, 0.2]);
        let s = sup_u_series(&traj, &CouplerSpec::sum());
        for (_, v) in &s.entries {
            assert!((v - 0.6).abs() < 1e-15);
        }
        assert_eq!(s.max_increase, 0.0);
        assert!((s.k_hat(0.05).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn khat_rate_on_oracle() {
        let p = crate::oracles::BarenblattParams::new(2.0, 2, 1.0).unwrap();
        let g = Grid::square(-2.0, 2.0, 96, BoundaryCondition::ZeroFlux).unwrap();
        let times: Vec<f64> = (1..=20).map(|i| 0.005 * i as f64).collect();
        let traj = crate::oracles::barenblatt_trajectory(&g, &p, &times).unwrap();
        let s = sup_u_series(&traj, &CouplerSpec::sum());
        let (alpha_hat, _) = s.fit_khat_rate(&[0.01, 0.02, 0.04, 0.08]).unwrap();
        assert!(
            (alpha_hat - p.alpha).abs() < 0.05,
            "alpha_hat {alpha_hat} vs {}",
            p.alpha
        );
    }

    #[test]
    fn truncation_zero_above_sup() {
        // K chosen with L_1 = K/2 >= sup U: every truncation above level 1
        // is empty, so the energies vanish exactly.
        let traj = constant_traj(1.2, 1, &[0.0, 0.05, 0.1, 0.15, 0.2]);
        let d = truncation_energy(&traj, &CouplerSpec::sum(), 2.4, 0.02, 4, 2.0).unwrap();
        for j in 1..=4 {
            assert_eq!(d.energies[j], 0.0, "A_{j}");
        }
    }

    #[test]
    fn truncation_constant_straddle_matches_hand_value() {
        // U = 1.6 with K = 3: L_1 = 1.5 < 1.6 < L_2 = 2.25.
        // Gradient term vanishes; A_1 = (1.6 - 1.5)^{1+m} |domain|.
        let m = 2.0;
        let traj = constant_traj(1.6, 1, &[0.0, 0.05, 0.1, 0.15, 0.2]);
        let d = truncation_energy(&traj, &CouplerSpec::sum(), 3.0, 0.02, 3, m).unwrap();
        let hand = 0.1f64.powf(1.0 + m) * 2.0;
        assert!(
            ((d.energies[1] - hand) / hand).abs() < 1e-10,
            "A_1 = {}, hand = {hand}",
            d.energies[1]
        );
        assert_eq!(d.energies[2], 0.0);
        // Levels and onsets follow the dyadic ladders.
        assert_eq!(d.levels[0], 0.0);
        assert!((d.levels[1] - 1.5).abs() < 1e-15);
        assert!((d.times[1] - 0.02 * (1.0 - 0.5f64.powf(3.0))).abs() < 1e-15);
    }

    #[test]
    fn truncation_requires_k_above_two() {
        let traj = constant_traj(0.5, 1, &[0.0, 0.1]);
        assert!(truncation_energy(&traj, &CouplerSpec::sum(), 1.5, 0.05, 3, 2.0).is_err());
    }

    #[test]
    fn truncation_monotone_for_oracle() {
        let p = crate::oracles::BarenblattParams::new(2.0, 1, 1.0).unwrap();
        let g = Grid::line(-3.0, 3.0, 256, BoundaryCondition::ZeroFlux).unwrap();
        let times: Vec<f64> = (1..=30).map(|i| 0.01 * i as f64).collect();
        let traj = crate::oracles::barenblatt_trajectory(&g, &p, &times).unwrap();
        let sup0 = p.sup_value(0.01);
        let d = truncation_energy(
            &traj,
            &CouplerSpec::sum(),
            (2.2f64).max(0.9 * sup0),
            0.05,
            5,
            2.0,
        )
        .unwrap();
        for w in d.energies.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "A_j not monotone: {w:?}");
        }
    }

    fn singular_exp() -> Exponents {
        Exponents::new(2, 0.95, vec![1.0], vec![1.0]).unwrap()
    }

    #[test]
    fn harnack_constant_state() {
        let traj = constant_traj_2d(0.8, &[0.0, 0.02, 0.04, 0.06]);
        let r = harnack_ratio(
            &traj,
            0,
            &[0.0, 0.0],
            0.2,
            0.01,
            0.05,
            &singular_exp(),
            &StructureConstants::identity(),
        )
        .unwrap();
        // lhs/rhs is the discrete ball-volume ratio, roughly 2^{-n}.
        assert!(r.gamma_fit > 0.0 && r.gamma_fit < 0.3, "{}", r.gamma_fit);
        assert!((r.theta_i - 1.9).abs() < 1e-12);
    }

    #[test]
    fn harnack_zero_state() {
        let traj = constant_traj_2d(0.0, &[0.0, 0.02, 0.04]);
        let r = harnack_ratio(
            &traj,
            0,
            &[0.0, 0.0],
            0.2,
            0.0,
            0.04,
            &singular_exp(),
            &StructureConstants::identity(),
        )
        .unwrap();
        assert_eq!(r.gamma_fit, 0.0);
        assert_eq!(r.lhs, 0.0);
    }

    #[test]
    fn harnack_rejects_degenerate_regime() {
        let traj = constant_traj_2d(0.5, &[0.0, 0.02]);
        let exp = Exponents::new(2, 2.0, vec![1.0], vec![1.0]).unwrap();
        assert!(harnack_ratio(
            &traj,
            0,
            &[0.0, 0.0],
            0.2,
            0.0,
            0.02,
            &exp,
            &StructureConstants::identity()
        )
        .is_err());
    }

    #[test]
    fn harnack_rejects_escaping_cylinder() {
        let traj = constant_traj_2d(0.5, &[0.0, 0.02]);
        assert!(matches!(
            harnack_ratio(
                &traj,
                0,
                &[0.9, 0.0],
                0.2,
                0.0,
                0.02,
                &singular_exp(),
                &StructureConstants::identity()
            ),
            Err(Error::Clipping(_))
        ));
    }

    #[test]
    fn harnack_gamma_invariant_under_equation_scaling() {
        // With a 1-homogeneous flux, no drift and C2 = C4 = 0, scaling the
        // solution by lambda and time by lambda^{beta(1-m)} leaves gamma
        // unchanged: lhs, rhs and tail all scale linearly.
        let g = Grid::square(-1.0, 1.0, 48, BoundaryCondition::ZeroFlux).unwrap();
        let exp = singular_exp();
        let consts = StructureConstants::identity();
        let base_times: Vec<f64> = (0..=8).map(|i| 0.005 * i as f64).collect();
        let profile = |x: &[f64], t: f64| {
            0.4 + 0.3 * (1.0 + t).recip() * (-(x[0] * x[0] + x[1] * x[1]) / 0.2).exp()
        };
        let make = |lambda: f64| {
            let factor = lambda.powf(exp.beta[0] * (1.0 - exp.m));
            let snaps = base_times
                .iter()
                .map(|&t| {
                    let f = ScalarField::from_fn(&g, |x| lambda * profile(x, t));
                    StateVector::new(vec![f], factor * t).unwrap()
                })
                .collect();
            (
                Trajectory::from_snapshots(snaps, crate::solver::TrajectorySource::Oracle).unwrap(),
                factor,
            )
        };
        let (base, _) = make(1.0);
        let r0 = harnack_ratio(&base, 0, &[0.0, 0.0], 0.2, 0.005, 0.035, &exp, &consts).unwrap();
        for lambda in [0.5, 3.7] {
            let (scaled, factor) = make(lambda);
            let r = harnack_ratio(
                &scaled,
                0,
                &[0.0, 0.0],
                0.2,
                factor * 0.005,
                factor * 0.035,
                &exp,
                &consts,
            )
            .unwrap();
            let rel = ((r.gamma_fit - r0.gamma_fit) / r0.gamma_fit).abs();
            assert!(
                rel <= 1e-12,
                "lambda {lambda}: gamma {} vs {}",
                r.gamma_fit,
                r0.gamma_fit
            );
        }
    }

    #[test]
    fn pointwise_harnack_constant_and_zero() {
        let traj = constant_traj_2d(0.7, &[0.0, 0.01, 0.02, 0.03, 0.04]);
        let r = pointwise_harnack(
            &traj,
            0,
            &[0.0, 0.0],
            0.15,
            0.025,
            0.04,
            &singular_exp(),
            &StructureConstants::identity(),
        )
        .unwrap();
        assert!(r.gamma_fit.is_finite() && r.gamma_fit > 0.0);
        assert!((r.sup_val - 0.7).abs() < 1e-15);

        let zero = constant_traj_2d(0.0, &[0.0, 0.01, 0.02, 0.03, 0.04]);
        let r0 = pointwise_harnack(
            &zero,
            0,
            &[0.0, 0.0],
            0.15,
            0.025,
            0.04,
            &singular_exp(),
            &StructureConstants::identity(),
        )
        .unwrap();
        assert_eq!(r0.gamma_fit, 0.0);
    }

    #[test]
    fn smoothing_ratio_constant_and_zero() {
        let traj = constant_traj_2d(0.7, &[0.0, 0.01, 0.02, 0.03, 0.04]);
        let r = smoothing_ratio(
            &traj,
            0,
            &[0.0, 0.0],
            0.2,
            0.025,
            0.04,
            &singular_exp(),
            &StructureConstants::identity(),
        )
        .unwrap();
        assert!(r.gamma_fit.is_finite() && r.gamma_fit >= 0.0);
        assert!((r.sup_val - 0.7).abs() < 1e-15);
        assert!(r.spacetime_mean > 0.0);

        let zero = constant_traj_2d(0.0, &[0.0, 0.01, 0.02, 0.03, 0.04]);
        let r0 = smoothing_ratio(
            &zero,
            0,
            &[0.0, 0.0],
            0.2,
            0.025,
            0.04,
            &singular_exp(),
            &StructureConstants::identity(),
        )
        .unwrap();
        assert_eq!(r0.gamma_fit, 0.0);
    }

    #[test]
    fn oscillation_probe_constant_is_degenerate() {
        let traj = constant_traj(0.4, 1, &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5]);
        let exp = Exponents::new(1, 2.0, vec![1.0], vec![1.0]).unwrap();
        let r = oscillation_probe(&traj, 0, &[0.0], 0.5, 0.3, &exp, 0.1, 8).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.osc, 0.0);
        assert_eq!(r.lower_fraction, 1.0);
    }

    #[test]
    fn oscillation_probe_linear_profile() {
        // u(x) = x frozen in time on [0, 1]; probe the full domain.
        let g = Grid::line(0.0, 1.0, 128, BoundaryCondition::ZeroFlux).unwrap();
        let times: Vec<f64> = (0..=15).map(|i| 0.1 * i as f64).collect();
        let snaps = times
            .iter()
            .map(|&t| StateVector::new(vec![ScalarField::from_fn(&g, |x| x[0])], t).unwrap())
            .collect();
        let traj = Trajectory::from_snapshots(snaps, TrajectorySource::Oracle).unwrap();
        let exp = Exponents::new(1, 2.0, vec![1.0], vec![1.0]).unwrap();
        let h = g.h[0];
        let r = oscillation_probe(&traj, 0, &[0.5], 1.5, 0.5, &exp, 0.1, 8).unwrap();
        assert!(!r.degenerate);
        assert!((r.osc - (1.0 - h)).abs() < 1e-12, "osc = {}", r.osc);
        assert!(
            (r.lower_fraction - 0.5).abs() < 2.0 * h,
            "{}",
            r.lower_fraction
        );
        for fracs in &r.upper_level_fractions {
            for f in fracs {
                assert!(*f >= 0.0 && *f <= 1.0);
            }
        }
    }

    #[test]
    fn oscillation_probe_oracle_monotone_in_radius() {
        // Mild intrinsic exponent so the centered cylinders fit the window.
        let p = crate::oracles::BarenblattParams::new(1.2, 1, 1.0).unwrap();
        let g = Grid::line(-3.0, 3.0, 512, BoundaryCondition::ZeroFlux).unwrap();
        let times: Vec<f64> = (1..=60).map(|i| 0.01 * i as f64).collect();
        let traj = crate::oracles::barenblatt_trajectory(&g, &p, &times).unwrap();
        let exp = Exponents::new(1, 1.2, vec![1.0], vec![1.0]).unwrap();
        let big = oscillation_probe(&traj, 0, &[0.0], 0.58, 0.4, &exp, 0.1, 8).unwrap();
        let small = oscillation_probe(&traj, 0, &[0.0], 0.58, 0.2, &exp, 0.1, 8).unwrap();
        assert!(small.osc < big.osc, "{} vs {}", small.osc, big.osc);
    }

    #[test]
    fn oscillation_decay_truncates_on_constant() {
        let traj = constant_traj(0.4, 1, &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5]);
        let exp = Exponents::new(1, 2.0, vec![1.0], vec![1.0]).unwrap();
        let d = oscillation_decay(&traj, 0, &[0.0], 0.5, 0.3, 4, &exp, 0.1, None).unwrap();
        assert!(d.truncated_exact);
        assert!(d.entries.is_empty());
    }

    #[test]
    fn oscillation_decay_on_smooth_oracle_contracts() {
        // Heat-kernel evolution: classical regularity, so the oscillation
        // over shrinking intrinsic cylinders contracts with factors < 1.
        let g = Grid::line(-2.0, 2.0, 512, BoundaryCondition::ZeroFlux).unwrap();
        let times: Vec<f64> = (1..=80).map(|i| 0.005 * i as f64).collect();
        let traj = crate::oracles::heat_kernel_trajectory(&g, 1, 1.0, &times).unwrap();
        let exp = Exponents::new(1, 1.0, vec![1.0], vec![1.0]).unwrap();
        // alpha0 = 0 for m = 1: cylinders are ordinary parabolic ones.
        let d = oscillation_decay(&traj, 0, &[0.3], 0.4, 0.25, 4, &exp, 0.1, None).unwrap();
        assert!(!d.entries.is_empty());
        for s in &d.sigmas {
            assert!(*s <= 1.0, "sigma {s}");
        }
        assert!(d.max_sigma < 1.0);
    }

    #[test]
    fn weighted_gradient_energy_runs_in_singular_regime() {
        let p = crate::oracles::BarenblattParams::new(0.95, 2, 1.0).unwrap();
        let g = Grid::square(-2.0, 2.0, 64, BoundaryCondition::ZeroFlux).unwrap();
        let times: Vec<f64> = (1..=10).map(|i| 0.01 * i as f64).collect();
        let traj = crate::oracles::barenblatt_trajectory(&g, &p, &times).unwrap();
        let exp = singular_exp();
        let rec = weighted_gradient_energy(
            &traj,
            0,
            &[0.0, 0.0],
            0.5,
            0.02,
            0.1,
            &exp,
            &CouplerSpec::sum(),
            None,
        )
        .unwrap();
        assert!(rec.value.is_finite() && rec.value > 0.0);
        let (lo, hi) = weighted_alpha_interval(&exp, 0).unwrap();
        assert!(rec.alpha > lo && rec.alpha < hi);
    }
}
