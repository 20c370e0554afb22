//! Closed-form reference solutions (self-similar source solutions and the
//! heat kernel) plus reduction-based oracles used to validate the solver.
//!
//! Oracle trajectories are produced by sampling closed forms at snapshot
//! times, never by running the solver, so solver tests compare against
//! independent ground truth. The self-similar formulas themselves are gated
//! by a residual check against the discrete operator (see the tests here
//! and the acceptance suite) before anything else trusts them.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, StateVector};
use crate::model::{critical_exponent, CouplerSpec, DriftLaw, Exponents, FluxLaw};
use crate::solver::{apply_operator, SolverConfig, Trajectory, TrajectorySource};
use crate::util::{ksum, simpson, unit_sphere_area};

/// Parameters of the radial self-similar source solution of u_t = lap(u^m)
/// with total mass `mass`. For m > 1 the profile is compactly supported;
/// for (n-2)/n < m < 1 it decays algebraically.
#[derive(Debug, Clone)]
pub struct BarenblattParams {
    pub m: f64,
    pub n: usize,
    pub mass: f64,
    /// n / (n(m-1) + 2)
    pub alpha: f64,
    /// alpha |m-1| / (2mn)
    pub kappa: f64,
    /// Free constant fixed by the mass normalization.
    pub c: f64,
}

impl BarenblattParams {
    pub fn new(m: f64, n: usize, mass: f64) -> Result<Self> {
        if m == 1.0 {
            return Err(Error::Regime(
                "m = 1 is the heat kernel; use heat_kernel_value".into(),
            ));
        }
        if !(m > critical_exponent(n)) {
            return Err(Error::Regime(format!(
                "m = {m} not above the critical exponent {} for n = {n}",
                critical_exponent(n)
            )));
        }
        if !(mass > 0.0) {
            return Err(Error::Domain("mass must be positive".into()));
        }
        let nf = n as f64;
        let alpha = nf / (nf * (m - 1.0) + 2.0);
        let kappa = alpha * (m - 1.0).abs() / (2.0 * m * nf);

        // Profile integral in angular variables (smooth integrand), then the
        // mass normalization  M = omega_{n-1} C^{s} kappa^{-n/2} I  with
        // s = 1/(m-1) + n/2 for m > 1 and s = n/2 - 1/(1-m) for m < 1.
        let (i_val, s) = if m > 1.0 {
            let e = 1.0 / (m - 1.0);
            (
                simpson(
                    |phi| phi.cos().powf(2.0 * e + 1.0) * phi.sin().powf(nf - 1.0),
                    0.0,
                    std::f64::consts::FRAC_PI_2,
                    4000,
                ),
                e + nf / 2.0,
            )
        } else {
            let e = 1.0 / (1.0 - m);
            (
                simpson(
                    |phi| phi.cos().powf(2.0 * e - nf - 1.0) * phi.sin().powf(nf - 1.0),
                    0.0,
                    std::f64::consts::FRAC_PI_2,
                    4000,
                ),
                nf / 2.0 - e,
            )
        };
        let omega = unit_sphere_area(n);
        let c = (mass * kappa.powf(nf / 2.0) / (omega * i_val)).powf(1.0 / s);
        let params = Self {
            m,
            n,
            mass,
            alpha,
            kappa,
            c,
        };
        // Independent verification of the normalization by direct radial
        // midpoint quadrature at t = 1.
        let check = params.radial_mass(1.0, 400_000)?;
        if ((check - mass) / mass).abs() > 1e-6 {
            return Err(Error::Domain(format!(
                "mass normalization failed: quadrature gives {check}, wanted {mass}"
            )));
        }
        Ok(params)
    }

    /// Radius of the support (m > 1) at time t.
    pub fn front_radius(&self, t: f64) -> f64 {
        (self.c / self.kappa).sqrt() * t.powf(self.alpha / self.n as f64)
    }

    /// sup_x u(x, t) = t^{-alpha} C^{1/(m-1)} (or the m < 1 analogue).
    pub fn sup_value(&self, t: f64) -> f64 {
        let profile_peak = if self.m > 1.0 {
            self.c.powf(1.0 / (self.m - 1.0))
        } else {
            self.c.powf(-1.0 / (1.0 - self.m))
        };
        t.powf(-self.alpha) * profile_peak
    }

    /// Total mass at time t by midpoint quadrature of the radial profile;
    /// deliberately a different route from the normalization integral.
    pub fn radial_mass(&self, t: f64, points: usize) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("t must be positive, got {t}")));
        }
        let nf = self.n as f64;
        let r_max = if self.m > 1.0 {
            self.front_radius(t)
        } else {
            // Truncate where the algebraic tail stops contributing.
            let spread = t.powf(self.alpha / nf);
            let mut r = spread;
            while self.value_radial(r, t)? * r.powf(nf - 1.0) > 1e-18 * self.mass {
                r *= 2.0;
            }
            r
        };
        let h = r_max / points as f64;
        let mut acc = 0.0;
        for i in 0..points {
            let r = (i as f64 + 0.5) * h;
            acc += self.value_radial(r, t)? * r.powf(nf - 1.0);
        }
        Ok(acc * h * unit_sphere_area(self.n))
    }

    fn value_radial(&self, r: f64, t: f64) -> Result<f64> {
        barenblatt_value(&[r], t, &self.scalar_view())
    }

    // 1-D view used for radial evaluation regardless of n: the formula only
    // sees |x| and the stored exponents.
    fn scalar_view(&self) -> BarenblattParams {
        self.clone()
    }
}

/// Pointwise value of the self-similar solution. Errors on t <= 0; the
/// exponent band was enforced when the parameters were built.
pub fn barenblatt_value(x: &[f64], t: f64, params: &BarenblattParams) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("t must be positive, got {t}")));
    }
    let nf = params.n as f64;
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let xi2 = r2 * t.powf(-2.0 * params.alpha / nf);
    let v = if params.m > 1.0 {
        let bracket = params.c - params.kappa * xi2;
        if bracket <= 0.0 {
            0.0
        } else {
            t.powf(-params.alpha) * bracket.powf(1.0 / (params.m - 1.0))
        }
    } else {
        let bracket = params.c + params.kappa * xi2;
        t.powf(-params.alpha) * bracket.powf(-1.0 / (1.0 - params.m))
    };
    Ok(v)
}

/// M (4 pi t)^{-n/2} exp(-|x|^2 / 4t).
pub fn heat_kernel_value(x: &[f64], t: f64, n: usize, mass: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("t must be positive, got {t}")));
    }
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let norm = (4.0 * std::f64::consts::PI * t).powf(-(n as f64) / 2.0);
    Ok(mass * norm * (-r2 / (4.0 * t)).exp())
}

/// Sample the self-similar solution onto a grid at the given times.
pub fn barenblatt_trajectory(
    grid: &Arc<Grid>,
    params: &BarenblattParams,
    times: &[f64],
) -> Result<Trajectory> {
    let mut snaps = Vec::with_capacity(times.len());
    for &t in times {
        if !(t > 0.0) {
            return Err(Error::Domain("snapshot times must be positive".into()));
        }
        let mut field = ScalarField::zeros(grid);
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let c = grid.center(i, j);
                let idx = grid.idx(i, j);
                field.values[idx] = barenblatt_value(&c[..grid.dims], t, params)?;
            }
        }
        snaps.push(StateVector::new(vec![field], t)?);
    }
    Trajectory::from_snapshots(snaps, TrajectorySource::Oracle)
}

/// Sample the heat kernel onto a grid at the given times.
pub fn heat_kernel_trajectory(
    grid: &Arc<Grid>,
    n: usize,
    mass: f64,
    times: &[f64],
) -> Result<Trajectory> {
    let mut snaps = Vec::with_capacity(times.len());
    for &t in times {
        let mut field = ScalarField::zeros(grid);
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let c = grid.center(i, j);
                let idx = grid.idx(i, j);
                field.values[idx] = heat_kernel_value(&c[..grid.dims], t, n, mass)?;
            }
        }
        snaps.push(StateVector::new(vec![field], t)?);
    }
    Trajectory::from_snapshots(snaps, TrajectorySource::Oracle)
}

/// Expand a scalar trajectory into k proportional components u^i = c_i v.
/// With the total-population coupler this is an exact solution of the
/// coupled system, because each component then sees the same controller.
pub fn proportional_reduction(c_weights: &[f64], scalar_traj: &Trajectory) -> Result<Trajectory> {
    let sum: f64 = ksum(c_weights.iter().cloned());
    if (sum - 1.0).abs() > 1e-14 {
        return Err(Error::Domain(format!(
            "weights must sum to 1 within 1e-14, got {sum}"
        )));
    }
    if c_weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::Domain("weights must be positive".into()));
    }
    if scalar_traj.k() != 1 {
        return Err(Error::Domain("base trajectory must be scalar".into()));
    }
    let mut snaps = Vec::with_capacity(scalar_traj.snapshots.len());
    for s in &scalar_traj.snapshots {
        let base = &s.fields[0];
        let fields = c_weights
            .iter()
            .map(|w| ScalarField {
                grid: base.grid.clone(),
                values: base.values.iter().map(|v| w * v).collect(),
            })
            .collect();
        snaps.push(StateVector::new(fields, s.time)?);
    }
    Trajectory::from_snapshots(snaps, TrajectorySource::Oracle)
}

/// Per-snapshot L2 residual of the discrete operator on a trajectory:
/// centered time difference of the neighbors against the spatial operator
/// at the middle snapshot. Needs at least 3 snapshots.
pub fn residual(
    traj: &Trajectory,
    flux: &FluxLaw,
    drift: &DriftLaw,
    coupler: &CouplerSpec,
    exp: &Exponents,
    config: &SolverConfig,
) -> Result<Vec<(f64, Vec<f64>)>> {
    if traj.snapshots.len() < 3 {
        return Err(Error::Domain(
            "residual needs at least 3 snapshots for centered differencing".into(),
        ));
    }
    let vol = traj.grid().cell_volume();
    let mut out = Vec::new();
    for w in traj.snapshots.windows(3) {
        let (prev, mid, next) = (&w[0], &w[1], &w[2]);
        let dt2 = next.time - prev.time;
        if !(dt2 > 0.0) {
            return Err(Error::Domain("snapshot times must increase".into()));
        }
        let op = apply_operator(mid, flux, drift, coupler, exp, config)?;
        let mut norms = Vec::with_capacity(mid.k());
        for (ci, op_field) in op.iter().enumerate() {
            let mut acc = 0.0;
            for c in 0..mid.grid().cell_count() {
                let dudt = (next.fields[ci].values[c] - prev.fields[ci].values[c]) / dt2;
                let r = dudt - op_field.values[c];
                acc += r * r;
            }
            norms.push((acc * vol).sqrt());
        }
        out.push((mid.time, norms));
    }
    Ok(out)
}
