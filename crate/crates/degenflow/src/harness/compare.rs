//! Trajectory-against-trajectory error series.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::StateVector;
use crate::solver::Trajectory;
use crate::util::ksum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L1,
    LInf,
}

impl Norm {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Norm::L1),
            "linf" => Ok(Norm::LInf),
            other => Err(Error::Config(format!("unknown norm {other:?} (l1 | linf)"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub norm: Norm,
    /// (time of a, per-component error).
    pub entries: Vec<(f64, Vec<f64>)>,
    pub max_error: Vec<f64>,
    /// False when snapshots were matched by nearest time rather than exactly.
    pub matched_exact: bool,
}

fn error_between(a: &StateVector, b: &StateVector, norm: Norm) -> Vec<f64> {
    let vol = a.grid().cell_volume();
    a.fields
        .iter()
        .zip(&b.fields)
        .map(|(fa, fb)| match norm {
            Norm::L1 => ksum(fa.values.iter().zip(&fb.values).map(|(x, y)| (x - y).abs())) * vol,
            Norm::LInf => fa
                .values
                .iter()
                .zip(&fb.values)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max),
        })
        .collect()
}

/// Per-snapshot error of `a` against `b`. Grids and component counts must
/// match; times are zipped exactly when they agree, otherwise each snapshot
/// of `a` is matched to the nearest snapshot of `b` and the report is
/// flagged.
pub fn compare_trajectories(a: &Trajectory, b: &Trajectory, norm: Norm) -> Result<CompareReport> {
    if !a.grid().same_layout(b.grid()) {
        return Err(Error::Domain("trajectories live on different grids".into()));
    }
    if a.k() != b.k() {
        return Err(Error::Domain("component counts differ".into()));
    }
    let ta = a.times();
    let tb = b.times();
    let tol = 1e-9 * ta.last().unwrap().abs().max(1.0);
    let exact = ta.len() == tb.len() && ta.iter().zip(&tb).all(|(x, y)| (x - y).abs() <= tol);
    let mut entries = Vec::with_capacity(ta.len());
    for (i, sa) in a.snapshots.iter().enumerate() {
        let sb = if exact {
            &b.snapshots[i]
        } else {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (j, t) in tb.iter().enumerate() {
                let d = (t - sa.time).abs();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            &b.snapshots[best]
        };
        entries.push((sa.time, error_between(sa, sb, norm)));
    }
    let k = a.k();
    let max_error = (0..k)
        .map(|ci| entries.iter().map(|(_, e)| e[ci]).fold(0.0f64, f64::max))
        .collect();
    Ok(CompareReport {
        norm,
        entries,
        max_error,
        matched_exact: exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoundaryCondition, Grid, ScalarField};
    use crate::solver::TrajectorySource;

    fn traj(offset: f64, times: &[f64]) -> Trajectory {
        let g = Grid::line(0.0, 1.0, 16, BoundaryCondition::ZeroFlux).unwrap();
        let snaps = times
            .iter()
            .map(|&t| {
                StateVector::new(vec![ScalarField::from_fn(&g, |x| x[0] + offset)], t).unwrap()
            })
            .collect();
        Trajectory::from_snapshots(snaps, TrajectorySource::Oracle).unwrap()
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let a = traj(0.0, &[0.0, 0.1]);
        let r = compare_trajectories(&a, &a, Norm::L1).unwrap();
        assert!(r.matched_exact);
        assert!(r.max_error.iter().all(|e| *e == 0.0));
    }

    #[test]
    fn constant_offset_shows_in_both_norms() {
        let a = traj(0.0, &[0.0, 0.1]);
        let b = traj(0.25, &[0.0, 0.1]);
        let l1 = compare_trajectories(&a, &b, Norm::L1).unwrap();
        assert!((l1.max_error[0] - 0.25).abs() < 1e-12);
        let linf = compare_trajectories(&a, &b, Norm::LInf).unwrap();
        assert!((linf.max_error[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn nearest_time_matching_is_flagged() {
        let a = traj(0.0, &[0.0, 0.1]);
        let b = traj(0.0, &[0.0, 0.05, 0.1]);
        let r = compare_trajectories(&a, &b, Norm::L1).unwrap();
        assert!(!r.matched_exact);
        assert!(r.max_error[0] < 1e-12);
    }

    #[test]
    fn incompatible_grids_error() {
        let a = traj(0.0, &[0.0]);
        let g = Grid::line(0.0, 1.0, 32, BoundaryCondition::ZeroFlux).unwrap();
        let b = Trajectory::from_snapshots(
            vec![StateVector::new(vec![ScalarField::zeros(&g)], 0.0).unwrap()],
            TrajectorySource::Oracle,
        )
        .unwrap();
        assert!(compare_trajectories(&a, &b, Norm::L1).is_err());
    }
}
