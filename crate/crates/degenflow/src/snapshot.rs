//! On-disk trajectory format.
//!
//! One snapshot file is a single-line JSON header
//! `{dims, extent, cells, h, bc, k, time}` followed by k CSV blocks of
//! row-major cell values, one grid row per line, 17-significant-digit
//! decimal text (which round-trips f64 exactly). A trajectory is a
//! directory of `snap_<index>.csv` files plus a `meta.json` listing times.
//!
//! The parsers run on untrusted bytes (they are fuzz targets) and must
//! never panic: every size is bounds-checked before allocation.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BoundaryCondition, Grid, ScalarField, StateVector};
use crate::solver::{StepReport, Trajectory, TrajectorySource};
use crate::util::fmt_g17;

/// Hard caps the decoders enforce before allocating.
const MAX_CELLS_TOTAL: usize = 1 << 26;
const MAX_COMPONENTS: usize = 64;
const MAX_SNAPSHOTS: usize = 100_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub dims: usize,
    pub extent: Vec<[f64; 2]>,
    pub cells: Vec<usize>,
    pub h: Vec<f64>,
    pub bc: BoundaryCondition,
    pub k: usize,
    pub time: f64,
}

impl SnapshotHeader {
    fn for_state(state: &StateVector) -> Self {
        let g = state.grid();
        Self {
            dims: g.dims,
            extent: g.extent.clone(),
            cells: g.cells.clone(),
            h: g.h.clone(),
            bc: g.bc,
            k: state.k(),
            time: state.time,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dims == 0 || self.dims > 2 {
            return Err(Error::Format(format!(
                "dims must be 1 or 2, got {}",
                self.dims
            )));
        }
        if self.extent.len() != self.dims || self.cells.len() != self.dims {
            return Err(Error::Format(
                "extent/cells length disagrees with dims".into(),
            ));
        }
        if self.k == 0 || self.k > MAX_COMPONENTS {
            return Err(Error::Format(format!(
                "component count {} out of range",
                self.k
            )));
        }
        let mut total: usize = 1;
        for &c in &self.cells {
            if c < 4 {
                return Err(Error::Format("need at least 4 cells per axis".into()));
            }
            total = total
                .checked_mul(c)
                .ok_or_else(|| Error::Format("cell count overflow".into()))?;
        }
        if total > MAX_CELLS_TOTAL {
            return Err(Error::Format(format!("cell count {total} exceeds limit")));
        }
        for e in &self.extent {
            if !(e[0].is_finite() && e[1].is_finite() && e[1] > e[0]) {
                return Err(Error::Format(format!("bad extent {e:?}")));
            }
        }
        if !self.time.is_finite() {
            return Err(Error::Format("non-finite time".into()));
        }
        Ok(())
    }

    fn grid(&self) -> Result<Arc<Grid>> {
        Grid::new(self.extent.clone(), self.cells.clone(), self.bc)
            .map_err(|e| Error::Format(format!("header describes an invalid grid: {e}")))
    }
}

/// Serialize one state to the snapshot text format.
pub fn snapshot_to_string(state: &StateVector) -> String {
    let header = SnapshotHeader::for_state(state);
    let g = state.grid();
    let nx = g.nx();
    let ny = g.ny();
    let mut out = serde_json::to_string(&header).expect("header serialization");
    out.push('\n');
    for f in &state.fields {
        for j in 0..ny {
            let row: Vec<String> = (0..nx).map(|i| fmt_g17(f.at(i, j))).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    out
}

/// Decode a snapshot from bytes. Never panics on malformed input.
pub fn parse_snapshot(bytes: &[u8]) -> Result<StateVector> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::Format("snapshot is not valid UTF-8".into()))?;
    let mut lines = text.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Format("empty snapshot".into()))?;
    let header: SnapshotHeader = serde_json::from_str(header_line)
        .map_err(|e| Error::Format(format!("bad snapshot header: {e}")))?;
    header.validate()?;
    let grid = header.grid()?;
    let nx = grid.nx();
    let ny = grid.ny();

    let mut fields = Vec::with_capacity(header.k);
    for ci in 0..header.k {
        // Capacity grows with actual input rows, so a forged header cannot
        // force a large upfront allocation.
        let mut values = Vec::with_capacity((nx * ny).min(1 << 16));
        for j in 0..ny {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("component {ci}: missing row {j}")))?;
            let mut count = 0usize;
            for tok in line.split(',') {
                let v: f64 = tok.trim().parse().map_err(|_| {
                    Error::Format(format!("component {ci} row {j}: bad number {tok:?}"))
                })?;
                if !v.is_finite() {
                    return Err(Error::Format(format!(
                        "component {ci} row {j}: non-finite value"
                    )));
                }
                values.push(v);
                count += 1;
                if count > nx {
                    break;
                }
            }
            if count != nx {
                return Err(Error::Format(format!(
                    "component {ci} row {j}: expected {nx} values, got {count}"
                )));
            }
        }
        fields.push(ScalarField::from_values(&grid, values)?);
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(Error::Format(
            "trailing data after the last component".into(),
        ));
    }
    StateVector::new(fields, header.time)
}

pub fn write_snapshot(path: &Path, state: &StateVector) -> Result<()> {
    fs::write(path, snapshot_to_string(state))?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<StateVector> {
    let bytes = fs::read(path)?;
    parse_snapshot(&bytes)
}

// ---------------------------------------------------------------------------
// Trajectory directories
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub source: String,
    pub dims: usize,
    pub extent: Vec<[f64; 2]>,
    pub cells: Vec<usize>,
    pub bc: BoundaryCondition,
    pub k: usize,
    pub times: Vec<f64>,
    pub snapshots: Vec<String>,
}

/// Decode and sanity-check a trajectory meta document.
pub fn parse_meta(bytes: &[u8]) -> Result<TrajectoryMeta> {
    let meta: TrajectoryMeta =
        serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("bad meta.json: {e}")))?;
    if meta.times.len() != meta.snapshots.len() {
        return Err(Error::Format("times/snapshots length mismatch".into()));
    }
    if meta.snapshots.is_empty() || meta.snapshots.len() > MAX_SNAPSHOTS {
        return Err(Error::Format("snapshot count out of range".into()));
    }
    if meta.times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Format("non-finite time in meta".into()));
    }
    for name in &meta.snapshots {
        // File names are opened relative to the meta directory; refuse
        // anything that could escape it.
        if name.contains('/') || name.contains('\\') || name.contains("..") || name.is_empty() {
            return Err(Error::Format(format!(
                "suspicious snapshot file name {name:?}"
            )));
        }
    }
    match meta.source.as_str() {
        "solver" | "oracle" => {}
        other => return Err(Error::Format(format!("unknown source {other:?}"))),
    }
    Ok(meta)
}

pub fn write_trajectory(dir: &Path, traj: &Trajectory) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for (i, snap) in traj.snapshots.iter().enumerate() {
        let name = format!("snap_{i}.csv");
        write_snapshot(&dir.join(&name), snap)?;
        names.push(name);
    }
    let g = traj.grid();
    let meta = TrajectoryMeta {
        source: match traj.source {
            TrajectorySource::Solver => "solver".into(),
            TrajectorySource::Oracle => "oracle".into(),
        },
        dims: g.dims,
        extent: g.extent.clone(),
        cells: g.cells.clone(),
        bc: g.bc,
        k: traj.k(),
        times: traj.times(),
        snapshots: names,
    };
    fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&meta).expect("meta serialization"),
    )?;
    if !traj.ledger.is_empty() {
        write_ledger(&dir.join("ledger.csv"), &traj.ledger)?;
    }
    Ok(())
}

pub fn read_trajectory(dir: &Path) -> Result<Trajectory> {
    let meta = parse_meta(&fs::read(dir.join("meta.json"))?)?;
    let mut snaps = Vec::with_capacity(meta.snapshots.len());
    for (name, &t) in meta.snapshots.iter().zip(&meta.times) {
        let snap = read_snapshot(&dir.join(name))?;
        if (snap.time - t).abs() > 1e-9 * t.abs().max(1.0) {
            return Err(Error::Format(format!(
                "{name}: header time {} disagrees with meta {t}",
                snap.time
            )));
        }
        snaps.push(snap);
    }
    let source = if meta.source == "oracle" {
        TrajectorySource::Oracle
    } else {
        TrajectorySource::Solver
    };
    Trajectory::from_snapshots(snaps, source)
}

/// Ledger CSV: step, t, dt, mass_1..mass_k, clipped_mass, boundary_flux, sup_U.
pub fn write_ledger(path: &Path, rows: &[StepReport]) -> Result<()> {
    let k = rows.first().map(|r| r.mass.len()).unwrap_or(0);
    let mut out = String::from("step,t,dt");
    for i in 1..=k {
        out.push_str(&format!(",mass_{i}"));
    }
    out.push_str(",clipped_mass,boundary_flux,sup_U\n");
    for r in rows {
        out.push_str(&r.step.to_string());
        out.push(',');
        out.push_str(&fmt_g17(r.t));
        out.push(',');
        out.push_str(&fmt_g17(r.dt));
        for m in &r.mass {
            out.push(',');
            out.push_str(&fmt_g17(*m));
        }
        out.push(',');
        out.push_str(&fmt_g17(r.clipped_mass));
        out.push(',');
        out.push_str(&fmt_g17(r.boundary_flux));
        out.push(',');
        out.push_str(&fmt_g17(r.sup_u));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryCondition;

    fn sample_state() -> StateVector {
        let g = Grid::new(
            vec![[-1.0, 1.0], [0.0, 2.0]],
            vec![6, 4],
            BoundaryCondition::Periodic,
        )
        .unwrap();
        let f1 = ScalarField::from_fn(&g, |x| (x[0] + x[1]).abs());
        let f2 = ScalarField::from_fn(&g, |x| x[0] * x[0] + 0.125);
        StateVector::new(vec![f1, f2], 0.625).unwrap()
    }

    #[test]
    fn snapshot_round_trips_exactly() {
        let s = sample_state();
        let text = snapshot_to_string(&s);
        let back = parse_snapshot(text.as_bytes()).unwrap();
        assert_eq!(back.time, s.time);
        assert_eq!(back.k(), 2);
        assert!(back.grid().same_layout(s.grid()));
        for (a, b) in back.fields.iter().zip(&s.fields) {
            assert_eq!(a.values, b.values);
        }
    }

    #[test]
    fn parser_rejects_malformed_input() {
        assert!(parse_snapshot(b"").is_err());
        assert!(parse_snapshot(b"not json\n1,2,3\n").is_err());
        assert!(parse_snapshot(&[0xff, 0xfe, 0x00]).is_err());
        // Header fine but rows missing / short / non-finite.
        let s = sample_state();
        let text = snapshot_to_string(&s);
        let header = text.lines().next().unwrap();
        assert!(parse_snapshot(header.as_bytes()).is_err());
        let short = format!("{header}\n1.0,2.0\n");
        assert!(parse_snapshot(short.as_bytes()).is_err());
        let nan_row = format!("{header}\n{}\n", ["NaN"; 6].join(","));
        assert!(parse_snapshot(nan_row.as_bytes()).is_err());
        // Oversized cell counts are rejected before allocation.
        let huge = r#"{"dims":2,"extent":[[0.0,1.0],[0.0,1.0]],"cells":[100000,100000],"h":[1.0,1.0],"bc":"zero_flux","k":1,"time":0.0}"#;
        assert!(parse_snapshot(huge.as_bytes()).is_err());
    }

    #[test]
    fn trajectory_round_trip_via_directory() {
        let dir = std::env::temp_dir().join(format!("degenflow_io_test_{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        let s0 = sample_state();
        let mut s1 = s0.clone();
        s1.time = 0.75;
        let traj = Trajectory::from_snapshots(vec![s0, s1], TrajectorySource::Oracle).unwrap();
        write_trajectory(&dir, &traj).unwrap();
        let back = read_trajectory(&dir).unwrap();
        assert_eq!(back.snapshots.len(), 2);
        assert_eq!(back.times(), traj.times());
        assert!(matches!(back.source, TrajectorySource::Oracle));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn meta_rejects_path_escapes() {
        let meta = r#"{"source":"solver","dims":1,"extent":[[0.0,1.0]],"cells":[8],
            "bc":"zero_flux","k":1,"times":[0.0],"snapshots":["../evil.csv"]}"#;
        assert!(parse_meta(meta.as_bytes()).is_err());
        let ok = r#"{"source":"solver","dims":1,"extent":[[0.0,1.0]],"cells":[8],
            "bc":"zero_flux","k":1,"times":[0.0],"snapshots":["snap_0.csv"]}"#;
        assert!(parse_meta(ok.as_bytes()).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip_any_values(
                vals in proptest::collection::vec(-1e12f64..1e12, 8),
                t in 0.0f64..1e6,
            ) {
                let g = Grid::line(0.0, 1.0, 8, BoundaryCondition::ZeroFlux).unwrap();
                let f = ScalarField::from_values(&g, vals.clone()).unwrap();
                let s = StateVector::new(vec![f], t).unwrap();
                let back = parse_snapshot(snapshot_to_string(&s).as_bytes()).unwrap();
                prop_assert_eq!(back.fields[0].values.clone(), vals);
                prop_assert_eq!(back.time, t);
            }

            // The decoder must never panic, whatever the bytes.
            #[test]
            fn parser_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
                let _ = parse_snapshot(&bytes);
                let _ = parse_meta(&bytes);
            }
        }
    }
}
