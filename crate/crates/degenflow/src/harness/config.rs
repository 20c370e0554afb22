//! Experiment configuration: a flat key-value text format with section
//! headers, and its typed representation.
//!
//! Grammar (one entry per line):
//!
//! ```text
//! # comment (also after values)
//! [section]
//! key = value
//! list = 1.0, 2.0, 3.0
//! ```
//!
//! Sections: `[experiment]`, `[exponents]`, `[coupler]`, `[flux]`,
//! `[drift]`, `[grid]`, `[solver]`, then one `[initial]` per component (or
//! a single proportional/file one) and any number of `[diagnostic]`
//! sections. Unknown sections or keys are errors.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::grid::BoundaryCondition;
use crate::model::{CouplerSpec, DriftLaw, Exponents, FluxLaw, StructureConstants};
use crate::solver::{CoefficientMean, SolverConfig};

// ---------------------------------------------------------------------------
// Raw sections
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RawSection {
    pub name: String,
    pub entries: Vec<(String, String)>,
    pub line: usize,
}

/// Split a config text into ordered sections. Never panics.
pub fn parse_raw(text: &str) -> Result<Vec<RawSection>> {
    let mut sections: Vec<RawSection> = Vec::new();
    for (ln, raw_line) in text.lines().enumerate() {
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {}: unterminated section", ln + 1)))?
                .trim();
            if name.is_empty() {
                return Err(Error::Config(format!(
                    "line {}: empty section name",
                    ln + 1
                )));
            }
            sections.push(RawSection {
                name: name.to_string(),
                entries: Vec::new(),
                line: ln + 1,
            });
        } else if let Some(eq) = line.find('=') {
            let key = line[..eq].trim();
            let value = line[eq + 1..].trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", ln + 1)));
            }
            let section = sections.last_mut().ok_or_else(|| {
                Error::Config(format!("line {}: entry before any [section]", ln + 1))
            })?;
            if section.entries.iter().any(|(k, _)| k == key) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {key:?} in [{}]",
                    ln + 1,
                    section.name
                )));
            }
            section.entries.push((key.to_string(), value.to_string()));
        } else {
            return Err(Error::Config(format!(
                "line {}: expected `[section]` or `key = value`, got {line:?}",
                ln + 1
            )));
        }
    }
    Ok(sections)
}

struct SectionView<'a> {
    raw: &'a RawSection,
    allowed: &'a [&'a str],
}

impl<'a> SectionView<'a> {
    fn new(raw: &'a RawSection, allowed: &'a [&'a str]) -> Result<Self> {
        for (k, _) in &raw.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Config(format!(
                    "[{}]: unknown key {k:?} (allowed: {allowed:?})",
                    raw.name
                )));
            }
        }
        Ok(Self { raw, allowed })
    }

    fn get(&self, key: &str) -> Option<&str> {
        debug_assert!(self.allowed.contains(&key));
        self.raw
            .entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn req(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("[{}]: missing key {key:?}", self.raw.name)))
    }

    fn f64(&self, key: &str) -> Result<f64> {
        parse_f64(self.req(key)?, &self.raw.name, key)
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            Some(v) => parse_f64(v, &self.raw.name, key),
            None => Ok(default),
        }
    }

    fn usize(&self, key: &str) -> Result<usize> {
        let v = self.req(key)?;
        v.parse().map_err(|_| {
            Error::Config(format!(
                "[{}]: {key} = {v:?} is not an integer",
                self.raw.name
            ))
        })
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            Some(v) => v.parse().map_err(|_| {
                Error::Config(format!(
                    "[{}]: {key} = {v:?} is not an integer",
                    self.raw.name
                ))
            }),
            None => Ok(default),
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(Error::Config(format!(
                "[{}]: {key} = {v:?} is not a boolean",
                self.raw.name
            ))),
            None => Ok(default),
        }
    }

    fn list_f64(&self, key: &str) -> Result<Vec<f64>> {
        parse_list_f64(self.req(key)?, &self.raw.name, key)
    }

    fn list_f64_opt(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            Some(v) => Ok(Some(parse_list_f64(v, &self.raw.name, key)?)),
            None => Ok(None),
        }
    }
}

fn parse_f64(v: &str, section: &str, key: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::Config(format!("[{section}]: {key} = {v:?} is not a number")))
}

fn parse_list_f64(v: &str, section: &str, key: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|tok| {
            tok.trim().parse().map_err(|_| {
                Error::Config(format!("[{section}]: {key} contains a bad number {tok:?}"))
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Typed configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GridSpec {
    pub extent: Vec<[f64; 2]>,
    pub cells: Vec<usize>,
    pub bc: BoundaryCondition,
}

#[derive(Debug, Clone)]
pub enum InitialData {
    Barenblatt {
        mass: f64,
        t_init: f64,
    },
    Gaussian {
        center: Vec<f64>,
        sigma: f64,
        mass: f64,
    },
    Bump {
        center: Vec<f64>,
        radius: f64,
        height: f64,
    },
}

#[derive(Debug, Clone)]
pub enum InitialSpec {
    PerComponent(Vec<InitialData>),
    Proportional {
        weights: Vec<f64>,
        base: InitialData,
    },
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct HarnackCylinder {
    pub center: Vec<f64>,
    pub rho: f64,
    pub s: f64,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    Front,
    Interior,
    NearMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    Barenblatt,
    HeatKernel,
}

#[derive(Debug, Clone)]
pub enum DiagnosticRequest {
    MassSeries,
    SupU {
        khat_t0s: Vec<f64>,
    },
    Truncation {
        k_scale: Option<f64>,
        t0: f64,
        jmax: usize,
    },
    Harnack {
        component: usize,
        cylinders: Vec<HarnackCylinder>,
    },
    PointwiseHarnack {
        component: usize,
        cylinders: Vec<HarnackCylinder>,
    },
    Smoothing {
        component: usize,
        cylinders: Vec<HarnackCylinder>,
    },
    Oscillation {
        component: usize,
        center: Vec<f64>,
        radius: f64,
        s_max: usize,
    },
    OscillationDecay {
        component: usize,
        probes: Vec<ProbeKind>,
        levels: usize,
    },
    Residual,
    CompareOracle {
        oracle: OracleKind,
    },
    ProportionalDeviation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Mass,
    Clipped,
    BoundaryGuard,
    SupMonotone,
    KhatRate,
    OracleL1,
    Proportional,
    OscillationSigma,
    HarnackGamma,
    TruncationZero,
    Structure,
}

impl CheckKind {
    pub fn name(&self) -> &'static str {
        match self {
            CheckKind::Mass => "mass",
            CheckKind::Clipped => "clipped",
            CheckKind::BoundaryGuard => "boundary_guard",
            CheckKind::SupMonotone => "sup_monotone",
            CheckKind::KhatRate => "khat_rate",
            CheckKind::OracleL1 => "oracle_l1",
            CheckKind::Proportional => "proportional",
            CheckKind::OscillationSigma => "oscillation_sigma",
            CheckKind::HarnackGamma => "harnack_gamma",
            CheckKind::TruncationZero => "truncation_zero",
            CheckKind::Structure => "structure",
        }
    }

    fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "mass" => CheckKind::Mass,
            "clipped" => CheckKind::Clipped,
            "boundary_guard" => CheckKind::BoundaryGuard,
            "sup_monotone" => CheckKind::SupMonotone,
            "khat_rate" => CheckKind::KhatRate,
            "oracle_l1" => CheckKind::OracleL1,
            "proportional" => CheckKind::Proportional,
            "oscillation_sigma" => CheckKind::OscillationSigma,
            "harnack_gamma" => CheckKind::HarnackGamma,
            "truncation_zero" => CheckKind::TruncationZero,
            "structure" => CheckKind::Structure,
            other => return Err(Error::Config(format!("unknown check {other:?}"))),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub waive_structure: bool,
    pub exponents: Exponents,
    pub coupler: CouplerSpec,
    pub flux: FluxLaw,
    pub drift: DriftLaw,
    pub grid: GridSpec,
    pub initial: InitialSpec,
    pub solver: SolverConfig,
    pub diagnostics: Vec<DiagnosticRequest>,
    pub checks: Vec<CheckKind>,
}

const EXPERIMENT_KEYS: &[&str] = &["name", "seed", "waive_structure", "checks"];
const EXPONENT_KEYS: &[&str] = &["n", "m", "beta", "lambda", "q"];
const COUPLER_KEYS: &[&str] = &["kind", "wp_lambda", "wp_beta", "band_lo", "band_hi"];
const FLUX_KEYS: &[&str] = &["kind", "scale", "skew", "c", "c1", "c2", "c3", "c4", "c5"];
const DRIFT_KEYS: &[&str] = &["kind", "coeff", "q"];
const GRID_KEYS: &[&str] = &["extent", "cells", "bc"];
const SOLVER_KEYS: &[&str] = &[
    "cfl_safety",
    "clip_negative",
    "coefficient_mean",
    "epsilon_reg",
    "t_end",
    "snapshot_interval",
    "ledger_stride",
];
const INITIAL_KEYS: &[&str] = &[
    "kind", "mass", "t_init", "center", "sigma", "radius", "height", "weights", "path",
];
const DIAGNOSTIC_KEYS: &[&str] = &[
    "kind",
    "khat_t0s",
    "k_scale",
    "t0",
    "jmax",
    "component",
    "cylinders",
    "center",
    "radius",
    "s_max",
    "probes",
    "levels",
    "oracle",
];

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let sections = parse_raw(text)?;
        let find = |name: &str| -> Result<&RawSection> {
            sections
                .iter()
                .find(|s| s.name == name)
                .ok_or_else(|| Error::Config(format!("missing [{name}] section")))
        };
        for s in &sections {
            match s.name.as_str() {
                "experiment" | "exponents" | "coupler" | "flux" | "drift" | "grid" | "solver"
                | "initial" | "diagnostic" => {}
                other => return Err(Error::Config(format!("unknown section [{other}]"))),
            }
        }

        let exp_s = SectionView::new(find("experiment")?, EXPERIMENT_KEYS)?;
        let name = exp_s.req("name")?.to_string();
        if name.is_empty()
            || !name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(Error::Config(format!(
                "experiment name {name:?} must be non-empty [A-Za-z0-9_-]"
            )));
        }
        let seed = exp_s.usize_or("seed", 42)? as u64;
        let waive_structure = exp_s.bool_or("waive_structure", false)?;
        let checks = match exp_s.get("checks") {
            Some(list) => list
                .split(',')
                .map(|t| CheckKind::from_name(t.trim()))
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };

        let e = SectionView::new(find("exponents")?, EXPONENT_KEYS)?;
        let n = e.usize("n")?;
        let m = e.f64("m")?;
        let beta = e.list_f64("beta")?;
        let lambda = e.list_f64("lambda")?;
        let mut exponents = Exponents::new(n, m, beta, lambda)?;
        if let Some(qv) = e.get("q") {
            exponents = exponents.with_drift(parse_f64(qv, "exponents", "q")?)?;
        }

        let c = SectionView::new(find("coupler")?, COUPLER_KEYS)?;
        let coupler = match c.req("kind")? {
            "sum" => CouplerSpec::sum(),
            "euclidean_norm" => CouplerSpec::euclidean_norm(),
            "weighted_power" => CouplerSpec::weighted_power(
                c.list_f64("wp_lambda")?,
                c.list_f64("wp_beta")?,
                c.f64_or("band_lo", 1.0)?,
                c.f64_or("band_hi", 1.0)?,
            ),
            other => return Err(Error::Config(format!("unknown coupler kind {other:?}"))),
        };

        let f = SectionView::new(find("flux")?, FLUX_KEYS)?;
        let constants = StructureConstants::new(
            f.f64_or("c", 1.0)?,
            f.f64_or("c1", 1.0)?,
            f.f64_or("c2", 0.0)?,
            f.f64_or("c3", 1.0)?,
            f.f64_or("c4", 0.0)?,
            f.f64_or("c5", 0.0)?,
        )?;
        let flux = match f.req("kind")? {
            "identity" => FluxLaw {
                kind: crate::model::FluxKind::Identity,
                constants,
            },
            "scaled_rotated" => {
                FluxLaw::scaled_rotated(f.f64("scale")?, f.f64_or("skew", 0.0)?, constants)
            }
            other => return Err(Error::Config(format!("unknown flux kind {other:?}"))),
        };

        let d = SectionView::new(find("drift")?, DRIFT_KEYS)?;
        let drift = match d.req("kind")? {
            "none" => {
                let mut dc = constants;
                dc.c5 = 0.0;
                DriftLaw {
                    kind: crate::model::DriftKind::None,
                    constants: dc,
                }
            }
            "power" => DriftLaw::power(d.f64("coeff")?, d.f64("q")?, constants),
            other => return Err(Error::Config(format!("unknown drift kind {other:?}"))),
        };

        let g = SectionView::new(find("grid")?, GRID_KEYS)?;
        let ext_flat = g.list_f64("extent")?;
        if ext_flat.len() != 2 * n || !(n == 1 || n == 2) {
            return Err(Error::Config(format!(
                "[grid]: extent needs 2 n = {} numbers for n = {n}",
                2 * n
            )));
        }
        let extent: Vec<[f64; 2]> = ext_flat.chunks(2).map(|c| [c[0], c[1]]).collect();
        let cells_list = g.req("cells")?;
        let cells: Vec<usize> = cells_list
            .split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("[grid]: bad cell count {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if cells.len() != n {
            return Err(Error::Config("[grid]: cells length must equal n".into()));
        }
        let bc = match g.req("bc")? {
            "zero_flux" => BoundaryCondition::ZeroFlux,
            "dirichlet_zero" => BoundaryCondition::DirichletZero,
            "periodic" => BoundaryCondition::Periodic,
            other => return Err(Error::Config(format!("unknown bc {other:?}"))),
        };
        let grid = GridSpec { extent, cells, bc };

        let sv = SectionView::new(find("solver")?, SOLVER_KEYS)?;
        let solver = SolverConfig {
            cfl_safety: sv.f64_or("cfl_safety", 0.4)?,
            clip_negative: sv.bool_or("clip_negative", true)?,
            coefficient_mean: match sv.get("coefficient_mean") {
                None | Some("arithmetic") => CoefficientMean::Arithmetic,
                Some("harmonic_regularized") => CoefficientMean::HarmonicRegularized,
                Some(other) => {
                    return Err(Error::Config(format!("unknown coefficient_mean {other:?}")))
                }
            },
            epsilon_reg: sv.f64_or("epsilon_reg", 1e-12)?,
            t_end: sv.f64("t_end")?,
            snapshot_interval: sv.f64_or("snapshot_interval", 0.0)?,
            ledger_stride: sv.usize_or("ledger_stride", 1)? as u64,
        };
        solver.validate()?;

        // Initial sections, in order.
        let initial_sections: Vec<&RawSection> =
            sections.iter().filter(|s| s.name == "initial").collect();
        if initial_sections.is_empty() {
            return Err(Error::Config("need at least one [initial] section".into()));
        }
        let parse_data = |view: &SectionView| -> Result<InitialData> {
            Ok(match view.req("kind")? {
                "barenblatt" => InitialData::Barenblatt {
                    mass: view.f64("mass")?,
                    t_init: view.f64("t_init")?,
                },
                "gaussian" => InitialData::Gaussian {
                    center: view.list_f64("center")?,
                    sigma: view.f64("sigma")?,
                    mass: view.f64("mass")?,
                },
                "bump" => InitialData::Bump {
                    center: view.list_f64("center")?,
                    radius: view.f64("radius")?,
                    height: view.f64("height")?,
                },
                other => return Err(Error::Config(format!("unknown initial kind {other:?}"))),
            })
        };
        let first = SectionView::new(initial_sections[0], INITIAL_KEYS)?;
        let initial = match first.req("kind")? {
            "proportional" => {
                if initial_sections.len() != 1 {
                    return Err(Error::Config(
                        "proportional initial data must be the only [initial] section".into(),
                    ));
                }
                let weights = first.list_f64("weights")?;
                proportional_spec(&first, weights)?
            }
            "file" => {
                if initial_sections.len() != 1 {
                    return Err(Error::Config(
                        "file initial data must be the only [initial] section".into(),
                    ));
                }
                InitialSpec::File(PathBuf::from(first.req("path")?))
            }
            _ => {
                let mut per = Vec::with_capacity(initial_sections.len());
                for s in &initial_sections {
                    let view = SectionView::new(s, INITIAL_KEYS)?;
                    per.push(parse_data(&view)?);
                }
                InitialSpec::PerComponent(per)
            }
        };

        // Diagnostics, in order.
        let mut diagnostics = Vec::new();
        for s in sections.iter().filter(|s| s.name == "diagnostic") {
            let view = SectionView::new(s, DIAGNOSTIC_KEYS)?;
            diagnostics.push(parse_diagnostic(&view)?);
        }

        let config = ExperimentConfig {
            name,
            seed,
            waive_structure,
            exponents,
            coupler,
            flux,
            drift,
            grid,
            initial,
            solver,
            diagnostics,
            checks,
        };
        config.validate()?;
        Ok(config)
    }

    /// Cross-field consistency beyond what the individual types enforce.
    pub fn validate(&self) -> Result<()> {
        let k = self.exponents.k;
        let n = self.exponents.n;
        if self.grid.extent.len() != n {
            return Err(Error::Config("grid dims must equal n".into()));
        }
        match &self.initial {
            InitialSpec::PerComponent(list) => {
                if list.len() != k {
                    return Err(Error::Config(format!(
                        "{} [initial] sections for k = {k} components",
                        list.len()
                    )));
                }
                let n_barenblatt = list
                    .iter()
                    .filter(|d| matches!(d, InitialData::Barenblatt { .. }))
                    .count();
                if n_barenblatt != 0 && n_barenblatt != list.len() {
                    return Err(Error::Config(
                        "mixing barenblatt and other initial data is ambiguous in time".into(),
                    ));
                }
                for d in list {
                    check_centers(d, n)?;
                }
            }
            InitialSpec::Proportional { weights, base } => {
                if weights.len() != k {
                    return Err(Error::Config(format!(
                        "proportional weights ({}) must match k = {k}",
                        weights.len()
                    )));
                }
                check_centers(base, n)?;
            }
            InitialSpec::File(_) => {}
        }
        for d in &self.diagnostics {
            if let DiagnosticRequest::CompareOracle { oracle } = d {
                match oracle {
                    OracleKind::Barenblatt => {
                        let ok = matches!(
                            &self.initial,
                            InitialSpec::PerComponent(v) if v.len() == 1
                                && matches!(v[0], InitialData::Barenblatt { .. })
                        );
                        if !ok {
                            return Err(Error::Config(
                                "compare_oracle barenblatt needs k = 1 with barenblatt initial data"
                                    .into(),
                            ));
                        }
                    }
                    OracleKind::HeatKernel => {
                        let ok = self.exponents.m == 1.0
                            && matches!(
                                &self.initial,
                                InitialSpec::PerComponent(v) if v.len() == 1
                                    && matches!(v[0], InitialData::Gaussian { .. })
                            );
                        if !ok {
                            return Err(Error::Config(
                                "compare_oracle heat_kernel needs m = 1, k = 1, gaussian data"
                                    .into(),
                            ));
                        }
                    }
                }
            }
            if let DiagnosticRequest::ProportionalDeviation = d {
                if !matches!(self.initial, InitialSpec::Proportional { .. }) {
                    return Err(Error::Config(
                        "proportional_deviation needs proportional initial data".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn check_centers(d: &InitialData, n: usize) -> Result<()> {
    let center = match d {
        InitialData::Gaussian { center, .. } | InitialData::Bump { center, .. } => center,
        InitialData::Barenblatt { .. } => return Ok(()),
    };
    if center.len() != n {
        return Err(Error::Config(format!(
            "initial data center {center:?} must have n = {n} coordinates"
        )));
    }
    Ok(())
}

fn proportional_spec(view: &SectionView, weights: Vec<f64>) -> Result<InitialSpec> {
    // The base profile is described in the same section: mass/t_init
    // (barenblatt), center/sigma/mass (gaussian), center/radius/height
    // (bump). Disambiguate by which keys are present.
    let base = if view.get("t_init").is_some() {
        InitialData::Barenblatt {
            mass: view.f64("mass")?,
            t_init: view.f64("t_init")?,
        }
    } else if view.get("sigma").is_some() {
        InitialData::Gaussian {
            center: view.list_f64("center")?,
            sigma: view.f64("sigma")?,
            mass: view.f64("mass")?,
        }
    } else if view.get("radius").is_some() {
        InitialData::Bump {
            center: view.list_f64("center")?,
            radius: view.f64("radius")?,
            height: view.f64("height")?,
        }
    } else {
        return Err(Error::Config(
            "[initial] proportional: describe the base with t_init/mass, center/sigma/mass, \
             or center/radius/height"
                .into(),
        ));
    };
    Ok(InitialSpec::Proportional { weights, base })
}

fn parse_diagnostic(view: &SectionView) -> Result<DiagnosticRequest> {
    Ok(match view.req("kind")? {
        "mass_series" => DiagnosticRequest::MassSeries,
        "sup_u" => DiagnosticRequest::SupU {
            khat_t0s: view.list_f64_opt("khat_t0s")?.unwrap_or_default(),
        },
        "truncation" => DiagnosticRequest::Truncation {
            k_scale: match view.get("k_scale") {
                None | Some("auto") => None,
                Some(v) => Some(parse_f64(v, "diagnostic", "k_scale")?),
            },
            t0: view.f64("t0")?,
            jmax: view.usize_or("jmax", 6)?,
        },
        "harnack" | "pointwise_harnack" | "smoothing" => {
            let component = view.usize_or("component", 0)?;
            // cylinders = cx [cy] rho s t; ...
            let spec = view.req("cylinders")?;
            let mut cylinders = Vec::new();
            for part in spec.split(';') {
                let nums: Vec<f64> = part
                    .split_whitespace()
                    .map(|t| parse_f64(t, "diagnostic", "cylinders"))
                    .collect::<Result<Vec<_>>>()?;
                if nums.len() < 4 {
                    return Err(Error::Config(
                        "each cylinder needs `cx [cy] rho s t`".into(),
                    ));
                }
                let (center, rest) = nums.split_at(nums.len() - 3);
                cylinders.push(HarnackCylinder {
                    center: center.to_vec(),
                    rho: rest[0],
                    s: rest[1],
                    t: rest[2],
                });
            }
            match view.req("kind")? {
                "harnack" => DiagnosticRequest::Harnack {
                    component,
                    cylinders,
                },
                "pointwise_harnack" => DiagnosticRequest::PointwiseHarnack {
                    component,
                    cylinders,
                },
                _ => DiagnosticRequest::Smoothing {
                    component,
                    cylinders,
                },
            }
        }
        "oscillation" => DiagnosticRequest::Oscillation {
            component: view.usize_or("component", 0)?,
            center: view.list_f64("center")?,
            radius: view.f64("radius")?,
            s_max: view.usize_or("s_max", 8)?,
        },
        "oscillation_decay" => {
            let probes = match view.get("probes") {
                None => vec![ProbeKind::Front, ProbeKind::Interior, ProbeKind::NearMax],
                Some(list) => list
                    .split(',')
                    .map(|t| match t.trim() {
                        "front" => Ok(ProbeKind::Front),
                        "interior" => Ok(ProbeKind::Interior),
                        "near_max" => Ok(ProbeKind::NearMax),
                        other => Err(Error::Config(format!("unknown probe {other:?}"))),
                    })
                    .collect::<Result<Vec<_>>>()?,
            };
            DiagnosticRequest::OscillationDecay {
                component: view.usize_or("component", 0)?,
                probes,
                levels: view.usize_or("levels", 5)?,
            }
        }
        "residual" => DiagnosticRequest::Residual,
        "compare_oracle" => DiagnosticRequest::CompareOracle {
            oracle: match view.req("oracle")? {
                "barenblatt" => OracleKind::Barenblatt,
                "heat_kernel" => OracleKind::HeatKernel,
                other => return Err(Error::Config(format!("unknown oracle {other:?}"))),
            },
        },
        "proportional_deviation" => DiagnosticRequest::ProportionalDeviation,
        other => return Err(Error::Config(format!("unknown diagnostic kind {other:?}"))),
    })
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

fn fmt_num(x: f64) -> String {
    // Shortest round-trip text keeps configs readable.
    format!("{x:?}")
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| fmt_num(*x))
        .collect::<Vec<_>>()
        .join(", ")
}

impl ExperimentConfig {
    /// Emit the flat text form; `from_text` of the result reproduces the
    /// configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("[experiment]\n");
        out.push_str(&format!("name = {}\n", self.name));
        out.push_str(&format!("seed = {}\n", self.seed));
        if self.waive_structure {
            out.push_str("waive_structure = true\n");
        }
        if !self.checks.is_empty() {
            let names: Vec<&str> = self.checks.iter().map(|c| c.name()).collect();
            out.push_str(&format!("checks = {}\n", names.join(", ")));
        }

        out.push_str("\n[exponents]\n");
        out.push_str(&format!("n = {}\n", self.exponents.n));
        out.push_str(&format!("m = {}\n", fmt_num(self.exponents.m)));
        out.push_str(&format!("beta = {}\n", fmt_list(&self.exponents.beta)));
        out.push_str(&format!("lambda = {}\n", fmt_list(&self.exponents.lambda)));
        if let Some(q) = self.exponents.q {
            out.push_str(&format!("q = {}\n", fmt_num(q)));
        }

        out.push_str("\n[coupler]\n");
        match &self.coupler.kind {
            crate::model::CouplerKind::Sum => out.push_str("kind = sum\n"),
            crate::model::CouplerKind::EuclideanNorm => out.push_str("kind = euclidean_norm\n"),
            crate::model::CouplerKind::WeightedPower {
                lambda,
                beta,
                c_eq,
                big_c_eq,
            } => {
                out.push_str("kind = weighted_power\n");
                out.push_str(&format!("wp_lambda = {}\n", fmt_list(lambda)));
                out.push_str(&format!("wp_beta = {}\n", fmt_list(beta)));
                out.push_str(&format!("band_lo = {}\n", fmt_num(*c_eq)));
                out.push_str(&format!("band_hi = {}\n", fmt_num(*big_c_eq)));
            }
            crate::model::CouplerKind::Custom(_) => {
                out.push_str("# custom coupler: not expressible in text form\nkind = sum\n")
            }
        }

        out.push_str("\n[flux]\n");
        let fc = &self.flux.constants;
        match &self.flux.kind {
            crate::model::FluxKind::Identity => out.push_str("kind = identity\n"),
            crate::model::FluxKind::ScaledRotated { scale, skew } => {
                out.push_str("kind = scaled_rotated\n");
                out.push_str(&format!("scale = {}\n", fmt_num(*scale)));
                out.push_str(&format!("skew = {}\n", fmt_num(*skew)));
            }
            crate::model::FluxKind::Custom(_) => {
                out.push_str("# custom flux: not expressible in text form\nkind = identity\n")
            }
        }
        out.push_str(&format!("c = {}\n", fmt_num(fc.c)));
        out.push_str(&format!("c1 = {}\n", fmt_num(fc.c1)));
        out.push_str(&format!("c2 = {}\n", fmt_num(fc.c2)));
        out.push_str(&format!("c3 = {}\n", fmt_num(fc.c3)));
        out.push_str(&format!("c4 = {}\n", fmt_num(fc.c4)));
        out.push_str(&format!("c5 = {}\n", fmt_num(fc.c5)));

        out.push_str("\n[drift]\n");
        match &self.drift.kind {
            crate::model::DriftKind::None => out.push_str("kind = none\n"),
            crate::model::DriftKind::PowerQ { coeff, q } => {
                out.push_str("kind = power\n");
                out.push_str(&format!("coeff = {}\n", fmt_num(*coeff)));
                out.push_str(&format!("q = {}\n", fmt_num(*q)));
            }
            crate::model::DriftKind::Custom(_) => {
                out.push_str("# custom drift: not expressible in text form\nkind = none\n")
            }
        }

        out.push_str("\n[grid]\n");
        let flat: Vec<f64> = self.grid.extent.iter().flat_map(|e| [e[0], e[1]]).collect();
        out.push_str(&format!("extent = {}\n", fmt_list(&flat)));
        out.push_str(&format!(
            "cells = {}\n",
            self.grid
                .cells
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ));
        out.push_str(&format!(
            "bc = {}\n",
            match self.grid.bc {
                BoundaryCondition::ZeroFlux => "zero_flux",
                BoundaryCondition::DirichletZero => "dirichlet_zero",
                BoundaryCondition::Periodic => "periodic",
            }
        ));

        out.push_str("\n[solver]\n");
        out.push_str(&format!(
            "cfl_safety = {}\n",
            fmt_num(self.solver.cfl_safety)
        ));
        out.push_str(&format!("clip_negative = {}\n", self.solver.clip_negative));
        out.push_str(&format!(
            "coefficient_mean = {}\n",
            match self.solver.coefficient_mean {
                CoefficientMean::Arithmetic => "arithmetic",
                CoefficientMean::HarmonicRegularized => "harmonic_regularized",
            }
        ));
        out.push_str(&format!(
            "epsilon_reg = {}\n",
            fmt_num(self.solver.epsilon_reg)
        ));
        out.push_str(&format!("t_end = {}\n", fmt_num(self.solver.t_end)));
        out.push_str(&format!(
            "snapshot_interval = {}\n",
            fmt_num(self.solver.snapshot_interval)
        ));
        out.push_str(&format!("ledger_stride = {}\n", self.solver.ledger_stride));

        let emit_data = |out: &mut String, d: &InitialData| match d {
            InitialData::Barenblatt { mass, t_init } => {
                out.push_str("kind = barenblatt\n");
                out.push_str(&format!("mass = {}\n", fmt_num(*mass)));
                out.push_str(&format!("t_init = {}\n", fmt_num(*t_init)));
            }
            InitialData::Gaussian {
                center,
                sigma,
                mass,
            } => {
                out.push_str("kind = gaussian\n");
                out.push_str(&format!("center = {}\n", fmt_list(center)));
                out.push_str(&format!("sigma = {}\n", fmt_num(*sigma)));
                out.push_str(&format!("mass = {}\n", fmt_num(*mass)));
            }
            InitialData::Bump {
                center,
                radius,
                height,
            } => {
                out.push_str("kind = bump\n");
                out.push_str(&format!("center = {}\n", fmt_list(center)));
                out.push_str(&format!("radius = {}\n", fmt_num(*radius)));
                out.push_str(&format!("height = {}\n", fmt_num(*height)));
            }
        };
        match &self.initial {
            InitialSpec::PerComponent(list) => {
                for d in list {
                    out.push_str("\n[initial]\n");
                    emit_data(&mut out, d);
                }
            }
            InitialSpec::Proportional { weights, base } => {
                out.push_str("\n[initial]\n");
                out.push_str("kind = proportional\n");
                out.push_str(&format!("weights = {}\n", fmt_list(weights)));
                emit_base(&mut out, base);
            }
            InitialSpec::File(path) => {
                out.push_str("\n[initial]\n");
                out.push_str("kind = file\n");
                out.push_str(&format!("path = {}\n", path.display()));
            }
        }

        for d in &self.diagnostics {
            out.push_str("\n[diagnostic]\n");
            match d {
                DiagnosticRequest::MassSeries => out.push_str("kind = mass_series\n"),
                DiagnosticRequest::SupU { khat_t0s } => {
                    out.push_str("kind = sup_u\n");
                    if !khat_t0s.is_empty() {
                        out.push_str(&format!("khat_t0s = {}\n", fmt_list(khat_t0s)));
                    }
                }
                DiagnosticRequest::Truncation { k_scale, t0, jmax } => {
                    out.push_str("kind = truncation\n");
                    match k_scale {
                        None => out.push_str("k_scale = auto\n"),
                        Some(v) => out.push_str(&format!("k_scale = {}\n", fmt_num(*v))),
                    }
                    out.push_str(&format!("t0 = {}\n", fmt_num(*t0)));
                    out.push_str(&format!("jmax = {jmax}\n"));
                }
                DiagnosticRequest::Harnack {
                    component,
                    cylinders,
                }
                | DiagnosticRequest::PointwiseHarnack {
                    component,
                    cylinders,
                }
                | DiagnosticRequest::Smoothing {
                    component,
                    cylinders,
                } => {
                    match d {
                        DiagnosticRequest::Harnack { .. } => out.push_str("kind = harnack\n"),
                        DiagnosticRequest::PointwiseHarnack { .. } => {
                            out.push_str("kind = pointwise_harnack\n")
                        }
                        _ => out.push_str("kind = smoothing\n"),
                    }
                    out.push_str(&format!("component = {component}\n"));
                    let spec: Vec<String> = cylinders
                        .iter()
                        .map(|c| {
                            let mut toks: Vec<String> =
                                c.center.iter().map(|v| fmt_num(*v)).collect();
                            toks.push(fmt_num(c.rho));
                            toks.push(fmt_num(c.s));
                            toks.push(fmt_num(c.t));
                            toks.join(" ")
                        })
                        .collect();
                    out.push_str(&format!("cylinders = {}\n", spec.join("; ")));
                }
                DiagnosticRequest::Oscillation {
                    component,
                    center,
                    radius,
                    s_max,
                } => {
                    out.push_str("kind = oscillation\n");
                    out.push_str(&format!("component = {component}\n"));
                    out.push_str(&format!("center = {}\n", fmt_list(center)));
                    out.push_str(&format!("radius = {}\n", fmt_num(*radius)));
                    out.push_str(&format!("s_max = {s_max}\n"));
                }
                DiagnosticRequest::OscillationDecay {
                    component,
                    probes,
                    levels,
                } => {
                    out.push_str("kind = oscillation_decay\n");
                    out.push_str(&format!("component = {component}\n"));
                    let names: Vec<&str> = probes
                        .iter()
                        .map(|p| match p {
                            ProbeKind::Front => "front",
                            ProbeKind::Interior => "interior",
                            ProbeKind::NearMax => "near_max",
                        })
                        .collect();
                    out.push_str(&format!("probes = {}\n", names.join(", ")));
                    out.push_str(&format!("levels = {levels}\n"));
                }
                DiagnosticRequest::Residual => out.push_str("kind = residual\n"),
                DiagnosticRequest::CompareOracle { oracle } => {
                    out.push_str("kind = compare_oracle\n");
                    out.push_str(&format!(
                        "oracle = {}\n",
                        match oracle {
                            OracleKind::Barenblatt => "barenblatt",
                            OracleKind::HeatKernel => "heat_kernel",
                        }
                    ));
                }
                DiagnosticRequest::ProportionalDeviation => {
                    out.push_str("kind = proportional_deviation\n")
                }
            }
        }
        out
    }
}

fn emit_base(out: &mut String, base: &InitialData) {
    match base {
        InitialData::Barenblatt { mass, t_init } => {
            out.push_str(&format!("mass = {}\n", fmt_num(*mass)));
            out.push_str(&format!("t_init = {}\n", fmt_num(*t_init)));
        }
        InitialData::Gaussian {
            center,
            sigma,
            mass,
        } => {
            out.push_str(&format!("center = {}\n", fmt_list(center)));
            out.push_str(&format!("sigma = {}\n", fmt_num(*sigma)));
            out.push_str(&format!("mass = {}\n", fmt_num(*mass)));
        }
        InitialData::Bump {
            center,
            radius,
            height,
        } => {
            out.push_str(&format!("center = {}\n", fmt_list(center)));
            out.push_str(&format!("radius = {}\n", fmt_num(*radius)));
            out.push_str(&format!("height = {}\n", fmt_num(*height)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_parser_basics() {
        let text = "# top comment\n[alpha]\nx = 1\ny = a, b # tail\n\n[beta]\nz = 3\n";
        let sections = parse_raw(text).unwrap();
        assert_eq!(sections.len(), 2);
        assert_eq!(sections[0].name, "alpha");
        assert_eq!(sections[0].entries[1], ("y".into(), "a, b".into()));
        assert_eq!(sections[1].entries[0], ("z".into(), "3".into()));
    }

    #[test]
    fn raw_parser_rejects_garbage() {
        assert!(parse_raw("key_without_section = 1\n").is_err());
        assert!(parse_raw("[unterminated\n").is_err());
        assert!(parse_raw("[s]\njust words\n").is_err());
        assert!(parse_raw("[s]\na = 1\na = 2\n").is_err());
    }

    fn minimal_text() -> String {
        "
[experiment]
name = smoke
checks = mass

[exponents]
n = 1
m = 2.0
beta = 1.0
lambda = 1.0

[coupler]
kind = sum

[flux]
kind = identity

[drift]
kind = none

[grid]
extent = -1.0, 1.0
cells = 64
bc = zero_flux

[solver]
t_end = 0.01
snapshot_interval = 0.005
clip_negative = false

[initial]
kind = bump
center = 0.0
radius = 0.4
height = 0.5

[diagnostic]
kind = mass_series
"
        .to_string()
    }

    #[test]
    fn typed_config_round_trips_through_text() {
        let cfg = ExperimentConfig::from_text(&minimal_text()).unwrap();
        assert_eq!(cfg.name, "smoke");
        assert_eq!(cfg.exponents.k, 1);
        assert_eq!(cfg.checks, vec![CheckKind::Mass]);
        let emitted = cfg.to_text();
        let cfg2 = ExperimentConfig::from_text(&emitted).unwrap();
        assert_eq!(cfg2.to_text(), emitted);
    }

    #[test]
    fn config_rejects_mismatched_components() {
        let bad = minimal_text().replace("beta = 1.0", "beta = 1.0, 1.0");
        assert!(ExperimentConfig::from_text(&bad).is_err());
    }

    #[test]
    fn config_rejects_unknown_keys_and_sections() {
        let bad = minimal_text().replace("[coupler]", "[coupler]\nwhatever = 1");
        assert!(ExperimentConfig::from_text(&bad).is_err());
        let bad2 = format!("{}\n[mystery]\nx = 1\n", minimal_text());
        assert!(ExperimentConfig::from_text(&bad2).is_err());
    }

    #[test]
    fn drift_q_gate_applies_at_parse_time() {
        let bad = minimal_text().replace(
            "[exponents]\nn = 1\nm = 2.0",
            "[exponents]\nn = 1\nm = 2.0\nq = 100.0",
        );
        assert!(ExperimentConfig::from_text(&bad).is_err());
    }
}
