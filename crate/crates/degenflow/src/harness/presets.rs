//! Canned experiment configurations, one per verified statement.

use crate::error::{Error, Result};
use crate::grid::BoundaryCondition;
use crate::model::{CouplerSpec, DriftLaw, Exponents, FluxLaw, StructureConstants};
use crate::solver::{CoefficientMean, SolverConfig};

use super::config::{
    CheckKind, DiagnosticRequest, ExperimentConfig, GridSpec, HarnackCylinder, InitialData,
    InitialSpec, OracleKind, ProbeKind,
};

pub const PRESET_NAMES: &[&str] = &[
    "thm11_bound",
    "thm12_mass_m1",
    "thm13_mass_degenerate",
    "thm14_mass_singular",
    "thm16_continuity",
    "oracle_convergence",
    "harnack_fit",
];

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    match name {
        "thm11_bound" => Ok(thm11_bound()),
        "thm12_mass_m1" => Ok(thm12_mass_m1()),
        "thm13_mass_degenerate" => Ok(thm13_mass_degenerate()),
        "thm14_mass_singular" => Ok(thm14_mass_singular()),
        "thm16_continuity" => Ok(thm16_continuity()),
        "oracle_convergence" => Ok(oracle_convergence()),
        "harnack_fit" => Ok(harnack_fit()),
        other => Err(Error::Config(format!(
            "unknown preset {other:?}; valid names: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

fn solver(t_end: f64, snapshot_interval: f64, ledger_stride: u64, clip: bool) -> SolverConfig {
    SolverConfig {
        cfl_safety: 0.4,
        clip_negative: clip,
        coefficient_mean: CoefficientMean::Arithmetic,
        epsilon_reg: 1e-12,
        t_end,
        snapshot_interval,
        ledger_stride,
    }
}

/// Uniform bound of the controller: scalar degenerate run seeded with the
/// self-similar solution; the sup series must not increase and the measured
/// K_hat(t0) onset values must follow the self-similar decay rate.
fn thm11_bound() -> ExperimentConfig {
    ExperimentConfig {
        name: "thm11_bound".into(),
        seed: 42,
        waive_structure: false,
        exponents: Exponents::new(2, 2.0, vec![1.0], vec![1.0]).unwrap(),
        coupler: CouplerSpec::sum(),
        flux: FluxLaw::identity(),
        drift: DriftLaw::none(),
        grid: GridSpec {
            extent: vec![[-2.0, 2.0], [-2.0, 2.0]],
            cells: vec![128, 128],
            bc: BoundaryCondition::ZeroFlux,
        },
        initial: InitialSpec::PerComponent(vec![InitialData::Barenblatt {
            mass: 1.0,
            t_init: 0.005,
        }]),
        solver: solver(0.1, 0.002, 50, false),
        diagnostics: vec![
            DiagnosticRequest::MassSeries,
            DiagnosticRequest::SupU {
                khat_t0s: vec![0.01, 0.02, 0.04, 0.08],
            },
        ],
        checks: vec![
            CheckKind::Structure,
            CheckKind::Mass,
            CheckKind::SupMonotone,
            CheckKind::KhatRate,
            CheckKind::BoundaryGuard,
        ],
    }
}

/// Nondegenerate mass conservation with a perturbed flux: m = 1, k = 2,
/// total-population coupler, rotated flux claiming c = 0.5, C3 = 2.
fn thm12_mass_m1() -> ExperimentConfig {
    let constants = StructureConstants::new(0.5, 1.0, 0.0, 2.0, 0.0, 0.0).unwrap();
    ExperimentConfig {
        name: "thm12_mass_m1".into(),
        seed: 42,
        waive_structure: false,
        exponents: Exponents::new(2, 1.0, vec![1.0, 1.0], vec![1.0, 1.0]).unwrap(),
        coupler: CouplerSpec::sum(),
        flux: FluxLaw::scaled_rotated(0.5, 1.0, constants),
        drift: DriftLaw::none(),
        grid: GridSpec {
            extent: vec![[-3.0, 3.0], [-3.0, 3.0]],
            cells: vec![128, 128],
            bc: BoundaryCondition::ZeroFlux,
        },
        initial: InitialSpec::PerComponent(vec![
            InitialData::Gaussian {
                center: vec![-0.3, 0.0],
                sigma: 0.25,
                mass: 1.0,
            },
            InitialData::Gaussian {
                center: vec![0.3, 0.1],
                sigma: 0.25,
                mass: 0.5,
            },
        ]),
        solver: solver(0.1, 0.01, 20, false),
        diagnostics: vec![
            DiagnosticRequest::MassSeries,
            DiagnosticRequest::SupU { khat_t0s: vec![] },
        ],
        checks: vec![
            CheckKind::Structure,
            CheckKind::Mass,
            CheckKind::SupMonotone,
            CheckKind::BoundaryGuard,
        ],
    }
}

/// Degenerate mass conservation: m = 2 > max(1, 2 - 1/beta), 1-D, bump data.
fn thm13_mass_degenerate() -> ExperimentConfig {
    ExperimentConfig {
        name: "thm13_mass_degenerate".into(),
        seed: 42,
        waive_structure: false,
        exponents: Exponents::new(1, 2.0, vec![1.0, 1.0], vec![1.0, 1.0]).unwrap(),
        coupler: CouplerSpec::sum(),
        flux: FluxLaw::identity(),
        drift: DriftLaw::none(),
        grid: GridSpec {
            extent: vec![[-2.0, 2.0]],
            cells: vec![4096],
            bc: BoundaryCondition::ZeroFlux,
        },
        initial: InitialSpec::PerComponent(vec![
            InitialData::Bump {
                center: vec![-0.2],
                radius: 0.5,
                height: 0.3,
            },
            InitialData::Bump {
                center: vec![0.2],
                radius: 0.5,
                height: 0.24,
            },
        ]),
        solver: solver(0.5, 0.05, 2000, false),
        diagnostics: vec![
            DiagnosticRequest::MassSeries,
            DiagnosticRequest::SupU { khat_t0s: vec![] },
        ],
        checks: vec![
            CheckKind::Structure,
            CheckKind::Mass,
            CheckKind::BoundaryGuard,
        ],
    }
}

/// Singular (fast diffusion) mass conservation at m_i = 0.95 inside the
/// supercritical window (10/11, 1) for n = 2; compactly supported bumps.
/// Fast diffusion spreads essentially at heat speed away from the bumps,
/// so the box leaves ~4.5 units between support and boundary to hold the
/// truncation guard at 1e-10.
fn thm14_mass_singular() -> ExperimentConfig {
    ExperimentConfig {
        name: "thm14_mass_singular".into(),
        seed: 42,
        waive_structure: false,
        exponents: Exponents::new(2, 0.95, vec![1.0, 1.0], vec![1.0, 1.0]).unwrap(),
        coupler: CouplerSpec::sum(),
        flux: FluxLaw::identity(),
        drift: DriftLaw::none(),
        grid: GridSpec {
            extent: vec![[-5.0, 5.0], [-5.0, 5.0]],
            cells: vec![256, 256],
            bc: BoundaryCondition::ZeroFlux,
        },
        initial: InitialSpec::PerComponent(vec![
            InitialData::Bump {
                center: vec![0.0, 0.0],
                radius: 0.4,
                height: 0.5,
            },
            InitialData::Bump {
                center: vec![0.1, 0.0],
                radius: 0.4,
                height: 0.3,
            },
        ]),
        solver: solver(0.05, 0.005, 500, false),
        diagnostics: vec![
            DiagnosticRequest::MassSeries,
            DiagnosticRequest::SupU { khat_t0s: vec![] },
        ],
        checks: vec![
            CheckKind::Structure,
            CheckKind::Mass,
            CheckKind::BoundaryGuard,
        ],
    }
}

/// Local continuity: oscillation decay on nested intrinsically scaled
/// cylinders for a degenerate two-component run. m = 1.3 keeps the
/// intrinsic time depths inside a desk-scale trajectory while satisfying
/// m > max(1, 2 - 1/beta).
fn thm16_continuity() -> ExperimentConfig {
    ExperimentConfig {
        name: "thm16_continuity".into(),
        seed: 42,
        waive_structure: false,
        exponents: Exponents::new(1, 1.3, vec![1.0, 1.0], vec![1.0, 1.0]).unwrap(),
        coupler: CouplerSpec::sum(),
        flux: FluxLaw::identity(),
        drift: DriftLaw::none(),
        grid: GridSpec {
            extent: vec![[-4.5, 4.5]],
            cells: vec![1024],
            bc: BoundaryCondition::ZeroFlux,
        },
        initial: InitialSpec::PerComponent(vec![
            InitialData::Bump {
                center: vec![0.0],
                radius: 0.8,
                height: 0.3,
            },
            InitialData::Bump {
                center: vec![0.15],
                radius: 0.8,
                height: 0.24,
            },
        ]),
        solver: solver(1.25, 0.005, 500, false),
        diagnostics: vec![
            DiagnosticRequest::MassSeries,
            DiagnosticRequest::OscillationDecay {
                component: 0,
                probes: vec![ProbeKind::Front, ProbeKind::Interior, ProbeKind::NearMax],
                levels: 5,
            },
        ],
        checks: vec![
            CheckKind::Structure,
            CheckKind::Mass,
            CheckKind::OscillationSigma,
            CheckKind::BoundaryGuard,
        ],
    }
}

/// Solver vs the self-similar oracle (m = 2, n = 1). The acceptance suite
/// reruns this at 1024/2048/4096 cells for the order study.
fn oracle_convergence() -> ExperimentConfig {
    ExperimentConfig {
        name: "oracle_convergence".into(),
        seed: 42,
        waive_structure: false,
        exponents: Exponents::new(1, 2.0, vec![1.0], vec![1.0]).unwrap(),
        coupler: CouplerSpec::sum(),
        flux: FluxLaw::identity(),
        drift: DriftLaw::none(),
        grid: GridSpec {
            extent: vec![[-3.1, 3.1]],
            cells: vec![1024],
            bc: BoundaryCondition::ZeroFlux,
        },
        initial: InitialSpec::PerComponent(vec![InitialData::Barenblatt {
            mass: 1.0,
            t_init: 0.05,
        }]),
        solver: solver(0.5, 0.05, 1000, false),
        diagnostics: vec![
            DiagnosticRequest::MassSeries,
            DiagnosticRequest::CompareOracle {
                oracle: OracleKind::Barenblatt,
            },
            DiagnosticRequest::Residual,
        ],
        checks: vec![
            CheckKind::Structure,
            CheckKind::Mass,
            CheckKind::OracleL1,
            CheckKind::BoundaryGuard,
        ],
    }
}

/// Integral Harnack ratios on a fast-diffusion run (n = 2, m_i = 0.95):
/// gamma is fitted at five space-time cylinders; the acceptance suite
/// repeats the run at 256^2 and compares matched cylinders.
fn harnack_fit() -> ExperimentConfig {
    let cylinders = vec![
        HarnackCylinder {
            center: vec![0.0, 0.0],
            rho: 0.30,
            s: 0.020,
            t: 0.038,
        },
        HarnackCylinder {
            center: vec![0.2, 0.0],
            rho: 0.25,
            s: 0.022,
            t: 0.036,
        },
        HarnackCylinder {
            center: vec![0.0, 0.25],
            rho: 0.25,
            s: 0.024,
            t: 0.038,
        },
        HarnackCylinder {
            center: vec![-0.3, 0.1],
            rho: 0.20,
            s: 0.020,
            t: 0.032,
        },
        HarnackCylinder {
            center: vec![0.1, -0.2],
            rho: 0.22,
            s: 0.026,
            t: 0.039,
        },
    ];
    ExperimentConfig {
        name: "harnack_fit".into(),
        seed: 42,
        waive_structure: false,
        exponents: Exponents::new(2, 0.95, vec![1.0], vec![1.0]).unwrap(),
        coupler: CouplerSpec::sum(),
        flux: FluxLaw::identity(),
        drift: DriftLaw::none(),
        grid: GridSpec {
            extent: vec![[-2.5, 2.5], [-2.5, 2.5]],
            cells: vec![128, 128],
            bc: BoundaryCondition::ZeroFlux,
        },
        initial: InitialSpec::PerComponent(vec![InitialData::Barenblatt {
            mass: 1.0,
            t_init: 0.015,
        }]),
        solver: solver(0.04, 0.00125, 100, false),
        diagnostics: vec![
            DiagnosticRequest::MassSeries,
            DiagnosticRequest::Harnack {
                component: 0,
                cylinders,
            },
            // The sup and smoothing estimates reach back to 2s - t, so
            // their windows sit later in the run.
            DiagnosticRequest::Smoothing {
                component: 0,
                cylinders: vec![
                    HarnackCylinder {
                        center: vec![0.0, 0.0],
                        rho: 0.30,
                        s: 0.030,
                        t: 0.038,
                    },
                    HarnackCylinder {
                        center: vec![0.2, 0.0],
                        rho: 0.25,
                        s: 0.029,
                        t: 0.036,
                    },
                ],
            },
            DiagnosticRequest::PointwiseHarnack {
                component: 0,
                cylinders: vec![
                    HarnackCylinder {
                        center: vec![0.0, 0.0],
                        rho: 0.30,
                        s: 0.030,
                        t: 0.038,
                    },
                    HarnackCylinder {
                        center: vec![0.2, 0.0],
                        rho: 0.25,
                        s: 0.029,
                        t: 0.036,
                    },
                    HarnackCylinder {
                        center: vec![0.0, 0.25],
                        rho: 0.25,
                        s: 0.031,
                        t: 0.038,
                    },
                    HarnackCylinder {
                        center: vec![-0.3, 0.1],
                        rho: 0.20,
                        s: 0.027,
                        t: 0.032,
                    },
                    HarnackCylinder {
                        center: vec![0.1, -0.2],
                        rho: 0.22,
                        s: 0.033,
                        t: 0.039,
                    },
                ],
            },
        ],
        checks: vec![CheckKind::Structure, CheckKind::HarnackGamma],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_preset_lists_names() {
        let err = preset("nope").unwrap_err();
        let msg = err.to_string();
        for name in PRESET_NAMES {
            assert!(msg.contains(name), "{msg}");
        }
    }

    #[test]
    fn all_presets_emit_and_reparse() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            cfg.validate().expect(name);
            let text = cfg.to_text();
            let back = ExperimentConfig::from_text(&text).expect(name);
            assert_eq!(back.to_text(), text, "{name}");
        }
    }

    #[test]
    fn preset_exponents_match_their_statements() {
        let c = preset("thm12_mass_m1").unwrap();
        assert_eq!(c.exponents.m, 1.0);
        assert_eq!(c.exponents.k, 2);
        assert_eq!(c.drift.constants.c5, 0.0);
        assert_eq!(c.flux.constants.c, 0.5);
        assert_eq!(c.flux.constants.c3, 2.0);

        let c = preset("thm13_mass_degenerate").unwrap();
        assert!(c.exponents.m > (2.0f64 - 1.0 / c.exponents.beta[0]).max(1.0));

        let c = preset("thm14_mass_singular").unwrap();
        let d = c.exponents.derived();
        let (lo, hi) = crate::model::singular_mass_range(2, false);
        assert!(d.m_i[0] > lo && d.m_i[0] < hi);

        let c = preset("thm16_continuity").unwrap();
        assert!(c.exponents.m > 1.0);

        let c = preset("thm11_bound").unwrap();
        assert!(c.exponents.m > crate::model::critical_exponent(c.exponents.n));
    }
}
