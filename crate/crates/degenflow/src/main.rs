//! Command-line entry point.
//!
//! Subcommands:
//!   run <config> [--out DIR]          execute an experiment file
//!   preset <name> [--emit-config [F]] print (or write) a canned experiment
//!   validate <config>                 parse + structure-validate only
//!   compare <dirA> <dirB> --norm l1|linf
//!   report <dir>                      reprint a finished run's summary
//!
//! Exit codes: 0 success, 1 check failure, 2 config error,
//! 3 structure/regime rejection, 4 numerical blowup.

use std::path::Path;
use std::process::ExitCode;

use degenflow::harness::{
    self, compare_trajectories, preset, read_summary, ExperimentConfig, Norm, PRESET_NAMES,
};
use degenflow::model::{generate_samples, validate_structure};
use degenflow::snapshot::read_trajectory;
use degenflow::util::fmt_g17;
use degenflow::Error;

const USAGE: &str = "usage:
  degenflow run <config> [--out DIR]
  degenflow preset <name> [--emit-config [FILE]]
  degenflow validate <config>
  degenflow compare <dirA> <dirB> --norm l1|linf
  degenflow report <dir>

artifact root: --out, else $DEGENFLOW_OUT, else ./degenflow_out";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match dispatch(&args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(args: &[String]) -> Result<ExitCode, Error> {
    let cmd = args.first().map(String::as_str).unwrap_or("");
    match cmd {
        "run" => cmd_run(&args[1..]),
        "preset" => cmd_preset(&args[1..]),
        "validate" => cmd_validate(&args[1..]),
        "compare" => cmd_compare(&args[1..]),
        "report" => cmd_report(&args[1..]),
        "" | "help" | "--help" | "-h" => {
            println!("{USAGE}");
            Ok(ExitCode::SUCCESS)
        }
        other => Err(Error::Config(format!(
            "unknown subcommand {other:?}\n{USAGE}"
        ))),
    }
}

fn load_config(path: &str) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {path}: {e}")))?;
    ExperimentConfig::from_text(&text)
}

fn cmd_run(args: &[String]) -> Result<ExitCode, Error> {
    let mut config_path = None;
    let mut out = None;
    let mut i = 0;
    while i < args.len() {
        match args[i].as_str() {
            "--out" => {
                out = Some(
                    args.get(i + 1)
                        .ok_or_else(|| Error::Config("--out needs a directory".into()))?
                        .clone(),
                );
                i += 2;
            }
            other if config_path.is_none() => {
                config_path = Some(other.to_string());
                i += 1;
            }
            other => return Err(Error::Config(format!("unexpected argument {other:?}"))),
        }
    }
    let config_path =
        config_path.ok_or_else(|| Error::Config(format!("run needs a config file\n{USAGE}")))?;
    let config = load_config(&config_path)?;
    let root = harness::artifact_root(out.as_deref());
    let outcome = harness::run(&config, &root)?;
    print!("{}", outcome.summary.to_text());
    println!("artifacts: {}", outcome.dir.display());
    if outcome.summary.all_passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

fn cmd_preset(args: &[String]) -> Result<ExitCode, Error> {
    let name = args.first().ok_or_else(|| {
        Error::Config(format!("preset needs a name: {}", PRESET_NAMES.join(", ")))
    })?;
    let config = preset(name)?;
    let text = config.to_text();
    match args.get(1).map(String::as_str) {
        None => print!("{text}"),
        Some("--emit-config") => {
            let file = args
                .get(2)
                .cloned()
                .unwrap_or_else(|| format!("{name}.cfg"));
            std::fs::write(&file, text)?;
            println!("wrote {file}");
        }
        Some(other) => return Err(Error::Config(format!("unexpected argument {other:?}"))),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(args: &[String]) -> Result<ExitCode, Error> {
    let path = args
        .first()
        .ok_or_else(|| Error::Config("validate needs a config file".into()))?;
    let config = load_config(path)?;
    if config.waive_structure {
        println!("config parses; structure validation waived");
        return Ok(ExitCode::SUCCESS);
    }
    let samples = generate_samples(
        config.seed,
        harness::thresholds::STRUCTURE_SAMPLES,
        config.exponents.n,
        config.exponents.k,
    );
    let report = validate_structure(
        &config.flux,
        &config.drift,
        &config.coupler,
        &config.exponents,
        &samples,
    )?;
    println!("{}", report.to_json());
    if report.passed() {
        println!("structure validation: PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        Err(Error::Structure("see report above".into()))
    }
}

fn cmd_compare(args: &[String]) -> Result<ExitCode, Error> {
    let mut dirs = Vec::new();
    let mut norm = Norm::L1;
    let mut i = 0;
    while i < args.len() {
        match args[i].as_str() {
            "--norm" => {
                norm = Norm::parse(
                    args.get(i + 1)
                        .ok_or_else(|| Error::Config("--norm needs l1 or linf".into()))?,
                )?;
                i += 2;
            }
            other => {
                dirs.push(other.to_string());
                i += 1;
            }
        }
    }
    if dirs.len() != 2 {
        return Err(Error::Config(format!(
            "compare needs two directories\n{USAGE}"
        )));
    }
    let a = read_trajectory(Path::new(&dirs[0]))?;
    let b = read_trajectory(Path::new(&dirs[1]))?;
    let report = compare_trajectories(&a, &b, norm)?;
    if !report.matched_exact {
        println!("# snapshot times matched by nearest neighbor");
    }
    println!(
        "t,{}",
        (1..=a.k())
            .map(|i| format!("err_{i}"))
            .collect::<Vec<_>>()
            .join(",")
    );
    for (t, errs) in &report.entries {
        let cols: Vec<String> = errs.iter().map(|e| fmt_g17(*e)).collect();
        println!("{},{}", fmt_g17(*t), cols.join(","));
    }
    println!(
        "# max per component: {}",
        report
            .max_error
            .iter()
            .map(|e| fmt_g17(*e))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(args: &[String]) -> Result<ExitCode, Error> {
    let dir = args
        .first()
        .ok_or_else(|| Error::Config("report needs a run directory".into()))?;
    let summary = read_summary(Path::new(dir))?;
    print!("{}", summary.to_text());
    if summary.all_passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}
