//! The checked-in fuzz corpus seeds must stay valid inputs for their
//! parsers; a format change that orphans them should fail here.

use std::fs;
use std::path::PathBuf;

use degenflow::harness::ExperimentConfig;
use degenflow::snapshot::{parse_meta, parse_snapshot};

fn corpus(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fuzz/corpus")
        .join(target);
    let mut out = Vec::new();
    for entry in fs::read_dir(&dir).unwrap_or_else(|e| panic!("{}: {e}", dir.display())) {
        let path = entry.unwrap().path();
        let bytes = fs::read(&path).unwrap();
        out.push((path, bytes));
    }
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn snapshot_seeds_parse() {
    for (path, bytes) in corpus("fuzz_snapshot_parse") {
        let state = parse_snapshot(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(state.k() >= 1);
    }
}

#[test]
fn meta_seeds_parse() {
    for (path, bytes) in corpus("fuzz_meta_parse") {
        let meta = parse_meta(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(!meta.snapshots.is_empty());
    }
}

#[test]
fn config_seeds_parse() {
    for (path, bytes) in corpus("fuzz_config_parse") {
        let text = std::str::from_utf8(&bytes).unwrap();
        let cfg =
            ExperimentConfig::from_text(text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(!cfg.name.is_empty());
    }
}
