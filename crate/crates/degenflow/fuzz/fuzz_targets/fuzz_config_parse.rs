#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Config files are text; skip invalid UTF-8.
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // Parsing must never panic; errors are the expected outcome for
    // malformed experiments.
    let _ = degenflow::harness::ExperimentConfig::from_text(text);
});
