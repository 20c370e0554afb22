#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // The snapshot decoder runs on untrusted files and must reject
    // malformed input without panicking or over-allocating.
    let _ = degenflow::snapshot::parse_snapshot(data);
});
