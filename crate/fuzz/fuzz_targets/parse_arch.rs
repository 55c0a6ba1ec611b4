#![no_main]

use hetconv::arch::{cost_report, emit_arch, parse_arch};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(arch) = parse_arch(text) else { return };
    // Accepted specs are valid, so costing must not fail and emission must
    // be a fixed point.
    cost_report(&arch, None).expect("parsed spec is costable");
    let emitted = emit_arch(&arch);
    let again = parse_arch(&emitted).expect("emitted spec parses");
    assert_eq!(again, arch);
    assert_eq!(emit_arch(&again), emitted);
});
