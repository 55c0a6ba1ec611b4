#![no_main]

use hetconv::conv::WeightFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(w) = WeightFile::from_bytes(data) else { return };
    let bytes = w.to_bytes();
    let again = WeightFile::from_bytes(&bytes).expect("re-encoded file decodes");
    assert_eq!(again.to_bytes(), bytes);
});
