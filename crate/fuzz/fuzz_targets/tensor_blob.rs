#![no_main]

use hetconv::Tensor4;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((t, used)) = Tensor4::read_blob(data) {
        assert_eq!(t.to_blob(), &data[..used]);
    }
    if let Ok(t) = Tensor4::from_blob(data) {
        assert_eq!(t.to_blob(), data);
    }
});
