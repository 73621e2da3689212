#![no_main]

use libfuzzer_sys::fuzz_target;
use salinst::dataio::decode_image;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = decode_image(data) {
        assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
