#![no_main]

use libfuzzer_sys::fuzz_target;
use salinst::training::{Checkpoint, CheckpointManifest};

// Manifest JSON, a NUL byte, then the parameter blob.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let Ok(text) = std::str::from_utf8(&data[..split]) else {
        return;
    };
    let blob = data.get(split + 1..).unwrap_or(&[]);
    if let Ok(m) = CheckpointManifest::parse(text) {
        if let Ok(c) = Checkpoint::from_parts(&m, blob) {
            assert_eq!(c.blob(), blob);
        }
    }
});
