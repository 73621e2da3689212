#![no_main]

use libfuzzer_sys::fuzz_target;
use salinst::proposals::{read_proposals, write_proposals};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(ps) = read_proposals(text) {
        let again = read_proposals(&write_proposals(&ps)).unwrap();
        assert_eq!(again.len(), ps.len());
        for (a, b) in again.iter().zip(&ps) {
            assert_eq!(a.mask, b.mask);
        }
    }
});
