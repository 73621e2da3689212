#![no_main]

use libfuzzer_sys::fuzz_target;
use salinst::proposals::{rle_decode, rle_encode};

// Two bytes of dimensions followed by little-endian u16 run lengths.
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let (h, w) = (data[0] as usize, data[1] as usize);
    let runs: Vec<u64> = data[2..].chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as u64).collect();
    if let Ok(m) = rle_decode(h, w, &runs) {
        assert_eq!(m.dims(), (h, w));
        assert_eq!(rle_decode(h, w, &rle_encode(&m)).unwrap(), m);
    }
});
