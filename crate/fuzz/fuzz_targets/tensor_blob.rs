#![no_main]

use libfuzzer_sys::fuzz_target;
use salinst::tensor::{decode_tensor, read_tensors, write_tensors};

fuzz_target!(|data: &[u8]| {
    if let Ok((t, used)) = decode_tensor(data) {
        assert!(used <= data.len());
        assert_eq!(used, 32 + 4 * t.shape().len());
    }
    if let Ok(ts) = read_tensors(data) {
        let mut again = Vec::new();
        write_tensors(&mut again, &ts.iter().collect::<Vec<_>>()).unwrap();
        assert_eq!(again, data);
    }
});
