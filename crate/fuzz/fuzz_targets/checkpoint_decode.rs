#![no_main]

use ctrl::diffcore::checkpoint::{decode, encode};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Anything that decodes must re-encode to the same bytes.
    if let Ok(params) = decode(data) {
        let bytes = encode(&params);
        assert_eq!(encode(&decode(&bytes).unwrap()), bytes);
    }
});
