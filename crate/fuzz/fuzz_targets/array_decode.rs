#![no_main]

use dris_core::io::{decode_array, encode_array};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Anything that decodes must re-encode to the same bytes.
    if let Ok(a) = decode_array(data) {
        let bytes = encode_array(&a).expect("decoded arrays re-encode");
        assert_eq!(bytes, data);
    }
});
