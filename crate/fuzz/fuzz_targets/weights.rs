#![no_main]

use libfuzzer_sys::fuzz_target;
use sonospine::formats;

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = formats::decode_weights(data) {
        let bytes = formats::encode_weights(&v);
        let again = formats::decode_weights(&bytes).expect("re-encoded output decodes");
        assert_eq!(formats::encode_weights(&again), bytes);
    }
});
