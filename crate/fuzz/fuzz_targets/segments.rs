#![no_main]

use libfuzzer_sys::fuzz_target;
use sonospine::formats;

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = formats::decode_segments(data) {
        let bytes = formats::encode_segments(&v);
        let again = formats::decode_segments(&bytes).expect("re-encoded output decodes");
        assert_eq!(formats::encode_segments(&again), bytes);
    }
});
