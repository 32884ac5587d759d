#![no_main]

use libfuzzer_sys::fuzz_target;
use sonospine::formats;

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = formats::decode_labels(data) {
        let bytes = formats::encode_labels(&v);
        let again = formats::decode_labels(&bytes).expect("re-encoded output decodes");
        assert_eq!(formats::encode_labels(&again), bytes);
    }
});
