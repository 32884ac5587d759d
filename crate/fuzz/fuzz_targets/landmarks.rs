#![no_main]

use libfuzzer_sys::fuzz_target;
use sonospine::formats;

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = formats::decode_landmarks(data) {
        let bytes = formats::encode_landmarks(&v);
        let again = formats::decode_landmarks(&bytes).expect("re-encoded output decodes");
        assert_eq!(formats::encode_landmarks(&again), bytes);
    }
});
