#![no_main]

use libfuzzer_sys::fuzz_target;
use sonospine::formats;

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = formats::decode_metrics(data) {
        let bytes = formats::encode_metrics(&v);
        let again = formats::decode_metrics(&bytes).expect("re-encoded output decodes");
        assert_eq!(formats::encode_metrics(&again), bytes);
    }
});
