#![no_main]

use libfuzzer_sys::fuzz_target;
use sonospine::formats;

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = formats::decode_sp_points(data) {
        let bytes = formats::encode_sp_points(&v);
        let again = formats::decode_sp_points(&bytes).expect("re-encoded output decodes");
        assert_eq!(formats::encode_sp_points(&again), bytes);
    }
});
