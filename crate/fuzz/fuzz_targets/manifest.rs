#![no_main]

use libfuzzer_sys::fuzz_target;
use sonospine::formats;

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = formats::decode_manifest(data) {
        let bytes = formats::encode_manifest(&v);
        let again = formats::decode_manifest(&bytes).expect("re-encoded output decodes");
        assert_eq!(formats::encode_manifest(&again), bytes);
    }
});
