#![no_main]

use libfuzzer_sys::fuzz_target;
use sonospine::formats;

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = formats::decode_poses(data) {
        let bytes = formats::encode_poses(&v);
        let again = formats::decode_poses(&bytes).expect("re-encoded output decodes");
        assert_eq!(formats::encode_poses(&again), bytes);
    }
});
