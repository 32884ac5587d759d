#![no_main]

use libfuzzer_sys::fuzz_target;
use sonospine::formats;

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = formats::decode_pgm(data) {
        let bytes = formats::encode_pgm(&v);
        let again = formats::decode_pgm(&bytes).expect("re-encoded output decodes");
        assert_eq!(formats::encode_pgm(&again), bytes);
    }
});
