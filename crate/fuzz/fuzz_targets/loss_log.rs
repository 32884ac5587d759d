#![no_main]

use libfuzzer_sys::fuzz_target;
use sonospine::formats;

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = formats::decode_loss_log(data) {
        let bytes = formats::encode_loss_log(&v);
        let again = formats::decode_loss_log(&bytes).expect("re-encoded output decodes");
        assert_eq!(formats::encode_loss_log(&again), bytes);
    }
});
