#![no_main]

use libfuzzer_sys::fuzz_target;
use sonospine::formats;

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = formats::decode_volume(data) {
        assert_eq!(v.intensity.len(), v.spec.len());
        assert_eq!(v.sp_label.len(), v.spec.len());
    }
});
