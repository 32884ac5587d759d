#![no_main]

use libfuzzer_sys::fuzz_target;
use sonospine::config::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = std::str::from_utf8(data).map_err(drop).and_then(|t| PipelineConfig::from_toml(t).map_err(drop)) {
        let text = cfg.to_toml();
        assert_eq!(PipelineConfig::from_toml(&text).expect("own output parses").to_toml(), text);
    }
});
