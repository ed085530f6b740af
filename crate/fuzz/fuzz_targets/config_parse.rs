#![no_main]

use dris_sim::parse_config_str;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = parse_config_str(text, "fuzz") {
        assert_eq!(parse_config_str(&cfg.to_toml(), "fuzz").unwrap(), cfg);
    }
});
