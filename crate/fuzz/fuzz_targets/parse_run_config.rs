#![no_main]

use libfuzzer_sys::fuzz_target;
use tripcast::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::parse(text) {
        // The echo of an accepted config is itself accepted.
        assert!(RunConfig::parse(&cfg.to_kv()).is_ok());
    }
});
