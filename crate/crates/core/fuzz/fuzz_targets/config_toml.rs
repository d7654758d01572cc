#![no_main]

use libfuzzer_sys::fuzz_target;
use quizforge::config::Config;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = Config::from_parts(text, None, &[]) {
            let _ = cfg.plan();
            let _ = cfg.to_json();
        }
    }
});
