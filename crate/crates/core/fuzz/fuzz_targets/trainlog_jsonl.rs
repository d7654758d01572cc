#![no_main]

use libfuzzer_sys::fuzz_target;
use quizforge::agents::TrainLog;

fuzz_target!(|data: &[u8]| {
    if let Ok(log) = TrainLog::read_jsonl(data) {
        let mut out = Vec::new();
        log.write_jsonl(&mut out).unwrap();
    }
});
