#![no_main]

use libfuzzer_sys::fuzz_target;
use quizforge::env::Universe;

fuzz_target!(|data: &[u8]| {
    if let Ok(u) = Universe::read_jsonl(data) {
        let mut out = Vec::new();
        u.write_jsonl(&mut out).unwrap();
        let again = Universe::read_jsonl(out.as_slice()).unwrap();
        assert_eq!(again.quizzes(), u.quizzes());
    }
});
