#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = quizforge::datagen::parse_csv(data, None) {
        let mut out = Vec::new();
        quizforge::datagen::write_csv(&ds, &mut out).unwrap();
        let again = quizforge::datagen::parse_csv(out.as_slice(), None).unwrap();
        assert_eq!(again.mcqs, ds.mcqs);
    }
});
