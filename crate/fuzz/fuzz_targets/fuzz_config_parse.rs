#![no_main]

use libfuzzer_sys::fuzz_target;

// Scenario configs come from users; parsing and semantic validation must
// never panic, whatever the bytes.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = cheom::config::parse_config_str(text);
    }
});
