#![no_main]

use libfuzzer_sys::fuzz_target;

// The binary noise-path format is a replay input; decoding must never
// panic, and anything that decodes must re-encode to the identical bytes.
fuzz_target!(|data: &[u8]| {
    if let Ok(path) = cheom::noise::NoisePath::from_bytes(data) {
        let bytes = path.to_bytes();
        assert_eq!(bytes, data, "decode/encode must round-trip");
    }
});
