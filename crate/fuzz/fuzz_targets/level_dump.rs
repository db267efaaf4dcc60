#![no_main]

use ctrl::envs::GridLevel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(level) = GridLevel::parse(text) {
        let dumped = level.dump();
        assert_eq!(GridLevel::parse(&dumped).unwrap().dump(), dumped);
    }
});
