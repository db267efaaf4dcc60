#![no_main]

use ctrl::runner::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = ExperimentConfig::parse(text) {
        let rendered = config.render();
        assert_eq!(
            ExperimentConfig::parse(&rendered).unwrap().render(),
            rendered
        );
    }
});
