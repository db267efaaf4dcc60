#![no_main]

use ctrl::runner::{metrics_to_csv, parse_metrics};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(rows) = parse_metrics(text) {
        let csv = metrics_to_csv(&rows).unwrap();
        assert_eq!(metrics_to_csv(&parse_metrics(&csv).unwrap()).unwrap(), csv);
    }
});
