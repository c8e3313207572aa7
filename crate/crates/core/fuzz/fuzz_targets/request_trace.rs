#![no_main]

use libfuzzer_sys::fuzz_target;

use cloudcache::workload::parse_request_trace;

fuzz_target!(|data: &[u8]| {
    let mut previous = f64::NEG_INFINITY;
    for entry in parse_request_trace(data) {
        let Ok(entry) = entry else { break };
        assert!(entry.time.is_finite() && entry.time >= previous);
        assert!(entry.movie >= 1 && entry.ad.is_none_or(|a| a >= 1));
        previous = entry.time;
    }
});
