#![no_main]

use libfuzzer_sys::fuzz_target;

use cloudcache::workload::{parse_count_trace, synthesize_from_counts};

fuzz_target!(|data: &[u8]| {
    let Ok(records) = parse_count_trace(data) else {
        return;
    };
    // keep synthesized streams small
    if records.iter().map(|r| r.total_views).sum::<u64>() > 10_000 {
        return;
    }
    if let Ok(stream) = synthesize_from_counts(&records, 0) {
        let mut previous = f64::NEG_INFINITY;
        for entry in stream.take(20_000) {
            assert!(entry.time >= previous);
            previous = entry.time;
        }
    }
});
