#![no_main]

use libfuzzer_sys::fuzz_target;
use tripcast::frame::{ingest_long_csv, write_long_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(frames) = ingest_long_csv(data) else {
        return;
    };
    // Anything accepted must survive a write/read cycle unchanged.
    let mut out = Vec::new();
    write_long_csv(&frames, &mut out).unwrap();
    assert_eq!(ingest_long_csv(out.as_slice()).unwrap(), frames);
});
