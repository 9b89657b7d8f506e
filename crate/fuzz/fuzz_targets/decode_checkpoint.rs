#![no_main]

use libfuzzer_sys::fuzz_target;
use tripcast::checkpoint::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = decode_checkpoint(data) {
        let bytes = encode_checkpoint(&ck.params, &ck.state).unwrap();
        let again = decode_checkpoint(&bytes).unwrap();
        assert_eq!(again.state.iteration, ck.state.iteration);
        assert_eq!(again.params.len(), ck.params.len());
    }
});
