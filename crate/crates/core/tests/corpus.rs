//! Replays the checked-in fuzz seeds through the same entry points and
//! properties as the fuzz targets.

use std::fs;
use std::path::PathBuf;

use tripcast::checkpoint::{decode_checkpoint, encode_checkpoint};
use tripcast::config::RunConfig;
use tripcast::frame::{ingest_long_csv, write_long_csv};
use tripcast::synth::SynthConfig;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn ingest_seeds_round_trip() {
    for (name, bytes) in seeds("ingest_long_csv") {
        let frames = ingest_long_csv(bytes.as_slice()).unwrap_or_else(|e| panic!("{name}: {e}"));
        let mut out = Vec::new();
        write_long_csv(&frames, &mut out).unwrap();
        assert_eq!(ingest_long_csv(out.as_slice()).unwrap(), frames, "{name}");
    }
}

#[test]
fn checkpoint_seeds_decode_or_fail_cleanly() {
    for (name, bytes) in seeds("decode_checkpoint") {
        match decode_checkpoint(&bytes) {
            Ok(ck) => {
                let again = encode_checkpoint(&ck.params, &ck.state).unwrap();
                assert_eq!(again, bytes, "{name}");
            }
            Err(e) => assert!(name.contains("header"), "{name}: {e}"),
        }
    }
}

#[test]
fn config_seeds_parse_and_echo() {
    for (name, bytes) in seeds("parse_run_config") {
        let text = String::from_utf8(bytes).unwrap();
        let cfg = RunConfig::parse(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        let echoed = RunConfig::parse(&cfg.to_kv()).unwrap();
        assert_eq!(echoed.model, cfg.model, "{name}");
        assert_eq!(echoed.train, cfg.train, "{name}");
    }
}

#[test]
fn synth_seeds_parse() {
    for (name, bytes) in seeds("parse_synth_config") {
        let text = String::from_utf8(bytes).unwrap();
        SynthConfig::from_kv(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
