//! Checkpoint container.
//!
//! Layout, all header lines `\n`-terminated UTF-8:
//!
//! ```text
//! TRIPCAST-CHECKPOINT 1
//! [config]
//! model.num_layers=2            one line per ModelConfig field
//! ...
//! [state]
//! iteration=500
//! rng.seed=<64 hex digits>
//! rng.stream=<u64>
//! rng.word_pos=<u128>
//! loss.interval_sum=<f64 bits, 16 hex digits>
//! loss.interval_count=<u64>
//! [arrays]
//! <name> f32 <d0>x<d1>... <byte offset> <byte length>
//! ...
//! [data]
//! <raw little-endian f32 arrays, offsets relative to the end of this line>
//! ```
//!
//! The manifest lists every parameter array in layout order, then the
//! first-moment arrays as `adam.m/<name>` and the second-moment arrays as
//! `adam.v/<name>`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParamLayout, ParameterStore};
use crate::train::TrainState;

pub const MAGIC: &str = "TRIPCAST-CHECKPOINT 1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ParameterStore<f32>,
    pub state: TrainState<f32>,
}

impl Checkpoint {
    pub fn config(&self) -> &ModelConfig {
        self.params.config()
    }
}

struct ArraySpec {
    name: String,
    shape: Vec<usize>,
    /// Element offset into the flat parameter buffer.
    start: usize,
    len: usize,
}

fn expected_arrays(layout: &ParamLayout) -> Vec<(String, Vec<usize>, usize, usize)> {
    let mut out = Vec::new();
    for prefix in ["", "adam.m/", "adam.v/"] {
        for e in layout.entries() {
            out.push((
                format!("{prefix}{}", e.name),
                e.shape.clone(),
                e.offset,
                e.len(),
            ));
        }
    }
    out
}

fn shape_text(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) || !s.is_ascii() {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).ok())
        .collect()
}

/// Serializes parameters and optimizer state.
pub fn encode_checkpoint(params: &ParameterStore<f32>, state: &TrainState<f32>) -> Result<Vec<u8>> {
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::domain(
            "optimizer moments do not match the parameters",
        ));
    }
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push_str("\n[config]\n");
    for line in params.config().to_kv_lines() {
        header.push_str(&line);
        header.push('\n');
    }
    header.push_str("[state]\n");
    header.push_str(&format!("iteration={}\n", state.iteration));
    header.push_str(&format!("rng.seed={}\n", hex(&state.rng.get_seed())));
    header.push_str(&format!("rng.stream={}\n", state.rng.get_stream()));
    header.push_str(&format!("rng.word_pos={}\n", state.rng.get_word_pos()));
    header.push_str(&format!(
        "loss.interval_sum={:016x}\n",
        state.interval_loss_sum.to_bits()
    ));
    header.push_str(&format!("loss.interval_count={}\n", state.interval_count));
    header.push_str("[arrays]\n");
    let mut offset = 0usize;
    for (name, shape, _, len) in expected_arrays(params.layout()) {
        let bytes = len * 4;
        header.push_str(&format!(
            "{name} f32 {} {offset} {bytes}\n",
            shape_text(&shape)
        ));
        offset += bytes;
    }
    header.push_str("[data]\n");

    let mut out = header.into_bytes();
    out.reserve(offset);
    for buf in [params.data(), &state.m, &state.v] {
        for v in buf {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes atomically: a sibling temporary file is renamed over `path`, so
/// an existing checkpoint survives a failed write.
pub fn save_checkpoint(
    params: &ParameterStore<f32>,
    state: &TrainState<f32>,
    path: &Path,
) -> Result<()> {
    let bytes = encode_checkpoint(params, state)?;
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let file_name = path.file_name().ok_or_else(|| {
        Error::domain(format!(
            "checkpoint path {} has no file name",
            path.display()
        ))
    })?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

/// Loads and requires the stored model config to equal `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    check_config(ck.config(), expected)?;
    Ok(ck)
}

pub fn check_config(found: &ModelConfig, expected: &ModelConfig) -> Result<()> {
    if found == expected {
        return Ok(());
    }
    let diffs: Vec<String> = found
        .to_kv_lines()
        .into_iter()
        .zip(expected.to_kv_lines())
        .filter(|(a, b)| a != b)
        .map(|(a, b)| format!("checkpoint has {a}, expected {b}"))
        .collect();
    Err(Error::ConfigMismatch(diffs.join("; ")))
}

struct Lines<'a> {
    text: &'a str,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        let (head, rest) = self
            .text
            .split_once('\n')
            .ok_or_else(|| Error::Format(format!("header ends early after line {}", self.line)))?;
        self.text = rest;
        self.line += 1;
        Ok(head)
    }

    fn expect(&mut self, want: &str) -> Result<()> {
        let got = self.next()?;
        if got != want {
            return Err(Error::Format(format!(
                "line {}: expected `{want}`, found `{got}`",
                self.line
            )));
        }
        Ok(())
    }
}

fn state_value<'a>(lines: &mut Lines<'a>, key: &str) -> Result<&'a str> {
    let line = lines.next()?;
    match line.split_once('=') {
        Some((k, v)) if k == key => Ok(v),
        _ => Err(Error::Format(format!(
            "line {}: expected `{key}=`, found `{line}`",
            lines.line
        ))),
    }
}

fn parse_num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse()
        .map_err(|_| Error::Format(format!("cannot parse {key} `{v}`")))
}

fn parse_manifest_line(line: &str) -> Result<(String, Vec<usize>, usize, usize)> {
    let mut parts = line.split(' ');
    let name = parts.next().unwrap_or_default().to_string();
    let bad = |msg: &str| Error::Array {
        name: name.clone(),
        msg: msg.to_string(),
    };
    let dtype = parts.next().ok_or_else(|| bad("missing dtype"))?;
    if dtype != "f32" {
        return Err(bad(&format!("unsupported dtype `{dtype}`")));
    }
    let shape: Vec<usize> = parts
        .next()
        .ok_or_else(|| bad("missing shape"))?
        .split('x')
        .map(|d| d.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad("malformed shape"))?;
    let offset = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("malformed offset"))?;
    let bytes = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("malformed byte length"))?;
    if parts.next().is_some() {
        return Err(bad("trailing fields"));
    }
    Ok((name, shape, offset, bytes))
}

/// Parses a checkpoint image. Never panics on malformed input.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let data_marker = b"\n[data]\n";
    let split = bytes
        .windows(data_marker.len())
        .position(|w| w == data_marker)
        .ok_or_else(|| Error::Format("missing [data] section".into()))?;
    let header_end = split + data_marker.len();
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let data = &bytes[header_end..];
    let mut lines = Lines {
        text: header,
        line: 0,
    };

    if lines.next()? != MAGIC {
        return Err(Error::Format("bad magic line".into()));
    }
    lines.expect("[config]")?;
    let mut config = ModelConfig::tiny();
    let fields = config.to_kv_lines().len();
    let mut seen = Vec::with_capacity(fields);
    loop {
        let line = lines.next()?;
        if line == "[state]" {
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("line {}: expected key=value", lines.line)))?;
        if seen.iter().any(|s| s == k) {
            return Err(Error::Format(format!("duplicate config key `{k}`")));
        }
        config
            .set(k, v)
            .map_err(|e| Error::Format(format!("line {}: {e}", lines.line)))?;
        seen.push(k.to_string());
    }
    if seen.len() != fields {
        return Err(Error::Format(format!(
            "config section has {} of {fields} keys",
            seen.len()
        )));
    }
    config
        .validate()
        .map_err(|e| Error::Format(e.to_string()))?;

    let iteration: u64 = parse_num("iteration", state_value(&mut lines, "iteration")?)?;
    let seed_hex = state_value(&mut lines, "rng.seed")?;
    let seed: [u8; 32] = unhex(seed_hex)
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| Error::Format("rng.seed must be 64 hex digits".into()))?;
    let stream: u64 = parse_num("rng.stream", state_value(&mut lines, "rng.stream")?)?;
    let word_pos: u128 = parse_num("rng.word_pos", state_value(&mut lines, "rng.word_pos")?)?;
    let sum_hex = state_value(&mut lines, "loss.interval_sum")?;
    let interval_loss_sum = u64::from_str_radix(sum_hex, 16)
        .ok()
        .filter(|_| sum_hex.len() == 16)
        .map(f64::from_bits)
        .ok_or_else(|| Error::Format("loss.interval_sum must be 16 hex digits".into()))?;
    let interval_count: u64 = parse_num(
        "loss.interval_count",
        state_value(&mut lines, "loss.interval_count")?,
    )?;
    lines.expect("[arrays]")?;

    let layout = ParamLayout::for_config(&config);
    let expected = expected_arrays(&layout);
    let mut specs = Vec::with_capacity(expected.len());
    let mut next_offset = 0usize;
    for (want_name, want_shape, start, len) in &expected {
        let line = lines.next()?;
        if line == "[data]" {
            return Err(Error::Array {
                name: want_name.clone(),
                msg: "missing from manifest".into(),
            });
        }
        let (name, shape, offset, nbytes) = parse_manifest_line(line)?;
        let err = |msg: String| Error::Array {
            name: name.clone(),
            msg,
        };
        if &name != want_name {
            return Err(err(format!("unexpected array, expected `{want_name}`")));
        }
        if &shape != want_shape {
            return Err(err(format!(
                "shape {} does not match config shape {}",
                shape_text(&shape),
                shape_text(want_shape)
            )));
        }
        if nbytes != len * 4 {
            return Err(err(format!("byte length {nbytes} does not match shape")));
        }
        if offset != next_offset {
            return Err(err(format!("offset {offset}, expected {next_offset}")));
        }
        if offset
            .checked_add(nbytes)
            .is_none_or(|end| end > data.len())
        {
            return Err(err("data truncated".into()));
        }
        next_offset += nbytes;
        specs.push(ArraySpec {
            name,
            shape,
            start: *start,
            len: *len,
        });
    }
    let line = lines.next()?;
    if line != "[data]" {
        let name = line.split(' ').next().unwrap_or_default().to_string();
        return Err(Error::Array {
            name,
            msg: "not part of this model".into(),
        });
    }
    if data.len() != next_offset {
        return Err(Error::Format(format!(
            "data section has {} bytes, manifest describes {next_offset}",
            data.len()
        )));
    }

    let total = layout.total();
    let mut buffers = [vec![0f32; total], vec![0f32; total], vec![0f32; total]];
    let mut at = 0usize;
    for (i, spec) in specs.iter().enumerate() {
        debug_assert_eq!(spec.shape.iter().product::<usize>(), spec.len);
        let dst = &mut buffers[i / layout.entries().len()][spec.start..spec.start + spec.len];
        for (d, chunk) in dst
            .iter_mut()
            .zip(data[at..at + spec.len * 4].chunks_exact(4))
        {
            *d = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        if spec.name.starts_with("adam.v/") && dst.iter().any(|v| *v < 0.0) {
            return Err(Error::Array {
                name: spec.name.clone(),
                msg: "negative second moment".into(),
            });
        }
        at += spec.len * 4;
    }
    let [params, m, v] = buffers;

    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    let params = ParameterStore::from_data(&config, params)?;
    Ok(Checkpoint {
        params,
        state: TrainState {
            iteration,
            m,
            v,
            rng,
            interval_loss_sum,
            interval_count,
        },
    })
}
