//! Run configuration: `key=value` lines with `model.`, `train.`, `mask.`,
//! `data.`, `eval.` and `synth.` prefixes. `#` starts a comment line.
//!
//! `model.preset` picks the starting architecture and is applied before the
//! other `model.*` keys regardless of order. Relative paths are resolved
//! against the config file's directory by [`RunConfig::load`].

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::BaselineKind;
use crate::frame::{default_test_range, default_validation_range, parse_date, DateRange};
use crate::model::ModelConfig;
use crate::synth::SynthConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Long-format files pooled for pre-training.
    pub train: Vec<PathBuf>,
    /// In-domain evaluation file; defaults to the held-out split of `train`.
    pub eval: Option<PathBuf>,
    /// Held-out domain for out-domain evaluation.
    pub out_domain: Option<PathBuf>,
    pub pretrain_fraction: f64,
    pub split_seed: u64,
    pub stride: usize,
    pub validation_range: DateRange,
    pub test_range: DateRange,
    pub leading_steps: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: Vec::new(),
            eval: None,
            out_domain: None,
            pretrain_fraction: 0.8,
            split_seed: 0,
            stride: 1,
            validation_range: default_validation_range(),
            test_range: default_test_range(),
            leading_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub horizon: usize,
    pub anchor_stride: usize,
    /// Anchor dates; defaults to the data test range.
    pub range: Option<DateRange>,
    pub baselines: Vec<BaselineKind>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizon: 15,
            anchor_stride: 1,
            range: None,
            baselines: vec![BaselineKind::LastCurve, BaselineKind::SeasonalLastCurve],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    /// Single synthetic dataset; `None` with `synth_suite` false means the
    /// benchmark suite.
    pub synth: Option<SynthConfig>,
    pub synth_suite_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::tiny(),
            train: TrainConfig::desk(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
            synth: None,
            synth_suite_seed: 0,
        }
    }
}

fn num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(
            key,
            format!("expected true or false, found `{v}`"),
        )),
    }
}

fn date(key: &str, v: &str) -> Result<chrono::NaiveDate> {
    parse_date(v).ok_or_else(|| Error::config(key, format!("expected YYYY-MM-DD, found `{v}`")))
}

fn paths(v: &str) -> Vec<PathBuf> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(PathBuf::from)
        .collect()
}

impl RunConfig {
    /// Parses config text without touching the file system.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim().trim_start_matches('\u{feff}');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::parse(i + 1, format!("expected key=value, found `{line}`"))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::parse(i + 1, "empty key"));
            }
            if !seen.insert(k.to_string()) {
                return Err(Error::config(k, format!("duplicate key on line {}", i + 1)));
            }
            entries.push((i + 1, k.to_string(), v.to_string()));
        }

        let mut cfg = RunConfig::default();
        if let Some((_, k, v)) = entries.iter().find(|(_, k, _)| k == "model.preset") {
            cfg.model = ModelConfig::preset(v)
                .ok_or_else(|| Error::config(k, format!("unknown preset `{v}`")))?;
        }
        let (mut eval_start, mut eval_end) = (None, None);
        let (mut val_start, mut val_end) = (None, None);
        let (mut test_start, mut test_end) = (None, None);
        for (_, key, v) in &entries {
            let (k, v) = (key.as_str(), v.as_str());
            match k {
                "model.preset" => {}
                _ if k.starts_with("model.") => cfg.model.set(k, v)?,
                "train.batch_size" => cfg.train.batch_size = num(k, v)?,
                "train.total_iters" => cfg.train.total_iters = num(k, v)?,
                "train.base_lr" => cfg.train.base_lr = num(k, v)?,
                "train.beta1" => cfg.train.beta1 = num(k, v)?,
                "train.beta2" => cfg.train.beta2 = num(k, v)?,
                "train.adam_eps" => cfg.train.adam_eps = num(k, v)?,
                "train.loss_scope" => {
                    cfg.train.loss_scope = v.parse().map_err(|e: String| Error::config(k, e))?
                }
                "train.seed" => cfg.train.seed = num(k, v)?,
                "train.checkpoint_every" => cfg.train.checkpoint_every = num(k, v)?,
                "train.log_every" => cfg.train.log_every = num(k, v)?,
                "train.clip_norm" => {
                    cfg.train.clip_norm = if v == "none" { None } else { Some(num(k, v)?) }
                }
                "mask.random_p" => cfg.train.mask_policy.random_p = num(k, v)?,
                "mask.progressive" => cfg.train.mask_policy.progressive_enabled = boolean(k, v)?,
                "mask.h_pred_max" => cfg.train.mask_policy.h_pred_max = num(k, v)?,
                "mask.seed" => cfg.train.mask_policy.seed = num(k, v)?,
                "data.train" => cfg.data.train = paths(v),
                "data.eval" => cfg.data.eval = paths(v).into_iter().next(),
                "data.out_domain" => cfg.data.out_domain = paths(v).into_iter().next(),
                "data.pretrain_fraction" => cfg.data.pretrain_fraction = num(k, v)?,
                "data.split_seed" => cfg.data.split_seed = num(k, v)?,
                "data.stride" => cfg.data.stride = num(k, v)?,
                "data.leading_steps" => cfg.data.leading_steps = Some(num(k, v)?),
                "data.validation_start" => val_start = Some(date(k, v)?),
                "data.validation_end" => val_end = Some(date(k, v)?),
                "data.test_start" => test_start = Some(date(k, v)?),
                "data.test_end" => test_end = Some(date(k, v)?),
                "eval.horizon" => cfg.eval.horizon = num(k, v)?,
                "eval.anchor_stride" => cfg.eval.anchor_stride = num(k, v)?,
                "eval.start" => eval_start = Some(date(k, v)?),
                "eval.end" => eval_end = Some(date(k, v)?),
                "eval.baselines" => {
                    cfg.eval.baselines = v
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse().map_err(|e: String| Error::config(k, e)))
                        .collect::<Result<_>>()?
                }
                "synth.suite_seed" => cfg.synth_suite_seed = num(k, v)?,
                _ if k.starts_with("synth.") => cfg
                    .synth
                    .get_or_insert_with(SynthConfig::default)
                    .set(&k["synth.".len()..], v)?,
                _ => return Err(Error::config(k, "unknown key")),
            }
        }
        let range =
            |start: Option<_>, end: Option<_>, base: DateRange, key: &str| -> Result<DateRange> {
                DateRange::new(start.unwrap_or(base.start), end.unwrap_or(base.end))
                    .map_err(|e| Error::config(key, e.to_string()))
            };
        cfg.data.validation_range = range(
            val_start,
            val_end,
            cfg.data.validation_range,
            "data.validation_start",
        )?;
        cfg.data.test_range = range(test_start, test_end, cfg.data.test_range, "data.test_start")?;
        if eval_start.is_some() || eval_end.is_some() {
            cfg.eval.range = Some(range(
                eval_start,
                eval_end,
                cfg.data.test_range,
                "eval.start",
            )?);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and parses `path`, resolving relative data paths against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config("--config", format!("cannot read {}: {e}", path.display()))
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.data.train.iter_mut().for_each(fix);
        cfg.data.eval.iter_mut().for_each(fix);
        cfg.data.out_domain.iter_mut().for_each(fix);
        Ok(cfg)
    }

    /// Cross-field checks.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.train
            .mask_policy
            .validate(self.model.h, self.model.c)?;
        let d = self.eval.horizon;
        if d == 0 || d > self.train.mask_policy.h_pred_max {
            return Err(Error::config(
                "eval.horizon",
                format!(
                    "must be in [1, mask.h_pred_max = {}]",
                    self.train.mask_policy.h_pred_max
                ),
            ));
        }
        if self.eval.anchor_stride == 0 {
            return Err(Error::config("eval.anchor_stride", "must be positive"));
        }
        if self.data.stride == 0 {
            return Err(Error::config("data.stride", "must be positive"));
        }
        if !(self.data.pretrain_fraction > 0.0 && self.data.pretrain_fraction < 1.0) {
            return Err(Error::config("data.pretrain_fraction", "must be in (0, 1)"));
        }
        if self.data.test_range.start <= self.data.validation_range.end {
            return Err(Error::config(
                "data.test_start",
                "test range must start after the validation range",
            ));
        }
        if let Some(l) = self.data.leading_steps {
            if l < self.model.c {
                return Err(Error::config(
                    "data.leading_steps",
                    format!("must be at least model.c = {}", self.model.c),
                ));
            }
        }
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        Ok(())
    }

    /// Anchor range for evaluation.
    pub fn eval_range(&self) -> DateRange {
        self.eval.range.unwrap_or(self.data.test_range)
    }

    /// Echo of the effective settings in config syntax.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for line in self.model.to_kv_lines() {
            let _ = writeln!(out, "{line}");
        }
        let t = &self.train;
        let _ = writeln!(out, "train.batch_size={}", t.batch_size);
        let _ = writeln!(out, "train.total_iters={}", t.total_iters);
        let _ = writeln!(out, "train.base_lr={:?}", t.base_lr);
        let _ = writeln!(out, "train.beta1={:?}", t.beta1);
        let _ = writeln!(out, "train.beta2={:?}", t.beta2);
        let _ = writeln!(out, "train.adam_eps={:?}", t.adam_eps);
        let _ = writeln!(out, "train.loss_scope={}", t.loss_scope);
        let _ = writeln!(out, "train.seed={}", t.seed);
        let _ = writeln!(out, "train.checkpoint_every={}", t.checkpoint_every);
        let _ = writeln!(out, "train.log_every={}", t.log_every);
        match t.clip_norm {
            Some(c) => writeln!(out, "train.clip_norm={c:?}"),
            None => writeln!(out, "train.clip_norm=none"),
        }
        .ok();
        let m = &t.mask_policy;
        let _ = writeln!(out, "mask.random_p={:?}", m.random_p);
        let _ = writeln!(out, "mask.progressive={}", m.progressive_enabled);
        let _ = writeln!(out, "mask.h_pred_max={}", m.h_pred_max);
        let _ = writeln!(out, "mask.seed={}", m.seed);
        let d = &self.data;
        let join = |ps: &[PathBuf]| {
            ps.iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let _ = writeln!(out, "data.train={}", join(&d.train));
        if let Some(p) = &d.eval {
            let _ = writeln!(out, "data.eval={}", p.display());
        }
        if let Some(p) = &d.out_domain {
            let _ = writeln!(out, "data.out_domain={}", p.display());
        }
        let _ = writeln!(out, "data.pretrain_fraction={:?}", d.pretrain_fraction);
        let _ = writeln!(out, "data.split_seed={}", d.split_seed);
        let _ = writeln!(out, "data.stride={}", d.stride);
        if let Some(l) = d.leading_steps {
            let _ = writeln!(out, "data.leading_steps={l}");
        }
        let _ = writeln!(out, "data.validation_start={}", d.validation_range.start);
        let _ = writeln!(out, "data.validation_end={}", d.validation_range.end);
        let _ = writeln!(out, "data.test_start={}", d.test_range.start);
        let _ = writeln!(out, "data.test_end={}", d.test_range.end);
        let e = &self.eval;
        let _ = writeln!(out, "eval.horizon={}", e.horizon);
        let _ = writeln!(out, "eval.anchor_stride={}", e.anchor_stride);
        if let Some(r) = e.range {
            let _ = writeln!(out, "eval.start={}", r.start);
            let _ = writeln!(out, "eval.end={}", r.end);
        }
        let names: Vec<&str> = e.baselines.iter().map(|b| b.name()).collect();
        let _ = writeln!(out, "eval.baselines={}", names.join(","));
        out
    }
}
