//! Synthetic trip series: booking curves, average-price curves and search
//! counts with weekly seasonality, trend and per-row level noise.

use std::io::Write;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::{parse_date, write_long_csv, TripFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    /// Cumulative fraction of capacity sold, in `[0, 1]`.
    SalesRate,
    /// Cumulative average price, falling towards the base level.
    PriceLevel,
    /// Cumulative integer search count.
    SearchCount,
}

impl std::str::FromStr for DomainKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sales_rate" => Ok(DomainKind::SalesRate),
            "price_level" => Ok(DomainKind::PriceLevel),
            "search_count" => Ok(DomainKind::SearchCount),
            other => Err(format!("unknown domain kind `{other}`")),
        }
    }
}

impl std::fmt::Display for DomainKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DomainKind::SalesRate => "sales_rate",
            DomainKind::PriceLevel => "price_level",
            DomainKind::SearchCount => "search_count",
        })
    }
}

/// Minimum event days: one 60-row window plus the 15-row horizon.
pub const MIN_EVENT_DAYS: usize = 75;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub name: String,
    pub n_series: usize,
    pub n_event_days: usize,
    pub c: usize,
    pub start_date: NaiveDate,
    pub domain_kind: DomainKind,
    pub weekly_amplitude: f64,
    /// Relative level change per event day.
    pub trend_slope: f64,
    pub noise_sigma: f64,
    pub steepness: f64,
    pub midpoint: f64,
    /// Per-series base level is drawn uniformly from `[base_min, base_max]`.
    pub base_min: f64,
    pub base_max: f64,
    /// Early-booking price premium over the base level (price domain).
    pub price_premium: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            name: "synth".into(),
            n_series: 10,
            n_event_days: 184,
            c: 40,
            start_date: NaiveDate::from_ymd_opt(2019, 7, 1).expect("valid date"),
            domain_kind: DomainKind::SalesRate,
            weekly_amplitude: 0.2,
            trend_slope: 0.0,
            noise_sigma: 0.1,
            steepness: 0.25,
            midpoint: 25.0,
            base_min: 0.4,
            base_max: 0.8,
            price_premium: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains([',', '"', '\n', '/']) {
            return Err(Error::config(
                "synth.name",
                "must be non-empty without `,`, `\"`, `/` or newlines",
            ));
        }
        if self.n_event_days < MIN_EVENT_DAYS {
            return Err(Error::config(
                "synth.n_event_days",
                format!("must be at least {MIN_EVENT_DAYS}"),
            ));
        }
        if self.c == 0 {
            return Err(Error::config("synth.c", "must be positive"));
        }
        if self.n_event_days.saturating_mul(self.c) > crate::frame::MAX_FRAME_CELLS {
            return Err(Error::config("synth.n_event_days", "frame too large"));
        }
        if self
            .start_date
            .checked_add_days(chrono::Days::new(self.n_event_days as u64))
            .is_none()
        {
            return Err(Error::config(
                "synth.start_date",
                "dates overflow the calendar",
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config(
                "synth.noise_sigma",
                "must be finite and >= 0",
            ));
        }
        if !(self.steepness > 0.0 && self.steepness.is_finite()) {
            return Err(Error::config("synth.steepness", "must be positive"));
        }
        if !(0.0..=(self.c - 1) as f64).contains(&self.midpoint) {
            return Err(Error::config("synth.midpoint", "must lie in [0, C-1]"));
        }
        if self.weekly_amplitude.is_nan() || self.weekly_amplitude.abs() >= 1.0 {
            return Err(Error::config(
                "synth.weekly_amplitude",
                "must be in (-1, 1)",
            ));
        }
        if !self.trend_slope.is_finite()
            || 1.0 + self.trend_slope * (self.n_event_days - 1) as f64 <= 0.0
        {
            return Err(Error::config(
                "synth.trend_slope",
                "level must stay positive",
            ));
        }
        if !(self.base_min > 0.0 && self.base_min <= self.base_max && self.base_max.is_finite()) {
            return Err(Error::config(
                "synth.base_min",
                "need 0 < base_min <= base_max",
            ));
        }
        if !(self.price_premium >= 0.0 && self.price_premium.is_finite()) {
            return Err(Error::config(
                "synth.price_premium",
                "must be finite and >= 0",
            ));
        }
        Ok(())
    }

    /// Applies one unprefixed key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let full = format!("synth.{key}");
        let v = value.trim();
        fn num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
            v.parse()
                .map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
        }
        match key {
            "name" => self.name = v.to_string(),
            "n_series" => self.n_series = num(&full, v)?,
            "n_event_days" => self.n_event_days = num(&full, v)?,
            "c" => self.c = num(&full, v)?,
            "start_date" => {
                self.start_date =
                    parse_date(v).ok_or_else(|| Error::config(&full, format!("bad date `{v}`")))?
            }
            "domain_kind" => {
                self.domain_kind = v.parse().map_err(|e: String| Error::config(&full, e))?
            }
            "weekly_amplitude" => self.weekly_amplitude = num(&full, v)?,
            "trend_slope" => self.trend_slope = num(&full, v)?,
            "noise_sigma" => self.noise_sigma = num(&full, v)?,
            "steepness" => self.steepness = num(&full, v)?,
            "midpoint" => self.midpoint = num(&full, v)?,
            "base_min" => self.base_min = num(&full, v)?,
            "base_max" => self.base_max = num(&full, v)?,
            "price_premium" => self.price_premium = num(&full, v)?,
            "seed" => self.seed = num(&full, v)?,
            _ => return Err(Error::config(full, "unknown synth key")),
        }
        Ok(())
    }

    /// Parses a `key=value` file; `#` starts a comment line.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::parse(i + 1, format!("expected key=value, found `{line}`"))
            })?;
            let k = k.trim();
            cfg.set(k.strip_prefix("synth.").unwrap_or(k), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Frames for `cfg`, fully observed.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<TripFrame>> {
    cfg.validate()?;
    let (rows, cols) = (cfg.n_event_days, cfg.c);
    let noise = Normal::new(0.0, cfg.noise_sigma)
        .map_err(|e| Error::config("synth.noise_sigma", e.to_string()))?;
    let curve: Vec<f64> = (0..cols)
        .map(|c| logistic(cfg.steepness * (c as f64 - cfg.midpoint)))
        .collect();
    (0..cfg.n_series)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let base = if cfg.base_max > cfg.base_min {
                rng.random_range(cfg.base_min..=cfg.base_max)
            } else {
                cfg.base_min
            };
            let mut values = Vec::with_capacity(rows * cols);
            for h in 0..rows {
                let date = cfg.start_date + chrono::Days::new(h as u64);
                let dow = date.weekday().num_days_from_monday() as f64;
                let eta = if cfg.noise_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                let level = base
                    * (1.0 + cfg.weekly_amplitude * (std::f64::consts::TAU * dow / 7.0).sin())
                    * (1.0 + cfg.trend_slope * h as f64)
                    * eta.exp();
                values.extend(curve.iter().map(|&s| match cfg.domain_kind {
                    DomainKind::SalesRate => (level * s).clamp(0.0, 1.0),
                    DomainKind::PriceLevel => level * (1.0 + cfg.price_premium * (1.0 - s)),
                    DomainKind::SearchCount => (level * s).round(),
                }));
            }
            TripFrame::dense(
                format!("{}-{i:04}", cfg.name),
                format!("{}-g{:04}", cfg.name, i / 2),
                cfg.start_date,
                rows,
                cols,
                values,
            )
        })
        .collect()
}

/// Writes frames in long format.
pub fn emit_long_csv<W: Write>(frames: &[TripFrame], out: W) -> Result<()> {
    write_long_csv(frames, out)
}

/// Names of the benchmark datasets, in generation order.
pub const SUITE_NAMES: [&str; 4] = [
    "synth-sales-A",
    "synth-sales-B",
    "synth-price",
    "synth-search",
];

const SUITE_FILES: [&str; 4] = [
    include_str!("../suite/synth-sales-A.cfg"),
    include_str!("../suite/synth-sales-B.cfg"),
    include_str!("../suite/synth-price.cfg"),
    include_str!("../suite/synth-search.cfg"),
];

/// Parameters of one suite dataset; `seed` is mixed into its pinned seed.
pub fn suite_config(name: &str, seed: u64) -> Result<SynthConfig> {
    let at = SUITE_NAMES
        .iter()
        .position(|n| *n == name)
        .ok_or_else(|| Error::domain(format!("unknown suite dataset `{name}`")))?;
    let mut cfg = SynthConfig::from_kv(SUITE_FILES[at])?;
    cfg.seed ^= seed;
    Ok(cfg)
}

/// The four named datasets. Pass 0 for the pinned suite.
pub fn make_benchmark_suite(seed: u64) -> Result<Vec<(String, Vec<TripFrame>)>> {
    SUITE_NAMES
        .iter()
        .map(|name| Ok((name.to_string(), generate(&suite_config(name, seed)?)?)))
        .collect()
}
