//! Error metrics, frontier scoring, naive baselines and reports.
//!
//! An evaluation anchor `T` is the "now" date: event rows up to `T` are
//! fully observed and row `T + j` (`1 ≤ j ≤ d`) is missing its last `j`
//! leading steps. The window covers event rows `T - (H - 1 - d) ..= T + d`.
//! The forecast horizon of a missing cell is the number of days between
//! `T` and its booking date, `j - (C - 1 - c)`, so it runs from 1 to `d`.

use std::fmt::Write as _;
use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::{DateRange, Instance, TripFrame, LONG_HEADER};
use crate::mask::{inference_mask, inference_mask_from_observed, MaskMatrix};
use crate::model::{forward, ModelConfig, ParameterStore};

pub fn mae(targets: &[f64], preds: &[f64]) -> Result<f64> {
    if targets.len() != preds.len() {
        return Err(Error::domain("targets and predictions differ in length"));
    }
    if targets.is_empty() {
        return Err(Error::domain("mean absolute error of an empty set"));
    }
    let sum: f64 = targets.iter().zip(preds).map(|(y, p)| (y - p).abs()).sum();
    Ok(sum / targets.len() as f64)
}

pub fn wape(targets: &[f64], preds: &[f64]) -> Result<f64> {
    if targets.len() != preds.len() {
        return Err(Error::domain("targets and predictions differ in length"));
    }
    let denom: f64 = targets.iter().map(|y| y.abs()).sum();
    if denom.is_nan() || denom <= 0.0 {
        return Err(Error::domain("WAPE is undefined for all-zero targets"));
    }
    let num: f64 = targets.iter().zip(preds).map(|(y, p)| (y - p).abs()).sum();
    Ok(num / denom)
}

/// Additive accumulator behind both metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorSums {
    pub n: u64,
    pub abs_err: f64,
    pub abs_target: f64,
}

impl ErrorSums {
    pub fn add(&mut self, target: f64, pred: f64) {
        self.n += 1;
        self.abs_err += (target - pred).abs();
        self.abs_target += target.abs();
    }

    pub fn merge(&mut self, other: &ErrorSums) {
        self.n += other.n;
        self.abs_err += other.abs_err;
        self.abs_target += other.abs_target;
    }

    pub fn mae(&self) -> Option<f64> {
        (self.n > 0).then(|| self.abs_err / self.n as f64)
    }

    pub fn wape(&self) -> Option<f64> {
        (self.abs_target > 0.0).then(|| self.abs_err / self.abs_target)
    }
}

/// Anything that fills a masked window.
pub trait Forecaster: Sync {
    fn name(&self) -> &str;

    /// Raw-scale `H × C` grid; only masked cells are read.
    fn predict(&self, instance: &Instance, mask: &MaskMatrix) -> Result<Vec<f64>>;
}

pub struct ModelForecaster<'a> {
    pub params: &'a ParameterStore<f32>,
    pub name: String,
}

impl<'a> ModelForecaster<'a> {
    pub fn new(params: &'a ParameterStore<f32>) -> Self {
        Self {
            params,
            name: "tripcast".into(),
        }
    }
}

impl Forecaster for ModelForecaster<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, instance: &Instance, mask: &MaskMatrix) -> Result<Vec<f64>> {
        Ok(forward(instance, mask, self.params)?
            .into_iter()
            .map(f64::from)
            .collect())
    }
}

/// Returns the ground truth; a perfect forecaster for harness tests.
pub struct OracleForecaster;

impl Forecaster for OracleForecaster {
    fn name(&self) -> &str {
        "oracle"
    }

    fn predict(&self, instance: &Instance, _mask: &MaskMatrix) -> Result<Vec<f64>> {
        Ok(instance.target.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Copy the most recent fully observed event row.
    LastCurve,
    /// Copy the most recent fully observed row with the same weekday.
    SeasonalLastCurve,
}

impl std::str::FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "last_curve" => Ok(BaselineKind::LastCurve),
            "seasonal_last_curve" => Ok(BaselineKind::SeasonalLastCurve),
            other => Err(format!("unknown baseline `{other}`")),
        }
    }
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::LastCurve => "last_curve",
            BaselineKind::SeasonalLastCurve => "seasonal_last_curve",
        }
    }
}

pub struct BaselineForecaster(pub BaselineKind);

impl Forecaster for BaselineForecaster {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn predict(&self, instance: &Instance, mask: &MaskMatrix) -> Result<Vec<f64>> {
        let (h, c) = (instance.h, instance.c);
        let row_known =
            |r: usize| (0..c).all(|col| instance.observed[r * c + col] && !mask.get(r, col));
        let mut out = instance.values.clone();
        for row in 0..h {
            if !(0..c).any(|col| mask.get(row, col)) {
                continue;
            }
            let step = match self.0 {
                BaselineKind::LastCurve => 1,
                BaselineKind::SeasonalLastCurve => 7,
            };
            let source = (1..=row / step)
                .map(|k| row - k * step)
                .find(|&r| row_known(r))
                .ok_or_else(|| {
                    Error::Baseline(format!(
                        "{}: no fully observed history row for event {}",
                        self.0.name(),
                        instance.date_at(row)
                    ))
                })?;
            for col in 0..c {
                if mask.get(row, col) {
                    out[row * c + col] = instance.values[source * c + col];
                }
            }
        }
        Ok(out)
    }
}

/// Event rows of the evaluation window for anchor `anchor`, or `None` when
/// the frame does not cover them.
pub fn window_start_row(frame: &TripFrame, anchor: NaiveDate, h: usize, d: usize) -> Option<usize> {
    let first = anchor.checked_sub_days(chrono::Days::new((h - 1 - d) as u64))?;
    let start = frame.row_of(first)?;
    (start + h <= frame.rows()).then_some(start)
}

/// Masked window for a retrospective anchor.
pub fn anchored_instance(
    frame: &TripFrame,
    anchor: NaiveDate,
    cfg: &ModelConfig,
    d: usize,
    h_pred_max: usize,
) -> Result<(Instance, MaskMatrix)> {
    if d == 0 || d >= cfg.h {
        return Err(Error::domain(format!(
            "horizon {d} outside [1, {}]",
            cfg.h - 1
        )));
    }
    let mask = inference_mask(cfg.h, cfg.c, d, h_pred_max)?;
    let start = window_start_row(frame, anchor, cfg.h, d).ok_or_else(|| {
        Error::domain(format!(
            "series `{}` does not cover the window for {anchor}",
            frame.series_id()
        ))
    })?;
    let inst = Instance::from_frame(frame, start, cfg.h, cfg.c, Some(&mask))?;
    Ok((inst, mask))
}

/// Predictions for the frontier triangle of `frame` at `anchor`, as
/// `(row offset within the triangle, column, value)` with the row offset
/// `j` running from 1 to `d`.
pub fn baseline_forecast(
    kind: BaselineKind,
    frame: &TripFrame,
    anchor: NaiveDate,
    d: usize,
) -> Result<Vec<(usize, usize, f64)>> {
    let last = frame.row_of(anchor).ok_or_else(|| {
        Error::Baseline(format!(
            "anchor {anchor} is outside series `{}`",
            frame.series_id()
        ))
    })?;
    let c = frame.cols();
    if d == 0 || d > c || last + d >= frame.rows() {
        return Err(Error::Baseline(format!(
            "series `{}` has no {d}-row frontier after {anchor}",
            frame.series_id()
        )));
    }
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for j in 1..=d {
        let row = last + j;
        let source = match kind {
            BaselineKind::LastCurve => Some(last),
            BaselineKind::SeasonalLastCurve => row.checked_sub(7 * j.div_ceil(7)),
        }
        .filter(|&r| frame.row_fully_observed(r))
        .ok_or_else(|| {
            Error::Baseline(format!(
                "{}: insufficient history before {anchor}",
                kind.name()
            ))
        })?;
        for col in c - j..c {
            out.push((j, col, frame.value(source, col)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainLabel {
    InDomain,
    OutDomain,
}

impl std::fmt::Display for DomainLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DomainLabel::InDomain => "in-domain",
            DomainLabel::OutDomain => "out-domain",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub dataset: String,
    pub model: String,
    pub label: DomainLabel,
    pub horizon: usize,
    pub ranges: Vec<DateRange>,
    pub n_instances: u64,
    /// Anchors in range whose window did not fit the frame.
    pub skipped: u64,
    pub overall: ErrorSums,
    /// Index `i` holds forecast horizon `i + 1`.
    pub per_horizon: Vec<ErrorSums>,
    /// Cells at the last leading step (`c = C - 1`).
    pub last_step: ErrorSums,
}

impl EvalReport {
    fn empty(
        dataset: &str,
        model: &str,
        label: DomainLabel,
        horizon: usize,
        range: DateRange,
    ) -> Self {
        Self {
            dataset: dataset.into(),
            model: model.into(),
            label,
            horizon,
            ranges: vec![range],
            n_instances: 0,
            skipped: 0,
            overall: ErrorSums::default(),
            per_horizon: vec![ErrorSums::default(); horizon],
            last_step: ErrorSums::default(),
        }
    }

    pub fn n_cells(&self) -> u64 {
        self.overall.n
    }

    pub fn mae(&self) -> Result<f64> {
        self.overall
            .mae()
            .ok_or_else(|| Error::domain("report has no scored cells"))
    }

    pub fn wape(&self) -> Result<f64> {
        self.overall
            .wape()
            .ok_or_else(|| Error::domain("report targets are all zero"))
    }

    /// Adds another report's accumulators; both must score the same
    /// horizon.
    pub fn merge(&mut self, other: &EvalReport) -> Result<()> {
        if other.horizon != self.horizon {
            return Err(Error::domain(
                "cannot merge reports with different horizons",
            ));
        }
        self.ranges.extend(other.ranges.iter().copied());
        self.n_instances += other.n_instances;
        self.skipped += other.skipped;
        self.overall.merge(&other.overall);
        self.last_step.merge(&other.last_step);
        for (a, b) in self.per_horizon.iter_mut().zip(&other.per_horizon) {
            a.merge(b);
        }
        Ok(())
    }

    fn range_text(&self) -> String {
        self.ranges
            .iter()
            .map(|r| format!("{}..{}", r.start, r.end))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn to_table(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            v.map_or_else(|| "-".into(), |x| format!("{x:.6}"))
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} | {} | {} | horizon {} | {} | {} windows, {} skipped",
            self.dataset,
            self.model,
            self.label,
            self.horizon,
            self.range_text(),
            self.n_instances,
            self.skipped
        );
        let _ = writeln!(
            out,
            "{:<10} {:>10} {:>14} {:>10}",
            "scope", "n_cells", "mae", "wape"
        );
        let mut row = |name: String, s: &ErrorSums| {
            let _ = writeln!(
                out,
                "{:<10} {:>10} {:>14} {:>10}",
                name,
                s.n,
                cell(s.mae()),
                cell(s.wape())
            );
        };
        row("all".into(), &self.overall);
        row("last_step".into(), &self.last_step);
        for (i, s) in self.per_horizon.iter().enumerate() {
            row(format!("h{}", i + 1), s);
        }
        out
    }

    pub fn to_kv(&self) -> String {
        fn num(v: Option<f64>) -> String {
            v.map_or_else(|| "nan".into(), |x| format!("{x:?}"))
        }
        let mut out = String::new();
        let _ = writeln!(out, "dataset={}", self.dataset);
        let _ = writeln!(out, "model={}", self.model);
        let _ = writeln!(out, "label={}", self.label);
        let _ = writeln!(out, "horizon={}", self.horizon);
        let _ = writeln!(out, "range={}", self.range_text());
        let _ = writeln!(out, "n_instances={}", self.n_instances);
        let _ = writeln!(out, "skipped={}", self.skipped);
        let _ = writeln!(out, "n_cells={}", self.overall.n);
        let _ = writeln!(out, "mae={}", num(self.overall.mae()));
        let _ = writeln!(out, "wape={}", num(self.overall.wape()));
        let _ = writeln!(out, "last_step.n_cells={}", self.last_step.n);
        let _ = writeln!(out, "last_step.mae={}", num(self.last_step.mae()));
        let _ = writeln!(out, "last_step.wape={}", num(self.last_step.wape()));
        for (i, s) in self.per_horizon.iter().enumerate() {
            let _ = writeln!(out, "h{}.n_cells={}", i + 1, s.n);
            let _ = writeln!(out, "h{}.mae={}", i + 1, num(s.mae()));
            let _ = writeln!(out, "h{}.wape={}", i + 1, num(s.wape()));
        }
        out
    }
}

/// Protocol settings shared by in-domain and out-domain runs.
#[derive(Debug, Clone)]
pub struct EvalSpec<'a> {
    pub dataset: &'a str,
    pub window: &'a ModelConfig,
    pub horizon: usize,
    pub h_pred_max: usize,
    pub range: DateRange,
    /// Days between consecutive anchors.
    pub anchor_stride: usize,
}

fn score_anchor(
    forecaster: &dyn Forecaster,
    frame: &TripFrame,
    anchor: NaiveDate,
    spec: &EvalSpec,
) -> Result<EvalReport> {
    let cfg = spec.window;
    let d = spec.horizon;
    let mut rep = EvalReport::empty(
        spec.dataset,
        forecaster.name(),
        DomainLabel::InDomain,
        d,
        spec.range,
    );
    let fits = frame.cols() >= cfg.c
        && window_start_row(frame, anchor, cfg.h, d)
            .is_some_and(|s| (s..s + cfg.h).all(|r| frame.row_fully_observed(r)));
    if !fits {
        rep.skipped = 1;
        return Ok(rep);
    }
    let (inst, mask) = anchored_instance(frame, anchor, cfg, d, spec.h_pred_max)?;
    let pred = forecaster.predict(&inst, &mask)?;
    if pred.len() != cfg.h * cfg.c {
        return Err(Error::domain(format!(
            "{} returned {} cells",
            forecaster.name(),
            pred.len()
        )));
    }
    rep.n_instances = 1;
    let base_row = cfg.h - 1 - d;
    for (row, col) in mask.masked_cells() {
        let i = row * cfg.c + col;
        let (y, p) = (inst.target[i], pred[i]);
        if !p.is_finite() {
            return Err(Error::Numeric(format!(
                "{} produced a non-finite forecast",
                forecaster.name()
            )));
        }
        let j = row - base_row;
        let horizon = j - (cfg.c - 1 - col);
        rep.overall.add(y, p);
        rep.per_horizon[horizon - 1].add(y, p);
        if col == cfg.c - 1 {
            rep.last_step.add(y, p);
        }
    }
    Ok(rep)
}

/// Scores `forecaster` on every frame at every anchor in `spec.range`.
pub fn evaluate_zero_shot(
    forecaster: &dyn Forecaster,
    frames: &[TripFrame],
    spec: &EvalSpec,
) -> Result<EvalReport> {
    let d = spec.horizon;
    if d == 0 || d > spec.h_pred_max {
        return Err(Error::domain(format!(
            "horizon {d} outside [1, {}]",
            spec.h_pred_max
        )));
    }
    if spec.anchor_stride == 0 {
        return Err(Error::domain("anchor stride must be at least 1"));
    }
    let anchors: Vec<NaiveDate> = spec.range.days().step_by(spec.anchor_stride).collect();
    let jobs: Vec<(&TripFrame, NaiveDate)> = frames
        .iter()
        .flat_map(|f| anchors.iter().map(move |&a| (f, a)))
        .collect();
    let parts: Vec<EvalReport> = jobs
        .par_iter()
        .map(|&(f, a)| score_anchor(forecaster, f, a, spec))
        .collect::<Result<_>>()?;
    let mut report = EvalReport::empty(
        spec.dataset,
        forecaster.name(),
        DomainLabel::InDomain,
        d,
        spec.range,
    );
    for p in &parts {
        report.merge(p)?;
    }
    report.ranges.truncate(1);
    if report.n_cells() == 0 {
        return Err(Error::domain(format!(
            "no window of `{}` fits the evaluation range",
            spec.dataset
        )));
    }
    Ok(report)
}

/// Same scoring as [`evaluate_zero_shot`] on a domain held out of
/// pre-training.
pub fn out_domain_report(
    forecaster: &dyn Forecaster,
    frames: &[TripFrame],
    spec: &EvalSpec,
) -> Result<EvalReport> {
    let mut report = evaluate_zero_shot(forecaster, frames, spec)?;
    report.label = DomainLabel::OutDomain;
    Ok(report)
}

/// A frame as seen on an anchor date, with its frontier filled in.
#[derive(Debug, Clone)]
pub struct Forecast {
    /// The input frame truncated at the anchor.
    pub frame: TripFrame,
    pub anchor: NaiveDate,
    /// Number of event rows after the anchor.
    pub depth: usize,
    /// Predicted values by frame cell; `None` for cells left as observed.
    pub predicted: Vec<Option<f64>>,
}

impl Forecast {
    pub fn predicted_count(&self) -> usize {
        self.predicted.iter().filter(|p| p.is_some()).count()
    }
}

/// Fills the frontier of `frame` as seen on `anchor`, using the last `H`
/// event rows as the window. The frame's last event date sets the depth.
pub fn forecast_frame(
    params: &ParameterStore<f32>,
    frame: &TripFrame,
    anchor: NaiveDate,
    h_pred_max: usize,
) -> Result<Forecast> {
    let cfg = params.config();
    if anchor < frame.start_date() || anchor > frame.end_date() {
        return Err(Error::domain(format!(
            "anchor {anchor} is outside series `{}` ({}..{})",
            frame.series_id(),
            frame.start_date(),
            frame.end_date()
        )));
    }
    if frame.cols() < cfg.c || frame.rows() < cfg.h {
        return Err(Error::domain(format!(
            "series `{}` is {}x{}, the model window is {}x{}",
            frame.series_id(),
            frame.rows(),
            frame.cols(),
            cfg.h,
            cfg.c
        )));
    }
    let seen = frame.truncated_at(anchor)?;
    let depth = (frame.end_date() - anchor).num_days() as usize;
    if depth > h_pred_max {
        return Err(Error::domain(format!(
            "series `{}` extends {depth} days past {anchor}, more than the horizon limit {h_pred_max}",
            frame.series_id()
        )));
    }
    let start_row = seen.rows() - cfg.h;
    let inst = Instance::from_frame(&seen, start_row, cfg.h, cfg.c, None)?;
    let (mask, found) = inference_mask_from_observed(cfg.h, cfg.c, &inst.observed, h_pred_max)
        .map_err(|e| Error::domain(format!("series `{}`: {e}", frame.series_id())))?;
    if found != depth {
        return Err(Error::domain(format!(
            "series `{}` is missing observations before {anchor}",
            frame.series_id()
        )));
    }
    let mut predicted = vec![None; seen.rows() * seen.cols()];
    if depth > 0 {
        let pred = forward(&inst, &mask, params)?;
        let col0 = seen.cols() - cfg.c;
        for (row, col) in mask.masked_cells() {
            let cell = (start_row + row) * seen.cols() + col0 + col;
            predicted[cell] = Some(f64::from(pred[row * cfg.c + col]));
        }
    }
    Ok(Forecast {
        frame: seen,
        anchor,
        depth,
        predicted,
    })
}

/// Long format with a trailing `predicted` flag; readable by the ingester.
pub fn write_forecast_csv<W: Write>(forecasts: &[Forecast], mut out: W) -> Result<()> {
    writeln!(out, "{LONG_HEADER},predicted")?;
    for fc in forecasts {
        let f = &fc.frame;
        for row in 0..f.rows() {
            let date = f.event_date(row);
            for col in 0..f.cols() {
                let (value, flag) = match fc.predicted[row * f.cols() + col] {
                    Some(p) => (p, 1),
                    None if f.is_observed(row, col) => (f.value(row, col), 0),
                    None => continue,
                };
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    f.series_id(),
                    f.group_id(),
                    date,
                    f.cols() - 1 - col,
                    value,
                    flag
                )?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_hand_cases() {
        assert_eq!(mae(&[2.0, 2.0], &[1.0, 3.0]).unwrap(), 1.0);
        assert_eq!(wape(&[2.0, 2.0], &[1.0, 3.0]).unwrap(), 0.5);
        assert_eq!(mae(&[0.0, 0.0, 0.0], &[3.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(wape(&[10.0], &[0.0]).unwrap(), 1.0);
        assert_eq!(mae(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        assert!(mae(&[], &[]).is_err());
        assert!(wape(&[0.0, 0.0], &[1.0, 1.0]).is_err());
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn constant_frame(rows: usize, cols: usize) -> TripFrame {
        let start = NaiveDate::from_ymd_opt(2019, 7, 1).unwrap();
        let row: Vec<f64> = (0..cols).map(|c| 1.0 + c as f64).collect();
        TripFrame::dense("s", "g", start, rows, cols, row.repeat(rows)).unwrap()
    }

    #[test]
    fn baselines_exact_on_constant_series() {
        let f = constant_frame(30, 6);
        let anchor = NaiveDate::from_ymd_opt(2019, 7, 20).unwrap();
        for kind in [BaselineKind::LastCurve, BaselineKind::SeasonalLastCurve] {
            let out = baseline_forecast(kind, &f, anchor, 4).unwrap();
            assert_eq!(out.len(), 10);
            for (_, col, v) in out {
                assert_eq!(v, 1.0 + col as f64);
            }
        }
    }

    #[test]
    fn depth_one_copies_previous_row() {
        let start = NaiveDate::from_ymd_opt(2019, 7, 1).unwrap();
        let values: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let f = TripFrame::dense("s", "g", start, 10, 4, values).unwrap();
        let anchor = NaiveDate::from_ymd_opt(2019, 7, 5).unwrap();
        let out = baseline_forecast(BaselineKind::LastCurve, &f, anchor, 1).unwrap();
        assert_eq!(out, vec![(1, 3, f.value(4, 3))]);
        let short = baseline_forecast(BaselineKind::SeasonalLastCurve, &f, anchor, 1);
        assert!(matches!(short, Err(Error::Baseline(_))));
    }

    #[test]
    fn windowed_baseline_matches_frame_baseline() {
        let start = NaiveDate::from_ymd_opt(2019, 7, 1).unwrap();
        let (rows, cols) = (40, 16);
        let values: Vec<f64> = (0..rows * cols)
            .map(|i| ((i * 7919) % 101) as f64)
            .collect();
        let f = TripFrame::dense("s", "g", start, rows, cols, values).unwrap();
        let cfg = ModelConfig {
            h: 24,
            c: 16,
            patch_size: 4,
            ..ModelConfig::tiny()
        };
        let anchor = NaiveDate::from_ymd_opt(2019, 7, 25).unwrap();
        for d in [6, 15] {
            for kind in [BaselineKind::LastCurve, BaselineKind::SeasonalLastCurve] {
                let (inst, mask) = anchored_instance(&f, anchor, &cfg, d, 15).unwrap();
                let grid = BaselineForecaster(kind).predict(&inst, &mask).unwrap();
                let base_row = cfg.h - 1 - d;
                for (j, col, v) in baseline_forecast(kind, &f, anchor, d).unwrap() {
                    assert_eq!(
                        grid[(base_row + j) * cfg.c + col],
                        v,
                        "{kind:?} j={j} col={col}"
                    );
                }
            }
        }
    }
}
