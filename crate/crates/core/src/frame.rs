//! Trip time series data model.
//!
//! A [`TripFrame`] is a 2D series indexed by event date (rows) and leading
//! step (columns). Column `C-1` is the leading step closest to the event
//! (0 days before) and column 0 the farthest (`C-1` days before), so the
//! not-yet-observed cells of the most recent event rows form a lower-right
//! staircase.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use chrono::{Datelike, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mask::{self, MaskMatrix};

/// Header of the long-format dataset file.
pub const LONG_HEADER: &str = "series_id,group_id,event_date,lead,value";

/// Day-of-week (7) + month (12) one-hots, normalized leading index, and
/// normalized event-row index.
pub const COVARIATE_CHANNELS: usize = 21;

/// Upper bound on `H × C` accepted at ingestion.
pub const MAX_FRAME_CELLS: usize = 1 << 26;

/// Inclusive calendar date interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::domain(format!("date range {start}..{end} is empty")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.start.iter_days().take_while(move |d| *d <= self.end)
    }
}

pub fn parse_date(text: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(text.trim(), "%Y-%m-%d").ok()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripFrame {
    series_id: String,
    group_id: String,
    start: NaiveDate,
    h: usize,
    c: usize,
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl TripFrame {
    /// Builds a frame and checks its invariants. Values at unobserved cells
    /// are stored as 0.
    pub fn new(
        series_id: impl Into<String>,
        group_id: impl Into<String>,
        start: NaiveDate,
        h: usize,
        c: usize,
        mut values: Vec<f64>,
        observed: Vec<bool>,
    ) -> Result<Self> {
        let series_id = series_id.into();
        if h == 0 || c == 0 {
            return Err(Error::domain(format!(
                "series `{series_id}`: empty {h}x{c} frame"
            )));
        }
        if values.len() != h * c || observed.len() != h * c {
            return Err(Error::domain(format!(
                "series `{series_id}`: values/observed do not match shape {h}x{c}"
            )));
        }
        if start
            .checked_add_days(chrono::Days::new(h as u64 - 1))
            .is_none()
        {
            return Err(Error::domain(format!(
                "series `{series_id}`: dates overflow the calendar"
            )));
        }
        for row in 0..h {
            let obs = &observed[row * c..(row + 1) * c];
            if let Some(first_gap) = obs.iter().position(|o| !o) {
                if obs[first_gap..].iter().any(|&o| o) {
                    return Err(Error::domain(format!(
                        "series `{series_id}`: row {row} is observed past its frontier"
                    )));
                }
            }
        }
        for (v, &o) in values.iter_mut().zip(&observed) {
            if !o {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::domain(format!(
                    "series `{series_id}`: non-finite observed value"
                )));
            }
        }
        Ok(Self {
            series_id,
            group_id: group_id.into(),
            start,
            h,
            c,
            values,
            observed,
        })
    }

    /// Fully observed frame.
    pub fn dense(
        series_id: impl Into<String>,
        group_id: impl Into<String>,
        start: NaiveDate,
        h: usize,
        c: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        Self::new(series_id, group_id, start, h, c, values, vec![true; h * c])
    }

    pub fn series_id(&self) -> &str {
        &self.series_id
    }

    pub fn group_id(&self) -> &str {
        &self.group_id
    }

    pub fn rows(&self) -> usize {
        self.h
    }

    pub fn cols(&self) -> usize {
        self.c
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start
    }

    pub fn end_date(&self) -> NaiveDate {
        self.event_date(self.h - 1)
    }

    pub fn event_date(&self, row: usize) -> NaiveDate {
        self.start + chrono::Days::new(row as u64)
    }

    pub fn event_dates(&self) -> Vec<NaiveDate> {
        (0..self.h).map(|r| self.event_date(r)).collect()
    }

    /// Row index of `date`, if inside the frame.
    pub fn row_of(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.start).num_days();
        (offset >= 0 && (offset as usize) < self.h).then_some(offset as usize)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    #[inline]
    pub fn value(&self, h: usize, c: usize) -> f64 {
        self.values[h * self.c + c]
    }

    #[inline]
    pub fn is_observed(&self, h: usize, c: usize) -> bool {
        self.observed[h * self.c + c]
    }

    pub fn row_fully_observed(&self, h: usize) -> bool {
        self.observed[h * self.c..(h + 1) * self.c]
            .iter()
            .all(|&o| o)
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// Copy of this frame with every cell whose booking date lies after
    /// `now` marked unobserved.
    pub fn truncated_at(&self, now: NaiveDate) -> Result<TripFrame> {
        let mut observed = self.observed.clone();
        for row in 0..self.h {
            let ahead = (self.event_date(row) - now).num_days();
            for col in 0..self.c {
                let lead = (self.c - 1 - col) as i64;
                if ahead - lead > 0 {
                    observed[row * self.c + col] = false;
                }
            }
        }
        TripFrame::new(
            self.series_id.clone(),
            self.group_id.clone(),
            self.start,
            self.h,
            self.c,
            self.values.clone(),
            observed,
        )
    }
}

/// Options for [`ingest_long_csv_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// Number of leading steps per frame. When absent, `max(lead) + 1` over
    /// the whole stream is used so every frame shares one width.
    pub leading_steps: Option<usize>,
}

struct Record {
    date: NaiveDate,
    lead: usize,
    value: f64,
}

/// Reads the long-format file with the leading width inferred from the data.
pub fn ingest_long_csv<R: BufRead>(reader: R) -> Result<Vec<TripFrame>> {
    ingest_long_csv_with(reader, IngestOptions::default())
}

pub fn ingest_long_csv_with<R: BufRead>(reader: R, opts: IngestOptions) -> Result<Vec<TripFrame>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, String> = HashMap::new();
    let mut records: HashMap<String, Vec<Record>> = HashMap::new();
    let mut seen: HashSet<(String, NaiveDate, usize)> = HashSet::new();
    let mut max_lead = 0usize;
    let mut header_seen = false;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::parse(line_no, format!("unreadable line: {e}")))?;
        let line = line.trim_end_matches('\r');
        if !header_seen {
            let header = line.trim_start_matches('\u{feff}').trim();
            if header != LONG_HEADER && header != format!("{LONG_HEADER},predicted") {
                return Err(Error::parse(
                    line_no,
                    format!("expected header `{LONG_HEADER}`"),
                ));
            }
            header_seen = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 && fields.len() != 6 {
            return Err(Error::parse(
                line_no,
                format!("expected 5 fields, found {}", fields.len()),
            ));
        }
        let series_id = fields[0].trim();
        let group_id = fields[1].trim();
        if series_id.is_empty() {
            return Err(Error::parse(line_no, "empty series_id"));
        }
        let date = parse_date(fields[2])
            .ok_or_else(|| Error::parse(line_no, format!("malformed date `{}`", fields[2])))?;
        let lead: i64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| Error::parse(line_no, format!("non-integer lead `{}`", fields[3])))?;
        if lead < 0 {
            return Err(Error::domain(format!(
                "line {line_no}: negative lead {lead}"
            )));
        }
        let value: f64 = fields[4]
            .trim()
            .parse()
            .map_err(|_| Error::parse(line_no, format!("non-numeric value `{}`", fields[4])))?;
        if !value.is_finite() {
            return Err(Error::parse(
                line_no,
                format!("non-finite value `{}`", fields[4]),
            ));
        }
        let lead = lead as usize;
        if let Some(limit) = opts.leading_steps {
            if lead >= limit {
                return Err(Error::domain(format!(
                    "line {line_no}: lead {lead} outside [0, {}]",
                    limit.saturating_sub(1)
                )));
            }
        }
        if lead >= MAX_FRAME_CELLS {
            return Err(Error::domain(format!(
                "line {line_no}: lead {lead} is too large"
            )));
        }
        match groups.get(series_id) {
            Some(g) if g != group_id => {
                return Err(Error::parse(
                    line_no,
                    format!("series `{series_id}` changes group from `{g}` to `{group_id}`"),
                ))
            }
            Some(_) => {}
            None => {
                groups.insert(series_id.to_string(), group_id.to_string());
                order.push(series_id.to_string());
            }
        }
        if !seen.insert((series_id.to_string(), date, lead)) {
            return Err(Error::Duplicate {
                line: line_no,
                series_id: series_id.to_string(),
                event_date: date.to_string(),
                lead: lead as i64,
            });
        }
        max_lead = max_lead.max(lead);
        records
            .entry(series_id.to_string())
            .or_default()
            .push(Record { date, lead, value });
    }

    let c = opts.leading_steps.unwrap_or(max_lead + 1);
    let mut frames = Vec::with_capacity(order.len());
    for series_id in order {
        let recs = &records[&series_id];
        let start = recs
            .iter()
            .map(|r| r.date)
            .min()
            .expect("series has records");
        let end = recs
            .iter()
            .map(|r| r.date)
            .max()
            .expect("series has records");
        let h = (end - start).num_days() as usize + 1;
        if h.saturating_mul(c) > MAX_FRAME_CELLS {
            return Err(Error::domain(format!(
                "series `{series_id}`: {h}x{c} frame exceeds the size limit"
            )));
        }
        let mut values = vec![0.0; h * c];
        let mut observed = vec![false; h * c];
        for r in recs {
            let row = (r.date - start).num_days() as usize;
            let col = c - 1 - r.lead;
            values[row * c + col] = r.value;
            observed[row * c + col] = true;
        }
        let group = groups.remove(&series_id).unwrap_or_default();
        frames.push(TripFrame::new(
            series_id, group, start, h, c, values, observed,
        )?);
    }
    Ok(frames)
}

/// Writes observed cells in long format.
pub fn write_long_csv<W: Write>(frames: &[TripFrame], mut out: W) -> Result<()> {
    writeln!(out, "{LONG_HEADER}")?;
    for f in frames {
        for row in 0..f.h {
            let date = f.event_date(row);
            for col in 0..f.c {
                if f.is_observed(row, col) {
                    writeln!(
                        out,
                        "{},{},{},{},{}",
                        f.series_id,
                        f.group_id,
                        date,
                        f.c - 1 - col,
                        f.value(row, col)
                    )?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Inference-time frontier of depth `now_offset`: the last `d` event rows
/// have `1..=d` trailing leading steps unobserved.
pub fn frontier_mask(h: usize, c: usize, now_offset: usize) -> Result<MaskMatrix> {
    mask::staircase(h, c, now_offset)
}

/// Date covariates for one cell: day-of-week one-hot, month one-hot,
/// `c/(C-1)` and `h/(H-1)`.
pub fn cell_covariates(
    event_date: NaiveDate,
    h: usize,
    c: usize,
    rows: usize,
    cols: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), COVARIATE_CHANNELS);
    out.fill(0.0);
    out[event_date.weekday().num_days_from_monday() as usize] = 1.0;
    out[7 + event_date.month0() as usize] = 1.0;
    out[19] = if cols > 1 {
        c as f64 / (cols - 1) as f64
    } else {
        0.0
    };
    out[20] = if rows > 1 {
        h as f64 / (rows - 1) as f64
    } else {
        0.0
    };
}

/// One fixed-size model input window.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub series_id: String,
    pub window_start: NaiveDate,
    pub h: usize,
    pub c: usize,
    pub k: usize,
    /// Input values, 0 at unobserved cells.
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
    /// Covariates, `h × c × k` row-major.
    pub covariates: Vec<f64>,
    /// Ground truth; equal to `values` wherever the source was observed.
    pub target: Vec<f64>,
}

impl Instance {
    /// Cuts rows `start_row..start_row + h` and the last `c` columns out of
    /// `frame`. Cells in `hide` are treated as unobserved inputs while their
    /// ground truth stays in `target`.
    pub fn from_frame(
        frame: &TripFrame,
        start_row: usize,
        h: usize,
        c: usize,
        hide: Option<&MaskMatrix>,
    ) -> Result<Instance> {
        if h == 0 || c == 0 || start_row + h > frame.h || c > frame.c {
            return Err(Error::domain(format!(
                "window {h}x{c} at row {start_row} does not fit a {}x{} frame",
                frame.h, frame.c
            )));
        }
        let col0 = frame.c - c;
        let mut values = Vec::with_capacity(h * c);
        let mut target = Vec::with_capacity(h * c);
        let mut observed = Vec::with_capacity(h * c);
        let mut covariates = vec![0.0; h * c * COVARIATE_CHANNELS];
        for row in 0..h {
            let date = frame.event_date(start_row + row);
            for col in 0..c {
                let v = frame.value(start_row + row, col0 + col);
                let obs = frame.is_observed(start_row + row, col0 + col)
                    && !hide.is_some_and(|m| m.get(row, col));
                target.push(v);
                values.push(if obs { v } else { 0.0 });
                observed.push(obs);
                let at = (row * c + col) * COVARIATE_CHANNELS;
                cell_covariates(
                    date,
                    row,
                    col,
                    h,
                    c,
                    &mut covariates[at..at + COVARIATE_CHANNELS],
                );
            }
        }
        Ok(Instance {
            series_id: frame.series_id.clone(),
            window_start: frame.event_date(start_row),
            h,
            c,
            k: COVARIATE_CHANNELS,
            values,
            observed,
            covariates,
            target,
        })
    }

    pub fn date_at(&self, row: usize) -> NaiveDate {
        self.window_start + chrono::Days::new(row as u64)
    }
}

/// True if every cell of the window is observed.
fn window_complete(frame: &TripFrame, start_row: usize, h: usize, c: usize) -> bool {
    let col0 = frame.c - c;
    (start_row..start_row + h).all(|row| (col0..frame.c).all(|col| frame.is_observed(row, col)))
}

fn window_starts(frame: &TripFrame, h: usize, c: usize, stride: usize) -> Vec<usize> {
    if h == 0 || c == 0 || frame.h < h || frame.c < c {
        return Vec::new();
    }
    (0..=frame.h - h)
        .step_by(stride)
        .filter(|&s| window_complete(frame, s, h, c))
        .collect()
}

/// Sliding windows along the event axis. Windows with any unobserved cell
/// are dropped; a frame smaller than the window yields nothing.
pub fn window_slice(frame: &TripFrame, h: usize, c: usize, stride: usize) -> Result<Vec<Instance>> {
    if stride == 0 {
        return Err(Error::domain("window stride must be at least 1"));
    }
    window_starts(frame, h, c, stride)
        .into_iter()
        .map(|s| Instance::from_frame(frame, s, h, c, None))
        .collect()
}

/// Random-access source of training instances.
pub trait Dataset: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn instance(&self, index: usize) -> Result<Instance>;
}

impl Dataset for [Instance] {
    fn len(&self) -> usize {
        <[Instance]>::len(self)
    }

    fn instance(&self, index: usize) -> Result<Instance> {
        Ok(self[index].clone())
    }
}

impl Dataset for Vec<Instance> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn instance(&self, index: usize) -> Result<Instance> {
        Ok(self[index].clone())
    }
}

/// Windowed view over frames that materializes instances on demand.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    frames: Vec<TripFrame>,
    index: Vec<(usize, usize)>,
    h: usize,
    c: usize,
}

impl WindowedDataset {
    pub fn new(frames: Vec<TripFrame>, h: usize, c: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::domain("window stride must be at least 1"));
        }
        let index = frames
            .iter()
            .enumerate()
            .flat_map(|(fi, f)| {
                window_starts(f, h, c, stride)
                    .into_iter()
                    .map(move |s| (fi, s))
            })
            .collect();
        Ok(Self {
            frames,
            index,
            h,
            c,
        })
    }

    pub fn frames(&self) -> &[TripFrame] {
        &self.frames
    }
}

impl Dataset for WindowedDataset {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn instance(&self, index: usize) -> Result<Instance> {
        let (fi, start) = self.index[index];
        Instance::from_frame(&self.frames[fi], start, self.h, self.c, None)
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub pretrain: Vec<TripFrame>,
    pub traintest: Vec<TripFrame>,
    pub validation_range: DateRange,
    pub test_range: DateRange,
}

pub fn default_validation_range() -> DateRange {
    DateRange {
        start: NaiveDate::from_ymd_opt(2019, 6, 1).expect("valid date"),
        end: NaiveDate::from_ymd_opt(2019, 8, 31).expect("valid date"),
    }
}

pub fn default_test_range() -> DateRange {
    DateRange {
        start: NaiveDate::from_ymd_opt(2019, 9, 1).expect("valid date"),
        end: NaiveDate::from_ymd_opt(2019, 12, 31).expect("valid date"),
    }
}

/// Group-aware pretrain/train-test split with the default date ranges.
pub fn split_dataset(
    frames: Vec<TripFrame>,
    pretrain_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    split_dataset_with_ranges(
        frames,
        pretrain_fraction,
        seed,
        default_validation_range(),
        default_test_range(),
    )
}

/// Shuffles group ids by `seed`, then picks the set of whole groups whose
/// series count is closest to `pretrain_fraction` of the total while leaving
/// both sides non-empty.
pub fn split_dataset_with_ranges(
    frames: Vec<TripFrame>,
    pretrain_fraction: f64,
    seed: u64,
    validation_range: DateRange,
    test_range: DateRange,
) -> Result<DatasetSplit> {
    if !(pretrain_fraction > 0.0 && pretrain_fraction < 1.0) {
        return Err(Error::Split(format!(
            "pretrain fraction {pretrain_fraction} outside (0, 1)"
        )));
    }
    if test_range.start <= validation_range.end {
        return Err(Error::Split(
            "test range must start after the validation range ends".into(),
        ));
    }
    let mut group_order: Vec<&str> = Vec::new();
    let mut sizes: HashMap<&str, usize> = HashMap::new();
    for f in &frames {
        let e = sizes.entry(f.group_id()).or_insert(0);
        if *e == 0 {
            group_order.push(f.group_id());
        }
        *e += 1;
    }
    if group_order.len() < 2 {
        return Err(Error::Split(format!(
            "need at least 2 groups, found {}",
            group_order.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    group_order.shuffle(&mut rng);

    let total = frames.len();
    let group_sizes: Vec<usize> = group_order.iter().map(|g| sizes[g]).collect();
    let chosen = closest_subset(&group_sizes, pretrain_fraction * total as f64);
    let pretrain_groups: HashSet<String> =
        chosen.iter().map(|&i| group_order[i].to_string()).collect();

    let (pretrain, traintest) = frames
        .into_iter()
        .partition(|f| pretrain_groups.contains(f.group_id()));
    Ok(DatasetSplit {
        pretrain,
        traintest,
        validation_range,
        test_range,
    })
}

/// Indices of a subset of `sizes` whose sum is closest to `target`, with the
/// sum strictly between 0 and the total. Ties go to the larger sum.
fn closest_subset(sizes: &[usize], target: f64) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    // reach[i][s]: sum s is achievable using the first i groups.
    let mut reach = vec![vec![false; total + 1]; sizes.len() + 1];
    reach[0][0] = true;
    for (i, &size) in sizes.iter().enumerate() {
        for s in 0..=total {
            if reach[i][s] {
                reach[i + 1][s] = true;
                reach[i + 1][s + size] = true;
            }
        }
    }
    let best = (1..total)
        .filter(|&s| reach[sizes.len()][s])
        .min_by(|&a, &b| {
            let da = (a as f64 - target).abs();
            let db = (b as f64 - target).abs();
            da.partial_cmp(&db).expect("finite").then(b.cmp(&a))
        })
        .expect("at least two non-empty groups give a proper subset");
    let mut picked = Vec::new();
    let mut s = best;
    for i in (0..sizes.len()).rev() {
        // Prefer taking group i when the remainder stays reachable.
        if s >= sizes[i] && reach[i][s - sizes[i]] {
            picked.push(i);
            s -= sizes[i];
        } else {
            debug_assert!(reach[i][s]);
        }
    }
    debug_assert_eq!(s, 0);
    picked.reverse();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn date(s: &str) -> NaiveDate {
        parse_date(s).unwrap()
    }

    fn ingest(text: &str) -> Result<Vec<TripFrame>> {
        ingest_long_csv(Cursor::new(text.as_bytes()))
    }

    #[test]
    fn ingest_three_leads_single_row() {
        let text = format!(
            "{LONG_HEADER}\ns1,g1,2019-01-01,0,3\ns1,g1,2019-01-01,1,2\ns1,g1,2019-01-01,2,1\n"
        );
        let frames = ingest(&text).unwrap();
        assert_eq!(frames.len(), 1);
        let f = &frames[0];
        assert_eq!((f.rows(), f.cols()), (1, 3));
        assert_eq!(f.values(), &[1.0, 2.0, 3.0]);
        assert!(f.observed().iter().all(|&o| o));

        let wide = ingest_long_csv_with(
            Cursor::new(text.as_bytes()),
            IngestOptions {
                leading_steps: Some(3),
            },
        )
        .unwrap();
        assert_eq!(wide, frames);
    }

    #[test]
    fn ingest_empty_stream() {
        assert!(ingest("").unwrap().is_empty());
        assert!(ingest(&format!("{LONG_HEADER}\n")).unwrap().is_empty());
    }

    #[test]
    fn ingest_fills_date_gap_with_unobserved_row() {
        let text = format!("{LONG_HEADER}\ns,g,2019-01-01,0,1\ns,g,2019-01-03,0,2\n");
        let f = &ingest(&text).unwrap()[0];
        assert_eq!(f.rows(), 3);
        assert_eq!(f.event_dates()[1], date("2019-01-02"));
        assert!(f.is_observed(0, 0) && !f.is_observed(1, 0) && f.is_observed(2, 0));
    }

    #[test]
    fn ingest_errors() {
        let bad_date = format!("{LONG_HEADER}\ns,g,2019-13-01,0,1\n");
        assert!(matches!(
            ingest(&bad_date),
            Err(Error::Parse { line: 2, .. })
        ));
        let bad_value = format!("{LONG_HEADER}\ns,g,2019-01-01,0,1\ns,g,2019-01-02,0,abc\n");
        assert!(matches!(
            ingest(&bad_value),
            Err(Error::Parse { line: 3, .. })
        ));
        let dup = format!("{LONG_HEADER}\ns,g,2019-01-01,0,1\ns,g,2019-01-01,0,2\n");
        assert!(matches!(
            ingest(&dup),
            Err(Error::Duplicate { line: 3, .. })
        ));
        let neg = format!("{LONG_HEADER}\ns,g,2019-01-01,-1,1\n");
        assert!(matches!(ingest(&neg), Err(Error::Domain(_))));
        assert!(matches!(
            ingest("a,b,c\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        let limit = ingest_long_csv_with(
            Cursor::new(format!("{LONG_HEADER}\ns,g,2019-01-01,5,1\n").as_bytes()),
            IngestOptions {
                leading_steps: Some(3),
            },
        );
        assert!(matches!(limit, Err(Error::Domain(_))));
    }

    #[test]
    fn ingest_rejects_observations_past_frontier() {
        // Lead 0 observed while lead 1 is missing.
        let text = format!("{LONG_HEADER}\ns,g,2019-01-01,0,1\ns,g,2019-01-01,2,1\n");
        assert!(matches!(ingest(&text), Err(Error::Domain(_))));
    }

    #[test]
    fn frontier_mask_examples() {
        assert!(frontier_mask(5, 5, 0).unwrap().is_empty());
        let m = frontier_mask(4, 4, 2).unwrap();
        let cells: Vec<_> = m.masked_cells().collect();
        assert_eq!(cells, vec![(2, 3), (3, 2), (3, 3)]);
        assert_eq!(frontier_mask(60, 40, 15).unwrap().count(), 120);
        assert!(frontier_mask(4, 4, 4).is_err());
        assert!(frontier_mask(60, 3, 4).is_err());
    }

    /// Direct evaluation of the frontier inequality.
    fn brute_frontier(h: usize, c: usize, d: usize) -> Vec<bool> {
        let mut bits = Vec::new();
        for row in 0..h as i64 {
            for col in 0..c as i64 {
                let edge = h as i64 - 1 - d as i64;
                bits.push(row > edge && col > c as i64 - 1 - (row - edge));
            }
        }
        bits
    }

    proptest! {
        #[test]
        fn frontier_mask_count_and_monotone(h in 2usize..70, c in 1usize..50, d_frac in 0.0f64..1.0) {
            let limit = (h - 1).min(c);
            let d = (d_frac * (limit + 1) as f64) as usize;
            let d = d.min(limit);
            let m = frontier_mask(h, c, d).unwrap();
            prop_assert_eq!(m.count(), d * (d + 1) / 2);
            let brute = brute_frontier(h, c, d);
            prop_assert_eq!(m.bits(), brute.as_slice());
            if d < limit {
                prop_assert!(m.is_subset_of(&frontier_mask(h, c, d + 1).unwrap()));
            }
        }

        #[test]
        fn long_format_round_trip(
            rows in 1usize..6,
            cols in 1usize..6,
            depths in proptest::collection::vec(0usize..6, 6),
            vals in proptest::collection::vec(-1e6f64..1e6, 36),
        ) {
            let observed: Vec<bool> = (0..rows * cols)
                .map(|i| {
                    let (r, c) = (i / cols, i % cols);
                    c < cols - depths[r].min(cols - 1)
                })
                .collect();
            let f = TripFrame::new("s", "g", date("2019-03-01"), rows, cols,
                vals[..rows * cols].to_vec(), observed).unwrap();
            let mut buf = Vec::new();
            write_long_csv(std::slice::from_ref(&f), &mut buf).unwrap();
            let back = ingest_long_csv_with(Cursor::new(buf), IngestOptions { leading_steps: Some(cols) }).unwrap();
            prop_assert_eq!(back.len(), 1);
            let g = &back[0];
            for r in 0..rows {
                for c in 0..cols {
                    if f.is_observed(r, c) {
                        prop_assert!(g.is_observed(r, c));
                        prop_assert_eq!(g.value(r, c).to_bits(), f.value(r, c).to_bits());
                    }
                }
            }
        }

        #[test]
        fn split_never_crosses_groups(seed in any::<u64>(), n_groups in 2usize..30) {
            let frames: Vec<TripFrame> = (0..n_groups * 2)
                .map(|i| dense(&format!("s{i}"), &format!("g{}", i % n_groups), 1))
                .collect();
            let split = split_dataset(frames, 0.9, seed).unwrap();
            let a: HashSet<_> = split.pretrain.iter().map(|f| f.group_id().to_string()).collect();
            let b: HashSet<_> = split.traintest.iter().map(|f| f.group_id().to_string()).collect();
            prop_assert!(a.is_disjoint(&b));
            prop_assert!(!a.is_empty() && !b.is_empty());
        }
    }

    fn dense(id: &str, group: &str, h: usize) -> TripFrame {
        TripFrame::dense(id, group, date("2019-01-01"), h, 2, vec![1.0; h * 2]).unwrap()
    }

    #[test]
    fn window_counts() {
        let f60 = dense("a", "g", 60);
        assert_eq!(window_slice(&f60, 60, 2, 1).unwrap().len(), 1);
        let f75 = dense("a", "g", 75);
        let w = window_slice(&f75, 60, 2, 5).unwrap();
        let starts: Vec<_> = w.iter().map(|i| i.window_start).collect();
        let expected: Vec<_> = [0u64, 5, 10, 15]
            .iter()
            .map(|&d| date("2019-01-01") + chrono::Days::new(d))
            .collect();
        assert_eq!(starts, expected);
        assert!(window_slice(&dense("a", "g", 59), 60, 2, 1)
            .unwrap()
            .is_empty());
        assert!(window_slice(&f60, 60, 3, 1).unwrap().is_empty());
        assert!(window_slice(&f60, 60, 2, 0).is_err());
    }

    #[test]
    fn windows_with_gaps_are_dropped_and_leading_axis_truncated() {
        let h = 8;
        let c = 4;
        let values: Vec<f64> = (0..h * c).map(|i| i as f64).collect();
        let mut observed = vec![true; h * c];
        observed[5 * c + 3] = false;
        let f = TripFrame::new("s", "g", date("2019-01-01"), h, c, values, observed).unwrap();
        let w = window_slice(&f, 3, 2, 1).unwrap();
        // Windows starting at rows 3, 4, 5 contain (5, 3).
        let starts: Vec<_> = w
            .iter()
            .map(|i| (i.window_start - f.start_date()).num_days())
            .collect();
        assert_eq!(starts, vec![0, 1, 2]);
        assert_eq!(&w[0].values[..2], &[2.0, 3.0]);
        assert_eq!(w[0].k, COVARIATE_CHANNELS);
        assert_eq!(w[0].covariates.len(), 3 * 2 * COVARIATE_CHANNELS);

        let ds = WindowedDataset::new(vec![f.clone()], 3, 2, 1).unwrap();
        assert_eq!(Dataset::len(&ds), 3);
        assert_eq!(ds.instance(2).unwrap(), w[2]);
    }

    #[test]
    fn covariates_encode_dates_and_positions() {
        let mut out = [0.0; COVARIATE_CHANNELS];
        // 2019-09-02 is a Monday in September.
        cell_covariates(date("2019-09-02"), 30, 39, 61, 40, &mut out);
        assert_eq!(out[0], 1.0);
        assert_eq!(out[7 + 8], 1.0);
        assert_eq!(out.iter().take(19).sum::<f64>(), 2.0);
        assert_eq!(out[19], 1.0);
        assert_eq!(out[20], 0.5);
    }

    #[test]
    fn truncation_produces_frontier() {
        let f = dense("a", "g", 10);
        let now = f.event_date(7);
        let t = f.truncated_at(now).unwrap();
        let unobserved: Vec<bool> = t.observed().iter().map(|o| !o).collect();
        assert_eq!(unobserved, frontier_mask(10, 2, 2).unwrap().bits());
    }

    #[test]
    fn split_examples() {
        let frames: Vec<TripFrame> = (0..10)
            .map(|i| dense(&format!("s{i}"), &format!("g{i}"), 1))
            .collect();
        let split = split_dataset(frames.clone(), 0.9, 42).unwrap();
        assert_eq!(split.pretrain.len(), 9);
        assert_eq!(split.traintest.len(), 1);
        let again = split_dataset(frames, 0.9, 42).unwrap();
        assert_eq!(split.pretrain, again.pretrain);
        assert_eq!(split.traintest, again.traintest);
        assert_eq!(split.validation_range, default_validation_range());
        assert_eq!(split.test_range, default_test_range());

        let mut sized = Vec::new();
        for (g, n) in [("a", 5), ("b", 3), ("c", 2)] {
            for i in 0..n {
                sized.push(dense(&format!("{g}{i}"), g, 1));
            }
        }
        for seed in 0..20 {
            let s = split_dataset(sized.clone(), 0.9, seed).unwrap();
            assert_eq!(s.pretrain.len(), 8, "seed {seed}");
            assert!(s.traintest.iter().all(|f| f.group_id() == "c"));
        }
        assert!(split_dataset(vec![dense("x", "g", 1), dense("y", "g", 1)], 0.9, 0).is_err());
        assert!(split_dataset(sized, 1.0, 0).is_err());
    }

    /// Exhaustive enumeration of group subsets against the DP.
    #[test]
    fn closest_subset_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        use rand::Rng;
        for _ in 0..200 {
            let n = rng.random_range(2..9);
            let sizes: Vec<usize> = (0..n).map(|_| rng.random_range(1..7)).collect();
            let total: usize = sizes.iter().sum();
            let target = rng.random_range(0.05..0.95) * total as f64;
            let mut best = f64::INFINITY;
            for bits in 1u32..(1 << n) - 1 {
                let s: usize = (0..n)
                    .filter(|i| bits >> i & 1 == 1)
                    .map(|i| sizes[i])
                    .sum();
                if s > 0 && s < total {
                    best = best.min((s as f64 - target).abs());
                }
            }
            let picked = closest_subset(&sizes, target);
            let s: usize = picked.iter().map(|&i| sizes[i]).sum();
            assert!(((s as f64 - target).abs() - best).abs() < 1e-9);
        }
    }
}
