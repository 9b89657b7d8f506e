use chrono::{Days, NaiveDate};
use tripcast::eval::{forecast_frame, write_forecast_csv};
use tripcast::frame::{ingest_long_csv, TripFrame};
use tripcast::model::{ModelConfig, ParameterStore};
use tripcast::synth::{generate, SynthConfig};

fn small_model() -> ModelConfig {
    ModelConfig {
        num_layers: 1,
        d_model: 16,
        num_heads: 2,
        d_ff: 32,
        patch_size: 4,
        h: 24,
        c: 16,
        ..ModelConfig::tiny()
    }
}

fn frames() -> Vec<TripFrame> {
    generate(&SynthConfig {
        n_series: 3,
        n_event_days: 80,
        c: 16,
        midpoint: 8.0,
        seed: 5,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn params() -> ParameterStore<f32> {
    ParameterStore::init(&small_model(), 3).unwrap()
}

fn render(fcs: &[tripcast::eval::Forecast]) -> String {
    let mut out = Vec::new();
    write_forecast_csv(fcs, &mut out).unwrap();
    String::from_utf8(out).unwrap()
}

#[test]
fn anchor_on_last_event_date_changes_nothing() {
    let p = params();
    let f = &frames()[0];
    let fc = forecast_frame(&p, f, f.end_date(), 15).unwrap();
    assert_eq!(fc.depth, 0);
    assert_eq!(fc.predicted_count(), 0);
    let text = render(&[fc]);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",0")));
    let back = ingest_long_csv(text.as_bytes()).unwrap();
    assert_eq!(back[0].values(), f.values());
    assert_eq!(back[0].observed(), f.observed());
}

#[test]
fn depth_fifteen_predicts_a_triangle() {
    let p = params();
    let f = &frames()[1];
    let anchor = f.end_date() - Days::new(15);
    let fc = forecast_frame(&p, f, anchor, 15).unwrap();
    assert_eq!(fc.depth, 15);
    assert_eq!(fc.predicted_count(), 15 * 16 / 2);
    let text = render(std::slice::from_ref(&fc));
    let flagged = text.lines().filter(|l| l.ends_with(",1")).count();
    assert_eq!(flagged, 120);

    // Re-ingested output is complete, agrees with the observed cells and
    // carries the predictions where the frontier was.
    let back = ingest_long_csv(text.as_bytes()).unwrap();
    let g = &back[0];
    assert_eq!(g.observed_count(), g.rows() * g.cols());
    for row in 0..g.rows() {
        for col in 0..g.cols() {
            let i = row * g.cols() + col;
            match fc.predicted[i] {
                Some(v) => assert!((g.value(row, col) - v).abs() <= 1e-12 * v.abs().max(1.0)),
                None => assert_eq!(g.value(row, col), f.value(row, col)),
            }
            let lead = (g.cols() - 1 - col) as i64;
            let booked = g.event_date(row) - Days::new(lead as u64);
            assert_eq!(fc.predicted[i].is_some(), booked > anchor);
        }
    }
}

#[test]
fn anchor_outside_frame_or_too_deep_is_rejected() {
    let p = params();
    let f = &frames()[2];
    let before = f.start_date() - Days::new(1);
    let after = f.end_date() + Days::new(1);
    assert!(forecast_frame(&p, f, before, 15).is_err());
    assert!(forecast_frame(&p, f, after, 15).is_err());
    assert!(forecast_frame(&p, f, f.end_date() - Days::new(16), 15).is_err());
    assert!(forecast_frame(&p, f, f.end_date() - Days::new(6), 5).is_err());
}

#[test]
fn predictions_do_not_depend_on_hidden_future() {
    let p = params();
    let f = &frames()[0];
    let anchor = f.end_date() - Days::new(7);
    let a = forecast_frame(&p, f, anchor, 15).unwrap();
    let mut values = f.values().to_vec();
    let cols = f.cols();
    for row in 0..f.rows() {
        for col in 0..cols {
            let lead = (cols - 1 - col) as u64;
            if f.event_date(row) - Days::new(lead) > anchor {
                values[row * cols + col] = 1e6;
            }
        }
    }
    let start: NaiveDate = f.start_date();
    let g = TripFrame::dense(f.series_id(), f.group_id(), start, f.rows(), cols, values).unwrap();
    let b = forecast_frame(&p, &g, anchor, 15).unwrap();
    assert_eq!(a.predicted, b.predicted);
}
