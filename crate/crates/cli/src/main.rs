use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use tripcast::checkpoint::{check_config, load_checkpoint, save_checkpoint};
use tripcast::config::RunConfig;
use tripcast::eval::{
    anchored_instance, evaluate_zero_shot, forecast_frame, out_domain_report, write_forecast_csv,
    BaselineForecaster, EvalReport, EvalSpec, Forecaster, ModelForecaster, OracleForecaster,
};
use tripcast::frame::{
    ingest_long_csv_with, parse_date, split_dataset_with_ranges, IngestOptions, TripFrame,
    WindowedDataset,
};
use tripcast::model::{count_parameters, ParameterStore};
use tripcast::synth::{emit_long_csv, generate, make_benchmark_suite};
use tripcast::train::{LossLog, LossRow, TrainState, Trainer};
use tripcast::{Error, Result};

#[derive(Parser)]
#[command(
    name = "tripcast",
    version,
    about = "Masked 2D transformer for trip time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic datasets and a hash manifest.
    Synth {
        /// Config with `synth.*` keys; without one the benchmark suite is written.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pre-train a model on the configured datasets.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Zero-shot evaluation against the naive baselines.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Report name for the dataset; defaults to the file stem.
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        horizon: Option<usize>,
        /// Score the held-out domain file instead of the in-domain split.
        #[arg(long)]
        out_domain: bool,
        /// Also write predicted-vs-actual curves for the last anchor of each series.
        #[arg(long)]
        curves: bool,
        /// Score ground truth as the model's forecast.
        #[arg(long, hide = true)]
        oracle: bool,
    },
    /// Fill the unobserved frontier of every series in a long-format file.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Long-format input file.
        #[arg(long)]
        frames: PathBuf,
        #[arg(long, value_parser = parse_anchor)]
        anchor: NaiveDate,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
        /// Largest accepted frontier depth.
        #[arg(long, default_value_t = 15)]
        horizon: usize,
    },
    /// Print a checkpoint summary.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn parse_anchor(s: &str) -> std::result::Result<NaiveDate, String> {
    parse_date(s).ok_or_else(|| format!("expected YYYY-MM-DD, found `{s}`"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("TRIPCAST_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config {
            key: "TRIPCAST_THREADS".into(),
            msg: format!("expected a positive integer, found `{v}`"),
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Domain(e.to_string()))
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { config, out, seed } => cmd_synth(config.as_deref(), &out, seed),
        Command::Pretrain {
            config,
            out,
            checkpoint,
            seed,
        } => cmd_pretrain(&config, &out, checkpoint.as_deref(), seed),
        Command::Evaluate {
            config,
            checkpoint,
            out,
            dataset,
            horizon,
            out_domain,
            curves,
            oracle,
        } => cmd_evaluate(EvalArgs {
            config: &config,
            checkpoint: &checkpoint,
            out: &out,
            dataset,
            horizon,
            out_domain,
            curves,
            oracle,
        }),
        Command::Forecast {
            checkpoint,
            frames,
            anchor,
            out,
            horizon,
        } => cmd_forecast(&checkpoint, &frames, anchor, &out, horizon),
        Command::Inspect { checkpoint } => cmd_inspect(&checkpoint),
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn cmd_synth(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = config.map(RunConfig::load).transpose()?;
    let datasets = match cfg.as_ref().and_then(|c| c.synth.clone()) {
        Some(mut s) => {
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let frames = generate(&s)?;
            vec![(s.name.clone(), frames)]
        }
        None => {
            let base = seed
                .or(cfg.as_ref().map(|c| c.synth_suite_seed))
                .unwrap_or(0);
            make_benchmark_suite(base)?
        }
    };
    fs::create_dir_all(out)?;
    let mut manifest = String::from("sha256,file,series,rows\n");
    for (name, frames) in &datasets {
        let mut bytes = Vec::new();
        emit_long_csv(frames, &mut bytes)?;
        let file = format!("{name}.csv");
        fs::write(out.join(&file), &bytes)?;
        let rows = bytes.iter().filter(|&&b| b == b'\n').count() - 1;
        manifest.push_str(&format!(
            "{},{file},{},{rows}\n",
            hex_digest(&bytes),
            frames.len()
        ));
        println!(
            "wrote {} ({} series, {rows} rows)",
            out.join(&file).display(),
            frames.len()
        );
    }
    fs::write(out.join("manifest.txt"), manifest)?;
    Ok(())
}

fn require_file(key: &str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config {
            key: key.into(),
            msg: format!("no such file: {}", path.display()),
        })
    }
}

fn ingest(path: &Path, cfg: &RunConfig) -> Result<Vec<TripFrame>> {
    let file = fs::File::open(path)?;
    let opts = IngestOptions {
        leading_steps: cfg.data.leading_steps,
    };
    ingest_long_csv_with(BufReader::new(file), opts)
        .map_err(|e| Error::Domain(format!("{}: {e}", path.display())))
}

fn ingest_train(cfg: &RunConfig) -> Result<Vec<TripFrame>> {
    let mut frames = Vec::new();
    for p in &cfg.data.train {
        frames.extend(ingest(p, cfg)?);
    }
    Ok(frames)
}

fn load_run_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn write_log(path: &Path, earlier: &[LossRow], log: &LossLog) -> Result<()> {
    let all = LossLog {
        rows: earlier.iter().chain(&log.rows).copied().collect(),
    };
    fs::write(path, all.to_table())?;
    Ok(())
}

/// Rows of an existing log up to `iteration`, kept when resuming.
fn earlier_rows(path: &Path, iteration: u64) -> Result<Vec<LossRow>> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(Vec::new());
    };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        let parsed = (parts.len() == 3)
            .then(|| {
                Some((
                    parts[0].parse().ok()?,
                    parts[1].parse().ok()?,
                    parts[2].parse().ok()?,
                ))
            })
            .flatten();
        let (it, loss, lr) = parsed.ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("{}: malformed loss log row", path.display()),
        })?;
        if it <= iteration {
            rows.push(LossRow {
                iteration: it,
                loss,
                lr,
            });
        }
    }
    Ok(rows)
}

fn cmd_pretrain(config: &Path, out: &Path, resume: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let cfg = load_run_config(config, seed)?;
    if cfg.data.train.is_empty() {
        return Err(Error::Config {
            key: "data.train".into(),
            msg: "no training files configured".into(),
        });
    }
    for p in &cfg.data.train {
        require_file("data.train", p)?;
    }
    let resumed = match resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            check_config(ck.config(), &cfg.model)?;
            Some(ck)
        }
        None => None,
    };

    let frames = ingest_train(&cfg)?;
    let split = split_dataset_with_ranges(
        frames,
        cfg.data.pretrain_fraction,
        cfg.data.split_seed,
        cfg.data.validation_range,
        cfg.data.test_range,
    )?;
    let n_series = split.pretrain.len();
    let dataset = WindowedDataset::new(split.pretrain, cfg.model.h, cfg.model.c, cfg.data.stride)?;

    println!("parameters={}", count_parameters(&cfg.model));
    println!("pretrain_series={n_series}");
    println!(
        "pretrain_windows={}",
        tripcast::frame::Dataset::len(&dataset)
    );
    print!("{}", cfg.to_kv());

    fs::create_dir_all(out)?;
    let log_path = out.join("loss_log.csv");
    let (mut trainer, earlier) = match resumed {
        Some(ck) => {
            let earlier = earlier_rows(&log_path, ck.state.iteration)?;
            let t = Trainer::resume(&dataset, cfg.train.clone(), ck.params, ck.state)?;
            (t, earlier)
        }
        None => (
            Trainer::new(&dataset, cfg.train.clone(), &cfg.model)?,
            Vec::new(),
        ),
    };
    let save =
        |params: &ParameterStore<f32>, state: &TrainState<f32>, periodic: bool| -> Result<()> {
            if periodic {
                save_checkpoint(
                    params,
                    state,
                    &out.join(format!("checkpoint-{:06}.ckpt", state.iteration)),
                )?;
            }
            save_checkpoint(params, state, &out.join("checkpoint.ckpt"))
        };
    while !trainer.is_done() {
        match trainer.step() {
            Ok(Some(row)) => println!(
                "iteration={} loss={} lr={}",
                row.iteration, row.loss, row.lr
            ),
            Ok(None) => {}
            Err(e) => {
                write_log(&log_path, &earlier, trainer.log())?;
                return Err(e);
            }
        }
        if trainer.iteration() % cfg.train.checkpoint_every == 0 {
            save(trainer.params(), trainer.state(), true)?;
            write_log(&log_path, &earlier, trainer.log())?;
        }
    }
    save(trainer.params(), trainer.state(), false)?;
    write_log(&log_path, &earlier, trainer.log())?;
    println!("checkpoint={}", out.join("checkpoint.ckpt").display());
    Ok(())
}

struct EvalArgs<'a> {
    config: &'a Path,
    checkpoint: &'a Path,
    out: &'a Path,
    dataset: Option<String>,
    horizon: Option<usize>,
    out_domain: bool,
    curves: bool,
    oracle: bool,
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn cmd_evaluate(args: EvalArgs) -> Result<()> {
    let mut cfg = load_run_config(args.config, None)?;
    if let Some(h) = args.horizon {
        cfg.eval.horizon = h;
    }
    cfg.validate()?;
    let source = if args.out_domain {
        cfg.data.out_domain.clone().ok_or_else(|| Error::Config {
            key: "data.out_domain".into(),
            msg: "required with --out-domain".into(),
        })?
    } else if let Some(p) = &cfg.data.eval {
        p.clone()
    } else {
        cfg.data
            .train
            .first()
            .cloned()
            .ok_or_else(|| Error::Config {
                key: "data.train".into(),
                msg: "no evaluation data configured".into(),
            })?
    };
    let key = if args.out_domain {
        "data.out_domain"
    } else if cfg.data.eval.is_some() {
        "data.eval"
    } else {
        "data.train"
    };
    require_file(key, &source)?;
    if key == "data.train" {
        for p in &cfg.data.train {
            require_file(key, p)?;
        }
    }
    let ck = load_checkpoint(args.checkpoint)?;
    check_config(ck.config(), &cfg.model)?;

    let frames = if key == "data.train" {
        let split = split_dataset_with_ranges(
            ingest_train(&cfg)?,
            cfg.data.pretrain_fraction,
            cfg.data.split_seed,
            cfg.data.validation_range,
            cfg.data.test_range,
        )?;
        split.traintest
    } else {
        ingest(&source, &cfg)?
    };
    let name = args.dataset.unwrap_or_else(|| stem(&source));
    let spec = EvalSpec {
        dataset: &name,
        window: &cfg.model,
        horizon: cfg.eval.horizon,
        h_pred_max: cfg.train.mask_policy.h_pred_max,
        range: cfg.eval_range(),
        anchor_stride: cfg.eval.anchor_stride,
    };

    let model = ModelForecaster::new(&ck.params);
    let mut forecasters: Vec<Box<dyn Forecaster + '_>> = Vec::new();
    if args.oracle {
        forecasters.push(Box::new(OracleForecaster));
    } else {
        forecasters.push(Box::new(model));
    }
    for &b in &cfg.eval.baselines {
        forecasters.push(Box::new(BaselineForecaster(b)));
    }
    let reports: Vec<EvalReport> = forecasters
        .iter()
        .map(|f| {
            if args.out_domain {
                out_domain_report(f.as_ref(), &frames, &spec)
            } else {
                evaluate_zero_shot(f.as_ref(), &frames, &spec)
            }
        })
        .collect::<Result<_>>()?;

    fs::create_dir_all(args.out)?;
    let label = reports[0].label.to_string();
    let mut table = String::new();
    for r in &reports {
        table.push_str(&r.to_table());
        table.push('\n');
        fs::write(
            args.out.join(format!("{name}.{label}.{}.kv", r.model)),
            r.to_kv(),
        )?;
    }
    fs::write(args.out.join(format!("{name}.{label}.txt")), &table)?;
    print!("{table}");

    if args.curves {
        let path = args.out.join(format!("{name}.{label}.curves.csv"));
        write_curves(forecasters[0].as_ref(), &frames, &spec, &path)?;
        println!("curves={}", path.display());
    }
    Ok(())
}

/// Predicted and actual values of every frontier cell at the last anchor
/// in range of each series.
fn write_curves(
    forecaster: &dyn Forecaster,
    frames: &[TripFrame],
    spec: &EvalSpec,
    path: &Path,
) -> Result<()> {
    use std::io::Write;
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "series_id,anchor,event_date,lead,actual,predicted")?;
    let anchors: Vec<NaiveDate> = spec.range.days().collect();
    for f in frames {
        let found = anchors.iter().rev().find_map(|&a| {
            anchored_instance(f, a, spec.window, spec.horizon, spec.h_pred_max)
                .ok()
                .map(|x| (a, x))
        });
        let Some((anchor, (inst, mask))) = found else {
            continue;
        };
        let pred = forecaster.predict(&inst, &mask)?;
        for (row, col) in mask.masked_cells() {
            let i = row * inst.c + col;
            writeln!(
                w,
                "{},{anchor},{},{},{},{}",
                f.series_id(),
                inst.date_at(row),
                inst.c - 1 - col,
                inst.target[i],
                pred[i]
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_forecast(
    checkpoint: &Path,
    input: &Path,
    anchor: NaiveDate,
    out: &Path,
    h_pred_max: usize,
) -> Result<()> {
    require_file("--frames", input)?;
    let ck = load_checkpoint(checkpoint)?;
    let file = fs::File::open(input)?;
    let frames = ingest_long_csv_with(BufReader::new(file), IngestOptions::default())?;
    let forecasts = frames
        .iter()
        .map(|f| forecast_frame(&ck.params, f, anchor, h_pred_max))
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_forecast_csv(&forecasts, BufWriter::new(fs::File::create(out)?))?;
    let cells: usize = forecasts.iter().map(|f| f.predicted_count()).sum();
    println!(
        "series={} predicted_cells={cells} out={}",
        forecasts.len(),
        out.display()
    );
    Ok(())
}

fn cmd_inspect(checkpoint: &Path) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    for line in ck.config().to_kv_lines() {
        println!("{line}");
    }
    println!("parameters={}", ck.params.len());
    println!("iteration={}", ck.state.iteration);
    for e in ck.params.layout().entries() {
        let values = &ck.params.data()[e.range()];
        let norm = values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        let shape: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
        println!("array {} {} norm={norm:.6}", e.name, shape.join("x"));
    }
    Ok(())
}
