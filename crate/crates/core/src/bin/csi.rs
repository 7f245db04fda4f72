//! `csi`: command-line front end of the espcsi pipeline.
//!
//! Machine-readable results go to stdout as JSON (CSV for `chart` and
//! `aoa`), human-readable progress to stderr. Exit codes: 1 usage or
//! configuration error, 2 data error, 3 numerical failure.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use espcsi::charting::{cached_features, compute_features, train_on_features, ChartModel};
use espcsi::config::PipelineConfig;
use espcsi::dsp::{estimate_aoa, AoaConfig};
use espcsi::eval::{evaluate, write_scatter_csv, EvalConfig};
use espcsi::stream::{aggregate, emit_board_streams, EmitConfig};
use espcsi::synth::generate_dataset;
use espcsi::{ingest, Dataset, Error};

#[derive(Parser)]
#[command(name = "csi", version, about = "Phase-coherent WiFi CSI toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a pipeline config.
    Synth {
        /// Pipeline config (TOML); the built-in reference scene if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the generator seed of the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print container metadata and per-field statistics.
    Info { file: PathBuf },
    /// Split a dataset into per-board frame streams, drop and jitter
    /// frames, re-aggregate and write the fused dataset.
    StreamSim {
        #[arg(long)]
        dataset: PathBuf,
        /// Per-frame loss probability.
        #[arg(long, default_value_t = 0.0)]
        loss: f64,
        /// Receive-time jitter std, seconds.
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a forward charting function.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the training seed of the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the number of training steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Writes the per-step loss as CSV.
        #[arg(long)]
        loss_log: Option<PathBuf>,
        /// Directory for cached feature matrices.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Chart every datapoint; CSV columns l,t,y1,y2,x1,x2,x3.
    Chart {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Register the chart to ground truth and print the metric report.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Neighborhood size for continuity and trustworthiness.
        #[arg(long)]
        k: Option<usize>,
        /// Maximum points for the rank and stress metrics.
        #[arg(long)]
        subsample: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Writes truth, chart and registered chart with a color index.
        #[arg(long)]
        scatter: Option<PathBuf>,
    },
    /// Per-datapoint azimuth estimates of one board; CSV columns
    /// t,azimuth_rad,truth_azimuth_rad.
    Aoa {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        board: usize,
        /// Output file; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = -90.0, allow_hyphen_values = true)]
        min_deg: f64,
        #[arg(long, default_value_t = 90.0, allow_hyphen_values = true)]
        max_deg: f64,
        #[arg(long, default_value_t = 0.5)]
        step_deg: f64,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) | Error::IndexOutOfBounds { .. } => 1,
        Error::Degenerate(_) | Error::Diverged { .. } => 3,
        _ => 2,
    }
}

fn kind(err: &Error) -> &'static str {
    match err {
        Error::InvalidConfig(_) => "invalid_config",
        Error::IndexOutOfBounds { .. } => "index_out_of_bounds",
        Error::ShapeMismatch(_) => "shape_mismatch",
        Error::InvalidData(_) => "invalid_data",
        Error::Degenerate(_) => "degenerate",
        Error::BadMagic => "bad_magic",
        Error::Truncated { .. } => "truncated",
        Error::Metadata(_) => "metadata",
        Error::NoTriplets(_) => "no_triplets",
        Error::Diverged { .. } => "diverged",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

fn load_config(path: Option<&Path>) -> espcsi::Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).map_err(|e| match e {
            Error::Io(io) => Error::InvalidConfig(format!("{}: {io}", p.display())),
            other => other,
        }),
        None => Ok(PipelineConfig::default()),
    }
}

fn print_json(value: &serde_json::Value) -> espcsi::Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn create(path: &Path) -> espcsi::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn run(command: Command) -> espcsi::Result<()> {
    match command {
        Command::Synth { config, out, seed } => {
            let mut config = load_config(config.as_deref())?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let scene = config.scene()?;
            eprintln!("generating {} packets", scene.trajectory.packet_count());
            let mut dataset = generate_dataset(
                &scene.system,
                &scene.trajectory,
                &scene.paths,
                &config.impairments,
                config.seed,
            )?;
            dataset.annotate("config_digest", config.digest());
            let bytes = ingest::save(&dataset, &out)?;
            print_json(&json!({
                "records": dataset.len(),
                "bytes": bytes,
                "seed": config.seed,
                "config_digest": config.digest(),
                "dataset_digest": ingest::dataset_digest(&dataset)?,
            }))
        }
        Command::Info { file } => {
            let summary = ingest::summarize(ingest::open(&file)?)?;
            let m = &summary.metadata;
            eprintln!(
                "{}: L = {}, B = {}, N_sub = {}, record size {} bytes",
                file.display(),
                m.record_count,
                m.system.n_boards(),
                m.system.n_subcarriers(),
                m.record_size
            );
            print_json(&serde_json::to_value(&summary)?)
        }
        Command::StreamSim {
            dataset,
            loss,
            jitter,
            out,
            config,
            seed,
        } => {
            let config = load_config(config.as_deref())?;
            let source = ingest::load(&dataset)?;
            let emit = EmitConfig {
                loss_rate: loss,
                jitter_std: jitter,
                seed: seed.unwrap_or(config.stream.emit.seed),
                ..config.stream.emit
            };
            let streams = emit_board_streams(&source, &emit)?;
            let frames: usize = streams.iter().map(Vec::len).sum();
            let system = &source.system;
            let (packets, stats) = aggregate(
                streams,
                system.n_boards(),
                system.n_subcarriers(),
                config.stream.aggregator,
            )?;
            let times = source.timestamps();
            let window = config.stream.aggregator.match_window;
            let mut fused = Dataset::new(system.clone());
            fused.annotations = source.annotations.clone();
            fused.annotate("stream_loss_rate", loss.to_string());
            fused.annotate("stream_jitter_std", jitter.to_string());
            let mut unmatched = 0usize;
            for packet in packets {
                // the source index shares the sequence number and lies within the window
                let lo = times.partition_point(|&t| t < packet.t - window);
                let hi = times.partition_point(|&t| t <= packet.t + window);
                let best = (lo..hi)
                    .filter(|&l| l % (1 << 16) == packet.wifi_seq as usize)
                    .min_by(|&a, &b| (times[a] - packet.t).abs().total_cmp(&(times[b] - packet.t).abs()));
                match best {
                    Some(l) => {
                        let x = source.points()[l].x;
                        fused.push(packet.into_datapoint(x))?;
                    }
                    None => unmatched += 1,
                }
            }
            let bytes = ingest::save(&fused, &out)?;
            let expected = source.len() as f64 * (1.0 - loss).powi(system.n_boards() as i32);
            eprintln!(
                "{frames} frames, {} complete packets (expected {expected:.1}), {} written",
                stats.complete,
                fused.len()
            );
            print_json(&json!({
                "source_records": source.len(),
                "frames": frames,
                "expected_complete": expected,
                "stats": stats,
                "unmatched": unmatched,
                "records": fused.len(),
                "bytes": bytes,
                "config_digest": config.digest(),
            }))
        }
        Command::Train {
            dataset,
            config,
            out,
            seed,
            steps,
            loss_log,
            cache_dir,
        } => {
            let config = load_config(config.as_deref())?;
            let mut train = config.train_config();
            if let Some(seed) = seed {
                train.triplet.seed = seed;
            }
            if let Some(steps) = steps {
                train.triplet.steps = steps;
            }
            let data = ingest::load(&dataset)?;
            let features = match &cache_dir {
                Some(dir) => cached_features(&data, &train.features, dir)?,
                None => compute_features(data.points(), &train.features, data.system.n_subcarriers())?,
            };
            eprintln!(
                "training on {} datapoints, {} features, {} steps",
                data.len(),
                features.ncols(),
                train.triplet.steps
            );
            let (model, log) = train_on_features(features.view(), &data.timestamps(), &train)?;
            model.save(&out, Some(config.digest()))?;
            if let Some(path) = loss_log {
                let mut w = create(&path)?;
                writeln!(w, "step,loss")?;
                for (i, l) in log.losses.iter().enumerate() {
                    writeln!(w, "{i},{l}")?;
                }
                w.flush()?;
            }
            print_json(&json!({
                "steps": log.losses.len(),
                "final_loss": log.losses.last(),
                "n_params": model.n_params(),
                "seed": train.triplet.seed,
                "config_digest": config.digest(),
                "training_digest": train.digest(),
            }))
        }
        Command::Chart { model, dataset, out } => {
            let (model, _) = ChartModel::load(&model)?;
            let data = ingest::load(&dataset)?;
            let chart = model.chart_points(data.points())?;
            let mut w = create(&out)?;
            writeln!(w, "l,t,y1,y2,x1,x2,x3")?;
            for (l, (p, y)) in data.points().iter().zip(&chart).enumerate() {
                writeln!(w, "{l},{},{},{},{},{},{}", p.t, y[0], y[1], p.x.x, p.x.y, p.x.z)?;
            }
            w.flush()?;
            print_json(&json!({ "records": chart.len() }))
        }
        Command::Eval {
            dataset,
            model,
            config,
            k,
            subsample,
            seed,
            scatter,
        } => {
            let config = load_config(config.as_deref())?;
            let eval_config = EvalConfig {
                k: k.or(config.evaluation.k),
                subsample: subsample.unwrap_or(config.evaluation.subsample),
                seed: seed.unwrap_or(config.evaluation.seed),
            };
            let (model, model_digest) = ChartModel::load(&model)?;
            let data = ingest::load(&dataset)?;
            let evaluation = evaluate(&data, &model, &eval_config)?;
            if let Some(path) = scatter {
                let mut w = create(&path)?;
                write_scatter_csv(&mut w, &data, &evaluation)?;
                w.flush()?;
            }
            let r = &evaluation.report;
            eprintln!(
                "CT {:.3}  TW {:.3}  KS {:.3}  MAE {:.3} m  CEP {:.3} m",
                r.ct, r.tw, r.ks, r.mae, r.cep
            );
            let mut value = serde_json::to_value(r)?;
            value["model_config_digest"] = json!(model_digest);
            value["config_digest"] = json!(config.digest());
            print_json(&value)
        }
        Command::Aoa {
            dataset,
            board,
            out,
            min_deg,
            max_deg,
            step_deg,
        } => {
            let config = AoaConfig {
                min_deg,
                max_deg,
                step_deg,
            };
            config.grid()?;
            let reader = ingest::open(&dataset)?;
            let system = reader.system().clone();
            system.board(board)?;
            let mut w: Box<dyn Write> = match out {
                Some(path) => Box::new(create(&path)?),
                None => Box::new(BufWriter::new(io::stdout().lock())),
            };
            writeln!(w, "t,azimuth_rad,truth_azimuth_rad")?;
            for point in reader {
                let point = point?;
                let est = estimate_aoa(&point.h, &system, board, &config)?;
                let truth = system.azimuth_of(board, &point.x)?;
                writeln!(w, "{},{est},{truth}", point.t)?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        // downstream closed early, e.g. `csi aoa ... | head`
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!(
                "error: kind={} message={}",
                kind(&err),
                err.to_string().replace('\n', " ")
            );
            ExitCode::from(exit_code(&err))
        }
    }
}
