//! Full pipeline from a config file: simulate, stream, train, evaluate.
//!
//! ```text
//! cargo run --release --example end_to_end [config.toml]
//! ```
//!
//! Without an argument the default configuration (reference ring, default
//! training schedule, roughly half a minute) is used.

use std::time::Instant;

use espcsi::charting::train_fcf;
use espcsi::config::PipelineConfig;
use espcsi::eval::{evaluate, TruthCharter};
use espcsi::scene::diameter;
use espcsi::stream::{aggregate, emit_board_streams};
use espcsi::synth::generate_dataset;
use espcsi::Dataset;

fn main() -> espcsi::Result<()> {
    let config = match std::env::args().nth(1) {
        Some(path) => PipelineConfig::load(std::path::Path::new(&path))?,
        None => PipelineConfig::default(),
    };
    let scene = config.scene()?;
    let trajectory = config.trajectory.build()?;
    let dataset = generate_dataset(
        &scene.system,
        &trajectory,
        &scene.paths,
        &config.impairments,
        config.seed,
    )?;
    println!("{} datapoints, config digest {}", dataset.len(), config.digest());

    // through the board streams and back, positions reattached by sequence number
    let streams = emit_board_streams(&dataset, &config.stream.emit)?;
    let (packets, stats) = aggregate(
        streams,
        scene.system.n_boards(),
        scene.system.n_subcarriers(),
        config.stream.aggregator,
    )?;
    let mut fused = Dataset::new(scene.system.clone());
    for packet in packets {
        let x = dataset.points()[packet.wifi_seq as usize].x;
        fused.push(packet.into_datapoint(x))?;
    }
    println!("stream: {} complete of {} ({:?})", fused.len(), dataset.len(), stats);

    let start = Instant::now();
    let (model, log) = train_fcf(&fused, &config.train_config())?;
    println!(
        "trained {} steps in {:.1} s, loss {:.3} -> {:.3}",
        log.losses.len(),
        start.elapsed().as_secs_f64(),
        log.losses.first().unwrap_or(&f64::NAN),
        log.losses.last().unwrap_or(&f64::NAN)
    );

    let truth = evaluate(&fused, &TruthCharter, &config.evaluation)?.report;
    let result = evaluate(&fused, &model, &config.evaluation)?;
    let r = &result.report;
    println!("oracle: CT {:.3} TW {:.3}", truth.ct, truth.tw);
    println!(
        "chart:  CT {:.3} TW {:.3} KS {:.3} MAE {:.3} m CEP {:.3} m (scene diameter {:.2} m)",
        r.ct,
        r.tw,
        r.ks,
        r.mae,
        r.cep,
        diameter(&fused.positions_2d())
    );
    Ok(())
}
