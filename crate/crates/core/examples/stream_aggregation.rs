//! Per-board UDP-style frames with loss and jitter, fused back into packets.
//! Each board runs on its own thread and feeds a channel.

use std::sync::mpsc;
use std::thread;

use espcsi::scene::{RingTrajectory, Scene};
use espcsi::stream::{emit_board_streams, merge_streams, Aggregator, AggregatorConfig, BoardFrame, EmitConfig};
use espcsi::synth::{generate_dataset, ImpairmentSpec};

fn main() -> espcsi::Result<()> {
    let scene = Scene::reference();
    let ring = RingTrajectory {
        packet_count: 2000,
        ..RingTrajectory::default()
    };
    let dataset = generate_dataset(
        &scene.system,
        &ring.build()?,
        &scene.paths,
        &ImpairmentSpec::default(),
        3,
    )?;
    let emit = EmitConfig {
        loss_rate: 0.02,
        jitter_std: 2e-3,
        seed: 11,
        ..EmitConfig::default()
    };
    let streams = emit_board_streams(&dataset, &emit)?;

    let receivers: Vec<_> = streams
        .into_iter()
        .map(|frames| {
            let (tx, rx) = mpsc::sync_channel::<BoardFrame>(64);
            thread::spawn(move || {
                for frame in frames {
                    // the wire format a board would send
                    let datagram = frame.to_datagram();
                    let decoded = BoardFrame::from_datagram(&datagram).expect("own datagram");
                    if tx.send(decoded).is_err() {
                        break;
                    }
                }
            });
            rx.into_iter()
        })
        .collect();

    let mut aggregator = Aggregator::for_system(&scene.system, AggregatorConfig::default())?;
    let mut fused = 0usize;
    for frame in merge_streams(receivers) {
        aggregator.push(frame)?;
        while aggregator.pop().is_some() {
            fused += 1;
        }
    }
    aggregator.finish();
    while aggregator.pop().is_some() {
        fused += 1;
    }

    let stats = aggregator.stats();
    let expected = dataset.len() as f64 * (1.0 - emit.loss_rate).powi(4);
    println!(
        "{} packets in, {fused} complete packets out (expected {expected:.0})",
        dataset.len()
    );
    println!("{stats:?}");
    Ok(())
}
