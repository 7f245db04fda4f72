//! Estimate unknown per-board phase offsets from datapoints with known
//! positions and remove them.

use espcsi::scene::{RingTrajectory, Scene};
use espcsi::stream::{apply_phase_calibration, calibrate_board_phases, wrap_phase};
use espcsi::synth::{generate_dataset, ImpairmentSpec};

fn main() -> espcsi::Result<()> {
    let scene = Scene::reference();
    let offsets = vec![0.0, 1.1, -2.4, 0.7];
    let impairments = ImpairmentSpec {
        board_phase_offsets: offsets.clone(),
        snr_db: Some(20.0),
        ..ImpairmentSpec::default()
    };
    let ring = RingTrajectory {
        packet_count: 100,
        ..RingTrajectory::default()
    };
    let dataset = generate_dataset(&scene.system, &ring.build()?, &scene.paths, &impairments, 5)?;

    let estimate = calibrate_board_phases(dataset.points(), &scene.system, &scene.paths, 0)?;
    for (b, (e, o)) in estimate.iter().zip(&offsets).enumerate() {
        println!(
            "board {b}: true {o:+.3} rad, estimated {e:+.3} rad, error {:+.4}",
            wrap_phase(e - o)
        );
    }

    let calibrated: Vec<_> = dataset
        .points()
        .iter()
        .map(|p| apply_phase_calibration(p, &estimate))
        .collect::<espcsi::Result<_>>()?;
    println!("calibrated {} datapoints", calibrated.len());
    Ok(())
}
