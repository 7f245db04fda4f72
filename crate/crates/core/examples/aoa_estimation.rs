//! Delay-and-sum azimuth estimates of every board along the ring.

use espcsi::dsp::{estimate_aoa, AoaConfig};
use espcsi::scene::{RingTrajectory, Scene};
use espcsi::synth::{generate_dataset, ImpairmentSpec};

fn main() -> espcsi::Result<()> {
    let scene = Scene::reference();
    let ring = RingTrajectory {
        packet_count: 200,
        ..RingTrajectory::default()
    };
    // line of sight only: the wall reflection would bias the single-peak estimate
    let los = &scene.paths[..1];
    let dataset = generate_dataset(&scene.system, &ring.build()?, los, &ImpairmentSpec::default(), 9)?;
    let config = AoaConfig::default();

    for board in 0..scene.system.n_boards() {
        let mut worst = 0f64;
        let mut sum = 0.0;
        for point in dataset.points() {
            let est = estimate_aoa(&point.h, &scene.system, board, &config)?;
            let truth = scene.system.azimuth_of(board, &point.x)?;
            let err = (est - truth).to_degrees().abs();
            worst = worst.max(err);
            sum += err;
        }
        println!(
            "board {board}: mean error {:.3} deg, max {:.3} deg",
            sum / dataset.len() as f64,
            worst
        );
    }
    Ok(())
}
