//! Simulate the reference scene and look at one packet.
//!
//! ```text
//! cargo run --example synth_scene
//! ```

use espcsi::scene::Scene;
use espcsi::synth::{channel_response, generate_dataset, ImpairmentSpec};

fn main() -> espcsi::Result<()> {
    let scene = Scene::reference();
    let trajectory = &scene.trajectory;
    println!(
        "{} boards, {} antennas, {} subcarriers; ring of {} packets over {:.1} m",
        scene.system.n_boards(),
        scene.system.n_antennas(),
        scene.system.n_subcarriers(),
        trajectory.packet_count(),
        trajectory.length()
    );

    let dataset = generate_dataset(&scene.system, trajectory, &scene.paths, &ImpairmentSpec::default(), 7)?;
    let first = &dataset.points()[0];
    let clean = channel_response(&scene.system, &first.x, &scene.paths)?;

    println!("first packet at t = {:.3} s, x = {:?}", first.t, first.position_2d());
    for (b, rssi) in first.p.chunks(8).enumerate() {
        println!("  board {b}: rssi {:6.1} .. {:6.1} dB", min(rssi), max(rssi));
    }
    // impairments rotate and perturb but barely change the magnitude
    let ratio = first.h.energy() / clean.energy();
    println!("impaired / clean energy = {ratio:.3}");
    Ok(())
}

fn min(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn max(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}
