//! Coherent averaging of noisy packets from a static transmitter.

use espcsi::dsp::{align_packet_phase, interpolate_csi, InterpolationConfig};
use espcsi::scene::Scene;
use espcsi::synth::{channel_response, generate_dataset, ImpairmentSpec, TrajectorySpec};

fn main() -> espcsi::Result<()> {
    let scene = Scene::reference();
    let spot = [-4.2, 3.2, 0.0];
    let trajectory = TrajectorySpec {
        waypoints: vec![spot, spot],
        speed: 1.0,
        packet_rate: 100.0,
        start_time: 0.0,
        packet_count: Some(40),
    };
    let impairments = ImpairmentSpec {
        snr_db: Some(10.0),
        ..ImpairmentSpec::default()
    };
    let dataset = generate_dataset(&scene.system, &trajectory, &scene.paths, &impairments, 2)?;
    let config = InterpolationConfig {
        half_width: 0.25,
        ..InterpolationConfig::default()
    };
    let center = dataset.points()[20].t;

    let clean = channel_response(&scene.system, &dataset.points()[0].x, &scene.paths)?;
    let truth = align_packet_phase(&clean, config.reference)?;
    let error = |h: &espcsi::CsiTensor| {
        h.as_slice()
            .iter()
            .zip(truth.as_slice())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            / truth.energy()
    };

    let single = align_packet_phase(&dataset.points()[20].h, config.reference)?;
    let averaged = interpolate_csi(dataset.points(), center, &config)?;
    println!("relative error, single packet: {:.4}", error(&single));
    println!("relative error, 40 packets:    {:.4}", error(&averaged));
    println!("gain {:.1}x", error(&single) / error(&averaged));
    Ok(())
}
