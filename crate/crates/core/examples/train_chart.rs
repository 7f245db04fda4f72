//! Train a small forward charting function and save it.
//!
//! Uses a short schedule; see `end_to_end` for the default one.

use espcsi::charting::{train_fcf, ChartModel, TrainConfig};
use espcsi::scene::{RingTrajectory, Scene};
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
        0,
    )?;

    let mut config = TrainConfig::default();
    config.triplet.steps = 300;
    config.model.hidden_layers = vec![64, 32];
    let (model, log) = train_fcf(&dataset, &config)?;
    for (step, loss) in log.losses.iter().enumerate().step_by(50) {
        println!("step {step:4}  loss {loss:.4}");
    }
    println!("{} parameters, dims {:?}", model.n_params(), model.layer_dims());

    let path = std::env::temp_dir().join("espcsi-example.fcf");
    model.save(&path, Some(config.digest()))?;
    let (loaded, digest) = ChartModel::load(&path)?;
    assert_eq!(loaded, model);
    println!("saved to {} (digest {})", path.display(), digest.unwrap_or_default());

    let y = model.forward(&dataset.points()[0].h)?;
    println!("first datapoint charts to ({:.3}, {:.3})", y[0], y[1]);
    Ok(())
}
