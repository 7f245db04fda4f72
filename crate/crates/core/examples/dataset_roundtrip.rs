//! Write a dataset to the binary container, stream it back record by record.

use espcsi::ingest::{self, DatasetReader};
use espcsi::scene::{RingTrajectory, Scene};
use espcsi::synth::{generate_dataset, ImpairmentSpec};

fn main() -> espcsi::Result<()> {
    let scene = Scene::reference();
    let ring = RingTrajectory {
        packet_count: 500,
        ..RingTrajectory::default()
    };
    let mut dataset = generate_dataset(
        &scene.system,
        &ring.build()?,
        &scene.paths,
        &ImpairmentSpec::default(),
        1,
    )?;
    dataset.annotate("note", "roundtrip example");

    let dir = std::env::temp_dir().join("espcsi-roundtrip");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(format!("ring.{}", ingest::FILE_EXTENSION));
    let bytes = ingest::save(&dataset, &path)?;
    println!("wrote {} records, {bytes} bytes to {}", dataset.len(), path.display());

    let reader = DatasetReader::new(std::io::BufReader::new(std::fs::File::open(&path)?))?;
    println!("header: {:?}", reader.metadata().annotations);
    let mut last_t = f64::NEG_INFINITY;
    let mut count = 0;
    for point in reader {
        let point = point?;
        assert!(point.t >= last_t);
        last_t = point.t;
        count += 1;
    }
    println!("streamed {count} records, last t = {last_t:.2} s");

    // storage is f32, so the round trip is exact against the f32-rounded source
    let back = ingest::load(&path)?;
    assert_eq!(back.points(), dataset.to_storage_precision().points());
    println!("digest {}", ingest::dataset_digest(&back)?);
    println!(
        "{}",
        serde_json::to_string_pretty(&ingest::summarize(ingest::open(&path)?)?)?
    );
    Ok(())
}
