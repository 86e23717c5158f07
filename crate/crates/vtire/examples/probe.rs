use std::time::Instant;

use vtire::mmvtt::{train, FusionConfig};
use vtire::modality::ModalityMode;
use vtire::synthgen::{gen_terrain_sample, CorruptionSpec, FrameGeometry, TerrainSampleConfig};

fn main() {
    let g = FrameGeometry::default();
    let cfg = TerrainSampleConfig {
        visual_corruption: CorruptionSpec::SaltPepper { density: 0.05 },
        ..TerrainSampleConfig::default()
    };
    let per_class = 30;
    let t0 = Instant::now();
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for class in 0..12 {
        for i in 0..per_class {
            let seed = (class * 10_000 + i) as u64;
            samples.push(gen_terrain_sample(&g, class, &cfg, seed).unwrap());
            labels.push(class);
        }
    }
    println!("generated {} samples in {:.1}s", samples.len(), t0.elapsed().as_secs_f64());

    let fc = FusionConfig {
        epochs: 15,
        seed: 1,
        ..FusionConfig::default()
    };
    let t1 = Instant::now();
    let out = train::<f32>(&samples, &labels, ModalityMode::Svt, &fc, 1).unwrap();
    let dt = t1.elapsed().as_secs_f64();
    for h in &out.history {
        println!("epoch {:2}  loss {:.4}  acc {:.4}", h.epoch, h.train_loss, h.eval_acc);
    }
    println!(
        "15 epochs on {} train samples took {:.1}s ({:.2}s/epoch)",
        out.train_ids.len(),
        dt,
        dt / 16.0
    );
}
