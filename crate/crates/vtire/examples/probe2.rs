use std::time::Instant;

use vtire::mmvtt::{FusionConfig, Mmvtt};
use vtire::modality::{sample_fragments, ModalityEncoder, ModalityMode};
use vtire::rng::{Rng, Stream};
use vtire::synthgen::{gen_terrain_sample, FrameGeometry, TerrainSampleConfig};
use vtire::tensor::{ops, zero_grads, Module, Tensor};

fn main() {
    let g = FrameGeometry::default();
    let s = gen_terrain_sample(&g, 5, &TerrainSampleConfig::default(), 7).unwrap();
    let frags = sample_fragments::<f32>(&s, ModalityMode::Svt).unwrap();

    // encoder alone
    let mut rng = Rng::new(1, Stream::WeightInit);
    let mut enc = ModalityEncoder::<f32>::new(64, &mut rng);
    let reps = 200;
    let t = Instant::now();
    for _ in 0..reps {
        let y = enc.forward(&frags.fragments[0]);
        let _ = enc.backward(&y);
    }
    println!("encoder fwd+bwd (36 patches): {:.2} ms", t.elapsed().as_secs_f64() / reps as f64 * 1e3);

    let cfg = FusionConfig { seed: 1, ..FusionConfig::default() };
    let mut model = Mmvtt::<f32>::new(ModalityMode::Svt, frags.token_count(), cfg);
    let t = Instant::now();
    for _ in 0..reps {
        zero_grads(&mut model);
        let logits = model.forward_sample(&frags);
        let (_, probs) = ops::cross_entropy(&logits, &[3]).unwrap();
        let d = ops::cross_entropy_backward(&probs, &[3]);
        model.backward_sample(&frags, &d);
    }
    println!("full model fwd+bwd per sample: {:.2} ms", t.elapsed().as_secs_f64() / reps as f64 * 1e3);

    let t = Instant::now();
    for _ in 0..reps {
        let _ = model.forward_sample(&frags);
    }
    println!("full model fwd only: {:.2} ms", t.elapsed().as_secs_f64() / reps as f64 * 1e3);

    // zero_grads cost
    let t = Instant::now();
    for _ in 0..1000 {
        zero_grads(&mut model);
    }
    println!("zero_grads: {:.3} ms", t.elapsed().as_secs_f64() * 1.0);

    // grad merge cost (visit + add)
    let mut acc: Vec<Tensor<f32>> = Vec::new();
    use vtire::tensor::Parameterized;
    model.visit_params(&mut |_, _, gr| acc.push(Tensor::zeros(gr.shape())));
    let t = Instant::now();
    for _ in 0..1000 {
        let mut slot = 0;
        model.visit_params(&mut |_, _, gr| {
            acc[slot].add_assign(gr);
            slot += 1;
         });
    }
    println!("grad merge: {:.3} ms", t.elapsed().as_secs_f64() * 1.0);
}
