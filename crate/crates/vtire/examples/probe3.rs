use std::time::Instant;

use vtire::rng::{Rng, Stream};
use vtire::tensor::layers::{Conv2d, Linear, MaxPool2, Relu};
use vtire::tensor::{Module, Tensor};

fn time<F: FnMut()>(label: &str, reps: usize, mut f: F) {
    let t = Instant::now();
    for _ in 0..reps {
        f();
    }
    println!("{label}: {:.3} ms", t.elapsed().as_secs_f64() / reps as f64 * 1e3);
}

fn main() {
    let mut rng = Rng::new(1, Stream::WeightInit);
    let k = 52;
    let mut conv1 = Conv2d::<f32>::new(1, 8, 3, 1, 1, &mut rng);
    let mut conv2 = Conv2d::<f32>::new(8, 16, 3, 1, 1, &mut rng);
    let mut relu1 = Relu::<f32>::new();
    let mut pool1 = MaxPool2::<f32>::new();
    let mut relu2 = Relu::<f32>::new();
    let mut pool2 = MaxPool2::<f32>::new();
    let mut fc = Linear::<f32>::new(256, 64, &mut rng);
    let mut ln = vtire::tensor::layers::LayerNorm::<f32>::new(64);

    let x = Tensor::<f32>::filled(&[k, 1, 16, 16], 0.3);
    let reps = 400;

    let y1 = conv1.forward(&x);
    let r1 = relu1.forward(&y1);
    let p1 = pool1.forward(&r1);
    let y2 = conv2.forward(&p1);
    let r2 = relu2.forward(&y2);
    let p2 = pool2.forward(&r2);
    let flat = p2.clone().reshape(&[k, 256]);
    let f1 = fc.forward(&flat);
    let n1 = ln.forward(&f1);

    time("conv1 fwd", reps, || {
        let _ = conv1.forward(&x);
    });
    time("relu1 fwd", reps, || {
        let _ = relu1.forward(&y1);
    });
    time("pool1 fwd", reps, || {
        let _ = pool1.forward(&r1);
    });
    time("conv2 fwd", reps, || {
        let _ = conv2.forward(&p1);
    });
    time("pool2 fwd", reps, || {
        let _ = pool2.forward(&r2);
    });
    time("fc fwd", reps, || {
        let _ = fc.forward(&flat);
    });
    time("layernorm fwd", reps, || {
        let _ = ln.forward(&f1);
    });
    let dn = Tensor::<f32>::filled(&[k, 64], 0.01);
    time("layernorm bwd", reps, || {
        let _ = ln.forward(&f1);
        let _ = ln.backward(&dn);
    });
    time("fc bwd", reps, || {
        let _ = fc.forward(&flat);
        let _ = fc.backward(&dn);
    });
    let dp2 = Tensor::<f32>::filled(&[k, 16, 4, 4], 0.01);
    time("pool2 bwd(incl fwd)", reps, || {
        let _ = pool2.forward(&r2);
        let _ = pool2.backward(&dp2);
    });
    let dy2 = Tensor::<f32>::filled(&[k, 16, 8, 8], 0.01);
    time("conv2 fwd+bwd", reps, || {
        let _ = conv2.forward(&p1);
        let _ = conv2.backward(&dy2);
    });
    let dy1 = Tensor::<f32>::filled(&[k, 8, 16, 16], 0.01);
    time("conv1 fwd+bwd", reps, || {
        let _ = conv1.forward(&x);
        let _ = conv1.backward(&dy1);
    });
    conv1.needs_input_grad = false;
    time("conv1 fwd+bwd(no dx)", reps, || {
        let _ = conv1.forward(&x);
        let _ = conv1.backward(&dy1);
    });
    let _ = n1;
}
