//! Adam optimizer over any [`Parameterized`] model.

use std::collections::HashMap;

use super::{ops, Parameterized, Scalar};

pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    t: u64,
    state: HashMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: T) -> Self {
        Adam {
            lr,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            t: 0,
            state: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one update from the gradients currently stored in the model.
    pub fn step(&mut self, model: &mut dyn Parameterized<T>) {
        self.t += 1;
        let t = self.t;
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let state = &mut self.state;
        model.visit_params(&mut |name, p, g| {
            let entry = state
                .entry(name.to_string())
                .or_insert_with(|| (vec![T::zero(); p.len()], vec![T::zero(); p.len()]));
            ops::adam_step(
                p.data_mut(),
                g.data(),
                &mut entry.0,
                &mut entry.1,
                t,
                lr,
                b1,
                b2,
                eps,
            );
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Rng, Stream};
    use crate::tensor::layers::Linear;
    use crate::tensor::{Module, Tensor};

    #[test]
    fn adam_reduces_quadratic_loss() {
        let mut rng = Rng::new(1, Stream::WeightInit);
        let mut lin = Linear::<f64>::new(2, 1, &mut rng);
        let mut opt = Adam::new(0.05);
        let x = Tensor::from_vec(&[4, 2], vec![1., 0., 0., 1., 1., 1., 0.5, -0.5]);
        let target = [1.0, -1.0, 0.0, 1.0];
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..200 {
            crate::tensor::zero_grads(&mut lin);
            let y = lin.forward(&x);
            let mut dy = Tensor::zeros(y.shape());
            let mut loss = 0.0;
            for r in 0..4 {
                let e = y.at2(r, 0) - target[r];
                loss += e * e;
                dy.set2(r, 0, 2.0 * e);
            }
            lin.backward(&dy);
            opt.step(&mut lin);
            first.get_or_insert(loss);
            last = loss;
        }
        assert!(last < first.unwrap() * 1e-3, "loss {} -> {}", first.unwrap(), last);
    }
}
