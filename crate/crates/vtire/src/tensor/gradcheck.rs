//! Finite-difference verification of hand-written backward passes.
//!
//! Central differences in double precision over every input and parameter
//! coordinate (or a seeded subsample for large layers), compared against the
//! analytic gradients with
//! `rel_err = |analytic - numeric| / max(1, |analytic| + |numeric|)`.

use super::{Module, Parameterized, Scalar, Tensor};
use crate::rng::{Rng, Stream};

#[derive(Debug, Clone)]
pub struct WorstCoord {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub pass: bool,
    pub coords_checked: usize,
    pub worst: Option<WorstCoord>,
}

impl GradReport {
    fn update(&mut self, name: &str, index: usize, analytic: f64, numeric: f64, tol: f64) {
        if !analytic.is_finite() || !numeric.is_finite() {
            self.pass = false;
            self.max_rel_err = f64::INFINITY;
            self.worst = Some(WorstCoord {
                name: name.to_string(),
                index,
                analytic,
                numeric,
            });
            return;
        }
        let rel = relative_error(analytic, numeric);
        if rel > self.max_rel_err {
            self.max_rel_err = rel;
            self.worst = Some(WorstCoord {
                name: name.to_string(),
                index,
                analytic,
                numeric,
            });
        }
        if rel > tol {
            self.pass = false;
        }
        self.coords_checked += 1;
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1.0)
}

/// Minimum subsample size when a layer has more coordinates than requested.
pub const MIN_SUBSAMPLE: usize = 200;

/// Check one layer: d(sum(c * layer(x)))/d(x and params) vs central differences.
///
/// `eps` should be in [1e-6, 1e-4]; the probe weights `c` are fixed by `seed`.
pub fn check_module<M: Module<f64>>(
    layer: &mut M,
    input: &Tensor<f64>,
    eps: f64,
    tol: f64,
    max_coords: usize,
    seed: u64,
) -> GradReport {
    assert!((1e-6..=1e-4).contains(&eps), "eps {eps} outside [1e-6, 1e-4]");
    let mut rng = Rng::new(seed, Stream::WeightInit);
    super::zero_grads(layer);
    let y = layer.forward(input);
    let probe: Vec<f64> = (0..y.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let c = Tensor::from_vec(y.shape(), probe);
    let dx = layer.backward(&c);

    // snapshot analytic parameter gradients
    let mut analytic: Vec<(String, Vec<f64>)> = vec![("input".into(), dx.into_data())];
    layer.visit_params(&mut |n, _, g| analytic.push((n.to_string(), g.data().to_vec())));

    let mut coords: Vec<(usize, usize)> = Vec::new(); // (slot, index)
    for (slot, (_, g)) in analytic.iter().enumerate() {
        for i in 0..g.len() {
            coords.push((slot, i));
        }
    }
    subsample(&mut coords, max_coords.max(MIN_SUBSAMPLE), &mut rng);

    let mut x = input.clone();
    let mut report = GradReport {
        max_rel_err: 0.0,
        pass: true,
        coords_checked: 0,
        worst: None,
    };
    for &(slot, i) in &coords {
        let name = analytic[slot].0.clone();
        let a = analytic[slot].1[i];
        let eval = |layer: &mut M, x: &Tensor<f64>, c: &Tensor<f64>| -> f64 {
            let y = layer.forward(x);
            y.data().iter().zip(c.data()).map(|(&v, &w)| v * w).sum()
        };
        let numeric = if name == "input" {
            x.data_mut()[i] += eps;
            let fp = eval(layer, &x, &c);
            x.data_mut()[i] -= 2.0 * eps;
            let fm = eval(layer, &x, &c);
            x.data_mut()[i] += eps;
            (fp - fm) / (2.0 * eps)
        } else {
            nudge(layer, &name, i, eps);
            let fp = eval(layer, &x, &c);
            nudge(layer, &name, i, -2.0 * eps);
            let fm = eval(layer, &x, &c);
            nudge(layer, &name, i, eps);
            (fp - fm) / (2.0 * eps)
        };
        report.update(&name, i, a, numeric, tol);
    }
    report
}

/// Check a whole model against a scalar loss.
///
/// The caller must have run forward/backward so that parameter gradients hold
/// the analytic values for the exact loss that `loss` recomputes.
pub fn check_loss<M: Parameterized<f64>>(
    model: &mut M,
    mut loss: impl FnMut(&mut M) -> f64,
    eps: f64,
    tol: f64,
    max_coords: usize,
    seed: u64,
) -> GradReport {
    assert!((1e-6..=1e-4).contains(&eps), "eps {eps} outside [1e-6, 1e-4]");
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    model.visit_params(&mut |n, _, g| analytic.push((n.to_string(), g.data().to_vec())));

    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (slot, (_, g)) in analytic.iter().enumerate() {
        for i in 0..g.len() {
            coords.push((slot, i));
        }
    }
    let mut rng = Rng::new(seed, Stream::WeightInit);
    subsample(&mut coords, max_coords.max(MIN_SUBSAMPLE), &mut rng);

    let mut report = GradReport {
        max_rel_err: 0.0,
        pass: true,
        coords_checked: 0,
        worst: None,
    };
    for &(slot, i) in &coords {
        let name = analytic[slot].0.clone();
        let a = analytic[slot].1[i];
        nudge(model, &name, i, eps);
        let fp = loss(model);
        nudge(model, &name, i, -2.0 * eps);
        let fm = loss(model);
        nudge(model, &name, i, eps);
        let numeric = (fp - fm) / (2.0 * eps);
        report.update(&name, i, a, numeric, tol);
    }
    report
}

fn nudge<T: Scalar>(m: &mut dyn Parameterized<T>, name: &str, idx: usize, delta: f64) {
    let mut hit = false;
    m.visit_params(&mut |n, p, _| {
        if n == name {
            p.data_mut()[idx] += T::from_f64(delta);
            hit = true;
        }
    });
    assert!(hit, "no parameter named {name}");
}

fn subsample(coords: &mut Vec<(usize, usize)>, keep: usize, rng: &mut Rng) {
    if coords.len() > keep {
        rng.shuffle(coords);
        coords.truncate(keep);
        coords.sort_unstable();
    }
}
