use super::{Gradients, ParamStore, Scalar};

/// SGD with heavy-ball momentum: `v <- mu * v + g`, `theta <- theta - lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    momentum: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(store: &ParamStore<T>, momentum: f64) -> Self {
        Self {
            momentum: T::lit(momentum),
            velocity: store.iter().map(|t| vec![T::zero(); t.len()]).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) {
        let lr = T::lit(lr);
        for ((t, g), v) in store.iter_mut().zip(grads.iter()).zip(&mut self.velocity) {
            for ((p, &gi), vi) in t.data_mut().iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi;
                *p = *p - lr * *vi;
            }
        }
    }
}

/// `base * (1 + cos(pi * step / total)) / 2`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let x = step.min(total) as f64 / total as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * x).cos())
}
