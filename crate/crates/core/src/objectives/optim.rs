//! Adam with global gradient-norm clipping.

use crate::graph::Gradients;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(learning_rate: f64, n_params: usize) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![None; n_params],
            v: vec![None; n_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient keep their moments
    /// but are still moved by them, as in the dense formulation.
    pub fn update(&mut self, params: &mut [Tensor], grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads.get(crate::graph::ParamId(i));
            if g.is_none() && self.m[i].is_none() {
                continue;
            }
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(p.rows(), p.cols()));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(p.rows(), p.cols()));
            let (m, v) = (m.data_mut(), v.data_mut());
            let pd = p.data_mut();
            for k in 0..pd.len() {
                let gk = g.map_or(0.0, |g| g.data()[k]);
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                pd[k] -= self.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Plain gradient descent step `p -= lr * g`.
pub fn sgd_update(params: &mut [Tensor], grads: &Gradients, learning_rate: f64) {
    for (i, p) in params.iter_mut().enumerate() {
        if let Some(g) = grads.get(crate::graph::ParamId(i)) {
            for (a, b) in p.data_mut().iter_mut().zip(g.data()) {
                *a -= learning_rate * b;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut params = vec![Tensor::row_vector(vec![3.0, -2.0])];
        let mut opt = Adam::new(0.1, 1);
        for _ in 0..500 {
            let grads = {
                let mut g = Graph::new(&params);
                let x = g.param(crate::graph::ParamId(0));
                let sq = g.mul(x, x);
                let l = g.sum(sq);
                g.backward(l)
            };
            opt.update(&mut params, &grads);
        }
        assert!(params[0].data().iter().all(|x| x.abs() < 1e-2), "{:?}", params[0]);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let params = vec![Tensor::row_vector(vec![3.0, 4.0])];
        let mut g = Graph::new(&params);
        let x = g.param(crate::graph::ParamId(0));
        let sq = g.mul(x, x);
        let l = g.sum(sq);
        let mut grads = g.backward(l);
        assert!((clip_global_norm(&mut grads, 1.0) - 10.0).abs() < 1e-12);
        assert!((grads.global_norm() - 1.0).abs() < 1e-12);
    }
}
