use ndarray::{Array1, Array2, Zip};

use super::{DenseNet, Gradients};

pub trait Optimizer {
    /// Applies one descent step using `grads` (already averaged over the batch).
    fn step(&mut self, net: &mut DenseNet, grads: &Gradients);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, net: &mut DenseNet, grads: &Gradients) {
        let lr = self.learning_rate;
        net.apply_update(|i, w, b| {
            w.scaled_add(-lr, &grads.weights[i]);
            b.scaled_add(-lr, &grads.biases[i]);
        });
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: i32,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl Adam {
    pub fn new(net: &DenseNet, learning_rate: f64) -> Self {
        let zeros = Gradients::zeros_like(net);
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m_w: zeros.weights.clone(),
            v_w: zeros.weights,
            m_b: zeros.biases.clone(),
            v_b: zeros.biases,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }
}

impl Optimizer for Adam {
    fn step(&mut self, net: &mut DenseNet, grads: &Gradients) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = self.learning_rate;
        // Moments of parameters that keep receiving zero gradient (inputs that
        // are zero in one-hot features) decay geometrically; flushing them
        // before they turn subnormal keeps the update loop at full speed.
        let flush = |x: f64| if x.abs() < f64::MIN_POSITIVE { 0.0 } else { x };
        let update = |p: f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = flush(b1 * *m + (1.0 - b1) * g);
            *v = flush(b2 * *v + (1.0 - b2) * g * g);
            p - lr * (*m / c1) / ((*v / c2).sqrt() + eps)
        };
        let (m_w, v_w, m_b, v_b) = (&mut self.m_w, &mut self.v_w, &mut self.m_b, &mut self.v_b);
        for (i, w) in net.weights_mut().iter_mut().enumerate() {
            Zip::from(w)
                .and(&grads.weights[i])
                .and(&mut m_w[i])
                .and(&mut v_w[i])
                .for_each(|p, &g, m, v| *p = update(*p, g, m, v));
        }
        for (i, b) in net.biases_mut().iter_mut().enumerate() {
            Zip::from(b)
                .and(&grads.biases[i])
                .and(&mut m_b[i])
                .and(&mut v_b[i])
                .for_each(|p, &g, m, v| *p = update(*p, g, m, v));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{init_net, Activation};

    #[test]
    fn adam_first_step_moves_each_param_by_lr() {
        let mut net = init_net(&[2, 1], &[Activation::Linear], 0).unwrap();
        let before = net.clone();
        let mut grads = Gradients::zeros_like(&net);
        grads.weights[0].fill(0.3);
        grads.biases[0].fill(-2.0);
        let mut adam = Adam::new(&net, 0.01);
        adam.step(&mut net, &grads);
        for (a, b) in net.weights()[0].iter().zip(before.weights()[0].iter()) {
            assert!((b - a - 0.01).abs() < 1e-6);
        }
        assert!((net.biases()[0][0] - 0.01).abs() < 1e-6);
    }
}
