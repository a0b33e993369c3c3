use super::params::ParamSet;
use crate::tensor::Tensor;

pub const ADAM_EPS: f32 = 1e-8;

/// Adam with bias correction. Moments are kept only for trainable entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub step: u64,
    pub m: Vec<Option<Tensor>>,
    pub v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(params: &ParamSet, beta1: f32, beta2: f32) -> Self {
        let zeros = |e: &super::params::ParamEntry| e.trainable.then(|| Tensor::zeros(e.value.shape()));
        Adam {
            beta1,
            beta2,
            step: 0,
            m: params.entries().iter().map(zeros).collect(),
            v: params.entries().iter().map(zeros).collect(),
        }
    }

    /// Applies one update. Entries with no gradient keep their value, though
    /// the shared step counter still advances.
    pub fn update(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>], lr: f32) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (i, entry) in params.entries_mut().iter_mut().enumerate() {
            let (Some(g), Some(m), Some(v)) = (&grads[i], &mut self.m[i], &mut self.v[i]) else {
                continue;
            };
            let w = entry.value.data_mut();
            for (((w, &g), m), v) in w
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}
