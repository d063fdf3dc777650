//! Adaptive-moment optimizer with conventional defaults.

use crate::models::MultiTaskModel;
use crate::tensor::Tensor;

pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_count: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// One update over all trainable parameters. Moment state aligns with
    /// the model's structural parameter order, which is stable.
    pub fn step(&mut self, model: &mut MultiTaskModel) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let lr = self.learning_rate;
        let (b1, b2, eps) = (self.beta1 as f32, self.beta2 as f32, self.eps as f32);
        let scale = (lr / bias1) as f32;
        let denom_scale = (1.0 / bias2.sqrt()) as f32;

        let first = &mut self.first_moment;
        let second = &mut self.second_moment;
        let mut index = 0usize;
        model.for_each_param(&mut |_, p| {
            if first.len() == index {
                first.push(Tensor::zeros(p.value.shape()));
                second.push(Tensor::zeros(p.value.shape()));
            }
            if p.trainable {
                let m = first[index].data_mut();
                let v = second[index].data_mut();
                let g = p.grad.data();
                let w = p.value.data_mut();
                for i in 0..w.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    w[i] -= scale * m[i] / ((v[i].sqrt() * denom_scale) + eps);
                }
            }
            index += 1;
        });
    }
}
