//! Batch normalization over the channel dimension of NCHW tensors.

use super::{join, Layer, Param};
use crate::tensor::Tensor;

pub struct BatchNorm2d {
    gamma: Param,
    beta: Param,
    running_mean: Tensor,
    running_var: Tensor,
    channels: usize,
    eps: f32,
    momentum: f32,
    cache: Option<BnCache>,
}

struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self::with_eps(channels, 1e-5)
    }

    pub fn with_eps(channels: usize, eps: f32) -> Self {
        BatchNorm2d {
            gamma: Param::new(Tensor::full(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            channels,
            eps,
            momentum: 0.1,
            cache: None,
        }
    }
}

impl Layer for BatchNorm2d {
    fn forward(&mut self, x: Tensor, train: bool) -> Tensor {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.channels, "batchnorm channel count");
        let plane = h * w;
        let m = (n * plane) as f64;
        let mut out = Tensor::zeros(x.shape());

        if train {
            let mut xhat = Tensor::zeros(x.shape());
            let mut inv_std = vec![0.0f32; c];
            for ch in 0..c {
                let mut sum = 0.0f64;
                let mut sq = 0.0f64;
                for i in 0..n {
                    let off = (i * c + ch) * plane;
                    for &v in &x.data()[off..off + plane] {
                        sum += v as f64;
                        sq += (v as f64) * (v as f64);
                    }
                }
                let mean = sum / m;
                let var = (sq / m - mean * mean).max(0.0);
                let istd = 1.0 / (var + self.eps as f64).sqrt();
                inv_std[ch] = istd as f32;

                // unbiased variance feeds the running estimate, biased
                // variance feeds normalization
                let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
                let mom = self.momentum;
                self.running_mean.data_mut()[ch] =
                    (1.0 - mom) * self.running_mean.data()[ch] + mom * mean as f32;
                self.running_var.data_mut()[ch] =
                    (1.0 - mom) * self.running_var.data()[ch] + mom * unbiased as f32;

                let g = self.gamma.value.data()[ch];
                let b = self.beta.value.data()[ch];
                for i in 0..n {
                    let off = (i * c + ch) * plane;
                    for j in 0..plane {
                        let xh = ((x.data()[off + j] as f64 - mean) * istd) as f32;
                        xhat.data_mut()[off + j] = xh;
                        out.data_mut()[off + j] = g * xh + b;
                    }
                }
            }
            self.cache = Some(BnCache { xhat, inv_std });
        } else {
            for ch in 0..c {
                let mean = self.running_mean.data()[ch];
                let istd = 1.0 / (self.running_var.data()[ch] + self.eps).sqrt();
                let g = self.gamma.value.data()[ch];
                let b = self.beta.value.data()[ch];
                for i in 0..n {
                    let off = (i * c + ch) * plane;
                    for j in 0..plane {
                        out.data_mut()[off + j] = g * (x.data()[off + j] - mean) * istd + b;
                    }
                }
            }
            self.cache = None;
        }
        out
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let cache = self.cache.take().expect("batchnorm backward without train forward");
        let (n, c, h, w) = grad.dims4();
        let plane = h * w;
        let m = (n * plane) as f32;
        let mut dx = Tensor::zeros(grad.shape());
        for ch in 0..c {
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xhat = 0.0f64;
            for i in 0..n {
                let off = (i * c + ch) * plane;
                for j in 0..plane {
                    let dy = grad.data()[off + j] as f64;
                    sum_dy += dy;
                    sum_dy_xhat += dy * cache.xhat.data()[off + j] as f64;
                }
            }
            self.gamma.grad.data_mut()[ch] += sum_dy_xhat as f32;
            self.beta.grad.data_mut()[ch] += sum_dy as f32;

            let g = self.gamma.value.data()[ch];
            let istd = cache.inv_std[ch];
            let k = g * istd / m;
            let sdy = sum_dy as f32;
            let sdyx = sum_dy_xhat as f32;
            for i in 0..n {
                let off = (i * c + ch) * plane;
                for j in 0..plane {
                    let dy = grad.data()[off + j];
                    let xh = cache.xhat.data()[off + j];
                    dx.data_mut()[off + j] = k * (m * dy - sdy - xh * sdyx);
                }
            }
        }
        dx
    }

    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(join(prefix, "weight"), &mut self.gamma);
        f(join(prefix, "bias"), &mut self.beta);
    }

    fn for_each_buffer(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "running_mean"), &mut self.running_mean);
        f(join(prefix, "running_var"), &mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_forward_normalizes_batch() {
        let mut bn = BatchNorm2d::new(2);
        let x = Tensor::from_vec(
            &[2, 2, 1, 2],
            vec![1.0, 3.0, 10.0, 20.0, 5.0, 7.0, 30.0, 40.0],
        );
        let y = bn.forward(x, true);
        // per channel, output mean ~ 0 and std ~ 1 (gamma=1, beta=0)
        for ch in 0..2 {
            let vals: Vec<f32> = (0..2)
                .flat_map(|i| {
                    let off = (i * 2 + ch) * 2;
                    y.data()[off..off + 2].to_vec()
                })
                .collect();
            let mean: f32 = vals.iter().sum::<f32>() / 4.0;
            let var: f32 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / 4.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn eval_uses_running_stats() {
        let mut bn = BatchNorm2d::new(1);
        // identity running stats -> eval forward is the identity
        let x = Tensor::from_vec(&[1, 1, 1, 3], vec![0.5, -1.0, 2.0]);
        let y = bn.forward(x.clone(), false);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut bn = BatchNorm2d::new(2);
        bn.gamma.value.data_mut()[0] = 1.3;
        bn.gamma.value.data_mut()[1] = 0.8;
        bn.beta.value.data_mut()[0] = 0.2;
        let x_data: Vec<f32> = (0..2 * 2 * 9).map(|i| ((i as f32) * 0.7).sin() * 2.0).collect();
        let x = Tensor::from_vec(&[2, 2, 3, 3], x_data);

        let y = bn.forward(x.clone(), true);
        let dx = bn.backward(y.clone());

        let loss = |bn: &mut BatchNorm2d, x: &Tensor| -> f64 {
            let y = bn.forward(x.clone(), true);
            bn.cache = None;
            y.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / 2.0
        };
        // keep running stats fixed for the probe
        bn.momentum = 0.0;
        let eps = 1e-2f32;
        for idx in [0usize, 5, 17, 35] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += eps;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= eps;
            let fd = (loss(&mut bn, &xp) - loss(&mut bn, &xm)) / (2.0 * eps as f64);
            let an = dx.data()[idx] as f64;
            assert!(
                (fd - an).abs() / fd.abs().max(1.0) < 2e-3,
                "dx[{idx}]: {an} vs {fd}"
            );
        }
    }

    #[test]
    fn zero_input_yields_beta() {
        let mut bn = BatchNorm2d::new(1);
        bn.beta.value.data_mut()[0] = 0.7;
        let x = Tensor::zeros(&[3, 1, 2, 2]);
        let y = bn.forward(x, true);
        for &v in y.data() {
            assert!((v - 0.7).abs() < 1e-6);
        }
    }
}
