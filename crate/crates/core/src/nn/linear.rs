//! Fully connected layer over `[batch, features]` tensors.

use super::{init_uniform, join, Layer, Param};
use crate::rng::Stream;
use crate::tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};

pub struct Linear {
    weight: Param, // [out, in]
    bias: Param,   // [out]
    in_features: usize,
    out_features: usize,
    cached_input: Option<Tensor>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut Stream) -> Self {
        Linear {
            weight: Param::new(init_uniform(&[out_features, in_features], in_features, rng)),
            bias: Param::new(Tensor::zeros(&[out_features])),
            in_features,
            out_features,
            cached_input: None,
        }
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    fn forward_impl(&self, x: &Tensor) -> Tensor {
        let (n, f) = x.dims2();
        assert_eq!(f, self.in_features, "linear input width");
        let mut out = Tensor::zeros(&[n, self.out_features]);
        matmul_a_bt(
            n,
            f,
            self.out_features,
            x.data(),
            self.weight.value.data(),
            out.data_mut(),
            false,
        );
        let od = out.data_mut();
        for i in 0..n {
            for (j, &b) in self.bias.value.data().iter().enumerate() {
                od[i * self.out_features + j] += b;
            }
        }
        out
    }
}

impl Layer for Linear {
    fn forward(&mut self, x: Tensor, train: bool) -> Tensor {
        let out = self.forward_impl(&x);
        self.cached_input = train.then_some(x);
        out
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let x = self.cached_input.take().expect("linear backward without train forward");
        let (n, _) = x.dims2();
        // dW[out,in] += dY[n,out]^T * X[n,in]
        matmul_at_b(
            self.out_features,
            n,
            self.in_features,
            grad.data(),
            x.data(),
            self.weight.grad.data_mut(),
            true,
        );
        let bg = self.bias.grad.data_mut();
        for i in 0..n {
            for j in 0..self.out_features {
                bg[j] += grad.data()[i * self.out_features + j];
            }
        }
        // dX[n,in] = dY[n,out] * W[out,in]
        let mut dx = Tensor::zeros(&[n, self.in_features]);
        matmul(
            n,
            self.out_features,
            self.in_features,
            grad.data(),
            self.weight.value.data(),
            dx.data_mut(),
            false,
        );
        dx
    }

    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_is_affine() {
        let mut rng = Stream::derive(1, "linear-test");
        let mut lin = Linear::new(2, 3, &mut rng);
        lin.weight.value = Tensor::from_vec(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        lin.bias.value = Tensor::from_vec(&[3], vec![0.5, -0.5, 0.0]);
        let x = Tensor::from_vec(&[2, 2], vec![2.0, 3.0, -1.0, 4.0]);
        let y = lin.forward(x, false);
        assert_eq!(y.data(), &[2.5, 2.5, 5.0, -0.5, 3.5, 3.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Stream::derive(2, "linear-test");
        let mut lin = Linear::new(4, 3, &mut rng);
        let x = Tensor::from_vec(&[2, 4], (0..8).map(|i| (i as f32 * 0.33).cos()).collect());
        let y = lin.forward(x.clone(), true);
        let dx = lin.backward(y);

        let loss = |l: &Linear, x: &Tensor| -> f64 {
            let y = l.forward_impl(x);
            y.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / 2.0
        };
        let eps = 1e-2f32;
        for idx in 0..8 {
            let mut xp = x.clone();
            xp.data_mut()[idx] += eps;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= eps;
            let fd = (loss(&lin, &xp) - loss(&lin, &xm)) / (2.0 * eps as f64);
            assert!((fd - dx.data()[idx] as f64).abs() / fd.abs().max(1.0) < 1e-3);
        }
        for idx in 0..12 {
            let orig = lin.weight.value.data()[idx];
            lin.weight.value.data_mut()[idx] = orig + eps;
            let lp = loss(&lin, &x);
            lin.weight.value.data_mut()[idx] = orig - eps;
            let lm = loss(&lin, &x);
            lin.weight.value.data_mut()[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps as f64);
            assert!((fd - lin.weight.grad.data()[idx] as f64).abs() / fd.abs().max(1.0) < 1e-3);
        }
    }
}
