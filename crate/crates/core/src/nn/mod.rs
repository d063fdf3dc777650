//! Minimal layer engine: explicit forward/backward passes over f32 tensors.
//!
//! Layers cache what their backward pass needs when run with `train = true`
//! and skip caching in inference mode. Composite blocks (residual, inverted
//! residual, branch-concat) orchestrate their children's backward passes in
//! reverse, so the whole network trains without a general autograd tape.

mod activation;
mod conv;
mod linear;
mod norm;
mod pool;

pub use activation::{Relu, Relu6};
pub use conv::Conv2d;
pub use linear::Linear;
pub use norm::BatchNorm2d;
pub use pool::{AvgPool2d, GlobalAvgPool, MaxPool2d};

use crate::rng::Stream;
use crate::tensor::Tensor;

/// A learnable tensor with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param {
            value,
            grad,
            trainable: true,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Fan-in-scaled uniform initialization, `U(-sqrt(1/fan_in), sqrt(1/fan_in))`.
pub fn init_uniform(shape: &[usize], fan_in: usize, rng: &mut Stream) -> Tensor {
    let bound = (1.0 / fan_in as f32).sqrt();
    let len: usize = shape.iter().product();
    let data: Vec<f32> = (0..len).map(|_| rng.range_f32(-bound, bound)).collect();
    Tensor::from_vec(shape, data)
}

/// Forward/backward layer contract.
///
/// `backward` consumes the upstream gradient and returns the gradient with
/// respect to the layer input, accumulating parameter gradients internally.
/// It must only be called after a `forward` with `train = true`.
pub trait Layer {
    fn forward(&mut self, x: Tensor, train: bool) -> Tensor;
    fn backward(&mut self, grad: Tensor) -> Tensor;

    fn for_each_param(&mut self, _prefix: &str, _f: &mut dyn FnMut(String, &mut Param)) {}

    /// Non-learnable state that still belongs in checkpoints (e.g. batch-norm
    /// running statistics).
    fn for_each_buffer(&mut self, _prefix: &str, _f: &mut dyn FnMut(String, &mut Tensor)) {}
}

/// Named sequence of layers.
pub struct Sequential {
    layers: Vec<(String, Box<dyn Layer>)>,
}

impl Sequential {
    pub fn new() -> Self {
        Sequential { layers: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, layer: impl Layer + 'static) -> &mut Self {
        self.layers.push((name.into(), Box::new(layer)));
        self
    }

    pub fn push_boxed(&mut self, name: impl Into<String>, layer: Box<dyn Layer>) -> &mut Self {
        self.layers.push((name.into(), layer));
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Default for Sequential {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for Sequential {
    fn forward(&mut self, x: Tensor, train: bool) -> Tensor {
        let mut cur = x;
        for (_, layer) in self.layers.iter_mut() {
            cur = layer.forward(cur, train);
        }
        cur
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let mut cur = grad;
        for (_, layer) in self.layers.iter_mut().rev() {
            cur = layer.backward(cur);
        }
        cur
    }

    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        for (name, layer) in self.layers.iter_mut() {
            layer.for_each_param(&join(prefix, name), f);
        }
    }

    fn for_each_buffer(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (name, layer) in self.layers.iter_mut() {
            layer.for_each_buffer(&join(prefix, name), f);
        }
    }
}

/// Joins visitor path segments with dots, skipping empty prefixes.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
