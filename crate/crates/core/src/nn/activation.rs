//! Rectifier activations.

use super::Layer;
use crate::tensor::Tensor;

/// `max(0, x)`.
pub struct Relu {
    mask: Option<Vec<u8>>,
}

impl Relu {
    pub fn new() -> Self {
        Relu { mask: None }
    }
}

impl Default for Relu {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for Relu {
    fn forward(&mut self, mut x: Tensor, train: bool) -> Tensor {
        if train {
            let mut mask = vec![0u8; x.len()];
            for (v, m) in x.data_mut().iter_mut().zip(mask.iter_mut()) {
                if *v > 0.0 {
                    *m = 1;
                } else {
                    *v = 0.0;
                }
            }
            self.mask = Some(mask);
        } else {
            for v in x.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        x
    }

    fn backward(&mut self, mut grad: Tensor) -> Tensor {
        let mask = self.mask.take().expect("relu backward without train forward");
        for (g, m) in grad.data_mut().iter_mut().zip(mask.iter()) {
            if *m == 0 {
                *g = 0.0;
            }
        }
        grad
    }
}

/// `min(max(0, x), 6)`, the clipped rectifier used by mobile architectures.
pub struct Relu6 {
    mask: Option<Vec<u8>>,
}

impl Relu6 {
    pub fn new() -> Self {
        Relu6 { mask: None }
    }
}

impl Default for Relu6 {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for Relu6 {
    fn forward(&mut self, mut x: Tensor, train: bool) -> Tensor {
        if train {
            let mut mask = vec![0u8; x.len()];
            for (v, m) in x.data_mut().iter_mut().zip(mask.iter_mut()) {
                if *v > 0.0 && *v < 6.0 {
                    *m = 1;
                } else if *v <= 0.0 {
                    *v = 0.0;
                } else {
                    *v = 6.0;
                }
            }
            self.mask = Some(mask);
        } else {
            for v in x.data_mut() {
                *v = v.clamp(0.0, 6.0);
            }
        }
        x
    }

    fn backward(&mut self, mut grad: Tensor) -> Tensor {
        let mask = self.mask.take().expect("relu6 backward without train forward");
        for (g, m) in grad.data_mut().iter_mut().zip(mask.iter()) {
            if *m == 0 {
                *g = 0.0;
            }
        }
        grad
    }
}
