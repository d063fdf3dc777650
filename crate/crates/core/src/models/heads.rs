//! Task-specific heads attached to the shared backbone.
//!
//! The convolutional head refines the shared map with a 512-channel 3x3
//! block (conv, batch norm, rectifier), collapses it to one value per channel
//! and classifies with a fully connected layer. The fc head is a single
//! affine map over the backbone's pooled feature vector.

use super::Features;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, GlobalAvgPool, Layer, Linear, Param, Relu};
use crate::rng::Stream;
use crate::tensor::Tensor;

const CONV_HEAD_WIDTH: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadStyle {
    Conv,
    Fc,
}

pub struct ConvHead {
    conv: Conv2d,
    bn: BatchNorm2d,
    relu: Relu,
    pool: GlobalAvgPool,
    fc: Linear,
}

pub struct FcHead {
    fc: Linear,
}

pub enum TaskHead {
    Conv(ConvHead),
    Fc(FcHead),
}

/// Builds one task head.
pub fn build_task_head(
    in_channels: usize,
    num_categories: usize,
    style: HeadStyle,
    rng: &mut Stream,
) -> Result<TaskHead> {
    if in_channels == 0 {
        return Err(Error::InvalidChannels(in_channels));
    }
    if num_categories < 2 {
        return Err(Error::InvalidSpec(format!(
            "task head needs at least 2 categories, got {num_categories}"
        )));
    }
    Ok(match style {
        HeadStyle::Conv => TaskHead::Conv(ConvHead {
            conv: Conv2d::square(in_channels, CONV_HEAD_WIDTH, 3, 1, 1, false, rng),
            bn: BatchNorm2d::new(CONV_HEAD_WIDTH),
            relu: Relu::new(),
            pool: GlobalAvgPool::new(),
            fc: Linear::new(CONV_HEAD_WIDTH, num_categories, rng),
        }),
        HeadStyle::Fc => TaskHead::Fc(FcHead {
            fc: Linear::new(in_channels, num_categories, rng),
        }),
    })
}

impl ConvHead {
    pub fn forward(&mut self, x: Tensor, train: bool) -> Tensor {
        let h = self.conv.forward(x, train);
        let h = self.bn.forward(h, train);
        let h = self.relu.forward(h, train);
        let h = self.pool.forward(h, train);
        self.fc.forward(h, train)
    }

    pub fn backward(&mut self, grad: Tensor) -> Tensor {
        let g = self.fc.backward(grad);
        let g = self.pool.backward(g);
        let g = self.relu.backward(g);
        let g = self.bn.backward(g);
        self.conv.backward(g)
    }

    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        self.conv.for_each_param(&crate::nn::join(prefix, "conv"), f);
        self.bn.for_each_param(&crate::nn::join(prefix, "bn"), f);
        self.fc.for_each_param(&crate::nn::join(prefix, "fc"), f);
    }

    fn for_each_buffer(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.bn.for_each_buffer(&crate::nn::join(prefix, "bn"), f);
    }
}

impl TaskHead {
    /// Consumes a shared reference to the backbone output; each head clones
    /// what it needs so the features stay available for its siblings.
    pub fn forward(&mut self, features: &Features, train: bool) -> Tensor {
        match (self, features) {
            (TaskHead::Conv(h), Features::Spatial(map)) => h.forward(map.clone(), train),
            (TaskHead::Fc(h), Features::Pooled(vec)) => h.fc.forward(vec.clone(), train),
            _ => panic!("head style does not match backbone feature kind"),
        }
    }

    /// Gradient with respect to the shared features.
    pub fn backward(&mut self, grad: Tensor) -> Features {
        match self {
            TaskHead::Conv(h) => Features::Spatial(h.backward(grad)),
            TaskHead::Fc(h) => Features::Pooled(h.fc.backward(grad)),
        }
    }

    pub fn num_categories(&self) -> usize {
        match self {
            TaskHead::Conv(h) => h.fc.out_features(),
            TaskHead::Fc(h) => h.fc.out_features(),
        }
    }

    pub fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        match self {
            TaskHead::Conv(h) => h.for_each_param(prefix, f),
            TaskHead::Fc(h) => h.fc.for_each_param(&crate::nn::join(prefix, "fc"), f),
        }
    }

    pub fn for_each_buffer(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        if let TaskHead::Conv(h) = self {
            h.for_each_buffer(prefix, f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> Stream {
        Stream::derive(7, "head-test")
    }

    #[test]
    fn conv_head_emits_requested_width_from_any_map() {
        let mut head = build_task_head(2048, 10, HeadStyle::Conv, &mut rng()).unwrap();
        for (h, w) in [(3, 3), (7, 7), (1, 1), (4, 6)] {
            let x = Features::Spatial(Tensor::full(&[2, 2048, h, w], 0.1));
            let y = head.forward(&x, false);
            assert_eq!(y.shape(), &[2, 10]);
        }
    }

    #[test]
    fn fc_head_is_single_affine_map() {
        let mut head = build_task_head(2048, 2, HeadStyle::Fc, &mut rng()).unwrap();
        assert_eq!(head.num_categories(), 2);
        let mut params = 0usize;
        head.for_each_param("", &mut |name, p| {
            params += p.value.len();
            assert!(name.starts_with("fc."), "{name}");
        });
        assert_eq!(params, 2048 * 2 + 2);
        let y = head.forward(&Features::Pooled(Tensor::full(&[3, 2048], 0.5)), false);
        assert_eq!(y.shape(), &[3, 2]);
    }

    #[test]
    fn zero_channels_is_invalid() {
        assert!(matches!(
            build_task_head(0, 5, HeadStyle::Conv, &mut rng()),
            Err(Error::InvalidChannels(0))
        ));
    }

    #[test]
    fn one_category_is_invalid() {
        assert!(build_task_head(16, 1, HeadStyle::Fc, &mut rng()).is_err());
    }

    #[test]
    fn zero_features_give_identical_logit_rows() {
        // heads see only the shared features plus their own biases, so a
        // zeroed feature map must produce batch-constant logits
        let mut conv_head = build_task_head(32, 5, HeadStyle::Conv, &mut rng()).unwrap();
        let y = conv_head.forward(&Features::Spatial(Tensor::zeros(&[3, 32, 4, 4])), false);
        let (rows, k) = y.dims2();
        for r in 1..rows {
            for j in 0..k {
                assert_eq!(y.data()[j], y.data()[r * k + j]);
            }
        }

        let mut fc_head = build_task_head(32, 7, HeadStyle::Fc, &mut rng()).unwrap();
        let y = fc_head.forward(&Features::Pooled(Tensor::zeros(&[4, 32])), false);
        let (rows, k) = y.dims2();
        for r in 1..rows {
            for j in 0..k {
                assert_eq!(y.data()[j], y.data()[r * k + j]);
            }
        }
    }

    #[test]
    fn conv_head_backward_returns_feature_gradient() {
        let mut head = build_task_head(8, 3, HeadStyle::Conv, &mut rng()).unwrap();
        let x = Features::Spatial(Tensor::full(&[1, 8, 5, 5], 0.3));
        let y = head.forward(&x, true);
        let g = head.backward(y);
        match g {
            Features::Spatial(t) => assert_eq!(t.shape(), &[1, 8, 5, 5]),
            _ => panic!("expected spatial gradient"),
        }
    }
}
